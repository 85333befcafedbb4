use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use geotrans::generate::{generate, SupplyMode};
use geotrans::instance::{format_instance, format_map, parse_instance, DEFAULT_BALANCE_TOLERANCE};
use geotrans::oracle::{exact_transport_capped, DEFAULT_ORACLE_CAP};
use geotrans::pipeline::{backend_name, solve_instance, solve_instance_detailed, spread_estimate};
use geotrans::quadtree::DEFAULT_RULE2_EXPONENT;
use geotrans::{Backend, Error, SolverConfig, TransportInstance};

#[derive(Parser)]
#[command(name = "geotrans", version, about = "Approximate geometric transportation maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1e3)]
        spread: f64,
        #[arg(long, default_value = "random")]
        supplies: SupplyMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the approximation pipeline.
    Solve {
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        input: PathBuf,
        /// Map output; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// JSON report output; stderr when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also run the exact oracle and report the ratio.
        #[arg(long)]
        with_oracle: bool,
        #[arg(long)]
        dump_tree: Option<PathBuf>,
        #[arg(long)]
        dump_graph: Option<PathBuf>,
    },
    /// Solve exactly on the complete bipartite graph.
    Exact {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
        cap: usize,
    },
    /// Compare the pipeline against the oracle over several seeds.
    Compare {
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
        cap: usize,
    },
    /// Timing rows for doubling instance sizes.
    Bench {
        #[command(flatten)]
        solver: SolverArgs,
        /// Comma-separated sizes.
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 1e3)]
        spread: f64,
        #[arg(long, default_value = "random")]
        supplies: SupplyMode,
    },
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "exact")]
    backend: Backend,
    /// Independent shifts; defaults to ceil(log2 n) + 1.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, default_value_t = geotrans::quadtree::DEFAULT_MOAT_EXPONENT)]
    moat_exponent: f64,
    #[arg(long, default_value_t = DEFAULT_RULE2_EXPONENT)]
    rule2_exponent: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            backend: self.backend,
            epsilon: self.epsilon,
            repetitions: self.k,
            seed: self.seed,
            max_iterations: self.max_iterations,
            moat_exponent: self.moat_exponent,
            rule2_exponent: self.rule2_exponent,
            ..Default::default()
        }
    }
}

enum Failure {
    Error(Error),
    Gate(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gate(msg)) => {
            eprintln!("quality gate failed: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 4 } else { 2 })
        }
    }
}

fn read_instance(path: &Path) -> Result<TransportInstance, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_instance(&text, DEFAULT_BALANCE_TOLERANCE)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn instance_summary(instance: &TransportInstance) -> Value {
    json!({
        "n": instance.len(),
        "d": instance.dim(),
        "spread": spread_estimate(instance),
        "total_mass": instance.total_mass(),
    })
}

fn config_echo(config: &SolverConfig) -> Value {
    json!({
        "backend": backend_name(config.backend),
        "epsilon": config.epsilon,
        "k": config.repetitions,
        "seed": config.seed,
        "max_iterations": config.max_iterations,
        "moat_exponent": config.moat_exponent,
        "rule2_exponent": config.rule2_exponent,
    })
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Gen { n, d, spread, supplies, seed, output } => {
            let instance = generate(n, d, spread, supplies, seed)?;
            write_out(output.as_deref(), &format_instance(&instance))?;
        }
        Command::Solve { solver, input, output, report, with_oracle, dump_tree, dump_graph } => {
            let instance = read_instance(&input)?;
            let config = solver.config();
            let (solution, run) = solve_instance_detailed(&instance, &config)?;
            if let Some(run) = &run {
                if let Some(p) = &dump_tree {
                    write_out(Some(p), &run.tree.debug_dump())?;
                }
                if let Some(p) = &dump_graph {
                    write_out(Some(p), &run.graph.dump())?;
                }
            }
            let oracle = if with_oracle { Some(exact_transport_capped(&instance, DEFAULT_ORACLE_CAP)?.cost) } else { None };
            let ratio = oracle.map(|o| if o > 0.0 { solution.cost / o } else { 1.0 });
            write_out(output.as_deref(), &format_map(&solution.map))?;
            let body = json!({
                "instance": instance_summary(&instance),
                "config": config_echo(&config),
                "costs": {"pipeline": solution.cost, "flow": solution.flow_cost, "oracle": oracle, "ratio": ratio},
                "seed": solution.chosen_seed,
                "solution": solution,
            });
            let text = serde_json::to_string_pretty(&body).expect("report serializes") + "\n";
            match report {
                Some(p) => write_out(Some(&p), &text)?,
                None => eprint!("{text}"),
            }
        }
        Command::Exact { input, output, cap } => {
            let instance = read_instance(&input)?;
            let result = exact_transport_capped(&instance, cap)?;
            write_out(output.as_deref(), &format_map(&result.map))?;
            eprintln!("{}", json!({"cost": result.cost, "entries": result.map.len()}));
        }
        Command::Compare { solver, input, trials, cap } => {
            if trials == 0 {
                return Err(Error::InvalidParameter("trials must be positive".into()).into());
            }
            let instance = read_instance(&input)?;
            let oracle = exact_transport_capped(&instance, cap)?.cost;
            let mut ratios = Vec::with_capacity(trials);
            for t in 0..trials {
                let mut config = solver.config();
                config.seed = solver.seed.wrapping_add(t as u64);
                let solution = solve_instance(&instance, &config)?;
                ratios.push(if oracle > 0.0 { solution.cost / oracle } else if solution.cost == 0.0 { 1.0 } else { f64::INFINITY });
            }
            let mut sorted = ratios.clone();
            sorted.sort_by(f64::total_cmp);
            let median = sorted[sorted.len() / 2];
            let body = json!({
                "instance": instance_summary(&instance),
                "config": config_echo(&solver.config()),
                "oracle": oracle,
                "ratios": ratios,
                "median": median,
                "min": sorted[0],
                "max": sorted[sorted.len() - 1],
            });
            println!("{}", serde_json::to_string_pretty(&body).expect("report serializes"));
            if median > 1.0 + solver.epsilon {
                return Err(Failure::Gate(format!("median ratio {median} exceeds {}", 1.0 + solver.epsilon)));
            }
        }
        Command::Bench { solver, sizes, d, spread, supplies } => {
            println!("{:>8} {:>8} {:>10} {:>10} {:>12} {:>10} {:>8}", "n", "cells", "edges", "seconds", "cost", "growth", "per_n");
            let mut prev: Option<(usize, f64)> = None;
            for &n in &sizes {
                let instance = generate(n, d, spread, supplies, solver.seed)?;
                let config = solver.config();
                let t = Instant::now();
                let solution = solve_instance(&instance, &config)?;
                let secs = t.elapsed().as_secs_f64();
                let growth = prev.map(|(_, p)| secs / p.max(1e-9));
                println!(
                    "{:>8} {:>8} {:>10} {:>10.4} {:>12.6} {:>10} {:>8.2e}",
                    n,
                    solution.graph.cells,
                    solution.graph.edges,
                    secs,
                    solution.cost,
                    growth.map_or("-".to_string(), |g| format!("{g:.2}")),
                    secs / n as f64
                );
                if let (Some(g), Some((pn, _))) = (growth, prev) {
                    let size_ratio = n as f64 / pn as f64;
                    if g > 4.0 * size_ratio {
                        eprintln!("warning: time grew {g:.2}x for a {size_ratio:.1}x size increase");
                    }
                }
                prev = Some((n, secs));
            }
        }
    }
    Ok(())
}
