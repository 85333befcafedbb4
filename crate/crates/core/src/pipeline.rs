//! End-to-end solve: collapse duplicates, best-of-k flows, recovery.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{map_cost, map_divergence, TransportInstance, TransportationMap};
use crate::quadtree::{check_properties, collapse_coincident};
use crate::recover::{merge_coincident, recover_map};
use crate::solver::{best_of_k, Backend, Run, SolverConfig, SolverStats};

#[derive(Debug, Clone, Default, Serialize)]
pub struct GraphSummary {
    pub cells: usize,
    pub parts: usize,
    pub net_points: usize,
    pub edges: usize,
    pub max_chain: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub build: f64,
    pub solve: f64,
    pub recover: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    #[serde(skip)]
    pub map: TransportationMap,
    pub cost: f64,
    pub flow_cost: f64,
    pub repetition_costs: Vec<f64>,
    pub chosen_seed: u64,
    pub graph: GraphSummary,
    pub properties_passed: Option<bool>,
    pub stats: SolverStats,
    pub dropped_mass: f64,
    pub timings: Timings,
}

/// Runs the full pipeline and re-checks feasibility of the returned map.
pub fn solve_instance(instance: &TransportInstance, config: &SolverConfig) -> Result<Solution> {
    solve_instance_detailed(instance, config).map(|(s, _)| s)
}

/// Like [`solve_instance`], also returning the winning run (tree, graph and
/// flow over the deduplicated points) when one was needed.
pub fn solve_instance_detailed(instance: &TransportInstance, config: &SolverConfig) -> Result<(Solution, Option<Run>)> {
    config.validate()?;
    let start = Instant::now();
    let collapsed = collapse_coincident(instance);
    let reduced = &collapsed.instance;
    let mass = instance.total_mass();
    let mut solution = Solution {
        map: TransportationMap::new(),
        cost: 0.0,
        flow_cost: 0.0,
        repetition_costs: Vec::new(),
        chosen_seed: config.seed,
        graph: GraphSummary::default(),
        properties_passed: None,
        stats: SolverStats::default(),
        dropped_mass: 0.0,
        timings: Timings::default(),
    };
    if reduced.supplies().iter().all(|&s| s == 0.0) {
        // Nothing moves between distinct locations; only duplicates trade.
        solution.map = merge_coincident(&TransportationMap::new(), &collapsed, instance);
        solution.timings.total = start.elapsed().as_secs_f64();
        return Ok((solution, None));
    }
    let (run, costs) = best_of_k(reduced, config)?;
    let t_rec = Instant::now();
    let (map, rstats) = recover_map(&run.graph, &run.tree, reduced, &run.outcome.flow)?;
    let recover_seconds = t_rec.elapsed().as_secs_f64();
    let map = merge_coincident(&map, &collapsed, instance);

    let div = map_divergence(instance, &map)?;
    let err: f64 = div.iter().zip(instance.supplies()).map(|(a, b)| (a - b).abs()).sum();
    if err > 1e-9 * mass && err > 0.0 {
        return Err(Error::Internal(format!("recovered map violates supplies by {err:e}")));
    }
    solution.cost = map_cost(instance, &map)?;
    solution.map = map;
    solution.flow_cost = run.outcome.cost;
    solution.repetition_costs = costs;
    solution.chosen_seed = run.seed;
    solution.graph = GraphSummary {
        cells: run.tree.num_cells(),
        parts: run.tree.parts.len(),
        net_points: run.graph.num_net_points(),
        edges: run.graph.num_edges(),
        max_chain: run.tree.max_single_child_chain(),
    };
    solution.properties_passed = Some(check_properties(&run.tree).passed());
    solution.stats = run.outcome.stats.clone();
    solution.dropped_mass = rstats.dropped_mass;
    solution.timings = Timings {
        build: run.build_seconds,
        solve: solution.stats.solve_seconds,
        recover: recover_seconds,
        total: start.elapsed().as_secs_f64(),
    };
    Ok((solution, Some(run)))
}

/// Diameter over minimum pairwise distance, by brute force for small
/// instances and by sampling beyond that.
pub fn spread_estimate(instance: &TransportInstance) -> Option<f64> {
    let n = instance.len();
    if n < 2 {
        return None;
    }
    let limit = 2000;
    let idx: Vec<usize> = if n <= limit { (0..n).collect() } else { (0..n).step_by(n / limit + 1).collect() };
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = instance.distance(i, j);
            if d > 0.0 {
                min = min.min(d);
            }
            max = max.max(d);
        }
    }
    (min.is_finite() && min > 0.0).then(|| max / min)
}

pub fn backend_name(b: Backend) -> &'static str {
    match b {
        Backend::Exact => "exact",
        Backend::Sherman => "sherman",
    }
}
