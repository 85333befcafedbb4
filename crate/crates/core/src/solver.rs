//! Minimum-cost flow on the sparse graph.
//!
//! The graph is split into simple sub-quadtrees, processed leaf-most first.
//! Each part's net divergence is shipped to its parent part over one
//! boundary edge, after which every part is an independent balanced problem.

use std::collections::BinaryHeap;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{compensated_sum, TransportInstance};
use crate::precond::PreconditionerContext;
use crate::quadtree::{build_subdivided, derive_seed, simple_subquadtrees, Quadtree, QuadtreeParams};
use crate::spanner::{build_sparse_graph, route_supplies, FlowNetwork, HeapItem, SparseGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Exact,
    Sherman,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Backend::Exact),
            "sherman" => Ok(Backend::Sherman),
            _ => Err(Error::InvalidParameter(format!("unknown backend {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub backend: Backend,
    pub epsilon: f64,
    /// Constant `c` in `eps0 = eps / (c * ceil(log2 n))`.
    pub epsilon_constant: f64,
    /// Number of independent shifts; `None` means `ceil(log2 n) + 1`.
    pub repetitions: Option<usize>,
    pub seed: u64,
    /// Inner iteration cap for the composed backend; `None` means
    /// `min(50 * kappa^2 * ceil(eps^-2), 1e6)`.
    pub max_iterations: Option<usize>,
    /// Feasibility tolerance relative to the total mass.
    pub residual_tolerance: f64,
    /// Penalty-ramp rounds for the composed backend.
    pub rounds: usize,
    pub moat_exponent: f64,
    pub rule2_exponent: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: Backend::Exact,
            epsilon: 0.5,
            epsilon_constant: 1.0,
            repetitions: None,
            seed: 0,
            max_iterations: None,
            residual_tolerance: 1e-9,
            rounds: 4,
            moat_exponent: crate::quadtree::DEFAULT_MOAT_EXPONENT,
            rule2_exponent: crate::quadtree::DEFAULT_RULE2_EXPONENT,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon {}", self.epsilon)));
        }
        if self.repetitions == Some(0) || self.max_iterations == Some(0) || self.rounds == 0 {
            return Err(Error::InvalidParameter("repetitions, iterations and rounds must be positive".into()));
        }
        if !(self.residual_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("residual tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn quadtree_params(&self, n: usize, seed: u64) -> Result<QuadtreeParams> {
        Ok(QuadtreeParams::for_epsilon(self.epsilon, n, self.epsilon_constant, seed)?
            .with_exponents(self.moat_exponent, self.rule2_exponent))
    }

    pub fn repetitions_for(&self, n: usize) -> usize {
        self.repetitions.unwrap_or_else(|| (n.max(1) as f64).log2().ceil() as usize + 1)
    }
}

/// Per-run statistics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub subproblems: usize,
    pub iterations: usize,
    /// Inner residuals `||K g - B b||_1` relative to `||B b||_1`, one per round.
    pub residual_norms: Vec<f64>,
    pub kappa: f64,
    pub augmentations: usize,
    pub warnings: Vec<String>,
    pub solve_seconds: f64,
}

impl SolverStats {
    fn absorb(&mut self, other: SolverStats) {
        self.iterations += other.iterations;
        self.augmentations += other.augmentations;
        self.residual_norms.extend(other.residual_norms);
        self.kappa = self.kappa.max(other.kappa);
        self.warnings.extend(other.warnings);
    }
}

/// Exact uncapacitated min-cost flow by successive shortest paths with
/// potentials. Returns the flow and the final potentials.
pub fn solve_exact(network: &FlowNetwork, b: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let nv = network.num_vertices;
    if b.len() != nv {
        return Err(Error::VectorLength { got: b.len(), expected: nv });
    }
    let mass: f64 = b.iter().map(|x| x.abs()).sum();
    let sum = compensated_sum(b.iter().copied());
    if sum.abs() > 1e-9 * mass {
        return Err(Error::Unbalanced { sum, allowed: 1e-9 * mass });
    }
    let mut f = vec![0.0; network.num_edges()];
    let mut pi = vec![0.0; nv];
    if mass == 0.0 {
        return Ok((f, pi, 0));
    }
    let zero = 1e-12 * mass;
    let mut excess = b.to_vec();
    let (off, list) = network.adjacency();
    let mut dist = vec![f64::INFINITY; nv];
    let mut via = vec![u32::MAX; nv];
    let mut done = vec![false; nv];
    let mut touched: Vec<usize> = Vec::new();
    let mut augmentations = 0;

    loop {
        let mut heap = BinaryHeap::new();
        for v in 0..nv {
            if excess[v] > zero {
                dist[v] = 0.0;
                touched.push(v);
                heap.push(HeapItem(0.0, v));
            }
        }
        if heap.is_empty() {
            break;
        }
        let mut sink = None;
        while let Some(HeapItem(d, v)) = heap.pop() {
            if done[v] || d > dist[v] {
                continue;
            }
            done[v] = true;
            if excess[v] < -zero {
                sink = Some(v);
                break;
            }
            for &e in &list[off[v]..off[v + 1]] {
                let e = e as usize;
                let w = network.other(e, v);
                if done[w] {
                    continue;
                }
                // Moving against existing flow cancels it at negative cost.
                let along = if network.tails[e] as usize == v { f[e] } else { -f[e] };
                let cost = if along < 0.0 { -network.lengths[e] } else { network.lengths[e] };
                let nd = d + (cost + pi[v] - pi[w]).max(0.0);
                if nd < dist[w] {
                    if dist[w].is_infinite() {
                        touched.push(w);
                    }
                    dist[w] = nd;
                    via[w] = e as u32;
                    heap.push(HeapItem(nd, w));
                }
            }
        }
        let Some(t) = sink else {
            let left: f64 = excess.iter().filter(|&&x| x > zero).sum();
            return Err(Error::Infeasible(format!("{left} units of excess cannot reach any deficit")));
        };
        let dt = dist[t];
        for &v in &touched {
            if done[v] {
                pi[v] += dist[v].min(dt);
            } else {
                pi[v] += dt;
            }
        }
        // Untouched vertices are at distance >= dt as well.
        for v in 0..nv {
            if dist[v].is_infinite() {
                pi[v] += dt;
            }
        }

        let mut amount = -excess[t];
        let mut v = t;
        while via[v] != u32::MAX && !(dist[v] == 0.0 && excess[v] > zero) {
            let e = via[v] as usize;
            let u = network.other(e, v);
            let along = if network.tails[e] as usize == u { f[e] } else { -f[e] };
            if along < 0.0 {
                amount = amount.min(-along);
            }
            v = u;
        }
        amount = amount.min(excess[v]);
        let source = v;
        let mut v = t;
        while v != source {
            let e = via[v] as usize;
            let u = network.other(e, v);
            if network.tails[e] as usize == u {
                f[e] += amount;
            } else {
                f[e] -= amount;
            }
            v = u;
        }
        excess[source] -= amount;
        excess[t] += amount;
        augmentations += 1;

        for &v in &touched {
            dist[v] = f64::INFINITY;
            via[v] = u32::MAX;
            done[v] = false;
        }
        touched.clear();
    }

    certify_potentials(network, &f, &pi)?;
    Ok((f, pi, augmentations))
}

/// Checks nonnegative reduced costs in both directions of every edge and
/// tightness on edges that carry flow.
pub fn certify_potentials(network: &FlowNetwork, f: &[f64], pi: &[f64]) -> Result<()> {
    let scale = pi.iter().fold(0.0f64, |a, x| a.max(x.abs()))
        + network.lengths.iter().fold(0.0f64, |a, x| a.max(*x));
    let tol = 1e-9 * scale.max(1e-300);
    for e in 0..network.num_edges() {
        let (t, h) = (network.tails[e] as usize, network.heads[e] as usize);
        let l = network.lengths[e];
        let forward = l + pi[t] - pi[h];
        let backward = l + pi[h] - pi[t];
        if forward < -tol || backward < -tol {
            return Err(Error::Internal(format!("negative reduced cost on edge {e}")));
        }
        if (f[e] > 0.0 && forward > tol) || (f[e] < 0.0 && backward > tol) {
            return Err(Error::Internal(format!("flow on non-tight edge {e}")));
        }
    }
    Ok(())
}

/// Result of the composed approximate backend on one part.
#[derive(Debug, Clone)]
pub struct ShermanOutcome {
    pub flow: Vec<f64>,
    pub stats: SolverStats,
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Penalized first-order inner solver followed by the greedy finisher.
///
/// Minimizes `||W f||_1 + lambda ||B A f - B b||_1` with primal-dual hybrid
/// gradient steps on `g = W f`, ramping `lambda` up to the greedy bound over the
/// configured rounds, then routes the exact residual greedily. The cheaper of
/// the composed flow and the pure greedy flow is returned.
pub fn solve_sherman(ctx: &PreconditionerContext, b: &[f64], config: &SolverConfig) -> Result<ShermanOutcome> {
    let m = ctx.num_edges();
    let kappa = ctx.kappa();
    let mut stats = SolverStats { kappa, ..Default::default() };
    let greedy = ctx.greedy_flow(b)?;
    if l1(b) == 0.0 || m == 0 {
        return Ok(ShermanOutcome { flow: greedy, stats });
    }
    let beta = config.epsilon / (kappa * kappa);
    let cap = config.max_iterations.unwrap_or_else(|| {
        let raw = 50.0 * kappa * kappa * (1.0 / (config.epsilon * config.epsilon)).ceil();
        raw.min(1e6) as usize
    });
    let max_len = ctx.network.lengths.iter().fold(0.0f64, |a, x| a.max(*x));
    let w: Vec<f64> = ctx.network.lengths.iter().map(|&l| l.max(1e-12 * max_len)).collect();

    let k_apply = |g: &[f64]| -> Vec<f64> {
        let f: Vec<f64> = g.iter().zip(&w).map(|(x, wi)| x / wi).collect();
        ctx.apply_ba(&f).expect("length checked")
    };
    let kt_apply = |y: &[f64]| -> Vec<f64> {
        let t = ctx.apply_ba_transpose(y).expect("length checked");
        t.iter().zip(&w).map(|(x, wi)| x / wi).collect()
    };

    // Diagonal step sizes: tau_e = 1 / colsum, sigma_i = 1 / rowsum of |K|.
    let (rows, cols) = ctx.abs_sums(&w)?;
    let tau: Vec<f64> = cols.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
    let sigma: Vec<f64> = rows.iter().map(|&r| if r > 0.0 { 1.0 / r } else { 0.0 }).collect();

    // The objective is positively homogeneous; solving for a unit-norm
    // target keeps the dual steps on the same scale as the thresholds.
    let target = ctx.apply_b(b)?;
    let unit = l1(&target);
    let target: Vec<f64> = target.iter().map(|t| t / unit).collect();
    let target_norm = 1.0;
    let mut g = vec![0.0; m];
    let mut y = vec![0.0; ctx.num_vertices()];
    let per_round = (cap / config.rounds).max(1);
    // The penalty must reach the largest possible ratio OPT / ||B b||_1.
    let top = ctx.greedy_factor();
    let mut capped = false;

    for round in 0..config.rounds {
        let lambda = top * (2.0f64).powi(round as i32 + 1 - config.rounds as i32);
        y.iter_mut().for_each(|v: &mut f64| *v = v.clamp(-lambda, lambda));
        let mut g_bar = g.clone();
        let mut iters = 0;
        while iters < per_round {
            let kg = k_apply(&g_bar);
            for i in 0..y.len() {
                y[i] = (y[i] + sigma[i] * (kg[i] - target[i])).clamp(-lambda, lambda);
            }
            let kty = kt_apply(&y);
            for e in 0..m {
                let v = g[e] - tau[e] * kty[e];
                let new = v.signum() * (v.abs() - tau[e]).max(0.0);
                g_bar[e] = 2.0 * new - g[e];
                g[e] = new;
            }
            iters += 1;
            if iters % 100 == 0 {
                let kg = k_apply(&g);
                let r: f64 = kg.iter().zip(&target).map(|(a, t)| (a - t).abs()).sum();
                if r <= beta * target_norm {
                    break;
                }
            }
        }
        stats.iterations += iters;
        if iters >= per_round {
            capped = true;
        }
        let f: Vec<f64> = g.iter().zip(&w).map(|(x, wi)| x / wi).collect();
        let residual: Vec<f64> = ctx.apply_ba(&f)?.iter().zip(&target).map(|(a, t)| t - a).collect();
        let rn = l1(&residual);
        stats.residual_norms.push(rn);
        if rn <= beta * target_norm {
            break;
        }
    }

    let f1: Vec<f64> = g.iter().zip(&w).map(|(x, wi)| unit * x / wi).collect();
    let af = ctx.network.apply_incidence(&f1)?;
    let residual: Vec<f64> = b.iter().zip(&af).map(|(bi, a)| bi - a).collect();
    let finish = ctx.greedy_flow(&balance_residual(residual))?;
    let composed: Vec<f64> = f1.iter().zip(&finish).map(|(a, c)| a + c).collect();
    let last = *stats.residual_norms.last().unwrap_or(&target_norm);
    if capped && last > beta * target_norm {
        stats.warnings.push(format!(
            "part {}: inner iteration cap {cap} reached with residual {last:e} above {:e}",
            ctx.part,
            beta * target_norm
        ));
    }
    let cost_composed = ctx.network.flow_cost(&composed)?;
    let cost_greedy = ctx.network.flow_cost(&greedy)?;
    let flow = if cost_composed <= cost_greedy { composed } else { greedy };
    Ok(ShermanOutcome { flow, stats })
}

/// Removes rounding drift so the vector sums to zero.
pub fn balance_residual(mut r: Vec<f64>) -> Vec<f64> {
    let sum = compensated_sum(r.iter().copied());
    if let Some(i) = (0..r.len()).max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs())) {
        r[i] -= sum;
    }
    r
}

/// One independent balanced problem on a simple sub-quadtree.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub part: usize,
    /// Demand over the part's net points, in the context's local order.
    pub demand: Vec<f64>,
    /// Boundary edge to the parent part and the amount shipped out over it.
    pub boundary: Option<(usize, f64)>,
}

/// Splits the net-point demand into per-part balanced problems. Returns the
/// subproblems (leaf-most first) and the lazy boundary flow.
pub fn decompose(
    graph: &SparseGraph,
    tree: &Quadtree,
    contexts: &[PreconditionerContext],
    demand: &[f64],
) -> Result<(Vec<Subproblem>, Vec<f64>)> {
    let n = tree.num_points();
    let mut b = demand.to_vec();
    let mut lazy = vec![0.0; graph.num_edges()];
    let mut out = Vec::with_capacity(contexts.len());
    for part in simple_subquadtrees(tree) {
        let ctx = &contexts[part];
        let mut boundary = None;
        if tree.parts[part].parent.is_some() {
            let total = compensated_sum(ctx.vertices.iter().map(|&s| b[s]));
            let u = tree.cells[tree.parts[part].root].subcells.start;
            let v = tree.subcells[u].parent.ok_or_else(|| Error::Internal("missing boundary parent".into()))?;
            let e = graph.parent_edge[u].ok_or_else(|| Error::Internal("missing boundary edge".into()))?;
            // Ship `total` from u to v.
            lazy[e] = if graph.network.tails[e] as usize == n + u { total } else { -total };
            b[u] -= total;
            b[v] += total;
            boundary = Some((e, total));
        }
        out.push(Subproblem { part, demand: ctx.vertices.iter().map(|&s| b[s]).collect(), boundary });
    }
    Ok((out, lazy))
}

/// Flow on the whole graph with `A f = b*` for the routed supplies.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub flow: Vec<f64>,
    pub cost: f64,
    pub stats: SolverStats,
}

pub fn solve_all(
    graph: &SparseGraph,
    tree: &Quadtree,
    instance: &TransportInstance,
    config: &SolverConfig,
) -> Result<SolveOutcome> {
    config.validate()?;
    let start = Instant::now();
    let (mut flow, demand) = route_supplies(graph, instance)?;
    let contexts: Vec<PreconditionerContext> =
        (0..tree.parts.len()).map(|p| PreconditionerContext::new(tree, graph, p)).collect();
    let (subproblems, lazy) = decompose(graph, tree, &contexts, &demand)?;
    for (f, l) in flow.iter_mut().zip(&lazy) {
        *f += l;
    }
    let mut stats = SolverStats { subproblems: subproblems.len(), ..Default::default() };
    for sp in &subproblems {
        let ctx = &contexts[sp.part];
        let demand = balance_residual(sp.demand.clone());
        let local = match config.backend {
            Backend::Exact => {
                let (f, _, aug) = solve_exact(&ctx.network, &demand)?;
                stats.augmentations += aug;
                f
            }
            Backend::Sherman => {
                let out = solve_sherman(ctx, &demand, config)?;
                stats.absorb(out.stats);
                out.flow
            }
        };
        for (le, &ge) in ctx.global_edges.iter().enumerate() {
            flow[ge] += local[le];
        }
    }
    check_feasible(graph, instance, &flow, config.residual_tolerance)?;
    stats.solve_seconds = start.elapsed().as_secs_f64();
    let cost = graph.network.flow_cost(&flow)?;
    Ok(SolveOutcome { flow, cost, stats })
}

/// `||A f - b*||_1 <= tol * sum |mu|`.
pub fn check_feasible(graph: &SparseGraph, instance: &TransportInstance, flow: &[f64], tol: f64) -> Result<()> {
    let div = graph.network.apply_incidence(flow)?;
    let mass = instance.total_mass();
    let err: f64 = (0..div.len())
        .map(|v| {
            let want = if v < graph.num_points { instance.supply(v) } else { 0.0 };
            (div[v] - want).abs()
        })
        .sum();
    if err > tol * mass.max(f64::MIN_POSITIVE) && err > 0.0 {
        return Err(Error::Internal(format!("flow violates divergences by {err:e}")));
    }
    Ok(())
}

/// One complete solve on one random shift.
#[derive(Debug, Clone)]
pub struct Run {
    pub tree: Quadtree,
    pub graph: SparseGraph,
    pub outcome: SolveOutcome,
    pub seed: u64,
    pub build_seconds: f64,
}

/// Seed of repetition `i` under a master seed.
pub fn repetition_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, 0x5eed_0000 + i as u64)
}

/// Runs `k` independent shifts and keeps the cheapest flow.
pub fn best_of_k(instance: &TransportInstance, config: &SolverConfig) -> Result<(Run, Vec<f64>)> {
    config.validate()?;
    let k = config.repetitions_for(instance.len());
    let mut best: Option<Run> = None;
    let mut costs = Vec::with_capacity(k);
    for i in 0..k {
        let seed = repetition_seed(config.seed, i);
        let t0 = Instant::now();
        let params = config.quadtree_params(instance.len(), seed)?;
        let tree = build_subdivided(instance, &params)?;
        let graph = build_sparse_graph(&tree);
        let build_seconds = t0.elapsed().as_secs_f64();
        let outcome = solve_all(&graph, &tree, instance, config)?;
        costs.push(outcome.cost);
        if best.as_ref().is_none_or(|b| outcome.cost < b.outcome.cost) {
            best = Some(Run { tree, graph, outcome, seed, build_seconds });
        }
    }
    Ok((best.expect("k >= 1"), costs))
}
