#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use geotrans::instance::{euclidean, TransportInstance, DEFAULT_BALANCE_TOLERANCE};
use geotrans::precond::PreconditionerContext;
use geotrans::psplit::{Forest, NodeId, PrefixSplitTree, SPLIT_SNAP};
use geotrans::quadtree::Quadtree;
use geotrans::spanner::{FlowNetwork, SparseGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn instance(points: &[Vec<f64>], supplies: &[f64]) -> TransportInstance {
    geotrans::instance::validate_instance(points, supplies, DEFAULT_BALANCE_TOLERANCE).unwrap()
}

/// Random balanced vector.
pub fn balanced(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mean = b.iter().sum::<f64>() / n as f64;
    b.iter_mut().for_each(|x| *x -= mean);
    let drift: f64 = b.iter().sum();
    b[0] -= drift;
    b
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

// ---- dense preconditioner matrices ----

/// Dense node-arc incidence `A[v][e]`: +1 at the tail, -1 at the head.
pub fn dense_incidence(net: &FlowNetwork) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; net.num_edges()]; net.num_vertices];
    for e in 0..net.num_edges() {
        a[net.tails[e] as usize][e] += 1.0;
        a[net.heads[e] as usize][e] -= 1.0;
    }
    a
}

/// Dense `B[v][u] = scale(v)` when `u` lies in the subtree of `v`.
pub fn dense_b(ctx: &PreconditionerContext) -> Vec<Vec<f64>> {
    let n = ctx.num_vertices();
    let mut b = vec![vec![0.0; n]; n];
    for u in 0..n {
        let mut v = Some(u);
        while let Some(x) = v {
            b[x][u] = ctx.scale(x);
            v = ctx.parent(x);
        }
    }
    b
}

pub fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..m).map(|j| row.iter().zip(b).map(|(x, r)| x * r[j]).sum()).collect()
        })
        .collect()
}

pub fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn mat_t_vec(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let m = a.first().map_or(0, |r| r.len());
    (0..m).map(|j| a.iter().zip(y).map(|(row, q)| row[j] * q).sum()).collect()
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

// ---- min-cost flow by negative cycle cancelling ----

/// Exact min-cost flow value on an uncapacitated undirected network:
/// route `b` along a BFS spanning forest, then cancel negative residual
/// cycles found by Bellman-Ford until none remain.
pub fn cycle_cancel(net: &FlowNetwork, b: &[f64]) -> f64 {
    let n = net.num_vertices;
    let m = net.num_edges();
    let mut f = vec![0.0; m];
    // Spanning forest routing.
    let mut adj = vec![Vec::new(); n];
    for e in 0..m {
        adj[net.tails[e] as usize].push(e);
        adj[net.heads[e] as usize].push(e);
    }
    let mut seen = vec![false; n];
    for r in 0..n {
        if seen[r] {
            continue;
        }
        let mut order = vec![r];
        let mut via = vec![usize::MAX; n];
        seen[r] = true;
        let mut i = 0;
        while i < order.len() {
            let v = order[i];
            i += 1;
            for &e in &adj[v] {
                let w = if net.tails[e] as usize == v { net.heads[e] as usize } else { net.tails[e] as usize };
                if !seen[w] {
                    seen[w] = true;
                    via[w] = e;
                    order.push(w);
                }
            }
        }
        let mut excess: Vec<f64> = b.to_vec();
        for &v in order.iter().skip(1).rev() {
            let e = via[v];
            let x = excess[v];
            // Ship x from v towards its BFS parent.
            if net.tails[e] as usize == v {
                f[e] += x;
            } else {
                f[e] -= x;
            }
            let p = if net.tails[e] as usize == v { net.heads[e] as usize } else { net.tails[e] as usize };
            excess[p] += x;
            excess[v] = 0.0;
        }
    }
    let scale = net.lengths.iter().fold(0.0f64, |a, x| a.max(*x)).max(1e-300);
    for _ in 0..100_000 {
        // Residual arcs: (from, to, edge, dir, cost, cap).
        let mut arcs = Vec::with_capacity(2 * m);
        for e in 0..m {
            let (t, h, l) = (net.tails[e] as usize, net.heads[e] as usize, net.lengths[e]);
            arcs.push((t, h, e, 1.0, if f[e] < 0.0 { -l } else { l }, if f[e] < 0.0 { -f[e] } else { f64::INFINITY }));
            arcs.push((h, t, e, -1.0, if f[e] > 0.0 { -l } else { l }, if f[e] > 0.0 { f[e] } else { f64::INFINITY }));
        }
        let mut dist = vec![0.0; n];
        let mut pred = vec![usize::MAX; n];
        let mut last = usize::MAX;
        for _ in 0..n {
            last = usize::MAX;
            for (k, &(u, v, _, _, c, _)) in arcs.iter().enumerate() {
                if dist[u] + c < dist[v] - 1e-12 * scale {
                    dist[v] = dist[u] + c;
                    pred[v] = k;
                    last = v;
                }
            }
            if last == usize::MAX {
                break;
            }
        }
        if last == usize::MAX {
            break;
        }
        let mut v = last;
        for _ in 0..n {
            v = arcs[pred[v]].0;
        }
        let mut cycle = Vec::new();
        let start = v;
        loop {
            let k = pred[v];
            cycle.push(k);
            v = arcs[k].0;
            if v == start {
                break;
            }
        }
        let cost: f64 = cycle.iter().map(|&k| arcs[k].4).sum();
        if cost >= -1e-12 * scale {
            break;
        }
        let delta = cycle.iter().map(|&k| arcs[k].5).fold(f64::INFINITY, f64::min);
        assert!(delta.is_finite(), "unbounded negative cycle");
        for &k in &cycle {
            let (_, _, e, dir, _, _) = arcs[k];
            f[e] += dir * delta;
        }
    }
    f.iter().zip(&net.lengths).map(|(x, l)| x.abs() * l).sum()
}

// ---- exhaustive transport enumeration ----

/// Minimum cost over every integral plan; exact for integer supplies since
/// the transportation polytope has integral vertices.
pub fn enumerate_transport(inst: &TransportInstance) -> f64 {
    let n = inst.len();
    let sources: Vec<usize> = (0..n).filter(|&i| inst.supply(i) > 0.0).collect();
    let sinks: Vec<usize> = (0..n).filter(|&i| inst.supply(i) < 0.0).collect();
    let mut supply: Vec<i64> = sources.iter().map(|&i| inst.supply(i) as i64).collect();
    let mut demand: Vec<i64> = sinks.iter().map(|&i| -inst.supply(i) as i64).collect();
    let pairs: Vec<(usize, usize)> =
        (0..sources.len()).flat_map(|i| (0..sinks.len()).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    #[allow(clippy::too_many_arguments)]
    fn go(
        k: usize,
        pairs: &[(usize, usize)],
        supply: &mut [i64],
        demand: &mut [i64],
        cost: f64,
        best: &mut f64,
        inst: &TransportInstance,
        sources: &[usize],
        sinks: &[usize],
    ) {
        if k == pairs.len() {
            if supply.iter().all(|&s| s == 0) && demand.iter().all(|&d| d == 0) {
                *best = best.min(cost);
            }
            return;
        }
        let (i, j) = pairs[k];
        let d = inst.distance(sources[i], sinks[j]);
        for x in 0..=supply[i].min(demand[j]) {
            supply[i] -= x;
            demand[j] -= x;
            go(k + 1, pairs, supply, demand, cost + x as f64 * d, best, inst, sources, sinks);
            supply[i] += x;
            demand[j] += x;
        }
    }
    go(0, &pairs, &mut supply, &mut demand, 0.0, &mut best, inst, &sources, &sinks);
    if sources.is_empty() {
        0.0
    } else {
        best
    }
}

// ---- sparse graph recount ----

/// Independent edge multiset `(min vertex, max vertex, length)` built
/// straight from the tree.
pub fn expected_edges(tree: &Quadtree) -> Vec<(usize, usize, f64)> {
    let n = tree.num_points();
    let pos = |v: usize| -> Vec<f64> {
        if v < n {
            tree.point(v).to_vec()
        } else {
            tree.subcells[v - n].center.clone()
        }
    };
    let mut out = Vec::new();
    let mut push = |a: usize, b: usize| {
        let l = euclidean(&pos(a), &pos(b));
        out.push((a.min(b), a.max(b), l));
    };
    for c in 0..tree.num_cells() {
        let r = tree.cell_subcells(c);
        for a in r.clone() {
            for b in a + 1..r.end {
                push(n + a, n + b);
            }
        }
    }
    for (s, sc) in tree.subcells.iter().enumerate() {
        if let Some(p) = sc.parent {
            push(n + p, n + s);
        }
    }
    for p in 0..n {
        push(p, n + tree.point_subcell(p));
    }
    out
}

pub fn graph_edges(graph: &SparseGraph) -> Vec<(usize, usize, f64)> {
    let net = &graph.network;
    (0..net.num_edges()).map(|e| (net.tails[e] as usize, net.heads[e] as usize, net.lengths[e])).collect()
}

/// All-pairs shortest paths by Floyd-Warshall.
pub fn floyd(net: &FlowNetwork) -> Vec<Vec<f64>> {
    let n = net.num_vertices;
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0.0;
    }
    for e in 0..net.num_edges() {
        let (a, b, l) = (net.tails[e] as usize, net.heads[e] as usize, net.lengths[e]);
        d[a][b] = d[a][b].min(l);
        d[b][a] = d[b][a].min(l);
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i][k];
            if !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                let via = dik + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

// ---- prefix split tree fuzz against a plain list ----

pub struct FuzzReport {
    pub ops: usize,
    pub mismatches: usize,
    pub first_mismatch: Option<String>,
}

/// Random mix of inserts, deletes, weight updates, merges, prefix splits and
/// `first` queries over a pool of trees, mirrored on plain vectors. Every
/// touched tree is compared node for node after each operation.
pub fn fuzz_prefix_split(ops: usize, seed: u64) -> FuzzReport {
    const POOL: usize = 12;
    let mut rng = rng(seed);
    let mut forest: Forest<u64> = Forest::new();
    let mut trees: Vec<PrefixSplitTree> = (0..POOL).map(|_| PrefixSplitTree::new()).collect();
    let mut lists: Vec<Vec<(u64, f64)>> = vec![Vec::new(); POOL];
    // Handles of nodes that were never split, with the tree that holds them.
    let mut handles: HashMap<u64, (NodeId, usize)> = HashMap::new();
    let mut next_label = 0u64;
    let mut report = FuzzReport { ops, mismatches: 0, first_mismatch: None };

    let check = |forest: &Forest<u64>, trees: &[PrefixSplitTree], lists: &[Vec<(u64, f64)>], i: usize, op: &str, step: usize, report: &mut FuzzReport| {
        let got = forest.in_order(&trees[i]);
        let want = &lists[i];
        // Split remainders are computed at the scale of the heaviest tree.
        let total: f64 = lists.iter().flatten().map(|x| x.1).sum();
        let tol = 1e-12 * total.max(1.0);
        let ok = got.len() == want.len()
            && got.iter().zip(want).all(|(g, w)| g.0 == w.0 && (g.1 - w.1).abs() <= tol);
        if !ok {
            report.mismatches += 1;
            if report.first_mismatch.is_none() {
                report.first_mismatch = Some(format!("step {step} after {op} on tree {i}: got {got:?} want {want:?}"));
            }
        }
    };

    for step in 0..ops {
        let i = rng.gen_range(0..POOL);
        let roll = rng.gen_range(0..100);
        if roll < 35 || lists[i].is_empty() {
            let w = rng.gen_range(0.01..10.0);
            let id = forest.insert(&mut trees[i], next_label, w).unwrap();
            handles.insert(next_label, (id, i));
            lists[i].push((next_label, w));
            next_label += 1;
            check(&forest, &trees, &lists, i, "insert", step, &mut report);
        } else if roll < 45 {
            let k = rng.gen_range(0..lists[i].len());
            let label = lists[i][k].0;
            if let Some(&(id, _)) = handles.get(&label) {
                forest.delete(&mut trees[i], id).unwrap();
                handles.remove(&label);
                lists[i].remove(k);
                check(&forest, &trees, &lists, i, "delete", step, &mut report);
            }
        } else if roll < 55 {
            let k = rng.gen_range(0..lists[i].len());
            let label = lists[i][k].0;
            if let Some(&(id, _)) = handles.get(&label) {
                let w = rng.gen_range(0.01..10.0);
                forest.update_weight(&mut trees[i], id, w).unwrap();
                lists[i][k].1 = w;
                check(&forest, &trees, &lists, i, "update", step, &mut report);
            }
        } else if roll < 70 {
            let j = rng.gen_range(0..POOL);
            if j == i {
                continue;
            }
            let second = std::mem::take(&mut trees[j]);
            forest.merge(&mut trees[i], second).unwrap();
            let moved = std::mem::take(&mut lists[j]);
            for (label, _) in &moved {
                if let Some(h) = handles.get_mut(label) {
                    h.1 = i;
                }
            }
            lists[i].extend(moved);
            check(&forest, &trees, &lists, i, "merge", step, &mut report);
            check(&forest, &trees, &lists, j, "merge", step, &mut report);
        } else if roll < 90 {
            let total: f64 = lists[i].iter().map(|x| x.1).sum();
            let t = total * rng.gen_range(0.0..1.0f64).max(1e-6);
            let j = (0..POOL).find(|&j| j != i && lists[j].is_empty());
            let Some(j) = j else { continue };
            let prefix = forest.prefix_split(&mut trees[i], t).unwrap();
            trees[j] = prefix;
            // Mirror on the list with the same snapping rule.
            let tol = SPLIT_SNAP * total;
            let list = std::mem::take(&mut lists[i]);
            let mut head = Vec::new();
            let mut tail = Vec::new();
            if t >= total - tol {
                head = list;
            } else {
                let mut acc = 0.0;
                let mut split = false;
                for (label, w) in list {
                    if split {
                        tail.push((label, w));
                    } else if acc + w > t + tol {
                        let rem = t - acc;
                        if rem > tol {
                            head.push((label, rem));
                            tail.push((label, w - rem));
                            handles.remove(&label);
                        } else {
                            tail.push((label, w));
                        }
                        split = true;
                    } else {
                        acc += w;
                        head.push((label, w));
                    }
                }
            }
            for (label, _) in &head {
                if let Some(h) = handles.get_mut(label) {
                    h.1 = j;
                }
            }
            lists[j] = head;
            lists[i] = tail;
            check(&forest, &trees, &lists, i, "prefix_split", step, &mut report);
            check(&forest, &trees, &lists, j, "prefix_split", step, &mut report);
        } else {
            let got = forest.first(&mut trees[i]).map(|x| *forest.label(x).unwrap());
            if got != lists[i].first().map(|x| x.0) {
                report.mismatches += 1;
                report.first_mismatch.get_or_insert_with(|| format!("step {step}: first mismatch"));
            }
        }
    }
    for i in 0..POOL {
        check(&forest, &trees, &lists, i, "final", ops, &mut report);
        if (forest.total_weight(&trees[i]) - lists[i].iter().map(|x| x.1).sum::<f64>()).abs()
            > 1e-9 * lists[i].iter().map(|x| x.1).sum::<f64>().max(1.0)
        {
            report.mismatches += 1;
        }
    }
    report
}

/// Seconds for `ops` random insert / split / merge / first operations on
/// two trees, best of three runs.
pub fn time_prefix_split_ops(ops: usize, seed: u64) -> f64 {
    (0..3)
        .map(|r| {
            let mut rng = rng(seed + r);
            let mut forest: Forest<u32> = Forest::new();
            let mut a = PrefixSplitTree::new();
            let start = std::time::Instant::now();
            for k in 0..ops {
                match rng.gen_range(0..10) {
                    0..=4 => {
                        forest.insert(&mut a, k as u32, rng.gen_range(0.1..1.0)).unwrap();
                    }
                    5..=7 => {
                        let total = forest.total_weight(&a);
                        if total > 0.0 {
                            let mut p = forest.prefix_split(&mut a, total * rng.gen_range(0.01..0.99)).unwrap();
                            // Put the prefix back at the end to keep the tree large.
                            forest.merge(&mut p, std::mem::take(&mut a)).unwrap();
                            a = p;
                        }
                    }
                    _ => {
                        forest.first(&mut a);
                    }
                }
            }
            std::hint::black_box(forest.live_nodes());
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}
