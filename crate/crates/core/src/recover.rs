//! Turns a flow on the sparse graph into a point-to-point transportation map.
//!
//! Net points are processed cell by cell in postorder. Flow through a net
//! point is first short-cut between its net-point neighbours, then pushed
//! into (or pulled out of) prefix split trees that record which input points
//! ultimately send to or receive from it, and finally drained into direct
//! point-to-point entries. Every step replaces a two-hop route by a direct
//! one, so by the triangle inequality the cost never increases.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::instance::{TransportInstance, TransportationMap};
use crate::psplit::{Forest, PrefixSplitTree};
use crate::quadtree::{Collapsed, Quadtree};
use crate::spanner::{EdgeKind, SparseGraph};

/// Relative size below which leftover tree weight is dropped.
pub const DUST: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
pub struct RecoveryStats {
    pub tree_nodes: usize,
    pub direct_entries: usize,
    pub dropped_mass: f64,
}

struct State {
    /// Signed flow between net points (subcell ids), antisymmetric.
    flows: Vec<BTreeMap<u32, f64>>,
    forest: Forest<u32>,
    /// Points receiving flow from the net point.
    pt: Vec<PrefixSplitTree>,
    /// Points sending flow into the net point.
    nt: Vec<PrefixSplitTree>,
    direct: HashMap<(u32, u32), f64>,
    dust: f64,
    dropped: f64,
}

impl State {
    fn add_flow(&mut self, a: u32, b: u32, amount: f64) {
        for (x, y, v) in [(a, b, amount), (b, a, -amount)] {
            let slot = self.flows[x as usize].entry(y).or_insert(0.0);
            *slot += v;
            if slot.abs() <= self.dust {
                self.dropped += slot.abs() / 2.0;
                self.flows[x as usize].remove(&y);
            }
        }
    }

    fn clear_flow(&mut self, a: u32, b: u32) {
        self.flows[a as usize].remove(&b);
        self.flows[b as usize].remove(&a);
    }

    fn flow(&self, a: u32, b: u32) -> f64 {
        self.flows[a as usize].get(&b).copied().unwrap_or(0.0)
    }

    /// Moves a prefix of weight `amount` from one tree to another.
    fn transfer(&mut self, from_pt: bool, src: u32, dst: u32, amount: f64) -> Result<()> {
        let trees = if from_pt { &mut self.pt } else { &mut self.nt };
        let mut source = std::mem::take(&mut trees[src as usize]);
        let available = self.forest.total_weight(&source);
        let t = amount.min(available);
        if amount - t > self.dust {
            return Err(Error::Internal(format!("net point {src} lacks {:e} units of tree weight", amount - t)));
        }
        if t > 0.0 {
            let prefix = self.forest.prefix_split(&mut source, t)?;
            let mut target = std::mem::take(&mut trees[dst as usize]);
            self.forest.merge(&mut target, prefix)?;
            trees[dst as usize] = target;
        }
        trees[src as usize] = source;
        Ok(())
    }

    fn process(&mut self, v: u32) -> Result<()> {
        // Short-cut u -> v -> w into u -> w.
        let incoming: Vec<u32> = self.flows[v as usize].iter().filter(|(_, &x)| x < 0.0).map(|(&u, _)| u).collect();
        let outgoing: Vec<u32> = self.flows[v as usize].iter().filter(|(_, &x)| x > 0.0).map(|(&w, _)| w).collect();
        let (mut i, mut j) = (0, 0);
        while i < incoming.len() && j < outgoing.len() {
            let (u, w) = (incoming[i], outgoing[j]);
            let fin = self.flow(u, v);
            let fout = self.flow(v, w);
            if fin <= 0.0 {
                i += 1;
                continue;
            }
            if fout <= 0.0 {
                j += 1;
                continue;
            }
            let delta = fin.min(fout);
            self.add_flow(u, w, delta);
            if fin - delta <= self.dust {
                self.clear_flow(u, v);
                self.dropped += (fin - delta).max(0.0);
                i += 1;
            } else {
                self.add_flow(u, v, -delta);
            }
            if fout - delta <= self.dust {
                self.clear_flow(v, w);
                self.dropped += (fout - delta).max(0.0);
                j += 1;
            } else {
                self.add_flow(v, w, -delta);
            }
        }

        // Remaining net-point flow is one-directional; hand over point sets.
        let rest: Vec<(u32, f64)> = self.flows[v as usize].iter().map(|(&u, &x)| (u, x)).collect();
        for (u, x) in rest {
            if x < 0.0 {
                // u sends -x to v: u now serves the points v would have served.
                self.transfer(true, v, u, -x)?;
            } else {
                // v sends x to w: w now collects from v's sources.
                self.transfer(false, v, u, x)?;
            }
            self.clear_flow(u, v);
        }

        // Drain sources against sinks.
        while let (Some(x), Some(y)) = (self.forest.first(&mut self.nt[v as usize]), self.forest.first(&mut self.pt[v as usize])) {
            let (wx, wy) = (self.forest.weight(x)?, self.forest.weight(y)?);
            let (p, q) = (*self.forest.label(x)?, *self.forest.label(y)?);
            let delta = wx.min(wy);
            *self.direct.entry((p, q)).or_insert(0.0) += delta;
            for (tree, node, w) in [(&mut self.nt[v as usize], x, wx), (&mut self.pt[v as usize], y, wy)] {
                if w - delta <= self.dust {
                    self.dropped += (w - delta).max(0.0);
                    self.forest.delete(tree, node)?;
                } else {
                    self.forest.update_weight(tree, node, w - delta)?;
                }
            }
        }
        for tree in [&mut self.nt[v as usize], &mut self.pt[v as usize]] {
            let left = self.forest.total_weight(tree);
            if left > 0.0 {
                self.dropped += left;
                self.forest.clear(tree);
            }
        }
        Ok(())
    }
}

/// Recovers a transportation map of cost at most the flow's cost.
pub fn recover_map(
    graph: &SparseGraph,
    tree: &Quadtree,
    instance: &TransportInstance,
    flow: &[f64],
) -> Result<(TransportationMap, RecoveryStats)> {
    let n = graph.num_points;
    let m = graph.num_net_points();
    if flow.len() != graph.num_edges() {
        return Err(Error::VectorLength { got: flow.len(), expected: graph.num_edges() });
    }
    let mass = instance.total_mass();
    let div = graph.network.apply_incidence(flow)?;
    let net_err: f64 = div[n..].iter().map(|x| x.abs()).sum();
    let point_err: f64 = (0..n).map(|p| (div[p] - instance.supply(p)).abs()).sum();
    if net_err + point_err > 1e-9 * mass.max(f64::MIN_POSITIVE) && net_err + point_err > 0.0 {
        return Err(Error::Infeasible(format!("flow has divergence error {:e}", net_err + point_err)));
    }

    let mut st = State {
        flows: vec![BTreeMap::new(); m],
        forest: Forest::new(),
        pt: (0..m).map(|_| PrefixSplitTree::new()).collect(),
        nt: (0..m).map(|_| PrefixSplitTree::new()).collect(),
        direct: HashMap::new(),
        dust: DUST * mass,
        dropped: 0.0,
    };
    for (e, kind) in graph.kinds.iter().enumerate() {
        let x = flow[e];
        if x == 0.0 {
            continue;
        }
        let (t, h) = (graph.network.tails[e] as usize, graph.network.heads[e] as usize);
        match *kind {
            EdgeKind::Point { point } => {
                let s = h - n;
                if x > 0.0 {
                    st.forest.insert(&mut st.nt[s], point as u32, x)?;
                } else {
                    st.forest.insert(&mut st.pt[s], point as u32, -x)?;
                }
            }
            _ => st.add_flow((t - n) as u32, (h - n) as u32, x),
        }
    }

    for c in tree.postorder() {
        for s in tree.cells[c].subcells.clone() {
            st.process(s as u32)?;
        }
    }

    let mut pairs: Vec<((u32, u32), f64)> = st.direct.iter().map(|(&k, &v)| (k, v)).collect();
    pairs.sort_by_key(|a| a.0);
    let mut map = TransportationMap::new();
    for &((p, q), x) in &pairs {
        if p == q {
            continue;
        }
        let back = st.direct.get(&(q, p)).copied().unwrap_or(0.0);
        let net = x - back;
        if net > 0.0 {
            map.push(p as usize, q as usize, net);
        }
    }
    let stats = RecoveryStats {
        tree_nodes: st.forest.live_nodes(),
        direct_entries: pairs.len(),
        dropped_mass: st.dropped,
    };
    Ok((map, stats))
}

/// Re-expands a map over collapsed representatives to the original points.
pub fn merge_coincident(map: &TransportationMap, collapsed: &Collapsed, original: &TransportInstance) -> TransportationMap {
    if !collapsed.has_duplicates() {
        return map.clone();
    }
    let g = collapsed.groups.len();
    let mut out_total = vec![0.0; g];
    let mut in_total = vec![0.0; g];
    for e in &map.entries {
        out_total[e.src] += e.amount;
        in_total[e.dst] += e.amount;
    }
    // Per group: quotas of external outflow and inflow per member, plus
    // member-to-member entries for mass that stays inside the group.
    let mut out_quota: Vec<Vec<(usize, f64)>> = Vec::with_capacity(g);
    let mut in_quota: Vec<Vec<(usize, f64)>> = Vec::with_capacity(g);
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (k, members) in collapsed.groups.iter().enumerate() {
        let pos: f64 = members.iter().map(|&i| original.supply(i).max(0.0)).sum();
        let mut internal = (pos - out_total[k]).max(0.0);
        let extra = (out_total[k] - pos).max(0.0);
        let mut outs = Vec::new();
        let mut ins = Vec::new();
        let mut senders = Vec::new();
        let mut receivers = Vec::new();
        let mut internal_in = internal;
        for &i in members {
            let mu = original.supply(i);
            if mu > 0.0 {
                let kept = mu.min(internal);
                internal -= kept;
                if kept > 0.0 {
                    senders.push((i, kept));
                }
                outs.push((i, mu - kept));
            } else if mu < 0.0 {
                let kept = (-mu).min(internal_in);
                internal_in -= kept;
                if kept > 0.0 {
                    receivers.push((i, kept));
                }
                ins.push((i, -mu - kept));
            }
        }
        if extra > 0.0 {
            outs.push((members[0], extra));
            ins.push((members[0], extra));
        }
        for (a, b, x) in pair_up(&senders, &receivers) {
            if a != b {
                *entries.entry((a, b)).or_insert(0.0) += x;
            }
        }
        out_quota.push(outs);
        in_quota.push(ins);
    }
    let mut out_cursor = vec![(0usize, 0.0f64); g];
    let mut in_cursor = vec![(0usize, 0.0f64); g];
    for e in &map.entries {
        let from = take(&out_quota[e.src], &mut out_cursor[e.src], e.amount);
        for (a, x) in from {
            for (b, y) in take(&in_quota[e.dst], &mut in_cursor[e.dst], x) {
                if a != b {
                    *entries.entry((a, b)).or_insert(0.0) += y;
                }
            }
        }
    }
    let mut out = TransportationMap::new();
    for ((a, b), x) in entries {
        if x > 0.0 {
            out.push(a, b, x);
        }
    }
    out
}

fn pair_up(a: &[(usize, f64)], b: &[(usize, f64)]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.first().map_or(0.0, |x| x.1), b.first().map_or(0.0, |x| x.1));
    while i < a.len() && j < b.len() {
        let d = ra.min(rb);
        if d > 0.0 {
            out.push((a[i].0, b[j].0, d));
        }
        ra -= d;
        rb -= d;
        if ra <= 0.0 {
            i += 1;
            ra = a.get(i).map_or(0.0, |x| x.1);
        }
        if rb <= 0.0 {
            j += 1;
            rb = b.get(j).map_or(0.0, |x| x.1);
        }
    }
    out
}

/// Consumes `amount` from a quota list starting at the cursor; rounding
/// leftovers are charged to the last member.
fn take(quota: &[(usize, f64)], cursor: &mut (usize, f64), mut amount: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    while amount > 0.0 {
        let Some(&(member, cap)) = quota.get(cursor.0) else {
            let last = quota.last().map_or(0, |q| q.0);
            out.push((last, amount));
            break;
        };
        let left = cap - cursor.1;
        let d = left.min(amount);
        if d > 0.0 {
            out.push((member, d));
        }
        amount -= d;
        cursor.1 += d;
        if cursor.1 >= cap {
            *cursor = (cursor.0 + 1, 0.0);
        }
    }
    out
}
