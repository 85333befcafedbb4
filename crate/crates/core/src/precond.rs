//! Implicit hierarchical preconditioner for one simple sub-quadtree.
//!
//! Local vertices are the part's net points in cell preorder, so every net
//! point comes after its parent. `B` charges each net point `side / Lambda`
//! per unit of divergence inside its subtree of the net-point parent tree.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::quadtree::Quadtree;
use crate::spanner::{FlowNetwork, SparseGraph};

const NIL: u32 = u32::MAX;
/// Relative size below which a surplus counts as zero.
pub const SURPLUS_ZERO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct PreconditionerContext {
    pub part: usize,
    pub lambda: f64,
    pub eps0: f64,
    pub dim: usize,
    /// `log2(n / eps0)` for the whole instance.
    pub log_ratio: f64,
    /// Global subcell id per local vertex.
    pub vertices: Vec<usize>,
    /// Induced graph over local vertices.
    pub network: FlowNetwork,
    /// Global edge id per local edge.
    pub global_edges: Vec<usize>,
    /// Local parent per vertex, `NIL` for the part root's net points.
    parent: Vec<u32>,
    /// `side / Lambda` per vertex.
    scale: Vec<f64>,
    children: Vec<Vec<u32>>,
    roots: Vec<u32>,
    edge_index: HashMap<(u32, u32), u32>,
}

impl PreconditionerContext {
    pub fn new(tree: &Quadtree, graph: &SparseGraph, part: usize) -> Self {
        let eps0 = tree.params.eps0;
        let log_ratio = (tree.num_points() as f64 / eps0).log2();
        let lambda = 22.0 * log_ratio;
        let mut vertices = Vec::new();
        for &c in &tree.parts[part].cells {
            vertices.extend(tree.cells[c].subcells.clone());
        }
        let mut local = HashMap::with_capacity(vertices.len());
        for (i, &s) in vertices.iter().enumerate() {
            local.insert(s, i as u32);
        }
        let root_cell = tree.parts[part].root;
        let mut parent = vec![NIL; vertices.len()];
        let mut children = vec![Vec::new(); vertices.len()];
        let mut roots = Vec::new();
        let mut scale = Vec::with_capacity(vertices.len());
        for (i, &s) in vertices.iter().enumerate() {
            let sc = &tree.subcells[s];
            scale.push(sc.side / lambda);
            if sc.cell == root_cell {
                roots.push(i as u32);
            } else {
                let p = local[&sc.parent.expect("non-root subcell has a parent")];
                parent[i] = p;
                children[p as usize].push(i as u32);
            }
        }

        let mut network = FlowNetwork::new(vertices.len());
        let mut global_edges = Vec::new();
        let mut edge_index = HashMap::new();
        let mut add = |net: &mut FlowNetwork, a: u32, b: u32, e: usize| {
            let id = net.add_edge(a as usize, b as usize, graph.network.lengths[e]);
            global_edges.push(e);
            edge_index.insert((a.min(b), a.max(b)), id as u32);
        };
        for &c in &tree.parts[part].cells {
            let r = tree.cells[c].subcells.clone();
            for a in r.clone() {
                for b in a + 1..r.end {
                    let e = graph.clique_edge(tree, c, a, b);
                    add(&mut network, local[&a], local[&b], e);
                }
            }
        }
        for (i, &s) in vertices.iter().enumerate() {
            if parent[i] != NIL {
                let e = graph.parent_edge[s].expect("parent edge exists");
                add(&mut network, parent[i], i as u32, e);
            }
        }
        PreconditionerContext {
            part,
            lambda,
            eps0,
            dim: tree.dim(),
            log_ratio,
            vertices,
            network,
            global_edges,
            parent,
            scale,
            children,
            roots,
            edge_index,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.network.num_edges()
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        (self.parent[v] != NIL).then(|| self.parent[v] as usize)
    }

    pub fn scale(&self, v: usize) -> f64 {
        self.scale[v]
    }

    /// Empirical condition-number scale `eps0^-1 * log2(n / eps0)`.
    pub fn kappa(&self) -> f64 {
        self.log_ratio / self.eps0
    }

    /// Upper-bound factor of the greedy solver: `eps0^-1 * sqrt(d) * Lambda`.
    pub fn greedy_factor(&self) -> f64 {
        (self.dim as f64).sqrt() * self.lambda / self.eps0
    }

    fn check_len(&self, v: &[f64], expected: usize) -> Result<()> {
        if v.len() != expected {
            return Err(Error::VectorLength { got: v.len(), expected });
        }
        Ok(())
    }

    fn check_balanced(&self, b: &[f64]) -> Result<()> {
        let mass: f64 = b.iter().map(|x| x.abs()).sum();
        let sum = crate::instance::compensated_sum(b.iter().copied());
        let allowed = 1e-9 * mass;
        if sum.abs() > allowed {
            return Err(Error::Unbalanced { sum, allowed });
        }
        Ok(())
    }

    fn subtree_sums(&self, mut s: Vec<f64>) -> Vec<f64> {
        for v in (0..s.len()).rev() {
            let p = self.parent[v];
            if p != NIL {
                s[p as usize] += s[v];
            }
        }
        s
    }

    /// `||B b||_1` and the per-vertex contributions.
    pub fn apply_b_norm(&self, b: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_len(b, self.num_vertices())?;
        self.check_balanced(b)?;
        let sums = self.subtree_sums(b.to_vec());
        let parts: Vec<f64> = sums.iter().zip(&self.scale).map(|(s, w)| w * s.abs()).collect();
        Ok((parts.iter().sum(), parts))
    }

    /// `B b` without the balance check.
    pub fn apply_b(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b, self.num_vertices())?;
        let mut s = self.subtree_sums(b.to_vec());
        for (x, w) in s.iter_mut().zip(&self.scale) {
            *x *= w;
        }
        Ok(s)
    }

    /// `B A f`: one edge pass, then one postorder pass.
    pub fn apply_ba(&self, f: &[f64]) -> Result<Vec<f64>> {
        let div = self.network.apply_incidence(f)?;
        self.apply_b(&div)
    }

    /// `(B A)^T y`: ancestor prefix sums in preorder, then one value per edge.
    pub fn apply_ba_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y, self.num_vertices())?;
        let mut acc = vec![0.0; y.len()];
        for v in 0..y.len() {
            let up = if self.parent[v] == NIL { 0.0 } else { acc[self.parent[v] as usize] };
            acc[v] = self.scale[v] * y[v] + up;
        }
        Ok((0..self.num_edges())
            .map(|e| acc[self.network.tails[e] as usize] - acc[self.network.heads[e] as usize])
            .collect())
    }

    /// Row and column sums of `|B A W^-1|` for edge weights `w`: each edge
    /// touches the ancestors of its endpoints strictly below their common
    /// ancestor.
    pub fn abs_sums(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(w, self.num_edges())?;
        let mut depth = vec![0u32; self.num_vertices()];
        for v in 0..self.num_vertices() {
            if self.parent[v] != NIL {
                depth[v] = depth[self.parent[v] as usize] + 1;
            }
        }
        let mut rows = vec![0.0; self.num_vertices()];
        let mut cols = vec![0.0; self.num_edges()];
        for e in 0..self.num_edges() {
            let (mut a, mut b) = (self.network.tails[e], self.network.heads[e]);
            let touch = |v: u32, rows: &mut [f64]| {
                let x = self.scale[v as usize] / w[e];
                rows[v as usize] += x;
                x
            };
            while a != b && a != NIL && b != NIL {
                if depth[a as usize] >= depth[b as usize] {
                    cols[e] += touch(a, &mut rows);
                    a = self.parent[a as usize];
                } else {
                    cols[e] += touch(b, &mut rows);
                    b = self.parent[b as usize];
                }
            }
            // Different part roots: both chains run out.
            for mut v in [a, b] {
                if a == b {
                    break;
                }
                while v != NIL {
                    cols[e] += touch(v, &mut rows);
                    v = self.parent[v as usize];
                }
            }
        }
        Ok((rows, cols))
    }

    fn push(&self, f: &mut [f64], excess: &mut [f64], from: u32, to: u32, amount: f64) {
        let e = self.edge_index[&(from.min(to), from.max(to))] as usize;
        if self.network.tails[e] == from {
            f[e] += amount;
        } else {
            f[e] -= amount;
        }
        excess[from as usize] -= amount;
        excess[to as usize] += amount;
    }

    /// Cancels positive against negative excess inside `group` (a clique),
    /// smallest index first.
    fn pair_within(&self, group: &[u32], f: &mut [f64], excess: &mut [f64], zero: f64) {
        let pos: Vec<u32> = group.iter().copied().filter(|&v| excess[v as usize] > zero).collect();
        let neg: Vec<u32> = group.iter().copied().filter(|&v| excess[v as usize] < -zero).collect();
        let (mut i, mut j) = (0, 0);
        let mut guard = pos.len() + neg.len();
        while i < pos.len() && j < neg.len() {
            assert!(guard > 0, "pairing exceeded its group size");
            guard -= 1;
            let (u, w) = (pos[i], neg[j]);
            let delta = excess[u as usize].min(-excess[w as usize]);
            self.push(f, excess, u, w, delta);
            if excess[u as usize] <= zero {
                i += 1;
            }
            if excess[w as usize] >= -zero {
                j += 1;
            }
        }
    }

    /// Feasible flow with `A f = b`: cancel surpluses among siblings, lift
    /// the remainder to the parent net point, and finally cancel among the
    /// root cell's net points.
    pub fn greedy_flow(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check_len(b, self.num_vertices())?;
        self.check_balanced(b)?;
        let zero = SURPLUS_ZERO * b.iter().map(|x| x.abs()).sum::<f64>();
        let mut excess = b.to_vec();
        let mut f = vec![0.0; self.num_edges()];
        for v in (0..self.num_vertices()).rev() {
            let kids = &self.children[v];
            if kids.is_empty() {
                continue;
            }
            self.pair_within(kids, &mut f, &mut excess, zero);
            for &c in kids {
                let r = excess[c as usize];
                if r != 0.0 {
                    self.push(&mut f, &mut excess, c, v as u32, r);
                }
            }
        }
        self.pair_within(&self.roots, &mut f, &mut excess, zero);
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::validate_instance;
    use crate::quadtree::{build_subdivided, QuadtreeParams};
    use crate::spanner::build_sparse_graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn context(n: usize, seed: u64) -> PreconditionerContext {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let inst = validate_instance(&pts, &vec![0.0; n], 1e-9).unwrap();
        let t = build_subdivided(&inst, &QuadtreeParams::with_bits(1, n, seed).unwrap()).unwrap();
        let g = build_sparse_graph(&t);
        PreconditionerContext::new(&t, &g, 0)
    }

    fn balanced(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut b: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = b.iter().sum::<f64>() / len as f64;
        b.iter_mut().for_each(|x| *x -= mean);
        b
    }

    #[test]
    fn zero_inputs() {
        let ctx = context(6, 1);
        let z = vec![0.0; ctx.num_vertices()];
        assert_eq!(ctx.apply_b_norm(&z).unwrap().0, 0.0);
        assert!(ctx.apply_ba(&vec![0.0; ctx.num_edges()]).unwrap().iter().all(|&x| x == 0.0));
        assert!(ctx.apply_ba_transpose(&z).unwrap().iter().all(|&x| x == 0.0));
        assert!(ctx.greedy_flow(&z).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn greedy_is_feasible_and_bounded() {
        let ctx = context(15, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let b = balanced(ctx.num_vertices(), &mut rng);
            let f = ctx.greedy_flow(&b).unwrap();
            let div = ctx.network.apply_incidence(&f).unwrap();
            for (x, y) in div.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
            let cost = ctx.network.flow_cost(&f).unwrap();
            let bound = ctx.greedy_factor() * ctx.apply_b_norm(&b).unwrap().0;
            assert!(cost <= bound * (1.0 + 1e-9));
        }
    }

    #[test]
    fn adjointness() {
        let ctx = context(12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f: Vec<f64> = (0..ctx.num_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..ctx.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lhs: f64 = ctx.apply_ba(&f).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = ctx.apply_ba_transpose(&y).unwrap().iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn unbalanced_is_rejected() {
        let ctx = context(5, 5);
        let mut b = vec![0.0; ctx.num_vertices()];
        b[0] = 1.0;
        assert!(ctx.apply_b_norm(&b).is_err());
        assert!(ctx.greedy_flow(&b).is_err());
    }
}
