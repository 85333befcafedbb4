//! Sparse Steiner graph over input points and net points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::instance::{euclidean, TransportInstance};
use crate::quadtree::Quadtree;

/// Undirected edges with a fixed orientation, used for flows.
#[derive(Debug, Clone, Default)]
pub struct FlowNetwork {
    pub num_vertices: usize,
    pub tails: Vec<u32>,
    pub heads: Vec<u32>,
    pub lengths: Vec<f64>,
}

impl FlowNetwork {
    pub fn new(num_vertices: usize) -> Self {
        FlowNetwork { num_vertices, ..Default::default() }
    }

    pub fn add_edge(&mut self, a: usize, b: usize, length: f64) -> usize {
        let (t, h) = if a <= b { (a, b) } else { (b, a) };
        self.tails.push(t as u32);
        self.heads.push(h as u32);
        self.lengths.push(length);
        self.tails.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.tails.len()
    }

    /// `(Af)_v = out(v) - in(v)` in one pass over the edges.
    pub fn apply_incidence(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_flow(f)?;
        let mut div = vec![0.0; self.num_vertices];
        for e in 0..f.len() {
            div[self.tails[e] as usize] += f[e];
            div[self.heads[e] as usize] -= f[e];
        }
        Ok(div)
    }

    /// `sum |f_e| * length_e`.
    pub fn flow_cost(&self, f: &[f64]) -> Result<f64> {
        self.check_flow(f)?;
        Ok(f.iter().zip(&self.lengths).map(|(x, l)| x.abs() * l).sum())
    }

    fn check_flow(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.num_edges() {
            return Err(Error::VectorLength { got: f.len(), expected: self.num_edges() });
        }
        Ok(())
    }

    /// Compressed adjacency: `(offsets, edge ids)`.
    pub fn adjacency(&self) -> (Vec<usize>, Vec<u32>) {
        let mut deg = vec![0usize; self.num_vertices + 1];
        for e in 0..self.num_edges() {
            deg[self.tails[e] as usize + 1] += 1;
            deg[self.heads[e] as usize + 1] += 1;
        }
        for v in 0..self.num_vertices {
            deg[v + 1] += deg[v];
        }
        let mut fill = deg.clone();
        let mut list = vec![0u32; 2 * self.num_edges()];
        for e in 0..self.num_edges() {
            for v in [self.tails[e], self.heads[e]] {
                list[fill[v as usize]] = e as u32;
                fill[v as usize] += 1;
            }
        }
        (deg, list)
    }

    pub fn other(&self, e: usize, v: usize) -> usize {
        if self.tails[e] as usize == v {
            self.heads[e] as usize
        } else {
            self.tails[e] as usize
        }
    }

    /// Single-source shortest path lengths.
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let (off, list) = self.adjacency();
        let mut dist = vec![f64::INFINITY; self.num_vertices];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(HeapItem(0.0, source));
        while let Some(HeapItem(d, v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &e in &list[off[v]..off[v + 1]] {
                let w = self.other(e as usize, v);
                let nd = d + self.lengths[e as usize];
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(HeapItem(nd, w));
                }
            }
        }
        dist
    }
}

/// Min-heap entry keyed by distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct HeapItem(pub f64, pub usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Between two net points of one cell.
    Clique { cell: usize },
    /// From a net point (subcell id) to its parent net point.
    Parent { subcell: usize },
    /// From an input point to its leaf net point.
    Point { point: usize },
}

#[derive(Debug, Clone)]
pub struct SparseGraph {
    pub num_points: usize,
    pub dim: usize,
    /// Coordinates of every vertex, points first then net points.
    pub positions: Vec<f64>,
    pub network: FlowNetwork,
    pub kinds: Vec<EdgeKind>,
    /// Edge to the parent net point, per subcell (`None` at the global root).
    pub parent_edge: Vec<Option<usize>>,
    /// The single edge of each input point.
    pub point_edge: Vec<usize>,
    /// First clique edge of each cell; pairs follow in lexicographic order.
    pub clique_start: Vec<usize>,
}

pub fn build_sparse_graph(tree: &Quadtree) -> SparseGraph {
    let n = tree.num_points();
    let dim = tree.dim();
    let m = tree.subcells.len();
    let mut positions = Vec::with_capacity((n + m) * dim);
    for p in 0..n {
        positions.extend_from_slice(tree.point(p));
    }
    for s in &tree.subcells {
        positions.extend_from_slice(&s.center);
    }
    let pos = |v: usize| &positions[v * dim..(v + 1) * dim];
    let mut network = FlowNetwork::new(n + m);
    let mut kinds = Vec::new();
    let mut clique_start = Vec::with_capacity(tree.cells.len());
    for (c, cell) in tree.cells.iter().enumerate() {
        clique_start.push(network.num_edges());
        let r = cell.subcells.clone();
        for a in r.clone() {
            for b in a + 1..r.end {
                network.add_edge(n + a, n + b, euclidean(pos(n + a), pos(n + b)));
                kinds.push(EdgeKind::Clique { cell: c });
            }
        }
    }
    let mut parent_edge = vec![None; m];
    for (s, sc) in tree.subcells.iter().enumerate() {
        if let Some(ps) = sc.parent {
            let e = network.add_edge(n + ps, n + s, euclidean(pos(n + ps), pos(n + s)));
            kinds.push(EdgeKind::Parent { subcell: s });
            parent_edge[s] = Some(e);
        }
    }
    let mut point_edge = Vec::with_capacity(n);
    for p in 0..n {
        let v = n + tree.point_subcell(p);
        point_edge.push(network.add_edge(p, v, euclidean(pos(p), pos(v))));
        kinds.push(EdgeKind::Point { point: p });
    }
    SparseGraph { num_points: n, dim, positions, network, kinds, parent_edge, point_edge, clique_start }
}

impl SparseGraph {
    pub fn num_vertices(&self) -> usize {
        self.network.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.network.num_edges()
    }

    pub fn num_net_points(&self) -> usize {
        self.num_vertices() - self.num_points
    }

    /// Clique edge between subcells `a < b` of `cell`.
    pub fn clique_edge(&self, tree: &Quadtree, cell: usize, a: usize, b: usize) -> usize {
        let r = tree.cells[cell].subcells.clone();
        let k = r.len();
        let (i, j) = (a - r.start, b - r.start);
        self.clique_start[cell] + i * k - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn position(&self, v: usize) -> &[f64] {
        &self.positions[v * self.dim..(v + 1) * self.dim]
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in 0..self.num_edges() {
            let _ = writeln!(
                out,
                "{} {} {:e}",
                self.network.tails[e], self.network.heads[e], self.network.lengths[e]
            );
        }
        out
    }
}

pub fn apply_incidence(graph: &SparseGraph, f: &[f64]) -> Result<Vec<f64>> {
    graph.network.apply_incidence(f)
}

pub fn flow_cost(graph: &SparseGraph, f: &[f64]) -> Result<f64> {
    graph.network.flow_cost(f)
}

/// Pushes every supply along its point edge. Returns the flow and the
/// resulting divergence demand over net points (indexed by subcell).
pub fn route_supplies(graph: &SparseGraph, instance: &TransportInstance) -> Result<(Vec<f64>, Vec<f64>)> {
    if instance.len() != graph.num_points {
        return Err(Error::VectorLength { got: instance.len(), expected: graph.num_points });
    }
    let mut f = vec![0.0; graph.num_edges()];
    let mut demand = vec![0.0; graph.num_net_points()];
    for p in 0..graph.num_points {
        let e = graph.point_edge[p];
        let mu = instance.supply(p);
        // Points have the smaller ids, so every point edge is oriented away from the point.
        f[e] = mu;
        demand[graph.network.heads[e] as usize - graph.num_points] += mu;
    }
    Ok((f, demand))
}

/// Exact shortest-path distance between two input points.
pub fn graph_distance(graph: &SparseGraph, p: usize, q: usize) -> Result<f64> {
    if p >= graph.num_points || q >= graph.num_points {
        return Err(Error::IndexOutOfRange { index: p.max(q), len: graph.num_points });
    }
    let d = graph.network.distances_from(p)[q];
    if !d.is_finite() {
        return Err(Error::Internal(format!("points {p} and {q} are disconnected")));
    }
    Ok(d)
}
