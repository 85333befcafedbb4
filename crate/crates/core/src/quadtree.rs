//! Randomly shifted conditionally-compressed quadtree.
//!
//! Every cell belongs to one *simple sub-quadtree* (a "part"): the global
//! root's part, or a part rooted at a cell produced by the compression rule.
//! Each part has a frame (corner and side of its shifted root cube), and
//! every point of the part is mapped once to unit coordinates `u` in that
//! frame. Cell membership and subcell membership at level `L` are then read
//! off the binary digits of `u`, which keeps nesting across levels exact in
//! floating point: scaling by a power of two and taking the fractional part
//! never rounds.
//!
//! Construction follows the sorted-lists strategy: each cell owns `d` doubly
//! linked lists of its points, one per axis, and a split walks the relevant
//! list from both ends so that only the less populated side is relinked.

use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instance::TransportInstance;

const NIL: u32 = u32::MAX;

/// Default exponent of the moat size `Delta / n^4`.
pub const DEFAULT_MOAT_EXPONENT: f64 = 4.0;
/// Default exponent of the compression threshold `eps0 * Delta / (3 n^8)`.
pub const DEFAULT_RULE2_EXPONENT: f64 = 8.0;
/// Regression guard for the cell count: `cells <= c1 * n * log2(n / eps0)`.
pub const CELL_COUNT_CONSTANT: f64 = 2.0;

/// Construction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadtreeParams {
    /// Subcell side ratio; always `2^-subdivision_bits`.
    pub eps0: f64,
    /// `log2(1 / eps0)`.
    pub subdivision_bits: u32,
    pub n: usize,
    pub seed: u64,
    pub moat_exponent: f64,
    pub rule2_exponent: f64,
    /// Fixed shift, as a fraction of the bounding-cube side in `[0, 1)`,
    /// applied to every frame instead of a random draw. Used for crafted
    /// instances.
    pub fixed_shift: Option<Vec<f64>>,
}

impl QuadtreeParams {
    /// Derives `eps0 = eps / (c * ceil(log2 n))`, rounded down to a power of
    /// two no larger than `1/2`.
    pub fn for_epsilon(eps: f64, n: usize, c: f64, seed: u64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon {eps}")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter(format!("epsilon constant {c}")));
        }
        if n == 0 {
            return Err(Error::EmptyInstance);
        }
        let log_n = (n as f64).log2().ceil().max(1.0);
        let raw = eps / (c * log_n);
        let bits = (1.0 / raw).log2().ceil().max(1.0) as u32;
        Self::with_bits(bits, n, seed)
    }

    pub fn with_bits(subdivision_bits: u32, n: usize, seed: u64) -> Result<Self> {
        if subdivision_bits == 0 || subdivision_bits > 30 {
            return Err(Error::InvalidParameter(format!("1/eps0 = 2^{subdivision_bits}")));
        }
        Ok(QuadtreeParams {
            eps0: (-(subdivision_bits as f64)).exp2(),
            subdivision_bits,
            n,
            seed,
            moat_exponent: DEFAULT_MOAT_EXPONENT,
            rule2_exponent: DEFAULT_RULE2_EXPONENT,
            fixed_shift: None,
        })
    }

    pub fn with_exponents(mut self, moat: f64, rule2: f64) -> Self {
        self.moat_exponent = moat;
        self.rule2_exponent = rule2;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `log2(n / eps0)`.
    pub fn log_ratio(&self) -> f64 {
        (self.n as f64 / self.eps0).log2()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellRule {
    /// The global root.
    Root,
    /// Root of an independently shifted sub-quadtree.
    Compressed,
    /// Ordinary halving child.
    Split,
}

impl CellRule {
    fn tag(self) -> &'static str {
        match self {
            CellRule::Root => "root",
            CellRule::Compressed => "rule2",
            CellRule::Split => "rule3",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub rule: CellRule,
    /// Simple sub-quadtree this cell belongs to.
    pub part: usize,
    /// Depth below the part root.
    pub level: u32,
    pub corner: Vec<f64>,
    pub side: f64,
    /// Range into [`Quadtree::order`].
    pub points: Range<usize>,
    /// Range into [`Quadtree::subcells`]; empty until subdivision.
    pub subcells: Range<usize>,
}

impl Cell {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn is_part_root(&self) -> bool {
        self.rule != CellRule::Split
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }
}

/// A nonempty subcell of a cell, carrying one net point at its center.
#[derive(Debug, Clone)]
pub struct Subcell {
    pub cell: usize,
    /// Grid index of the subcell within its cell, per axis.
    pub key: Vec<u32>,
    pub center: Vec<f64>,
    pub side: f64,
    pub points: Vec<u32>,
    /// Subcell of the parent cell whose net point is this net point's parent.
    pub parent: Option<usize>,
}

/// Shifted root cube of one simple sub-quadtree.
#[derive(Debug, Clone)]
pub struct Part {
    pub root: usize,
    pub parent: Option<usize>,
    pub corner: Vec<f64>,
    pub side: f64,
    pub seed: u64,
    /// Cells of the part in preorder.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Quadtree {
    pub params: QuadtreeParams,
    dim: usize,
    coords: Vec<f64>,
    pub cells: Vec<Cell>,
    pub subcells: Vec<Subcell>,
    pub parts: Vec<Part>,
    /// Points in depth-first leaf order; every cell owns a contiguous range.
    pub order: Vec<u32>,
    /// Leaf cell of every point.
    pub leaf_of: Vec<usize>,
    /// Rule-2 jumps forced by exhausted floating-point resolution rather
    /// than by the threshold.
    pub precision_reframes: usize,
    /// Compressed roots whose subcell centers fell outside every nonempty
    /// parent subcell.
    pub containment_fallbacks: usize,
}

/// Builds the tree (cells only). Call [`subdivide_and_net`] to add subcells.
pub fn build_quadtree(instance: &TransportInstance, params: &QuadtreeParams) -> Result<Quadtree> {
    if instance.is_empty() {
        return Err(Error::EmptyInstance);
    }
    if params.n != instance.len() {
        return Err(Error::InvalidParameter(format!(
            "params built for n = {} but instance has {} points",
            params.n,
            instance.len()
        )));
    }
    if params.eps0 > 0.5 || params.eps0 != (-(params.subdivision_bits as f64)).exp2() {
        return Err(Error::InvalidParameter(format!("eps0 {} is not 2^-k <= 1/2", params.eps0)));
    }
    if let Some(s) = &params.fixed_shift {
        if s.len() != instance.dim() || s.iter().any(|v| !(0.0..1.0).contains(v)) {
            return Err(Error::InvalidParameter("fixed shift must be d fractions in [0, 1)".into()));
        }
    }
    Builder::new(instance, params).run()
}

/// Builds and subdivides in one step.
pub fn build_subdivided(instance: &TransportInstance, params: &QuadtreeParams) -> Result<Quadtree> {
    let mut tree = build_quadtree(instance, params)?;
    subdivide_and_net(&mut tree);
    Ok(tree)
}

/// Rebuilds with fresh shifts drawn from `seed`.
pub fn resample(tree: &Quadtree, seed: u64) -> Result<Quadtree> {
    let instance = TransportInstance::from_parts_unchecked(tree.dim, tree.coords.clone(), vec![0.0; tree.num_points()]);
    let params = tree.params.clone().with_seed(seed);
    let subdivided = !tree.subcells.is_empty();
    let mut out = build_quadtree(&instance, &params)?;
    if subdivided {
        subdivide_and_net(&mut out);
    }
    Ok(out)
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x632b_e59b_d9b4_e019);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix_seed(seed, salt)
}

/// Per-axis doubly linked lists over the points of one cell.
#[derive(Debug, Clone)]
struct PointSet {
    head: Vec<u32>,
    tail: Vec<u32>,
    len: usize,
}

struct Builder<'a> {
    params: &'a QuadtreeParams,
    dim: usize,
    n: usize,
    coords: &'a [f64],
    next: Vec<Vec<u32>>,
    prev: Vec<Vec<u32>>,
    unit: Vec<f64>,
    cells: Vec<Cell>,
    parts: Vec<Part>,
    part_children: Vec<u64>,
    leaf_of: Vec<usize>,
    precision_reframes: usize,
    threshold_factor: f64,
}

impl<'a> Builder<'a> {
    fn new(instance: &'a TransportInstance, params: &'a QuadtreeParams) -> Self {
        let n = instance.len();
        let dim = instance.dim();
        Builder {
            params,
            dim,
            n,
            coords: instance.coords(),
            next: vec![vec![NIL; n]; dim],
            prev: vec![vec![NIL; n]; dim],
            unit: vec![0.0; n * dim],
            cells: Vec::new(),
            parts: Vec::new(),
            part_children: Vec::new(),
            leaf_of: vec![usize::MAX; n],
            precision_reframes: 0,
            threshold_factor: params.eps0 / (3.0 * (n as f64).powf(params.rule2_exponent)),
        }
    }

    fn x(&self, p: u32, j: usize) -> f64 {
        self.coords[p as usize * self.dim + j]
    }

    fn u(&self, p: u32, j: usize) -> f64 {
        self.unit[p as usize * self.dim + j]
    }

    fn run(mut self) -> Result<Quadtree> {
        let all = self.initial_lists();
        let root = self.new_frame(&all, None, None);
        let mut stack = vec![(root, all)];
        while let Some((cell, set)) = stack.pop() {
            if set.len == 1 {
                self.leaf_of[set.head[0] as usize] = cell;
                continue;
            }
            let extent = self.extent(&set);
            let side = self.cells[cell].side;
            let compress = extent < self.threshold_factor * side;
            let stuck = !compress && self.unit_extent_is_zero(&set);
            if compress || stuck {
                if stuck {
                    self.precision_reframes += 1;
                }
                let child = self.new_frame(&set, Some(cell), Some(self.cells[cell].part));
                self.cells[cell].children.push(child);
                stack.push((child, set));
                continue;
            }
            let level = self.cells[cell].level;
            if level > 2000 {
                return Err(Error::Internal("quadtree depth exceeded 2000 levels".into()));
            }
            let groups = self.split_cell(set, level);
            let first_child = self.cells.len();
            for (bits, g) in &groups {
                let half = side / 2.0;
                let corner = self.cells[cell]
                    .corner
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c + if bits & (1 << (self.dim - 1 - j)) != 0 { half } else { 0.0 })
                    .collect();
                let part = self.cells[cell].part;
                self.cells.push(Cell {
                    parent: Some(cell),
                    children: Vec::new(),
                    rule: CellRule::Split,
                    part,
                    level: level + 1,
                    corner,
                    side: half,
                    points: 0..0,
                    subcells: 0..0,
                });
                debug_assert!(g.len > 0);
            }
            self.cells[cell].children = (first_child..self.cells.len()).collect();
            for (i, (_, g)) in groups.into_iter().enumerate().rev() {
                stack.push((first_child + i, g));
            }
        }
        Ok(self.finish())
    }

    fn initial_lists(&mut self) -> PointSet {
        let mut set = PointSet { head: vec![NIL; self.dim], tail: vec![NIL; self.dim], len: self.n };
        let ids: Vec<u32> = (0..self.n as u32).collect();
        for j in 0..self.dim {
            let mut sorted = ids.clone();
            sorted.sort_by(|&a, &b| self.x(a, j).total_cmp(&self.x(b, j)).then(a.cmp(&b)));
            self.link(j, &sorted, &mut set);
        }
        set
    }

    fn link(&mut self, j: usize, sorted: &[u32], set: &mut PointSet) {
        for w in sorted.windows(2) {
            self.next[j][w[0] as usize] = w[1];
            self.prev[j][w[1] as usize] = w[0];
        }
        let (first, last) = (sorted[0], *sorted.last().unwrap());
        self.prev[j][first as usize] = NIL;
        self.next[j][last as usize] = NIL;
        set.head[j] = first;
        set.tail[j] = last;
    }

    fn extent(&self, set: &PointSet) -> f64 {
        (0..self.dim)
            .map(|j| self.x(set.tail[j], j) - self.x(set.head[j], j))
            .fold(0.0, f64::max)
    }

    fn unit_extent_is_zero(&self, set: &PointSet) -> bool {
        (0..self.dim).all(|j| self.u(set.tail[j], j) == self.u(set.head[j], j))
    }

    /// Opens a new simple sub-quadtree over `set` and returns its root cell.
    fn new_frame(&mut self, set: &PointSet, parent_cell: Option<usize>, parent_part: Option<usize>) -> usize {
        let lo: Vec<f64> = (0..self.dim).map(|j| self.x(set.head[j], j)).collect();
        let hi: Vec<f64> = (0..self.dim).map(|j| self.x(set.tail[j], j)).collect();
        let width = self.extent(set);
        let seed = match parent_part {
            None => mix_seed(self.params.seed, 0),
            Some(pp) => {
                self.part_children[pp] += 1;
                mix_seed(self.parts[pp].seed, self.part_children[pp])
            }
        };
        let shift: Vec<f64> = match &self.params.fixed_shift {
            Some(s) => s.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..self.dim).map(|_| rng.gen::<f64>()).collect()
            }
        };
        let corner: Vec<f64> = (0..self.dim)
            .map(|j| (lo[j] + hi[j]) / 2.0 - 1.5 * width + shift[j] * width)
            .collect();
        let side = 3.0 * width;
        let part = self.parts.len();
        let cell = self.cells.len();
        self.cells.push(Cell {
            parent: parent_cell,
            children: Vec::new(),
            rule: if parent_cell.is_none() { CellRule::Root } else { CellRule::Compressed },
            part,
            level: 0,
            corner: corner.clone(),
            side,
            points: 0..0,
            subcells: 0..0,
        });
        self.parts.push(Part { root: cell, parent: parent_part, corner, side, seed, cells: Vec::new() });
        self.part_children.push(0);

        let mut p = set.head[0];
        while p != NIL {
            for j in 0..self.dim {
                self.unit[p as usize * self.dim + j] =
                    unit_coordinate(self.x(p, j), self.parts[part].corner[j], side);
            }
            p = self.next[0][p as usize];
        }
        cell
    }

    /// Splits a cell's points into its nonempty halving children, keyed by
    /// child bits (axis 0 is the most significant bit).
    fn split_cell(&mut self, set: PointSet, level: u32) -> Vec<(usize, PointSet)> {
        let mut groups = vec![(0usize, set)];
        for j in 0..self.dim {
            let mut next = Vec::with_capacity(groups.len() * 2);
            for (bits, g) in groups {
                let (lo, hi) = self.split_axis(g, j, level);
                if let Some(lo) = lo {
                    next.push((bits << 1, lo));
                }
                if let Some(hi) = hi {
                    next.push((bits << 1 | 1, hi));
                }
            }
            groups = next;
        }
        groups
    }

    fn upper_half(&self, p: u32, j: usize, level: u32) -> bool {
        digit_fraction(self.u(p, j), level) >= 0.5
    }

    /// Splits on axis `j` at the cell midpoint. Walks the axis list from both
    /// ends so that only the smaller side is touched.
    fn split_axis(&mut self, set: PointSet, j: usize, level: u32) -> (Option<PointSet>, Option<PointSet>) {
        let mut fwd = set.head[j];
        let mut bwd = set.tail[j];
        let mut small: Vec<u32> = Vec::new();
        let small_is_low;
        loop {
            if self.upper_half(fwd, j, level) {
                small_is_low = true;
                break;
            }
            if !self.upper_half(bwd, j, level) {
                small_is_low = false;
                break;
            }
            small.push(fwd);
            small.push(bwd);
            fwd = self.next[j][fwd as usize];
            bwd = self.prev[j][bwd as usize];
        }
        // `small` interleaves both walks; keep only the side that ended up small.
        let small: Vec<u32> = if small_is_low {
            small.into_iter().step_by(2).collect()
        } else {
            small.into_iter().skip(1).step_by(2).collect::<Vec<_>>().into_iter().rev().collect()
        };
        if small.is_empty() {
            return if small_is_low { (None, Some(set)) } else { (Some(set), None) };
        }
        if small.len() == set.len {
            return if small_is_low { (Some(set), None) } else { (None, Some(set)) };
        }

        let mut big = set;
        let mut part = PointSet { head: vec![NIL; self.dim], tail: vec![NIL; self.dim], len: small.len() };
        big.len -= small.len();
        // Axis j: the small side is a contiguous prefix or suffix.
        if small_is_low {
            let cut = *small.last().unwrap();
            let rest = self.next[j][cut as usize];
            self.next[j][cut as usize] = NIL;
            self.prev[j][rest as usize] = NIL;
            part.head[j] = big.head[j];
            part.tail[j] = cut;
            big.head[j] = rest;
        } else {
            let cut = small[0];
            let rest = self.prev[j][cut as usize];
            self.prev[j][cut as usize] = NIL;
            self.next[j][rest as usize] = NIL;
            part.head[j] = cut;
            part.tail[j] = big.tail[j];
            big.tail[j] = rest;
        }
        // Other axes: unlink the small side point by point, relink it sorted.
        for k in (0..self.dim).filter(|&k| k != j) {
            for &p in &small {
                let (a, b) = (self.prev[k][p as usize], self.next[k][p as usize]);
                if a == NIL {
                    big.head[k] = b;
                } else {
                    self.next[k][a as usize] = b;
                }
                if b == NIL {
                    big.tail[k] = a;
                } else {
                    self.prev[k][b as usize] = a;
                }
            }
            let mut sorted = small.clone();
            sorted.sort_by(|&a, &b| self.x(a, k).total_cmp(&self.x(b, k)).then(a.cmp(&b)));
            self.link(k, &sorted, &mut part);
        }
        if small_is_low {
            (Some(part), Some(big))
        } else {
            (Some(big), Some(part))
        }
    }

    fn finish(mut self) -> Quadtree {
        // Depth-first leaf order and per-cell point ranges.
        let mut point_of_leaf = vec![u32::MAX; self.cells.len()];
        for (p, &leaf) in self.leaf_of.iter().enumerate() {
            point_of_leaf[leaf] = p as u32;
        }
        let mut order = Vec::with_capacity(self.n);
        let mut start = vec![0usize; self.cells.len()];
        let mut stack = vec![(0usize, false)];
        while let Some((c, done)) = stack.pop() {
            if done {
                self.cells[c].points = start[c]..order.len();
                continue;
            }
            start[c] = order.len();
            self.parts[self.cells[c].part].cells.push(c);
            if self.cells[c].is_leaf() {
                order.push(point_of_leaf[c]);
            }
            stack.push((c, true));
            for &ch in self.cells[c].children.iter().rev() {
                stack.push((ch, false));
            }
        }
        Quadtree {
            params: self.params.clone(),
            dim: self.dim,
            coords: self.coords.to_vec(),
            cells: self.cells,
            subcells: Vec::new(),
            parts: self.parts,
            order,
            leaf_of: self.leaf_of,
            precision_reframes: self.precision_reframes,
            containment_fallbacks: 0,
        }
    }
}

fn unit_coordinate(x: f64, corner: f64, side: f64) -> f64 {
    if side <= 0.0 {
        return 0.0;
    }
    let u = (x - corner) / side;
    u.clamp(0.0, 1.0 - f64::EPSILON / 2.0)
}

/// Fractional position of `u` inside its level-`level` grid interval.
/// Exact: scaling by a power of two and `fract` never round.
fn digit_fraction(u: f64, level: u32) -> f64 {
    let scaled = u * (level as f64).exp2();
    scaled - scaled.floor()
}

impl Quadtree {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_points(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn point(&self, p: usize) -> &[f64] {
        &self.coords[p * self.dim..(p + 1) * self.dim]
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn cell_points(&self, c: usize) -> &[u32] {
        &self.order[self.cells[c].points.clone()]
    }

    pub fn cell_subcells(&self, c: usize) -> Range<usize> {
        self.cells[c].subcells.clone()
    }

    /// Unit coordinate of point `p` on axis `j` in the frame of `part`.
    pub fn unit(&self, part: usize, p: usize, j: usize) -> f64 {
        let f = &self.parts[part];
        unit_coordinate(self.point(p)[j], f.corner[j], f.side)
    }

    /// Subcell grid key of point `p` inside cell `c`.
    pub fn subcell_key(&self, c: usize, p: usize) -> Vec<u32> {
        let cell = &self.cells[c];
        let scale = (self.params.subdivision_bits as f64).exp2();
        (0..self.dim)
            .map(|j| (digit_fraction(self.unit(cell.part, p, j), cell.level) * scale) as u32)
            .collect()
    }

    /// Net-point vertex id of subcell `s` (input points occupy `0..n`).
    pub fn net_vertex(&self, s: usize) -> usize {
        self.num_points() + s
    }

    /// Smallest subcell containing point `p`.
    pub fn point_subcell(&self, p: usize) -> usize {
        self.cells[self.leaf_of[p]].subcells.start
    }

    /// Cells in postorder (children before parents), across all parts.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.cells.len());
        let mut stack = vec![(0usize, false)];
        while let Some((c, done)) = stack.pop() {
            if done {
                out.push(c);
                continue;
            }
            stack.push((c, true));
            for &ch in self.cells[c].children.iter().rev() {
                stack.push((ch, false));
            }
        }
        out
    }

    /// Longest run of single-child cells inside one simple sub-quadtree.
    pub fn max_single_child_chain(&self) -> usize {
        let mut best = 0;
        let mut run = vec![0usize; self.cells.len()];
        for c in self.postorder() {
            let cell = &self.cells[c];
            if cell.children.len() == 1 {
                let ch = cell.children[0];
                run[c] = if self.cells[ch].part == cell.part { 1 + run[ch] } else { 1 };
                best = best.max(run[c]);
            }
        }
        best
    }

    pub fn num_compressions(&self) -> usize {
        self.parts.len() - 1
    }

    /// One line per cell, then one line per subcell.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for (id, c) in self.cells.iter().enumerate() {
            let parent = c.parent.map_or("-".to_string(), |p| p.to_string());
            let _ = write!(out, "{id} {parent} {:e}", c.side);
            for x in &c.corner {
                let _ = write!(out, " {x:e}");
            }
            let mut flags = String::new();
            if c.is_part_root() {
                flags.push('S');
            }
            if c.is_leaf() {
                flags.push('L');
            }
            if flags.is_empty() {
                flags.push('-');
            }
            let _ = writeln!(out, " {} {} {}", c.num_points(), c.rule.tag(), flags);
        }
        for (s, sc) in self.subcells.iter().enumerate() {
            let _ = write!(out, "{}", sc.cell);
            for x in &sc.center {
                let _ = write!(out, " {x:e}");
            }
            let parent = sc.parent.map_or("-".to_string(), |p| self.net_vertex(p).to_string());
            let _ = writeln!(out, " {} {}", self.net_vertex(s), parent);
        }
        out
    }
}

/// Materializes the nonempty subcells of every cell, their net points and
/// parent net-point links.
pub fn subdivide_and_net(tree: &mut Quadtree) {
    let eps0 = tree.params.eps0;
    let mut subcells: Vec<Subcell> = Vec::new();
    for c in 0..tree.cells.len() {
        let mut keyed: Vec<(Vec<u32>, u32)> =
            tree.cell_points(c).iter().map(|&p| (tree.subcell_key(c, p as usize), p)).collect();
        keyed.sort();
        let start = subcells.len();
        let cell = &tree.cells[c];
        let side = eps0 * cell.side;
        for (key, p) in keyed {
            let fresh = subcells.len() == start || subcells.last().is_none_or(|l| l.key != key);
            match fresh {
                false => subcells.last_mut().unwrap().points.push(p),
                true => {
                    let center = cell
                        .corner
                        .iter()
                        .zip(&key)
                        .map(|(c0, &k)| c0 + (k as f64 + 0.5) * side)
                        .collect();
                    subcells.push(Subcell { cell: c, key, center, side, points: vec![p], parent: None });
                }
            }
        }
        tree.cells[c].subcells = start..subcells.len();
    }
    tree.subcells = subcells;

    let mut fallbacks = 0;
    for s in 0..tree.subcells.len() {
        let c = tree.subcells[s].cell;
        let Some(pc) = tree.cells[c].parent else { continue };
        let parent = if tree.cells[c].rule == CellRule::Split {
            let rep = tree.subcells[s].points[0] as usize;
            tree.find_subcell(pc, &tree.subcell_key(pc, rep))
        } else {
            tree.subcell_containing(pc, &tree.subcells[s].center).or_else(|| {
                fallbacks += 1;
                let rep = tree.subcells[s].points[0] as usize;
                tree.find_subcell(pc, &tree.subcell_key(pc, rep))
            })
        };
        tree.subcells[s].parent = parent;
        debug_assert!(parent.is_some());
    }
    tree.containment_fallbacks = fallbacks;
}

impl Quadtree {
    fn find_subcell(&self, c: usize, key: &[u32]) -> Option<usize> {
        let r = self.cells[c].subcells.clone();
        self.subcells[r.clone()]
            .binary_search_by(|s| s.key.as_slice().cmp(key))
            .ok()
            .map(|i| r.start + i)
    }

    /// Nonempty subcell of cell `c` whose region contains position `x`.
    fn subcell_containing(&self, c: usize, x: &[f64]) -> Option<usize> {
        let cell = &self.cells[c];
        let f = &self.parts[cell.part];
        let scale = (self.params.subdivision_bits as f64).exp2();
        let level_scale = (cell.level as f64).exp2();
        let mut key = Vec::with_capacity(self.dim);
        for j in 0..self.dim {
            let u = (x[j] - f.corner[j]) / f.side;
            let cell_index = (cell.corner[j] - f.corner[j]) / f.side * level_scale;
            let local = u * level_scale - cell_index.round();
            if !(0.0..1.0).contains(&local) {
                return None;
            }
            key.push((local * scale) as u32);
        }
        self.find_subcell(c, &key)
    }
}

/// First property violation found.
#[derive(Debug, Clone, PartialEq)]
pub enum Witness {
    CellCount { cells: usize, bound: f64 },
    CellMoat { cell: usize, point: usize, axis: usize, distance: f64, required: f64 },
    SubcellMoat { cell: usize, point: usize, axis: usize, distance: f64, required: f64 },
    NotContained { cell: usize, parent: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport {
    pub cells: usize,
    pub cell_bound: f64,
    pub count_ok: bool,
    pub moat_violation: Option<Witness>,
    pub containment_violation: Option<Witness>,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.count_ok && self.moat_violation.is_none() && self.containment_violation.is_none()
    }

    pub fn first_witness(&self) -> Option<Witness> {
        if !self.count_ok {
            return Some(Witness::CellCount { cells: self.cells, bound: self.cell_bound });
        }
        self.moat_violation.clone().or_else(|| self.containment_violation.clone())
    }
}

/// Checks the cell-count bound, the moat property for every (cell, point)
/// and (subcell, point) pair, and containment of compressed children in a
/// single parent subcell.
pub fn check_properties(tree: &Quadtree) -> PropertyReport {
    let n = tree.num_points();
    let nf = n as f64;
    let cell_bound = CELL_COUNT_CONSTANT * nf * tree.params.log_ratio().max(1.0);
    let count_ok = n <= 1 || (tree.num_cells() as f64) <= cell_bound;
    let moat = nf.powf(tree.params.moat_exponent);
    let eps0 = tree.params.eps0;
    let scale = (tree.params.subdivision_bits as f64).exp2();

    let mut moat_violation = None;
    'cells: for c in 0..tree.cells.len() {
        let cell = &tree.cells[c];
        if n <= 1 {
            break;
        }
        for &p in tree.cell_points(c) {
            for j in 0..tree.dim {
                let fr = digit_fraction(tree.unit(cell.part, p as usize, j), cell.level);
                let d_cell = cell.side * fr.min(1.0 - fr);
                let need = cell.side / moat;
                if d_cell < need {
                    moat_violation = Some(Witness::CellMoat {
                        cell: c,
                        point: p as usize,
                        axis: j,
                        distance: d_cell,
                        required: need,
                    });
                    break 'cells;
                }
                let g = fr * scale;
                let g = g - g.floor();
                let d_sub = eps0 * cell.side * g.min(1.0 - g);
                let need = eps0 * cell.side / moat;
                if d_sub < need {
                    moat_violation = Some(Witness::SubcellMoat {
                        cell: c,
                        point: p as usize,
                        axis: j,
                        distance: d_sub,
                        required: need,
                    });
                    break 'cells;
                }
            }
        }
    }

    let mut containment_violation = None;
    for (c, cell) in tree.cells.iter().enumerate() {
        if cell.rule != CellRule::Compressed {
            continue;
        }
        let pc = cell.parent.expect("compressed cell has a parent");
        let parent = &tree.cells[pc];
        let f = &tree.parts[parent.part];
        let level_scale = (parent.level as f64).exp2();
        let inside = (0..tree.dim).all(|j| {
            let base = (parent.corner[j] - f.corner[j]) / f.side * level_scale;
            let lo = ((cell.corner[j] - f.corner[j]) / f.side * level_scale - base.round()) * scale;
            let hi = ((cell.corner[j] + cell.side - f.corner[j]) / f.side * level_scale - base.round()) * scale;
            lo >= 0.0 && hi <= scale && hi <= lo.floor() + 1.0
        });
        if !inside {
            containment_violation = Some(Witness::NotContained { cell: c, parent: pc });
            break;
        }
    }

    PropertyReport {
        cells: tree.num_cells(),
        cell_bound,
        count_ok,
        moat_violation,
        containment_violation,
    }
}

/// Ordered simple sub-quadtrees: each part appears before its ancestors.
pub fn simple_subquadtrees(tree: &Quadtree) -> Vec<usize> {
    (0..tree.parts.len()).rev().collect()
}

/// Result of merging exactly coincident points.
#[derive(Debug, Clone)]
pub struct Collapsed {
    /// One representative per distinct location, with summed supply.
    pub instance: TransportInstance,
    /// Original indices behind each representative.
    pub groups: Vec<Vec<usize>>,
}

impl Collapsed {
    pub fn has_duplicates(&self) -> bool {
        self.groups.iter().any(|g| g.len() > 1)
    }
}

/// Merges coincident points into representatives (in order of first
/// occurrence) carrying the summed supply.
pub fn collapse_coincident(instance: &TransportInstance) -> Collapsed {
    let n = instance.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| {
        instance
            .point(a)
            .iter()
            .zip(instance.point(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rep_of = vec![usize::MAX; n];
    for w in 0..n {
        let i = idx[w];
        if w > 0 && instance.point(idx[w - 1]) == instance.point(i) {
            rep_of[i] = rep_of[idx[w - 1]];
        } else {
            rep_of[i] = i;
        }
    }
    let mut slot = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let r = rep_of[i];
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    let dim = instance.dim();
    let mut coords = Vec::with_capacity(groups.len() * dim);
    let mut supplies = Vec::with_capacity(groups.len());
    for g in &groups {
        coords.extend_from_slice(instance.point(g[0]));
        supplies.push(crate::instance::compensated_sum(g.iter().map(|&i| instance.supply(i))));
    }
    Collapsed { instance: TransportInstance::from_parts_unchecked(dim, coords, supplies), groups }
}
