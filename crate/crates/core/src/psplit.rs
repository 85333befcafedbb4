//! Prefix split trees: ordered weighted splay trees with `merge` and
//! `prefix_split`.
//!
//! All trees live in one [`Forest`] arena so that nodes can move between
//! trees in O(1) during merges. A [`PrefixSplitTree`] is only a root handle;
//! it is deliberately neither `Copy` nor `Clone` so two handles never alias
//! the same structure.
//!
//! Every node stores its own weight `w(x)` and the subtree sum `W(x)`.
//! Rotations keep `W` current, so all operations run in amortized
//! `O(log m)` time.

use crate::error::{Error, Result};

const NIL: u32 = u32::MAX;

/// Relative tolerance under which a prefix boundary is snapped to a node
/// boundary instead of splitting the node.
pub const SPLIT_SNAP: f64 = 1e-12;

/// Stable handle to a live node. Splays move nodes but never invalidate
/// their handles; deleting or splitting a node does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    index: u32,
    generation: u32,
}

#[derive(Debug, Clone)]
struct Node<L> {
    label: L,
    weight: f64,
    sum: f64,
    left: u32,
    right: u32,
    parent: u32,
    generation: u32,
    live: bool,
}

/// Root handle for one tree in a [`Forest`].
#[derive(Debug)]
pub struct PrefixSplitTree {
    root: u32,
}

impl Default for PrefixSplitTree {
    fn default() -> Self {
        Self::new()
    }
}

impl PrefixSplitTree {
    pub fn new() -> Self {
        PrefixSplitTree { root: NIL }
    }

    pub fn is_empty(&self) -> bool {
        self.root == NIL
    }
}

/// Arena owning the nodes of any number of prefix split trees.
#[derive(Debug, Clone)]
pub struct Forest<L> {
    nodes: Vec<Node<L>>,
    free: Vec<u32>,
    audit: bool,
}

impl<L> Default for Forest<L> {
    fn default() -> Self {
        Forest { nodes: Vec::new(), free: Vec::new(), audit: false }
    }
}

impl<L: Clone> Forest<L> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enables a full `W` recomputation after every mutating operation.
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
    }

    pub fn live_nodes(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    pub fn total_weight(&self, tree: &PrefixSplitTree) -> f64 {
        if tree.root == NIL {
            0.0
        } else {
            self.nodes[tree.root as usize].sum
        }
    }

    pub fn label(&self, x: NodeId) -> Result<&L> {
        self.check(x)?;
        Ok(&self.nodes[x.index as usize].label)
    }

    pub fn weight(&self, x: NodeId) -> Result<f64> {
        self.check(x)?;
        Ok(self.nodes[x.index as usize].weight)
    }

    /// Appends a node after the current last node and splays it to the root.
    pub fn insert(&mut self, tree: &mut PrefixSplitTree, label: L, weight: f64) -> Result<NodeId> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::InvalidParameter(format!("node weight {weight}")));
        }
        let x = self.alloc(label, weight);
        if tree.root == NIL {
            tree.root = x;
        } else {
            let mut r = tree.root;
            while self.nodes[r as usize].right != NIL {
                r = self.nodes[r as usize].right;
            }
            self.nodes[r as usize].right = x;
            self.nodes[x as usize].parent = r;
            let mut a = r;
            while a != NIL {
                self.nodes[a as usize].sum += weight;
                a = self.nodes[a as usize].parent;
            }
            self.splay(x);
            tree.root = x;
        }
        self.audit_tree(tree);
        Ok(self.id(x))
    }

    pub fn delete(&mut self, tree: &mut PrefixSplitTree, x: NodeId) -> Result<()> {
        self.check_member(tree, x)?;
        let xi = x.index;
        self.splay(xi);
        let (l, r) = (self.nodes[xi as usize].left, self.nodes[xi as usize].right);
        if l != NIL {
            self.nodes[l as usize].parent = NIL;
        }
        if r != NIL {
            self.nodes[r as usize].parent = NIL;
        }
        self.release(xi);
        tree.root = self.join(l, r);
        self.audit_tree(tree);
        Ok(())
    }

    pub fn update_weight(&mut self, tree: &mut PrefixSplitTree, x: NodeId, weight: f64) -> Result<()> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(Error::InvalidParameter(format!("node weight {weight}")));
        }
        self.check_member(tree, x)?;
        self.splay(x.index);
        tree.root = x.index;
        self.nodes[x.index as usize].weight = weight;
        self.pull(x.index);
        self.audit_tree(tree);
        Ok(())
    }

    /// Concatenates `second` after `first`; `first` holds the result.
    pub fn merge(&mut self, first: &mut PrefixSplitTree, second: PrefixSplitTree) -> Result<()> {
        if first.root != NIL && second.root != NIL && self.root_of(second.root) == self.root_of(first.root) {
            return Err(Error::AliasedTrees);
        }
        first.root = self.join(first.root, second.root);
        self.audit_tree(first);
        Ok(())
    }

    /// Splits off the maximal in-order prefix of weight at most `t`, splitting
    /// the next node so that the returned tree weighs exactly `t`.
    pub fn prefix_split(&mut self, tree: &mut PrefixSplitTree, t: f64) -> Result<PrefixSplitTree> {
        let total = self.total_weight(tree);
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("prefix target {t} must be positive")));
        }
        let tol = SPLIT_SNAP * total;
        if t > total + tol {
            return Err(Error::InvalidParameter(format!("prefix target {t} exceeds tree weight {total}")));
        }
        if t >= total - tol {
            return Ok(std::mem::take(tree));
        }

        // First node whose inclusive prefix sum exceeds t (beyond the snap band).
        let mut c = tree.root;
        let mut acc = 0.0;
        let y = loop {
            let node = &self.nodes[c as usize];
            let lw = self.sum_of(node.left);
            if acc + lw + node.weight > t + tol {
                if node.left != NIL && acc + lw > t + tol {
                    c = node.left;
                } else {
                    break c;
                }
            } else {
                acc += lw + node.weight;
                c = node.right;
                debug_assert!(c != NIL);
            }
        };
        self.splay(y);
        let x = self.nodes[y as usize].left;
        let before = self.sum_of(x);
        let rem = t - before;
        if x != NIL {
            self.nodes[x as usize].parent = NIL;
        }
        self.nodes[y as usize].left = NIL;
        self.pull(y);

        if rem <= tol {
            tree.root = y;
            let out = PrefixSplitTree { root: x };
            self.audit_tree(&out);
            self.audit_tree(tree);
            return Ok(out);
        }

        let label = self.nodes[y as usize].label.clone();
        let yw = self.nodes[y as usize].weight;
        let r = self.nodes[y as usize].right;
        if r != NIL {
            self.nodes[r as usize].parent = NIL;
        }
        self.release(y);

        let y1 = self.alloc(label.clone(), rem);
        self.nodes[y1 as usize].left = x;
        if x != NIL {
            self.nodes[x as usize].parent = y1;
        }
        self.pull(y1);

        let y2 = self.alloc(label, yw - rem);
        self.nodes[y2 as usize].right = r;
        if r != NIL {
            self.nodes[r as usize].parent = y2;
        }
        self.pull(y2);

        tree.root = y2;
        let out = PrefixSplitTree { root: y1 };
        self.audit_tree(&out);
        self.audit_tree(tree);
        Ok(out)
    }

    /// First node in order, splayed to the root.
    pub fn first(&mut self, tree: &mut PrefixSplitTree) -> Option<NodeId> {
        if tree.root == NIL {
            return None;
        }
        let mut c = tree.root;
        while self.nodes[c as usize].left != NIL {
            c = self.nodes[c as usize].left;
        }
        self.splay(c);
        tree.root = c;
        Some(self.id(c))
    }

    /// In-order `(label, weight)` sequence. Does not splay.
    pub fn in_order(&self, tree: &PrefixSplitTree) -> Vec<(L, f64)> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        let mut c = tree.root;
        while c != NIL || !stack.is_empty() {
            while c != NIL {
                stack.push(c);
                c = self.nodes[c as usize].left;
            }
            let n = stack.pop().unwrap();
            out.push((self.nodes[n as usize].label.clone(), self.nodes[n as usize].weight));
            c = self.nodes[n as usize].right;
        }
        out
    }

    /// Empties a tree, releasing all of its nodes.
    pub fn clear(&mut self, tree: &mut PrefixSplitTree) {
        let mut stack = vec![tree.root];
        while let Some(c) = stack.pop() {
            if c == NIL {
                continue;
            }
            stack.push(self.nodes[c as usize].left);
            stack.push(self.nodes[c as usize].right);
            self.release(c);
        }
        tree.root = NIL;
    }

    /// Recomputes every subtree sum and compares against the stored `W`.
    pub fn audit(&self, tree: &PrefixSplitTree) -> bool {
        fn walk<L>(f: &Forest<L>, c: u32, parent: u32) -> Option<f64> {
            if c == NIL {
                return Some(0.0);
            }
            let n = &f.nodes[c as usize];
            if !n.live || n.parent != parent || !(n.weight > 0.0) {
                return None;
            }
            let s = n.weight + walk(f, n.left, c)? + walk(f, n.right, c)?;
            ((s - n.sum).abs() <= 1e-9 * s.abs().max(1e-300)).then_some(n.sum)
        }
        walk(self, tree.root, NIL).is_some()
    }

    fn audit_tree(&self, tree: &PrefixSplitTree) {
        if self.audit {
            assert!(self.audit(tree), "prefix split tree W audit failed");
        }
    }

    fn id(&self, x: u32) -> NodeId {
        NodeId { index: x, generation: self.nodes[x as usize].generation }
    }

    fn check(&self, x: NodeId) -> Result<()> {
        match self.nodes.get(x.index as usize) {
            Some(n) if n.live && n.generation == x.generation => Ok(()),
            _ => Err(Error::StaleHandle),
        }
    }

    fn check_member(&self, tree: &PrefixSplitTree, x: NodeId) -> Result<()> {
        self.check(x)?;
        if tree.root == NIL || self.root_of(x.index) != tree.root {
            return Err(Error::StaleHandle);
        }
        Ok(())
    }

    fn root_of(&self, mut x: u32) -> u32 {
        while self.nodes[x as usize].parent != NIL {
            x = self.nodes[x as usize].parent;
        }
        x
    }

    fn alloc(&mut self, label: L, weight: f64) -> u32 {
        if let Some(i) = self.free.pop() {
            let n = &mut self.nodes[i as usize];
            n.label = label;
            n.weight = weight;
            n.sum = weight;
            n.left = NIL;
            n.right = NIL;
            n.parent = NIL;
            n.live = true;
            i
        } else {
            self.nodes.push(Node {
                label,
                weight,
                sum: weight,
                left: NIL,
                right: NIL,
                parent: NIL,
                generation: 0,
                live: true,
            });
            (self.nodes.len() - 1) as u32
        }
    }

    fn release(&mut self, x: u32) {
        let n = &mut self.nodes[x as usize];
        n.live = false;
        n.generation = n.generation.wrapping_add(1);
        n.left = NIL;
        n.right = NIL;
        n.parent = NIL;
        self.free.push(x);
    }

    fn sum_of(&self, x: u32) -> f64 {
        if x == NIL {
            0.0
        } else {
            self.nodes[x as usize].sum
        }
    }

    fn pull(&mut self, x: u32) {
        let n = &self.nodes[x as usize];
        let s = n.weight + self.sum_of(n.left) + self.sum_of(n.right);
        self.nodes[x as usize].sum = s;
    }

    /// Concatenates two detached trees given by their roots.
    fn join(&mut self, l: u32, r: u32) -> u32 {
        if l == NIL {
            return r;
        }
        if r == NIL {
            return l;
        }
        let mut m = l;
        while self.nodes[m as usize].right != NIL {
            m = self.nodes[m as usize].right;
        }
        self.splay(m);
        self.nodes[m as usize].right = r;
        self.nodes[r as usize].parent = m;
        self.pull(m);
        m
    }

    fn rotate(&mut self, x: u32) {
        let p = self.nodes[x as usize].parent;
        let g = self.nodes[p as usize].parent;
        if self.nodes[p as usize].left == x {
            let b = self.nodes[x as usize].right;
            self.nodes[p as usize].left = b;
            if b != NIL {
                self.nodes[b as usize].parent = p;
            }
            self.nodes[x as usize].right = p;
        } else {
            let b = self.nodes[x as usize].left;
            self.nodes[p as usize].right = b;
            if b != NIL {
                self.nodes[b as usize].parent = p;
            }
            self.nodes[x as usize].left = p;
        }
        self.nodes[p as usize].parent = x;
        self.nodes[x as usize].parent = g;
        if g != NIL {
            if self.nodes[g as usize].left == p {
                self.nodes[g as usize].left = x;
            } else {
                self.nodes[g as usize].right = x;
            }
        }
        self.pull(p);
        self.pull(x);
    }

    fn splay(&mut self, x: u32) {
        loop {
            let p = self.nodes[x as usize].parent;
            if p == NIL {
                return;
            }
            let g = self.nodes[p as usize].parent;
            if g == NIL {
                self.rotate(x);
                return;
            }
            let zig_zig = (self.nodes[g as usize].left == p) == (self.nodes[p as usize].left == x);
            if zig_zig {
                self.rotate(p);
            } else {
                self.rotate(x);
            }
            self.rotate(x);
        }
    }
}
