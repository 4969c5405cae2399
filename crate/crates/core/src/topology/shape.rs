use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{internal_prefix, LeafSet, TreeTopology};
use crate::{seeds, Result};

/// Link delays of generated trees are drawn from this interval (ms).
pub const DELAY_RANGE_MS: (f64, f64) = (100.0, 500.0);

/// Structure-only mutable tree. Nodes `0..l` are the leaves (by leaf
/// position); internal nodes are appended after them. Removed nodes stay in
/// the arrays with `alive == false`.
#[derive(Clone, Debug)]
pub struct Shape {
    l: usize,
    parent: Vec<Option<usize>>,
    alive: Vec<bool>,
    root: usize,
}

/// Where a pruned subtree is reattached.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Attach {
    /// As an extra child of an internal node.
    Child(usize),
    /// By subdividing the link above a node.
    Edge(usize),
    /// Under a new root placed above the current root.
    AboveRoot,
}

impl Shape {
    /// All leaves directly under the root.
    pub fn star(l: usize) -> Shape {
        let mut parent = vec![Some(l); l];
        parent.push(None);
        Shape {
            l,
            parent,
            alive: vec![true; l + 1],
            root: l,
        }
    }

    pub fn from_tree(tree: &TreeTopology) -> Shape {
        let l = tree.leaf_set().len();
        let n = tree.node_count();
        // Leaves map to their positions, internal nodes are numbered after them.
        let mut map = vec![0usize; n];
        let mut next = l;
        for v in 0..n {
            match tree.leaf_position(v) {
                Some(p) => map[v] = p,
                None => {
                    map[v] = next;
                    next += 1;
                }
            }
        }
        let mut parent = vec![None; n];
        for v in 0..n {
            parent[map[v]] = tree.parent(v).map(|p| map[p]);
        }
        let mut shape = Shape {
            l,
            parent,
            alive: vec![true; n],
            root: map[tree.root()],
        };
        shape.contract_unary();
        shape
    }

    pub fn leaf_count(&self) -> usize {
        self.l
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn is_alive(&self, v: usize) -> bool {
        self.alive[v]
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        v < self.l
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.parent.len()).filter(move |&v| self.alive[v])
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes().filter(move |&v| v >= self.l)
    }

    pub fn internal_count(&self) -> usize {
        self.internal_nodes().count()
    }

    pub fn children(&self, v: usize) -> Vec<usize> {
        self.nodes().filter(|&c| self.parent[c] == Some(v)).collect()
    }

    /// True if `v` lies in the subtree rooted at `u` (including `u`).
    pub fn in_subtree(&self, v: usize, u: usize) -> bool {
        let mut cur = Some(v);
        while let Some(x) = cur {
            if x == u {
                return true;
            }
            cur = self.parent[x];
        }
        false
    }

    fn push(&mut self, parent: Option<usize>) -> usize {
        self.parent.push(parent);
        self.alive.push(true);
        self.parent.len() - 1
    }

    fn kill(&mut self, v: usize) {
        self.alive[v] = false;
        self.parent[v] = None;
    }

    /// Drop removed internal nodes and renumber the live ones densely after
    /// the leaves. Structure is unchanged.
    pub fn compact(&mut self) {
        let n = self.parent.len();
        let mut map = vec![usize::MAX; n];
        let mut next = self.l;
        for v in 0..n {
            if v < self.l {
                map[v] = v;
            } else if self.alive[v] {
                map[v] = next;
                next += 1;
            }
        }
        let mut parent = vec![None; next];
        let mut alive = vec![false; next];
        for v in 0..n {
            if map[v] != usize::MAX {
                parent[map[v]] = self.parent[v].map(|p| map[p]);
                alive[map[v]] = self.alive[v];
            }
        }
        self.root = map[self.root];
        self.parent = parent;
        self.alive = alive;
    }

    /// Remove internal nodes with a single child (including a unary root).
    pub fn contract_unary(&mut self) {
        loop {
            let unary = self.internal_nodes().find(|&v| self.children(v).len() == 1);
            let Some(v) = unary else { break };
            let c = self.children(v)[0];
            self.parent[c] = self.parent[v];
            if v == self.root {
                self.root = c;
            }
            self.kill(v);
        }
    }

    /// Every internal node has at least two children and every leaf is attached.
    pub fn is_valid(&self) -> bool {
        if self.root < self.l || !self.alive[self.root] || self.parent[self.root].is_some() {
            return false;
        }
        (0..self.l).all(|v| self.alive[v] && self.in_subtree(v, self.root))
            && self.internal_nodes().all(|v| self.children(v).len() >= 2)
            && self.nodes().all(|v| self.in_subtree(v, self.root))
    }

    /// Contract the link above internal node `v` (children move to its parent).
    pub fn contract(&self, v: usize) -> Option<Shape> {
        if v < self.l || !self.alive[v] || v == self.root {
            return None;
        }
        let mut s = self.clone();
        let p = s.parent[v];
        for c in s.children(v) {
            s.parent[c] = p;
        }
        s.kill(v);
        Some(s)
    }

    /// Move `group` (a proper subset of at least two children of `v`) under a
    /// new internal child of `v`.
    pub fn split(&self, v: usize, group: &[usize]) -> Option<Shape> {
        if v < self.l || !self.alive[v] {
            return None;
        }
        let kids = self.children(v);
        if group.len() < 2
            || group.len() >= kids.len()
            || !group.iter().all(|g| self.parent[*g] == Some(v))
        {
            return None;
        }
        let mut s = self.clone();
        let w = s.push(Some(v));
        for &g in group {
            s.parent[g] = Some(w);
        }
        Some(s)
    }

    /// Prune the subtree at `u` and reattach it at `target`; unary nodes left
    /// behind are contracted. Returns `None` for invalid or no-op moves.
    pub fn regraft(&self, u: usize, target: Attach) -> Option<Shape> {
        if !self.alive[u] || u == self.root {
            return None;
        }
        let tnode = match target {
            Attach::Child(v) => Some(v),
            Attach::Edge(x) => Some(x),
            Attach::AboveRoot => None,
        };
        if let Some(t) = tnode {
            if !self.alive[t] || self.in_subtree(t, u) {
                return None;
            }
        }
        if let Attach::Child(v) = target {
            if v < self.l || self.parent[u] == Some(v) {
                return None;
            }
        }
        if let Attach::Edge(x) = target {
            if x == self.root {
                return None;
            }
        }
        let mut s = self.clone();
        let p = s.parent[u].expect("non-root");
        s.parent[u] = None;
        let remaining = s.children(p);
        if remaining.len() == 1 {
            let c = remaining[0];
            if tnode == Some(p) {
                // Attaching to a node that is about to be contracted.
                if matches!(target, Attach::Child(_)) {
                    return None;
                }
            }
            s.parent[c] = s.parent[p];
            if p == s.root {
                s.root = c;
            }
            s.kill(p);
            if tnode == Some(p) {
                return None;
            }
        }
        match target {
            Attach::Child(v) => s.parent[u] = Some(v),
            Attach::Edge(x) => {
                let px = s.parent[x]?;
                let w = s.push(Some(px));
                s.parent[x] = Some(w);
                s.parent[u] = Some(w);
            }
            Attach::AboveRoot => {
                let old = s.root;
                let w = s.push(None);
                s.parent[old] = Some(w);
                s.parent[u] = Some(w);
                s.root = w;
            }
        }
        s.contract_unary();
        s.is_valid().then_some(s)
    }

    /// Canonical encoding; equals [`TreeTopology::canonical_form`] of the
    /// corresponding tree.
    pub fn canonical(&self, leaf_set: &LeafSet) -> String {
        let n = self.parent.len();
        let mut kids = vec![Vec::new(); n];
        for v in self.nodes() {
            if let Some(p) = self.parent[v] {
                kids[p].push(v);
            }
        }
        let mut min_leaf = vec![usize::MAX; n];
        fn fill(v: usize, kids: &[Vec<usize>], l: usize, min_leaf: &mut [usize]) -> usize {
            let m = if v < l {
                v
            } else {
                kids[v]
                    .iter()
                    .map(|&c| fill(c, kids, l, min_leaf))
                    .min()
                    .unwrap_or(usize::MAX)
            };
            min_leaf[v] = m;
            m
        }
        fill(self.root, &kids, self.l, &mut min_leaf);
        for k in kids.iter_mut() {
            k.sort_by_key(|&c| min_leaf[c]);
        }
        fn enc(v: usize, kids: &[Vec<usize>], l: usize, labels: &[String], out: &mut String) {
            let mut v = v;
            while kids[v].len() == 1 {
                v = kids[v][0];
            }
            if v < l {
                out.push_str(&labels[v]);
                return;
            }
            out.push('(');
            for (i, &c) in kids[v].iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                enc(c, kids, l, labels, out);
            }
            out.push(')');
        }
        let mut out = String::new();
        enc(self.root, &kids, self.l, leaf_set.labels(), &mut out);
        out
    }

    /// Materialize with the given per-node link delays (`delay(v)` is called
    /// for every non-root node in ascending node order).
    pub fn to_tree_with(
        &self,
        leaf_set: &LeafSet,
        mut delay: impl FnMut(usize) -> f64,
    ) -> Result<TreeTopology> {
        debug_assert_eq!(leaf_set.len(), self.l);
        let live: Vec<usize> = self.nodes().collect();
        let mut map = vec![usize::MAX; self.parent.len()];
        for (i, &v) in live.iter().enumerate() {
            map[v] = i;
        }
        let mut names = Vec::with_capacity(live.len());
        let mut parent = Vec::with_capacity(live.len());
        let mut delays = Vec::with_capacity(live.len());
        let mut internal = 0;
        let prefix = internal_prefix(leaf_set);
        for &v in &live {
            if v < self.l {
                names.push(leaf_set.labels()[v].clone());
            } else if v == self.root {
                names.push(format!("{prefix}s"));
            } else {
                internal += 1;
                names.push(format!("{prefix}n{internal}"));
            }
            parent.push(self.parent[v].map(|p| map[p]));
            delays.push(if v == self.root { 0.0 } else { delay(v) });
        }
        TreeTopology::from_parts(names, parent, delays, map[self.root])
    }

    /// Materialize with every link delay set to 1.
    pub fn to_tree(&self, leaf_set: &LeafSet) -> Result<TreeTopology> {
        self.to_tree_with(leaf_set, |_| 1.0)
    }

    /// All trees one leaf larger obtained by inserting leaf `leaf` (a node
    /// index `< l` not yet attached). Each tree over `leaf + 1` leaves arises
    /// exactly once from its parent tree.
    pub(crate) fn insertions(&self, leaf: usize) -> Vec<Shape> {
        let mut out = Vec::new();
        for v in self.internal_nodes().collect::<Vec<_>>() {
            let mut s = self.clone();
            s.alive[leaf] = true;
            s.parent[leaf] = Some(v);
            out.push(s);
        }
        for v in self.nodes().filter(|&v| v != self.root).collect::<Vec<_>>() {
            let mut s = self.clone();
            let w = s.push(self.parent[v]);
            s.parent[v] = Some(w);
            s.alive[leaf] = true;
            s.parent[leaf] = Some(w);
            out.push(s);
        }
        let mut s = self.clone();
        let w = s.push(None);
        s.parent[self.root] = Some(w);
        s.root = w;
        s.alive[leaf] = true;
        s.parent[leaf] = Some(w);
        out.push(s);
        out
    }

    /// Cherry over leaves 0 and 1 with leaves `2..l` not yet attached.
    pub(crate) fn seed_pair(l: usize) -> Shape {
        let mut parent = vec![None; l];
        parent[0] = Some(l);
        parent[1] = Some(l);
        parent.push(None);
        let mut alive = vec![false; l + 1];
        alive[0] = true;
        alive[1] = true;
        alive[l] = true;
        Shape {
            l,
            parent,
            alive,
            root: l,
        }
    }

    /// Every tree reachable by one contraction, split, or regraft.
    pub fn neighbors(&self) -> Vec<Shape> {
        let mut out = Vec::new();
        let internal: Vec<usize> = self.internal_nodes().collect();
        for &v in &internal {
            if let Some(s) = self.contract(v) {
                out.push(s);
            }
            let kids = self.children(v);
            let c = kids.len();
            if c >= 3 && c <= 16 {
                for mask in 1u32..(1 << c) - 1 {
                    if mask.count_ones() < 2 {
                        continue;
                    }
                    let group: Vec<usize> = (0..c)
                        .filter(|b| mask & (1 << b) != 0)
                        .map(|b| kids[b])
                        .collect();
                    if let Some(s) = self.split(v, &group) {
                        out.push(s);
                    }
                }
            }
        }
        let nodes: Vec<usize> = self.nodes().collect();
        for &u in &nodes {
            if u == self.root {
                continue;
            }
            for &v in &internal {
                if let Some(s) = self.regraft(u, Attach::Child(v)) {
                    out.push(s);
                }
            }
            for &x in &nodes {
                if let Some(s) = self.regraft(u, Attach::Edge(x)) {
                    out.push(s);
                }
            }
            if let Some(s) = self.regraft(u, Attach::AboveRoot) {
                out.push(s);
            }
        }
        out
    }
}

/// Shape parameters for random tree generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ShapeParams {
    pub max_fanout: usize,
}

impl Default for ShapeParams {
    fn default() -> Self {
        ShapeParams { max_fanout: 3 }
    }
}

/// Random multifurcating tree over leaves `v1..=vl` with uniform link delays
/// in [`DELAY_RANGE_MS`].
pub fn random_tree(leaf_count: usize, rng_seed: u64, params: ShapeParams) -> Result<TreeTopology> {
    random_tree_over(&LeafSet::numbered(leaf_count)?, rng_seed, params)
}

/// Random tree over a given leaf set.
///
/// Built bottom-up: clusters are merged in random groups whose size is
/// `2 + Geometric(1/2)`, capped by `max_fanout` and the number of remaining
/// clusters, until one cluster (the root) remains.
pub fn random_tree_over(
    leaf_set: &LeafSet,
    rng_seed: u64,
    params: ShapeParams,
) -> Result<TreeTopology> {
    if params.max_fanout < 2 {
        return Err(crate::Error::InvalidArgument(format!(
            "max_fanout must be at least 2, got {}",
            params.max_fanout
        )));
    }
    let l = leaf_set.len();
    let mut rng = seeds::rng(rng_seed);
    let mut parent: Vec<Option<usize>> = vec![None; l];
    let mut clusters: Vec<usize> = (0..l).collect();
    while clusters.len() > 1 {
        let gmax = params.max_fanout.min(clusters.len());
        let mut g = 2;
        while g < gmax && rng.random_bool(0.5) {
            g += 1;
        }
        clusters.shuffle(&mut rng);
        let w = parent.len();
        parent.push(None);
        for c in clusters.drain(..g) {
            parent[c] = Some(w);
        }
        clusters.push(w);
    }
    let root = clusters[0];
    let shape = Shape {
        l,
        alive: vec![true; parent.len()],
        parent,
        root,
    };
    let dist = Uniform::new_inclusive(DELAY_RANGE_MS.0, DELAY_RANGE_MS.1).expect("valid range");
    shape.to_tree_with(leaf_set, |_| dist.sample(&mut rng))
}
