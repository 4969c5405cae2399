//! Rooted-tree topologies and the shared-path algebra over them.
//!
//! A [`TreeTopology`] is a rooted tree with labeled leaves and positive link
//! delays. Leaves are the identity carrier: two trees are compared through
//! their leaf labels only, internal node names are arbitrary. The shared-path
//! vector of a tree holds, for each leaf pair `(i, j)` with `i < j`, the
//! delay-weighted depth of `LCA(i, j)`; it equals `A * mu` for the routing
//! matrix `A` and link delays `mu`.

mod io;
mod shape;
mod space;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

pub use io::{parse_topology, read_topology, write_topology};
pub use shape::{random_tree, random_tree_over, Attach, Shape, ShapeParams, DELAY_RANGE_MS};
pub use space::{enumerate_topologies, local_neighborhood, TopologySpace, ENUMERATION_LIMIT};

use crate::{Error, Result};

/// Compare labels so that embedded numbers sort numerically (`v2 < v10`).
pub fn label_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let bytes = s.as_bytes();
        let mut start = 0;
        while start < bytes.len() {
            let digit = bytes[start].is_ascii_digit();
            let mut end = start + 1;
            while end < bytes.len() && bytes[end].is_ascii_digit() == digit {
                end += 1;
            }
            out.push((digit, &s[start..end]));
            start = end;
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, sa), (db, sb)) in ca.iter().zip(cb.iter()) {
        let ord = if *da && *db {
            let ta = sa.trim_start_matches('0');
            let tb = sb.trim_start_matches('0');
            ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb))
        } else {
            sa.cmp(sb)
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

/// Ordered, duplicate-free list of leaf labels shared by a family of trees.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LeafSet(Arc<[String]>);

impl LeafSet {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        labels.sort_by(|a, b| label_cmp(a, b));
        for w in labels.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DuplicateLeafLabel(w[0].clone()));
            }
        }
        if labels.len() < 2 {
            return Err(Error::TooFewLeaves(labels.len()));
        }
        Ok(LeafSet(labels.into()))
    }

    /// Labels `v1..=vl`.
    pub fn numbered(l: usize) -> Result<Self> {
        Self::new((1..=l).map(|i| format!("v{i}")))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.0.iter().position(|l| l == label)
    }

    /// Number of unordered leaf pairs, `l(l-1)/2`.
    pub fn pair_count(&self) -> usize {
        let l = self.len();
        l * (l - 1) / 2
    }

    /// Position of pair `(i, j)` in the pair order; `i != j`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        let l = self.len();
        i * (2 * l - i - 1) / 2 + (j - i - 1)
    }

    /// Leaf pairs `(i, j)`, `i < j`, in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let l = self.len();
        (0..l).flat_map(move |i| (i + 1..l).map(move |j| (i, j)))
    }
}

impl fmt::Debug for LeafSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

/// A validated rooted tree with positive link delays.
///
/// Children are stored in canonical order: by the smallest leaf (in leaf-set
/// order) beneath them. Link `v` is the link entering node `v`; links are
/// enumerated in canonical preorder.
#[derive(Clone)]
pub struct TreeTopology {
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    delay: Vec<f64>,
    root: usize,
    leaf_set: LeafSet,
    leaves: Vec<usize>,
    leaf_pos: Vec<Option<usize>>,
    below: Vec<Vec<usize>>,
    depth: Vec<f64>,
    hops: Vec<usize>,
    links: Vec<usize>,
}

impl fmt::Debug for TreeTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TreeTopology({})", self.canonical_form())
    }
}

/// Build and validate a tree from `(parent, child, delay)` triples.
pub fn build_tree<P, C>(edges: &[(P, C, f64)], root: &str) -> Result<TreeTopology>
where
    P: AsRef<str>,
    C: AsRef<str>,
{
    if edges.is_empty() {
        return Err(Error::EmptyEdgeList);
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut names: Vec<String> = Vec::new();
    let mut intern = |name: &str, names: &mut Vec<String>| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            names.push(name.to_string());
            names.len() - 1
        })
    };
    let mut seen = HashSet::new();
    let mut links = Vec::with_capacity(edges.len());
    for (p, c, d) in edges {
        let (p, c) = (p.as_ref(), c.as_ref());
        if !seen.insert((p, c)) {
            return Err(Error::DuplicateEdge {
                parent: p.into(),
                child: c.into(),
            });
        }
        if !(d.is_finite() && *d > 0.0) {
            return Err(Error::NonPositiveDelay {
                parent: p.into(),
                child: c.into(),
                delay: *d,
            });
        }
        let pi = intern(p, &mut names);
        let ci = intern(c, &mut names);
        links.push((pi, ci, *d));
    }
    let root_idx = *index
        .get(root)
        .ok_or_else(|| Error::UnknownRoot(root.to_string()))?;
    let n = names.len();
    let mut parent = vec![None; n];
    let mut delay = vec![0.0; n];
    for &(p, c, d) in &links {
        if c == root_idx || p == c {
            return Err(Error::CycleDetected(names[c].clone()));
        }
        if parent[c].is_some() {
            return Err(Error::MultipleParents(names[c].clone()));
        }
        parent[c] = Some(p);
        delay[c] = d;
    }
    TreeTopology::from_parts(names, parent, delay, root_idx)
}

impl TreeTopology {
    /// Validate a parent array. `delay[v]` is the delay of the link entering `v`.
    pub(crate) fn from_parts(
        names: Vec<String>,
        parent: Vec<Option<usize>>,
        delay: Vec<f64>,
        root: usize,
    ) -> Result<Self> {
        let n = names.len();
        debug_assert_eq!(parent.len(), n);
        debug_assert_eq!(delay.len(), n);
        if parent[root].is_some() {
            return Err(Error::CycleDetected(names[root].clone()));
        }
        // Walk every node up to a parentless node; a walk longer than n is a cycle.
        for v in 0..n {
            let mut cur = v;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    return Err(Error::CycleDetected(names[v].clone()));
                }
            }
            if cur != root {
                return Err(Error::DisconnectedNode(names[v].clone()));
            }
        }
        for v in 0..n {
            if v != root && !(delay[v].is_finite() && delay[v] > 0.0) {
                let p = parent[v].expect("non-root node has a parent");
                return Err(Error::NonPositiveDelay {
                    parent: names[p].clone(),
                    child: names[v].clone(),
                    delay: delay[v],
                });
            }
        }
        let mut children = vec![Vec::new(); n];
        for v in 0..n {
            if let Some(p) = parent[v] {
                children[p].push(v);
            }
        }
        let leaf_nodes: Vec<usize> = (0..n).filter(|&v| children[v].is_empty()).collect();
        if leaf_nodes.len() < 2 {
            return Err(Error::TooFewLeaves(leaf_nodes.len()));
        }
        let leaf_set = LeafSet::new(leaf_nodes.iter().map(|&v| names[v].clone()))?;
        let mut leaf_pos = vec![None; n];
        let mut leaves = vec![0; leaf_nodes.len()];
        for &v in &leaf_nodes {
            let pos = leaf_set.position(&names[v]).expect("leaf label present");
            leaf_pos[v] = Some(pos);
            leaves[pos] = v;
        }

        // Postorder (iterative) to collect leaf positions below each node.
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(children[v].iter().copied());
        }
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &v in order.iter().rev() {
            if let Some(p) = leaf_pos[v] {
                below[v].push(p);
            } else {
                let mut acc: Vec<usize> = children[v]
                    .iter()
                    .flat_map(|&c| below[c].iter().copied())
                    .collect();
                acc.sort_unstable();
                below[v] = acc;
            }
        }
        for ch in children.iter_mut() {
            ch.sort_by_key(|&c| below[c][0]);
        }

        let mut depth = vec![0.0; n];
        let mut hops = vec![0; n];
        let mut links = Vec::with_capacity(n - 1);
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            if v != root {
                links.push(v);
            }
            for &c in children[v].iter().rev() {
                depth[c] = depth[v] + delay[c];
                hops[c] = hops[v] + 1;
                stack.push(c);
            }
        }

        Ok(TreeTopology {
            names,
            parent,
            children,
            delay,
            root,
            leaf_set,
            leaves,
            leaf_pos,
            below,
            depth,
            hops,
            links,
        })
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn link_count(&self) -> usize {
        self.names.len() - 1
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parent[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn is_leaf(&self, v: usize) -> bool {
        self.children[v].is_empty()
    }

    /// Delay of the link entering `v` (0 for the root).
    pub fn link_delay(&self, v: usize) -> f64 {
        self.delay[v]
    }

    /// Delay-weighted depth `h(v)`: sum of link delays from the root.
    pub fn depth(&self, v: usize) -> f64 {
        self.depth[v]
    }

    pub fn hop_depth(&self, v: usize) -> usize {
        self.hops[v]
    }

    pub fn leaf_set(&self) -> &LeafSet {
        &self.leaf_set
    }

    /// Leaf node indices in leaf-set order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_position(&self, v: usize) -> Option<usize> {
        self.leaf_pos[v]
    }

    /// Leaf positions beneath `v`, ascending.
    pub fn leaves_below(&self, v: usize) -> &[usize] {
        &self.below[v]
    }

    /// Links in canonical preorder, each identified by its child node.
    pub fn links(&self) -> &[usize] {
        &self.links
    }

    pub fn internal_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(move |&v| !self.is_leaf(v))
    }

    pub fn internal_count(&self) -> usize {
        self.internal_nodes().count()
    }

    /// `(parent, child, delay)` triples in canonical preorder.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, f64)> + '_ {
        self.links.iter().map(move |&c| {
            let p = self.parent[c].expect("link child has a parent");
            (self.names[p].as_str(), self.names[c].as_str(), self.delay[c])
        })
    }

    pub fn lca(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        while self.hops[a] > self.hops[b] {
            a = self.parent[a].expect("deeper node has parent");
        }
        while self.hops[b] > self.hops[a] {
            b = self.parent[b].expect("deeper node has parent");
        }
        while a != b {
            a = self.parent[a].expect("non-root");
            b = self.parent[b].expect("non-root");
        }
        a
    }

    /// Link delays in link order.
    pub fn link_delays(&self) -> LinkDelays {
        LinkDelays {
            values: self.links.iter().map(|&c| self.delay[c]).collect(),
        }
    }

    /// Copy of this tree with link delays replaced (given in link order).
    pub fn with_link_delays(&self, mu: &LinkDelays) -> Result<TreeTopology> {
        if mu.len() != self.link_count() {
            return Err(Error::DimensionMismatch {
                expected: self.link_count(),
                found: mu.len(),
            });
        }
        let mut delay = self.delay.clone();
        for (&c, &d) in self.links.iter().zip(mu.values()) {
            delay[c] = d;
        }
        TreeTopology::from_parts(self.names.clone(), self.parent.clone(), delay, self.root)
    }

    /// Structure-only encoding: leaves by label, internal nodes as parenthesized
    /// child lists in canonical order. Unary internal nodes are transparent.
    pub fn canonical_form(&self) -> String {
        let mut out = String::new();
        self.encode(self.root, &mut out);
        out
    }

    fn encode(&self, v: usize, out: &mut String) {
        let mut v = v;
        while self.children[v].len() == 1 {
            v = self.children[v][0];
        }
        if self.is_leaf(v) {
            out.push_str(&self.names[v]);
            return;
        }
        out.push('(');
        for (i, &c) in self.children[v].iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            self.encode(c, out);
        }
        out.push(')');
    }

    /// Leaf clusters below each link, as leaf-position lists.
    pub fn clusters(&self) -> BTreeSet<Vec<usize>> {
        self.links.iter().map(|&c| self.below[c].clone()).collect()
    }

    /// Shared-path vector computed by walking the tree (`h(LCA(i, j))` per pair).
    pub fn shared_path_vector(&self) -> PathDelayVector {
        let values = self
            .leaf_set
            .pairs()
            .map(|(i, j)| self.depth[self.lca(self.leaves[i], self.leaves[j])])
            .collect();
        PathDelayVector {
            values,
            role: Role::True,
            leaf_set: self.leaf_set.clone(),
        }
    }

    /// Hop-count diameter (longest path between any two nodes).
    pub fn hop_diameter(&self) -> usize {
        // Height of each subtree, then best pair of child heights through each node.
        let n = self.node_count();
        let mut height = vec![0usize; n];
        let mut best = 0;
        let mut order = Vec::with_capacity(n);
        let mut stack = vec![self.root];
        while let Some(v) = stack.pop() {
            order.push(v);
            stack.extend(self.children[v].iter().copied());
        }
        for &v in order.iter().rev() {
            let mut top = [0usize; 2];
            for &c in &self.children[v] {
                let h = height[c] + 1;
                if h > top[0] {
                    top[1] = top[0];
                    top[0] = h;
                } else if h > top[1] {
                    top[1] = h;
                }
            }
            height[v] = top[0];
            best = best.max(top[0] + top[1]);
        }
        best
    }

    /// Undirected degree of every node.
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count())
            .map(|v| self.children[v].len() + usize::from(self.parent[v].is_some()))
            .collect()
    }
}

impl PartialEq for TreeTopology {
    /// Same structure, labels and delays.
    fn eq(&self, other: &Self) -> bool {
        self.canonical_form() == other.canonical_form()
            && self.leaf_set == other.leaf_set
            && self.edges().count() == other.edges().count()
            && self
                .edges()
                .zip(other.edges())
                .all(|(a, b)| a.0 == b.0 && a.1 == b.1 && a.2.to_bits() == b.2.to_bits())
    }
}

/// Role tag of a pairwise shared-delay vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    True,
    Perturbed,
    Observed,
}

/// Link delay vector `mu`, ordered like the links of the tree it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkDelays {
    values: Vec<f64>,
}

impl LinkDelays {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::NonPositiveDelay {
                parent: "?".into(),
                child: format!("link {i}"),
                delay: values[i],
            });
        }
        Ok(LinkDelays { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }
}

/// Pairwise shared-path delays over a leaf set, in pair order.
#[derive(Clone, Debug, PartialEq)]
pub struct PathDelayVector {
    values: Vec<f64>,
    role: Role,
    leaf_set: LeafSet,
}

impl PathDelayVector {
    pub fn new(values: Vec<f64>, role: Role, leaf_set: LeafSet) -> Result<Self> {
        if values.len() != leaf_set.pair_count() {
            return Err(Error::DimensionMismatch {
                expected: leaf_set.pair_count(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NegativeEntry {
                index: i,
                value: values[i],
            });
        }
        Ok(PathDelayVector {
            values,
            role,
            leaf_set,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn leaf_set(&self) -> &LeafSet {
        &self.leaf_set
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Entry for leaf positions `i != j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.leaf_set.pair_index(i, j)]
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Entries rounded to the nearest integer millisecond.
    pub fn rounded(&self) -> Self {
        PathDelayVector {
            values: self.values.iter().map(|v| v.round()).collect(),
            role: self.role,
            leaf_set: self.leaf_set.clone(),
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>, role: Role, leaf_set: LeafSet) -> Self {
        debug_assert_eq!(values.len(), leaf_set.pair_count());
        PathDelayVector {
            values,
            role,
            leaf_set,
        }
    }
}

/// Binary shared-path incidence matrix `A` (`k` pairs by `m` links).
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
    leaf_set: LeafSet,
    links: Vec<(String, String)>,
}

/// Routing matrix of `tree`: entry `[(i,j), e]` is 1 iff link `e` lies on the
/// root path to `LCA(i, j)`.
pub fn routing_matrix(tree: &TreeTopology) -> RoutingMatrix {
    let leaf_set = tree.leaf_set().clone();
    let rows = leaf_set.pair_count();
    let cols = tree.link_count();
    let mut col_of = vec![usize::MAX; tree.node_count()];
    for (e, &c) in tree.links().iter().enumerate() {
        col_of[c] = e;
    }
    let mut entries = vec![0u8; rows * cols];
    for (r, (i, j)) in leaf_set.pairs().enumerate() {
        let mut v = tree.lca(tree.leaves()[i], tree.leaves()[j]);
        while v != tree.root() {
            entries[r * cols + col_of[v]] = 1;
            v = tree.parent(v).expect("non-root");
        }
    }
    let links = tree
        .edges()
        .map(|(p, c, _)| (p.to_string(), c.to_string()))
        .collect();
    RoutingMatrix {
        rows,
        cols,
        entries,
        leaf_set,
        links,
    }
}

impl RoutingMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.entries[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.entries[r * self.cols..(r + 1) * self.cols]
    }

    pub fn leaf_set(&self) -> &LeafSet {
        &self.leaf_set
    }

    /// `(parent, child)` names of each column.
    pub fn link_index(&self) -> &[(String, String)] {
        &self.links
    }
}

/// `X = A * mu`.
pub fn shared_path_vector(a: &RoutingMatrix, mu: &LinkDelays) -> Result<PathDelayVector> {
    if mu.len() != a.cols {
        return Err(Error::DimensionMismatch {
            expected: a.cols,
            found: mu.len(),
        });
    }
    let values = (0..a.rows)
        .map(|r| {
            a.row(r)
                .iter()
                .zip(mu.values())
                .map(|(&e, &d)| f64::from(e) * d)
                .sum()
        })
        .collect();
    Ok(PathDelayVector {
        values,
        role: Role::True,
        leaf_set: a.leaf_set.clone(),
    })
}

/// Prefix for generated internal node names (`{prefix}s` for the root,
/// `{prefix}n{i}` otherwise) that cannot collide with any leaf label.
pub(crate) fn internal_prefix(leaf_set: &LeafSet) -> String {
    let mut prefix = String::new();
    while leaf_set
        .labels()
        .iter()
        .any(|lab| lab.starts_with(&format!("{prefix}n")) || *lab == format!("{prefix}s"))
    {
        prefix.push('_');
    }
    prefix
}

/// Canonical structure encoding (see [`TreeTopology::canonical_form`]).
pub fn canonical_form(tree: &TreeTopology) -> String {
    tree.canonical_form()
}

/// One leaf-label set per link: the leaves of the child-side subtree.
pub fn edge_leafsets(tree: &TreeTopology) -> BTreeSet<Vec<String>> {
    let labels = tree.leaf_set().labels();
    tree.clusters()
        .into_iter()
        .map(|c| c.into_iter().map(|p| labels[p].clone()).collect())
        .collect()
}

#[cfg(test)]
mod tests;
