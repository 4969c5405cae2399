//! Topology comparison metrics.
//!
//! Links are identified by the set of leaves below them, so two trees over
//! the same leaf set can be compared without matching internal node names.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::topology::TreeTopology;
use crate::{Error, Result};

/// The four normalized differences behind [`struct_similarity`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StructComponents {
    pub delta_nodes: f64,
    pub delta_edges: f64,
    pub delta_degree: f64,
    pub delta_diameter: f64,
}

impl StructComponents {
    pub fn similarity(&self) -> f64 {
        1.0 - 0.25 * (self.delta_nodes + self.delta_edges + self.delta_degree + self.delta_diameter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ted_similarity: f64,
    pub struct_similarity: f64,
    pub link_distance: f64,
    pub components: StructComponents,
}

/// All three metrics of `estimate` against `truth`.
pub fn evaluate(truth: &TreeTopology, estimate: &TreeTopology, all_nodes_degree: bool) -> Result<MetricReport> {
    let components = struct_components(truth, estimate, all_nodes_degree);
    Ok(MetricReport {
        ted_similarity: ted_similarity(truth, estimate),
        struct_similarity: components.similarity(),
        link_distance: link_distance(truth, estimate)?,
        components,
    })
}

/// Ordered tree edit distance with unit costs. Leaves are labeled by their
/// leaf label, all internal nodes share one label, and children follow the
/// canonical order.
pub fn tree_edit_distance(a: &TreeTopology, b: &TreeTopology) -> usize {
    let a = Postorder::new(a);
    let b = Postorder::new(b);
    let (n, m) = (a.len(), b.len());
    let mut td = vec![vec![0usize; m]; n];
    // Forest distance buffer, reused across keyroot pairs.
    let mut fd = vec![vec![0usize; m + 1]; n + 1];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            let (li, lj) = (a.lml[i], b.lml[j]);
            let (rows, cols) = (i - li + 2, j - lj + 2);
            fd[0][0] = 0;
            for x in 1..rows {
                fd[x][0] = fd[x - 1][0] + 1;
            }
            for y in 1..cols {
                fd[0][y] = fd[0][y - 1] + 1;
            }
            for x in 1..rows {
                let u = li + x - 1;
                for y in 1..cols {
                    let v = lj + y - 1;
                    let del = fd[x - 1][y] + 1;
                    let ins = fd[x][y - 1] + 1;
                    if a.lml[u] == li && b.lml[v] == lj {
                        let ren = fd[x - 1][y - 1] + usize::from(a.label[u] != b.label[v]);
                        fd[x][y] = del.min(ins).min(ren);
                        td[u][v] = fd[x][y];
                    } else {
                        let (px, py) = (a.lml[u] - li, b.lml[v] - lj);
                        fd[x][y] = del.min(ins).min(fd[px][py] + td[u][v]);
                    }
                }
            }
        }
    }
    td[n - 1][m - 1]
}

/// `1 - TED(T, T^) / (|T| + |T^|)`.
pub fn ted_similarity(a: &TreeTopology, b: &TreeTopology) -> f64 {
    let total = a.node_count() + b.node_count();
    1.0 - tree_edit_distance(a, b) as f64 / total as f64
}

/// Nodes in postorder with leftmost-leaf indices and Zhang-Shasha keyroots.
struct Postorder<'a> {
    label: Vec<Option<&'a str>>,
    lml: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a> Postorder<'a> {
    fn new(t: &'a TreeTopology) -> Self {
        let mut label = Vec::with_capacity(t.node_count());
        let mut lml = Vec::with_capacity(t.node_count());
        Self::visit(t, t.root(), &mut label, &mut lml);
        let n = label.len();
        // A keyroot is the last (highest) node for each leftmost-leaf value.
        let mut last = vec![usize::MAX; n];
        for (i, &l) in lml.iter().enumerate() {
            last[l] = i;
        }
        let mut keyroots: Vec<usize> = last.into_iter().filter(|&k| k != usize::MAX).collect();
        keyroots.sort_unstable();
        Postorder { label, lml, keyroots }
    }

    fn visit(t: &'a TreeTopology, v: usize, label: &mut Vec<Option<&'a str>>, lml: &mut Vec<usize>) -> usize {
        let mut first = None;
        for &c in t.children(v) {
            let idx = Self::visit(t, c, label, lml);
            first.get_or_insert(lml[idx]);
        }
        let idx = label.len();
        label.push(t.is_leaf(v).then(|| t.name(v)));
        lml.push(first.unwrap_or(idx));
        idx
    }

    fn len(&self) -> usize {
        self.label.len()
    }
}

/// Node, edge, degree and diameter differences. With `all_nodes_degree`
/// the degree term compares the sorted, zero-padded degree sequences of all
/// nodes; otherwise it compares leaf degrees position by position.
pub fn struct_components(a: &TreeTopology, b: &TreeTopology, all_nodes_degree: bool) -> StructComponents {
    let ratio = |x: usize, y: usize| x.abs_diff(y) as f64 / x.max(y).max(1) as f64;
    let (da, db) = (a.degrees(), b.degrees());
    let (seq_a, seq_b): (Vec<usize>, Vec<usize>) = if all_nodes_degree {
        let mut sa = da.clone();
        let mut sb = db.clone();
        sa.sort_unstable_by(|x, y| y.cmp(x));
        sb.sort_unstable_by(|x, y| y.cmp(x));
        let n = sa.len().max(sb.len());
        sa.resize(n, 0);
        sb.resize(n, 0);
        (sa, sb)
    } else {
        let n = a.leaves().len().min(b.leaves().len());
        (
            a.leaves()[..n].iter().map(|&v| da[v]).collect(),
            b.leaves()[..n].iter().map(|&v| db[v]).collect(),
        )
    };
    let delta_degree = if seq_a.is_empty() {
        0.0
    } else {
        let n = seq_a.len() as f64;
        let mean_abs = seq_a.iter().zip(&seq_b).map(|(x, y)| x.abs_diff(*y) as f64).sum::<f64>() / n;
        let mean = seq_a.iter().sum::<usize>() as f64 / n;
        mean_abs / mean.max(1.0)
    };
    StructComponents {
        delta_nodes: ratio(a.node_count(), b.node_count()),
        delta_edges: ratio(a.link_count(), b.link_count()),
        delta_degree,
        delta_diameter: ratio(a.hop_diameter(), b.hop_diameter()),
    }
}

/// `1 - (sum of the four component differences) / 4`.
pub fn struct_similarity(a: &TreeTopology, b: &TreeTopology, all_nodes_degree: bool) -> f64 {
    struct_components(a, b, all_nodes_degree).similarity()
}

/// Jaccard distance between the leaf-cluster edge sets.
pub fn link_distance(a: &TreeTopology, b: &TreeTopology) -> Result<f64> {
    same_leaves(a, b)?;
    let (ca, cb) = (a.clusters(), b.clusters());
    let union = ca.union(&cb).count();
    Ok(cluster_symmetric_difference(&ca, &cb) as f64 / union.max(1) as f64)
}

/// Size of the symmetric difference of the leaf-cluster edge sets.
pub fn link_symmetric_difference(a: &TreeTopology, b: &TreeTopology) -> Result<usize> {
    same_leaves(a, b)?;
    Ok(cluster_symmetric_difference(&a.clusters(), &b.clusters()))
}

/// [`link_symmetric_difference`] on precomputed cluster sets.
pub fn cluster_symmetric_difference(a: &BTreeSet<Vec<usize>>, b: &BTreeSet<Vec<usize>>) -> usize {
    a.symmetric_difference(b).count()
}

fn same_leaves(a: &TreeTopology, b: &TreeTopology) -> Result<()> {
    if a.leaf_set() == b.leaf_set() {
        Ok(())
    } else {
        Err(Error::LeafSetMismatch)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::topology::{build_tree, random_tree, ShapeParams};

    fn star3() -> TreeTopology {
        build_tree(&[("s", "v1", 1.0), ("s", "v2", 1.0), ("s", "v3", 1.0)], "s").unwrap()
    }

    fn cherry3() -> TreeTopology {
        build_tree(&[("s", "u", 1.0), ("u", "v1", 1.0), ("u", "v2", 1.0), ("s", "v3", 1.0)], "s")
            .unwrap()
    }

    #[test]
    fn star_versus_cherry() {
        assert_eq!(link_distance(&star3(), &cherry3()).unwrap(), 0.25);
        assert_eq!(link_symmetric_difference(&star3(), &cherry3()).unwrap(), 1);
        // One insertion of the internal node turns the star into the cherry.
        assert_eq!(tree_edit_distance(&star3(), &cherry3()), 1);
        assert_eq!(ted_similarity(&star3(), &cherry3()), 1.0 - 1.0 / 9.0);
    }

    #[test]
    fn struct_components_by_formula() {
        let c = struct_components(&star3(), &cherry3(), false);
        assert_eq!(c.delta_nodes, 1.0 / 5.0);
        assert_eq!(c.delta_edges, 1.0 / 4.0);
        assert_eq!(c.delta_degree, 0.0);
        // Star diameter 2, cherry diameter 3.
        assert_eq!(c.delta_diameter, 1.0 / 3.0);
        let all = struct_components(&star3(), &cherry3(), true);
        // Sorted degrees: star (3,1,1,1,0), cherry (3,2,1,1,1); mean |diff| 2/5,
        // star mean degree 6/5.
        assert!((all.delta_degree - (2.0 / 5.0) / (6.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn node_ratio_five_versus_seven() {
        let five = build_tree(
            &[("s", "u", 1.0), ("u", "v1", 1.0), ("u", "v2", 1.0), ("s", "v3", 1.0)],
            "s",
        )
        .unwrap();
        let seven = build_tree(
            &[
                ("s", "u", 1.0),
                ("u", "w", 1.0),
                ("w", "v1", 1.0),
                ("w", "v2", 1.0),
                ("u", "v3", 1.0),
                ("s", "v4", 1.0),
            ],
            "s",
        )
        .unwrap();
        assert_eq!(struct_components(&five, &seven, false).delta_nodes, 2.0 / 7.0);
    }

    #[test]
    fn disjoint_labels_give_zero_similarity() {
        let a = build_tree(&[("r", "a", 1.0), ("r", "b", 1.0)], "r").unwrap();
        let b = build_tree(&[("r", "c", 1.0), ("r", "d", 1.0)], "r").unwrap();
        // Root matches; two relabels.
        assert_eq!(tree_edit_distance(&a, &b), 2);
        assert!(matches!(link_distance(&a, &b), Err(Error::LeafSetMismatch)));
    }

    #[test]
    fn singleton_only_overlap() {
        // Two internal clusters on each side, none shared: (p + q) / (l + p + q).
        let a = build_tree(
            &[("s", "u", 1.0), ("u", "v1", 1.0), ("u", "v2", 1.0), ("s", "v3", 1.0), ("s", "v4", 1.0)],
            "s",
        )
        .unwrap();
        let b = build_tree(
            &[("s", "u", 1.0), ("u", "v3", 1.0), ("u", "v4", 1.0), ("s", "v1", 1.0), ("s", "v2", 1.0)],
            "s",
        )
        .unwrap();
        assert_eq!(link_distance(&a, &b).unwrap(), 2.0 / 6.0);
    }

    proptest! {
        #[test]
        fn identity_cases(seed in any::<u64>(), l in 2usize..9) {
            let t = random_tree(l, seed, ShapeParams { max_fanout: 4 }).unwrap();
            let r = evaluate(&t, &t, true).unwrap();
            prop_assert_eq!(r.ted_similarity, 1.0);
            prop_assert_eq!(r.struct_similarity, 1.0);
            prop_assert_eq!(r.link_distance, 0.0);
        }

        #[test]
        fn symmetric_difference_is_a_metric(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
            let p = ShapeParams { max_fanout: 3 };
            let (a, b, c) = (random_tree(6, s1, p).unwrap(), random_tree(6, s2, p).unwrap(), random_tree(6, s3, p).unwrap());
            let d = |x: &TreeTopology, y: &TreeTopology| link_symmetric_difference(x, y).unwrap();
            prop_assert_eq!(d(&a, &a), 0);
            prop_assert_eq!(d(&a, &b), d(&b, &a));
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            prop_assert_eq!(d(&a, &b) == 0, a.canonical_form() == b.canonical_form());
        }

        #[test]
        fn values_in_range(s1 in any::<u64>(), s2 in any::<u64>(), l in 2usize..9) {
            let p = ShapeParams { max_fanout: 4 };
            let (a, b) = (random_tree(l, s1, p).unwrap(), random_tree(l, s2, p).unwrap());
            for flag in [false, true] {
                let r = evaluate(&a, &b, flag).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.ted_similarity));
                prop_assert!((0.0..=1.0).contains(&r.link_distance));
                prop_assert!(r.struct_similarity <= 1.0);
                let c = r.components;
                for v in [c.delta_nodes, c.delta_edges, c.delta_degree, c.delta_diameter] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert_eq!(tree_edit_distance(&a, &b), tree_edit_distance(&b, &a));
            }
        }
    }
}
