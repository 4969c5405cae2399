use std::collections::{BTreeSet, HashSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;

use super::*;
use crate::seeds;

fn fixture() -> TreeTopology {
    build_tree(
        &[("s", "u", 2.0), ("u", "v1", 1.0), ("u", "v2", 1.0), ("s", "v3", 3.0)],
        "s",
    )
    .unwrap()
}

fn star(l: usize) -> TreeTopology {
    let edges: Vec<(String, String, f64)> = (1..=l)
        .map(|i| ("s".to_string(), format!("v{i}"), 1.0 + i as f64))
        .collect();
    build_tree(&edges, "s").unwrap()
}

fn caterpillar4() -> TreeTopology {
    build_tree(
        &[
            ("s", "a", 1.0),
            ("s", "v4", 4.0),
            ("a", "b", 2.0),
            ("a", "v3", 3.0),
            ("b", "v1", 5.0),
            ("b", "v2", 6.0),
        ],
        "s",
    )
    .unwrap()
}

/// Links on the root path of `v`, as child-node indices.
fn root_path(t: &TreeTopology, v: usize) -> HashSet<usize> {
    let mut out = HashSet::new();
    let mut cur = v;
    while let Some(p) = t.parent(cur) {
        out.insert(cur);
        cur = p;
    }
    out
}

/// Brute-force routing matrix via path intersection.
fn routing_oracle(t: &TreeTopology) -> Vec<Vec<u8>> {
    t.leaf_set()
        .pairs()
        .map(|(i, j)| {
            let a = root_path(t, t.leaves()[i]);
            let b = root_path(t, t.leaves()[j]);
            t.links()
                .iter()
                .map(|e| u8::from(a.contains(e) && b.contains(e)))
                .collect()
        })
        .collect()
}

/// Number of rooted leaf-labeled trees without unary nodes, by summing over
/// set partitions of the leaves into at least two blocks.
fn count_trees(n: usize) -> u64 {
    fn partitions(items: &[usize]) -> Vec<Vec<Vec<usize>>> {
        if items.is_empty() {
            return vec![vec![]];
        }
        let first = items[0];
        let mut out = Vec::new();
        for mut p in partitions(&items[1..]) {
            for b in 0..p.len() {
                let mut q = p.clone();
                q[b].push(first);
                out.push(q);
            }
            p.push(vec![first]);
            out.push(p);
        }
        out
    }
    if n == 1 {
        return 1;
    }
    let items: Vec<usize> = (0..n).collect();
    partitions(&items)
        .into_iter()
        .filter(|p| p.len() >= 2)
        .map(|p| p.iter().map(|b| count_trees(b.len())).product::<u64>())
        .sum()
}

const PRIMES: [f64; 16] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0,
];

#[test]
fn build_tree_orders_leaves_and_depths() {
    let t = fixture();
    let labels: Vec<&str> = t.leaves().iter().map(|&v| t.name(v)).collect();
    assert_eq!(labels, ["v1", "v2", "v3"]);
    // h(v1) = 2 + 1.
    assert_eq!(t.depth(t.leaves()[0]), 3.0);
    assert_eq!(t.depth(t.leaves()[2]), 3.0);
}

#[test]
fn build_tree_errors() {
    assert!(matches!(
        build_tree(&[("s", "a", 1.0)], "s"),
        Err(Error::TooFewLeaves(1))
    ));
    assert!(matches!(
        build_tree(&[("s", "u", 1.0), ("u", "a", 1.0), ("u", "s", 1.0)], "s"),
        Err(Error::CycleDetected(_))
    ));
    assert!(matches!(
        build_tree(
            &[("s", "a", 1.0), ("s", "b", 1.0), ("x", "y", 1.0), ("y", "x", 1.0)],
            "s"
        ),
        Err(Error::CycleDetected(_))
    ));
    assert!(matches!(
        build_tree(&[("s", "a", 1.0), ("s", "b", 1.0), ("x", "c", 1.0)], "s"),
        Err(Error::DisconnectedNode(_))
    ));
    assert!(matches!(
        build_tree(&[("s", "a", 1.0), ("s", "b", 0.0)], "s"),
        Err(Error::NonPositiveDelay { .. })
    ));
    assert!(matches!(
        build_tree(&[("s", "a", 1.0), ("s", "a", 1.0), ("s", "b", 1.0)], "s"),
        Err(Error::DuplicateEdge { .. })
    ));
    assert!(matches!(
        build_tree(&[("s", "a", 1.0), ("s", "b", 1.0), ("b", "a", 1.0)], "s"),
        Err(Error::MultipleParents(_))
    ));
    let empty: [(&str, &str, f64); 0] = [];
    assert!(matches!(build_tree(&empty, "s"), Err(Error::EmptyEdgeList)));
}

#[test]
fn routing_matrix_fixture() {
    let a = routing_matrix(&fixture());
    let links: Vec<(&str, &str)> = a
        .link_index()
        .iter()
        .map(|(p, c)| (p.as_str(), c.as_str()))
        .collect();
    assert_eq!(links, [("s", "u"), ("u", "v1"), ("u", "v2"), ("s", "v3")]);
    assert_eq!(a.row(0), [1, 0, 0, 0]);
    assert_eq!(a.row(1), [0, 0, 0, 0]);
    assert_eq!(a.row(2), [0, 0, 0, 0]);
    assert_eq!(routing_oracle(&fixture()), vec![vec![1, 0, 0, 0], vec![0; 4], vec![0; 4]]);
}

#[test]
fn routing_matrix_star_and_caterpillar() {
    let a = routing_matrix(&star(4));
    assert!((0..a.rows()).all(|r| a.row(r).iter().all(|&e| e == 0)));
    let t = caterpillar4();
    let a = routing_matrix(&t);
    assert_eq!(a.rows(), 6);
    let oracle = routing_oracle(&t);
    for (r, row) in oracle.iter().enumerate() {
        assert_eq!(a.row(r), row.as_slice());
    }
}

#[test]
fn shared_path_vector_fixture() {
    let t = fixture();
    let a = routing_matrix(&t);
    let mu = LinkDelays::new(vec![2.0, 1.0, 1.0, 3.0]).unwrap();
    assert_eq!(mu, t.link_delays());
    let x = shared_path_vector(&a, &mu).unwrap();
    assert_eq!(x.values(), [2.0, 0.0, 0.0]);
    assert_eq!(x.role(), Role::True);
    assert_eq!(x, t.shared_path_vector());

    let s = star(3);
    let x = shared_path_vector(&routing_matrix(&s), &s.link_delays()).unwrap();
    assert!(x.values().iter().all(|&v| v == 0.0));

    let x3 = shared_path_vector(&a, &mu.scaled(3.0).unwrap()).unwrap();
    assert_eq!(x3.values(), [6.0, 0.0, 0.0]);

    let short = LinkDelays::new(vec![1.0, 2.0]).unwrap();
    assert!(matches!(
        shared_path_vector(&a, &short),
        Err(Error::DimensionMismatch { expected: 4, found: 2 })
    ));
}

#[test]
fn canonical_form_distinguishes_shapes() {
    assert_eq!(fixture().canonical_form(), "((v1,v2),v3)");
    assert_eq!(star(3).canonical_form(), "(v1,v2,v3)");
    let cat = build_tree(
        &[("s", "u", 1.0), ("u", "v1", 1.0), ("u", "v3", 1.0), ("s", "v2", 1.0)],
        "s",
    )
    .unwrap();
    assert_eq!(cat.canonical_form(), "((v1,v3),v2)");
    assert_ne!(star(3).canonical_form(), fixture().canonical_form());
}

#[test]
fn canonical_form_ignores_delays_and_unary_chains() {
    let a = build_tree(
        &[("r", "s", 4.0), ("s", "u", 7.0), ("u", "v1", 1.0), ("u", "v2", 2.0), ("s", "v3", 5.0)],
        "r",
    )
    .unwrap();
    assert_eq!(a.canonical_form(), fixture().canonical_form());
}

#[test]
fn enumeration_sizes_match_counting_oracle() {
    for (l, expected) in [(2, 1u64), (3, 4), (4, 26), (5, 236)] {
        assert_eq!(count_trees(l), expected);
        let space = enumerate_topologies(&LeafSet::numbered(l).unwrap(), None).unwrap();
        assert_eq!(space.len() as u64, expected, "l = {l}");
        let distinct: HashSet<&str> = (0..space.len()).map(|i| space.canonical(i)).collect();
        assert_eq!(distinct.len(), space.len());
        for t in space.members() {
            assert!(t.internal_nodes().all(|v| t.children(v).len() >= 2));
        }
    }
    assert_eq!(count_trees(6), 2752);
    let six = enumerate_topologies(&LeafSet::numbered(6).unwrap(), None).unwrap();
    assert_eq!(six.len(), 2752);
}

#[test]
fn enumeration_three_leaves() {
    let space = enumerate_topologies(&LeafSet::numbered(3).unwrap(), None).unwrap();
    let forms: BTreeSet<&str> = (0..4).map(|i| space.canonical(i)).collect();
    let expected: BTreeSet<&str> = ["(v1,v2,v3)", "((v1,v2),v3)", "((v1,v3),v2)", "(v1,(v2,v3))"]
        .into_iter()
        .collect();
    assert_eq!(forms, expected);
    let stars = enumerate_topologies(&LeafSet::numbered(4).unwrap(), Some(1)).unwrap();
    assert_eq!(stars.len(), 1);
}

#[test]
fn enumeration_guard() {
    let big = LeafSet::numbered(ENUMERATION_LIMIT + 1).unwrap();
    assert!(matches!(
        enumerate_topologies(&big, None),
        Err(Error::SpaceTooLarge { .. })
    ));
}

#[test]
fn injectivity_with_prime_delays() {
    for l in 3..=5 {
        let space = enumerate_topologies(&LeafSet::numbered(l).unwrap(), None).unwrap();
        let mut seen: HashSet<Vec<u64>> = HashSet::new();
        for t in space.members() {
            let mu = LinkDelays::new(PRIMES[..t.link_count()].to_vec()).unwrap();
            let x = shared_path_vector(&routing_matrix(t), &mu).unwrap();
            let key: Vec<u64> = x.values().iter().map(|v| *v as u64).collect();
            assert!(seen.insert(key), "collision at l = {l} for {}", t.canonical_form());
        }
        assert_eq!(seen.len(), space.len());
    }
}

#[test]
fn random_tree_properties() {
    let p = ShapeParams { max_fanout: 3 };
    assert_eq!(random_tree(6, 11, p).unwrap(), random_tree(6, 11, p).unwrap());
    for seed in 0..1000 {
        let t = random_tree(5, seed, p).unwrap();
        for &c in t.links() {
            let d = t.link_delay(c);
            assert!((100.0..=500.0).contains(&d), "delay {d}");
        }
        assert!(t.internal_nodes().all(|v| t.children(v).len() >= 2));
    }
    for seed in 0..50 {
        let t = random_tree(5, seed, ShapeParams { max_fanout: 2 }).unwrap();
        assert!(t.internal_nodes().all(|v| t.children(v).len() == 2));
    }
}

#[test]
fn edge_leafsets_fixture() {
    let sets = edge_leafsets(&fixture());
    let expected: BTreeSet<Vec<String>> = [
        vec!["v1", "v2"],
        vec!["v1"],
        vec!["v2"],
        vec!["v3"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    assert_eq!(sets, expected);
    assert_eq!(edge_leafsets(&star(3)).len(), 3);
    assert_eq!(edge_leafsets(&fixture()), edge_leafsets(&fixture()));
}

#[test]
fn file_round_trip() {
    let t = random_tree(7, 5, ShapeParams::default()).unwrap();
    let text = write_topology(&t);
    let back = parse_topology(&text).unwrap();
    assert_eq!(back, t);
    assert_eq!(write_topology(&back), text);

    let with_comments = "# demo\nroot s # the source\ns u 2\nu v1 1\nu v2 1\n\ns v3 3\n";
    assert_eq!(parse_topology(with_comments).unwrap(), fixture());
    assert!(matches!(
        parse_topology("s u 2\n"),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(matches!(
        parse_topology("root s\ns u x\n"),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn shape_canonical_matches_tree() {
    let space = enumerate_topologies(&LeafSet::numbered(4).unwrap(), None).unwrap();
    for (i, t) in space.members().iter().enumerate() {
        let shape = Shape::from_tree(t);
        assert_eq!(shape.canonical(t.leaf_set()), space.canonical(i));
        assert!(shape.is_valid());
    }
}

#[test]
fn neighborhood_is_capped_and_contains_center() {
    let t = random_tree(7, 3, ShapeParams::default()).unwrap();
    let hood = local_neighborhood(&t, 50, 9).unwrap();
    assert_eq!(hood.len(), 50);
    assert!(hood.contains(&t));
    let again = local_neighborhood(&t, 50, 9).unwrap();
    let a: Vec<&str> = (0..50).map(|i| hood.canonical(i)).collect();
    let b: Vec<&str> = (0..50).map(|i| again.canonical(i)).collect();
    assert_eq!(a, b);
}

#[test]
fn label_order_is_natural() {
    let ls = LeafSet::new(["v10", "v2", "v1"]).unwrap();
    assert_eq!(ls.labels(), ["v1", "v2", "v10"]);
    assert_eq!(ls.pair_index(0, 1), 0);
    assert_eq!(ls.pair_index(1, 2), 2);
    assert!(matches!(LeafSet::new(["a", "a"]), Err(Error::DuplicateLeafLabel(_))));
}

proptest! {
    #[test]
    fn canonical_form_is_order_invariant(seed in 0u64..10_000, l in 2usize..9) {
        let t = random_tree(l, seed, ShapeParams { max_fanout: 4 }).unwrap();
        let mut edges: Vec<(String, String, f64)> =
            t.edges().map(|(p, c, d)| (p.to_string(), c.to_string(), d)).collect();
        edges.shuffle(&mut seeds::rng(seed ^ 0xABCD));
        let rebuilt = build_tree(&edges, t.name(t.root())).unwrap();
        prop_assert_eq!(rebuilt.canonical_form(), t.canonical_form());
        prop_assert_eq!(rebuilt, t);
    }

    #[test]
    fn routing_rows_match_lca_depth(seed in 0u64..10_000, l in 2usize..9) {
        let t = random_tree(l, seed, ShapeParams { max_fanout: 3 }).unwrap();
        let a = routing_matrix(&t);
        let mu = t.link_delays();
        for (r, (i, j)) in t.leaf_set().pairs().enumerate() {
            let dot: f64 = a.row(r).iter().zip(mu.values()).map(|(&e, &d)| f64::from(e) * d).sum();
            // Direct walk: climb from i until reaching an ancestor of j.
            let anc_j = root_path(&t, t.leaves()[j]);
            let mut v = t.leaves()[i];
            while v != t.root() && !anc_j.contains(&v) {
                v = t.parent(v).unwrap();
            }
            let walk: f64 = root_path(&t, v).iter().map(|&c| t.link_delay(c)).sum();
            prop_assert!((dot - walk).abs() < 1e-9);
        }
    }
}
