use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;

use super::{LeafSet, Shape, TreeTopology};
use crate::{seeds, Error, Result};

/// Largest leaf count accepted by [`enumerate_topologies`].
pub const ENUMERATION_LIMIT: usize = 8;

/// A deduplicated family of trees over a common leaf set, sorted by
/// canonical form.
#[derive(Clone, Debug)]
pub struct TopologySpace {
    members: Vec<TreeTopology>,
    canonical: Vec<String>,
    index: HashMap<String, usize>,
    leaf_set: LeafSet,
}

impl TopologySpace {
    /// Build from arbitrary trees; duplicates (by canonical form) are dropped.
    pub fn from_trees(trees: impl IntoIterator<Item = TreeTopology>) -> Result<Self> {
        let mut pairs: Vec<(String, TreeTopology)> = Vec::new();
        let mut seen = HashSet::new();
        let mut leaf_set: Option<LeafSet> = None;
        for t in trees {
            match &leaf_set {
                None => leaf_set = Some(t.leaf_set().clone()),
                Some(ls) if ls != t.leaf_set() => return Err(Error::LeafSetMismatch),
                _ => {}
            }
            let c = t.canonical_form();
            if seen.insert(c.clone()) {
                pairs.push((c, t));
            }
        }
        let leaf_set = leaf_set.ok_or(Error::EmptySpace)?;
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        let index = pairs
            .iter()
            .enumerate()
            .map(|(i, (c, _))| (c.clone(), i))
            .collect();
        let (canonical, members) = pairs.into_iter().unzip();
        Ok(TopologySpace {
            members,
            canonical,
            index,
            leaf_set,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[TreeTopology] {
        &self.members
    }

    pub fn get(&self, i: usize) -> &TreeTopology {
        &self.members[i]
    }

    pub fn canonical(&self, i: usize) -> &str {
        &self.canonical[i]
    }

    pub fn leaf_set(&self) -> &LeafSet {
        &self.leaf_set
    }

    /// Index of the member with the same canonical form as `tree`.
    pub fn position(&self, tree: &TreeTopology) -> Option<usize> {
        self.position_of(&tree.canonical_form())
    }

    pub fn position_of(&self, canonical: &str) -> Option<usize> {
        self.index.get(canonical).copied()
    }

    pub fn contains(&self, tree: &TreeTopology) -> bool {
        self.position(tree).is_some()
    }
}

/// Every rooted tree over `leaf_set` whose internal nodes all have at least
/// two children, optionally limited to at most `max_internal` internal nodes.
///
/// Trees are generated by inserting leaves one at a time, either as a new
/// child of an internal node, by subdividing a link, or under a new root;
/// every tree arises from exactly one parent tree.
pub fn enumerate_topologies(
    leaf_set: &LeafSet,
    max_internal: Option<usize>,
) -> Result<TopologySpace> {
    let l = leaf_set.len();
    if l > ENUMERATION_LIMIT {
        return Err(Error::SpaceTooLarge {
            leaves: l,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut level = vec![Shape::seed_pair(l)];
    for leaf in 2..l {
        level = level.iter().flat_map(|s| s.insertions(leaf)).collect();
    }
    let cap = max_internal.unwrap_or(usize::MAX);
    let trees = level
        .into_iter()
        .filter(|s| s.internal_count() <= cap)
        .map(|s| s.to_tree(leaf_set))
        .collect::<Result<Vec<_>>>()?;
    TopologySpace::from_trees(trees)
}

/// Seeded local-edit neighborhood of `center`: the center itself followed by
/// trees reachable through contractions, splits and regrafts, explored ring
/// by ring in a seeded random order, at most `limit` members in total.
pub fn local_neighborhood(center: &TreeTopology, limit: usize, seed: u64) -> Result<TopologySpace> {
    let leaf_set = center.leaf_set().clone();
    let start = Shape::from_tree(center);
    let mut rng = seeds::rng(seed);
    let mut seen = HashSet::new();
    seen.insert(start.canonical(&leaf_set));
    let mut picked = vec![start.clone()];
    let mut frontier = VecDeque::from([start]);
    while picked.len() < limit {
        let Some(shape) = frontier.pop_front() else {
            break;
        };
        let mut next = shape.neighbors();
        next.shuffle(&mut rng);
        for s in next {
            if picked.len() >= limit {
                break;
            }
            if seen.insert(s.canonical(&leaf_set)) {
                picked.push(s.clone());
                frontier.push_back(s);
            }
        }
    }
    let mut trees = vec![center.clone()];
    for s in picked.iter().skip(1) {
        trees.push(s.to_tree(&leaf_set)?);
    }
    TopologySpace::from_trees(trees)
}
