use serde::{Deserialize, Serialize};

use crate::observation::ensure_realizable;
use crate::topology::{internal_prefix, PathDelayVector, TreeTopology};
use crate::{Error, Result};

/// Rooted neighbor-joining settings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RnjConfig {
    /// Minimum link length (ms); values within `delta / 2` are treated as
    /// one branching depth. `None` estimates it from the input as the
    /// smallest positive gap between distinct shared values (including 0).
    pub delta: Option<f64>,
}

impl RnjConfig {
    pub fn fixed(delta: f64) -> Self {
        RnjConfig { delta: Some(delta) }
    }

    /// The threshold used for `shared`.
    pub fn delta_for(&self, shared: &PathDelayVector) -> f64 {
        self.delta.unwrap_or_else(|| estimate_min_link(shared.values()))
    }
}

/// Smallest positive gap between consecutive distinct values of
/// `{0} + values`; 1 when every value is 0.
pub fn estimate_min_link(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().chain([0.0]).collect();
    v.sort_by(f64::total_cmp);
    let gap = v
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > 0.0)
        .fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        gap
    } else {
        1.0
    }
}

struct Cluster {
    /// Shared depth at which the cluster was formed; `None` for leaves.
    depth: Option<f64>,
    children: Vec<usize>,
    min_leaf: usize,
}

/// Reconstruct a tree from a realizable shared-path vector.
///
/// The pair with the largest shared value is joined together with every
/// active node whose shared value with the first member lies within
/// `delta / 2` of that maximum; joined internal nodes formed within
/// `delta / 2` of the new depth are flattened into it. Cross values of the
/// new node are the maxima over its members. Leaf links get length `delta`.
pub fn rnj_infer(shared: &PathDelayVector, cfg: &RnjConfig) -> Result<TreeTopology> {
    let delta = cfg.delta_for(shared);
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument(format!("rnj delta must be positive, got {delta}")));
    }
    ensure_realizable(shared)?;
    let ls = shared.leaf_set();
    let l = ls.len();
    let half = delta / 2.0;

    let mut nodes: Vec<Cluster> = (0..l)
        .map(|i| Cluster {
            depth: None,
            children: Vec::new(),
            min_leaf: i,
        })
        .collect();
    // Similarities between active clusters, indexed by node id.
    let mut sim: Vec<Vec<f64>> = vec![vec![0.0; l]; l];
    for (i, j) in ls.pairs() {
        sim[i][j] = shared.get(i, j);
        sim[j][i] = shared.get(i, j);
    }
    // Active clusters, kept sorted by smallest leaf.
    let mut active: Vec<usize> = (0..l).collect();

    while active.len() > 1 {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                if sim[a][b] > best.0 {
                    best = (sim[a][b], a, b);
                }
            }
        }
        let (m, anchor, _) = best;
        let group: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&u| u == anchor || sim[anchor][u] >= m - half)
            .collect();
        let mut children = Vec::new();
        for &g in &group {
            match nodes[g].depth {
                Some(d) if d - m < half => children.extend(nodes[g].children.iter().copied()),
                _ => children.push(g),
            }
        }
        children.sort_by_key(|&c| nodes[c].min_leaf);
        let id = nodes.len();
        nodes.push(Cluster {
            depth: Some(m),
            children,
            min_leaf: group.iter().map(|&g| nodes[g].min_leaf).min().expect("nonempty group"),
        });
        for row in sim.iter_mut() {
            row.push(0.0);
        }
        let mut new_row = vec![0.0; id + 1];
        for &w in &active {
            if !group.contains(&w) {
                let v = group.iter().map(|&g| sim[g][w]).fold(f64::NEG_INFINITY, f64::max);
                new_row[w] = v;
                sim[w][id] = v;
            }
        }
        sim.push(new_row);
        active.retain(|u| !group.contains(u));
        let at = active.partition_point(|&u| nodes[u].min_leaf < nodes[id].min_leaf);
        active.insert(at, id);
    }

    let top = active[0];
    let top_depth = nodes[top].depth.unwrap_or(0.0);
    let prefix = internal_prefix(ls);
    let mut names: Vec<String> = Vec::new();
    let mut parent: Vec<Option<usize>> = Vec::new();
    let mut delay: Vec<f64> = Vec::new();

    let (root, base) = if top_depth > half {
        names.push(format!("{prefix}s"));
        parent.push(None);
        delay.push(0.0);
        (Some(0), 0.0)
    } else {
        (None, top_depth)
    };
    // Preorder emission: (cluster, parent index in output, parent depth).
    let mut stack = vec![(top, root, base)];
    let mut internal = 0;
    while let Some((c, p, pdepth)) = stack.pop() {
        let idx = names.len();
        let node = &nodes[c];
        match node.depth {
            None => {
                names.push(ls.labels()[c].clone());
                delay.push(delta);
            }
            Some(d) => {
                if p.is_none() {
                    names.push(format!("{prefix}s"));
                    delay.push(0.0);
                } else {
                    internal += 1;
                    names.push(format!("{prefix}n{internal}"));
                    delay.push(d - pdepth);
                }
                for &ch in node.children.iter().rev() {
                    stack.push((ch, Some(idx), if p.is_none() { base } else { d }));
                }
            }
        }
        parent.push(p);
    }
    TreeTopology::from_parts(names, parent, delay, 0)
}

