//! The noisy observation channel.
//!
//! An attacker sees the defender's vector plus one-sided Gaussian noise, and
//! then snaps the result onto the set of vectors that some rooted tree can
//! produce. For shared-path similarities a vector is tree-realizable exactly
//! when, for every leaf triple, the two smallest of the three pairwise values
//! are equal.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::topology::{PathDelayVector, Role};
use crate::{seeds, Error, Result};

/// Relative tolerance of the three-point test.
pub const REALIZABILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation in ms.
    pub epsilon: f64,
    pub rng_seed: u64,
}

impl NoiseConfig {
    pub fn new(epsilon: f64, rng_seed: u64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(NoiseConfig { epsilon, rng_seed })
    }
}

/// `X* = X~ + max(0, N(0, eps^2))`, entrywise, seeded from `cfg`.
pub fn apply_positive_noise(xt: &PathDelayVector, cfg: &NoiseConfig) -> PathDelayVector {
    apply_positive_noise_with(xt, cfg.epsilon, &mut seeds::rng(cfg.rng_seed))
}

/// Same channel, drawing from a caller-owned generator.
pub fn apply_positive_noise_with<R: Rng + ?Sized>(
    xt: &PathDelayVector,
    epsilon: f64,
    rng: &mut R,
) -> PathDelayVector {
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return xt.clone();
    }
    let normal = Normal::new(0.0, epsilon).expect("epsilon is finite and positive");
    let values = xt
        .values()
        .iter()
        .map(|&v| v + normal.sample(rng).max(0.0))
        .collect();
    PathDelayVector::from_raw(values, xt.role(), xt.leaf_set().clone())
}

/// Single-linkage cophenetic projection onto tree-realizable vectors.
///
/// Leaf pairs are merged in order of decreasing similarity; the output value
/// of a pair is the level at which its two leaves first share a cluster.
/// Equivalently, each output entry is the largest bottleneck value over all
/// leaf paths joining the pair, so the output dominates the input and equals
/// it when the input is already realizable.
pub fn project_realizable(x: &PathDelayVector) -> Result<PathDelayVector> {
    check_nonnegative(x)?;
    let ls = x.leaf_set();
    let l = ls.len();
    let mut order: Vec<(usize, usize, usize)> = ls
        .pairs()
        .enumerate()
        .map(|(r, (i, j))| (r, i, j))
        .collect();
    // Ties resolve to the lexicographically smallest pair, which is the
    // smallest pair index.
    order.sort_by(|a, b| x.values()[b.0].total_cmp(&x.values()[a.0]).then(a.0.cmp(&b.0)));

    let mut members: Vec<Vec<usize>> = (0..l).map(|i| vec![i]).collect();
    let mut owner: Vec<usize> = (0..l).collect();
    let mut out = vec![0.0; x.len()];
    let mut merges = 0;
    for (r, i, j) in order {
        let (a, b) = (owner[i], owner[j]);
        if a == b {
            continue;
        }
        let level = x.values()[r];
        for &p in &members[a] {
            for &q in &members[b] {
                let (p, q) = if p < q { (p, q) } else { (q, p) };
                out[ls.pair_index(p, q)] = level;
            }
        }
        let (keep, drop) = if members[a].len() >= members[b].len() { (a, b) } else { (b, a) };
        let moved = std::mem::take(&mut members[drop]);
        for &v in &moved {
            owner[v] = keep;
        }
        members[keep].extend(moved);
        merges += 1;
        if merges == l - 1 {
            break;
        }
    }
    Ok(PathDelayVector::from_raw(out, Role::Observed, ls.clone()))
}

/// True iff every leaf triple has its two smallest values equal.
pub fn is_realizable(x: &PathDelayVector) -> bool {
    first_violation(x).is_none()
}

/// The first triple `(i, j, k)` (leaf positions, lexicographic order) whose
/// two smallest values differ by more than the tolerance.
pub fn first_violation(x: &PathDelayVector) -> Option<(usize, usize, usize)> {
    let ls = x.leaf_set();
    let l = ls.len();
    let scale = x.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tol = REALIZABILITY_TOL * scale;
    for i in 0..l {
        for j in i + 1..l {
            let xij = x.get(i, j);
            for k in j + 1..l {
                let mut t = [xij, x.get(i, k), x.get(j, k)];
                t.sort_by(f64::total_cmp);
                if t[1] - t[0] > tol {
                    return Some((i, j, k));
                }
            }
        }
    }
    None
}

/// [`first_violation`] as an error carrying the offending leaf labels.
pub fn ensure_realizable(x: &PathDelayVector) -> Result<()> {
    match first_violation(x) {
        None => Ok(()),
        Some((i, j, k)) => {
            let lab = x.leaf_set().labels();
            Err(Error::NotRealizable(lab[i].clone(), lab[j].clone(), lab[k].clone()))
        }
    }
}

fn check_nonnegative(x: &PathDelayVector) -> Result<()> {
    match x.values().iter().position(|v| !(*v >= 0.0)) {
        None => Ok(()),
        Some(index) => Err(Error::NegativeEntry {
            index,
            value: x.values()[index],
        }),
    }
}
