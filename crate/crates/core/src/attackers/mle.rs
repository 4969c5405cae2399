use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::LinearFit;
use crate::topology::{Attach, LeafSet, LinkDelays, PathDelayVector, Shape, TreeTopology};
use crate::{seeds, Error, Result};

/// Consecutive invalid proposals tolerated before giving up.
pub const MAX_INVALID_RUN: usize = 1000;

/// Penalized-likelihood chain settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleConfig {
    /// Penalty per internal node; `None` means `0.5 * log2(k)` with `k` the
    /// number of leaf pairs.
    pub lambda_pen: Option<f64>,
    pub iters: usize,
    /// Probabilities of (split, contract, regraft) proposals.
    pub proposal_mix: [f64; 3],
    /// Per-pair observation variance (ms^2).
    pub sigma2: f64,
    pub rng_seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            lambda_pen: None,
            iters: 10_000,
            proposal_mix: [0.3, 0.3, 0.4],
            sigma2: 1.0,
            rng_seed: 0,
        }
    }
}

impl MleConfig {
    pub fn lambda_for(&self, leaf_count: usize) -> f64 {
        self.lambda_pen.unwrap_or_else(|| {
            let k = leaf_count * (leaf_count - 1) / 2;
            0.5 * (k as f64).log2()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.proposal_mix.iter().sum();
        if self.proposal_mix.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "proposal mix must be nonnegative and sum to 1, got {:?}",
                self.proposal_mix
            )));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if let Some(l) = self.lambda_pen {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("lambda_pen must be >= 0, got {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MleDiagnostics {
    pub iterations: usize,
    /// Proposals made and accepted per move kind (split, contract, regraft).
    pub proposed: [usize; 3],
    pub accepted: [usize; 3],
    pub invalid: usize,
    pub acceptance_rate: f64,
    pub initial_score: f64,
    pub best_score: f64,
}

#[derive(Clone, Debug)]
pub struct MleResult {
    pub tree: TreeTopology,
    pub diagnostics: MleDiagnostics,
}

/// `-|x - A mu_hat|^2 / (2 sigma^2) - lambda * n(T)`, with `n(T)` the number of
/// internal nodes including the root and constants of the Gaussian density
/// dropped.
pub fn penalized_log_likelihood(x: &PathDelayVector, tree: &TreeTopology, sigma2: f64, lambda: f64) -> Result<f64> {
    if x.leaf_set() != tree.leaf_set() {
        return Err(Error::LeafSetMismatch);
    }
    let loss = LinearFit::new(tree).fit(x.values()).1;
    Ok(-loss / (2.0 * sigma2) - lambda * tree.internal_count() as f64)
}

struct Scorer<'a> {
    x: &'a [f64],
    leaf_set: &'a LeafSet,
    sigma2: f64,
    lambda: f64,
    cache: HashMap<String, f64>,
}

impl Scorer<'_> {
    fn score(&mut self, shape: &Shape) -> Result<f64> {
        let key = shape.canonical(self.leaf_set);
        if let Some(&s) = self.cache.get(&key) {
            return Ok(s);
        }
        let tree = shape.to_tree(self.leaf_set)?;
        let loss = LinearFit::new(&tree).fit(self.x).1;
        let s = -loss / (2.0 * self.sigma2) - self.lambda * shape.internal_count() as f64;
        self.cache.insert(key, s);
        Ok(s)
    }
}

/// Metropolis search over tree shapes from the star, returning the best
/// penalized state visited with its fitted link delays.
pub fn mle_infer(x_star: &PathDelayVector, leaf_set: &LeafSet, cfg: &MleConfig) -> Result<MleResult> {
    cfg.validate()?;
    if x_star.leaf_set() != leaf_set {
        return Err(Error::LeafSetMismatch);
    }
    let l = leaf_set.len();
    let mut scorer = Scorer {
        x: x_star.values(),
        leaf_set,
        sigma2: cfg.sigma2,
        lambda: cfg.lambda_for(l),
        cache: HashMap::new(),
    };
    let mut state = Shape::star(l);
    let mut score = scorer.score(&state)?;
    let mut diag = MleDiagnostics {
        initial_score: score,
        best_score: score,
        ..MleDiagnostics::default()
    };
    let mut best = state.clone();
    let mut rng = seeds::rng(cfg.rng_seed);
    let mut invalid_run = 0;

    if l > 2 {
        for _ in 0..cfg.iters {
            diag.iterations += 1;
            let u: f64 = rng.random();
            let kind = if u < cfg.proposal_mix[0] {
                0
            } else if u < cfg.proposal_mix[0] + cfg.proposal_mix[1] {
                1
            } else {
                2
            };
            diag.proposed[kind] += 1;
            let proposal = match kind {
                0 => propose_split(&state, &mut rng),
                1 => propose_contract(&state, &mut rng),
                _ => propose_regraft(&state, &mut rng),
            };
            let Some(next) = proposal else {
                diag.invalid += 1;
                invalid_run += 1;
                if invalid_run >= MAX_INVALID_RUN {
                    return Err(Error::ChainDiverged(invalid_run));
                }
                continue;
            };
            invalid_run = 0;
            let next_score = scorer.score(&next)?;
            let log_ratio = next_score - score;
            if log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp() {
                diag.accepted[kind] += 1;
                state = next;
                state.compact();
                score = next_score;
                if score > diag.best_score {
                    diag.best_score = score;
                    best = state.clone();
                }
            }
        }
    }
    let total: usize = diag.accepted.iter().sum();
    diag.acceptance_rate = if diag.iterations == 0 {
        0.0
    } else {
        total as f64 / diag.iterations as f64
    };
    Ok(MleResult {
        tree: with_fitted_delays(&best, leaf_set, x_star.values())?,
        diagnostics: diag,
    })
}

fn propose_split<R: Rng>(s: &Shape, rng: &mut R) -> Option<Shape> {
    let wide: Vec<usize> = s.internal_nodes().filter(|&v| s.children(v).len() >= 3).collect();
    let &v = wide.choose(rng)?;
    let kids = s.children(v);
    let group: Vec<usize> = kids.iter().copied().filter(|_| rng.random::<bool>()).collect();
    s.split(v, &group)
}

fn propose_contract<R: Rng>(s: &Shape, rng: &mut R) -> Option<Shape> {
    let inner: Vec<usize> = s.internal_nodes().filter(|&v| v != s.root()).collect();
    let &v = inner.choose(rng)?;
    s.contract(v)
}

fn propose_regraft<R: Rng>(s: &Shape, rng: &mut R) -> Option<Shape> {
    let movable: Vec<usize> = s.nodes().filter(|&v| v != s.root()).collect();
    let &u = movable.choose(rng)?;
    let nodes: Vec<usize> = s.nodes().collect();
    let internal: Vec<usize> = s.internal_nodes().collect();
    // Targets: internal nodes as parents, any node's link, or above the root.
    let slots = internal.len() + nodes.len() + 1;
    let pick = rng.random_range(0..slots);
    let target = if pick < internal.len() {
        Attach::Child(internal[pick])
    } else if pick < internal.len() + nodes.len() {
        Attach::Edge(nodes[pick - internal.len()])
    } else {
        Attach::AboveRoot
    };
    s.regraft(u, target)
}

/// Materialize `shape` with fitted internal delays (floored at a small
/// positive value) and unit leaf links.
fn with_fitted_delays(shape: &Shape, leaf_set: &LeafSet, x: &[f64]) -> Result<TreeTopology> {
    let unit = shape.to_tree(leaf_set)?;
    let fit = LinearFit::new(&unit);
    let (mu, _) = fit.fit(x);
    let mut delays: Vec<f64> = unit.links().iter().map(|&c| unit.link_delay(c)).collect();
    for (col, &node) in fit.column_nodes().iter().enumerate() {
        let at = unit.links().iter().position(|&c| c == node).expect("column is a link");
        delays[at] = mu[col].max(1e-6);
    }
    unit.with_link_delays(&LinkDelays::new(delays)?)
}
