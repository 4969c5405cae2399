//! Reference defenses that publish the delays of a fabricated tree.
//!
//! Proto publishes a random fake tree with fresh delays. AntiTomo samples
//! several fake trees, fits each one's delays as closely as possible to the
//! true vector and keeps the cheapest.

use serde::{Deserialize, Serialize};

use crate::attackers::LinearFit;
use crate::defense::regularization;
use crate::topology::{random_tree_over, PathDelayVector, Role, ShapeParams, TreeTopology};
use crate::{seeds, Error, Result};

/// Resamples allowed per AntiTomo candidate that lands on the truth.
pub const MAX_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub candidate_count: usize,
    pub rng_seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            candidate_count: 64,
            rng_seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidate_count == 0 {
            return Err(Error::ConfigInvalid("candidate_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// A published vector, the tree it pretends to come from, and its
/// perturbation cost `|X~ - X|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutput {
    pub perturbed: PathDelayVector,
    pub fake: TreeTopology,
    pub cost: f64,
}

/// Seed of attempt `attempt` of fake candidate `candidate`; Proto uses
/// candidate 0, attempt 0.
fn fake_seed(cfg: &BaselineConfig, candidate: usize, attempt: usize) -> u64 {
    seeds::derive(seeds::derive(seeds::derive_str(cfg.rng_seed, "fake"), candidate as u64), attempt as u64)
}

fn fake_tree(truth: &TreeTopology, seed: u64) -> Result<TreeTopology> {
    random_tree_over(truth.leaf_set(), seed, ShapeParams::default())
}

/// Proto: the shared-path vector of one random tree with fresh delays.
pub fn proto_defense(truth: &TreeTopology, cfg: &BaselineConfig) -> Result<BaselineOutput> {
    let fake = fake_tree(truth, fake_seed(cfg, 0, 0))?;
    let perturbed = fake.shared_path_vector().with_role(Role::Perturbed);
    let cost = regularization(&perturbed, &truth.shared_path_vector())?;
    Ok(BaselineOutput { perturbed, fake, cost })
}

/// AntiTomo: among `candidate_count` fake trees (never the truth), the one
/// whose least-squares delays come closest to the true vector.
pub fn antitomo_defense(truth: &TreeTopology, cfg: &BaselineConfig) -> Result<BaselineOutput> {
    cfg.validate()?;
    let x = truth.shared_path_vector();
    let truth_form = truth.canonical_form();
    let mut best: Option<(f64, TreeTopology, Vec<f64>)> = None;
    for c in 0..cfg.candidate_count {
        let fake = (0..=MAX_RETRIES)
            .map(|a| fake_tree(truth, fake_seed(cfg, c, a)))
            .find(|t| t.as_ref().map_or(true, |t| t.canonical_form() != truth_form))
            .ok_or(Error::NoCandidate(MAX_RETRIES))??;
        let fit = LinearFit::new(&fake);
        let (mu, _) = fit.fit(x.values());
        let pred = fit.predict(&mu);
        let cost = pred.iter().zip(x.values()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, fake, pred));
        }
    }
    let (cost, fake, pred) = best.expect("candidate_count >= 1");
    let perturbed = PathDelayVector::new(pred, Role::Perturbed, truth.leaf_set().clone())?;
    Ok(BaselineOutput { perturbed, fake, cost })
}
