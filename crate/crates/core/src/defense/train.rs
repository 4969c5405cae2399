use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generator::{perturb, GeneratorParams, GeneratorShape};
use super::regularization;
use crate::attackers::{observation_scale, rnj_infer, scale_free_beta, GibbsPosterior, LossTable, MuMode, RnjConfig};
use crate::metrics::cluster_symmetric_difference;
use crate::neuralcore::{spsa_gradient, Adam};
use crate::observation::{apply_positive_noise_with, project_realizable};
use crate::topology::{enumerate_topologies, local_neighborhood, PathDelayVector, TopologySpace, TreeTopology};
use crate::{seeds, Error, Result};

/// Largest leaf count for which the training support is fully enumerated.
pub const FULL_ENUMERATION_MAX_LEAVES: usize = 5;
/// Step halvings tried before an update is rejected.
pub const BACKTRACK_STEPS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_grid_size: usize,
    pub lambda_reg: f64,
    /// Noise standard deviation (ms).
    pub epsilon: f64,
    pub max_iters: usize,
    pub mc_samples: usize,
    pub candidate_limit: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub layers: usize,
    pub hidden_dim: usize,
    /// SPSA perturbation size in parameter space.
    pub spsa_step: f64,
    pub spsa_probes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta_min: 0.1,
            beta_max: 2.0,
            beta_grid_size: 8,
            lambda_reg: 0.1,
            epsilon: 0.1,
            max_iters: 100,
            mc_samples: 16,
            candidate_limit: 50,
            learning_rate: 0.01,
            rng_seed: 0,
            layers: 3,
            hidden_dim: 32,
            spsa_step: 0.01,
            spsa_probes: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max.is_finite()) {
            return bad(format!("need 0 < beta_min <= beta_max, got [{}, {}]", self.beta_min, self.beta_max));
        }
        if self.beta_grid_size == 0 {
            return bad("beta_grid_size must be at least 1".into());
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return bad(format!("lambda_reg must be >= 0, got {}", self.lambda_reg));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.mc_samples == 0 || self.candidate_limit == 0 || self.spsa_probes == 0 {
            return bad("mc_samples, candidate_limit and spsa_probes must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.spsa_step > 0.0) {
            return bad("learning_rate and spsa_step must be positive".into());
        }
        self.generator_shape().validate()
    }

    pub fn generator_shape(&self) -> GeneratorShape {
        GeneratorShape {
            layers: self.layers,
            hidden_dim: self.hidden_dim,
        }
    }

    /// Linearly spaced inverse temperatures from `beta_min` to `beta_max`.
    pub fn beta_grid(&self) -> Vec<f64> {
        let n = self.beta_grid_size;
        if n == 1 {
            return vec![self.beta_min];
        }
        (0..n)
            .map(|i| self.beta_min + (self.beta_max - self.beta_min) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Gibbs support used when training against `tree`: every topology when
/// the leaf count allows it, otherwise a seeded local neighborhood of the
/// neighbor-joining reconstruction of `tree`'s own vector.
pub fn training_space(tree: &TreeTopology, cfg: &TrainConfig) -> Result<TopologySpace> {
    if tree.leaf_set().len() <= FULL_ENUMERATION_MAX_LEAVES {
        return enumerate_topologies(tree.leaf_set(), None);
    }
    let center = rnj_infer(&tree.shared_path_vector(), &RnjConfig::default())?;
    local_neighborhood(&center, cfg.candidate_limit, seeds::derive_str(cfg.rng_seed, "support"))
}

/// Monte Carlo evaluator of the structural loss for one true tree and one
/// support, with the attacker's per-candidate fits and the distances to the
/// truth precomputed.
pub struct StructuralObjective {
    truth: PathDelayVector,
    table: LossTable,
    distance: Vec<f64>,
    epsilon: f64,
    mc_samples: usize,
    /// Squared delay unit of the true tree.
    unit2: f64,
    lambda_reg: f64,
}

impl StructuralObjective {
    pub fn new(tree: &TreeTopology, space: &TopologySpace, cfg: &TrainConfig) -> Result<Self> {
        if space.is_empty() {
            return Err(Error::EmptySpace);
        }
        if space.leaf_set() != tree.leaf_set() {
            return Err(Error::LeafSetMismatch);
        }
        if !space.contains(tree) {
            return Err(Error::NotInSpace);
        }
        let truth_clusters = tree.clusters();
        let distance = space
            .members()
            .iter()
            .map(|m| cluster_symmetric_difference(&truth_clusters, &m.clusters()) as f64)
            .collect();
        let truth = tree.shared_path_vector();
        let unit = observation_scale(truth.values());
        Ok(StructuralObjective {
            truth,
            table: LossTable::new(space, MuMode::Fit)?,
            distance,
            epsilon: cfg.epsilon,
            mc_samples: cfg.mc_samples,
            unit2: unit * unit,
            lambda_reg: cfg.lambda_reg,
        })
    }

    /// Distance from the truth to each support member.
    pub fn distances(&self) -> &[f64] {
        &self.distance
    }

    pub fn truth(&self) -> &PathDelayVector {
        &self.truth
    }

    /// `-E_{X*} E_{A' ~ P_beta}[d(A, A')]` for each `beta`, where the attacker
    /// measures its loss in units of its observation's scale (see
    /// [`scale_free_beta`]). Noise draw `n` is
    /// seeded by `derive(seed, n)` for every beta alike. Without noise a
    /// single draw is exact.
    pub fn struct_losses(&self, xt: &PathDelayVector, betas: &[f64], seed: u64) -> Result<Vec<f64>> {
        let draws = if self.epsilon > 0.0 { self.mc_samples } else { 1 };
        let per_draw = (0..draws)
            .into_par_iter()
            .map(|n| {
                let mut rng = seeds::rng(seeds::derive(seed, n as u64));
                let noisy = apply_positive_noise_with(xt, self.epsilon, &mut rng);
                let x_star = project_realizable(&noisy)?;
                let losses = self.table.losses(x_star.values());
                betas
                    .iter()
                    .map(|&b| {
                        let post = GibbsPosterior::from_losses(losses.clone(), scale_free_beta(b, x_star.values()))?;
                        Ok(post.expect(|i| self.distance[i]))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = vec![0.0; betas.len()];
        for row in &per_draw {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(out.into_iter().map(|v| -v / draws as f64).collect())
    }

    /// `L_struct(beta) + lambda * |X~ - X|^2 / unit^2`, with the unit the true
    /// tree's largest shared delay.
    pub fn objective(&self, xt: &PathDelayVector, beta: f64, seed: u64) -> Result<f64> {
        let s = self.struct_losses(xt, &[beta], seed)?[0];
        Ok(s + self.scaled_reg(xt)?)
    }

    pub fn scaled_reg(&self, xt: &PathDelayVector) -> Result<f64> {
        Ok(self.lambda_reg * regularization(xt, &self.truth)? / self.unit2)
    }
}

/// Monte Carlo structural loss of `theta` against a `beta`-attacker,
/// seeded by `cfg.rng_seed`.
pub fn structural_loss(
    theta: &GeneratorParams,
    beta: f64,
    tree: &TreeTopology,
    space: &TopologySpace,
    cfg: &TrainConfig,
) -> Result<f64> {
    let obj = StructuralObjective::new(tree, space, cfg)?;
    Ok(obj.struct_losses(&perturb(theta, tree)?, &[beta], cfg.rng_seed)?[0])
}

/// Index of the first maximum; NaN never wins.
fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Grid point maximizing the structural loss (the attacker most accurate
/// against `theta`); ties go to the smallest beta.
pub fn select_worst_beta(
    theta: &GeneratorParams,
    tree: &TreeTopology,
    space: &TopologySpace,
    cfg: &TrainConfig,
) -> Result<f64> {
    cfg.validate()?;
    let obj = StructuralObjective::new(tree, space, cfg)?;
    let grid = cfg.beta_grid();
    let losses = obj.struct_losses(&perturb(theta, tree)?, &grid, cfg.rng_seed)?;
    Ok(grid[argmax_first(&losses)])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub beta_star: f64,
    /// `L_struct(theta, beta*) + lambda * reg / unit^2` before the update.
    pub objective: f64,
    /// Raw `|X~ - X|^2` in ms^2 before the update.
    pub reg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
    /// Updates that passed the acceptance check.
    pub accepted: usize,
}

impl TrainingTrace {
    /// Moving average of the objective over a trailing window.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.rows.len())
            .map(|t| {
                let lo = (t + 1).saturating_sub(w);
                let slice = &self.rows[lo..=t];
                slice.iter().map(|r| r.objective).sum::<f64>() / slice.len() as f64
            })
            .collect()
    }

    /// True when the smoothed objective never rises by more than `tol`
    /// (relative to its magnitude, floored at 1) from index `window` on.
    pub fn smoothed_nonincreasing(&self, window: usize, tol: f64) -> bool {
        let s = self.smoothed(window);
        (window.max(1)..s.len()).all(|t| s[t] <= s[t - 1] + tol * s[t - 1].abs().max(1.0))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iter,beta_star,objective,reg")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.iter, r.beta_star, r.objective, r.reg)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

/// Generator at iteration zero for `cfg`.
pub fn initial_params(cfg: &TrainConfig) -> Result<GeneratorParams> {
    GeneratorParams::new(cfg.generator_shape(), seeds::derive_str(cfg.rng_seed, "init"))
}

/// Alternating min-max training against the Gibbs attacker.
///
/// Each iteration selects the worst-case beta on the current generator, then
/// takes one Adam step along an SPSA gradient of the objective at that beta.
/// All evaluations inside an iteration share its noise draws, and the step is
/// halved until it does not increase that common-random-number objective
/// (rejected after [`BACKTRACK_STEPS`] halvings).
pub fn train(tree: &TreeTopology, space: &TopologySpace, cfg: &TrainConfig) -> Result<(GeneratorParams, TrainingTrace)> {
    cfg.validate()?;
    let obj = StructuralObjective::new(tree, space, cfg)?;
    let mut theta = initial_params(cfg)?;
    // Fail fast on feature errors before the loop.
    perturb(&theta, tree)?;
    let grid = cfg.beta_grid();
    let mut flat = theta.flat();
    let mut adam = Adam::new(flat.len(), cfg.learning_rate);
    let mut trace = TrainingTrace::default();
    let iter_root = seeds::derive_str(cfg.rng_seed, "iter");

    for it in 0..cfg.max_iters {
        let seed = seeds::derive(iter_root, it as u64);
        let xt = perturb(&theta, tree)?;
        let losses = obj.struct_losses(&xt, &grid, seed)?;
        let b = argmax_first(&losses);
        let beta = grid[b];
        let reg = regularization(&xt, obj.truth())?;
        let j0 = losses[b] + obj.scaled_reg(&xt)?;
        if !j0.is_finite() {
            return Err(Error::DivergedObjective(it));
        }
        trace.rows.push(TraceRow {
            iter: it,
            beta_star: beta,
            objective: j0,
            reg,
        });

        let eval = |p: &[f64]| -> f64 {
            theta
                .with_flat(p)
                .and_then(|t| perturb(&t, tree))
                .and_then(|x| obj.objective(&x, beta, seed))
                .unwrap_or(f64::INFINITY)
        };
        let grad = spsa_gradient(&eval, &flat, cfg.spsa_step, cfg.spsa_probes, seeds::derive_str(seed, "spsa"))
            .map_err(|_| Error::DivergedObjective(it))?;
        let step = adam.step_direction(&grad);
        let mut scale = 1.0;
        for _ in 0..=BACKTRACK_STEPS {
            let cand: Vec<f64> = flat.iter().zip(&step).map(|(t, d)| t - scale * d).collect();
            if eval(&cand) <= j0 {
                flat = cand;
                theta = theta.with_flat(&flat)?;
                trace.accepted += 1;
                break;
            }
            scale *= 0.5;
        }
    }
    if !trace.smoothed_nonincreasing(10, 0.05) {
        log::warn!("smoothed training objective rose by more than 5% after iteration 10");
    }
    Ok((theta, trace))
}
