use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    attack, fixtures, observation_seed, observe, roto_config, DefenseKind, ExperimentConfig,
};
use crate::baselines::{antitomo_defense, proto_defense, BaselineConfig};
use crate::defense::{perturb, train, training_space, GeneratorParams};
use crate::metrics::{evaluate, MetricReport};
use crate::theory::{
    bayes_success_probability, fano_bound, mutual_information, with_random_delays, ChannelSpec, DefenseFn,
    MI_MAX_LEAVES,
};
use crate::observation::NoiseConfig;
use crate::topology::{enumerate_topologies, read_topology, write_topology, TreeTopology};
use crate::{seeds, Error, Result};

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Writes the first fixture to `out/topology.txt`.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let tree = &fixtures(&ExperimentConfig { trials: 1, ..cfg.clone() })?[0];
    ensure_dir(out)?;
    let path = out.join("topology.txt");
    fs::write(&path, write_topology(tree))?;
    Ok(path)
}

/// Trains the generator on the first fixture; writes `generator.ckpt` and
/// `trace.csv` under `out`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    cfg.validate()?;
    let truth = &fixtures(&ExperimentConfig { trials: 1, ..cfg.clone() })?[0];
    let tc = roto_config(cfg, 0);
    let space = training_space(truth, &tc)?;
    let (theta, trace) = train(truth, &space, &tc)?;
    ensure_dir(out)?;
    let ckpt = out.join("generator.ckpt");
    let csv = out.join("trace.csv");
    theta.save(&ckpt)?;
    trace.save_csv(&csv)?;
    Ok((ckpt, csv))
}

/// Attacks the first fixture with the first configured attacker at
/// `noise.epsilon`, behind the checkpointed generator when one is
/// configured; writes `out/inferred.txt`.
pub fn cmd_attack(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let truth = &fixtures(&ExperimentConfig { trials: 1, ..cfg.clone() })?[0];
    let published = match &cfg.checkpoint_file {
        Some(p) => perturb(&GeneratorParams::load(p)?, truth)?.rounded(),
        None => truth.shared_path_vector(),
    };
    let seed = observation_seed(cfg, 0);
    let x_star = observe(&published, cfg.noise.epsilon, seed)?;
    let guess = attack(cfg, cfg.attacker[0], &x_star, seed)?;
    ensure_dir(out)?;
    let path = out.join("inferred.txt");
    fs::write(&path, write_topology(&guess))?;
    Ok(path)
}

/// Scores `inferred` against `truth`; writes `out/metrics.json`.
pub fn cmd_eval(truth: &Path, inferred: &Path, out: &Path) -> Result<(MetricReport, PathBuf)> {
    let report = evaluate(&read_topology(truth)?, &read_topology(inferred)?, false)?;
    ensure_dir(out)?;
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok((report, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub defense: DefenseKind,
    pub epsilon: f64,
    pub space_size: usize,
    pub mi_bits: f64,
    pub mi_std_error: f64,
    /// Fano bound at `mi_bits + 2 * mi_std_error`.
    pub fano_bound: f64,
    pub p_succ: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub pass: bool,
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "defense        {} (epsilon {} ms, |A| = {})", self.defense.name(), self.epsilon, self.space_size)?;
        writeln!(f, "I(A;X*)        {:.4} +/- {:.4} bits", self.mi_bits, self.mi_std_error)?;
        writeln!(f, "Fano bound     {:.4}", self.fano_bound)?;
        writeln!(f, "P_succ         {:.4} [{:.4}, {:.4}]", self.p_succ, self.ci_low, self.ci_high)?;
        write!(f, "{}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Channel of the first configured defense at the first noise level over
/// every topology on the fixture's leaf set, each carrying seeded delays.
pub fn bound_channel(cfg: &ExperimentConfig) -> Result<ChannelSpec> {
    let truth = &fixtures(&ExperimentConfig { trials: 1, ..cfg.clone() })?[0];
    let l = truth.leaf_set().len();
    if l > MI_MAX_LEAVES {
        return Err(Error::SpaceTooLarge {
            leaves: l,
            limit: MI_MAX_LEAVES,
        });
    }
    let space = with_random_delays(
        &enumerate_topologies(truth.leaf_set(), None)?,
        seeds::derive_str(cfg.rng_seed, "space"),
    )?;
    let noise = NoiseConfig::new(cfg.epsilons()[0], cfg.noise.rng_seed)?;
    let kind = cfg.defense[0];
    let member_seed = move |m: &TreeTopology| seeds::derive_str(seeds::derive_str(cfg.rng_seed, kind.name()), &m.canonical_form());
    let defense: Box<DefenseFn<'_>> = match kind {
        DefenseKind::None => Box::new(|m: &TreeTopology| Ok(m.shared_path_vector())),
        DefenseKind::Roto => {
            let theta = super::train_roto(truth, &roto_config(cfg, 0))?;
            Box::new(move |m: &TreeTopology| Ok(perturb(&theta, m)?.rounded()))
        }
        DefenseKind::Proto => Box::new(move |m: &TreeTopology| {
            let bc = BaselineConfig { rng_seed: member_seed(m), ..cfg.baseline };
            Ok(proto_defense(m, &bc)?.perturbed.rounded())
        }),
        DefenseKind::Antitomo => Box::new(move |m: &TreeTopology| {
            let bc = BaselineConfig { rng_seed: member_seed(m), ..cfg.baseline };
            Ok(antitomo_defense(m, &bc)?.perturbed.rounded())
        }),
    };
    ChannelSpec::new(space, defense.as_ref(), noise, cfg.quantization)
}

/// Mutual information, Fano bound and Bayes-matched success probability of
/// [`bound_channel`].
pub fn cmd_bound(cfg: &ExperimentConfig) -> Result<BoundReport> {
    cfg.validate()?;
    let ch = bound_channel(cfg)?;
    let mi = mutual_information(&ch, cfg.mi_samples, seeds::derive_str(cfg.rng_seed, "mi"))?;
    let p = bayes_success_probability(&ch, cfg.bound_trials, seeds::derive_str(cfg.rng_seed, "success"))?;
    let bound = fano_bound(mi.mean + 2.0 * mi.std_error, ch.space().len())?;
    Ok(BoundReport {
        defense: cfg.defense[0],
        epsilon: ch.noise().epsilon,
        space_size: ch.space().len(),
        mi_bits: mi.mean,
        mi_std_error: mi.std_error,
        fano_bound: bound,
        p_succ: p.p,
        ci_low: p.ci_low,
        ci_high: p.ci_high,
        pass: p.p <= bound,
    })
}
