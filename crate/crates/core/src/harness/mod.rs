//! Experiment configuration, grid execution and result files.
//!
//! Seeds split hierarchically from the experiment seed. Fixture trees use
//! `topology/trial`; defenses use `<defense>/trial`; observation noise and
//! attacker randomness use `obs/trial`, shared by every defense, attacker
//! and noise level so that cells are paired on common random numbers.

mod commands;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use commands::{cmd_attack, cmd_bound, cmd_eval, cmd_gen, cmd_train, BoundReport};

use crate::attackers::{
    mle_infer, rnj_infer, scale_free_beta, GibbsPosterior, LossTable, MleConfig, MuMode, RnjConfig,
};
use crate::baselines::{antitomo_defense, proto_defense, BaselineConfig};
use crate::defense::{perturb, train, training_space, GeneratorParams, TrainConfig, FULL_ENUMERATION_MAX_LEAVES};
use crate::metrics::{evaluate, MetricReport};
use crate::observation::{apply_positive_noise_with, project_realizable, NoiseConfig};
use crate::theory::DEFAULT_QUANTIZATION;
use crate::topology::{
    enumerate_topologies, local_neighborhood, random_tree, read_topology, PathDelayVector, ShapeParams, TopologySpace,
    TreeTopology,
};
use crate::{seeds, Error, Result};

pub const CSV_HEADER: &str = "defense,attack,epsilon,ted_sim,struct_sim,link_dist,seed";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefenseKind {
    None,
    Roto,
    Proto,
    Antitomo,
}

impl DefenseKind {
    pub fn name(self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Roto => "roto",
            DefenseKind::Proto => "proto",
            DefenseKind::Antitomo => "antitomo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Gibbs,
    Rnj,
    Mle,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Gibbs => "gibbs",
            AttackKind::Rnj => "rnj",
            AttackKind::Mle => "mle",
        }
    }
}

/// One JSON document; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Fixed topology for every trial; otherwise each trial draws a tree.
    pub topology_file: Option<PathBuf>,
    pub leaf_count: usize,
    pub max_fanout: usize,
    pub defense: Vec<DefenseKind>,
    pub attacker: Vec<AttackKind>,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    /// Noise levels of the grid; empty means just `noise.epsilon`.
    pub noise_sweep: Vec<f64>,
    pub trials: usize,
    pub baseline: BaselineConfig,
    pub mle: MleConfig,
    /// Minimum link length assumed by the RNJ attacker (ms).
    pub rnj_delta: f64,
    /// Observation grid for mutual-information estimates (ms).
    pub quantization: f64,
    pub mi_samples: usize,
    pub bound_trials: usize,
    /// Generator checkpoint used by `attack`.
    pub checkpoint_file: Option<PathBuf>,
    pub csv_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
    pub rng_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            topology_file: None,
            leaf_count: 5,
            max_fanout: 3,
            defense: vec![DefenseKind::None, DefenseKind::Roto],
            attacker: vec![AttackKind::Gibbs, AttackKind::Rnj],
            train: TrainConfig::default(),
            noise: NoiseConfig {
                epsilon: 0.1,
                rng_seed: 0,
            },
            noise_sweep: Vec::new(),
            trials: 5,
            baseline: BaselineConfig::default(),
            mle: MleConfig::default(),
            rnj_delta: 100.0,
            quantization: DEFAULT_QUANTIZATION,
            mi_samples: 500,
            bound_trials: 2000,
            checkpoint_file: None,
            csv_path: None,
            summary_path: None,
            rng_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.topology_file.is_none() && self.leaf_count < 2 {
            return bad(format!("leaf_count must be >= 2, got {}", self.leaf_count));
        }
        if self.max_fanout < 2 {
            return bad(format!("max_fanout must be >= 2, got {}", self.max_fanout));
        }
        if self.defense.is_empty() || self.attacker.is_empty() {
            return bad("defense and attacker lists must be nonempty".into());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.epsilons().iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return bad("noise levels must be finite and >= 0".into());
        }
        if !(self.rnj_delta > 0.0 && self.rnj_delta.is_finite()) {
            return bad(format!("rnj_delta must be positive, got {}", self.rnj_delta));
        }
        if !(self.quantization > 0.0 && self.quantization.is_finite()) {
            return bad(format!("quantization must be positive, got {}", self.quantization));
        }
        if self.mi_samples == 0 || self.bound_trials == 0 {
            return bad("mi_samples and bound_trials must be >= 1".into());
        }
        NoiseConfig::new(self.noise.epsilon, self.noise.rng_seed).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        self.train.validate().map_err(|e| Error::ConfigInvalid(format!("train: {e}")))?;
        self.baseline.validate()?;
        self.mle.validate().map_err(|e| Error::ConfigInvalid(format!("mle: {e}")))?;
        Ok(())
    }

    /// Noise levels of the grid, in order.
    pub fn epsilons(&self) -> Vec<f64> {
        if self.noise_sweep.is_empty() {
            vec![self.noise.epsilon]
        } else {
            self.noise_sweep.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub defense: DefenseKind,
    pub attacker: AttackKind,
    pub epsilon: f64,
    pub ted_similarity: f64,
    pub struct_similarity: f64,
    pub link_distance: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Per-cell aggregate over trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub defense: DefenseKind,
    pub attack: AttackKind,
    pub epsilon: f64,
    pub trials: usize,
    pub ted_sim: MeanStd,
    pub struct_sim: MeanStd,
    pub link_dist: MeanStd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub rng_seed: u64,
    pub cells: Vec<CellSummary>,
}

fn in_cell<T>(cell: impl FnOnce() -> String, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Cell {
        cell: cell(),
        source: Box::new(e),
    })
}

/// True tree of each trial.
pub fn fixtures(cfg: &ExperimentConfig) -> Result<Vec<TreeTopology>> {
    match &cfg.topology_file {
        Some(path) => Ok(vec![read_topology(path)?; cfg.trials]),
        None => {
            let params = ShapeParams {
                max_fanout: cfg.max_fanout,
            };
            let base = seeds::derive_str(cfg.rng_seed, "topology");
            (0..cfg.trials)
                .map(|t| random_tree(cfg.leaf_count, seeds::derive(base, t as u64), params))
                .collect()
        }
    }
}

/// Training configuration of the generator defending trial `trial`.
pub fn roto_config(cfg: &ExperimentConfig, trial: usize) -> TrainConfig {
    let base = seeds::derive(seeds::derive_str(cfg.rng_seed, "roto"), cfg.train.rng_seed);
    TrainConfig {
        rng_seed: seeds::derive(base, trial as u64),
        ..cfg.train.clone()
    }
}

/// Trained generator for `truth`.
pub fn train_roto(truth: &TreeTopology, tc: &TrainConfig) -> Result<GeneratorParams> {
    let space = training_space(truth, tc)?;
    Ok(train(truth, &space, tc)?.0)
}

fn baseline_config(cfg: &ExperimentConfig, kind: DefenseKind, trial: usize) -> BaselineConfig {
    BaselineConfig {
        rng_seed: seeds::derive(seeds::derive_str(cfg.rng_seed, kind.name()), trial as u64),
        ..cfg.baseline
    }
}

/// Published vector of `kind` for trial `trial`. Every defended vector is
/// rounded to whole milliseconds; the undefended one is the true vector.
pub fn defended_vector(
    cfg: &ExperimentConfig,
    kind: DefenseKind,
    truth: &TreeTopology,
    trial: usize,
) -> Result<PathDelayVector> {
    Ok(match kind {
        DefenseKind::None => truth.shared_path_vector(),
        DefenseKind::Roto => perturb(&train_roto(truth, &roto_config(cfg, trial))?, truth)?.rounded(),
        DefenseKind::Proto => proto_defense(truth, &baseline_config(cfg, kind, trial))?.perturbed.rounded(),
        DefenseKind::Antitomo => antitomo_defense(truth, &baseline_config(cfg, kind, trial))?.perturbed.rounded(),
    })
}

/// Seed shared by every cell of one trial.
pub fn observation_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    let base = seeds::derive(seeds::derive_str(cfg.rng_seed, "obs"), cfg.noise.rng_seed);
    seeds::derive(base, trial as u64)
}

/// Attacker view `X*` of a published vector.
pub fn observe(published: &PathDelayVector, epsilon: f64, seed: u64) -> Result<PathDelayVector> {
    let mut rng = seeds::rng(seeds::derive_str(seed, "noise"));
    project_realizable(&apply_positive_noise_with(published, epsilon, &mut rng))
}

/// Candidate support of the harness Gibbs attacker: every topology when
/// enumerable, otherwise a neighborhood of the RNJ estimate.
pub fn gibbs_support(cfg: &ExperimentConfig, x_star: &PathDelayVector, seed: u64) -> Result<TopologySpace> {
    if x_star.leaf_set().len() <= FULL_ENUMERATION_MAX_LEAVES {
        enumerate_topologies(x_star.leaf_set(), None)
    } else {
        let center = rnj_infer(x_star, &RnjConfig::fixed(cfg.rnj_delta))?;
        local_neighborhood(&center, cfg.train.candidate_limit, seeds::derive_str(seed, "support"))
    }
}

/// Run `kind` on `x_star`. The Gibbs attacker draws its inverse temperature
/// from the training grid and then one topology from its posterior.
pub fn attack(cfg: &ExperimentConfig, kind: AttackKind, x_star: &PathDelayVector, seed: u64) -> Result<TreeTopology> {
    let seed = seeds::derive_str(seed, kind.name());
    match kind {
        AttackKind::Rnj => rnj_infer(x_star, &RnjConfig::fixed(cfg.rnj_delta)),
        AttackKind::Mle => {
            let mc = MleConfig {
                rng_seed: seed,
                ..cfg.mle
            };
            Ok(mle_infer(x_star, x_star.leaf_set(), &mc)?.tree)
        }
        AttackKind::Gibbs => {
            let support = gibbs_support(cfg, x_star, seed)?;
            let table = LossTable::new(&support, MuMode::Fit)?;
            let grid = cfg.train.beta_grid();
            let mut rng = seeds::rng(seed);
            let beta = grid[rng.random_range(0..grid.len())];
            let post = GibbsPosterior::from_losses(
                table.losses(x_star.values()),
                scale_free_beta(beta, x_star.values()),
            )?;
            let pick = WeightedIndex::new(&post.weights)
                .map_err(|e| Error::InvalidArgument(format!("posterior weights: {e}")))?
                .sample(&mut rng);
            Ok(support.get(pick).clone())
        }
    }
}

/// Every `(defense, attacker, epsilon, trial)` cell, in that nesting order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let trees = fixtures(cfg)?;
    let eps = cfg.epsilons();

    let jobs: Vec<(DefenseKind, usize)> = cfg
        .defense
        .iter()
        .flat_map(|&d| (0..cfg.trials).map(move |t| (d, t)))
        .collect();
    let published: Vec<PathDelayVector> = jobs
        .par_iter()
        .map(|&(d, t)| {
            in_cell(
                || format!("defense={} trial={t}", d.name()),
                defended_vector(cfg, d, &trees[t], t),
            )
        })
        .collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (di, &d) in cfg.defense.iter().enumerate() {
        for &a in &cfg.attacker {
            for &e in &eps {
                for t in 0..cfg.trials {
                    cells.push((di, d, a, e, t));
                }
            }
        }
    }
    cells
        .par_iter()
        .map(|&(di, d, a, e, t)| {
            let seed = observation_seed(cfg, t);
            let run = || -> Result<ResultRow> {
                let x_star = observe(&published[di * cfg.trials + t], e, seed)?;
                let guess = attack(cfg, a, &x_star, seed)?;
                let m: MetricReport = evaluate(&trees[t], &guess, false)?;
                Ok(ResultRow {
                    defense: d,
                    attacker: a,
                    epsilon: e,
                    ted_similarity: m.ted_similarity,
                    struct_similarity: m.struct_similarity,
                    link_distance: m.link_distance,
                    seed,
                })
            };
            in_cell(
                || format!("defense={} attack={} epsilon={e} trial={t}", d.name(), a.name()),
                run(),
            )
        })
        .collect()
}

/// Mean and standard deviation per `(defense, attacker, epsilon)`, in first
/// appearance order.
pub fn summarize(rows: &[ResultRow], rng_seed: u64) -> ExperimentSummary {
    let mut cells: Vec<(DefenseKind, AttackKind, f64, Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        match cells
            .iter_mut()
            .find(|c| c.0 == r.defense && c.1 == r.attacker && c.2.to_bits() == r.epsilon.to_bits())
        {
            Some(c) => c.3.push(r),
            None => cells.push((r.defense, r.attacker, r.epsilon, vec![r])),
        }
    }
    let cells = cells
        .into_iter()
        .map(|(defense, attack, epsilon, rs)| {
            let col = |f: fn(&ResultRow) -> f64| MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            CellSummary {
                defense,
                attack,
                epsilon,
                trials: rs.len(),
                ted_sim: col(|r| r.ted_similarity),
                struct_sim: col(|r| r.struct_similarity),
                link_dist: col(|r| r.link_distance),
            }
        })
        .collect();
    ExperimentSummary { rng_seed, cells }
}

pub fn write_csv<W: Write>(mut w: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.defense.name(),
            r.attacker.name(),
            r.epsilon,
            r.ted_similarity,
            r.struct_similarity,
            r.link_distance,
            r.seed
        )?;
    }
    Ok(())
}

/// Paths the `run` command writes: the configured ones, or
/// `results.csv` and `summary.json` under `out`.
pub fn output_paths(cfg: &ExperimentConfig, out: &Path) -> (PathBuf, PathBuf) {
    (
        cfg.csv_path.clone().unwrap_or_else(|| out.join("results.csv")),
        cfg.summary_path.clone().unwrap_or_else(|| out.join("summary.json")),
    )
}

/// Run the grid and write the CSV and JSON summary.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let rows = run_experiment(cfg)?;
    let (csv, json) = output_paths(cfg, out);
    for p in [&csv, &json] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
    }
    let mut buf = Vec::new();
    write_csv(&mut buf, &rows)?;
    fs::write(&csv, buf)?;
    let summary = summarize(&rows, cfg.rng_seed);
    fs::write(&json, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((csv, json))
}
