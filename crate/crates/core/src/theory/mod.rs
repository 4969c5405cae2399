//! Information-theoretic instrumentation of the observation channel.
//!
//! A [`ChannelSpec`] is the discrete channel from a uniformly drawn topology
//! to the attacker's projected, noisy observation. On enumerable spaces the
//! mutual information of that channel is estimated by plug-in counting over
//! a quantized observation alphabet; all information quantities are in bits.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attackers::{scale_free_beta, GibbsPosterior, LossTable, MuMode};
use crate::metrics::cluster_symmetric_difference;
use crate::observation::{apply_positive_noise_with, project_realizable, NoiseConfig};
use crate::topology::{LinkDelays, PathDelayVector, Role, TopologySpace, TreeTopology, DELAY_RANGE_MS};
use crate::{seeds, Error, Result};

/// Largest leaf count for which the mutual information is estimated.
pub const MI_MAX_LEAVES: usize = 5;
/// Bootstrap resamples behind the reported standard error.
pub const BOOTSTRAP_RESAMPLES: usize = 20;
/// Default observation grid in ms.
pub const DEFAULT_QUANTIZATION: f64 = 0.05;

const WILSON_Z: f64 = 1.959_963_984_540_054;

/// Map from a topology to the vector the defender publishes for it.
pub type DefenseFn<'a> = dyn Fn(&TreeTopology) -> Result<PathDelayVector> + Send + Sync + 'a;

/// Topology -> observation channel under a uniform prior on `space`.
#[derive(Clone)]
pub struct ChannelSpec {
    space: TopologySpace,
    templates: Arc<[PathDelayVector]>,
    table: Arc<LossTable>,
    noise: NoiseConfig,
    quantization: f64,
}

impl std::fmt::Debug for ChannelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelSpec")
            .field("space", &self.space.len())
            .field("noise", &self.noise)
            .field("quantization", &self.quantization)
            .finish()
    }
}

impl ChannelSpec {
    /// Applies `defense` to every member once; the published vectors are
    /// fixed for the life of the channel.
    pub fn new(space: TopologySpace, defense: &DefenseFn<'_>, noise: NoiseConfig, quantization: f64) -> Result<Self> {
        if space.is_empty() {
            return Err(Error::EmptySpace);
        }
        if !(quantization > 0.0 && quantization.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quantization must be positive, got {quantization}"
            )));
        }
        let templates = space
            .members()
            .iter()
            .map(|t| {
                let x = defense(t)?;
                if x.leaf_set() != space.leaf_set() {
                    return Err(Error::LeafSetMismatch);
                }
                Ok(x.with_role(Role::Perturbed))
            })
            .collect::<Result<Vec<_>>>()?;
        let table = Arc::new(LossTable::new(&space, MuMode::Templates(&templates))?);
        Ok(ChannelSpec {
            space,
            templates: templates.into(),
            table,
            noise,
            quantization,
        })
    }

    /// The undefended channel: every topology publishes its own vector.
    pub fn identity(space: TopologySpace, noise: NoiseConfig, quantization: f64) -> Result<Self> {
        ChannelSpec::new(space, &|t: &TreeTopology| Ok(t.shared_path_vector()), noise, quantization)
    }

    pub fn space(&self) -> &TopologySpace {
        &self.space
    }

    /// Published vector of member `i`.
    pub fn template(&self, i: usize) -> &PathDelayVector {
        &self.templates[i]
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    pub fn quantization(&self) -> f64 {
        self.quantization
    }

    /// Projected noisy observation of member `i`.
    pub fn observe<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<PathDelayVector> {
        project_realizable(&apply_positive_noise_with(&self.templates[i], self.noise.epsilon, rng))
    }

    /// Seed of draw `n` of a computation seeded with `rng_seed`; mixes in the
    /// noise configuration's own seed.
    fn draw_seed(&self, rng_seed: u64, n: u64) -> u64 {
        seeds::derive(seeds::derive(self.noise.rng_seed, rng_seed), n)
    }

    fn quantize(&self, x: &PathDelayVector) -> Vec<i64> {
        x.values().iter().map(|v| (v / self.quantization).round() as i64).collect()
    }

    /// MAP member of the Gibbs attacker that knows every published vector.
    pub fn bayes_map(&self, x_star: &PathDelayVector) -> Result<usize> {
        Ok(GibbsPosterior::from_losses(self.table.losses(x_star.values()), 1.0)?.map_index())
    }
}

/// Copy of `space` whose members carry seeded link delays drawn uniformly
/// from [`DELAY_RANGE_MS`].
pub fn with_random_delays(space: &TopologySpace, rng_seed: u64) -> Result<TopologySpace> {
    let dist = Uniform::new_inclusive(DELAY_RANGE_MS.0, DELAY_RANGE_MS.1).expect("valid range");
    let trees = space
        .members()
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut rng = seeds::rng(seeds::derive(rng_seed, i as u64));
            let mu = LinkDelays::new((0..t.link_count()).map(|_| dist.sample(&mut rng)).collect())?;
            t.with_link_delays(&mu)
        })
        .collect::<Result<Vec<_>>>()?;
    TopologySpace::from_trees(trees)
}

/// Fano upper bound on the success probability of any attacker,
/// `min(1, (I + 1) / log2 |A|)`.
pub fn fano_bound(mi_bits: f64, space_size: usize) -> Result<f64> {
    if space_size < 2 {
        return Err(Error::SpaceTooSmall(space_size));
    }
    if !(mi_bits >= 0.0) {
        return Err(Error::InvalidArgument(format!("mutual information must be >= 0, got {mi_bits}")));
    }
    Ok(((mi_bits + 1.0) / (space_size as f64).log2()).min(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// `H(A | X*)` in bits of an empirical joint given as `(observation id,
/// member)` pairs.
fn conditional_entropy(mut pairs: Vec<(usize, usize)>) -> f64 {
    let total = pairs.len() as f64;
    pairs.sort_unstable();
    let mut h = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let key = pairs[i].0;
        let mut j = i;
        let mut counts = Vec::new();
        while j < pairs.len() && pairs[j].0 == key {
            let topo = pairs[j].1;
            let mut k = j;
            while k < pairs.len() && pairs[k] == (key, topo) {
                k += 1;
            }
            counts.push((k - j) as f64);
            j = k;
        }
        let nx: f64 = counts.iter().sum();
        let hx: f64 = counts.iter().map(|&c| -(c / nx) * (c / nx).log2()).sum();
        h += nx / total * hx;
        i = j;
    }
    h
}

/// Plug-in `I(A; X*)` on the quantized channel with `samples_per_topology`
/// draws per member. The standard error is the spread over
/// [`BOOTSTRAP_RESAMPLES`] stratified bootstrap resamples.
pub fn mutual_information(ch: &ChannelSpec, samples_per_topology: usize, rng_seed: u64) -> Result<Estimate> {
    let l = ch.space.leaf_set().len();
    if l > MI_MAX_LEAVES {
        return Err(Error::SpaceTooLarge {
            leaves: l,
            limit: MI_MAX_LEAVES,
        });
    }
    if samples_per_topology == 0 {
        return Err(Error::InvalidArgument("samples_per_topology must be >= 1".into()));
    }
    let m = ch.space.len();
    let keys: Vec<Vec<Vec<i64>>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::rng(ch.draw_seed(rng_seed, i as u64));
            (0..samples_per_topology)
                .map(|_| ch.observe(i, &mut rng).map(|x| ch.quantize(&x)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut alphabet: Vec<&Vec<i64>> = keys.iter().flatten().collect();
    alphabet.sort();
    alphabet.dedup();
    let ids: Vec<Vec<usize>> = keys
        .iter()
        .map(|ks| ks.iter().map(|k| alphabet.binary_search(&k).expect("interned")).collect())
        .collect();

    let h_a = (m as f64).log2();
    let mi = |pairs: Vec<(usize, usize)>| (h_a - conditional_entropy(pairs)).clamp(0.0, h_a);
    let point = mi(ids
        .iter()
        .enumerate()
        .flat_map(|(t, xs)| xs.iter().map(move |&x| (x, t)))
        .collect());

    let mut rng = seeds::rng(seeds::derive_str(rng_seed, "bootstrap"));
    let boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let mut pairs = Vec::with_capacity(m * samples_per_topology);
            for (t, xs) in ids.iter().enumerate() {
                for _ in 0..samples_per_topology {
                    pairs.push((xs[rng.random_range(0..xs.len())], t));
                }
            }
            mi(pairs)
        })
        .collect();
    Ok(Estimate {
        mean: point,
        std_error: sample_std(&boots),
    })
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Monte Carlo estimate of `E_{X*} E_{A' ~ P_beta(.|X*)} d(truth, A')` for
/// the Gibbs attacker that fits delays per candidate, with the same distance
/// and temperature scaling as the trainer.
pub fn expected_structural_divergence(
    ch: &ChannelSpec,
    truth: &TreeTopology,
    beta: f64,
    mc: usize,
    rng_seed: u64,
) -> Result<Estimate> {
    let idx = ch.space.position(truth).ok_or(Error::NotInSpace)?;
    if mc == 0 {
        return Err(Error::InvalidArgument("mc must be >= 1".into()));
    }
    let table = LossTable::new(&ch.space, MuMode::Fit)?;
    let truth_clusters = truth.clusters();
    let dist: Vec<f64> = ch
        .space
        .members()
        .iter()
        .map(|m| cluster_symmetric_difference(&truth_clusters, &m.clusters()) as f64)
        .collect();
    let draws: Vec<f64> = (0..mc as u64)
        .into_par_iter()
        .map(|n| {
            let mut rng = seeds::rng(ch.draw_seed(rng_seed, n));
            let x = ch.observe(idx, &mut rng)?;
            let post = GibbsPosterior::from_losses(table.losses(x.values()), scale_free_beta(beta, x.values()))?;
            Ok(post.expect(|i| dist[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = draws.len() as f64;
    Ok(Estimate {
        mean: draws.iter().sum::<f64>() / n,
        std_error: sample_std(&draws) / n.sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBoundReport {
    pub beta: f64,
    pub c_d: f64,
    pub expected_distance: f64,
    pub entropy: f64,
    pub bound_rhs: f64,
    pub holds: bool,
}

impl EntropyBoundReport {
    pub fn margin(&self) -> f64 {
        self.entropy - self.bound_rhs
    }
}

/// Distance-Gibbs posterior `P(A') ~ exp(-beta d(truth, A'))` over `space`.
pub fn distance_gibbs_posterior(space: &TopologySpace, truth: &TreeTopology, beta: f64) -> Result<GibbsPosterior> {
    if space.leaf_set() != truth.leaf_set() {
        return Err(Error::LeafSetMismatch);
    }
    let tc = truth.clusters();
    let d = space
        .members()
        .iter()
        .map(|m| cluster_symmetric_difference(&tc, &m.clusters()) as f64)
        .collect();
    GibbsPosterior::from_losses(d, beta)
}

/// Checks `H(A | X*) >= E[d] / C_d - log2 C_d` with `C_d = log2 |A| / beta`
/// on the distance-Gibbs posterior of `truth` over `space`.
pub fn check_entropy_bound(space: &TopologySpace, truth: &TreeTopology, beta: f64) -> Result<EntropyBoundReport> {
    let post = distance_gibbs_posterior(space, truth, beta)?;
    entropy_bound_report(&post, beta, space.len())
}

/// The same check on a supplied posterior whose losses are the distances.
pub fn entropy_bound_report(posterior: &GibbsPosterior, beta: f64, space_size: usize) -> Result<EntropyBoundReport> {
    if space_size < 2 {
        return Err(Error::SpaceTooSmall(space_size));
    }
    let limit = (space_size as f64).log2();
    if !(beta > 0.0 && beta <= limit) {
        return Err(Error::PremiseViolated { beta, limit });
    }
    let c_d = limit / beta;
    let expected_distance = posterior.expect(|i| posterior.losses[i]);
    let entropy = posterior.entropy_bits();
    let bound_rhs = expected_distance / c_d - c_d.log2();
    Ok(EntropyBoundReport {
        beta,
        c_d,
        expected_distance,
        entropy,
        bound_rhs,
        holds: entropy >= bound_rhs - 1e-9,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessEstimate {
    pub successes: usize,
    pub trials: usize,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Fraction of trials in which `attacker` recovers a uniformly drawn member
/// exactly (by canonical form) from its channel observation.
pub fn empirical_success_probability<F>(ch: &ChannelSpec, attacker: F, trials: usize, rng_seed: u64) -> Result<SuccessEstimate>
where
    F: Fn(&PathDelayVector) -> Result<TreeTopology> + Sync,
{
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let m = ch.space.len();
    let hits: Vec<bool> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng(ch.draw_seed(seeds::derive_str(rng_seed, "success"), t));
            let i = rng.random_range(0..m);
            let x = ch.observe(i, &mut rng)?;
            Ok(attacker(&x)?.canonical_form() == ch.space.canonical(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let successes = hits.iter().filter(|&&h| h).count();
    let (ci_low, ci_high) = wilson_interval(successes, trials);
    Ok(SuccessEstimate {
        successes,
        trials,
        p: successes as f64 / trials as f64,
        ci_low,
        ci_high,
    })
}

/// Success probability of the Bayes-matched Gibbs MAP attacker.
pub fn bayes_success_probability(ch: &ChannelSpec, trials: usize, rng_seed: u64) -> Result<SuccessEstimate> {
    empirical_success_probability(ch, |x| Ok(ch.space.get(ch.bayes_map(x)?).clone()), trials, rng_seed)
}

/// Number of distinct shared-path vectors among `trees`, compared exactly.
pub fn distinct_vectors(trees: &[TreeTopology]) -> usize {
    trees
        .iter()
        .map(|t| t.shared_path_vector().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .len()
}
