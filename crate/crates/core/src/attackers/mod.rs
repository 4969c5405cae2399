//! Topology inference adversaries.
//!
//! * [`gibbs_posterior`]: a distribution over a candidate space weighted by
//!   `exp(-beta * loss)`, where the loss is the squared distance between the
//!   observation and the candidate's best explanation of it.
//! * [`rnj_infer`]: agglomerative reconstruction from shared-path values.
//! * [`mle_infer`]: penalized-likelihood search with a Metropolis chain over
//!   split, contract and regraft moves.

mod mle;
mod rnj;

pub use mle::{mle_infer, penalized_log_likelihood, MleConfig, MleDiagnostics, MleResult};
pub use rnj::{estimate_min_link, rnj_infer, RnjConfig};

use crate::topology::{LinkDelays, PathDelayVector, TopologySpace, TreeTopology};
use crate::{Error, Result};

/// Projected-gradient iterations of the nonnegative delay fit.
pub const NNLS_ITERS: usize = 200;
/// Relative step tolerance of the nonnegative delay fit.
pub const NNLS_TOL: f64 = 1e-8;

/// Nonnegative least-squares model `x ~ A mu` restricted to the links whose
/// child is internal; leaf links never appear on a shared path.
#[derive(Clone, Debug)]
pub struct LinearFit {
    /// Internal node (column owner) per column.
    columns: Vec<usize>,
    /// Columns on the shared path of each leaf pair.
    row_cols: Vec<Vec<usize>>,
    /// Gram matrix `A^T A`, row-major.
    gram: Vec<f64>,
}

impl LinearFit {
    pub fn new(tree: &TreeTopology) -> Self {
        let n = tree.node_count();
        let mut col_of = vec![usize::MAX; n];
        let mut columns = Vec::new();
        for &c in tree.links() {
            if !tree.is_leaf(c) {
                col_of[c] = columns.len();
                columns.push(c);
            }
        }
        let leaves = tree.leaves();
        let row_cols: Vec<Vec<usize>> = tree
            .leaf_set()
            .pairs()
            .map(|(i, j)| {
                let mut cols = Vec::new();
                let mut v = tree.lca(leaves[i], leaves[j]);
                while let Some(p) = tree.parent(v) {
                    cols.push(col_of[v]);
                    v = p;
                }
                cols
            })
            .collect();
        let m = columns.len();
        let mut gram = vec![0.0; m * m];
        for cols in &row_cols {
            for &a in cols {
                for &b in cols {
                    gram[a * m + b] += 1.0;
                }
            }
        }
        LinearFit {
            columns,
            row_cols,
            gram,
        }
    }

    /// Number of fitted (internal-link) delays.
    pub fn columns(&self) -> usize {
        self.columns.len()
    }

    /// Internal node owning each column.
    pub fn column_nodes(&self) -> &[usize] {
        &self.columns
    }

    /// `A mu` for internal-link delays `mu` in column order.
    pub fn predict(&self, mu: &[f64]) -> Vec<f64> {
        self.row_cols.iter().map(|cols| cols.iter().map(|&a| mu[a]).sum()).collect()
    }

    /// Fitted internal-link delays and the residual `|x - A mu|^2`.
    pub fn fit(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let m = self.columns.len();
        if m == 0 {
            return (Vec::new(), x.iter().map(|v| v * v).sum());
        }
        // Diagonal scaling z = D mu with D = sqrt(diag G) gives a unit-diagonal
        // Gram matrix; the nonnegativity constraint is unchanged.
        let d: Vec<f64> = (0..m).map(|a| self.gram[a * m + a].sqrt()).collect();
        let g: Vec<f64> = (0..m * m)
            .map(|ab| self.gram[ab] / (d[ab / m] * d[ab % m]))
            .collect();
        let mut atx = vec![0.0; m];
        for (cols, &xr) in self.row_cols.iter().zip(x) {
            for &a in cols {
                atx[a] += xr;
            }
        }
        let atx: Vec<f64> = atx.iter().zip(&d).map(|(v, d)| v / d).collect();
        // Gershgorin bound on the largest eigenvalue of 2 G.
        let lip = 2.0
            * (0..m)
                .map(|a| g[a * m..(a + 1) * m].iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
        let mut z = vec![0.0; m];
        let mut y = z.clone();
        let mut t = 1.0_f64;
        let mut next = vec![0.0; m];
        for _ in 0..NNLS_ITERS {
            let mut change = 0.0_f64;
            let mut size = 0.0_f64;
            for a in 0..m {
                let gy: f64 = (0..m).map(|b| g[a * m + b] * y[b]).sum();
                let grad = 2.0 * (gy - atx[a]);
                next[a] = (y[a] - grad / lip).max(0.0);
                change = change.max((next[a] - z[a]).abs());
                size = size.max(next[a].abs());
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let momentum = (t - 1.0) / t_next;
            for a in 0..m {
                y[a] = next[a] + momentum * (next[a] - z[a]);
            }
            std::mem::swap(&mut z, &mut next);
            t = t_next;
            if change <= NNLS_TOL * (1.0 + size) {
                break;
            }
        }
        let mu: Vec<f64> = z.iter().zip(&d).map(|(z, d)| z / d).collect();
        let loss = self
            .row_cols
            .iter()
            .zip(x)
            .map(|(cols, &xr)| {
                let r = xr - cols.iter().map(|&a| mu[a]).sum::<f64>();
                r * r
            })
            .sum();
        (mu, loss)
    }
}

/// How a candidate's link delays are obtained when scoring an observation.
#[derive(Clone, Copy, Debug)]
pub enum MuMode<'a> {
    /// Nonnegative least-squares fit to the observation.
    Fit,
    /// Known delays, one entry per support member, in link order.
    Known(&'a [LinkDelays]),
    /// Known predicted vectors, one per support member.
    Templates(&'a [PathDelayVector]),
}

/// `|x* - A' mu|^2` for a single candidate; `mu = None` fits the delays.
pub fn path_loss(x_star: &PathDelayVector, candidate: &TreeTopology, mu: Option<&LinkDelays>) -> Result<f64> {
    if x_star.leaf_set() != candidate.leaf_set() {
        return Err(Error::LeafSetMismatch);
    }
    match mu {
        None => Ok(LinearFit::new(candidate).fit(x_star.values()).1),
        Some(mu) => {
            let a = crate::topology::routing_matrix(candidate);
            let x = crate::topology::shared_path_vector(&a, mu)?;
            Ok(squared_distance(x_star.values(), x.values()))
        }
    }
}

/// Largest entry of a shared-path vector, the natural delay unit of an
/// observation; 1 for an all-zero vector.
pub fn observation_scale(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Inverse temperature applied to raw squared-ms losses so that `beta`
/// weighs losses measured in units of the observation's own scale. The
/// resulting posterior is invariant to rescaling the observation.
pub fn scale_free_beta(beta: f64, x_star: &[f64]) -> f64 {
    let s = observation_scale(x_star);
    beta / (s * s)
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Precomputed per-candidate scoring for repeated posterior evaluations.
#[derive(Clone, Debug)]
pub enum LossTable {
    Fit(Vec<LinearFit>),
    Templates(Vec<Vec<f64>>),
}

impl LossTable {
    pub fn new(support: &TopologySpace, mode: MuMode<'_>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        match mode {
            MuMode::Fit => Ok(LossTable::Fit(support.members().iter().map(LinearFit::new).collect())),
            MuMode::Known(mus) => {
                if mus.len() != support.len() {
                    return Err(Error::DimensionMismatch {
                        expected: support.len(),
                        found: mus.len(),
                    });
                }
                let templates = support
                    .members()
                    .iter()
                    .zip(mus)
                    .map(|(t, mu)| {
                        let a = crate::topology::routing_matrix(t);
                        crate::topology::shared_path_vector(&a, mu).map(|x| x.values().to_vec())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(LossTable::Templates(templates))
            }
            MuMode::Templates(xs) => {
                if xs.len() != support.len() {
                    return Err(Error::DimensionMismatch {
                        expected: support.len(),
                        found: xs.len(),
                    });
                }
                if xs.iter().any(|x| x.leaf_set() != support.leaf_set()) {
                    return Err(Error::LeafSetMismatch);
                }
                Ok(LossTable::Templates(xs.iter().map(|x| x.values().to_vec()).collect()))
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            LossTable::Fit(f) => f.len(),
            LossTable::Templates(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loss of every support member against `x_star`.
    pub fn losses(&self, x_star: &[f64]) -> Vec<f64> {
        match self {
            LossTable::Fit(fits) => fits.iter().map(|f| f.fit(x_star).1).collect(),
            LossTable::Templates(ts) => ts.iter().map(|t| squared_distance(x_star, t)).collect(),
        }
    }
}

/// Normalized Gibbs weights over a support, in support order.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsPosterior {
    pub weights: Vec<f64>,
    pub losses: Vec<f64>,
    pub beta: f64,
    pub log_z: f64,
}

impl GibbsPosterior {
    /// `weights ~ exp(-beta * loss)`, normalized in log space.
    pub fn from_losses(losses: Vec<f64>, beta: f64) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::EmptySupport);
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be finite and >= 0, got {beta}")));
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = losses.iter().map(|l| (-beta * (l - min)).exp()).collect();
        let s: f64 = w.iter().sum();
        let log_z = -beta * min + s.ln();
        Ok(GibbsPosterior {
            weights: w.into_iter().map(|v| v / s).collect(),
            losses,
            beta,
            log_z,
        })
    }

    /// Index of the most probable member; ties go to the smallest index,
    /// which in a [`TopologySpace`] is the smallest canonical form.
    pub fn map_index(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Expectation of `f(member index)` under the posterior.
    pub fn expect(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(i, w)| w * f(i)).sum()
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.weights
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| -w * w.log2())
            .sum()
    }
}

/// Gibbs posterior of `x_star` over `support`.
pub fn gibbs_posterior(
    x_star: &PathDelayVector,
    support: &TopologySpace,
    beta: f64,
    mode: MuMode<'_>,
) -> Result<GibbsPosterior> {
    if x_star.leaf_set() != support.leaf_set() {
        return Err(Error::LeafSetMismatch);
    }
    let table = LossTable::new(support, mode)?;
    GibbsPosterior::from_losses(table.losses(x_star.values()), beta)
}
