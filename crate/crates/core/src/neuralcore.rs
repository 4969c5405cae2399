//! Minimal dense-layer substrate for the perturbation generator.
//!
//! Parameters live in plain `Vec<f64>` buffers. Training is gradient-free
//! from the network's point of view: callers flatten every net into a
//! [`ParamVector`], estimate gradients numerically, and write the updated
//! values back.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seeds, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }
}

/// One affine layer; `weights` is `out_dim x in_dim`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        weights: Vec<f64>,
        bias: Vec<f64>,
        in_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let out_dim = bias.len();
        if weights.len() != out_dim * in_dim {
            return Err(Error::DimensionMismatch {
                expected: out_dim * in_dim,
                found: weights.len(),
            });
        }
        if weights.iter().chain(&bias).any(|w| !w.is_finite()) {
            return Err(Error::NonFiniteValue);
        }
        Ok(Layer {
            weights,
            bias,
            in_dim,
            out_dim,
            activation,
        })
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let s: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(self.activation.apply(s + b));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Chain `layers`; adjacent dimensions must agree.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::DimensionMismatch {
                    expected: w[0].out_dim,
                    found: w[1].in_dim,
                });
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Set the activation of the final layer.
    pub fn with_output_activation(mut self, activation: Activation) -> Self {
        let last = self.layers.len() - 1;
        self.layers[last].activation = activation;
        self
    }

    /// Zero the weights and bias of the final layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        self.layers[last].weights.fill(0.0);
        self.layers[last].bias.fill(0.0);
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                found: x.len(),
            });
        }
        let out = self.forward_unchecked(x);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NonFiniteOutput)
        }
    }

    /// Forward pass without dimension or finiteness checks.
    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.apply(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// All weights then biases, layer by layer.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Inverse of [`DenseNet::flat`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                found: values.len(),
            });
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let (w, b) = (layer.weights.len(), layer.bias.len());
            layer.weights.copy_from_slice(&values[at..at + w]);
            layer.bias.copy_from_slice(&values[at + w..at + w + b]);
            at += w + b;
        }
        Ok(())
    }
}

/// Xavier-uniform initialization with zero biases; ReLU on hidden layers,
/// identity on the output layer.
pub fn init_params(dims: &[usize], rng_seed: u64) -> Result<DenseNet> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer dimensions must list at least two positive sizes, got {dims:?}"
        )));
    }
    let mut rng = seeds::rng(rng_seed);
    let n = dims.len() - 1;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_in * fan_out).map(|_| rng.random_range(-a..=a)).collect();
            let activation = if i + 1 == n { Activation::Identity } else { Activation::Relu };
            Layer::new(weights, vec![0.0; fan_out], fan_in, activation)
        })
        .collect::<Result<Vec<_>>>()?;
    DenseNet::new(layers)
}

/// One named slice of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// A flat view of many parameter blocks with a stable name index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<ParamSegment>,
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, values: &[f64]) {
        self.segments.push(ParamSegment {
            name: name.into(),
            offset: self.values.len(),
            len: values.len(),
        });
        self.values.extend_from_slice(values);
    }

    pub fn push_net(&mut self, name: impl Into<String>, net: &DenseNet) {
        self.push(name, &net.flat());
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segments(&self) -> &[ParamSegment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.segments
            .iter()
            .find(|s| s.name == name)
            .map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Same index map, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                found: values.len(),
            });
        }
        Ok(ParamVector {
            values,
            segments: self.segments.clone(),
        })
    }

    /// Copy the named segment back into `net`.
    pub fn read_net(&self, name: &str, net: &mut DenseNet) -> Result<()> {
        let seg = self
            .segment(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing segment `{name}`")))?;
        net.set_flat(seg)
    }

    pub fn from_parts(values: Vec<f64>, segments: Vec<ParamSegment>) -> Result<Self> {
        let mut at = 0;
        for s in &segments {
            if s.offset != at {
                return Err(Error::Checkpoint(format!("segment `{}` is not contiguous", s.name)));
            }
            at += s.len;
        }
        if at != values.len() {
            return Err(Error::DimensionMismatch {
                expected: at,
                found: values.len(),
            });
        }
        Ok(ParamVector { values, segments })
    }
}

/// Central-difference gradient with step `h`.
pub fn numeric_gradient<F>(f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !f(theta).is_finite() {
        return Err(Error::NonFiniteValue);
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = f(&probe);
        probe[i] = theta[i] - h;
        let down = f(&probe);
        probe[i] = theta[i];
        let g = (up - down) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NonFiniteValue);
        }
        grad.push(g);
    }
    Ok(grad)
}

/// Simultaneous-perturbation gradient estimate averaged over `probes`
/// Rademacher directions, each evaluated at `theta +- h * delta`.
pub fn spsa_gradient<F>(f: F, theta: &[f64], h: f64, probes: usize, rng_seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut rng = seeds::rng(rng_seed);
    let mut grad = vec![0.0; theta.len()];
    let mut plus = vec![0.0; theta.len()];
    let mut minus = vec![0.0; theta.len()];
    for _ in 0..probes.max(1) {
        let delta: Vec<f64> = (0..theta.len())
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        for i in 0..theta.len() {
            plus[i] = theta[i] + h * delta[i];
            minus[i] = theta[i] - h * delta[i];
        }
        let diff = (f(&plus) - f(&minus)) / (2.0 * h);
        if !diff.is_finite() {
            return Err(Error::NonFiniteValue);
        }
        for (g, d) in grad.iter_mut().zip(&delta) {
            *g += diff * d;
        }
    }
    let n = probes.max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// Adam moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Fold `grad` into the moments and return the bias-corrected step to
    /// subtract from the parameters.
    pub fn step_direction(&mut self, grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps)
            })
            .collect()
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        let d = self.step_direction(grad);
        theta.iter_mut().zip(d).for_each(|(t, d)| *t -= d);
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    segments: Vec<ParamSegment>,
    #[serde(default)]
    meta: serde_json::Value,
}

const CHECKPOINT_FORMAT: &str = "tomoguard-params";

/// Checkpoint layout: header length as u64 LE, the JSON header, then every
/// parameter as f64 LE.
pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamVector, meta: &serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        segments: params.segments.clone(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in &params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamVector, serde_json::Value)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(Error::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format != CHECKPOINT_FORMAT || header.version != 1 {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            header.format, header.version
        )));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("trailing partial value".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((ParamVector::from_parts(values, header.segments)?, header.meta))
}

pub fn save_checkpoint(path: &Path, params: &ParamVector, meta: &serde_json::Value) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params, meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamVector, serde_json::Value)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
