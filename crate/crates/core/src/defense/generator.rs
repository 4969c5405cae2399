use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attackers::observation_scale;
use crate::neuralcore::{init_params, load_checkpoint, save_checkpoint, Activation, DenseNet, ParamVector};
use crate::topology::{PathDelayVector, Role, TreeTopology};
use crate::{seeds, Error, Result};

/// Per-edge features: normalized link delay, subtree leaf count, child hop depth.
pub const EDGE_FEATURES: usize = 3;
/// Internal-node role buckets: root, depth one, deeper.
pub const ROLE_COUNT: usize = 3;

/// Shape hyperparameters of a generator; stored in checkpoint metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorShape {
    pub layers: usize,
    pub hidden_dim: usize,
}

impl Default for GeneratorShape {
    fn default() -> Self {
        GeneratorShape {
            layers: 3,
            hidden_dim: 32,
        }
    }
}

impl GeneratorShape {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "generator needs at least one layer and a positive hidden width, got {} x {}",
                self.layers, self.hidden_dim
            )));
        }
        Ok(())
    }
}

/// Message-passing perturbation generator.
///
/// Each layer runs an upward phase (children to parent, mean-aggregated) and
/// then a downward phase (parent to child), both with the layer's message and
/// update nets. A pair of leaves is read out from `[h_i + h_j, h_i * h_j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub shape: GeneratorShape,
    /// `[h_u, h_v, e_uv] -> message`, one per layer.
    pub msg_nets: Vec<DenseNet>,
    /// `[h_v, aggregated message] -> h_v'`, one per layer.
    pub update_nets: Vec<DenseNet>,
    /// Initial state of internal nodes, indexed by role bucket.
    pub internal_embedding: Vec<Vec<f64>>,
    /// Pair representation to a scalar; the output layer starts at zero.
    pub readout_net: DenseNet,
}

impl GeneratorParams {
    pub fn new(shape: GeneratorShape, rng_seed: u64) -> Result<Self> {
        shape.validate()?;
        let h = shape.hidden_dim;
        let mut msg_nets = Vec::with_capacity(shape.layers);
        let mut update_nets = Vec::with_capacity(shape.layers);
        for l in 0..shape.layers {
            let tag = l as u64;
            msg_nets.push(
                init_params(&[2 * h + EDGE_FEATURES, h], seeds::derive(seeds::derive_str(rng_seed, "msg"), tag))?
                    .with_output_activation(Activation::Relu),
            );
            update_nets.push(
                init_params(&[2 * h, h], seeds::derive(seeds::derive_str(rng_seed, "update"), tag))?
                    .with_output_activation(Activation::Relu),
            );
        }
        let mut rng = seeds::rng(seeds::derive_str(rng_seed, "embed"));
        let internal_embedding = (0..ROLE_COUNT)
            .map(|_| (0..h).map(|_| rng.random_range(-0.5..=0.5)).collect())
            .collect();
        let mut readout_net = init_params(&[2 * h, h, 1], seeds::derive_str(rng_seed, "readout"))?;
        readout_net.zero_output_layer();
        Ok(GeneratorParams {
            shape,
            msg_nets,
            update_nets,
            internal_embedding,
            readout_net,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.shape.hidden_dim
    }

    pub fn layers(&self) -> usize {
        self.shape.layers
    }

    pub fn param_count(&self) -> usize {
        self.msg_nets.iter().chain(&self.update_nets).map(DenseNet::param_count).sum::<usize>()
            + ROLE_COUNT * self.shape.hidden_dim
            + self.readout_net.param_count()
    }

    /// Named parameter segments: `msg{l}`, `update{l}`, `embed`, `readout`.
    pub fn to_param_vector(&self) -> ParamVector {
        let mut pv = ParamVector::new();
        for (l, (m, u)) in self.msg_nets.iter().zip(&self.update_nets).enumerate() {
            pv.push_net(format!("msg{l}"), m);
            pv.push_net(format!("update{l}"), u);
        }
        pv.push("embed", &self.internal_embedding.concat());
        pv.push_net("readout", &self.readout_net);
        pv
    }

    /// All parameters in [`GeneratorParams::to_param_vector`] order.
    pub fn flat(&self) -> Vec<f64> {
        self.to_param_vector().values().to_vec()
    }

    /// A copy with every parameter replaced from `values`.
    pub fn with_flat(&self, values: &[f64]) -> Result<Self> {
        let pv = self.to_param_vector().with_values(values.to_vec())?;
        self.with_param_vector(&pv)
    }

    /// A copy whose parameters are read from `pv` by segment name.
    pub fn with_param_vector(&self, pv: &ParamVector) -> Result<Self> {
        let mut out = self.clone();
        for l in 0..self.shape.layers {
            pv.read_net(&format!("msg{l}"), &mut out.msg_nets[l])?;
            pv.read_net(&format!("update{l}"), &mut out.update_nets[l])?;
        }
        let embed = pv
            .segment("embed")
            .ok_or_else(|| Error::Checkpoint("missing segment `embed`".into()))?;
        let h = self.shape.hidden_dim;
        if embed.len() != ROLE_COUNT * h {
            return Err(Error::DimensionMismatch {
                expected: ROLE_COUNT * h,
                found: embed.len(),
            });
        }
        out.internal_embedding = embed.chunks(h).map(<[f64]>::to_vec).collect();
        pv.read_net("readout", &mut out.readout_net)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "generator": self.shape });
        save_checkpoint(path, &self.to_param_vector(), &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (pv, meta) = load_checkpoint(path)?;
        let shape: GeneratorShape = serde_json::from_value(
            meta.get("generator")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("metadata lacks `generator`".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("bad generator metadata: {e}")))?;
        GeneratorParams::new(shape, 0)?.with_param_vector(&pv)
    }
}

/// Initial node states and edge features of a tree.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures {
    /// `h^(0)` per node, each of length `hidden_dim`.
    pub node: Vec<Vec<f64>>,
    /// Features of the link into each node; zeros for the root.
    pub edge: Vec<[f64; EDGE_FEATURES]>,
}

/// Role bucket of an internal node by hop depth.
pub fn role_of(tree: &TreeTopology, v: usize) -> usize {
    tree.hop_depth(v).min(ROLE_COUNT - 1)
}

/// Delay unit of a tree: its largest shared-path delay (1 for a star).
/// Edge features and readout shifts are measured in it, which makes the
/// generator equivariant to rescaling every link delay.
pub fn tree_scale(tree: &TreeTopology) -> f64 {
    observation_scale(tree.shared_path_vector().values())
}

/// Leaves get the one-hot of their leaf index, internal nodes the embedding
/// of their role; the link into `v` carries `(mu_v, leaves below v,
/// hop depth of v)` with `mu_v` in units of [`tree_scale`].
pub fn node_features(theta: &GeneratorParams, tree: &TreeTopology) -> Result<NodeFeatures> {
    let h = theta.hidden_dim();
    let l = tree.leaf_set().len();
    if l > h {
        return Err(Error::LeafCountExceedsDim { leaves: l, dim: h });
    }
    let n = tree.node_count();
    let unit = tree_scale(tree);
    let mut node = Vec::with_capacity(n);
    let mut edge = Vec::with_capacity(n);
    for v in 0..n {
        match tree.leaf_position(v) {
            Some(i) => {
                let mut one_hot = vec![0.0; h];
                one_hot[i] = 1.0;
                node.push(one_hot);
            }
            None => node.push(theta.internal_embedding[role_of(tree, v)].clone()),
        }
        edge.push(match tree.parent(v) {
            None => [0.0; EDGE_FEATURES],
            Some(_) => [
                tree.link_delay(v) / unit,
                tree.leaves_below(v).len() as f64,
                tree.hop_depth(v) as f64,
            ],
        });
    }
    Ok(NodeFeatures { node, edge })
}

/// Final node states `h^(L)` after all message-passing layers.
pub fn embed_nodes(theta: &GeneratorParams, tree: &TreeTopology) -> Result<Vec<Vec<f64>>> {
    let NodeFeatures { node: mut h, edge } = node_features(theta, tree)?;
    let hd = theta.hidden_dim();
    let n = tree.node_count();
    let mut buf = Vec::with_capacity(2 * hd + EDGE_FEATURES);
    for (msg, upd) in theta.msg_nets.iter().zip(&theta.update_nets) {
        let mut next = h.clone();
        for v in tree.internal_nodes() {
            let kids = tree.children(v);
            let mut agg = vec![0.0; hd];
            for &c in kids {
                buf.clear();
                buf.extend_from_slice(&h[c]);
                buf.extend_from_slice(&h[v]);
                buf.extend_from_slice(&edge[c]);
                for (a, m) in agg.iter_mut().zip(msg.forward_unchecked(&buf)) {
                    *a += m;
                }
            }
            let scale = 1.0 / kids.len().max(1) as f64;
            buf.clear();
            buf.extend_from_slice(&h[v]);
            buf.extend(agg.iter().map(|a| a * scale));
            next[v] = upd.forward_unchecked(&buf);
        }
        h = next;
        let mut next = h.clone();
        for v in 0..n {
            let Some(p) = tree.parent(v) else { continue };
            buf.clear();
            buf.extend_from_slice(&h[p]);
            buf.extend_from_slice(&h[v]);
            buf.extend_from_slice(&edge[v]);
            let m = msg.forward_unchecked(&buf);
            buf.clear();
            buf.extend_from_slice(&h[v]);
            buf.extend_from_slice(&m);
            next[v] = upd.forward_unchecked(&buf);
        }
        h = next;
    }
    if h.iter().flatten().all(|v| v.is_finite()) {
        Ok(h)
    } else {
        Err(Error::NonFiniteOutput)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Symmetric pair representation `[a + b, a * b]`.
pub fn pair_representation(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).chain(a.iter().zip(b).map(|(x, y)| x * y)).collect()
}

/// Raw readout score `r_ij` of every leaf pair, in pair-index order.
pub fn pair_scores(theta: &GeneratorParams, tree: &TreeTopology) -> Result<Vec<f64>> {
    let h = embed_nodes(theta, tree)?;
    let leaves = tree.leaves();
    tree.leaf_set()
        .pairs()
        .map(|(i, j)| {
            let z = pair_representation(&h[leaves[i]], &h[leaves[j]]);
            Ok(theta.readout_net.forward(&z)?[0])
        })
        .collect()
}

/// `X~_ij = max(0, X_ij + s * (softplus(r_ij) - softplus(0)))` with `s` the
/// [`tree_scale`]; the identity whenever the readout outputs zero.
pub fn perturb(theta: &GeneratorParams, tree: &TreeTopology) -> Result<PathDelayVector> {
    let x = tree.shared_path_vector();
    let r = pair_scores(theta, tree)?;
    let s = observation_scale(x.values());
    let base = softplus(0.0);
    let values: Vec<f64> = x
        .values()
        .iter()
        .zip(&r)
        .map(|(&xv, &rv)| (xv + s * (softplus(rv) - base)).max(0.0))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteOutput);
    }
    PathDelayVector::new(values, Role::Perturbed, tree.leaf_set().clone())
}
