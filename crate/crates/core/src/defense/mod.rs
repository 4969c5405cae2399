//! Learned delay perturbation and its adversarial trainer.
//!
//! A message-passing generator maps the true tree to a perturbed
//! shared-path vector `X~`. Training alternates between picking the inverse
//! temperature at which a Gibbs attacker is most accurate and one
//! gradient-free update of the generator against that attacker, penalized by
//! the squared deviation of `X~` from the true vector.

mod generator;
mod train;

pub use generator::{
    embed_nodes, node_features, pair_representation, pair_scores, perturb, role_of, softplus, tree_scale, GeneratorParams,
    GeneratorShape, NodeFeatures, EDGE_FEATURES, ROLE_COUNT,
};
pub use train::{
    initial_params, select_worst_beta, structural_loss, train, training_space, StructuralObjective, TraceRow,
    TrainConfig, TrainingTrace, BACKTRACK_STEPS, FULL_ENUMERATION_MAX_LEAVES,
};

use crate::topology::PathDelayVector;
use crate::{Error, Result};

/// `|X~ - X|^2`, the perturbation cost.
pub fn regularization(xt: &PathDelayVector, x: &PathDelayVector) -> Result<f64> {
    if xt.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: xt.len(),
        });
    }
    Ok(xt.values().iter().zip(x.values()).map(|(a, b)| (a - b) * (a - b)).sum())
}
