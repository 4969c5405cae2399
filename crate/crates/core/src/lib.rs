pub mod attackers;
pub mod baselines;
pub mod defense;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod neuralcore;
pub mod observation;
pub mod seeds;
pub mod theory;
pub mod topology;

pub use error::{Error, Result};
