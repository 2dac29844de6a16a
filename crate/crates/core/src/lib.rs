//! Numerical optimization of zero-delay analog joint source-channel
//! mappings: discretized probability models, piecewise encoder/decoder
//! structures, Lagrangian cost evaluation, a deterministic-annealing
//! optimizer, descent baselines and information-theoretic bounds.

pub mod annealer;
pub mod baselines;
pub mod bounds;
pub mod cost;
pub mod error;
pub mod mapping;
pub mod prob_model;

pub use error::{Error, Result};
pub use prob_model::{DiscretizedSource, Grid, NoiseModel};
