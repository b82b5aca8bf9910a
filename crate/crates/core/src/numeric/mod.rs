//! Numeric substrate: dense matrices, small MLPs, Adam, gradient checks.

mod adam;
mod gradcheck;
mod mat;
mod mlp;

pub use adam::{AdamHyper, AdamState};
pub use gradcheck::{grad_check, grad_check_flat};
pub use mat::Mat;
pub use mlp::{
    sigmoid, HiddenActivation, Layer, MlpCache, MlpGrads, MlpParams, OutputActivation,
};
