//! Automatic-differentiation-free ADVI: constrained latents are mapped to
//! ℝ^m, a full-rank Gaussian is fitted there by stochastic gradient ascent on
//! a Monte-Carlo ELBO, and the augmentation-mixture model is provided as one
//! such log joint.

mod fit;
mod gaussian;
mod model;
mod transform;

pub use fit::{
    advi_elbo_estimate, advi_elbo_estimate_detailed, advi_fit, log_joint_unconstrained, posterior_mean, AdviConfig, AdviFit, ElboEstimate,
    LogJoint,
};
pub use gaussian::FullRankGaussian;
pub use model::{advi_weights, fit_advi_weights, AdviMode, AdviWeights, VbttaLogJoint};
pub use transform::{Block, TransformSpec};
