//! Variational weight fitting for augmentation mixtures.
//!
//! The continuous case runs coordinate-ascent updates on per-instance
//! Gaussian-Wishart factors and pools responsibilities into global weights.
//! The categorical case fits weights by EM on multinomial-probit class
//! probabilities. Fitted weights drive [`predict_weighted`].

mod categorical;
mod continuous;
mod predict;
mod probit;
mod record;
mod weights;

pub use categorical::{categorical_loglik, fit_categorical, label_probabilities, CategoricalFit};
pub use continuous::{
    cavi_sweep, elbo_continuous, elbo_instance, elbo_terms, fit_continuous, fit_from, responsibilities_continuous, update_gaussian_factor,
    update_wishart_factor, CalibrationInstance, ComponentFactor, ComponentPrior, ContinuousFit, ContinuousProblem, ElboTerms,
    FactorExpectations, FitConfig, InstanceState, PriorConfig, PriorMode,
};
pub use predict::{augmented_means, combine, predict_from_means, predict_uniform, predict_weighted, spec_keys, Prediction};
pub use probit::{probit_class_probability, probit_probabilities, ProbitComponent};
pub use record::FitRecord;
pub use weights::{mstep_weights, SimplexWeights};
