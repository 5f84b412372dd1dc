//! Variational Bayesian test-time augmentation (VB-TTA).
//!
//! Predictions produced under a set of test-time augmentations are modelled as
//! a Bayesian mixture whose per-augmentation weights are fitted by maximizing
//! a variational lower bound. The crate is organised bottom-up:
//!
//! * [`mathstats`]: special functions, densities, samplers and quadrature.
//! * [`augment`]: augmentation operators and normality diagnostics.
//! * [`predictor`]: a small ReLU network trained with Adam.
//! * [`moments`]: Gaussian component moments via the delta method or Monte Carlo.
//! * [`vbcore`]: CAVI/EM weight fitting, probit likelihoods, weighted prediction.
//! * [`advi`]: full-rank Gaussian ADVI over the same model.
//! * [`experiment`]: synthetic benchmark orchestration and report emission.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise. Results are
//! identical either way.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advi;
pub mod augment;
pub mod error;
pub mod experiment;
pub mod mathstats;
pub mod moments;
pub mod par;
pub mod predictor;
pub mod vbcore;

pub use error::{Error, Result};
pub use mathstats::Rng;
