//! Special functions, densities, samplers and quadrature shared by every
//! other module.

mod dist;
pub mod linalg;
mod quadrature;
mod rng;
mod special;
mod wishart;

pub use dist::{sample, DistSpec, Draw, Sampler};
pub use quadrature::{adaptive_quadrature, integrate, QuadOptions, QuadResult};
pub use rng::{fnv1a, Rng};
pub use special::{
    digamma, gamma_q, lgamma, ln_mvgamma, std_normal_cdf, std_normal_ln_cdf, std_normal_pdf,
    LN_2PI,
};
pub use wishart::{wishart_expectations, wishart_ln_norm, WishartMoments};
