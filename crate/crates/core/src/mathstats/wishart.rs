use nalgebra::DMatrix;

use super::linalg::{inverse_spd, ln_det_spd};
use super::special::{digamma, ln_mvgamma};
use crate::error::{Error, Result};

/// Posterior expectations of a rate-parameterized Wishart `W(Λ | ν, V)`,
/// whose mean is `ν V⁻¹`.
#[derive(Clone, Debug)]
pub struct WishartMoments {
    pub precision: DMatrix<f64>,
    pub ln_det: f64,
}

fn check_nu(nu: f64, c: usize) -> Result<()> {
    if !(nu > c as f64 - 1.0) || !nu.is_finite() {
        return Err(Error::domain(format!("Wishart degrees of freedom {nu} must exceed {}", c as f64 - 1.0)));
    }
    Ok(())
}

/// `E[Λ] = ν V⁻¹` and `E[ln|Λ|] = Σ_i ψ((ν+1-i)/2) + c ln 2 - ln|V|`.
pub fn wishart_expectations(nu: f64, rate: &DMatrix<f64>) -> Result<WishartMoments> {
    let c = rate.nrows();
    check_nu(nu, c)?;
    let inv = inverse_spd(rate, "Wishart rate matrix")?;
    let mut ln_det = c as f64 * std::f64::consts::LN_2 - ln_det_spd(rate, "Wishart rate matrix")?;
    for i in 1..=c {
        ln_det += digamma((nu + 1.0 - i as f64) / 2.0)?;
    }
    Ok(WishartMoments {
        precision: inv * nu,
        ln_det,
    })
}

/// Log normalizer `ln B(V, ν)` of the rate-parameterized Wishart density
/// `ln W(Λ|ν,V) = ln B + (ν-c-1)/2 ln|Λ| - tr(VΛ)/2`.
pub fn wishart_ln_norm(nu: f64, rate: &DMatrix<f64>) -> Result<f64> {
    let c = rate.nrows();
    check_nu(nu, c)?;
    Ok(0.5 * nu * ln_det_spd(rate, "Wishart rate matrix")?
        - 0.5 * nu * c as f64 * std::f64::consts::LN_2
        - ln_mvgamma(c, 0.5 * nu)?)
}
