//! Multinomial probit: the observed class is the argmax of independent
//! Gaussian utilities `Z_i ~ N(μ_i, σ_i²)`.

use crate::error::{Error, Result};
use crate::mathstats::{integrate, std_normal_cdf, std_normal_pdf, QuadOptions};
use crate::moments::ComponentMoments;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbitComponent {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ProbitComponent {
    pub fn new(mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        crate::error::check_dim(mean.len(), sd.len())?;
        if mean.len() < 2 {
            return Err(Error::domain("probit needs at least two classes"));
        }
        if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::domain("probit latents need finite means and positive deviations"));
        }
        Ok(Self { mean, sd })
    }

    /// Latent utilities from logit moments: `σ_i = sqrt(Var_i)`.
    pub fn from_moments(m: &ComponentMoments) -> Result<Self> {
        Self::new(m.mean.clone(), m.variance.iter().map(|v| v.sqrt()).collect())
    }

    pub fn classes(&self) -> usize {
        self.mean.len()
    }

    fn z(&self, i: usize, v: f64) -> f64 {
        (v - self.mean[i]) / self.sd[i]
    }
}

/// `P(Y = j) = ∫ [1 - Φ_j(v)] Σ_{i≠j} φ_i(v)/σ_i ∏_{l∉{i,j}} Φ_l(v) dv`,
/// the probability that `Z_j` exceeds the maximum of the other utilities.
pub fn probit_class_probability(component: &ProbitComponent, class: usize, tol: f64) -> Result<f64> {
    let c = component.classes();
    if class >= c {
        return Err(Error::domain(format!("class {class} out of range for {c} classes")));
    }
    let mut cdf = vec![0.0; c];
    let mut integrand = |v: f64| {
        for (i, slot) in cdf.iter_mut().enumerate() {
            *slot = std_normal_cdf(component.z(i, v));
        }
        let mut density = 0.0;
        for i in (0..c).filter(|&i| i != class) {
            let mut term = std_normal_pdf(component.z(i, v)) / component.sd[i];
            for l in (0..c).filter(|&l| l != class && l != i) {
                term *= cdf[l];
            }
            density += term;
        }
        (1.0 - cdf[class]) * density
    };
    // Break the line at each utility's bulk so narrow peaks are never skipped.
    let mut knots: Vec<f64> = (0..c)
        .flat_map(|i| [-8.0, -4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0].map(|z| component.mean[i] + z * component.sd[i]))
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let mut bounds = vec![f64::NEG_INFINITY];
    bounds.extend(knots);
    bounds.push(f64::INFINITY);
    let opts = QuadOptions {
        abs_tol: tol / (bounds.len() - 1) as f64,
        ..QuadOptions::default()
    };
    let mut total = 0.0;
    for w in bounds.windows(2) {
        let r = integrate(&mut integrand, w[0], w[1], &opts)?;
        if !r.converged {
            return Err(Error::NotConverged {
                value: r.value,
                error: r.error,
            });
        }
        total += r.value;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Class probabilities for every class.
pub fn probit_probabilities(component: &ProbitComponent, tol: f64) -> Result<Vec<f64>> {
    (0..component.classes()).map(|j| probit_class_probability(component, j, tol)).collect()
}
