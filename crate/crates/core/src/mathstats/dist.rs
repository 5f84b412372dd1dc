use nalgebra::{DMatrix, DVector};
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, StandardNormal};

use super::linalg::{cholesky, inverse_spd, ln_det_spd};
use super::special::{lgamma, LN_2PI};
use super::wishart::wishart_ln_norm;
use super::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum DistSpec {
    Gaussian { mean: DVector<f64>, cov: DMatrix<f64> },
    Beta { a: f64, b: f64 },
    /// Shape/rate parameterization; mean `shape / rate`.
    Gamma { shape: f64, rate: f64 },
    /// Rate parameterization; mean `nu * rate⁻¹`.
    Wishart { nu: f64, rate: DMatrix<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Draw {
    Scalar(f64),
    Vector(DVector<f64>),
    Matrix(DMatrix<f64>),
}

impl Draw {
    pub fn scalar(&self) -> Option<f64> {
        match self {
            Draw::Scalar(v) => Some(*v),
            _ => None,
        }
    }
}

impl DistSpec {
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let s = DistSpec::Gaussian { mean, cov };
        s.validate()?;
        Ok(s)
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        let s = DistSpec::Beta { a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        let s = DistSpec::Gamma { shape, rate };
        s.validate()?;
        Ok(s)
    }

    pub fn wishart(nu: f64, rate: DMatrix<f64>) -> Result<Self> {
        let s = DistSpec::Wishart { nu, rate };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::domain(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            DistSpec::Gaussian { mean, cov } => {
                if cov.nrows() != mean.len() {
                    return Err(Error::Dimension {
                        expected: mean.len(),
                        got: cov.nrows(),
                    });
                }
                if (cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
                    return Err(Error::domain("covariance is not symmetric"));
                }
                cholesky(cov, "Gaussian covariance").map(|_| ())
            }
            DistSpec::Beta { a, b } => positive(*a, "beta a").and(positive(*b, "beta b")),
            DistSpec::Gamma { shape, rate } => positive(*shape, "gamma shape").and(positive(*rate, "gamma rate")),
            DistSpec::Wishart { nu, rate } => {
                let c = rate.nrows();
                if !(*nu > c as f64 - 1.0) {
                    return Err(Error::domain(format!("Wishart ν = {nu} must exceed {}", c as f64 - 1.0)));
                }
                cholesky(rate, "Wishart rate").map(|_| ())
            }
        }
    }

    /// Prepares a reusable sampler (factorizations done once).
    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        Ok(match self {
            DistSpec::Gaussian { mean, cov } => Sampler::Gaussian {
                mean: mean.clone(),
                chol: cholesky(cov, "Gaussian covariance")?.l(),
            },
            DistSpec::Beta { a, b } => Sampler::Beta(Beta::new(*a, *b).map_err(|e| Error::domain(e.to_string()))?),
            DistSpec::Gamma { shape, rate } => {
                Sampler::Gamma(Gamma::new(*shape, 1.0 / rate).map_err(|e| Error::domain(e.to_string()))?)
            }
            DistSpec::Wishart { nu, rate } => {
                let scale = inverse_spd(rate, "Wishart rate")?;
                let c = rate.nrows();
                let chi = (0..c)
                    .map(|i| ChiSquared::new(nu - i as f64).map_err(|e| Error::domain(e.to_string())))
                    .collect::<Result<Vec<_>>>()?;
                Sampler::Wishart {
                    chol: cholesky(&scale, "Wishart scale")?.l(),
                    chi,
                }
            }
        })
    }

    /// Support of a scalar-valued spec.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            DistSpec::Gaussian { mean, .. } if mean.len() == 1 => Some((f64::NEG_INFINITY, f64::INFINITY)),
            DistSpec::Beta { .. } => Some((0.0, 1.0)),
            DistSpec::Gamma { .. } => Some((0.0, f64::INFINITY)),
            DistSpec::Wishart { rate, .. } if rate.nrows() == 1 => Some((0.0, f64::INFINITY)),
            _ => None,
        }
    }

    /// Log density of a scalar-valued spec (1-D Gaussian, Beta, Gamma,
    /// 1×1 Wishart). Returns `-inf` outside the support.
    pub fn ln_pdf_scalar(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self
            .support()
            .ok_or_else(|| Error::domain("density is only available for scalar-valued specs"))?;
        if !(x > lo && x < hi) && !(lo.is_infinite() && hi.is_infinite()) {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(match self {
            DistSpec::Gaussian { mean, cov } => {
                let v = cov[(0, 0)];
                -0.5 * (LN_2PI + v.ln()) - 0.5 * (x - mean[0]).powi(2) / v
            }
            DistSpec::Beta { a, b } => {
                lgamma(a + b)? - lgamma(*a)? - lgamma(*b)? + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
            }
            DistSpec::Gamma { shape, rate } => shape * rate.ln() - lgamma(*shape)? + (shape - 1.0) * x.ln() - rate * x,
            DistSpec::Wishart { nu, rate } => {
                wishart_ln_norm(*nu, rate)? + 0.5 * (nu - 2.0) * x.ln() - 0.5 * rate[(0, 0)] * x
            }
        })
    }

    /// Log density of a multivariate Gaussian spec at `x`.
    pub fn ln_pdf_vector(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            DistSpec::Gaussian { mean, cov } => {
                let ch = cholesky(cov, "Gaussian covariance")?;
                let r = x - mean;
                let sol = ch.solve(&r);
                Ok(-0.5 * (mean.len() as f64 * LN_2PI + ln_det_spd(cov, "cov")? + r.dot(&sol)))
            }
            _ => Err(Error::domain("vector density is only defined for Gaussian specs")),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Sampler {
    Gaussian { mean: DVector<f64>, chol: DMatrix<f64> },
    Beta(Beta<f64>),
    Gamma(Gamma<f64>),
    Wishart { chol: DMatrix<f64>, chi: Vec<ChiSquared<f64>> },
}

impl Sampler {
    pub fn draw(&self, rng: &mut Rng) -> Draw {
        match self {
            Sampler::Gaussian { mean, chol } => {
                let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
                Draw::Vector(mean + chol * z)
            }
            Sampler::Beta(b) => Draw::Scalar(b.sample(rng)),
            Sampler::Gamma(g) => Draw::Scalar(g.sample(rng)),
            Sampler::Wishart { chol, chi } => {
                // Bartlett decomposition: Λ = L A Aᵀ Lᵀ with L Lᵀ the scale matrix.
                let c = chol.nrows();
                let mut a = DMatrix::zeros(c, c);
                for i in 0..c {
                    a[(i, i)] = chi[i].sample(rng).sqrt();
                    for j in 0..i {
                        a[(i, j)] = StandardNormal.sample(rng);
                    }
                }
                let la = chol * a;
                Draw::Matrix(&la * la.transpose())
            }
        }
    }
}

/// Draws one value from `spec`.
pub fn sample(spec: &DistSpec, rng: &mut Rng) -> Result<Draw> {
    Ok(spec.sampler()?.draw(rng))
}
