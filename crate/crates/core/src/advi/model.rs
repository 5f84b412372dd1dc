//! The augmentation-mixture model written as a log joint for ADVI.

use nalgebra::{DMatrix, DVector};

use super::fit::{advi_fit, posterior_mean, AdviConfig, AdviFit, LogJoint};
use super::gaussian::FullRankGaussian;
use super::transform::{Block, TransformSpec};
use crate::error::{check_dim, Error, Result};
use crate::mathstats::{lgamma, wishart_ln_norm, Rng, LN_2PI};
use crate::moments::ComponentMoments;
use crate::par;
use crate::vbcore::{CalibrationInstance, SimplexWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdviMode {
    /// Latent weights only; components fixed at their moments.
    WeightsOnly,
    /// Weights, shared mean offsets `δ_k` and precision multipliers `Λ_k`
    /// scaling each instance's `Σ_k(x)⁻¹`.
    Full,
}

struct Component {
    mean: DVector<f64>,
    /// `Σ^{-1/2}` on the diagonal.
    inv_sd: DVector<f64>,
    ln_det_prec: f64,
}

/// `p(w) p(δ) p(Λ) ∏_i ∏_j Σ_k w_k N(y_ij | μ_ik + δ_k, (Σ_ik^{-1/2} Λ_k Σ_ik^{-1/2})⁻¹)`
/// with a flat Dirichlet on `w`, `δ_k ~ N(0, β⁻¹I)` and `Λ_k ~ W(ν, νI)`.
pub struct VbttaLogJoint {
    labels: Vec<Vec<DVector<f64>>>,
    components: Vec<Vec<Component>>,
    k: usize,
    c: usize,
    mode: AdviMode,
    beta: f64,
    nu: f64,
    wishart_norm: f64,
    transform: TransformSpec,
}

impl VbttaLogJoint {
    pub fn new(calibration: &[CalibrationInstance], moments: &[Vec<ComponentMoments>], mode: AdviMode, beta: f64, nu: f64) -> Result<Self> {
        check_dim(calibration.len(), moments.len())?;
        let k = moments.first().map_or(0, |m| m.len());
        if k == 0 || calibration.is_empty() {
            return Err(Error::Degenerate("ADVI needs instances and at least one component".into()));
        }
        let c = calibration[0].center.len();
        if !(beta > 0.0) || !(nu > c as f64 - 1.0) {
            return Err(Error::Config(format!("invalid prior: β = {beta}, ν = {nu}")));
        }
        let mut components = Vec::with_capacity(moments.len());
        for mk in moments {
            check_dim(k, mk.len())?;
            components.push(
                mk.iter()
                    .map(|m| {
                        check_dim(c, m.mean.len())?;
                        if m.variance.iter().any(|v| !(*v > 0.0)) {
                            return Err(Error::Degenerate("component variance must be positive".into()));
                        }
                        Ok(Component {
                            mean: DVector::from_column_slice(&m.mean),
                            inv_sd: DVector::from_iterator(c, m.variance.iter().map(|v| 1.0 / v.sqrt())),
                            ln_det_prec: -m.variance.iter().map(|v| v.ln()).sum::<f64>(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let mut blocks = vec![Block::Simplex(k)];
        if mode == AdviMode::Full {
            blocks.push(Block::Identity(k * c));
            blocks.extend(std::iter::repeat_n(Block::PositiveDefinite(c), k));
        }
        Ok(Self {
            labels: calibration.iter().map(|i| i.labels.clone()).collect(),
            components,
            k,
            c,
            mode,
            beta,
            nu,
            wishart_norm: wishart_ln_norm(nu, &(DMatrix::identity(c, c) * nu))?,
            transform: TransformSpec::new(blocks)?,
        })
    }

    pub fn transform(&self) -> &TransformSpec {
        &self.transform
    }

    /// Uniform weights, zero offsets and `Λ_k = I`, with spread `sd` in ζ.
    pub fn initial_q(&self, sd: f64) -> FullRankGaussian {
        let m = self.transform.unconstrained_len();
        FullRankGaussian {
            mean: DVector::zeros(m),
            chol: DMatrix::identity(m, m) * sd,
        }
    }

    fn unpack<'a>(&self, eta: &'a [f64]) -> (&'a [f64], &'a [f64], Vec<DMatrix<f64>>) {
        let (k, c) = (self.k, self.c);
        let w = &eta[..k];
        if self.mode == AdviMode::WeightsOnly {
            return (w, &[], Vec::new());
        }
        let delta = &eta[k..k + k * c];
        let lambdas = (0..k).map(|kk| DMatrix::from_row_slice(c, c, &eta[k + k * c + kk * c * c..k + k * c + (kk + 1) * c * c])).collect();
        (w, delta, lambdas)
    }

    fn ln_prior(&self, delta: &[f64], lambdas: &[DMatrix<f64>]) -> f64 {
        let c = self.c as f64;
        let mut lp = lgamma(self.k as f64).unwrap_or(0.0);
        if self.mode == AdviMode::WeightsOnly {
            return lp;
        }
        for d in delta {
            lp += 0.5 * (self.beta.ln() - LN_2PI) - 0.5 * self.beta * d * d;
        }
        for l in lambdas {
            let Some(ch) = l.clone().cholesky() else {
                return f64::NEG_INFINITY;
            };
            let ln_det = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            lp += self.wishart_norm + 0.5 * (self.nu - c - 1.0) * ln_det - 0.5 * self.nu * l.trace();
        }
        lp
    }
}

impl LogJoint for VbttaLogJoint {
    fn log_joint(&self, eta: &[f64]) -> f64 {
        let (w, delta, lambdas) = self.unpack(eta);
        let c = self.c;
        let mut lp = self.ln_prior(delta, &lambdas);
        if !lp.is_finite() {
            return lp;
        }
        let ln_w: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let lambda_ln_det: Vec<f64> = lambdas
            .iter()
            .map(|l| l.clone().cholesky().map_or(f64::NAN, |ch| 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()))
            .collect();
        let per = par::map_range(self.labels.len(), |i| {
            let mut total = 0.0;
            let mut row = vec![0.0; self.k];
            for y in &self.labels[i] {
                for (kk, comp) in self.components[i].iter().enumerate() {
                    let mut u = y - &comp.mean;
                    if !delta.is_empty() {
                        for r in 0..c {
                            u[r] -= delta[kk * c + r];
                        }
                    }
                    u.component_mul_assign(&comp.inv_sd);
                    let (quad, ln_det) = if lambdas.is_empty() {
                        (u.norm_squared(), comp.ln_det_prec)
                    } else {
                        ((u.transpose() * &lambdas[kk] * &u)[(0, 0)], comp.ln_det_prec + lambda_ln_det[kk])
                    };
                    row[kk] = ln_w[kk] + 0.5 * ln_det - 0.5 * c as f64 * LN_2PI - 0.5 * quad;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                total += max + row.iter().map(|r| (r - max).exp()).sum::<f64>().ln();
            }
            total
        });
        lp += per.iter().sum::<f64>();
        lp
    }
}

#[derive(Clone, Debug)]
pub struct AdviWeights {
    pub weights: SimplexWeights,
    pub fit: AdviFit,
}

/// Posterior-mean weights of `q`.
pub fn advi_weights(model: &VbttaLogJoint, q: &FullRankGaussian, draws: usize, rng: &mut Rng) -> Result<SimplexWeights> {
    let eta = posterior_mean(q, model.transform(), draws, rng)?;
    SimplexWeights::from_mass(&eta[..model.k])
}

/// Fits the mixture by ADVI and reports posterior-mean weights.
pub fn fit_advi_weights(
    calibration: &[CalibrationInstance],
    moments: &[Vec<ComponentMoments>],
    mode: AdviMode,
    beta: f64,
    nu: f64,
    config: &AdviConfig,
) -> Result<AdviWeights> {
    let model = VbttaLogJoint::new(calibration, moments, mode, beta, nu)?;
    let fit = advi_fit(&model, model.transform(), &model.initial_q(0.1), config)?;
    let mut rng = Rng::new(config.seed).split_named("advi-posterior-mean", 0);
    let weights = advi_weights(&model, &fit.q, 4000, &mut rng)?;
    Ok(AdviWeights { weights, fit })
}
