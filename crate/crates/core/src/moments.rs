//! Gaussian moments of `f(φ_k(x))` for each augmentation, by first-order
//! propagation (delta method) or by Monte Carlo.

use nalgebra::{DMatrix, DVector};

use crate::augment::{AugmentationSpec, Augmenter, ReferencePool};
use crate::error::{check_dim, Error, Result};
use crate::mathstats::{fnv1a, linalg, Rng};
use crate::par;
use crate::predictor::MlpModel;

/// A smooth map `ℝ^d → ℝ^c` with an input Jacobian.
pub trait Differentiable: Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// `f(x)`; `x` has length [`Self::input_dim`].
    fn value(&self, x: &[f64]) -> Vec<f64>;
    /// `c × d` Jacobian at `x`.
    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

impl Differentiable for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        MlpModel::output_dim(self)
    }

    fn value(&self, x: &[f64]) -> Vec<f64> {
        self.forward_unchecked(x)
    }

    fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.input_gradient(x)
    }
}

/// Draws used to estimate input covariances that have no closed form.
pub const EMPIRICAL_COVARIANCE_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Delta,
    MonteCarlo,
}

/// Mean and per-output variance of one augmentation's predictive component.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseConfig {
    /// Observation-noise variance per output; one entry is broadcast.
    pub sigma_eps: Vec<f64>,
    /// Number of augmented draws averaged per prediction (the `1/N` factor).
    pub n_aug: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_eps: vec![1e-2],
            n_aug: 1,
        }
    }
}

impl NoiseConfig {
    pub fn new(sigma_eps: f64, n_aug: usize) -> Self {
        Self {
            sigma_eps: vec![sigma_eps],
            n_aug,
        }
    }

    fn validate(&self, outputs: usize) -> Result<()> {
        if self.n_aug == 0 {
            return Err(Error::Config("n_aug must be at least 1".into()));
        }
        if self.sigma_eps.is_empty() || self.sigma_eps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("σ_ε must be positive".into()));
        }
        if self.sigma_eps.len() != 1 {
            check_dim(outputs, self.sigma_eps.len())?;
        }
        Ok(())
    }

    fn sigma(&self, i: usize) -> f64 {
        if self.sigma_eps.len() == 1 {
            self.sigma_eps[0]
        } else {
            self.sigma_eps[i]
        }
    }
}

fn input_seed(spec: &AugmentationSpec, x: &[f64]) -> u64 {
    let mut bytes = spec.to_string().into_bytes();
    for v in x {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fnv1a(&bytes)
}

/// Covariance `Σ_k` of `φ_k(x)` around `x`.
///
/// Gaussian noise is exact (`diag(σ²)`). Every other kind is estimated from
/// [`EMPIRICAL_COVARIANCE_SAMPLES`] induced draws with a seed derived from
/// `(spec, x)`, then ridged by `1e-6 · tr(Σ)/d`.
pub fn input_covariance(spec: &AugmentationSpec, x: &[f64], pool: Option<&ReferencePool>) -> Result<DMatrix<f64>> {
    let d = x.len();
    spec.validate(d)?;
    if let AugmentationSpec::GaussianNoise { sigma } = spec {
        let diag = DVector::from_fn(d, |i, _| {
            let s = if sigma.len() == 1 { sigma[0] } else { sigma[i] };
            s * s
        });
        return Ok(DMatrix::from_diagonal(&diag));
    }
    let aug = Augmenter::new(spec, d, pool)?;
    let mut rng = Rng::new(input_seed(spec, x));
    let rows = (0..EMPIRICAL_COVARIANCE_SAMPLES)
        .map(|_| aug.apply(x, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let (_, mut cov) = linalg::sample_covariance(&rows);
    let ridge = 1e-6 * cov.trace() / d as f64;
    if !(ridge > 0.0) {
        return Err(Error::Degenerate(format!("{spec} induces no spread around x")));
    }
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    linalg::cholesky(&cov, "input covariance").map_err(|_| Error::Degenerate(format!("{spec}: covariance is singular")))?;
    Ok(cov)
}

/// Delta-method moments: mean `f(x)`, variance `gᵢᵀ Σ_k gᵢ / n_aug + σ_εᵢ`
/// with `gᵢ` the input gradient of output `i` at `x`.
pub fn delta_method_moments<M: Differentiable + ?Sized>(
    model: &M,
    x: &[f64],
    spec: &AugmentationSpec,
    noise: &NoiseConfig,
    pool: Option<&ReferencePool>,
) -> Result<ComponentMoments> {
    let cov = input_covariance(spec, x, pool)?;
    delta_moments_with_covariance(model, x, &cov, noise)
}

/// Delta-method moments for a precomputed input covariance.
pub fn delta_moments_with_covariance<M: Differentiable + ?Sized>(model: &M, x: &[f64], cov: &DMatrix<f64>, noise: &NoiseConfig) -> Result<ComponentMoments> {
    let out = model.output_dim();
    noise.validate(out)?;
    check_dim(model.input_dim(), x.len())?;
    check_dim(model.input_dim(), cov.nrows())?;
    let mean = model.value(x);
    let jac = model.jacobian(x)?;
    let variance = (0..out)
        .map(|i| {
            let g = jac.row(i).transpose();
            (g.transpose() * cov * &g)[(0, 0)] / noise.n_aug as f64 + noise.sigma(i)
        })
        .collect();
    Ok(ComponentMoments {
        mean,
        variance,
        provenance: Provenance::Delta,
    })
}

/// Monte-Carlo moments: sample mean and unbiased variance of `f(φ_k(x))`
/// over `n_samples` draws, variance scaled by `1/n_aug` plus `σ_ε`.
pub fn mc_moments<M: Differentiable + ?Sized>(
    model: &M,
    x: &[f64],
    spec: &AugmentationSpec,
    n_samples: usize,
    noise: &NoiseConfig,
    rng: &mut Rng,
    pool: Option<&ReferencePool>,
) -> Result<ComponentMoments> {
    if n_samples < 2 {
        return Err(Error::domain("Monte-Carlo moments need at least 2 samples"));
    }
    let out = model.output_dim();
    noise.validate(out)?;
    check_dim(model.input_dim(), x.len())?;
    let aug = Augmenter::new(spec, x.len(), pool)?;
    let mut mean = vec![0.0; out];
    let mut m2 = vec![0.0; out];
    for s in 0..n_samples {
        let y = model.value(&aug.apply(x, rng)?);
        // Welford update.
        for i in 0..out {
            let delta = y[i] - mean[i];
            mean[i] += delta / (s + 1) as f64;
            m2[i] += delta * (y[i] - mean[i]);
        }
    }
    let variance = m2
        .iter()
        .enumerate()
        .map(|(i, v)| v / (n_samples - 1) as f64 / noise.n_aug as f64 + noise.sigma(i))
        .collect();
    Ok(ComponentMoments {
        mean,
        variance,
        provenance: Provenance::MonteCarlo,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentMethod {
    Delta,
    MonteCarlo { samples: usize },
}

/// Moments for every `(instance, augmentation)` pair, parallel over instances.
///
/// Monte-Carlo streams are keyed by the augmentation's textual form and the
/// instance index, so reordering `specs` leaves each pair's moments unchanged.
pub fn moments_for_instances<M: Differentiable + ?Sized>(
    model: &M,
    inputs: &[Vec<f64>],
    specs: &[AugmentationSpec],
    method: MomentMethod,
    noise: &NoiseConfig,
    rng: &Rng,
    pool: Option<&ReferencePool>,
) -> Result<Vec<Vec<ComponentMoments>>> {
    par::try_map_range(inputs.len(), |i| {
        specs
            .iter()
            .map(|spec| match method {
                MomentMethod::Delta => delta_method_moments(model, &inputs[i], spec, noise, pool),
                MomentMethod::MonteCarlo { samples } => {
                    let mut r = rng.split_named(&spec.to_string(), i as u64);
                    mc_moments(model, &inputs[i], spec, samples, noise, &mut r, pool)
                }
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::Head;
    use rand_distr::{Distribution, StandardNormal};

    fn linear(a: &[f64]) -> MlpModel {
        MlpModel::from_layers(&[a.len(), 1], Head::Regression, &[(a.to_vec(), vec![0.0])]).unwrap()
    }

    /// `f(x) = ‖x‖²`.
    struct SquaredNorm(usize);

    impl Differentiable for SquaredNorm {
        fn input_dim(&self) -> usize {
            self.0
        }

        fn output_dim(&self) -> usize {
            1
        }

        fn value(&self, x: &[f64]) -> Vec<f64> {
            vec![x.iter().map(|v| v * v).sum()]
        }

        fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(1, x.len(), &x.iter().map(|v| 2.0 * v).collect::<Vec<_>>()))
        }
    }

    /// Exact variance of `‖x + σε‖²`: `4σ²‖x‖² + 2dσ⁴`.
    fn quadratic_exact(x: &[f64], sigma: f64) -> f64 {
        let s2 = sigma * sigma;
        4.0 * s2 * x.iter().map(|v| v * v).sum::<f64>() + 2.0 * x.len() as f64 * s2 * s2
    }

    #[test]
    fn noise_covariance_is_exact() {
        let c = input_covariance(&AugmentationSpec::gaussian_noise(0.3), &[1.0, 2.0], None).unwrap();
        assert_eq!(c, DMatrix::from_diagonal_element(2, 2, 0.09_f64.max(0.3 * 0.3)));
    }

    #[test]
    fn identity_rotation_is_degenerate() {
        let r = input_covariance(&AugmentationSpec::Rotation { degrees: 0.0, plane: (0, 1) }, &[1.0, 2.0], None);
        assert!(matches!(r, Err(Error::Degenerate(_))));
    }

    #[test]
    fn mixup_covariance_matches_analytic_moments() {
        // (1-λ)x + λx* ⇒ Cov = E[λ²] S + Var(λ) (m - x)(m - x)ᵀ
        let mut rng = Rng::new(40);
        let d = 2;
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![1.0 + 2.0 * a, -1.0 + 0.5 * a + b]
            })
            .collect();
        let pool = ReferencePool::new(rows).unwrap();
        let (m, s) = pool.mean_and_covariance();
        // population covariance of the pool, since partners are drawn from it
        let s = s * (4999.0 / 5000.0);
        let alpha: f64 = 0.5;
        let var_l = 1.0 / (4.0 * (2.0 * alpha + 1.0));
        let e_l2 = var_l + 0.25;
        let x = vec![2.0, 1.0];
        let dx = &m - DVector::from_vec(x.clone());
        let expect = &s * e_l2 + &dx * dx.transpose() * var_l;
        let got = input_covariance(&AugmentationSpec::Mixup { alpha }, &x, Some(&pool)).unwrap();
        let n = EMPIRICAL_COVARIANCE_SAMPLES as f64;
        for i in 0..d {
            for j in 0..d {
                // crude standard error via the Gaussian fourth-moment formula
                let se = ((expect[(i, i)] * expect[(j, j)] + expect[(i, j)].powi(2)) / n).sqrt();
                assert!((got[(i, j)] - expect[(i, j)]).abs() < 4.0 * se * 1.5, "({i},{j}) {} vs {}", got[(i, j)], expect[(i, j)]);
            }
        }
    }

    #[test]
    fn delta_is_exact_for_linear_models() {
        let a = [1.0, -2.0, 0.5];
        let m = linear(&a);
        let noise = NoiseConfig::new(0.1, 1);
        let mm = delta_method_moments(&m, &[0.3, 0.2, 0.1], &AugmentationSpec::gaussian_noise(0.4), &noise, None).unwrap();
        let norm2: f64 = a.iter().map(|v| v * v).sum();
        assert!((mm.variance[0] - (0.16 * norm2 + 0.1)).abs() < 1e-14);
        assert_eq!(mm.mean, m.forward(&[0.3, 0.2, 0.1]).unwrap());
        assert_eq!(mm.provenance, Provenance::Delta);
    }

    #[test]
    fn vanishing_spread_leaves_sigma_eps() {
        let m = MlpModel::new(&[3, 8, 1], Head::Regression, &mut Rng::new(1)).unwrap();
        let noise = NoiseConfig::new(0.25, 1);
        let mm = delta_method_moments(&m, &[0.3, 0.2, 0.1], &AugmentationSpec::gaussian_noise(0.0), &noise, None).unwrap();
        assert_eq!(mm.variance[0], 0.25);
    }

    #[test]
    fn doubling_n_aug_halves_gradient_term() {
        let m = MlpModel::new(&[3, 8, 1], Head::Regression, &mut Rng::new(2)).unwrap();
        let spec = AugmentationSpec::gaussian_noise(0.3);
        let x = [0.5, -0.1, 0.2];
        let one = delta_method_moments(&m, &x, &spec, &NoiseConfig::new(0.2, 1), None).unwrap();
        let two = delta_method_moments(&m, &x, &spec, &NoiseConfig::new(0.2, 2), None).unwrap();
        assert!(((one.variance[0] - 0.2) - 2.0 * (two.variance[0] - 0.2)).abs() < 1e-15);
        assert!(two.variance[0] >= 0.2);
    }

    #[test]
    fn quadratic_delta_vs_mc_small_noise() {
        let x = [0.8, -0.5, 1.2];
        let noise = NoiseConfig::new(1e-6, 1);
        let spec = AugmentationSpec::gaussian_noise(0.05);
        let delta = delta_method_moments(&SquaredNorm(3), &x, &spec, &noise, None).unwrap();
        let mc = mc_moments(&SquaredNorm(3), &x, &spec, 1_000_000, &noise, &mut Rng::new(3), None).unwrap();
        assert!(((delta.variance[0] - mc.variance[0]) / mc.variance[0]).abs() < 0.1);
        // Monte Carlo itself tracks the closed form.
        let exact = quadratic_exact(&x, 0.05) + 1e-6;
        assert!(((mc.variance[0] - exact) / exact).abs() < 0.01);
    }

    #[test]
    fn delta_error_shrinks_with_noise() {
        let x = [0.8, -0.5, 1.2];
        let noise = NoiseConfig::new(1e-6, 1);
        for seed in 0..10 {
            let err = |s: f64| {
                let spec = AugmentationSpec::gaussian_noise(s);
                let delta = delta_method_moments(&SquaredNorm(3), &x, &spec, &noise, None).unwrap();
                let mc = mc_moments(&SquaredNorm(3), &x, &spec, 20_000, &noise, &mut Rng::new(seed), None).unwrap();
                ((delta.variance[0] - mc.variance[0]) / mc.variance[0]).abs()
            };
            assert!(err(0.01) < err(0.5));
        }
    }

    #[test]
    fn mc_deterministic_spec() {
        let m = MlpModel::new(&[2, 8, 1], Head::Regression, &mut Rng::new(4)).unwrap();
        let noise = NoiseConfig::new(0.3, 1);
        let spec = AugmentationSpec::Rotation { degrees: 0.0, plane: (0, 1) };
        let mm = mc_moments(&m, &[0.2, 0.4], &spec, 10, &noise, &mut Rng::new(0), None).unwrap();
        assert!((mm.mean[0] - m.forward(&[0.2, 0.4]).unwrap()[0]).abs() < 1e-12);
        assert!((mm.variance[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mc_matches_delta_for_linear_model() {
        let m = linear(&[0.7, -1.1]);
        let noise = NoiseConfig::new(0.05, 1);
        let spec = AugmentationSpec::gaussian_noise(0.5);
        let n = 1_000_000;
        let mc = mc_moments(&m, &[1.0, 1.0], &spec, n, &noise, &mut Rng::new(5), None).unwrap();
        let de = delta_method_moments(&m, &[1.0, 1.0], &spec, &noise, None).unwrap();
        let var = de.variance[0] - 0.05;
        // Var of the sample variance for Gaussian output is 2σ⁴/(n-1).
        let se = (2.0 * var * var / (n - 1) as f64).sqrt();
        assert!((mc.variance[0] - de.variance[0]).abs() < 3.0 * se);
    }

    #[test]
    fn mc_with_two_samples_is_finite() {
        let m = MlpModel::new(&[2, 4, 1], Head::Regression, &mut Rng::new(6)).unwrap();
        let mm = mc_moments(&m, &[0.1, 0.2], &AugmentationSpec::gaussian_noise(0.1), 2, &NoiseConfig::default(), &mut Rng::new(1), None)
            .unwrap();
        assert!(mm.variance[0].is_finite() && mm.variance[0] >= 1e-2);
        assert!(mc_moments(&m, &[0.1, 0.2], &AugmentationSpec::gaussian_noise(0.1), 1, &NoiseConfig::default(), &mut Rng::new(1), None)
            .is_err());
    }

    #[test]
    fn batch_moments_are_order_independent() {
        let m = MlpModel::new(&[2, 6, 1], Head::Regression, &mut Rng::new(7)).unwrap();
        let inputs = vec![vec![0.1, 0.2], vec![-0.4, 0.9]];
        let specs = vec![AugmentationSpec::gaussian_noise(0.1), AugmentationSpec::gaussian_noise(0.3)];
        let rev: Vec<_> = specs.iter().rev().cloned().collect();
        let method = MomentMethod::MonteCarlo { samples: 50 };
        let a = moments_for_instances(&m, &inputs, &specs, method, &NoiseConfig::default(), &Rng::new(1), None).unwrap();
        let b = moments_for_instances(&m, &inputs, &rev, method, &NoiseConfig::default(), &Rng::new(1), None).unwrap();
        for i in 0..2 {
            assert_eq!(a[i][0], b[i][1]);
            assert_eq!(a[i][1], b[i][0]);
        }
    }
}
