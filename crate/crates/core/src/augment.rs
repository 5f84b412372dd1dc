//! Test-time augmentation operators, the point clouds they induce around a
//! fixed input, and Mardia normality diagnostics for those clouds.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::mathstats::{gamma_q, linalg, std_normal_cdf, Rng};

/// One test-time transform.
#[derive(Clone, Debug, PartialEq)]
pub enum AugmentationSpec {
    /// Additive noise with per-dimension standard deviation; a single entry
    /// is broadcast to every dimension.
    GaussianNoise { sigma: Vec<f64> },
    /// Rotation by `degrees` in the plane spanned by two coordinate axes.
    Rotation { degrees: f64, plane: (usize, usize) },
    /// `x ↦ A x + b`.
    Affine { matrix: DMatrix<f64>, shift: DVector<f64> },
    /// `(1-λ) x + λ x*` with `λ ~ Beta(α, α)`.
    Mixup { alpha: f64 },
    /// `M ⊙ x + (1-M) ⊙ x*` with independent `M_i ~ Beta(α, α)`.
    Cutmix { alpha: f64 },
}

impl AugmentationSpec {
    pub fn gaussian_noise(sigma: f64) -> Self {
        AugmentationSpec::GaussianNoise { sigma: vec![sigma] }
    }

    pub fn needs_pool(&self) -> bool {
        matches!(self, AugmentationSpec::Mixup { .. } | AugmentationSpec::Cutmix { .. })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AugmentationSpec::GaussianNoise { .. } => "gaussian_noise",
            AugmentationSpec::Rotation { .. } => "rotation",
            AugmentationSpec::Affine { .. } => "affine",
            AugmentationSpec::Mixup { .. } => "mixup",
            AugmentationSpec::Cutmix { .. } => "cutmix",
        }
    }

    /// Stable 64-bit fingerprint of the canonical textual form.
    pub fn fingerprint(&self) -> u64 {
        crate::mathstats::fnv1a(self.to_string().as_bytes())
    }

    /// Checks parameter ranges and compatibility with input dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            AugmentationSpec::GaussianNoise { sigma } => {
                if sigma.is_empty() || sigma.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
                    return Err(Error::domain("gaussian_noise σ must be finite and ≥ 0"));
                }
                if sigma.len() != 1 {
                    check_dim(d, sigma.len())?;
                }
            }
            AugmentationSpec::Rotation { degrees, plane } => {
                if !degrees.is_finite() {
                    return Err(Error::domain("rotation angle must be finite"));
                }
                if plane.0 == plane.1 || plane.0 >= d || plane.1 >= d {
                    return Err(Error::domain(format!(
                        "rotation plane ({}, {}) invalid for dimension {d}",
                        plane.0, plane.1
                    )));
                }
            }
            AugmentationSpec::Affine { matrix, shift } => {
                check_dim(d, matrix.nrows())?;
                check_dim(d, matrix.ncols())?;
                check_dim(d, shift.len())?;
            }
            AugmentationSpec::Mixup { alpha } | AugmentationSpec::Cutmix { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::domain(format!("{} α must lie in (0, 1), got {alpha}", self.kind())));
                }
            }
        }
        Ok(())
    }

    /// Matrix of the linear part for rotation/affine specs.
    pub fn linear_map(&self, d: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
        match self {
            AugmentationSpec::Rotation { degrees, plane } => {
                let (s, c) = degrees.to_radians().sin_cos();
                let mut r = DMatrix::identity(d, d);
                let (i, j) = *plane;
                r[(i, i)] = c;
                r[(j, j)] = c;
                r[(j, i)] = s;
                r[(i, j)] = -s;
                Some((r, DVector::zeros(d)))
            }
            AugmentationSpec::Affine { matrix, shift } => Some((matrix.clone(), shift.clone())),
            _ => None,
        }
    }
}

impl fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(|x| format!("{x}")).collect::<Vec<_>>().join(" ");
        match self {
            AugmentationSpec::GaussianNoise { sigma } => {
                write!(f, "gaussian_noise({})", join(&mut sigma.iter().copied()))
            }
            AugmentationSpec::Rotation { degrees, plane } => {
                write!(f, "rotation({degrees};{};{})", plane.0, plane.1)
            }
            AugmentationSpec::Affine { matrix, shift } => {
                let rows = matrix.transpose();
                write!(
                    f,
                    "affine({};{})",
                    join(&mut rows.iter().copied()),
                    join(&mut shift.iter().copied())
                )
            }
            AugmentationSpec::Mixup { alpha } => write!(f, "mixup({alpha})"),
            AugmentationSpec::Cutmix { alpha } => write!(f, "cutmix({alpha})"),
        }
    }
}

impl FromStr for AugmentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |m: &str| Error::Config(format!("augmentation `{s}`: {m}"));
        let open = s.find('(').ok_or_else(|| bad("expected name(args)"))?;
        if !s.ends_with(')') {
            return Err(bad("missing closing parenthesis"));
        }
        let name = s[..open].trim();
        let args: Vec<&str> = s[open + 1..s.len() - 1].split(';').map(str::trim).collect();
        let nums = |a: &str| -> Result<Vec<f64>> {
            a.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("`{t}` is not a number"))))
                .collect()
        };
        let one = |a: &[&str]| -> Result<f64> {
            match a {
                [v] => v.parse::<f64>().map_err(|_| bad("expected one number")),
                _ => Err(bad("expected one argument")),
            }
        };
        match name {
            "gaussian_noise" => Ok(AugmentationSpec::GaussianNoise { sigma: nums(args[0])? }),
            "mixup" => Ok(AugmentationSpec::Mixup { alpha: one(&args)? }),
            "cutmix" => Ok(AugmentationSpec::Cutmix { alpha: one(&args)? }),
            "rotation" => match args.as_slice() {
                [deg, i, j] => Ok(AugmentationSpec::Rotation {
                    degrees: deg.parse().map_err(|_| bad("bad angle"))?,
                    plane: (
                        i.parse().map_err(|_| bad("bad axis"))?,
                        j.parse().map_err(|_| bad("bad axis"))?,
                    ),
                }),
                _ => Err(bad("rotation takes (degrees; axis; axis)")),
            },
            "affine" => match args.as_slice() {
                [a, b] => {
                    let a = nums(a)?;
                    let b = nums(b)?;
                    let d = b.len();
                    if a.len() != d * d {
                        return Err(bad("matrix must have d² entries for a d-vector shift"));
                    }
                    Ok(AugmentationSpec::Affine {
                        matrix: DMatrix::from_row_slice(d, d, &a),
                        shift: DVector::from_vec(b),
                    })
                }
                _ => Err(bad("affine takes (row-major matrix; shift)")),
            },
            other => Err(bad(&format!("unknown kind `{other}`"))),
        }
    }
}

/// Training instances that mixup and cutmix draw partners from.
#[derive(Clone, Debug)]
pub struct ReferencePool {
    rows: Arc<Vec<Vec<f64>>>,
    dim: usize,
}

impl ReferencePool {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).ok_or_else(|| Error::domain("reference pool is empty"))?;
        for r in &rows {
            check_dim(dim, r.len())?;
        }
        Ok(Self {
            rows: Arc::new(rows),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Uniform draw with replacement.
    pub fn draw<'a>(&'a self, rng: &mut Rng) -> &'a [f64] {
        &self.rows[rng.gen_range(0..self.rows.len())]
    }

    pub fn mean_and_covariance(&self) -> (DVector<f64>, DMatrix<f64>) {
        linalg::sample_covariance(&self.rows)
    }
}

/// `(1-λ) x + λ partner`.
pub fn mixup_with(x: &[f64], partner: &[f64], lambda: f64) -> Vec<f64> {
    x.iter().zip(partner).map(|(a, b)| (1.0 - lambda) * a + lambda * b).collect()
}

/// `M ⊙ x + (1-M) ⊙ partner`.
pub fn cutmix_with(x: &[f64], partner: &[f64], mask: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(partner)
        .zip(mask)
        .map(|((a, b), m)| m * a + (1.0 - m) * b)
        .collect()
}

fn require_pool<'a>(spec: &AugmentationSpec, pool: Option<&'a ReferencePool>, d: usize) -> Result<&'a ReferencePool> {
    let pool = pool.ok_or_else(|| Error::Config(format!("{} requires a reference pool", spec.kind())))?;
    check_dim(d, pool.dim())?;
    Ok(pool)
}

/// Applies one random draw of `spec` to `x`.
pub fn apply_augmentation(spec: &AugmentationSpec, x: &[f64], rng: &mut Rng, pool: Option<&ReferencePool>) -> Result<Vec<f64>> {
    Augmenter::new(spec, x.len(), pool)?.apply(x, rng)
}

/// A validated spec bound to an input dimension and optional pool, so repeated
/// draws skip re-validation.
#[derive(Clone, Debug)]
pub struct Augmenter<'a> {
    spec: &'a AugmentationSpec,
    pool: Option<&'a ReferencePool>,
    linear: Option<(DMatrix<f64>, DVector<f64>)>,
    beta: Option<Beta<f64>>,
    dim: usize,
}

impl<'a> Augmenter<'a> {
    pub fn new(spec: &'a AugmentationSpec, dim: usize, pool: Option<&'a ReferencePool>) -> Result<Self> {
        spec.validate(dim)?;
        let pool = if spec.needs_pool() {
            Some(require_pool(spec, pool, dim)?)
        } else {
            None
        };
        let beta = match spec {
            AugmentationSpec::Mixup { alpha } | AugmentationSpec::Cutmix { alpha } => {
                Some(Beta::new(*alpha, *alpha).map_err(|e| Error::domain(e.to_string()))?)
            }
            _ => None,
        };
        Ok(Self {
            spec,
            pool,
            linear: spec.linear_map(dim),
            beta,
            dim,
        })
    }

    pub fn apply(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(match self.spec {
            AugmentationSpec::GaussianNoise { sigma } => x
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let s = if sigma.len() == 1 { sigma[0] } else { sigma[i] };
                    if s == 0.0 {
                        *v
                    } else {
                        let e: f64 = StandardNormal.sample(rng);
                        v + s * e
                    }
                })
                .collect(),
            AugmentationSpec::Rotation { .. } | AugmentationSpec::Affine { .. } => {
                let (a, b) = self.linear.as_ref().expect("linear map present");
                let y = a * DVector::from_column_slice(x) + b;
                y.iter().copied().collect()
            }
            AugmentationSpec::Mixup { .. } => {
                let beta = self.beta.as_ref().expect("beta present");
                let lambda = beta.sample(rng);
                let partner = self.pool.expect("pool present").draw(rng);
                mixup_with(x, partner, lambda)
            }
            AugmentationSpec::Cutmix { .. } => {
                let beta = self.beta.as_ref().expect("beta present");
                let partner = self.pool.expect("pool present").draw(rng);
                let mask: Vec<f64> = (0..self.dim).map(|_| beta.sample(rng)).collect();
                cutmix_with(x, partner, &mask)
            }
        })
    }
}

/// `n` independent applications of `spec` to the same fixed `x`.
pub fn induced_distribution_sample(
    spec: &AugmentationSpec,
    x: &[f64],
    n: usize,
    rng: &mut Rng,
    pool: Option<&ReferencePool>,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let aug = Augmenter::new(spec, x.len(), pool)?;
    (0..n).map(|_| aug.apply(x, rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
}

/// Mardia's multivariate skewness and kurtosis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalityReport {
    /// `b₁,d`.
    pub skewness: f64,
    /// `b₂,d`.
    pub kurtosis: f64,
    /// `n b₁ / 6` against χ² with `d(d+1)(d+2)/6` degrees of freedom.
    pub skewness_test: TestOutcome,
    /// `(b₂ - d(d+2)) / sqrt(8 d (d+2) / n)` against N(0,1), two-sided.
    pub kurtosis_test: TestOutcome,
}

pub fn normality_statistics(samples: &[Vec<f64>]) -> Result<NormalityReport> {
    let n = samples.len();
    let d = samples.first().map_or(0, |r| r.len());
    if d == 0 || n <= d + 1 {
        return Err(Error::Degenerate(format!("need more than d+1 = {} samples, got {n}", d + 1)));
    }
    for r in samples {
        check_dim(d, r.len())?;
    }
    let (mean, cov) = linalg::sample_covariance(samples);
    // Mardia uses the maximum-likelihood covariance.
    let cov = cov * ((n - 1) as f64 / n as f64);
    let scale = cov.trace() / d as f64;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("sample covariance is zero".into()));
    }
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Degenerate("sample covariance is singular".into()))?;
    let l = chol.l();
    if l.diagonal().iter().any(|v| v * v < 1e-12 * scale) {
        return Err(Error::Degenerate("sample covariance is numerically singular".into()));
    }
    let whitened: Vec<DVector<f64>> = samples
        .iter()
        .map(|r| {
            let c = DVector::from_column_slice(r) - &mean;
            l.solve_lower_triangular(&c).expect("nonsingular triangle")
        })
        .collect();

    // b1 = Σ_abc (mean_i z_a z_b z_c)²; b2 = mean_i |z_i|⁴.
    let mut third = vec![0.0; d * d * d];
    let mut b2 = 0.0;
    for z in &whitened {
        for a in 0..d {
            for b in 0..d {
                let zab = z[a] * z[b];
                for c in 0..d {
                    third[(a * d + b) * d + c] += zab * z[c];
                }
            }
        }
        b2 += z.norm_squared().powi(2);
    }
    let nf = n as f64;
    let b1: f64 = third.iter().map(|t| (t / nf).powi(2)).sum();
    let b2 = b2 / nf;

    let df = (d * (d + 1) * (d + 2)) as f64 / 6.0;
    let skew_stat = nf * b1 / 6.0;
    let skew_p = gamma_q(df / 2.0, skew_stat / 2.0)?;
    let df_k = (d * (d + 2)) as f64;
    let kurt_stat = (b2 - df_k) / (8.0 * df_k / nf).sqrt();
    let kurt_p = 2.0 * std_normal_cdf(-kurt_stat.abs());
    Ok(NormalityReport {
        skewness: b1,
        kurtosis: b2,
        skewness_test: TestOutcome {
            statistic: skew_stat,
            p_value: skew_p,
        },
        kurtosis_test: TestOutcome {
            statistic: kurt_stat,
            p_value: kurt_p,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathstats::{sample, DistSpec, Draw};

    fn normal_pool(n: usize, d: usize, seed: u64) -> ReferencePool {
        let mut rng = Rng::new(seed);
        ReferencePool::new(
            (0..n)
                .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let x = vec![1.0, -2.0, 3.5];
        let mut rng = Rng::new(0);
        let y = apply_augmentation(&AugmentationSpec::gaussian_noise(0.0), &x, &mut rng, None).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn mixup_endpoints() {
        let x = [1.0, 2.0];
        let p = [5.0, -1.0];
        assert_eq!(mixup_with(&x, &p, 0.0), x.to_vec());
        assert_eq!(mixup_with(&x, &p, 1.0), p.to_vec());
    }

    #[test]
    fn quarter_turn_rotation() {
        let x = [1.0, 0.0, 0.0];
        let spec = AugmentationSpec::Rotation { degrees: 90.0, plane: (0, 1) };
        let y = apply_augmentation(&spec, &x, &mut Rng::new(0), None).unwrap();
        assert!((y[0]).abs() < 1e-12 && (y[1] - 1.0).abs() < 1e-12 && y[2] == 0.0);
    }

    #[test]
    fn mixup_without_pool_is_config_error() {
        let r = apply_augmentation(&AugmentationSpec::Mixup { alpha: 0.5 }, &[0.0], &mut Rng::new(0), None);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn pool_dimension_mismatch() {
        let pool = normal_pool(10, 3, 1);
        let r = apply_augmentation(&AugmentationSpec::Cutmix { alpha: 0.5 }, &[0.0, 1.0], &mut Rng::new(0), Some(&pool));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(AugmentationSpec::Mixup { alpha: 1.0 }.validate(2).is_err());
        assert!(AugmentationSpec::Cutmix { alpha: 0.0 }.validate(2).is_err());
        assert!(AugmentationSpec::gaussian_noise(-1.0).validate(2).is_err());
        assert!(AugmentationSpec::Rotation { degrees: 10.0, plane: (1, 1) }.validate(2).is_err());
        assert!(AugmentationSpec::Rotation { degrees: 10.0, plane: (0, 2) }.validate(2).is_err());
    }

    #[test]
    fn spec_text_round_trip() {
        let specs = [
            AugmentationSpec::gaussian_noise(0.3),
            AugmentationSpec::GaussianNoise { sigma: vec![0.1, 0.25] },
            AugmentationSpec::Rotation { degrees: 30.0, plane: (0, 2) },
            AugmentationSpec::Affine {
                matrix: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.25, 2.0]),
                shift: DVector::from_vec(vec![0.1, -3.0]),
            },
            AugmentationSpec::Mixup { alpha: 0.1 },
            AugmentationSpec::Cutmix { alpha: 0.9 },
        ];
        for s in specs {
            let parsed: AugmentationSpec = s.to_string().parse().unwrap();
            assert_eq!(parsed, s);
        }
        assert!("blur(3)".parse::<AugmentationSpec>().is_err());
    }

    #[test]
    fn single_draw_matches_apply() {
        let pool = normal_pool(50, 2, 2);
        let spec = AugmentationSpec::Mixup { alpha: 0.5 };
        let x = [0.3, -0.7];
        let rows = induced_distribution_sample(&spec, &x, 1, &mut Rng::new(5), Some(&pool)).unwrap();
        let one = apply_augmentation(&spec, &x, &mut Rng::new(5), Some(&pool)).unwrap();
        assert_eq!(rows, vec![one]);
    }

    #[test]
    fn noise_covariance_matches_sigma_squared() {
        let sigma = 0.4;
        let n = 100_000;
        let rows = induced_distribution_sample(
            &AugmentationSpec::gaussian_noise(sigma),
            &[1.0, -1.0],
            n,
            &mut Rng::new(8),
            None,
        )
        .unwrap();
        let (_, cov) = linalg::sample_covariance(&rows);
        let s2 = sigma * sigma;
        // Var of a sample variance ≈ 2σ⁴/n, of a sample covariance ≈ σ⁴/n.
        let se_diag = (2.0 * s2 * s2 / n as f64).sqrt();
        let se_off = (s2 * s2 / n as f64).sqrt();
        assert!((cov[(0, 0)] - s2).abs() < 4.0 * se_diag);
        assert!((cov[(1, 1)] - s2).abs() < 4.0 * se_diag);
        assert!(cov[(0, 1)].abs() < 4.0 * se_off);
    }

    // The χ² reference for n·b₁/6 assumes Gaussian sixth moments; λ·x* is a
    // scale mixture with heavier tails, so the test over-rejects here (about
    // half the seeds at α = 0.01). Kept as documentation of that behaviour.
    #[test]
    #[ignore = "Mardia skewness χ² null over-rejects for mixup's scale-mixture tails"]
    fn mixup_at_pool_mean_looks_gaussian_in_skewness() {
        let mut accepted = 0;
        for seed in 0..10 {
            let pool = normal_pool(10_000, 2, 100 + seed);
            let (mean, _) = pool.mean_and_covariance();
            let x: Vec<f64> = mean.iter().copied().collect();
            let rows =
                induced_distribution_sample(&AugmentationSpec::Mixup { alpha: 0.5 }, &x, 10_000, &mut Rng::new(seed), Some(&pool))
                    .unwrap();
            let r = normality_statistics(&rows).unwrap();
            if r.skewness_test.p_value > 0.01 {
                accepted += 1;
            }
        }
        assert!(accepted >= 8, "{accepted}/10");
    }

    #[test]
    fn mixup_skewness_grows_toward_the_tail() {
        let mut wins = 0;
        for seed in 0..10 {
            let pool = normal_pool(10_000, 2, 200 + seed);
            let (mean, _) = pool.mean_and_covariance();
            let centre: Vec<f64> = mean.iter().copied().collect();
            let tail: Vec<f64> = mean.iter().map(|m| m + 3.0).collect();
            let spec = AugmentationSpec::Mixup { alpha: 0.5 };
            let at = |x: &[f64]| {
                let rows = induced_distribution_sample(&spec, x, 10_000, &mut Rng::new(seed), Some(&pool)).unwrap();
                normality_statistics(&rows).unwrap().skewness
            };
            if at(&tail) > at(&centre) {
                wins += 1;
            }
        }
        assert!(wins >= 8, "{wins}/10");
    }

    #[test]
    fn mixup_and_cutmix_stay_on_segment() {
        let pool = normal_pool(200, 3, 4);
        let x = [2.0, -1.0, 0.5];
        let mut rng = Rng::new(12);
        for spec in [AugmentationSpec::Mixup { alpha: 0.3 }, AugmentationSpec::Cutmix { alpha: 0.3 }] {
            let aug = Augmenter::new(&spec, 3, Some(&pool)).unwrap();
            for _ in 0..2000 {
                // Replay the partner choice by cloning the stream.
                let mut probe = rng.clone();
                let y = aug.apply(&x, &mut rng).unwrap();
                let partner = match spec {
                    AugmentationSpec::Mixup { .. } => {
                        let _: f64 = Beta::new(0.3, 0.3).unwrap().sample(&mut probe);
                        pool.draw(&mut probe).to_vec()
                    }
                    _ => pool.draw(&mut probe).to_vec(),
                };
                for i in 0..3 {
                    let (lo, hi) = if x[i] < partner[i] { (x[i], partner[i]) } else { (partner[i], x[i]) };
                    assert!(y[i] >= lo - 1e-12 && y[i] <= hi + 1e-12);
                }
                if let AugmentationSpec::Mixup { .. } = spec {
                    // collinear with x and partner
                    let t = (y[0] - x[0]) / (partner[0] - x[0]);
                    for i in 1..3 {
                        assert!((x[i] + t * (partner[i] - x[i]) - y[i]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn mardia_is_affine_invariant() {
        let mut rng = Rng::new(31);
        let rows: Vec<Vec<f64>> = (0..3000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![a.exp(), a * b, b]
            })
            .collect();
        let base = normality_statistics(&rows).unwrap();
        let a: DMatrix<f64> = DMatrix::from_fn(3, 3, |_, _| StandardNormal.sample(&mut rng));
        assert!(a.determinant().abs() > 1e-3);
        let shift: DVector<f64> = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut rng));
        let mapped: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| (&a * DVector::from_column_slice(r) + &shift).iter().copied().collect())
            .collect();
        let other = normality_statistics(&mapped).unwrap();
        assert!((base.skewness - other.skewness).abs() < 1e-8 * base.skewness.max(1.0));
        assert!((base.kurtosis - other.kurtosis).abs() < 1e-8 * base.kurtosis.max(1.0));
    }

    #[test]
    fn gaussian_null_calibration() {
        let spec = DistSpec::gaussian(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let s = spec.sampler().unwrap();
        let mut ok = 0;
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let rows: Vec<Vec<f64>> = (0..100_000)
                .map(|_| match s.draw(&mut rng) {
                    Draw::Vector(v) => v.iter().copied().collect(),
                    _ => unreachable!(),
                })
                .collect();
            if normality_statistics(&rows).unwrap().skewness_test.p_value > 0.01 {
                ok += 1;
            }
        }
        assert!(ok >= 9, "{ok}/10");
    }

    #[test]
    fn lognormal_kurtosis_rejects() {
        let spec = DistSpec::gaussian(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let mut rng = Rng::new(77);
        let rows: Vec<Vec<f64>> = (0..5000)
            .map(|_| match sample(&spec, &mut rng).unwrap() {
                Draw::Vector(v) => vec![v[0].exp()],
                _ => unreachable!(),
            })
            .collect();
        let r = normality_statistics(&rows).unwrap();
        // one-sided 99th percentile of N(0,1)
        assert!(r.kurtosis_test.statistic > 2.326_347_874);
    }

    #[test]
    fn constant_samples_are_degenerate() {
        let rows = vec![vec![1.0, 2.0]; 100];
        assert!(matches!(normality_statistics(&rows), Err(Error::Degenerate(_))));
    }
}
