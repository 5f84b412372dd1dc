use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mathstats::{Rng, LN_2PI};

const HEADER: &str = "vbtta-advi 1";

/// `q(ζ) = N(μ, LLᵀ)` with lower-triangular `L` and positive diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct FullRankGaussian {
    pub mean: DVector<f64>,
    pub chol: DMatrix<f64>,
}

impl FullRankGaussian {
    pub fn new(mean: DVector<f64>, chol: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if chol.nrows() != m || chol.ncols() != m {
            return Err(Error::Dimension { expected: m, got: chol.nrows() });
        }
        for i in 0..m {
            if !(chol[(i, i)] > 0.0) {
                return Err(Error::domain("Cholesky factor needs a positive diagonal"));
            }
            for j in i + 1..m {
                if chol[(i, j)] != 0.0 {
                    return Err(Error::domain("Cholesky factor must be lower-triangular"));
                }
            }
        }
        Ok(Self { mean, chol })
    }

    pub fn standard(m: usize) -> Self {
        Self {
            mean: DVector::zeros(m),
            chol: DMatrix::identity(m, m),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `H = (m/2)(1 + ln 2π) + Σ ln L_ii`.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + LN_2PI) + self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn ln_pdf(&self, zeta: &DVector<f64>) -> f64 {
        let d = zeta - &self.mean;
        let e = self.chol.solve_lower_triangular(&d).expect("positive diagonal");
        -0.5 * self.dim() as f64 * LN_2PI - self.chol.diagonal().iter().map(|v| v.ln()).sum::<f64>() - 0.5 * e.norm_squared()
    }

    pub fn standard_draw(&self, rng: &mut Rng) -> DVector<f64> {
        DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng))
    }

    /// `ζ = μ + Lε`.
    pub fn transform(&self, eps: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.chol * eps
    }

    pub fn sample(&self, rng: &mut Rng) -> DVector<f64> {
        let e = self.standard_draw(rng);
        self.transform(&e)
    }

    /// Free parameters: mean, then the lower triangle row by row with the
    /// diagonal stored as its logarithm.
    pub(crate) fn to_params(&self) -> Vec<f64> {
        let m = self.dim();
        let mut p: Vec<f64> = self.mean.iter().copied().collect();
        for i in 0..m {
            for j in 0..=i {
                p.push(if i == j { self.chol[(i, i)].ln() } else { self.chol[(i, j)] });
            }
        }
        p
    }

    pub(crate) fn from_params(m: usize, p: &[f64]) -> Self {
        let mean = DVector::from_column_slice(&p[..m]);
        let mut chol = DMatrix::zeros(m, m);
        let mut at = m;
        for i in 0..m {
            for j in 0..=i {
                chol[(i, j)] = if i == j { p[at].exp() } else { p[at] };
                at += 1;
            }
        }
        Self { mean, chol }
    }

    pub fn to_text(&self) -> String {
        let m = self.dim();
        let mut s = format!("{HEADER}\ndim {m}\nmean");
        for v in self.mean.iter() {
            let _ = write!(s, " {v:?}");
        }
        s.push('\n');
        for i in 0..m {
            s.push_str("chol");
            for j in 0..=i {
                let _ = write!(s, " {:?}", self.chol[(i, j)]);
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
        let lines: Vec<&str> = text.lines().collect();
        if lines.first().map(|l| l.trim()) != Some(HEADER) {
            return Err(bad(1, "unsupported header"));
        }
        let m: usize = lines
            .get(1)
            .and_then(|l| l.strip_prefix("dim "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad(2, "expected `dim <m>`"))?;
        let nums = |n: usize, prefix: &str| -> Result<Vec<f64>> {
            let l = lines.get(n - 1).and_then(|l| l.strip_prefix(prefix)).ok_or_else(|| bad(n, &format!("expected `{prefix}`")))?;
            l.split_whitespace().map(|v| v.parse().map_err(|_| bad(n, "bad number"))).collect()
        };
        let mean = nums(3, "mean")?;
        if mean.len() != m {
            return Err(bad(3, "mean length differs from dim"));
        }
        let mut chol = DMatrix::zeros(m, m);
        for i in 0..m {
            let row = nums(4 + i, "chol")?;
            if row.len() != i + 1 {
                return Err(bad(4 + i, "wrong row length"));
            }
            for (j, v) in row.into_iter().enumerate() {
                chol[(i, j)] = v;
            }
        }
        Self::new(DVector::from_vec(mean), chol).map_err(|e| bad(4, &e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_q(m: usize, rng: &mut Rng) -> FullRankGaussian {
        let mut chol = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..i {
                chol[(i, j)] = rng.gen_range(-0.5..0.5);
            }
            chol[(i, i)] = rng.gen_range(0.2..2.0);
        }
        FullRankGaussian::new(DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0)), chol).unwrap()
    }

    #[test]
    fn entropy_of_standard_normal() {
        assert!((FullRankGaussian::standard(2).entropy() - (1.0 + LN_2PI)).abs() < 1e-15);
    }

    #[test]
    fn entropy_matches_monte_carlo() {
        let mut rng = Rng::new(31);
        let q = random_q(3, &mut rng);
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let v = -q.ln_pdf(&q.sample(&mut rng));
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - q.entropy()).abs() < 3.0 * se, "{mean} vs {}", q.entropy());
    }

    #[test]
    fn params_round_trip() {
        let q = random_q(4, &mut Rng::new(32));
        let back = FullRankGaussian::from_params(4, &q.to_params());
        assert!((back.chol - &q.chol).abs().max() < 1e-14);
        assert_eq!(back.mean, q.mean);
    }

    #[test]
    fn text_round_trip() {
        let q = random_q(3, &mut Rng::new(33));
        let back = FullRankGaussian::from_text(&q.to_text()).unwrap();
        assert!((back.chol - &q.chol).abs().max() <= 1e-10);
        assert!((back.mean - &q.mean).abs().max() <= 1e-10);
    }

    #[test]
    fn rejects_invalid_factors() {
        let upper = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(FullRankGaussian::new(DVector::zeros(2), upper).is_err());
        assert!(FullRankGaussian::new(DVector::zeros(1), DMatrix::from_element(1, 1, 0.0)).is_err());
        assert!(FullRankGaussian::from_text("vbtta-advi 1\ndim 1\nmean 0.0\nchol -1.0\n").is_err());
    }
}
