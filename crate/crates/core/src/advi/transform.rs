//! Bijections from constrained latents to ℝ^m.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    /// `K` weights on the simplex, additive log-ratio against the last one.
    Simplex(usize),
    /// A `c×c` SPD matrix stored row-major, log-Cholesky coordinates.
    PositiveDefinite(usize),
    Identity(usize),
}

impl Block {
    pub fn constrained_len(self) -> usize {
        match self {
            Block::Simplex(k) => k,
            Block::PositiveDefinite(c) => c * c,
            Block::Identity(n) => n,
        }
    }

    pub fn unconstrained_len(self) -> usize {
        match self {
            Block::Simplex(k) => k - 1,
            Block::PositiveDefinite(c) => c * (c + 1) / 2,
            Block::Identity(n) => n,
        }
    }
}

/// Concatenation of blocks partitioning the latent vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformSpec {
    pub blocks: Vec<Block>,
}

impl TransformSpec {
    pub fn new(blocks: Vec<Block>) -> Result<Self> {
        for b in &blocks {
            match *b {
                Block::Simplex(k) if k < 1 => return Err(Error::domain("simplex block needs K ≥ 1")),
                Block::PositiveDefinite(0) => return Err(Error::domain("positive-definite block needs c ≥ 1")),
                _ => {}
            }
        }
        Ok(Self { blocks })
    }

    pub fn constrained_len(&self) -> usize {
        self.blocks.iter().map(|b| b.constrained_len()).sum()
    }

    pub fn unconstrained_len(&self) -> usize {
        self.blocks.iter().map(|b| b.unconstrained_len()).sum()
    }

    pub fn to_unconstrained(&self, eta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.constrained_len(), eta.len())?;
        let mut out = Vec::with_capacity(self.unconstrained_len());
        let mut at = 0;
        for &b in &self.blocks {
            let x = &eta[at..at + b.constrained_len()];
            at += b.constrained_len();
            match b {
                Block::Simplex(_) => simplex_forward(x, &mut out)?,
                Block::PositiveDefinite(c) => pd_forward(x, c, &mut out)?,
                Block::Identity(_) => out.extend_from_slice(x),
            }
        }
        Ok(out)
    }

    /// Returns `η = T⁻¹(ζ)` and `ln|det J_{T⁻¹}(ζ)|`.
    pub fn from_unconstrained(&self, zeta: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim(self.unconstrained_len(), zeta.len())?;
        let mut out = Vec::with_capacity(self.constrained_len());
        let mut log_det = 0.0;
        let mut at = 0;
        for &b in &self.blocks {
            let z = &zeta[at..at + b.unconstrained_len()];
            at += b.unconstrained_len();
            log_det += match b {
                Block::Simplex(_) => simplex_inverse(z, &mut out),
                Block::PositiveDefinite(c) => pd_inverse(z, c, &mut out),
                Block::Identity(_) => {
                    out.extend_from_slice(z);
                    0.0
                }
            };
        }
        Ok((out, log_det))
    }
}

fn simplex_forward(w: &[f64], out: &mut Vec<f64>) -> Result<()> {
    let total: f64 = w.iter().sum();
    if w.iter().any(|v| !(*v > 0.0) || !v.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("simplex point must be strictly positive and sum to 1: {w:?}")));
    }
    let last = w[w.len() - 1].ln();
    out.extend(w[..w.len() - 1].iter().map(|v| v.ln() - last));
    Ok(())
}

/// Softmax with a zero reference logit; `|det J| = ∏_{i=1}^{K} w_i`.
fn simplex_inverse(z: &[f64], out: &mut Vec<f64>) -> f64 {
    let max = z.iter().cloned().fold(0.0, f64::max);
    let denom = (-max).exp() + z.iter().map(|v| (v - max).exp()).sum::<f64>();
    let ln_denom = max + denom.ln();
    let mut log_det = -ln_denom;
    for v in z {
        out.push((v - ln_denom).exp());
        log_det += v - ln_denom;
    }
    out.push((-ln_denom).exp());
    log_det
}

fn pd_forward(x: &[f64], c: usize, out: &mut Vec<f64>) -> Result<()> {
    let m = DMatrix::from_row_slice(c, c, x);
    if (&m - m.transpose()).abs().max() > 1e-9 * (1.0 + m.abs().max()) {
        return Err(Error::domain("positive-definite block must be symmetric"));
    }
    let l = nalgebra::Cholesky::new(m).ok_or_else(|| Error::domain("positive-definite block is not SPD"))?.l();
    for i in 0..c {
        for j in 0..=i {
            out.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
        }
    }
    Ok(())
}

/// `Λ = LLᵀ` with `L_ii = e^{ζ_ii}`; the Jacobian from ζ to the lower
/// triangle of Λ has `ln|det| = c ln 2 + Σ_i (c - i + 2) ln L_ii` (1-based i).
fn pd_inverse(z: &[f64], c: usize, out: &mut Vec<f64>) -> f64 {
    let mut l = DMatrix::zeros(c, c);
    let mut at = 0;
    let mut log_det = c as f64 * std::f64::consts::LN_2;
    for i in 0..c {
        for j in 0..=i {
            if i == j {
                l[(i, i)] = z[at].exp();
                log_det += (c - i + 1) as f64 * z[at];
            } else {
                l[(i, j)] = z[at];
            }
            at += 1;
        }
    }
    let m = &l * l.transpose();
    for i in 0..c {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    log_det
}
