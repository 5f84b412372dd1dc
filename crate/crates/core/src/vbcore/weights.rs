use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Mixture weights on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::domain("weights need at least one component"));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(format!("weights must be finite and non-negative: {w:?}")));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::domain(format!("weights sum to {s}, not 1")));
        }
        Ok(Self(w))
    }

    /// Normalizes non-negative masses onto the simplex.
    pub fn from_mass(mass: &[f64]) -> Result<Self> {
        if mass.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain("masses must be finite and non-negative"));
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Degenerate("total responsibility mass is zero".into()));
        }
        Ok(Self(mass.iter().map(|m| m / total).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform weights need k > 0");
        Self(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn ln(&self) -> Vec<f64> {
        self.0.iter().map(|w| if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect()
    }
}

impl fmt::Display for SimplexWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, w) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            match f.precision() {
                Some(p) => write!(f, "{w:.p$}")?,
                None => write!(f, "{w:.4}")?,
            }
        }
        write!(f, ")")
    }
}

/// Closed-form M-step: `w_k ∝ Σ_{i,j} p_jk`.
pub fn mstep_weights(responsibilities: &[DMatrix<f64>]) -> Result<SimplexWeights> {
    let k = responsibilities.first().map_or(0, |r| r.ncols());
    let mut mass = vec![0.0; k];
    for r in responsibilities {
        crate::error::check_dim(k, r.ncols())?;
        for (m, col) in mass.iter_mut().zip(r.column_iter()) {
            *m += col.sum();
        }
    }
    SimplexWeights::from_mass(&mass)
}
