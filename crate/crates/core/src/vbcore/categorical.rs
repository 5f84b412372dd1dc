//! Categorical case: EM on `∏_j Σ_k w_k P_k(Y = y_j)` with fixed component
//! class probabilities.

use nalgebra::DMatrix;

use super::continuous::FitConfig;
use super::probit::{probit_class_probability, ProbitComponent};
use super::weights::{mstep_weights, SimplexWeights};
use crate::error::{check_dim, Error, Result};
use crate::par;

/// `P_k(Y = y_j)` for each label (rows) and component (columns).
pub fn label_probabilities(labels: &[usize], components: &[ProbitComponent], tol: f64) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(labels.len(), components.len());
    for (k, comp) in components.iter().enumerate() {
        for (j, &y) in labels.iter().enumerate() {
            out[(j, k)] = probit_class_probability(comp, y, tol)?;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct CategoricalFit {
    pub weights: SimplexWeights,
    /// Log-likelihood before the first step and after each step.
    pub loglik_trace: Vec<f64>,
    pub weight_trace: Vec<SimplexWeights>,
    pub converged: bool,
}

fn loglik_and_resp(probs: &DMatrix<f64>, w: &[f64]) -> Result<(f64, DMatrix<f64>)> {
    let mut resp = DMatrix::zeros(probs.nrows(), probs.ncols());
    let mut ll = 0.0;
    for j in 0..probs.nrows() {
        let row: Vec<f64> = (0..probs.ncols()).map(|k| w[k] * probs[(j, k)]).collect();
        let total: f64 = row.iter().sum();
        if !(total > 0.0) {
            if (0..probs.ncols()).all(|k| probs[(j, k)] == 0.0) {
                return Err(Error::Degenerate(format!("label {j} has zero probability under every component")));
            }
            return Err(Error::numerical("categorical likelihood", format!("label {j} has zero weighted probability")));
        }
        ll += total.ln();
        for (k, r) in row.iter().enumerate() {
            resp[(j, k)] = r / total;
        }
    }
    Ok((ll, resp))
}

/// Mixture log-likelihood `Σ_i Σ_j ln Σ_k w_k P_k(y_j)`.
pub fn categorical_loglik(probs: &[DMatrix<f64>], weights: &SimplexWeights) -> Result<f64> {
    let per = par::try_map_range(probs.len(), |i| loglik_and_resp(&probs[i], weights.as_slice()).map(|(ll, _)| ll))?;
    Ok(per.iter().sum())
}

/// EM over the mixture weights; each matrix holds one instance's `P_k(y_j)`.
pub fn fit_categorical(probs: &[DMatrix<f64>], config: &FitConfig) -> Result<CategoricalFit> {
    if probs.is_empty() {
        return Err(Error::Degenerate("calibration set is empty".into()));
    }
    let k = probs[0].ncols();
    for p in probs {
        check_dim(k, p.ncols())?;
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("class probabilities must lie in [0, 1]"));
        }
    }
    let mut weights = config.init.clone().unwrap_or_else(|| SimplexWeights::uniform(k));
    check_dim(k, weights.len())?;
    let mut loglik_trace = Vec::with_capacity(config.max_steps + 1);
    let mut weight_trace = vec![weights.clone()];
    let mut converged = false;
    for step in 0..=config.max_steps {
        let per = par::try_map_range(probs.len(), |i| loglik_and_resp(&probs[i], weights.as_slice()))?;
        let ll: f64 = per.iter().map(|(l, _)| l).sum();
        if let Some(&prev) = loglik_trace.last() {
            loglik_trace.push(ll);
            if config.rel_tol > 0.0 && ll - prev < config.rel_tol * f64::abs(prev) {
                converged = true;
                break;
            }
        } else {
            loglik_trace.push(ll);
        }
        if step == config.max_steps {
            break;
        }
        let resp: Vec<DMatrix<f64>> = per.into_iter().map(|(_, r)| r).collect();
        weights = mstep_weights(&resp)?;
        weight_trace.push(weights.clone());
    }
    Ok(CategoricalFit {
        weights,
        loglik_trace,
        weight_trace,
        converged,
    })
}
