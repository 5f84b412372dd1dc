//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.nrows() != m.ncols() {
        return Err(Error::domain(format!("{what}: matrix is not square")));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::domain(format!("{what}: matrix has non-finite entries")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::domain(format!("{what}: matrix is not positive definite")))
}

/// ln|m| for SPD `m`.
pub fn ln_det_spd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    let ch = cholesky(m, what)?;
    Ok(2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn inverse_spd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, what)?.inverse();
    Ok(symmetrize(&inv))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetrizes and clips eigenvalues from below at `floor`.
pub fn floor_spd(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let s = symmetrize(m);
    if s.nrows() == 1 {
        return DMatrix::from_element(1, 1, s[(0, 0)].max(floor));
    }
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return s;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    symmetrize(&(q * DMatrix::from_diagonal(&clipped) * q.transpose()))
}

/// Sample covariance with divisor `n - 1`, rows are observations.
pub fn sample_covariance(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.len());
    let mut mean = DVector::zeros(d);
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let c = DVector::from_iterator(d, r.iter().zip(mean.iter()).map(|(v, m)| v - m));
        cov.ger(1.0, &c, &c, 1.0);
    }
    if n > 1 {
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_spd_clips_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let f = floor_spd(&m, 1e-12);
        assert!(cholesky(&f, "floored").is_ok());
    }

    #[test]
    fn ln_det_matches_product_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0, 0.5]));
        assert!((ln_det_spd(&m, "m").unwrap() - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn non_spd_is_a_domain_error() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(inverse_spd(&m, "zero"), Err(Error::Domain(_))));
    }
}
