use nalgebra::{DMatrix, DVector, SVD};

use crate::{LtnError, Result};

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(LtnError::Dimension(format!("{what}: every row must have {ncols} entries")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub(crate) fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(LtnError::Dimension(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

/// Numerical rank with tolerance `max_dim * sigma_max * eps * 10`.
pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let tol = m.nrows().max(m.ncols()) as f64 * sv.max() * f64::EPSILON * 10.0;
    sv.iter().filter(|&&s| s > tol).count()
}

pub(crate) fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.singular_values().min()
}

/// Minimum-norm solution of `a x = b` via SVD.
pub(crate) fn min_norm_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let tol = a.nrows().max(a.ncols()) as f64 * smax * f64::EPSILON * 10.0;
    svd.solve(b, tol).expect("u and v_t computed")
}

/// `a * p^-1` for symmetric positive definite `p`, without forming the inverse.
pub(crate) fn right_solve_spd(a: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| LtnError::Numerical("certificate matrix is not positive definite".into()))?;
    Ok(chol.solve(&a.transpose()).transpose())
}

pub(crate) fn condition_number(p: &DMatrix<f64>) -> f64 {
    let sv = p.singular_values();
    sv.max() / sv.min()
}
