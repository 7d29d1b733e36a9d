//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Maximum absolute entry of a vector (0 for an empty one).
pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Induced infinity norm (maximum absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solves `m x = b` by LU with partial pivoting. Returns `None` when the
/// factorization breaks down or the solution is not finite.
pub fn lu_solve(m: DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    if m.nrows() == 0 {
        return Some(Vec::new());
    }
    let lu = m.lu();
    let x = lu.solve(&DVector::from_column_slice(b))?;
    x.iter()
        .all(|v| v.is_finite())
        .then(|| x.as_slice().to_vec())
}

/// Solves `m X = b` for a matrix right-hand side.
pub fn lu_solve_matrix(m: DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(DMatrix::zeros(0, b.ncols()));
    }
    let x = m.lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Infinity-norm condition number, `None` when `m` is singular.
pub fn condition_inf(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(1.0);
    }
    let inv = m.clone().try_inverse()?;
    let c = inf_norm(m) * inf_norm(&inv);
    c.is_finite().then_some(c)
}

/// `out += m * x`, accumulating row by row in column order.
pub fn mul_add(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = *o;
        for (j, xj) in x.iter().enumerate() {
            acc += m[(i, j)] * xj;
        }
        *o = acc;
    }
}

/// Matrix exponential `exp(m t)` applied to `x`.
pub fn expm_apply(m: &DMatrix<f64>, t: f64, x: &[f64]) -> Vec<f64> {
    let e = (m * t).exp();
    (e * DVector::from_column_slice(x)).as_slice().to_vec()
}

/// Same as [`expm_apply`] but through two half steps, used as the
/// resolution self-check of matrix-exponential references.
pub fn expm_apply_halved(m: &DMatrix<f64>, t: f64, x: &[f64]) -> Vec<f64> {
    let half = (m * (0.5 * t)).exp();
    (&half * &half * DVector::from_column_slice(x))
        .as_slice()
        .to_vec()
}
