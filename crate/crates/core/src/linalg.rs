//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest condition number accepted for a first-stage Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub fn spd_condition(gram: &DMatrix<f64>) -> f64 {
    let ev = gram.clone().symmetric_eigenvalues();
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `gram * x = rhs` for a symmetric positive-definite `gram`.
///
/// Rejects systems whose condition estimate exceeds [`MAX_CONDITION`].
/// Cholesky is tried first; a column-pivoted QR handles the rare case where
/// it breaks down on an accepted matrix.
pub fn solve_spd(gram: &DMatrix<f64>, rhs: &DVector<f64>, period: usize) -> Result<DVector<f64>> {
    let condition = spd_condition(gram);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularGram { period, condition });
    }
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    gram.clone()
        .col_piv_qr()
        .solve(rhs)
        .ok_or(Error::SingularGram { period, condition })
}

/// Inverse of a small symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

/// Inverse of a small general square matrix.
pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// Symmetric eigendecomposition with eigenvalues in descending order.
///
/// Each eigenvector is signed so that its largest-magnitude entry (first one
/// on ties) is positive, making the output reproducible.
pub fn sym_eigen_desc(s: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("matrix has non-finite entries".into()));
    }
    let n = s.nrows();
    let eig = nalgebra::SymmetricEigen::try_new(s.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    Ok((values, vectors))
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for k in 1..v.len() {
        if v[k].abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Column means of a matrix whose columns are observations.
pub fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let mut mean = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        mean += col;
    }
    mean / m.ncols() as f64
}

/// `X' M_T` style demeaning for a `T x K` matrix: subtract each column mean.
pub fn demean_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let t = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
    }
    out
}
