//! Small dense linear-algebra helpers shared by the GP, the densities and the EKF.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Smallest diagonal jitter tried when a factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest diagonal jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Cholesky factor of `a`, retrying with `1e-10·I`, `1e-9·I`, ... `1e-4·I`
/// added to the diagonal. Returns the factor and the jitter that was needed.
pub fn cholesky_jittered(
    a: &DMatrix<f64>,
    module: &'static str,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if !a.is_square() {
        return Err(Error::input(format!(
            "cannot factor a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(module, "matrix has non-finite entries"));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let n = a.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-12) {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(
        module,
        format!("matrix not positive definite even with {JITTER_MAX:e} jitter"),
    ))
}

/// log-determinant from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Squared Euclidean distance between two equal-length slices.
#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrize in place: `a ← (a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Rows of `m` as owned vectors.
pub fn rows(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.nrows()).map(|i| m.row(i).transpose()).collect()
}

/// Row-stack equally sized vectors into a matrix.
pub fn stack_rows(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}
