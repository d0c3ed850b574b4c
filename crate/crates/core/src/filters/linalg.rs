//! Small matrix utilities shared by the filters: symmetrization, PSD repair,
//! robust Cholesky, rank-1 Cholesky updates, and QR-based triangularization.

use nalgebra::{DMatrix, DVector};

use crate::error::{DseError, Result};

/// (M + M^T) / 2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clips eigenvalues of a symmetric matrix below `floor`.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&vals) * q.transpose()
}

/// Lower-triangular Cholesky factor; repairs the matrix by eigenvalue
/// clipping at 1e-12 if the direct factorization fails.
pub fn cholesky_clipped(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = symmetrize(m).cholesky() {
        return Ok(chol.l());
    }
    clip_eigenvalues(m, 1e-12)
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| {
            DseError::NumericalInstability("Cholesky failed after eigenvalue clipping".into())
        })
}

/// Rank-1 Cholesky update/downdate: returns the factor of S S^T + sign * v v^T.
/// `sign` is +1.0 or -1.0. Fails if a downdate would lose positive
/// definiteness.
pub fn chol_rank1(s: &DMatrix<f64>, v: &DVector<f64>, sign: f64) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    let mut l = s.clone();
    let mut w = v.clone();
    for k in 0..n {
        let lkk = l[(k, k)];
        let r2 = lkk * lkk + sign * w[k] * w[k];
        if r2 <= 0.0 || !r2.is_finite() {
            return Err(DseError::NumericalInstability(
                "rank-1 Cholesky downdate lost positive definiteness".into(),
            ));
        }
        let r = r2.sqrt();
        let c = r / lkk;
        let s_k = w[k] / lkk;
        l[(k, k)] = r;
        for i in k + 1..n {
            l[(i, k)] = (l[(i, k)] + sign * s_k * w[i]) / c;
            w[i] = c * w[i] - s_k * l[(i, k)];
        }
    }
    Ok(l)
}

/// Lower-triangular factor S with S S^T = M M^T, computed by QR of M^T.
/// Diagonal entries are made non-negative.
pub fn triangularize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let qr = m.transpose().qr();
    let r = qr.r();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            s[(j, i)] = r[(i, j)];
        }
    }
    for i in 0..n {
        if s[(i, i)] < 0.0 {
            for j in 0..n {
                s[(j, i)] = -s[(j, i)];
            }
        }
    }
    s
}

/// Solves X * A^T = B for X given lower-triangular A (forward substitution
/// applied to rows of B): X = B * A^{-T}.
pub fn solve_lower_transpose(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    // X A^T = B  <=>  A X^T = B^T; solve column-wise by forward substitution.
    let n = a.nrows();
    let mut xt = b.transpose();
    for c in 0..xt.ncols() {
        for i in 0..n {
            let mut v = xt[(i, c)];
            for k in 0..i {
                v -= a[(i, k)] * xt[(k, c)];
            }
            xt[(i, c)] = v / a[(i, i)];
        }
    }
    xt.transpose()
}

/// Solves X * A = B for X given lower-triangular A (back substitution).
pub fn solve_lower_right(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    // X A = B <=> A^T X^T = B^T; A^T is upper triangular.
    let n = a.nrows();
    let mut xt = b.transpose();
    for c in 0..xt.ncols() {
        for ii in 0..n {
            let i = n - 1 - ii;
            let mut v = xt[(i, c)];
            for k in i + 1..n {
                v -= a[(k, i)] * xt[(k, c)];
            }
            xt[(i, c)] = v / a[(i, i)];
        }
    }
    xt.transpose()
}
