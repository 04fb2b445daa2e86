//! Dense factorizations on `ndarray` matrices, backed by `faer`.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Side};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{EblpError, Result};

fn to_faer(a: ArrayView2<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_faer(m: MatRef<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin SVD `a = u diag(s) v^T` with `min(n, p)` triplets, decreasing.
pub(crate) fn svd_parts(a: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(EblpError::Linalg("svd of a matrix with non-finite entries".into()));
    }
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| EblpError::Linalg(format!("svd did not converge: {e:?}")))?;
    let s = Array1::from_iter(svd.S().column_vector().iter().copied());
    Ok((from_faer(svd.U()), s, from_faer(svd.V())))
}

pub(crate) fn singular_values(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(EblpError::Linalg("svd of a matrix with non-finite entries".into()));
    }
    let s = to_faer(a)
        .singular_values()
        .map_err(|e| EblpError::Linalg(format!("svd did not converge: {e:?}")))?;
    Ok(Array1::from(s))
}

/// Orthonormal basis `Q` (`n x min(n, k)`) from the thin QR of an `n x k`
/// matrix.
pub fn orthonormalize(a: ArrayView2<f64>) -> Array2<f64> {
    let q = to_faer(a).qr().compute_thin_Q();
    from_faer(q.as_ref())
}

/// Solves `k x = b` for symmetric positive definite `k`.
pub fn solve_spd(k: ArrayView2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    if k.nrows() != k.ncols() || k.nrows() != b.len() {
        return Err(EblpError::Shape(format!(
            "system {:?} with right-hand side of length {}",
            k.dim(),
            b.len()
        )));
    }
    let llt = to_faer(k)
        .llt(Side::Lower)
        .map_err(|e| EblpError::Linalg(format!("matrix not positive definite: {e:?}")))?;
    let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    Ok(Array1::from_shape_fn(b.len(), |i| x[(i, 0)]))
}

/// Inverse of a square matrix by partial-pivot LU.
pub fn inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.nrows() != a.ncols() {
        return Err(EblpError::Shape(format!("cannot invert a {:?} matrix", a.dim())));
    }
    let inv = to_faer(a).partial_piv_lu().inverse();
    let out = from_faer(inv.as_ref());
    if out.iter().any(|v| !v.is_finite()) {
        return Err(EblpError::Linalg("matrix is singular".into()));
    }
    Ok(out)
}
