//! LAPACK entry points. Inputs are copied into column-major layout first:
//! complex decompositions of row-major arrays come back conjugated.

use ndarray::{Array1, Array2, ShapeBuilder};
use ndarray_linalg::{Eig, Eigh, Solve, SVD, UPLO};
use num_complex::Complex64 as C64;

use crate::error::Result;

fn fortran(m: &Array2<C64>) -> Array2<C64> {
    let mut f = Array2::zeros(m.raw_dim().f());
    f.assign(m);
    f
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub(crate) fn eigh(m: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (w, v) = fortran(m).eigh(UPLO::Lower)?;
    Ok((w, v.as_standard_layout().to_owned()))
}

pub(crate) fn eigvalsh(m: &Array2<C64>) -> Result<Array1<f64>> {
    Ok(eigh(m)?.0)
}

pub(crate) fn eigvals(m: &Array2<C64>) -> Result<Array1<C64>> {
    let (w, _) = fortran(m).eig()?;
    Ok(w)
}

/// Singular values (descending) and the conjugate-transposed right singular
/// vectors as rows.
pub(crate) fn svd_right(m: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    let (_, s, vt) = fortran(m).svd(false, true)?;
    let vt = vt.expect("right singular vectors requested");
    Ok((s, vt.as_standard_layout().to_owned()))
}

pub(crate) fn singular_values(m: &Array2<C64>) -> Result<Array1<f64>> {
    let (_, s, _) = fortran(m).svd(false, false)?;
    Ok(s)
}

pub(crate) fn solve(m: &Array2<C64>, b: &Array1<C64>) -> Result<Array1<C64>> {
    Ok(fortran(m).solve(b)?)
}
