//! Small dense linear-algebra kernel.
//!
//! Everything here is sized for `r × r` correlation matrices and thin
//! `d × r` factors; no blocking, no BLAS.

mod decomp;
mod matrix;
mod svd;

pub use decomp::{determinant, qr_orthonormal, RANK_TOLERANCE};
pub use matrix::{frobenius_norm, Matrix};
pub use svd::{svd, SvdResult, JACOBI_TOLERANCE, MAX_SWEEPS};

use crate::error::Result;
use crate::scalar::Real;

/// Free-function form of [`Matrix::matmul`].
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    a.matmul(b)
}

/// `‖aᵀa − I‖_F`, the departure of `a`'s columns from orthonormality.
pub fn orthogonality_defect<T: Real>(a: &Matrix<T>) -> T {
    let g = a.t_matmul(a).expect("aᵀa is always conformable");
    g.sub(&Matrix::identity(a.cols()))
        .expect("gram matrix is square")
        .frobenius_norm()
}
