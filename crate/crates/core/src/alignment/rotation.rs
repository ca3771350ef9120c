use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{determinant, orthogonality_defect, Matrix};
use crate::scalar::Real;

/// Orthogonality and unit-determinant tolerance for [`Rotation`].
pub const ROTATION_TOLERANCE: f64 = 1e-10;

/// An element of SO(r): `RᵀR = I` and `det R = +1`, checked on construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rotation<T>(Matrix<T>);

impl<T: Real> Rotation<T> {
    pub fn new(m: Matrix<T>) -> Result<Self> {
        if !m.is_square() || m.is_empty() {
            return Err(Error::invalid(format!(
                "rotation must be a nonempty square matrix, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        let tol = T::tol(ROTATION_TOLERANCE) * T::lit(m.rows() as f64);
        let defect = orthogonality_defect(&m);
        if !(defect <= tol) {
            return Err(Error::invalid(format!(
                "matrix is not orthogonal (‖RᵀR − I‖ = {defect:e})"
            )));
        }
        let det = determinant(&m)?;
        if !((det - T::one()).abs() <= tol) {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self(m))
    }

    pub fn identity(rank: usize) -> Self {
        Self(Matrix::identity(rank))
    }

    /// Counter-clockwise planar rotation by `theta`.
    pub fn planar(theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self(Matrix::from_fn(2, 2, |i, j| match (i, j) {
            (0, 0) | (1, 1) => c,
            (0, 1) => -s,
            _ => s,
        }))
    }

    pub fn rank(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Exact identity, bit for bit.
    pub fn is_identity(&self) -> bool {
        self.0 == Matrix::identity(self.rank())
    }

    /// `‖R − I‖_F`.
    pub fn deviation_from_identity(&self) -> T {
        self.0
            .sub(&Matrix::identity(self.rank()))
            .expect("square")
            .frobenius_norm()
    }

    /// Angle of a planar rotation in `[0, 2π)`.
    pub fn planar_angle(&self) -> Option<T> {
        if self.rank() != 2 {
            return None;
        }
        let mut th = self.0.get(1, 0).atan2(self.0.get(0, 0));
        if th < T::zero() {
            th += T::lit(std::f64::consts::TAU);
        }
        Some(th)
    }
}
