use log::warn;

use super::{AlignmentTarget, Rotation};
use crate::error::{Error, Result};
use crate::numerics::{determinant, svd, Matrix};
use crate::scalar::Real;

/// Shift applied to λ when the interpolated matrix is singular.
const LAMBDA_NUDGE: f64 = 1e-9;
const SINGULAR_TOLERANCE: f64 = 1e-12;

/// `diag(1, …, 1, d)` of size `n`.
fn det_fix<T: Real>(n: usize, d: T) -> Matrix<T> {
    let mut diag = vec![T::one(); n];
    diag[n - 1] = d;
    Matrix::from_diag(&diag)
}

fn sign<T: Real>(x: T) -> T {
    if x < T::zero() {
        -T::one()
    } else {
        T::one()
    }
}

/// Best special-orthogonal `R` aligning `local` to `reference`.
///
/// * `FactorA` (`r × d` factors): minimizes `‖Rᵀ·local − reference‖_F` using
///   `M = reference · localᵀ`.
/// * `FactorB` (`d × r` factors): minimizes `‖local·R − reference‖_F` using
///   `M = referenceᵀ · local`.
///
/// With `M = UΣVᵀ` the minimizer is `R = V·diag(1,…,1,det(UVᵀ))·Uᵀ`. A zero
/// correlation matrix (e.g. a zero factor) yields the identity.
pub fn procrustes_rotation<T: Real>(
    local: &Matrix<T>,
    reference: &Matrix<T>,
    target: AlignmentTarget,
) -> Result<Rotation<T>> {
    if local.shape() != reference.shape() {
        return Err(Error::Shape {
            op: "procrustes_rotation",
            left: local.shape(),
            right: reference.shape(),
        });
    }
    let m = match target {
        AlignmentTarget::FactorA => {
            if local.rows() > local.cols() {
                return Err(Error::invalid(format!(
                    "A-factor alignment expects r x d with r <= d, got {}x{}",
                    local.rows(),
                    local.cols()
                )));
            }
            reference.matmul_t(local)?
        }
        AlignmentTarget::FactorB => {
            if local.cols() > local.rows() {
                return Err(Error::invalid(format!(
                    "B-factor alignment expects d x r with r <= d, got {}x{}",
                    local.rows(),
                    local.cols()
                )));
            }
            reference.t_matmul(local)?
        }
    };
    let r = m.rows();
    if m.max_abs() == T::zero() {
        warn!("procrustes: zero correlation matrix, falling back to identity");
        return Ok(Rotation::identity(r));
    }
    let s = svd(&m)?;
    let v = s.vt.transpose();
    let d = sign(determinant(&s.u.matmul(&s.vt)?)?);
    let rot = v.matmul(&det_fix(r, d))?.matmul_t(&s.u)?;
    Rotation::new(rot)
}

/// Objective value of a candidate rotation (squared Frobenius residual).
pub fn procrustes_objective<T: Real>(
    local: &Matrix<T>,
    reference: &Matrix<T>,
    target: AlignmentTarget,
    rot: &Matrix<T>,
) -> Result<T> {
    let moved = match target {
        AlignmentTarget::FactorA => rot.t_matmul(local)?,
        AlignmentTarget::FactorB => local.matmul(rot)?,
    };
    let res = moved.sub(reference)?.frobenius_norm();
    Ok(res * res)
}

/// Nearest element of SO(r) to a square matrix: `U·diag(1,…,1,det(UVᵀ))·Vᵀ`.
pub fn project_to_rotation<T: Real>(m: &Matrix<T>) -> Result<Rotation<T>> {
    let s = svd(m)?;
    let uv = s.u.matmul(&s.vt)?;
    let d = sign(determinant(&uv)?);
    Rotation::new(s.u.matmul(&det_fix(m.rows(), d))?.matmul(&s.vt)?)
}

/// Soft rotation: projects `(1−λ)·I + λ·hard` back onto SO(r).
///
/// λ = 0 returns the identity exactly. If the interpolant is singular, λ is
/// nudged by 1e-9 (toward the interior) and the projection retried once.
pub fn soft_rotation<T: Real>(hard: &Rotation<T>, lambda: T) -> Result<Rotation<T>> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let r = hard.rank();
    if lambda == T::zero() {
        return Ok(Rotation::identity(r));
    }
    let interp = |l: T| -> Result<Matrix<T>> {
        let mut m = Matrix::identity(r).scale(T::one() - l);
        m.axpy(l, hard.matrix())?;
        Ok(m)
    };
    let m = interp(lambda)?;
    let s = svd(&m)?;
    if s.smallest() <= T::tol(SINGULAR_TOLERANCE) * s.largest().max(T::one()) {
        let nudge = T::lit(LAMBDA_NUDGE);
        let l = if lambda + nudge <= T::one() {
            lambda + nudge
        } else {
            lambda - nudge
        };
        warn!("soft rotation: singular interpolant at lambda={lambda}, retrying at {l}");
        return project_to_rotation(&interp(l)?);
    }
    project_to_rotation(&m)
}
