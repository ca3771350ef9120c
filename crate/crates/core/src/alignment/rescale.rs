use super::AlignmentTarget;
use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::numerics::Matrix;
use crate::scalar::Real;

/// Coefficients this close to zero are refused; `1/c` would blow up the
/// complementary factor.
pub const MIN_RESCALE: f64 = 1e-12;

/// Closed-form minimizer of `‖c·local − reference‖²`:
/// `c = ⟨local, reference⟩ / ‖local‖²`.
pub fn scalar_rescale_align<T: Real>(local: &Matrix<T>, reference: &Matrix<T>) -> Result<T> {
    let nrm = local.frobenius_norm();
    if nrm == T::zero() {
        return Err(Error::invalid("scalar rescaling of a zero factor"));
    }
    let c = local.inner(reference)? / (nrm * nrm);
    if c.abs() <= T::lit(MIN_RESCALE) {
        return Err(Error::DegenerateAlignment { c: c.as_f64() });
    }
    Ok(c)
}

pub fn scalar_rescale_objective<T: Real>(local: &Matrix<T>, reference: &Matrix<T>, c: T) -> Result<T> {
    let r = local.scale(c).sub(reference)?.frobenius_norm();
    Ok(r * r)
}

/// Scales the targeted factor by `c` and the other one by `1/c`.
pub fn apply_scalar_rescale<T: Real>(ad: &LoraAdapter<T>, c: T, target: AlignmentTarget) -> Result<LoraAdapter<T>> {
    if c == T::zero() || !c.is_finite() {
        return Err(Error::DegenerateAlignment { c: c.as_f64() });
    }
    let inv = T::one() / c;
    match target {
        AlignmentTarget::FactorA => LoraAdapter::new(ad.b().scale(inv), ad.a().scale(c)),
        AlignmentTarget::FactorB => LoraAdapter::new(ad.b().scale(c), ad.a().scale(inv)),
    }
}
