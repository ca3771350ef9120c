use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the linear-algebra kernel and the alignment math are
/// written against. Implemented for `f32` and `f64`; the simulator itself runs
/// on `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + LowerExp + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar representable as f64")
    }

    /// A tolerance of `nominal` in `f64`, widened to a small multiple of this
    /// type's machine epsilon when the type cannot resolve `nominal`.
    #[inline]
    fn tol(nominal: f64) -> Self {
        let floor = Self::epsilon() * Self::lit(64.0);
        Self::lit(nominal).max(floor)
    }
}

impl Real for f32 {}
impl Real for f64 {}
