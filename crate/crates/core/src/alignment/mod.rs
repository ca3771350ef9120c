//! Client-side factor transformations applied before upload.
//!
//! All of them leave the client's semantic update `B·A` unchanged: rotations
//! act as `(B·R, Rᵀ·A)` and scalar rescaling as `(c·B, A/c)` or `(B/c, c·A)`.

mod haar;
mod procrustes;
mod reference;
mod rescale;
mod rotation;

use serde::{Deserialize, Serialize};

pub use haar::{haar_random_rotation, sample_haar_rotation};
pub use procrustes::{procrustes_objective, procrustes_rotation, project_to_rotation, soft_rotation};
pub use reference::{select_reference, ReferenceMode};
pub use rescale::{apply_scalar_rescale, scalar_rescale_align, scalar_rescale_objective};
pub use rotation::Rotation;

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::scalar::Real;

/// Which factor a round aligns against the reference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlignmentTarget {
    FactorA,
    FactorB,
}

/// Alignment-target schedule: the default alternation or a single-factor
/// ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleAblation {
    #[default]
    Alternate,
    AOnly,
    BOnly,
}

/// Odd rounds align `A`, even rounds align `B`, unless an ablation pins the
/// target.
pub fn alignment_schedule(round: usize, ablation: ScheduleAblation) -> AlignmentTarget {
    match ablation {
        ScheduleAblation::Alternate if round % 2 == 1 => AlignmentTarget::FactorA,
        ScheduleAblation::Alternate => AlignmentTarget::FactorB,
        ScheduleAblation::AOnly => AlignmentTarget::FactorA,
        ScheduleAblation::BOnly => AlignmentTarget::FactorB,
    }
}

/// `(B·R, Rᵀ·A)`.
pub fn apply_alignment<T: Real>(ad: &LoraAdapter<T>, rot: &Rotation<T>) -> Result<LoraAdapter<T>> {
    if rot.rank() != ad.rank() {
        return Err(Error::invalid(format!(
            "rotation rank {} does not match adapter rank {}",
            rot.rank(),
            ad.rank()
        )));
    }
    if rot.is_identity() {
        return Ok(ad.clone());
    }
    let b = ad.b().matmul(rot.matrix())?;
    let a = rot.matrix().t_matmul(ad.a())?;
    LoraAdapter::new(b, a)
}
