//! Federated LoRA simulation with rotation-aligned factor aggregation.
//!
//! Clients fine-tune low-rank adapters `ΔW = B·A` and the server averages
//! the factors. Because `(B·R)(Rᵀ·A) = B·A` for any rotation `R`, clients
//! can rotate their factors toward a shared reference before upload without
//! changing what they learned, which shrinks the gap between
//! `(mean B)(mean A)` and `mean(B·A)`.
//!
//! ```
//! use fedrot::{run_federation, FederationConfig, Strategy};
//!
//! let cfg = FederationConfig::scalar_toy(Strategy::FedRot, 1.0, 20);
//! let run = run_federation(&cfg).unwrap();
//! assert_eq!(run.rounds.len(), 20);
//! ```

pub mod aggregation;
pub mod alignment;
pub mod error;
pub mod federation;
pub mod lora;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod tasks;

pub use aggregation::{
    aggregate_factorwise, aggregate_ideal, aggregation_error, lagrange_error_oracle, server_step, AggregationError,
    Strategy,
};
pub use alignment::{
    alignment_schedule, apply_alignment, procrustes_rotation, soft_rotation, AlignmentTarget, ReferenceMode, Rotation,
    ScheduleAblation,
};
pub use error::{Error, Result};
pub use federation::{run_federation, run_sweep, FederationConfig, RoundRecord, RunResult, SweepGrid, TaskSpec};
pub use lora::{GlobalModel, LoraAdapter};
pub use numerics::{svd, Matrix, SvdResult};
pub use scalar::Real;
pub use tasks::Task;

/// Crate version, echoed into run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Adapter64 = LoraAdapter<f64>;
pub type Adapter32 = LoraAdapter<f32>;
pub type Rotation64 = Rotation<f64>;
pub type Rotation32 = Rotation<f32>;
