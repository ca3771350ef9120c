use serde::{Deserialize, Serialize};

use crate::aggregation::Strategy;
use crate::alignment::{ReferenceMode, ScheduleAblation};
use crate::error::{Error, Result};
use crate::lora::{init_adapter, LoraAdapter};
use crate::numerics::Matrix;
use crate::rng;
use crate::tasks::{
    logistic_task_partitioned, lowrank_regression_task, scalar_toy_task, LogisticSpec, RegressionSpec, Task,
    SCALAR_TOY_TARGETS,
};

fn default_targets() -> Vec<f64> {
    SCALAR_TOY_TARGETS.to_vec()
}

fn default_separation() -> f64 {
    4.0
}

/// Which synthetic objective the clients optimize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    ScalarToy {
        #[serde(default = "default_targets")]
        targets: Vec<f64>,
    },
    LowRankRegression {
        d_out: usize,
        d_in: usize,
        true_rank: usize,
        heterogeneity: f64,
    },
    LogisticClassification {
        n_features: usize,
        n_classes: usize,
        n_samples: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
}

impl TaskSpec {
    /// `(d_out, d_in)` of the adapted layer.
    pub fn dims(&self) -> (usize, usize) {
        match *self {
            TaskSpec::ScalarToy { .. } => (1, 1),
            TaskSpec::LowRankRegression { d_out, d_in, .. } => (d_out, d_in),
            TaskSpec::LogisticClassification {
                n_features, n_classes, ..
            } => (n_classes, n_features),
        }
    }
}

/// Initial global adapter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// `B = 0`, `A ~ N(0, 1/d_in)`.
    #[default]
    Random,
    /// Every entry of `B` set to `b` and every entry of `A` to `a`.
    Constant { b: f64, a: f64 },
}

fn default_align_from_round() -> usize {
    2
}

fn default_dirichlet_alpha() -> f64 {
    0.5
}

/// Everything that determines a run. Two runs with equal configs produce
/// bit-identical results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub strategy: Strategy,
    pub n_clients: usize,
    pub rank: usize,
    pub rounds: usize,
    pub local_steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub reference_mode: ReferenceMode,
    #[serde(default)]
    pub schedule_ablation: ScheduleAblation,
    pub task: TaskSpec,
    /// Concentration of the per-class Dirichlet split (classification only).
    #[serde(default = "default_dirichlet_alpha")]
    pub dirichlet_alpha: f64,
    #[serde(default)]
    pub seed: u64,
    /// First round in which client-side transformations are applied.
    #[serde(default = "default_align_from_round")]
    pub align_from_round: usize,
    #[serde(default)]
    pub init: InitSpec,
    /// Minibatch size for sample tasks; `None` means full batch.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Record per-round wall time. Off by default so results stay
    /// bit-reproducible.
    #[serde(default)]
    pub record_timing: bool,
}

impl FederationConfig {
    pub fn dims(&self) -> (usize, usize) {
        self.task.dims()
    }

    /// Checks every field; the error message names the offending one.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::invalid(format!("{field}: {msg}")));
        if self.strategy == Strategy::Ideal {
            return bad(
                "strategy",
                "ideal is measurement-only; its full-rank average is never broadcast".into(),
            );
        }
        if self.n_clients == 0 {
            return bad("n_clients", "must be at least 1".into());
        }
        let (d_out, d_in) = self.dims();
        if d_out == 0 || d_in == 0 {
            return bad("task", format!("layer dimensions must be positive, got {d_out}x{d_in}"));
        }
        if self.rank == 0 || self.rank > d_out.min(d_in) {
            return bad(
                "rank",
                format!("must lie in 1..={}, got {}", d_out.min(d_in), self.rank),
            );
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1".into());
        }
        if self.local_steps == 0 {
            return bad("local_steps", "must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(
                "learning_rate",
                format!("must be finite and >= 0, got {}", self.learning_rate),
            );
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", format!("must lie in [0, 1], got {}", self.lambda));
        }
        if self.align_from_round == 0 {
            return bad("align_from_round", "must be at least 1".into());
        }
        if let Err(e) = self.reference_mode.validate() {
            return bad("reference_mode", e.to_string());
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return bad(
                "dirichlet_alpha",
                format!("must be positive, got {}", self.dirichlet_alpha),
            );
        }
        if self.batch_size == Some(0) {
            return bad("batch_size", "must be at least 1".into());
        }
        if let InitSpec::Constant { b, a } = self.init {
            if !(b.is_finite() && a.is_finite()) {
                return bad("init", "constant entries must be finite".into());
            }
        }
        match &self.task {
            TaskSpec::ScalarToy { targets } => {
                if targets.len() != self.n_clients {
                    return bad(
                        "task.targets",
                        format!("{} targets for {} clients", targets.len(), self.n_clients),
                    );
                }
                if targets.iter().any(|t| !t.is_finite()) {
                    return bad("task.targets", "targets must be finite".into());
                }
            }
            TaskSpec::LowRankRegression {
                true_rank,
                heterogeneity,
                ..
            } => {
                if *true_rank == 0 || *true_rank > d_out.min(d_in) {
                    return bad("task.true_rank", format!("must lie in 1..={}", d_out.min(d_in)));
                }
                if !(*heterogeneity >= 0.0 && heterogeneity.is_finite()) {
                    return bad("task.heterogeneity", format!("must be >= 0, got {heterogeneity}"));
                }
            }
            TaskSpec::LogisticClassification {
                n_classes,
                n_samples,
                separation,
                ..
            } => {
                if *n_classes < 2 {
                    return bad("task.n_classes", "must be at least 2".into());
                }
                if *n_samples < self.n_clients {
                    return bad("task.n_samples", "fewer samples than clients".into());
                }
                if !(*separation >= 0.0 && separation.is_finite()) {
                    return bad("task.separation", format!("must be >= 0, got {separation}"));
                }
            }
        }
        Ok(())
    }

    /// Builds the task this config describes (seeded by `seed`).
    pub fn build_task(&self) -> Result<Task> {
        match &self.task {
            TaskSpec::ScalarToy { targets } => scalar_toy_task(targets),
            &TaskSpec::LowRankRegression {
                d_out,
                d_in,
                true_rank,
                heterogeneity,
            } => lowrank_regression_task(&RegressionSpec {
                d_out,
                d_in,
                true_rank,
                n_clients: self.n_clients,
                heterogeneity,
                seed: self.seed,
            }),
            &TaskSpec::LogisticClassification {
                n_features,
                n_classes,
                n_samples,
                separation,
            } => logistic_task_partitioned(&LogisticSpec {
                n_features,
                n_classes,
                n_samples,
                n_clients: self.n_clients,
                dirichlet_alpha: self.dirichlet_alpha,
                separation,
                seed: self.seed,
            }),
        }
    }

    /// Initial global adapter. FFA-LoRA's frozen `A` is this adapter's `A`.
    pub fn initial_adapter(&self) -> Result<LoraAdapter<f64>> {
        let (d_out, d_in) = self.dims();
        match self.init {
            InitSpec::Random => init_adapter(
                d_out,
                d_in,
                self.rank,
                rng::derive_seed(self.seed, &[rng::purpose::INIT]),
            ),
            InitSpec::Constant { b, a } => LoraAdapter::new(
                Matrix::from_fn(d_out, self.rank, |_, _| b),
                Matrix::from_fn(self.rank, d_in, |_, _| a),
            ),
        }
    }

    /// Scalar-toy config with the classic setup: targets (0.5, 1, 1.5),
    /// η = 0.01, 30 local steps, start at `(B, A) = (0, 0.44)`.
    pub fn scalar_toy(strategy: Strategy, lambda: f64, rounds: usize) -> Self {
        Self {
            strategy,
            n_clients: 3,
            rank: 1,
            rounds,
            local_steps: 30,
            learning_rate: 0.01,
            lambda,
            reference_mode: ReferenceMode::PrevGlobal,
            schedule_ablation: ScheduleAblation::Alternate,
            task: TaskSpec::ScalarToy {
                targets: default_targets(),
            },
            dirichlet_alpha: default_dirichlet_alpha(),
            seed: 0,
            align_from_round: default_align_from_round(),
            init: InitSpec::Constant { b: 0.0, a: 0.44 },
            batch_size: None,
            record_timing: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_preset_is_valid() {
        let c = FederationConfig::scalar_toy(Strategy::FedRot, 1.0, 10);
        c.validate().unwrap();
        let ad = c.initial_adapter().unwrap();
        assert_eq!((ad.b().get(0, 0), ad.a().get(0, 0)), (0.0, 0.44));
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = FederationConfig::scalar_toy(Strategy::FedRot, 1.5, 10);
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("lambda"), "{msg}");
        c.lambda = 0.5;
        c.rank = 2;
        assert!(c.validate().unwrap_err().to_string().contains("rank"));
        c.rank = 1;
        c.strategy = Strategy::Ideal;
        assert!(c.validate().unwrap_err().to_string().contains("strategy"));
        c.strategy = Strategy::FedIT;
        c.n_clients = 2;
        assert!(c.validate().unwrap_err().to_string().contains("targets"));
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let c = FederationConfig::scalar_toy(Strategy::RoLora, 0.0, 3);
        let s = serde_json::to_string(&c).unwrap();
        let back: FederationConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<FederationConfig>(v).is_err());
    }
}
