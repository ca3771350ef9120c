//! Server-side aggregation and the aggregation-error metric.
//!
//! Factor-wise averaging `(mean B)·(mean A)` differs from the ideal
//! `mean(B·A)` by
//!
//! ```text
//! E = −1/(2N²) Σᵢ Σⱼ (Bᵢ − Bⱼ)(Aᵢ − Aⱼ)
//! ```
//!
//! which vanishes when all clients agree and is what rotational alignment
//! tries to shrink.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{ClientReport, FederationConfig};
use crate::lora::{Factor, GlobalModel, LoraAdapter};
use crate::numerics::Matrix;
use crate::scalar::Real;

/// Aggregation strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Exact mean of client products. Measurement only: the result is full
    /// rank and is never broadcast.
    Ideal,
    #[serde(rename = "fed_it", alias = "fedit")]
    FedIT,
    #[serde(alias = "ffalora")]
    FfaLora,
    #[serde(alias = "rolora")]
    RoLora,
    #[serde(alias = "fedrot")]
    FedRot,
    ScalarRescale,
    RandomRotation,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Ideal,
        Strategy::FedIT,
        Strategy::FfaLora,
        Strategy::RoLora,
        Strategy::FedRot,
        Strategy::ScalarRescale,
        Strategy::RandomRotation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Ideal => "ideal",
            Strategy::FedIT => "fed_it",
            Strategy::FfaLora => "ffa_lora",
            Strategy::RoLora => "ro_lora",
            Strategy::FedRot => "fed_rot",
            Strategy::ScalarRescale => "scalar_rescale",
            Strategy::RandomRotation => "random_rotation",
        }
    }

    /// Factor held fixed during local training in `round`, if any.
    pub fn frozen_factor(&self, round: usize) -> Option<Factor> {
        match self {
            Strategy::FfaLora => Some(Factor::A),
            Strategy::RoLora => Some(rolora_trained_factor(round).other()),
            _ => None,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// RoLoRA trains `B` in odd rounds and `A` in even rounds. Starting with `B`
/// matters: with `B = 0` an `A`-only round cannot move.
pub fn rolora_trained_factor(round: usize) -> Factor {
    if round % 2 == 1 {
        Factor::B
    } else {
        Factor::A
    }
}

/// Aggregation error of one round, summed across layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationError {
    pub frobenius: f64,
    pub per_layer: Vec<f64>,
}

impl AggregationError {
    pub fn from_layers(per_layer: Vec<f64>) -> Self {
        Self {
            frobenius: per_layer.iter().sum(),
            per_layer,
        }
    }
}

fn check_consistent<T: Real>(adapters: &[LoraAdapter<T>]) -> Result<&LoraAdapter<T>> {
    let first = adapters
        .first()
        .ok_or_else(|| Error::invalid("aggregation over an empty client set"))?;
    if let Some(bad) = adapters.iter().find(|a| !a.same_shape(first)) {
        return Err(Error::Shape {
            op: "aggregate",
            left: (first.d_out(), first.d_in()),
            right: (bad.d_out(), bad.d_in()),
        });
    }
    Ok(first)
}

/// `(1/N) Σ Bᵢ·Aᵢ`.
pub fn aggregate_ideal<T: Real>(adapters: &[LoraAdapter<T>]) -> Result<Matrix<T>> {
    check_consistent(adapters)?;
    let updates: Vec<Matrix<T>> = adapters.iter().map(LoraAdapter::semantic_update).collect();
    Matrix::mean(&updates)
}

/// `((1/N) Σ Bᵢ, (1/N) Σ Aᵢ)`.
pub fn aggregate_factorwise<T: Real>(adapters: &[LoraAdapter<T>]) -> Result<LoraAdapter<T>> {
    check_consistent(adapters)?;
    let b = Matrix::mean(adapters.iter().map(LoraAdapter::b))?;
    let a = Matrix::mean(adapters.iter().map(LoraAdapter::a))?;
    LoraAdapter::new(b, a)
}

/// `E = B̄·Ā − (1/N) Σ Bᵢ·Aᵢ` as a matrix.
pub fn aggregation_error_matrix<T: Real>(adapters: &[LoraAdapter<T>]) -> Result<Matrix<T>> {
    let naive = aggregate_factorwise(adapters)?.semantic_update();
    naive.sub(&aggregate_ideal(adapters)?)
}

/// `‖E‖_F` for a single layer's client set.
pub fn aggregation_error<T: Real>(adapters: &[LoraAdapter<T>]) -> Result<AggregationError> {
    let e = aggregation_error_matrix(adapters)?.frobenius_norm().as_f64();
    Ok(AggregationError::from_layers(vec![e]))
}

/// Multi-layer form: `layers[l]` holds every client's adapter for layer `l`.
pub fn aggregation_error_layers<T: Real>(layers: &[Vec<LoraAdapter<T>>]) -> Result<AggregationError> {
    let per_layer = layers
        .iter()
        .map(|clients| Ok(aggregation_error_matrix(clients)?.frobenius_norm().as_f64()))
        .collect::<Result<Vec<_>>>()?;
    Ok(AggregationError::from_layers(per_layer))
}

/// Pairwise-difference form of `E`: `−1/(2N²) Σᵢ Σⱼ (Bᵢ − Bⱼ)(Aᵢ − Aⱼ)`.
///
/// Computed straight from the double sum; used as an independent check of
/// [`aggregation_error_matrix`].
pub fn lagrange_error_oracle<T: Real>(adapters: &[LoraAdapter<T>]) -> Result<Matrix<T>> {
    let first = check_consistent(adapters)?;
    let n = adapters.len();
    let mut acc = Matrix::zeros(first.d_out(), first.d_in());
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let db = adapters[i].b().sub(adapters[j].b())?;
            let da = adapters[i].a().sub(adapters[j].a())?;
            acc.axpy(T::one(), &db.matmul(&da)?)?;
        }
    }
    let nn = T::lit((n * n) as f64);
    Ok(acc.scale(-T::one() / (T::lit(2.0) * nn)))
}

/// What the server produces in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerOutput {
    pub model: GlobalModel<f64>,
    /// Aggregation error of the adapters as uploaded (after any client-side
    /// transformation).
    pub error: AggregationError,
}

/// One synchronization step of the server.
///
/// FedIT and every client-side-transform strategy average both factors.
/// FFA-LoRA averages `B` and keeps the frozen `A`; RoLoRA averages the factor
/// trained this round and passes the other through from the broadcast model.
pub fn server_step(
    strategy: Strategy,
    reports: &[ClientReport],
    round: usize,
    config: &FederationConfig,
    history: &[GlobalModel<f64>],
) -> Result<ServerOutput> {
    if reports.len() != config.n_clients {
        return Err(Error::Protocol {
            expected: config.n_clients,
            got: reports.len(),
        });
    }
    let broadcast = history
        .last()
        .ok_or_else(|| Error::invalid("server step with empty history"))?;
    let adapters: Vec<LoraAdapter<f64>> = reports.iter().map(|r| r.adapter.clone()).collect();
    if let Some(bad) = adapters.iter().find(|a| !a.same_shape(broadcast.adapter())) {
        return Err(Error::Shape {
            op: "server_step",
            left: (broadcast.adapter().d_out(), broadcast.adapter().d_in()),
            right: (bad.d_out(), bad.d_in()),
        });
    }
    let error = aggregation_error(&adapters)?;
    let averaged = aggregate_factorwise(&adapters)?;
    let prev = broadcast.adapter();
    let adapter = match strategy {
        Strategy::Ideal => {
            return Err(Error::invalid(
                "the ideal strategy is measurement-only and cannot produce a rank-r global adapter",
            ))
        }
        Strategy::FedIT | Strategy::FedRot | Strategy::ScalarRescale | Strategy::RandomRotation => averaged,
        Strategy::FfaLora => LoraAdapter::new(averaged.b().clone(), prev.a().clone())?,
        Strategy::RoLora => match rolora_trained_factor(round) {
            Factor::B => LoraAdapter::new(averaged.b().clone(), prev.a().clone())?,
            Factor::A => LoraAdapter::new(prev.b().clone(), averaged.a().clone())?,
        },
    };
    Ok(ServerOutput {
        model: broadcast.with_adapter(adapter)?,
        error,
    })
}
