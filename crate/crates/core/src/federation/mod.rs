//! End-to-end simulation: broadcast, local training, client-side
//! transformation, upload, aggregation.
//!
//! Clients of a round run concurrently on the rayon pool. Every random draw
//! is keyed by `(seed, purpose, round, client)`, so results do not depend on
//! scheduling.

mod client;
mod config;
mod sweep;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use client::{
    client_round, local_train, prepare_report, transforms_in_round, ClientDiagnostics, ClientReport, LocalOutcome,
    DIVERGENCE_LOSS,
};
pub use config::{FederationConfig, InitSpec, TaskSpec};
pub use sweep::{run_sweep, SweepCell, SweepGrid};

use crate::aggregation::server_step;
use crate::alignment::{alignment_schedule, select_reference, AlignmentTarget, ReferenceMode};
use crate::error::{Error, Result};
use crate::lora::{GlobalModel, LoraAdapter};
use crate::tasks::Task;

/// Metrics of one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Global loss of the aggregated model over all shards.
    pub loss: f64,
    /// Classification accuracy of the aggregated model, if applicable.
    pub accuracy: Option<f64>,
    /// `‖E^t‖_F` of the uploaded factors.
    pub agg_error: f64,
    /// Factor scheduled for alignment this round.
    pub target: AlignmentTarget,
    /// Φ(λ): mean squared distance of uploaded factors to the reference.
    pub dispersion: f64,
    /// Φ(0): the same for the untransformed factors.
    pub dispersion_raw: f64,
    /// α(λ) = 1 − Φ(λ)/Φ(0), for rounds with a transformation and Φ(0) > 0.
    pub alignment_gain: Option<f64>,
    /// Mean `‖R_soft − I‖_F` over clients.
    pub rotation_deviation: f64,
    /// `‖B̄‖_F·‖Ā‖_F` of the aggregated adapter.
    pub tau_diag: f64,
    pub norm_b: f64,
    pub norm_a: f64,
    pub wall_ms: f64,
    /// Scalars sent by each client.
    pub upload_scalars: usize,
    /// Scalars received by each client (broadcast plus any extra reference).
    pub download_scalars: usize,
    pub clients: Vec<ClientDiagnostics>,
}

/// Outcome of [`run_federation`]. When a client diverges, `failure` holds
/// the error and `rounds` the completed prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub config: FederationConfig,
    pub rounds: Vec<RoundRecord>,
    pub final_model: GlobalModel<f64>,
    pub failure: Option<Error>,
    /// Total wall time, zero unless `config.record_timing`.
    pub wall_ms: f64,
}

impl RunResult {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    /// Turns a diverged run into its error.
    pub fn into_complete(self) -> Result<Self> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rounds.last().map(|r| r.loss)
    }

    /// Mean `‖E^t‖_F` over rounds.
    pub fn mean_agg_error(&self) -> Option<f64> {
        if self.rounds.is_empty() {
            return None;
        }
        Some(self.rounds.iter().map(|r| r.agg_error).sum::<f64>() / self.rounds.len() as f64)
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len().max(1) as f64;
    xs.sum::<f64>() / n
}

/// Runs the configured experiment.
///
/// Invalid configs are errors; a diverging client ends the run early with
/// `failure` set.
pub fn run_federation(config: &FederationConfig) -> Result<RunResult> {
    config.validate()?;
    let task = config.build_task()?;
    let init = config.initial_adapter()?;
    run_with_task(config, &task, init)
}

/// [`run_federation`] on a prebuilt task and initial adapter.
pub fn run_with_task(config: &FederationConfig, task: &Task, init: LoraAdapter<f64>) -> Result<RunResult> {
    config.validate()?;
    if task.n_clients() != config.n_clients {
        return Err(Error::Protocol {
            expected: config.n_clients,
            got: task.n_clients(),
        });
    }
    if task.dims() != config.dims() || init.rank() != config.rank {
        return Err(Error::invalid(
            "task or initial adapter does not match the config dimensions",
        ));
    }
    let started = Instant::now();
    let mut history = vec![GlobalModel::new(task.w0().clone(), init)?];
    let mut rounds = Vec::with_capacity(config.rounds);
    let mut failure = None;
    for t in 1..=config.rounds {
        match run_round(config, task, &history, t) {
            Ok((model, record)) => {
                history.push(model);
                rounds.push(record);
            }
            Err(e) => {
                log::warn!("run stopped in round {t}: {e}");
                failure = Some(e);
                break;
            }
        }
    }
    let wall_ms = if config.record_timing {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    Ok(RunResult {
        config: config.clone(),
        rounds,
        final_model: history.pop().expect("history starts nonempty"),
        failure,
        wall_ms,
    })
}

fn run_round(
    config: &FederationConfig,
    task: &Task,
    history: &[GlobalModel<f64>],
    t: usize,
) -> Result<(GlobalModel<f64>, RoundRecord)> {
    let started = Instant::now();
    let broadcast = history.last().expect("nonempty history").adapter().clone();
    let locals: Vec<LocalOutcome> = (0..config.n_clients)
        .into_par_iter()
        .map(|c| local_train(c, &broadcast, task, config, t))
        .collect::<Result<_>>()?;
    // Random-client references need every client's factors, so the
    // reference is chosen after the training barrier.
    let snapshots: Vec<LoraAdapter<f64>> = locals.iter().map(|l| l.adapter.clone()).collect();
    let reference = select_reference(history, config.reference_mode, t, &snapshots, config.seed)?;
    drop(snapshots);
    let reports: Vec<ClientReport> = locals
        .into_par_iter()
        .enumerate()
        .map(|(c, local)| prepare_report(c, local, &reference, config, t))
        .collect::<Result<_>>()?;

    let out = server_step(config.strategy, &reports, t, config, history)?;
    let adapter = out.model.adapter();
    let loss = task.global_loss(adapter)?;
    let accuracy = task.accuracy(adapter)?;

    let dispersion = mean(reports.iter().map(|r| r.diagnostics.spread_aligned));
    let dispersion_raw = mean(reports.iter().map(|r| r.diagnostics.spread_raw));
    let alignment_gain =
        (transforms_in_round(config, t) && dispersion_raw > 0.0).then(|| 1.0 - dispersion / dispersion_raw);
    let per_client = broadcast.num_scalars();
    let extra = match config.reference_mode {
        ReferenceMode::RandomClient => reference.num_scalars(),
        _ => 0,
    };
    let (norm_b, norm_a) = (adapter.b().frobenius_norm(), adapter.a().frobenius_norm());
    let record = RoundRecord {
        round: t,
        loss,
        accuracy,
        agg_error: out.error.frobenius,
        target: alignment_schedule(t, config.schedule_ablation),
        dispersion,
        dispersion_raw,
        alignment_gain,
        rotation_deviation: mean(reports.iter().map(|r| r.rotation_deviation)),
        tau_diag: norm_b * norm_a,
        norm_b,
        norm_a,
        wall_ms: if config.record_timing {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
        upload_scalars: reports.iter().map(|r| r.adapter.num_scalars()).max().unwrap_or(0),
        download_scalars: per_client + extra,
        clients: reports.into_iter().map(|r| r.diagnostics).collect(),
    };
    debug_assert_eq!(record.upload_scalars, per_client);
    Ok((out.model, record))
}
