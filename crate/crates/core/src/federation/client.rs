use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::FederationConfig;
use crate::aggregation::Strategy;
use crate::alignment::{
    alignment_schedule, apply_alignment, apply_scalar_rescale, haar_random_rotation, procrustes_rotation,
    scalar_rescale_align, soft_rotation, AlignmentTarget,
};
use crate::error::{Error, Result};
use crate::lora::{Factor, LoraAdapter};
use crate::numerics::Matrix;
use crate::rng;
use crate::tasks::{Shard, Task};

/// Losses above this abort the run.
pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Result of a client's local optimization.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOutcome {
    pub adapter: LoraAdapter<f64>,
    /// Loss before each step (batch loss under minibatching).
    pub step_losses: Vec<f64>,
    /// Full-shard loss after the last step.
    pub final_loss: f64,
    pub max_grad_b: f64,
    pub max_grad_a: f64,
}

/// Per-client quantities logged every round.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientDiagnostics {
    /// `‖Bᵢ‖_F·‖Aᵢ‖_F` after local training.
    pub tau: f64,
    /// `‖Aᵢ − A_ref‖_F` before any transformation.
    pub dist_a: f64,
    /// `‖Bᵢ − B_ref‖_F` before any transformation.
    pub dist_b: f64,
    /// Squared distance of the scheduled factor to the reference, before and
    /// after the transformation.
    pub spread_raw: f64,
    pub spread_aligned: f64,
    /// `‖R* − I‖_F` of the unsoftened Procrustes rotation (rotation
    /// strategies only).
    pub hard_rotation_deviation: f64,
    /// `‖B̃Ã − BA‖_F`.
    pub semantic_drift: f64,
    pub max_grad_b: f64,
    pub max_grad_a: f64,
}

/// What a client uploads, plus its diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientReport {
    pub client_id: usize,
    /// Factors after the client-side transformation.
    pub adapter: LoraAdapter<f64>,
    pub local_loss_final: f64,
    /// `‖R_soft − I‖_F`; zero for non-rotational strategies.
    pub rotation_deviation: f64,
    pub diagnostics: ClientDiagnostics,
}

fn batch_indices(
    task: &Task,
    client: usize,
    config: &FederationConfig,
    round: usize,
    step: usize,
) -> Option<Vec<usize>> {
    let bs = config.batch_size?;
    let Shard::Samples { y, .. } = task.shard(client) else {
        return None;
    };
    if bs >= y.len() {
        return None;
    }
    let mut stream = rng::stream(
        config.seed,
        &[rng::purpose::BATCH, round as u64, client as u64, step as u64],
    );
    let mut idx = index::sample(&mut stream, y.len(), bs).into_vec();
    idx.sort_unstable();
    Some(idx)
}

fn diverged(client: usize, round: usize, step: usize, loss: f64) -> Error {
    Error::Divergence {
        client,
        round,
        step,
        loss,
    }
}

/// Gradient descent on `client`'s shard starting from `start`.
///
/// FFA-LoRA never updates `A`; RoLoRA updates only the factor scheduled for
/// this round. Fails with a divergence error if a loss is non-finite or
/// above [`DIVERGENCE_LOSS`], or a parameter becomes non-finite.
pub fn local_train(
    client: usize,
    start: &LoraAdapter<f64>,
    task: &Task,
    config: &FederationConfig,
    round: usize,
) -> Result<LocalOutcome> {
    if config.local_steps == 0 {
        return Err(Error::invalid("local_steps must be at least 1"));
    }
    let eta = config.learning_rate;
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {eta}")));
    }
    let frozen = config.strategy.frozen_factor(round);
    let (mut b, mut a) = start.clone().into_parts();
    let mut step_losses = Vec::with_capacity(config.local_steps);
    let (mut max_gb, mut max_ga) = (0.0f64, 0.0f64);
    for step in 0..config.local_steps {
        let ad = LoraAdapter::new(b, a)?;
        let batch = batch_indices(task, client, config, round, step);
        let g = task.client_loss_grad(client, &ad, batch.as_deref())?;
        if !(g.loss.is_finite() && g.loss <= DIVERGENCE_LOSS) {
            return Err(diverged(client, round, step, g.loss));
        }
        step_losses.push(g.loss);
        max_gb = max_gb.max(g.grad_b.frobenius_norm());
        max_ga = max_ga.max(g.grad_a.frobenius_norm());
        (b, a) = ad.into_parts();
        if frozen != Some(Factor::B) {
            b.axpy(-eta, &g.grad_b)?;
        }
        if frozen != Some(Factor::A) {
            a.axpy(-eta, &g.grad_a)?;
        }
        if !(b.is_finite() && a.is_finite()) {
            return Err(diverged(client, round, step, f64::NAN));
        }
    }
    let adapter = LoraAdapter::new(b, a)?;
    let final_loss = task.client_loss(client, &adapter)?;
    if !(final_loss.is_finite() && final_loss <= DIVERGENCE_LOSS) {
        return Err(diverged(client, round, config.local_steps, final_loss));
    }
    Ok(LocalOutcome {
        adapter,
        step_losses,
        final_loss,
        max_grad_b: max_gb,
        max_grad_a: max_ga,
    })
}

fn factor(ad: &LoraAdapter<f64>, target: AlignmentTarget) -> &Matrix<f64> {
    match target {
        AlignmentTarget::FactorA => ad.a(),
        AlignmentTarget::FactorB => ad.b(),
    }
}

fn sq_dist(x: &Matrix<f64>, y: &Matrix<f64>) -> Result<f64> {
    Ok(x.sub(y)?.frobenius_norm().powi(2))
}

/// Whether `config`'s strategy transforms factors in `round`.
pub fn transforms_in_round(config: &FederationConfig, round: usize) -> bool {
    matches!(
        config.strategy,
        Strategy::FedRot | Strategy::ScalarRescale | Strategy::RandomRotation
    ) && round >= config.align_from_round
}

/// Applies the strategy's client-side transformation to freshly trained
/// factors and packages the upload.
pub fn prepare_report(
    client: usize,
    local: LocalOutcome,
    reference: &LoraAdapter<f64>,
    config: &FederationConfig,
    round: usize,
) -> Result<ClientReport> {
    let raw = local.adapter;
    if !raw.same_shape(reference) {
        return Err(Error::Shape {
            op: "prepare_report",
            left: (raw.d_out(), raw.d_in()),
            right: (reference.d_out(), reference.d_in()),
        });
    }
    let target = alignment_schedule(round, config.schedule_ablation);
    let mut rotation_deviation = 0.0;
    let mut hard_rotation_deviation = 0.0;
    let uploaded = if !transforms_in_round(config, round) {
        raw.clone()
    } else {
        match config.strategy {
            Strategy::FedRot => {
                let hard = procrustes_rotation(factor(&raw, target), factor(reference, target), target)?;
                hard_rotation_deviation = hard.deviation_from_identity();
                let soft = soft_rotation(&hard, config.lambda)?;
                rotation_deviation = soft.deviation_from_identity();
                apply_alignment(&raw, &soft)?
            }
            Strategy::RandomRotation => {
                let seed = rng::derive_seed(config.seed, &[round as u64, client as u64]);
                let rot = haar_random_rotation::<f64>(raw.rank(), seed)?;
                rotation_deviation = rot.deviation_from_identity();
                apply_alignment(&raw, &rot)?
            }
            Strategy::ScalarRescale => {
                match scalar_rescale_align(factor(&raw, target), factor(reference, target)) {
                    Ok(c) => apply_scalar_rescale(&raw, c, target)?,
                    // A zero local factor or an orthogonal reference leaves
                    // nothing to rescale against.
                    Err(Error::DegenerateAlignment { .. }) | Err(Error::InvalidArgument(_)) => raw.clone(),
                    Err(e) => return Err(e),
                }
            }
            _ => unreachable!("transforms_in_round covers only transforming strategies"),
        }
    };
    let before = raw.semantic_update();
    let semantic_drift = if uploaded == raw {
        0.0
    } else {
        uploaded.semantic_update().sub(&before)?.frobenius_norm()
    };
    let diagnostics = ClientDiagnostics {
        tau: raw.b().frobenius_norm() * raw.a().frobenius_norm(),
        dist_a: raw.a().sub(reference.a())?.frobenius_norm(),
        dist_b: raw.b().sub(reference.b())?.frobenius_norm(),
        spread_raw: sq_dist(factor(&raw, target), factor(reference, target))?,
        spread_aligned: sq_dist(factor(&uploaded, target), factor(reference, target))?,
        hard_rotation_deviation,
        semantic_drift,
        max_grad_b: local.max_grad_b,
        max_grad_a: local.max_grad_a,
    };
    Ok(ClientReport {
        client_id: client,
        adapter: uploaded,
        local_loss_final: local.final_loss,
        rotation_deviation,
        diagnostics,
    })
}

/// Local training from the broadcast adapter followed by the client-side
/// transformation against `reference`.
pub fn client_round(
    client: usize,
    broadcast: &LoraAdapter<f64>,
    task: &Task,
    config: &FederationConfig,
    round: usize,
    reference: &LoraAdapter<f64>,
) -> Result<ClientReport> {
    if round == 0 {
        return Err(Error::invalid("rounds are numbered from 1"));
    }
    let local = local_train(client, broadcast, task, config, round)?;
    prepare_report(client, local, reference, config, round)
}
