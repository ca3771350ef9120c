//! Alignment diagnostics: dispersion Φ(λ), relative gain α(λ), the gain
//! polynomial Γ(λ) and the range of λ for which it is positive.

use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentTarget;
use crate::error::{Error, Result};
use crate::federation::RunResult;
use crate::lora::LoraAdapter;
use crate::scalar::Real;

/// Default number of leading rounds excluded when estimating `c0`.
pub const DEFAULT_WARMUP_ROUNDS: usize = 5;

/// Factor distances below this (times `max(1, √τ)`) count as zero.
pub const DEGENERATE_DISTANCE: f64 = 1e-10;

/// `(1/N) Σ ‖Xᵢ − X_ref‖_F²` over the targeted factor.
pub fn dispersion<T: Real>(
    adapters: &[LoraAdapter<T>],
    reference: &LoraAdapter<T>,
    target: AlignmentTarget,
) -> Result<T> {
    if adapters.is_empty() {
        return Err(Error::invalid("dispersion of an empty client set"));
    }
    let mut acc = T::zero();
    for ad in adapters {
        let d = match target {
            AlignmentTarget::FactorA => ad.a().sub(reference.a())?,
            AlignmentTarget::FactorB => ad.b().sub(reference.b())?,
        }
        .frobenius_norm();
        acc += d * d;
    }
    Ok(acc / T::lit(adapters.len() as f64))
}

/// `α(λ) = 1 − Φ(λ)/Φ(0)`.
pub fn alignment_gain(phi_lambda: f64, phi_zero: f64) -> Result<f64> {
    if phi_zero == 0.0 {
        return Err(Error::UndefinedGain);
    }
    if !(phi_zero > 0.0 && phi_lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "dispersions must be nonnegative, got Φ(λ) = {phi_lambda}, Φ(0) = {phi_zero}"
        )));
    }
    Ok(1.0 - phi_lambda / phi_zero)
}

/// Constants of the alignment-gain analysis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Slope of the linear lower envelope `α(λ) ≥ c0·λ`.
    pub c0: f64,
    /// `‖R* − I‖_F ≤ κ·‖X − X_ref‖_F`.
    pub kappa: f64,
    /// Lower bounds on factor-to-reference distances.
    pub delta_a: f64,
    pub delta_b: f64,
    /// Bound on `‖Bᵢ‖_F·‖Aᵢ‖_F`.
    pub tau: f64,
    /// Bound on the `B`-gradient norm.
    pub g_b: f64,
    pub eta: f64,
}

impl TheoryConstants {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("c0", self.c0),
            ("kappa", self.kappa),
            ("delta_a", self.delta_a),
            ("delta_b", self.delta_b),
            ("tau", self.tau),
            ("g_b", self.g_b),
            ("eta", self.eta),
        ];
        for (name, v) in named {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Linear coefficient `c0 − 4·√τ·κ·η·G_B/δ_A`.
    fn slope(&self) -> f64 {
        self.c0 - 4.0 * self.tau.sqrt() * self.kappa * self.eta * self.g_b / self.delta_a
    }
}

/// `Γ(λ) = (c0 − 4·√τ·κ·η·G_B/δ_A)·λ − 4·κ²·λ²·τ`.
pub fn gamma(lambda: f64, k: &TheoryConstants) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(k.slope() * lambda - 4.0 * k.kappa * k.kappa * lambda * lambda * k.tau)
}

/// Open interval `(0, upper)` on which Γ is positive, or `None` when the
/// learning rate is at or above `c0·δ_A / (4·√τ·κ·G_B)`.
pub fn feasible_lambda_range(k: &TheoryConstants) -> Option<(f64, f64)> {
    let threshold = k.c0 * k.delta_a / (4.0 * k.tau.sqrt() * k.kappa * k.g_b);
    if !(k.eta < threshold) {
        return None;
    }
    let root = (k.c0 * k.delta_a - 4.0 * k.tau.sqrt() * k.kappa * k.eta * k.g_b)
        / (4.0 * k.kappa * k.kappa * k.tau * k.delta_a);
    Some((0.0, root.min(1.0)))
}

fn positive(quantity: &'static str, v: f64, why: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Estimation {
            quantity,
            reason: format!("{why} (got {v})"),
        })
    }
}

fn nondegenerate(quantity: &'static str, v: f64, floor: f64, why: &str) -> Result<f64> {
    if v > floor {
        positive(quantity, v, why)
    } else {
        Err(Error::Estimation {
            quantity,
            reason: format!("{why} (got {v:e}, at or below {floor:e})"),
        })
    }
}

/// Empirical constants from a completed run, using the default warmup.
pub fn estimate_constants(run: &RunResult) -> Result<TheoryConstants> {
    estimate_constants_with_warmup(run, DEFAULT_WARMUP_ROUNDS)
}

/// Empirical constants from a completed run.
///
/// * τ: largest client `‖B‖·‖A‖` seen.
/// * δ_A, δ_B: smallest client-to-reference factor distance seen from the
///   first aligned round on. Distances at rounding level (see
///   [`DEGENERATE_DISTANCE`]) are reported as an error.
/// * κ: largest `‖R* − I‖ / ‖X − X_ref‖` over aligned client-rounds with a
///   nondegenerate distance.
/// * G_B: largest local `B`-gradient norm.
/// * c0: smallest `α(λ)/λ` over aligned rounds after `warmup` rounds.
///
/// These are diagnostics of one trajectory, not certified bounds.
pub fn estimate_constants_with_warmup(run: &RunResult, warmup: usize) -> Result<TheoryConstants> {
    let cfg = &run.config;
    if run.rounds.len() < 2 {
        return Err(Error::Estimation {
            quantity: "run",
            reason: format!("need at least 2 rounds, got {}", run.rounds.len()),
        });
    }
    let mut tau = 0.0f64;
    let mut g_b = 0.0f64;
    let mut delta_a = f64::INFINITY;
    let mut delta_b = f64::INFINITY;
    let mut kappa = 0.0f64;
    let mut c0 = f64::INFINITY;
    for c in run.rounds.iter().flat_map(|r| &r.clients) {
        tau = tau.max(c.tau);
        g_b = g_b.max(c.max_grad_b);
    }
    let floor = DEGENERATE_DISTANCE * tau.sqrt().max(1.0);
    for rec in &run.rounds {
        if rec.round < cfg.align_from_round {
            continue;
        }
        for c in &rec.clients {
            delta_a = delta_a.min(c.dist_a);
            delta_b = delta_b.min(c.dist_b);
            let dist = match rec.target {
                AlignmentTarget::FactorA => c.dist_a,
                AlignmentTarget::FactorB => c.dist_b,
            };
            if dist > floor {
                kappa = kappa.max(c.hard_rotation_deviation / dist);
            }
        }
        if rec.round > warmup {
            if let Some(alpha) = rec.alignment_gain {
                if cfg.lambda > 0.0 {
                    c0 = c0.min(alpha / cfg.lambda);
                }
            }
        }
    }
    Ok(TheoryConstants {
        c0: positive("c0", c0, "no aligned round after warmup with a positive gain")?,
        kappa: positive("kappa", kappa, "no nontrivial optimal rotation observed")?,
        delta_a: nondegenerate("delta_a", delta_a, floor, "clients coincide with the reference A")?,
        delta_b: nondegenerate("delta_b", delta_b, floor, "clients coincide with the reference B")?,
        tau: positive("tau", tau, "all adapter products vanish")?,
        g_b: positive("g_b", g_b, "no nonzero B gradient observed")?,
        eta: positive("eta", cfg.learning_rate, "learning rate must be positive")?,
    })
}
