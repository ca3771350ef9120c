use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lora::{GlobalModel, LoraAdapter};
use crate::rng;
use crate::scalar::Real;

/// Where a client's alignment reference comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Global adapter broadcast at the start of the round.
    #[default]
    PrevGlobal,
    /// Global adapter from `lag` rounds back (`lag >= 2`).
    OlderGlobal { lag: usize },
    /// Post-training factors of one uniformly sampled client, drawn afresh
    /// each round.
    RandomClient,
}

impl ReferenceMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            ReferenceMode::OlderGlobal { lag } if *lag < 2 => Err(Error::invalid(format!(
                "older_global lag must be at least 2, got {lag}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Picks the alignment reference for `round`.
///
/// `history[k]` is the global model after round `k` (`history[0]` is the
/// initialization), so in round `t` the latest entry is `W^{t-1}` and
/// `OlderGlobal { lag }` resolves to `W^{t-lag}`, clamped to the earliest
/// entry.
pub fn select_reference<T: Real>(
    history: &[GlobalModel<T>],
    mode: ReferenceMode,
    round: usize,
    client_snapshots: &[LoraAdapter<T>],
    seed: u64,
) -> Result<LoraAdapter<T>> {
    mode.validate()?;
    let last = history
        .last()
        .ok_or_else(|| Error::invalid("reference selection with empty history"))?;
    match mode {
        ReferenceMode::PrevGlobal => Ok(last.adapter().clone()),
        ReferenceMode::OlderGlobal { lag } => {
            let back = lag - 1;
            let idx = (history.len() - 1).saturating_sub(back);
            Ok(history[idx].adapter().clone())
        }
        ReferenceMode::RandomClient => {
            if client_snapshots.is_empty() {
                return Err(Error::invalid("random-client reference needs client snapshots"));
            }
            let mut stream = rng::stream(seed, &[rng::purpose::REFERENCE, round as u64]);
            let pick = stream.random_range(0..client_snapshots.len());
            Ok(client_snapshots[pick].clone())
        }
    }
}
