use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_federation, FederationConfig, RunResult, TaskSpec};
use crate::aggregation::Strategy;
use crate::alignment::{ReferenceMode, ScheduleAblation};
use crate::error::{Error, Result};

/// Parameter grid. Every listed axis is crossed with every other; unset axes
/// keep the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub strategy: Option<Vec<Strategy>>,
    #[serde(default)]
    pub lambda: Option<Vec<f64>>,
    #[serde(default)]
    pub learning_rate: Option<Vec<f64>>,
    #[serde(default)]
    pub local_steps: Option<Vec<usize>>,
    #[serde(default)]
    pub rank: Option<Vec<usize>>,
    #[serde(default)]
    pub schedule_ablation: Option<Vec<ScheduleAblation>>,
    #[serde(default)]
    pub reference_mode: Option<Vec<ReferenceMode>>,
    #[serde(default)]
    pub dirichlet_alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub heterogeneity: Option<Vec<f64>>,
    /// Seeds replicated over every cell; defaults to the base seed.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

/// One (parameters, seed) point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    /// `(axis, value)` pairs in axis order.
    pub params: Vec<(String, String)>,
    pub seed: u64,
    pub config: FederationConfig,
    pub result: Result<RunResult>,
}

impl SweepCell {
    /// Filesystem-friendly cell name, e.g. `lambda=0.5_seed=3`.
    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        parts.push(format!("seed={}", self.seed));
        parts.join("_")
    }
}

type Setter = Box<dyn Fn(&mut FederationConfig) -> Result<()> + Send + Sync>;

fn axis<V: Clone + Send + Sync + 'static>(
    name: &'static str,
    values: &Option<Vec<V>>,
    show: impl Fn(&V) -> String,
    set: impl Fn(&mut FederationConfig, V) -> Result<()> + Copy + Send + Sync + 'static,
) -> Option<(&'static str, Vec<(String, Setter)>)> {
    values.as_ref().map(|vs| {
        let entries = vs
            .iter()
            .map(|v| {
                let v2 = v.clone();
                let setter: Setter = Box::new(move |c| set(c, v2.clone()));
                (show(v), setter)
            })
            .collect();
        (name, entries)
    })
}

fn float(x: &f64) -> String {
    format!("{x}")
}

impl SweepGrid {
    fn axes(&self) -> Vec<(&'static str, Vec<(String, Setter)>)> {
        [
            axis(
                "strategy",
                &self.strategy,
                |s| s.name().to_string(),
                |c, v| {
                    c.strategy = v;
                    Ok(())
                },
            ),
            axis("lambda", &self.lambda, float, |c, v| {
                c.lambda = v;
                Ok(())
            }),
            axis("learning_rate", &self.learning_rate, float, |c, v| {
                c.learning_rate = v;
                Ok(())
            }),
            axis(
                "local_steps",
                &self.local_steps,
                |v| v.to_string(),
                |c, v| {
                    c.local_steps = v;
                    Ok(())
                },
            ),
            axis(
                "rank",
                &self.rank,
                |v| v.to_string(),
                |c, v| {
                    c.rank = v;
                    Ok(())
                },
            ),
            axis(
                "schedule_ablation",
                &self.schedule_ablation,
                |v| format!("{v:?}").to_lowercase(),
                |c, v| {
                    c.schedule_ablation = v;
                    Ok(())
                },
            ),
            axis(
                "reference_mode",
                &self.reference_mode,
                |v| match v {
                    ReferenceMode::PrevGlobal => "prev_global".into(),
                    ReferenceMode::OlderGlobal { lag } => format!("older_global{lag}"),
                    ReferenceMode::RandomClient => "random_client".into(),
                },
                |c, v| {
                    c.reference_mode = v;
                    Ok(())
                },
            ),
            axis("dirichlet_alpha", &self.dirichlet_alpha, float, |c, v| {
                c.dirichlet_alpha = v;
                Ok(())
            }),
            axis("heterogeneity", &self.heterogeneity, float, |c, v| match &mut c.task {
                TaskSpec::LowRankRegression { heterogeneity, .. } => {
                    *heterogeneity = v;
                    Ok(())
                }
                _ => Err(Error::invalid(
                    "heterogeneity applies only to low_rank_regression tasks",
                )),
            }),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    /// Number of parameter combinations (excluding seeds).
    pub fn n_combinations(&self) -> usize {
        self.axes().iter().map(|(_, v)| v.len()).product()
    }

    /// Expands the grid into per-cell configs (without running them).
    pub fn expand(&self, base: &FederationConfig) -> Result<Vec<(Vec<(String, String)>, u64, FederationConfig)>> {
        let axes = self.axes();
        if axes.is_empty() && self.seeds.is_none() {
            return Err(Error::invalid("sweep grid has no axes"));
        }
        if axes.iter().any(|(_, v)| v.is_empty()) {
            return Err(Error::invalid("sweep grid has an empty axis"));
        }
        let seeds = self.seeds.clone().unwrap_or_else(|| vec![base.seed]);
        if seeds.is_empty() {
            return Err(Error::invalid("sweep seeds list is empty"));
        }
        let mut combos: Vec<(Vec<(String, String)>, FederationConfig)> = vec![(Vec::new(), base.clone())];
        for (name, values) in &axes {
            let mut next = Vec::with_capacity(combos.len() * values.len());
            for (params, cfg) in &combos {
                for (label, set) in values {
                    let mut c = cfg.clone();
                    set(&mut c)?;
                    let mut p = params.clone();
                    p.push((name.to_string(), label.clone()));
                    next.push((p, c));
                }
            }
            combos = next;
        }
        let mut cells = Vec::with_capacity(combos.len() * seeds.len());
        for (params, cfg) in combos {
            for &seed in &seeds {
                let mut c = cfg.clone();
                c.seed = seed;
                cells.push((params.clone(), seed, c));
            }
        }
        Ok(cells)
    }
}

/// Runs every cell of `grid × seeds`. Cells run in parallel; a failing cell
/// is recorded in its `result` (or its run's `failure`) and the sweep
/// continues.
pub fn run_sweep(base: &FederationConfig, grid: &SweepGrid) -> Result<Vec<SweepCell>> {
    let cells = grid.expand(base)?;
    Ok(cells
        .into_par_iter()
        .map(|(params, seed, config)| {
            let result = run_federation(&config);
            SweepCell {
                params,
                seed,
                config,
                result,
            }
        })
        .collect())
}
