use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const MAX_RESAMPLES: usize = 100;

/// Per-class Dirichlet split of a labeled dataset across clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirichletPartition {
    pub alpha: f64,
    /// `proportions[class][client]`, each row summing to 1.
    pub proportions: Vec<Vec<f64>>,
    /// Sample indices owned by each client, ascending.
    pub shards: Vec<Vec<usize>>,
}

impl DirichletPartition {
    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    /// Class histogram of one client's shard.
    pub fn class_counts(&self, labels: &[usize], n_classes: usize, client: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &i in &self.shards[client] {
            counts[labels[i]] += 1;
        }
        counts
    }
}

fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.into_iter().map(|g| g / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    }
}

/// Splits samples by class: for every class, client proportions are drawn
/// from `Dirichlet(alpha, …, alpha)` and that class's (shuffled) samples are
/// cut at the cumulative proportions.
///
/// Draws are repeated (up to 100 times) until every client owns a sample;
/// if that still fails, single samples are moved from the largest shards.
pub fn dirichlet_partition(labels: &[usize], n_clients: usize, alpha: f64, seed: u64) -> Result<DirichletPartition> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if labels.len() < n_clients {
        return Err(Error::Partition(format!(
            "{} samples cannot cover {n_clients} clients",
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut stream = rng::stream(seed, &[rng::purpose::PARTITION]);
    let mut last = None;
    for _ in 0..MAX_RESAMPLES {
        let mut proportions = Vec::with_capacity(n_classes);
        let mut shards = vec![Vec::new(); n_clients];
        for members in &by_class {
            let p = sample_dirichlet(alpha, n_clients, &mut stream);
            let mut idx = members.clone();
            idx.shuffle(&mut stream);
            let n = idx.len();
            let mut start = 0;
            let mut cum = 0.0;
            for (client, &pk) in p.iter().enumerate() {
                cum += pk;
                let end = if client + 1 == n_clients {
                    n
                } else {
                    ((cum * n as f64).floor() as usize).clamp(start, n)
                };
                shards[client].extend_from_slice(&idx[start..end]);
                start = end;
            }
            proportions.push(p);
        }
        let done = shards.iter().all(|s| !s.is_empty());
        last = Some((proportions, shards));
        if done {
            break;
        }
    }
    let (proportions, mut shards) = last.expect("at least one draw");
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let donor = (0..n_clients)
            .max_by_key(|&c| (shards[c].len(), std::cmp::Reverse(c)))
            .expect("n_clients >= 1");
        if shards[donor].len() < 2 {
            return Err(Error::Partition("cannot give every client a sample".into()));
        }
        let moved = shards[donor].pop().expect("nonempty donor");
        shards[empty].push(moved);
    }
    for s in &mut shards {
        s.sort_unstable();
    }
    Ok(DirichletPartition {
        alpha,
        proportions,
        shards,
    })
}
