use std::path::Path;

use rand::Rng;

use super::{Shard, Task};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::rng;

/// Labeled samples, one per row of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix<f64>,
    pub y: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `idx` of the dataset.
    pub fn select(&self, idx: &[usize]) -> (Matrix<f64>, Vec<usize>) {
        let d = self.x.cols();
        let x = Matrix::from_fn(idx.len(), d, |i, j| self.x.get(idx[i], j));
        let y = idx.iter().map(|&i| self.y[i]).collect();
        (x, y)
    }
}

/// Isotropic Gaussian clusters: class `k` has a random mean of norm
/// `separation` and unit-variance noise. Labels cycle through the classes so
/// every class has `n_samples / n_classes` samples (±1).
pub fn gaussian_clusters(
    n_features: usize,
    n_classes: usize,
    n_samples: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_features == 0 || n_classes < 2 || n_samples == 0 {
        return Err(Error::invalid(format!(
            "need n_features >= 1, n_classes >= 2, n_samples >= 1 (got {n_features}, {n_classes}, {n_samples})"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid(format!("separation must be >= 0, got {separation}")));
    }
    let mut stream = rng::stream(seed, &[rng::purpose::TASK]);
    let raw = Matrix::<f64>::random_normal(n_classes, n_features, 1.0, &mut stream);
    let means = Matrix::from_fn(n_classes, n_features, |k, j| {
        let norm = raw.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            raw.get(k, j) * separation / norm
        } else {
            0.0
        }
    });
    let noise = Matrix::<f64>::random_normal(n_samples, n_features, 1.0, &mut stream);
    let mut y: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    // Fisher-Yates with the task stream so labels are not in a fixed pattern.
    for i in (1..y.len()).rev() {
        let j = stream.random_range(0..=i);
        y.swap(i, j);
    }
    let x = Matrix::from_fn(n_samples, n_features, |i, j| means.get(y[i], j) + noise.get(i, j));
    Ok(Dataset { x, y, n_classes })
}

pub(super) fn dump_csv(task: &Task, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let (_, d_in) = task.dims();
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header: Vec<String> = (0..d_in).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    header.push("client_id".into());
    w.write_record(&header).map_err(io)?;
    for c in 0..task.n_clients() {
        let Shard::Samples { x, y } = task.shard(c) else {
            return Err(Error::invalid("only sample tasks can be written as CSV"));
        };
        for (i, &label) in y.iter().enumerate() {
            let mut rec: Vec<String> = x.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            rec.push(label.to_string());
            rec.push(c.to_string());
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

pub(super) fn load_csv(path: &Path, n_classes: usize) -> Result<Task> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let width = r.headers().map_err(io)?.len();
    if width < 3 {
        return Err(Error::Io(format!("expected at least 3 columns, found {width}")));
    }
    let d_in = width - 2;
    let mut per_client: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(io)?;
        let bad = |what: &str| Error::Io(format!("row {}: bad {what}", line + 2));
        let feats = (0..d_in)
            .map(|j| rec[j].trim().parse::<f64>().map_err(|_| bad("feature")))
            .collect::<Result<Vec<_>>>()?;
        let label: usize = rec[d_in].trim().parse().map_err(|_| bad("label"))?;
        let client: usize = rec[d_in + 1].trim().parse().map_err(|_| bad("client_id"))?;
        if label >= n_classes {
            return Err(bad("label"));
        }
        if per_client.len() <= client {
            per_client.resize_with(client + 1, Default::default);
        }
        per_client[client].0.extend(feats);
        per_client[client].1.push(label);
    }
    let shards = per_client
        .into_iter()
        .enumerate()
        .map(|(c, (xs, ys))| {
            if ys.is_empty() {
                return Err(Error::Io(format!("client {c} has no samples")));
            }
            Ok(Shard::Samples {
                x: Matrix::from_vec(ys.len(), d_in, xs)?,
                y: ys,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Task::new(
        super::TaskKind::LogisticClassification,
        Matrix::zeros(n_classes, d_in),
        shards,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{logistic_task_partitioned, LogisticSpec};

    #[test]
    fn balanced_labels() {
        let d = gaussian_clusters(3, 4, 101, 2.0, 0).unwrap();
        let mut counts = [0; 4];
        for &y in &d.y {
            counts[y] += 1;
        }
        assert!(counts.iter().all(|&c| c == 25 || c == 26));
    }

    #[test]
    fn csv_round_trip() {
        let spec = LogisticSpec {
            n_features: 3,
            n_classes: 3,
            n_samples: 60,
            n_clients: 4,
            dirichlet_alpha: 0.5,
            separation: 3.0,
            seed: 5,
        };
        let task = logistic_task_partitioned(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        task.dump_csv(&path).unwrap();
        let back = Task::load_csv(&path, 3).unwrap();
        assert_eq!(back.n_clients(), 4);
        for c in 0..4 {
            assert_eq!(back.shard(c), task.shard(c));
        }
    }
}
