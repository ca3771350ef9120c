//! Desk-scale federated objectives with analytic gradients in the adapter
//! factors.
//!
//! Every objective depends on the factors only through `W = W₀ + B·A`, so a
//! gradient `G = ∂f/∂W` gives `∂f/∂B = G·Aᵀ` and `∂f/∂A = Bᵀ·G`.

mod dataset;
mod partition;

use serde::{Deserialize, Serialize};

pub use dataset::{gaussian_clusters, Dataset};
pub use partition::{dirichlet_partition, DirichletPartition};

use crate::error::{Error, Result};
use crate::lora::LoraAdapter;
use crate::numerics::Matrix;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ScalarToy,
    LowRankRegression,
    LogisticClassification,
}

/// One client's private data.
#[derive(Clone, Debug, PartialEq)]
pub enum Shard {
    /// Squared-error target: loss `‖W − target‖_F²`.
    Target(Matrix<f64>),
    /// Labeled samples (`x` is `n × d_in`) under softmax cross-entropy.
    Samples { x: Matrix<f64>, y: Vec<usize> },
}

impl Shard {
    pub fn len(&self) -> usize {
        match self {
            Shard::Target(_) => 1,
            Shard::Samples { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss and factor gradients at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_b: Matrix<f64>,
    pub grad_a: Matrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    kind: TaskKind,
    w0: Matrix<f64>,
    shards: Vec<Shard>,
    partition: Option<DirichletPartition>,
}

impl Task {
    pub fn new(kind: TaskKind, w0: Matrix<f64>, shards: Vec<Shard>) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::invalid("task needs at least one client shard"));
        }
        for s in &shards {
            match s {
                Shard::Target(t) if t.shape() != w0.shape() => {
                    return Err(Error::Shape {
                        op: "Task::new",
                        left: w0.shape(),
                        right: t.shape(),
                    })
                }
                Shard::Samples { x, y } if x.cols() != w0.cols() || x.rows() != y.len() => {
                    return Err(Error::invalid("sample shard does not match the task dimensions"))
                }
                Shard::Samples { y, .. } if y.iter().any(|&c| c >= w0.rows()) => {
                    return Err(Error::invalid("label outside the class range"))
                }
                _ => {}
            }
        }
        Ok(Self {
            kind,
            w0,
            shards,
            partition: None,
        })
    }

    pub fn kind(&self) -> TaskKind {
        self.kind
    }

    /// `(d_out, d_in)`.
    pub fn dims(&self) -> (usize, usize) {
        self.w0.shape()
    }

    pub fn w0(&self) -> &Matrix<f64> {
        &self.w0
    }

    pub fn n_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, client: usize) -> &Shard {
        &self.shards[client]
    }

    pub fn partition(&self) -> Option<&DirichletPartition> {
        self.partition.as_ref()
    }

    fn weights(&self, ad: &LoraAdapter<f64>) -> Result<Matrix<f64>> {
        if (ad.d_out(), ad.d_in()) != self.dims() {
            return Err(Error::Shape {
                op: "task",
                left: self.dims(),
                right: (ad.d_out(), ad.d_in()),
            });
        }
        self.w0.add(&ad.semantic_update())
    }

    /// Loss and `∂f/∂W` for one shard, optionally restricted to a batch of
    /// sample indices (ignored for target shards).
    fn loss_and_weight_grad(&self, shard: &Shard, w: &Matrix<f64>, batch: Option<&[usize]>) -> (f64, Matrix<f64>) {
        match shard {
            Shard::Target(t) => {
                let resid = w.sub(t).expect("shapes checked");
                let loss = resid.frobenius_norm().powi(2);
                (loss, resid.scale(2.0))
            }
            Shard::Samples { x, y } => {
                let all: Vec<usize>;
                let idx = match batch {
                    Some(b) => b,
                    None => {
                        all = (0..y.len()).collect();
                        &all
                    }
                };
                cross_entropy(w, x, y, idx)
            }
        }
    }

    /// Loss and factor gradients on `client`'s shard.
    pub fn client_loss_grad(&self, client: usize, ad: &LoraAdapter<f64>, batch: Option<&[usize]>) -> Result<LossGrad> {
        let w = self.weights(ad)?;
        let (loss, g) = self.loss_and_weight_grad(&self.shards[client], &w, batch);
        Ok(LossGrad {
            loss,
            grad_b: g.matmul_t(ad.a())?,
            grad_a: ad.b().t_matmul(&g)?,
        })
    }

    pub fn client_loss(&self, client: usize, ad: &LoraAdapter<f64>) -> Result<f64> {
        let w = self.weights(ad)?;
        Ok(self.loss_and_weight_grad(&self.shards[client], &w, None).0)
    }

    /// Loss on the union of all shards: the mean client loss for target
    /// tasks, the mean per-sample cross-entropy for sample tasks.
    pub fn global_loss(&self, ad: &LoraAdapter<f64>) -> Result<f64> {
        let w = self.weights(ad)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for s in &self.shards {
            let (l, _) = self.loss_and_weight_grad(s, &w, None);
            match s {
                Shard::Target(_) => {
                    total += l;
                    count += 1;
                }
                Shard::Samples { y, .. } => {
                    total += l * y.len() as f64;
                    count += y.len();
                }
            }
        }
        Ok(total / count as f64)
    }

    /// Classification accuracy over all shards (`None` for target tasks).
    pub fn accuracy(&self, ad: &LoraAdapter<f64>) -> Result<Option<f64>> {
        let w = self.weights(ad)?;
        let mut hit = 0usize;
        let mut total = 0usize;
        for s in &self.shards {
            let Shard::Samples { x, y } = s else {
                return Ok(None);
            };
            let logits = x.matmul_t(&w)?;
            for (i, &label) in y.iter().enumerate() {
                let row = logits.row(i);
                let pred = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .expect("at least one class");
                hit += (pred == label) as usize;
                total += 1;
            }
        }
        Ok(Some(hit as f64 / total.max(1) as f64))
    }
}

/// Mean softmax cross-entropy over `idx` and its gradient in `W`.
fn cross_entropy(w: &Matrix<f64>, x: &Matrix<f64>, y: &[usize], idx: &[usize]) -> (f64, Matrix<f64>) {
    let (c, d) = w.shape();
    let mut grad = Matrix::zeros(c, d);
    let mut loss = 0.0;
    let mut probs = vec![0.0; c];
    for &i in idx {
        let xi = x.row(i);
        for (k, p) in probs.iter_mut().enumerate() {
            *p = w.row(k).iter().zip(xi).map(|(a, b)| a * b).sum();
        }
        let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            z += *p;
        }
        // −log softmax(label) = log Σ exp(logits) − logit(label)
        loss += z.ln() - probs[y[i]].ln();
        for (k, p) in probs.iter().enumerate() {
            let coeff = p / z - if k == y[i] { 1.0 } else { 0.0 };
            for (j, &xv) in xi.iter().enumerate() {
                let g = grad.get(k, j) + coeff * xv;
                grad.set(k, j, g);
            }
        }
    }
    let n = idx.len().max(1) as f64;
    (loss / n, grad.scale(1.0 / n))
}

/// Scalar toy: client `i` minimizes `(B·A − targets[i])²` with `B, A ∈ ℝ`.
pub fn scalar_toy_task(targets: &[f64]) -> Result<Task> {
    if targets.is_empty() {
        return Err(Error::invalid("scalar toy needs at least one target"));
    }
    let shards = targets
        .iter()
        .map(|&t| Matrix::from_vec(1, 1, vec![t]).map(Shard::Target))
        .collect::<Result<Vec<_>>>()?;
    Task::new(TaskKind::ScalarToy, Matrix::zeros(1, 1), shards)
}

/// Default scalar-toy targets; their mean, 1.0, is the global optimum of `B·A`.
pub const SCALAR_TOY_TARGETS: [f64; 3] = [0.5, 1.0, 1.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub d_out: usize,
    pub d_in: usize,
    pub true_rank: usize,
    pub n_clients: usize,
    /// Frobenius norm of each client's perturbation, relative to the shared
    /// target (which has unit norm).
    pub heterogeneity: f64,
    pub seed: u64,
}

fn random_low_rank(
    d_out: usize,
    d_in: usize,
    rank: usize,
    norm: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Matrix<f64> {
    let u = Matrix::<f64>::random_normal(d_out, rank, 1.0, rng);
    let v = Matrix::<f64>::random_normal(rank, d_in, 1.0, rng);
    let m = u.matmul(&v).expect("conformable");
    let f = m.frobenius_norm();
    m.scale(norm / f)
}

/// Low-rank matrix regression: a shared unit-norm target `ΔW*` of rank
/// `true_rank`, plus a per-client perturbation of the same rank and norm
/// `heterogeneity`. Client loss is `‖B·A − ΔWᵢ*‖_F²`.
pub fn lowrank_regression_task(spec: &RegressionSpec) -> Result<Task> {
    let RegressionSpec {
        d_out,
        d_in,
        true_rank,
        n_clients,
        heterogeneity,
        seed,
    } = *spec;
    if true_rank == 0 || true_rank > d_out.min(d_in) {
        return Err(Error::invalid(format!(
            "true rank {true_rank} must lie in 1..={}",
            d_out.min(d_in)
        )));
    }
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if !(heterogeneity >= 0.0 && heterogeneity.is_finite()) {
        return Err(Error::invalid(format!(
            "heterogeneity must be >= 0, got {heterogeneity}"
        )));
    }
    let mut stream = rng::stream(seed, &[rng::purpose::TASK]);
    let shared = random_low_rank(d_out, d_in, true_rank, 1.0, &mut stream);
    let shards = (0..n_clients)
        .map(|_| {
            let target = if heterogeneity > 0.0 {
                let p = random_low_rank(d_out, d_in, true_rank, heterogeneity, &mut stream);
                shared.add(&p).expect("same shape")
            } else {
                shared.clone()
            };
            Shard::Target(target)
        })
        .collect();
    Task::new(TaskKind::LowRankRegression, Matrix::zeros(d_out, d_in), shards)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticSpec {
    pub n_features: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub n_clients: usize,
    pub dirichlet_alpha: f64,
    /// Distance of each class mean from the origin, in noise standard
    /// deviations.
    pub separation: f64,
    pub seed: u64,
}

/// Centralized (single-shard) logistic classification on Gaussian clusters.
pub fn logistic_task(n_features: usize, n_classes: usize, n_samples: usize, seed: u64) -> Result<Task> {
    logistic_task_partitioned(&LogisticSpec {
        n_features,
        n_classes,
        n_samples,
        n_clients: 1,
        dirichlet_alpha: 1.0,
        separation: 4.0,
        seed,
    })
}

/// Logistic classification with the samples split across clients by a
/// per-class Dirichlet partition.
pub fn logistic_task_partitioned(spec: &LogisticSpec) -> Result<Task> {
    let data = gaussian_clusters(
        spec.n_features,
        spec.n_classes,
        spec.n_samples,
        spec.separation,
        spec.seed,
    )?;
    let partition = dirichlet_partition(&data.y, spec.n_clients, spec.dirichlet_alpha, spec.seed)?;
    Task::from_partitioned(&data, partition)
}

impl Task {
    /// Sample task from a dataset and a partition of its rows.
    pub fn from_partitioned(data: &Dataset, partition: DirichletPartition) -> Result<Self> {
        let shards = partition
            .shards
            .iter()
            .map(|rows| {
                let (x, y) = data.select(rows);
                Shard::Samples { x, y }
            })
            .collect();
        let mut task = Task::new(
            TaskKind::LogisticClassification,
            Matrix::zeros(data.n_classes, data.x.cols()),
            shards,
        )?;
        task.partition = Some(partition);
        Ok(task)
    }

    /// Writes a sample task as CSV: `x0,…,x{d-1},label,client_id`.
    pub fn dump_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        dataset::dump_csv(self, path.as_ref())
    }

    /// Reads a CSV written by [`Task::dump_csv`].
    pub fn load_csv(path: impl AsRef<std::path::Path>, n_classes: usize) -> Result<Self> {
        dataset::load_csv(path.as_ref(), n_classes)
    }
}
