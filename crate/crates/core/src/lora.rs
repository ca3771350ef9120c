//! Low-rank adapters `ΔW = B·A` and the global model they update.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Real;

/// One of the two adapter factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Factor {
    A,
    B,
}

impl Factor {
    pub fn other(self) -> Self {
        match self {
            Factor::A => Factor::B,
            Factor::B => Factor::A,
        }
    }
}

/// A rank-`r` adapter: `b` is `d_out × r`, `a` is `r × d_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter<T> {
    b: Matrix<T>,
    a: Matrix<T>,
}

impl<T: Real> LoraAdapter<T> {
    pub fn new(b: Matrix<T>, a: Matrix<T>) -> Result<Self> {
        let rank = b.cols();
        if a.rows() != rank {
            return Err(Error::Shape {
                op: "LoraAdapter::new",
                left: b.shape(),
                right: a.shape(),
            });
        }
        if rank == 0 || rank > b.rows().min(a.cols()) {
            return Err(Error::invalid(format!(
                "adapter rank {rank} must lie in 1..={}",
                b.rows().min(a.cols())
            )));
        }
        Ok(Self { b, a })
    }

    pub fn b(&self) -> &Matrix<T> {
        &self.b
    }

    pub fn a(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn into_parts(self) -> (Matrix<T>, Matrix<T>) {
        (self.b, self.a)
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    pub fn d_out(&self) -> usize {
        self.b.rows()
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    /// Number of scalars in both factors, i.e. one adapter's wire size.
    pub fn num_scalars(&self) -> usize {
        self.rank() * (self.d_out() + self.d_in())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.b.shape() == other.b.shape() && self.a.shape() == other.a.shape()
    }

    /// `B·A`.
    pub fn semantic_update(&self) -> Matrix<T> {
        self.b.matmul(&self.a).expect("adapter factors are conformable")
    }

    pub fn cast<U: Real>(&self) -> LoraAdapter<U> {
        LoraAdapter {
            b: self.b.cast(),
            a: self.a.cast(),
        }
    }
}

/// Balances factor norms: `B' = c·B`, `A' = A/c` with `c = sqrt(‖A‖/‖B‖)`,
/// so `‖A'‖ = ‖B'‖ = sqrt(‖A‖·‖B‖)`.
///
/// Diagnostics only; the training loop never rescales.
pub fn gauge_rescale<T: Real>(ad: &LoraAdapter<T>) -> Result<LoraAdapter<T>> {
    let na = ad.a.frobenius_norm();
    let nb = ad.b.frobenius_norm();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::Degenerate(format!(
            "gauge rescaling needs nonzero factors (‖A‖ = {na}, ‖B‖ = {nb})"
        )));
    }
    let c = (na / nb).sqrt();
    if c == T::one() {
        return Ok(ad.clone());
    }
    LoraAdapter::new(ad.b.scale(c), ad.a.scale(T::one() / c))
}

/// Server initialization: `B = 0` and `A ~ N(0, 1/d_in)`, so `ΔW₀ = 0`.
pub fn init_adapter<T: Real>(d_out: usize, d_in: usize, rank: usize, seed: u64) -> Result<LoraAdapter<T>> {
    if rank == 0 || rank > d_out.min(d_in) {
        return Err(Error::invalid(format!(
            "rank {rank} must lie in 1..={} for a {d_out}x{d_in} layer",
            d_out.min(d_in)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Matrix::random_normal(rank, d_in, 1.0 / (d_in as f64).sqrt(), &mut rng);
    LoraAdapter::new(Matrix::zeros(d_out, rank), a)
}

/// Frozen base weights plus the current global adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel<T> {
    w0: Matrix<T>,
    adapter: LoraAdapter<T>,
}

impl<T: Real> GlobalModel<T> {
    pub fn new(w0: Matrix<T>, adapter: LoraAdapter<T>) -> Result<Self> {
        if w0.shape() != (adapter.d_out(), adapter.d_in()) {
            return Err(Error::Shape {
                op: "GlobalModel::new",
                left: w0.shape(),
                right: (adapter.d_out(), adapter.d_in()),
            });
        }
        Ok(Self { w0, adapter })
    }

    pub fn w0(&self) -> &Matrix<T> {
        &self.w0
    }

    pub fn adapter(&self) -> &LoraAdapter<T> {
        &self.adapter
    }

    /// Same base weights, new adapter.
    pub fn with_adapter(&self, adapter: LoraAdapter<T>) -> Result<Self> {
        Self::new(self.w0.clone(), adapter)
    }

    /// `W₀ + B·A`.
    pub fn effective_weights(&self) -> Matrix<T> {
        self.w0
            .add(&self.adapter.semantic_update())
            .expect("shapes checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn scalar(b: f64, a: f64) -> LoraAdapter<f64> {
        LoraAdapter::new(
            Matrix::from_rows(&[vec![b]]).unwrap(),
            Matrix::from_rows(&[vec![a]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn scalar_update() {
        assert_eq!(scalar(2.0, 0.5).semantic_update().get(0, 0), 1.0);
    }

    #[test]
    fn zero_b_gives_zero_update() {
        let ad = init_adapter::<f64>(6, 5, 2, 1).unwrap();
        assert_eq!(ad.semantic_update(), Matrix::zeros(6, 5));
    }

    #[test]
    fn update_matches_explicit_sum_of_outer_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Matrix::<f64>::random_normal(6, 2, 1.0, &mut rng);
        let a = Matrix::<f64>::random_normal(2, 6, 1.0, &mut rng);
        let ad = LoraAdapter::new(b.clone(), a.clone()).unwrap();
        let got = ad.semantic_update();
        for i in 0..6 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..2 {
                    s += b.get(i, k) * a.get(k, j);
                }
                assert_eq!(got.get(i, j), s);
            }
        }
    }

    #[test]
    fn invalid_ranks() {
        assert!(init_adapter::<f64>(3, 3, 4, 0).is_err());
        assert!(init_adapter::<f64>(3, 3, 0, 0).is_err());
        assert!(LoraAdapter::new(Matrix::<f64>::zeros(3, 2), Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let x = init_adapter::<f64>(8, 8, 2, 42).unwrap();
        let y = init_adapter::<f64>(8, 8, 2, 42).unwrap();
        let z = init_adapter::<f64>(8, 8, 2, 43).unwrap();
        assert_eq!(x, y);
        assert_ne!(x.a(), z.a());
    }

    #[test]
    fn gauge_rescale_closed_form() {
        // ‖A‖ = 4, ‖B‖ = 1 ⇒ c = 2, both norms become 2.
        let ad = scalar(1.0, 4.0);
        let g = gauge_rescale(&ad).unwrap();
        assert_eq!(g.b().get(0, 0), 2.0);
        assert_eq!(g.a().get(0, 0), 2.0);
        assert_eq!(g.semantic_update().get(0, 0), 4.0);
    }

    #[test]
    fn gauge_rescale_balanced_is_identity() {
        let ad = scalar(3.0, 3.0);
        assert_eq!(gauge_rescale(&ad).unwrap(), ad);
    }

    #[test]
    fn gauge_rescale_rejects_zero_factor() {
        let ad = init_adapter::<f64>(4, 4, 2, 0).unwrap();
        assert!(matches!(gauge_rescale(&ad), Err(Error::Degenerate(_))));
    }

    #[test]
    fn global_model_weights() {
        let w0 = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let gm = GlobalModel::new(w0, scalar(2.0, 0.5)).unwrap();
        assert_eq!(gm.effective_weights().get(0, 0), 2.0);
        assert!(GlobalModel::new(Matrix::zeros(2, 2), scalar(1.0, 1.0)).is_err());
    }
}
