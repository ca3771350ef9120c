use rand::Rng;

use super::Rotation;
use crate::error::{Error, Result};
use crate::numerics::{determinant, qr_orthonormal, Matrix};
use crate::rng;
use crate::scalar::Real;

const MAX_ATTEMPTS: usize = 5;

/// Haar-uniform draw from SO(rank): QR of a standard Gaussian matrix with the
/// triangular diagonal made nonnegative, then one column flipped if the
/// determinant is negative.
pub fn sample_haar_rotation<T: Real, R: Rng + ?Sized>(rank: usize, rng: &mut R) -> Result<Rotation<T>> {
    if rank == 0 {
        return Err(Error::invalid("rotation rank must be at least 1"));
    }
    for _ in 0..MAX_ATTEMPTS {
        let z = Matrix::<T>::random_normal(rank, rank, 1.0, rng);
        let mut q = match qr_orthonormal(&z) {
            Ok(q) => q,
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        };
        if determinant(&q)? < T::zero() {
            let last = rank - 1;
            for i in 0..rank {
                q.set(i, last, -q.get(i, last));
            }
        }
        return Rotation::new(q);
    }
    Err(Error::Degenerate(format!(
        "{MAX_ATTEMPTS} consecutive rank-deficient Gaussian draws"
    )))
}

pub fn haar_random_rotation<T: Real>(rank: usize, seed: u64) -> Result<Rotation<T>> {
    sample_haar_rotation(rank, &mut rng::stream(seed, &[rng::purpose::HAAR]))
}
