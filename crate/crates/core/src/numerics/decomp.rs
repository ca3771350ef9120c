use super::{svd, Matrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative smallest-singular-value threshold below which QR input is
/// treated as rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Orthogonal factor `Q` of a square full-rank `a = Q·P`, with column signs
/// chosen so the triangular factor `P` has a nonnegative diagonal.
///
/// Householder reflections; the sign fix makes `Q` unique, which is what the
/// Haar sampler relies on.
pub fn qr_orthonormal<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    if !a.is_square() || a.is_empty() {
        return Err(Error::invalid(format!(
            "qr_orthonormal needs a nonempty square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let s = svd(a)?;
    let (smallest, largest) = (s.smallest(), s.largest());
    if largest == T::zero() || smallest <= T::lit(RANK_TOLERANCE) * largest {
        return Err(Error::RankDeficient {
            smallest: smallest.as_f64(),
            largest: largest.as_f64(),
        });
    }

    let n = a.rows();
    let mut r = a.clone();
    let mut q = Matrix::<T>::identity(n);
    for k in 0..n.saturating_sub(1) {
        let x: Vec<T> = (k..n).map(|i| r.get(i, k)).collect();
        let xnorm = x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        if xnorm == T::zero() {
            continue;
        }
        let alpha = if x[0] >= T::zero() { -xnorm } else { xnorm };
        let mut v = x;
        v[0] -= alpha;
        let vnorm = v.iter().fold(T::zero(), |acc, &e| acc + e * e).sqrt();
        if vnorm == T::zero() {
            continue;
        }
        for e in v.iter_mut() {
            *e /= vnorm;
        }
        // r ← H r on rows k..n
        for j in 0..n {
            let dot = (k..n).fold(T::zero(), |acc, i| acc + v[i - k] * r.get(i, j));
            for i in k..n {
                r.set(i, j, r.get(i, j) - T::lit(2.0) * v[i - k] * dot);
            }
        }
        // q ← q H on columns k..n
        for i in 0..n {
            let dot = (k..n).fold(T::zero(), |acc, j| acc + q.get(i, j) * v[j - k]);
            for j in k..n {
                q.set(i, j, q.get(i, j) - T::lit(2.0) * dot * v[j - k]);
            }
        }
    }
    for k in 0..n {
        if r.get(k, k) < T::zero() {
            for i in 0..n {
                q.set(i, k, -q.get(i, k));
            }
        }
    }
    Ok(q)
}

/// Determinant by LU with partial pivoting.
pub fn determinant<T: Real>(a: &Matrix<T>) -> Result<T> {
    if !a.is_square() {
        return Err(Error::Shape {
            op: "determinant",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut det = T::one();
    for k in 0..n {
        let mut piv = k;
        let mut best = lu.get(k, k).abs();
        for i in k + 1..n {
            let v = lu.get(i, k).abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == T::zero() {
            return Ok(T::zero());
        }
        if piv != k {
            for j in 0..n {
                let tmp = lu.get(k, j);
                lu.set(k, j, lu.get(piv, j));
                lu.set(piv, j, tmp);
            }
            det = -det;
        }
        let d = lu.get(k, k);
        det *= d;
        for i in k + 1..n {
            let f = lu.get(i, k) / d;
            for j in k + 1..n {
                lu.set(i, j, lu.get(i, j) - f * lu.get(k, j));
            }
        }
    }
    Ok(det)
}
