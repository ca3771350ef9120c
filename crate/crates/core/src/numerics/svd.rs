//! One-sided (Hestenes) Jacobi SVD for small dense matrices.
//!
//! Every sweep visits column pairs in a fixed order and the arithmetic is
//! strictly sequential, so identical input bits give identical output bits.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Convergence threshold on the cosine between column pairs.
pub const JACOBI_TOLERANCE: f64 = 1e-14;
/// Hard cap on full sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;

/// Thin SVD `a = u · diag(sigma) · vt` with `k = min(rows, cols)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdResult<T> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub vt: Matrix<T>,
}

impl<T: Real> SvdResult<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let us = Matrix::from_fn(self.u.rows(), self.u.cols(), |i, j| self.u.get(i, j) * self.sigma[j]);
        us.matmul(&self.vt).expect("svd factors are conformable")
    }

    pub fn smallest(&self) -> T {
        self.sigma.last().copied().unwrap_or_else(T::zero)
    }

    pub fn largest(&self) -> T {
        self.sigma.first().copied().unwrap_or_else(T::zero)
    }
}

/// Computes the thin SVD of `a`.
///
/// Singular values are sorted nonincreasing. Each left singular vector is
/// sign-canonicalized so its largest-magnitude entry (first on ties) is
/// nonnegative, with the matching row of `vt` flipped alongside.
pub fn svd<T: Real>(a: &Matrix<T>) -> Result<SvdResult<T>> {
    if a.is_empty() {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    if !a.is_finite() {
        return Err(Error::invalid("svd input has non-finite entries"));
    }
    let mut out = if a.rows() >= a.cols() {
        let (u, sigma, v) = jacobi_tall(a)?;
        SvdResult {
            u,
            sigma,
            vt: v.transpose(),
        }
    } else {
        // aᵀ = U Σ Vᵀ  ⇒  a = V Σ Uᵀ
        let (u, sigma, v) = jacobi_tall(&a.transpose())?;
        SvdResult {
            u: v,
            sigma,
            vt: u.transpose(),
        }
    };
    canonicalize_signs(&mut out);
    Ok(out)
}

/// Returns `(u, sigma, v)` for `rows >= cols`, with `u` of shape `rows × cols`.
fn jacobi_tall<T: Real>(a: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>, Matrix<T>)> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    let tol = T::tol(JACOBI_TOLERANCE);

    // Column-major working copies.
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut alpha = T::zero();
                    let mut beta = T::zero();
                    let mut gamma = T::zero();
                    for (&x, &y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + zeta.hypot(T::one()));
                let c = T::one() / t.hypot(T::one());
                let s = c * t;
                rotate_pair(&mut cols, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        let norms: Vec<f64> = cols.iter().map(|c| norm(c).as_f64()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::NoConvergence {
            sweeps,
            rows: m,
            cols: n,
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }

    let norms: Vec<T> = cols.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable: equal singular values keep column order.
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).expect("finite norms"));

    let sigma_max = norms[order[0]];
    let zero_threshold = sigma_max * T::epsilon() * T::lit(m as f64);

    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        if s > zero_threshold && s > T::zero() {
            u_cols.push(cols[j].iter().map(|&x| x / s).collect());
        } else {
            u_cols.push(vec![T::zero(); m]);
            pending.push(slot);
        }
    }
    for slot in pending {
        u_cols[slot] = complete_basis(&u_cols, slot, m);
    }

    let sigma: Vec<T> = order.iter().map(|&j| norms[j]).collect();
    let u = Matrix::from_fn(m, n, |i, k| u_cols[k][i]);
    let v = Matrix::from_fn(n, n, |i, k| v[order[k]][i]);
    Ok((u, sigma, v))
}

fn rotate_pair<T: Real>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (left, right) = cols.split_at_mut(q);
    let (cp, cq) = (&mut left[p], &mut right[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (up, uq) = (*x, *y);
        *x = c * up - s * uq;
        *y = s * up + c * uq;
    }
}

fn norm<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Picks the standard basis vector with the largest residual against the
/// already-filled columns and orthonormalizes it (two Gram-Schmidt passes).
fn complete_basis<T: Real>(u_cols: &[Vec<T>], slot: usize, m: usize) -> Vec<T> {
    let filled: Vec<&Vec<T>> = u_cols
        .iter()
        .enumerate()
        .filter(|(k, c)| *k != slot && c.iter().any(|x| *x != T::zero()))
        .map(|(_, c)| c)
        .collect();
    let mut best: Option<(T, Vec<T>)> = None;
    for e in 0..m {
        let mut cand = vec![T::zero(); m];
        cand[e] = T::one();
        for _ in 0..2 {
            for f in &filled {
                let proj = f.iter().zip(&cand).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                for (c, &fv) in cand.iter_mut().zip(f.iter()) {
                    *c -= proj * fv;
                }
            }
        }
        let nrm = norm(&cand);
        if best.as_ref().is_none_or(|(b, _)| nrm > *b) {
            best = Some((nrm, cand));
        }
    }
    let (nrm, cand) = best.expect("m >= 1");
    cand.into_iter().map(|x| x / nrm).collect()
}

fn canonicalize_signs<T: Real>(svd: &mut SvdResult<T>) {
    let (m, k) = svd.u.shape();
    let n = svd.vt.cols();
    for j in 0..k {
        let mut arg = 0;
        let mut best = T::zero();
        for i in 0..m {
            let v = svd.u.get(i, j).abs();
            if v > best {
                best = v;
                arg = i;
            }
        }
        if svd.u.get(arg, j) < T::zero() {
            for i in 0..m {
                svd.u.set(i, j, -svd.u.get(i, j));
            }
            for c in 0..n {
                svd.vt.set(j, c, -svd.vt.get(j, c));
            }
        }
    }
}
