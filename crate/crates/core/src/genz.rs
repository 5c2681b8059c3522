//! Genz's sequential transformation of a multivariate normal rectangle
//! probability to an integral over the unit cube, evaluated with a
//! randomly shifted rank-1 lattice (Richtmyer generators, tent-periodized,
//! antithetic pairs).

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mvn::{IntegratorConfig, ProbEstimate};
use crate::normal;

/// Variables reordered and factored for the sequential transform.
#[derive(Clone, Debug)]
pub(crate) struct Prepared {
    lower: Vec<f64>,
    upper: Vec<f64>,
    // lower-triangular Cholesky factor of the permuted covariance, row-major
    chol: Vec<f64>,
    n: usize,
}

impl Prepared {
    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.chol[i * self.n + j]
    }
}

/// Cholesky factorization with Genz–Bretz variable prioritization: at step
/// `i` the remaining variable with the smallest conditional interval
/// probability (given the truncated means of the variables already placed)
/// goes next.
pub(crate) fn prepare(cov: &DMatrix<f64>, lower: &[f64], upper: &[f64]) -> Result<Prepared> {
    let n = lower.len();
    let mut c = cov.clone();
    let mut a = lower.to_vec();
    let mut b = upper.to_vec();
    let mut l = vec![0.0; n * n];
    let mut y = vec![0.0; n];

    for i in 0..n {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        let mut best_s = 0.0;
        for j in i..n {
            let s = c[(j, j)] - (0..i).map(|k| l[j * n + k] * l[j * n + k]).sum::<f64>();
            if s <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    smallest_eigenvalue: Some(crate::linalg::smallest_eigenvalue(cov)),
                });
            }
            let sd = s.sqrt();
            let shift: f64 = (0..i).map(|k| l[j * n + k] * y[k]).sum();
            let p = normal::interval((a[j] - shift) / sd, (b[j] - shift) / sd);
            if p < best_p {
                best = j;
                best_p = p;
                best_s = s;
            }
        }
        if best != i {
            c.swap_rows(i, best);
            c.swap_columns(i, best);
            a.swap(i, best);
            b.swap(i, best);
            for k in 0..i {
                l.swap(i * n + k, best * n + k);
            }
        }
        let diag = best_s.sqrt();
        l[i * n + i] = diag;
        for j in i + 1..n {
            let dot: f64 = (0..i).map(|k| l[j * n + k] * l[i * n + k]).sum();
            l[j * n + i] = (c[(j, i)] - dot) / diag;
        }
        let shift: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        let (lo, hi) = ((a[i] - shift) / diag, (b[i] - shift) / diag);
        y[i] = truncated_mean(lo, hi);
    }
    Ok(Prepared {
        lower: a,
        upper: b,
        chol: l,
        n,
    })
}

/// Mean of a standard normal truncated to `[lo, hi]`.
fn truncated_mean(lo: f64, hi: f64) -> f64 {
    let p = normal::interval(lo, hi);
    if p > 1e-300 {
        let m = (normal::pdf(lo) - normal::pdf(hi)) / p;
        if m.is_finite() {
            return m.clamp(lo, hi);
        }
    }
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => 0.0,
    }
}

/// Integrand of the transformed problem at `w ∈ (0,1)^{n-1}`.
fn integrand(p: &Prepared, w: &[f64], y: &mut [f64]) -> f64 {
    let n = p.n;
    let d0 = p.l(0, 0);
    let (mut lo, mut hi) = (p.lower[0] / d0, p.upper[0] / d0);
    let mut f = normal::interval(lo, hi);
    for i in 1..n {
        if f == 0.0 {
            return 0.0;
        }
        // draw y_{i-1} from the truncated normal by inversion, on the
        // upper tail when that keeps precision
        y[i - 1] = if lo > 0.0 {
            let (s_lo, s_hi) = (normal::sf(lo), normal::sf(hi));
            clamp_open(normal::inv_sf(s_lo - w[i - 1] * (s_lo - s_hi)), lo, hi)
        } else {
            let (c_lo, c_hi) = (normal::cdf(lo), normal::cdf(hi));
            clamp_open(normal::inv_cdf(c_lo + w[i - 1] * (c_hi - c_lo)), lo, hi)
        };
        let shift: f64 = (0..i).map(|k| p.l(i, k) * y[k]).sum();
        let diag = p.l(i, i);
        lo = (p.lower[i] - shift) / diag;
        hi = (p.upper[i] - shift) / diag;
        f *= normal::interval(lo, hi);
    }
    f
}

/// Keeps an inverted draw finite and inside `[lo, hi]`; inversion saturates
/// to ±∞ only when `u` rounds to 0 or 1, where |z| > 38 anyway.
#[inline]
fn clamp_open(x: f64, lo: f64, hi: f64) -> f64 {
    x.clamp(-40.0, 40.0).clamp(lo, hi)
}

/// First `count` primes.
fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut k = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= k).all(|&p| k % p != 0) {
            out.push(k);
        }
        k += 1;
    }
    out
}

/// Randomized lattice QMC estimate of the prepared integral.
pub(crate) fn integrate(p: &Prepared, cfg: &IntegratorConfig) -> ProbEstimate {
    let dim = p.n - 1;
    let generators: Vec<f64> = primes(dim).iter().map(|&q| (q as f64).sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_shifts = cfg.n_shifts.max(2);
    let shifts: Vec<Vec<f64>> = (0..n_shifts)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut sums = vec![0.0; n_shifts];
    let mut points: u64 = 0;
    let mut target = cfg.initial_points.max(1);
    let mut w = vec![0.0; dim];
    let mut w_anti = vec![0.0; dim];
    let mut y = vec![0.0; p.n];

    loop {
        for (shift, sum) in shifts.iter().zip(sums.iter_mut()) {
            for k in points + 1..=target {
                let kf = k as f64;
                for j in 0..dim {
                    let x = (kf * generators[j] + shift[j]).fract();
                    let t = 1.0 - (2.0 * x - 1.0).abs();
                    w[j] = t;
                    w_anti[j] = 1.0 - t;
                }
                *sum += 0.5 * (integrand(p, &w, &mut y) + integrand(p, &w_anti, &mut y));
            }
        }
        points = target;

        let means: Vec<f64> = sums.iter().map(|s| s / points as f64).collect();
        let value = means.iter().sum::<f64>() / n_shifts as f64;
        let var = means.iter().map(|m| (m - value).powi(2)).sum::<f64>()
            / (n_shifts as f64 * (n_shifts as f64 - 1.0));
        let err = 3.0 * var.sqrt();
        let converged = err <= cfg.abs_tol;
        if converged || points >= cfg.max_points {
            return ProbEstimate {
                value: value.clamp(0.0, 1.0),
                err_estimate: err,
                points_used: points * n_shifts as u64 * 2,
                converged,
            };
        }
        target = (points * 2).min(cfg.max_points);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_primes() {
        assert_eq!(primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn prioritization_puts_tightest_interval_first() {
        let cov = DMatrix::identity(3, 3);
        let p = prepare(&cov, &[-1.0, -0.1, -5.0], &[1.0, 0.1, 5.0]).unwrap();
        assert_eq!(p.lower, vec![-0.1, -1.0, -5.0]);
    }

    #[test]
    fn prepared_factor_reproduces_permuted_covariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.6, 0.3, 0.6, 1.0, 0.2, 0.3, 0.2, 0.5]);
        let lower = [-1.0, 0.0, -0.2];
        let upper = [2.0, 0.3, 0.2];
        let p = prepare(&cov, &lower, &upper).unwrap();
        let l = DMatrix::from_row_slice(3, 3, &p.chol);
        let rebuilt = &l * l.transpose();
        // map permuted variables back by their (unique) bounds
        let perm: Vec<usize> = p
            .lower
            .iter()
            .map(|v| lower.iter().position(|x| x == v).unwrap())
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                assert!((rebuilt[(i, j)] - cov[(perm[i], perm[j])]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn truncated_mean_limits() {
        assert_eq!(truncated_mean(f64::NEG_INFINITY, f64::INFINITY), 0.0);
        let m = truncated_mean(0.0, f64::INFINITY);
        assert!((m - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
        // far tail where the interval mass underflows
        assert_eq!(truncated_mean(50.0, 51.0), 50.5);
    }
}
