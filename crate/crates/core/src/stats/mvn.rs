//! Multivariate normal rectangle probabilities.
//!
//! Computes Pr[-z <= X_k <= z for all k] for X ~ N(0, R) with R a
//! correlation matrix. Separation-of-variables reduces the box integral to an
//! integral over the unit cube, evaluated with a shifted rank-1 lattice rule.

use crate::util::{phi, phi_inv, primes, seeded_stream};
use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

/// Default lattice size per shift.
pub const DEFAULT_MVN_POINTS: usize = 1 << 15;
/// Default number of random shifts.
pub const DEFAULT_MVN_SHIFTS: usize = 12;

#[derive(Debug, Error)]
pub enum MvnError {
    #[error("correlation matrix is not positive semi-definite (pivot {pivot} at row {row})")]
    NotPsd { row: usize, pivot: f64 },
    #[error("correlation matrix must be square with unit diagonal")]
    BadShape,
}

/// Rectangle probability with an internal accuracy estimate.
#[derive(Debug, Clone, Copy)]
pub struct MvnEstimate {
    pub value: f64,
    /// Roughly 3.5 standard errors across lattice shifts.
    pub error: f64,
    /// Set when the input needed an eigenvalue clip to become PSD.
    pub repaired: bool,
}

/// Pr[|X_k| <= z for all k], X ~ N(0, R).
///
/// A matrix that fails the PSD check is repaired by clipping negative
/// eigenvalues at zero and rescaling the diagonal back to one; the repair is
/// flagged on the estimate. `m = 1` is handled in closed form.
pub fn mvn_rectangle(
    r: &DMatrix<f64>,
    z: f64,
    n_points: usize,
    shifts: usize,
    seed: u64,
) -> Result<MvnEstimate, MvnError> {
    let m = r.nrows();
    if m == 0 || r.ncols() != m {
        return Err(MvnError::BadShape);
    }
    for i in 0..m {
        if (r[(i, i)] - 1.0).abs() > 1e-8 {
            return Err(MvnError::BadShape);
        }
    }
    if z <= 0.0 {
        return Ok(MvnEstimate { value: 0.0, error: 0.0, repaired: false });
    }
    if m == 1 {
        return Ok(MvnEstimate { value: 2.0 * phi(z) - 1.0, error: 0.0, repaired: false });
    }

    let (l, repaired) = match semidefinite_cholesky(r) {
        Ok(l) => (l, false),
        Err(_) => {
            let fixed = clip_to_correlation(r)?;
            let l = semidefinite_cholesky(&fixed)
                .map_err(|(row, pivot)| MvnError::NotPsd { row, pivot })?;
            (l, true)
        }
    };

    // Richtmyer generators: fractional parts of square roots of primes.
    let gens: Vec<f64> = primes(m - 1).iter().map(|&p| (p as f64).sqrt().fract()).collect();
    let mut rng = seeded_stream(seed, 0);
    let mut per_shift = Vec::with_capacity(shifts);
    let mut offsets = vec![0.0_f64; m - 1];
    for _ in 0..shifts {
        for o in offsets.iter_mut() {
            *o = rng.gen::<f64>();
        }
        let mut acc = 0.0;
        for j in 1..=n_points {
            let jf = j as f64;
            let f = integrand(&l, z, |i| {
                // Baker fold keeps the periodised integrand continuous.
                let t = (jf * gens[i] + offsets[i]).fract();
                (2.0 * t - 1.0).abs()
            });
            acc += (f - acc) / jf;
        }
        per_shift.push(acc);
    }
    let mean = per_shift.iter().sum::<f64>() / shifts as f64;
    let var = per_shift.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (shifts as f64 - 1.0).max(1.0);
    let error = 3.5 * (var / shifts as f64).sqrt();
    Ok(MvnEstimate { value: mean.clamp(0.0, 1.0), error, repaired })
}

/// One integrand evaluation; `w(i)` supplies the i-th cube coordinate.
fn integrand(l: &DMatrix<f64>, z: f64, w: impl Fn(usize) -> f64) -> f64 {
    let m = l.nrows();
    let mut y = vec![0.0_f64; m];
    let mut f = 1.0;
    for i in 0..m {
        let mut t = 0.0;
        for k in 0..i {
            t += l[(i, k)] * y[k];
        }
        let lii = l[(i, i)];
        let (d, e) = if lii > 0.0 {
            (phi((-z - t) / lii), phi((z - t) / lii))
        } else if t.abs() <= z {
            (0.0, 1.0)
        } else {
            (0.0, 0.0)
        };
        let width = e - d;
        if width <= 0.0 {
            return 0.0;
        }
        f *= width;
        if i + 1 < m {
            y[i] = if lii > 0.0 {
                phi_inv((d + w(i) * width).clamp(1e-300, 1.0 - 1e-16))
            } else {
                0.0
            };
        }
    }
    f
}

/// Cholesky factor tolerating exact rank deficiency. A pivot in
/// [-1e-8, 1e-10] zeroes its row; anything more negative is rejected.
fn semidefinite_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>, (usize, f64)> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut s = a[(i, i)];
        for k in 0..i {
            s -= l[(i, k)] * l[(i, k)];
        }
        if s > 1e-10 {
            let root = s.sqrt();
            l[(i, i)] = root;
            for j in (i + 1)..n {
                let mut v = a[(j, i)];
                for k in 0..i {
                    v -= l[(j, k)] * l[(i, k)];
                }
                l[(j, i)] = v / root;
            }
        } else if s > -1e-8 {
            // Degenerate direction: leave the row zero.
        } else {
            return Err((i, s));
        }
    }
    Ok(l)
}

/// Clip negative eigenvalues at zero and renormalise to unit diagonal.
fn clip_to_correlation(r: &DMatrix<f64>) -> Result<DMatrix<f64>, MvnError> {
    let n = r.nrows();
    let mut eig = r.clone().symmetric_eigen();
    for l in eig.eigenvalues.iter_mut() {
        if *l < 0.0 {
            *l = 0.0;
        }
    }
    let rebuilt = eig.recompose();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let di = rebuilt[(i, i)];
        if di <= 0.0 {
            return Err(MvnError::NotPsd { row: i, pivot: di });
        }
        for j in 0..n {
            let dj = rebuilt[(j, j)];
            out[(i, j)] = rebuilt[(i, j)] / (di * dj).sqrt();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn equicorrelation(m: usize, rho: f64) -> DMatrix<f64> {
        DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { rho })
    }

    /// 1-D quadrature oracle for the equicorrelated case: conditional on the
    /// shared factor W, coordinates are independent.
    fn equicorrelated_oracle(m: usize, rho: f64, z: f64) -> f64 {
        let a = rho.sqrt();
        let b = (1.0 - rho).sqrt();
        let n = 4000;
        let (lo, hi) = (-8.5_f64, 8.5_f64);
        let h = (hi - lo) / n as f64;
        let g = |w: f64| {
            let p = phi((z - a * w) / b) - phi((-z - a * w) / b);
            crate::util::dnorm(w) * p.powi(m as i32)
        };
        let mut s = g(lo) + g(hi);
        for k in 1..n {
            let x = lo + k as f64 * h;
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * g(x);
        }
        s * h / 3.0
    }

    #[test]
    fn univariate_is_exact() {
        let r = DMatrix::identity(1, 1);
        let est = mvn_rectangle(&r, 1.959964, 64, 2, 1).unwrap();
        assert!((est.value - 0.95).abs() < 1e-4);
    }

    #[test]
    fn independence_factorises() {
        let r = DMatrix::identity(5, 5);
        let est = mvn_rectangle(&r, 2.0, DEFAULT_MVN_POINTS, DEFAULT_MVN_SHIFTS, 7).unwrap();
        let expect = (2.0 * phi(2.0) - 1.0).powi(5);
        assert!((est.value - expect).abs() < 1e-3, "got {} want {}", est.value, expect);
        assert!(!est.repaired);
    }

    #[test]
    fn equicorrelated_matches_quadrature() {
        for &(m, rho, z) in &[(3usize, 0.5, 2.0), (4, 0.3, 1.5), (6, 0.7, 2.5)] {
            let r = equicorrelation(m, rho);
            let est = mvn_rectangle(&r, z, DEFAULT_MVN_POINTS, DEFAULT_MVN_SHIFTS, 11).unwrap();
            let oracle = equicorrelated_oracle(m, rho, z);
            assert!(
                (est.value - oracle).abs() < 1e-3,
                "m={m} rho={rho} z={z}: got {} want {}",
                est.value,
                oracle
            );
        }
    }

    #[test]
    fn monotone_in_z_and_limits() {
        let r = equicorrelation(4, 0.4);
        let mut last = -1.0;
        for iz in 0..=12 {
            let z = iz as f64 * 0.5;
            let est = mvn_rectangle(&r, z, 1 << 12, 8, 3).unwrap();
            assert!(est.value >= last - 2e-4, "not monotone at z={z}");
            last = est.value;
        }
        assert!((mvn_rectangle(&r, 0.0, 64, 2, 3).unwrap().value).abs() < 1e-12);
        assert!(mvn_rectangle(&r, 9.0, 1 << 12, 8, 3).unwrap().value > 0.999_999);
    }

    #[test]
    fn rank_deficient_duplicate_coordinate() {
        // Duplicated coordinate: probability equals the bivariate case.
        let r = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 1.0, 0.3, 1.0, 1.0, 0.3, 0.3, 0.3, 1.0],
        );
        let est = mvn_rectangle(&r, 2.0, DEFAULT_MVN_POINTS, DEFAULT_MVN_SHIFTS, 5).unwrap();
        let two = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let pair = mvn_rectangle(&two, 2.0, DEFAULT_MVN_POINTS, DEFAULT_MVN_SHIFTS, 5).unwrap();
        assert!((est.value - pair.value).abs() < 2e-3);
    }

    #[test]
    fn indefinite_matrix_is_repaired_and_flagged() {
        // Off-diagonals make the smallest eigenvalue negative (1 - 2*0.6 < 0).
        let r = equicorrelation(3, -0.6);
        let est = mvn_rectangle(&r, 2.0, 1 << 13, 8, 9).unwrap();
        assert!(est.repaired);
        assert!(est.value > 0.0 && est.value < 1.0);
    }

    #[test]
    fn error_estimate_brackets_truth() {
        let r = equicorrelation(5, 0.5);
        let est = mvn_rectangle(&r, 2.0, DEFAULT_MVN_POINTS, DEFAULT_MVN_SHIFTS, 21).unwrap();
        let oracle = equicorrelated_oracle(5, 0.5, 2.0);
        assert!((est.value - oracle).abs() < est.error.max(5e-4));
        assert!(est.error < 1e-3);
    }
}
