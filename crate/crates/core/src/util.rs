//! Shared numeric helpers: seeded RNG streams, normal distribution functions,
//! chi-squared tails, and a Kolmogorov-Smirnov uniformity test.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic child generator for (seed, stream). Streams are independent,
/// so parallel consumers (chains, QMC shifts) never share state.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const LN_2PI: f64 = 1.8378770664093453;

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile. Input clamped away from {0, 1}.
pub fn phi_inv(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Standard normal density.
pub fn dnorm(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Upper tail of the chi-squared distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(df / 2.0, x / 2.0)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n-1 denominator).
pub fn sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Sample covariance (n-1 denominator) of two equal-length slices.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let ss = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>();
    ss / (xs.len() - 1) as f64
}

/// Sample skewness g1 and excess kurtosis g2.
pub fn skew_kurtosis(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 4 {
        return (0.0, 0.0);
    }
    let m = mean(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return (0.0, 0.0);
    }
    (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

/// One-sample Kolmogorov-Smirnov test against Uniform(0,1).
/// Returns (D, p) with the Stephens small-sample correction for the p-value.
pub fn ks_uniform(ps: &[f64]) -> (f64, f64) {
    let n = ps.len();
    assert!(n > 0, "KS test needs at least one observation");
    let mut sorted = ps.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        let upper = (i + 1) as f64 / nf - u;
        let lower = u - i as f64 / nf;
        d = d.max(upper).max(lower);
    }
    let t = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    (d, kolmogorov_tail(t))
}

/// Q(t) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 t^2).
fn kolmogorov_tail(t: f64) -> f64 {
    if t < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// First `n` primes, for the lattice generating vector.
pub fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut candidate: u64 = 2;
    while out.len() < n {
        if out.iter().all(|&p| candidate % p != 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_matches_known_values() {
        assert!((phi(0.0) - 0.5).abs() < 1e-12);
        assert!((phi(1.959964) - 0.975).abs() < 1e-6);
        assert!((phi_inv(0.975) - 1.959964).abs() < 1e-5);
    }

    #[test]
    fn phi_inv_roundtrip() {
        for &p in &[1e-10, 1e-4, 0.2, 0.5, 0.9, 1.0 - 1e-9] {
            assert!((phi(phi_inv(p)) - p).abs() < 1e-9, "p = {p}");
        }
    }

    #[test]
    fn chi2_sf_df1_equals_two_sided_normal() {
        // Two independent special-function routes; agreement is relative.
        for &z in &[0.5, 1.0, 2.0, 3.0] {
            let lhs = chi2_sf(z * z, 1.0);
            let rhs = 2.0 * (1.0 - phi(z));
            assert!((lhs - rhs).abs() < 1e-10 * rhs, "z = {z}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn ks_detects_shift_and_accepts_uniform_grid() {
        let grid: Vec<f64> = (1..=1000).map(|i| (i as f64 - 0.5) / 1000.0).collect();
        let (_, p) = ks_uniform(&grid);
        assert!(p > 0.99);
        let shifted: Vec<f64> = grid.iter().map(|u| u * u).collect();
        let (_, p) = ks_uniform(&shifted);
        assert!(p < 1e-10);
    }

    #[test]
    fn primes_start_correctly() {
        assert_eq!(primes(8), vec![2, 3, 5, 7, 11, 13, 17, 19]);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        use rand::RngCore;
        let mut a = seeded_stream(42, 0);
        let mut b = seeded_stream(42, 0);
        let mut c = seeded_stream(42, 1);
        assert_eq!(a.next_u64(), b.next_u64());
        assert_ne!(a.next_u64(), c.next_u64());
    }
}
