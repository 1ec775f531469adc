//! Kernel density estimation and single-contrast conflict p-values.

use super::StatsError;
use crate::util::{mean, phi, sd};
use serde::{Deserialize, Serialize};

/// How a single-contrast conflict p-value is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PvalueMethod {
    /// Density ordering under a Gaussian kernel estimate.
    Kde,
    /// Normal approximation from the first two moments.
    Normal,
}

const GRID: usize = 4096;

/// Gaussian kernel density estimate on a regular grid.
///
/// Draws are linearly binned and the kernel applied by discrete convolution,
/// so fitting is O(n + grid * span). The grid always covers zero.
#[derive(Debug, Clone)]
pub struct Kde {
    pub x0: f64,
    pub step: f64,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    pub fn fit(draws: &[f64]) -> Result<Kde, StatsError> {
        let n = draws.len();
        let s = sd(draws);
        if !(s > 0.0) || !s.is_finite() {
            return Err(StatsError::DegenerateDistribution {
                what: "kernel density input has zero spread".into(),
            });
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
        let h = 0.9 * spread * (n as f64).powf(-0.2);

        let lo = sorted[0].min(0.0) - 4.0 * h;
        let hi = sorted[n - 1].max(0.0) + 4.0 * h;
        let step = (hi - lo) / (GRID - 1) as f64;

        let mut counts = vec![0.0_f64; GRID];
        for &x in draws {
            let pos = (x - lo) / step;
            let i = (pos.floor() as usize).min(GRID - 2);
            let frac = pos - i as f64;
            counts[i] += 1.0 - frac;
            counts[i + 1] += frac;
        }

        let span = ((5.0 * h / step).ceil() as usize).min(GRID - 1);
        let kernel: Vec<f64> = (0..=span)
            .map(|k| crate::util::dnorm(k as f64 * step / h))
            .collect();
        let scale = 1.0 / (n as f64 * h);
        let mut density = vec![0.0_f64; GRID];
        for (j, &c) in counts.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let k0 = span.min(j);
            let k1 = span.min(GRID - 1 - j);
            for k in 0..=k0 {
                density[j - k] += c * kernel[k];
            }
            for k in 1..=k1 {
                density[j + k] += c * kernel[k];
            }
        }
        for d in density.iter_mut() {
            *d *= scale;
        }
        Ok(Kde { x0: lo, step, density, bandwidth: h })
    }

    /// Linear interpolation on the grid; zero outside it.
    pub fn eval(&self, x: f64) -> f64 {
        let pos = (x - self.x0) / self.step;
        if pos < 0.0 || pos > (GRID - 1) as f64 {
            return 0.0;
        }
        let i = (pos.floor() as usize).min(GRID - 2);
        let frac = pos - i as f64;
        self.density[i] * (1.0 - frac) + self.density[i + 1] * frac
    }

    /// Evenly thinned (x, density) pairs for export.
    pub fn curve(&self, max_points: usize) -> Vec<(f64, f64)> {
        let stride = GRID.div_ceil(max_points.max(2)).max(1);
        (0..GRID)
            .step_by(stride)
            .map(|g| (self.x0 + g as f64 * self.step, self.density[g]))
            .collect()
    }
}

/// Type-7 quantile of pre-sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        let frac = pos - i as f64;
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    }
}

/// Conflict p-value for one contrast given posterior draws of its difference.
///
/// Small values indicate that zero sits where the posterior puts little
/// density. The kde method reports the fraction of draws whose estimated
/// density falls below the estimated density at zero; the normal method is
/// the two-sided tail of the fitted normal at zero. Needs at least 1000
/// draws.
pub fn single_conflict_pvalue(draws: &[f64], method: PvalueMethod) -> Result<f64, StatsError> {
    if draws.len() < 1000 {
        return Err(StatsError::TooFewDraws { got: draws.len(), need: 1000 });
    }
    let s = sd(draws);
    if !(s > 0.0) || !s.is_finite() {
        return Err(StatsError::DegenerateDistribution {
            what: "contrast draws have zero variance".into(),
        });
    }
    match method {
        PvalueMethod::Normal => {
            let z = mean(draws).abs() / s;
            Ok(2.0 * (1.0 - phi(z)))
        }
        PvalueMethod::Kde => {
            let kde = Kde::fit(draws)?;
            let f0 = kde.eval(0.0);
            let below = draws.iter().filter(|&&d| kde.eval(d) < f0).count();
            Ok(below as f64 / draws.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_stream;
    use rand_distr::{Distribution, Normal};

    fn normal_draws(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeded_stream(seed, 0);
        let d = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn density_integrates_to_one() {
        let draws = normal_draws(0.0, 1.0, 20_000, 42);
        let kde = Kde::fit(&draws).unwrap();
        let total: f64 = kde.density.iter().sum::<f64>() * kde.step;
        assert!((total - 1.0).abs() < 1e-3, "mass {total}");
        // Peak near the true mode height 0.3989.
        assert!((kde.eval(0.0) - 0.3989).abs() < 0.02);
    }

    #[test]
    fn centred_posterior_shows_no_conflict() {
        // The kde p-value under the null has a slow n^(-0.3) noise floor from
        // the estimated mode sitting slightly off zero, so this needs many
        // draws before the tolerance is seed-robust.
        for seed in [1, 5, 7] {
            let draws = normal_draws(0.0, 1.0, 1_000_000, seed);
            let p = single_conflict_pvalue(&draws, PvalueMethod::Kde).unwrap();
            assert!(p > 0.95, "seed {seed}: kde p {p}");
        }
        let draws = normal_draws(0.0, 1.0, 100_000, 7);
        let p = single_conflict_pvalue(&draws, PvalueMethod::Normal).unwrap();
        assert!(p > 0.95, "normal p {p}");
    }

    #[test]
    fn three_sigma_shift_gives_the_normal_tail() {
        let draws = normal_draws(3.0, 1.0, 50_000, 9);
        let p = single_conflict_pvalue(&draws, PvalueMethod::Normal).unwrap();
        assert!((p - 0.0027).abs() < 1e-3, "normal p {p}");
        let p = single_conflict_pvalue(&draws, PvalueMethod::Kde).unwrap();
        assert!(p > 0.0005 && p < 0.007, "kde p {p}");
    }

    #[test]
    fn skewed_posterior_matches_exact_density_ordering() {
        // delta = exp(X) - 1 with X standard normal. The exact density-ordering
        // tail is P(X > 0) + P(X < -2) = 0.52275.
        let mut rng = seeded_stream(11, 0);
        let d = Normal::new(0.0, 1.0).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| f64::exp(d.sample(&mut rng)) - 1.0).collect();
        let p = single_conflict_pvalue(&draws, PvalueMethod::Kde).unwrap();
        assert!((p - 0.52275).abs() < 0.02, "kde p {p}");
    }

    #[test]
    fn input_contracts_are_enforced() {
        let few = vec![0.5; 10];
        assert!(matches!(
            single_conflict_pvalue(&few, PvalueMethod::Kde),
            Err(StatsError::TooFewDraws { .. })
        ));
        let flat = vec![0.5; 2000];
        assert!(matches!(
            single_conflict_pvalue(&flat, PvalueMethod::Normal),
            Err(StatsError::DegenerateDistribution { .. })
        ));
    }
}
