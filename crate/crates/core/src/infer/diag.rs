//! Chain diagnostics: split-chain potential scale reduction and batch-means
//! Monte Carlo standard errors.

use super::PosteriorSamples;
use crate::util::{mean, sd};

/// Split-chain potential scale reduction for one column. Each chain's kept
/// sequence is halved, giving 2C sequences; near-constant columns report 1.
pub(crate) fn split_chain_psrf(s: &PosteriorSamples, col: usize) -> f64 {
    let half = s.kept_per_chain / 2;
    if half < 2 {
        return 1.0;
    }
    let mut seq_means = Vec::with_capacity(2 * s.chains);
    let mut seq_vars = Vec::with_capacity(2 * s.chains);
    for chain in 0..s.chains {
        let full = s.chain_column(chain, col);
        for part in [&full[..half], &full[half..2 * half]] {
            seq_means.push(mean(part));
            let v = sd(part);
            seq_vars.push(v * v);
        }
    }
    let w = mean(&seq_vars);
    if !(w > 0.0) {
        return 1.0;
    }
    let b_over_n = {
        let sb = sd(&seq_means);
        sb * sb
    };
    let n = half as f64;
    (((n - 1.0) / n * w + b_over_n) / w).sqrt()
}

/// Batch-means Monte Carlo standard error of the posterior mean of `node`.
///
/// Batches never straddle chains; the asymptotic variance is averaged over
/// chains and scaled by the total kept count.
pub fn mc_standard_error(s: &PosteriorSamples, node: &str) -> Option<f64> {
    let col = s.col(node)?;
    let n = s.kept_per_chain;
    if n < 4 {
        return None;
    }
    let batch = (n as f64).sqrt().floor() as usize;
    let n_batches = n / batch;
    let mut asym = 0.0;
    for chain in 0..s.chains {
        let x = s.chain_column(chain, col);
        let means: Vec<f64> = (0..n_batches)
            .map(|b| mean(&x[b * batch..(b + 1) * batch]))
            .collect();
        let sm = sd(&means);
        asym += batch as f64 * sm * sm;
    }
    asym /= s.chains as f64;
    Some((asym / s.n_kept() as f64).sqrt())
}
