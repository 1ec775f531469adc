//! Single-chain execution: initialisation, proposal sweeps, adaptation.

use super::compile::{CKind, Compiled, UpdateUnit};
use super::{SampleError, SamplerConfig};
use crate::util::seeded_stream;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub(crate) struct ChainOut {
    /// Kept draws, row-major over all node slots.
    pub rows: Vec<f64>,
    pub deviance: Vec<f64>,
    pub accept_rates: Vec<f64>,
}

const INIT_ATTEMPTS: usize = 1000;

/// Tries overdispersed prior draws first; a model with diffuse priors and
/// sharp likelihoods (say Normal(0, 10^2) on a logit scale) rarely yields a
/// finite joint density that way, so later rounds start near the centre of
/// each node's proposal scale with shrinking jitter.
fn initial_values(c: &Compiled, rng: &mut ChaCha12Rng) -> Result<Vec<f64>, SampleError> {
    let rounds: &[(Option<f64>, usize)] = &[
        (None, 200),
        (Some(1.0), 200),
        (Some(0.3), 200),
        (Some(0.1), 200),
        (Some(0.01), 199),
        (Some(0.0), 1),
    ];
    for &(jitter, attempts) in rounds {
        for _ in 0..attempts {
            let mut values = vec![0.0; c.nodes.len()];
            for &i in &c.topo {
                values[i] = match (&c.nodes[i].kind, c.nodes[i].observed) {
                    (_, Some(y)) => y,
                    (CKind::Det(e), None) => e.eval(&values),
                    (CKind::Stoch(d), None) => {
                        let z: f64 = rng.sample(StandardNormal);
                        let from_centre = |scale: f64, values: &[f64]| {
                            c.transforms[i].unwrap().from_unconstrained(scale * z, values)
                        };
                        match jitter {
                            None => match d.sample(rng, &values) {
                                Some(x) => x,
                                // Improper prior: unit normal on the proposal scale.
                                None => from_centre(1.0, &values),
                            },
                            Some(scale) => from_centre(scale, &values),
                        }
                    }
                };
            }
            if c.log_joint(&values).is_finite() {
                return Ok(values);
            }
        }
    }
    Err(SampleError::InitialisationFailure { attempts: INIT_ATTEMPTS })
}

struct AdaptState {
    log_step: f64,
    window_accepts: usize,
    window_proposals: usize,
    windows_done: usize,
}

fn propose(
    c: &Compiled,
    unit: &UpdateUnit,
    step: f64,
    values: &mut [f64],
    saved: &mut Vec<(usize, f64)>,
    rng: &mut ChaCha12Rng,
) -> bool {
    let mut logp_cur = 0.0;
    for &s in &unit.dens {
        logp_cur += c.node_log_density(s, values);
    }
    let mut jac_cur = 0.0;
    saved.clear();
    for (k, &slot) in unit.slots.iter().enumerate() {
        let t = unit.transforms[k];
        let x = values[slot];
        jac_cur += t.log_jacobian(x, values);
        let z: f64 = rng.sample(StandardNormal);
        let t_new = t.to_unconstrained(x, values) + step * z;
        saved.push((slot, x));
        values[slot] = t.from_unconstrained(t_new, values);
    }
    for &d in &unit.det_chain {
        saved.push((d, values[d]));
        if let CKind::Det(e) = &c.nodes[d].kind {
            values[d] = e.eval(values);
        }
    }
    let mut logp_new = 0.0;
    for &s in &unit.dens {
        logp_new += c.node_log_density(s, values);
    }
    let mut jac_new = 0.0;
    for (k, &slot) in unit.slots.iter().enumerate() {
        jac_new += unit.transforms[k].log_jacobian(values[slot], values);
    }
    let log_ratio = (logp_new + jac_new) - (logp_cur + jac_cur);
    let u: f64 = rng.gen();
    let accept = logp_new.is_finite() && u.ln() < log_ratio;
    if !accept {
        for &(slot, old) in saved.iter() {
            values[slot] = old;
        }
    }
    accept
}

pub(crate) fn run_chain(
    c: &Compiled,
    cfg: &SamplerConfig,
    chain: u64,
) -> Result<ChainOut, SampleError> {
    let mut rng = seeded_stream(cfg.seed, chain);
    let mut values = initial_values(c, &mut rng)?;

    let mut adapt: Vec<AdaptState> = c
        .units
        .iter()
        .map(|_| AdaptState {
            log_step: 0.0,
            window_accepts: 0,
            window_proposals: 0,
            windows_done: 0,
        })
        .collect();
    let mut post_accepts = vec![0usize; c.units.len()];
    let kept = cfg.kept_per_chain();
    let mut rows = Vec::with_capacity(kept * c.nodes.len());
    let mut deviance = Vec::with_capacity(kept);
    let mut saved: Vec<(usize, f64)> = Vec::new();

    for iter in 0..cfg.iterations {
        for (ui, unit) in c.units.iter().enumerate() {
            let step = adapt[ui].log_step.exp();
            let accepted = propose(c, unit, step, &mut values, &mut saved, &mut rng);
            if iter < cfg.burn_in {
                let a = &mut adapt[ui];
                a.window_proposals += 1;
                if accepted {
                    a.window_accepts += 1;
                }
                if a.window_proposals == cfg.adapt_window {
                    a.windows_done += 1;
                    let rate = a.window_accepts as f64 / a.window_proposals as f64;
                    let delta = (1.0 / (a.windows_done as f64).sqrt()).min(0.25);
                    a.log_step += if rate > unit.target_accept { delta } else { -delta };
                    a.window_accepts = 0;
                    a.window_proposals = 0;
                }
            } else if accepted {
                post_accepts[ui] += 1;
            }
        }
        if iter >= cfg.burn_in && (iter - cfg.burn_in) % cfg.thin == 0 {
            rows.extend_from_slice(&values);
            deviance.push(c.deviance(&values));
        }
    }

    let post_iters = (cfg.iterations - cfg.burn_in) as f64;
    let accept_rates = post_accepts.iter().map(|&a| a as f64 / post_iters).collect();
    Ok(ChainOut { rows, deviance, accept_rates })
}
