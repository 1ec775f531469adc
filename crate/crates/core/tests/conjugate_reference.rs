//! Sampler output against closed-form posteriors, driven through the
//! configuration front end the way an external caller would use it.

use evsplit::graph::config::parse_model;
use evsplit::infer::{mc_standard_error, sample, PosteriorSamples, SamplerConfig};

fn fit(text: &str) -> PosteriorSamples {
    let (g, split) = parse_model(text).unwrap();
    assert!(split.is_none());
    let cfg = SamplerConfig { iterations: 30_000, burn_in: 10_000, ..SamplerConfig::default() };
    sample(&g, &cfg).unwrap()
}

fn check(s: &PosteriorSamples, node: &str, mean: f64, sd: f64) {
    let (m, d) = s.mean_sd(node).unwrap();
    let mcse = mc_standard_error(s, node).unwrap();
    assert!((m - mean).abs() < 4.0 * mcse, "{node}: mean {m} vs {mean}, mcse {mcse}");
    assert!((d - sd).abs() / sd < 0.05, "{node}: sd {d} vs {sd}");
}

#[test]
fn beta_binomial_matches_the_closed_form() {
    let s = fit(r#"
[[nodes]]
name = "theta"
dist = "jeffreys_proportion"

[[nodes]]
name = "y"
dist = "binomial"
trials = 10.0
prob = "theta"

[[observations]]
node = "y"
value = 3.0
"#);
    // Beta(1/2, 1/2) prior with 3 of 10 events: Beta(3.5, 7.5).
    check(&s, "theta", 3.5 / 11.0, (3.5f64 * 7.5 / (121.0 * 12.0)).sqrt());
}

#[test]
fn jeffreys_poisson_matches_the_closed_form() {
    let s = fit(r#"
[[nodes]]
name = "rate"
dist = "jeffreys_rate"

[[nodes]]
name = "y"
dist = "poisson"
rate = "rate"

[[observations]]
node = "y"
value = 7.0
"#);
    // 1/sqrt(rate) prior with one count of 7: Gamma(7.5, 1).
    check(&s, "rate", 7.5, 7.5f64.sqrt());
}

#[test]
fn normal_normal_matches_the_closed_form() {
    let s = fit(r#"
[[nodes]]
name = "mu"
dist = "normal"
mean = 0.0
sd = 2.0

[[nodes]]
name = "y"
dist = "normal"
mean = "mu"
sd = 1.0

[[observations]]
node = "y"
value = 1.5
"#);
    // Precision-weighted: mean 1.5 * 4/5, variance 4/5.
    check(&s, "mu", 1.2, (0.8f64).sqrt());
}
