//! Saturated-deviance summaries: E[D], plug-in deviance, p_D, DIC.
//!
//! Saturated forms measure fit against a model that reproduces each datum
//! exactly, so a well-fitting model has per-datum deviance near 1. The
//! plug-in deviance is evaluated at posterior means of the likelihood-scale
//! parameters (fitted probabilities and rates), not of any transformed
//! parameters.

use super::PosteriorSamples;
use crate::graph::{Distribution, ModelGraph, NodeSpec, Param};
use crate::util::mean;
use serde::{Deserialize, Serialize};

#[inline]
fn xlogratio(x: f64, num: f64, den: f64) -> f64 {
    // x * log(num/den) with the 0 log 0 convention.
    if x == 0.0 {
        0.0
    } else {
        x * (num / den).ln()
    }
}

pub(crate) fn binomial(y: f64, n: f64, p: f64) -> f64 {
    let fitted = n * p;
    2.0 * (xlogratio(y, y, fitted) + xlogratio(n - y, n - y, n - fitted))
}

pub(crate) fn poisson(y: f64, rate: f64) -> f64 {
    2.0 * (rate - y + xlogratio(y, y, rate))
}

pub(crate) fn normal(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    z * z
}

pub(crate) fn bernoulli(y: f64, p: f64) -> f64 {
    let prob = if y == 1.0 { p } else { 1.0 - p };
    -2.0 * prob.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatumDeviance {
    pub node: String,
    pub mean_deviance: f64,
    pub plugin_deviance: f64,
    pub p_d: f64,
    pub dic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevianceSummary {
    pub mean_deviance: f64,
    pub plugin_deviance: f64,
    pub p_d: f64,
    pub dic: f64,
    pub per_datum: Vec<DatumDeviance>,
}

enum Col {
    Const(f64),
    Column(usize),
}

impl Col {
    fn at(&self, s: &PosteriorSamples, draw: usize) -> f64 {
        match self {
            Col::Const(c) => *c,
            Col::Column(i) => s.value(draw, *i),
        }
    }

    fn posterior_mean(&self, s: &PosteriorSamples) -> f64 {
        match self {
            Col::Const(c) => *c,
            Col::Column(i) => {
                mean(&(0..s.n_kept()).map(|d| s.value(d, *i)).collect::<Vec<f64>>())
            }
        }
    }
}

fn resolve(s: &PosteriorSamples, p: &Param) -> Col {
    match p {
        Param::Const(c) => Col::Const(*c),
        Param::Node(n) => Col::Column(
            s.col(n).unwrap_or_else(|| panic!("samples lack column for node '{n}'")),
        ),
    }
}

/// Deviance decomposition of `s` (drawn from `g`) over observed nodes.
pub fn deviance_summary(g: &ModelGraph, s: &PosteriorSamples) -> DevianceSummary {
    let mut per_datum = Vec::new();
    for node in g.iter() {
        let (dist, y) = match (&node.spec, node.observed) {
            (NodeSpec::Stochastic(d), Some(y)) => (d, y),
            _ => continue,
        };
        let n_kept = s.n_kept();
        let (mean_dev, plugin) = match dist {
            Distribution::Binomial { trials, prob } => {
                let n = resolve(s, trials);
                let p = resolve(s, prob);
                let md = mean(
                    &(0..n_kept)
                        .map(|d| binomial(y, n.at(s, d), p.at(s, d)))
                        .collect::<Vec<f64>>(),
                );
                (md, binomial(y, n.posterior_mean(s), p.posterior_mean(s)))
            }
            Distribution::Poisson { rate } => {
                let r = resolve(s, rate);
                let md = mean(
                    &(0..n_kept).map(|d| poisson(y, r.at(s, d))).collect::<Vec<f64>>(),
                );
                (md, poisson(y, r.posterior_mean(s)))
            }
            Distribution::Normal { mean: m, sd } => {
                let m = resolve(s, m);
                let sd = resolve(s, sd);
                let md = mean(
                    &(0..n_kept)
                        .map(|d| normal(y, m.at(s, d), sd.at(s, d)))
                        .collect::<Vec<f64>>(),
                );
                (md, normal(y, m.posterior_mean(s), sd.posterior_mean(s)))
            }
            Distribution::Bernoulli { prob } => {
                let p = resolve(s, prob);
                let md = mean(
                    &(0..n_kept).map(|d| bernoulli(y, p.at(s, d))).collect::<Vec<f64>>(),
                );
                (md, bernoulli(y, p.posterior_mean(s)))
            }
            // No saturated form; fall back to -2 log density. Unused by the
            // bundled models.
            other => {
                let values: Vec<f64> = (0..n_kept)
                    .map(|d| {
                        -2.0 * other.log_density(y, &|name: &str| {
                            let c = s.col(name).expect("column");
                            s.value(d, c)
                        })
                    })
                    .collect();
                let md = mean(&values);
                let plugin = -2.0
                    * other.log_density(y, &|name: &str| {
                        mean(&s.column(name).expect("column"))
                    });
                (md, plugin)
            }
        };
        per_datum.push(DatumDeviance {
            node: node.name.clone(),
            mean_deviance: mean_dev,
            plugin_deviance: plugin,
            p_d: mean_dev - plugin,
            dic: 2.0 * mean_dev - plugin,
        });
    }
    let mean_deviance = mean(&s.deviance_trace);
    let plugin_deviance: f64 = per_datum.iter().map(|d| d.plugin_deviance).sum();
    let p_d = mean_deviance - plugin_deviance;
    DevianceSummary { mean_deviance, plugin_deviance, p_d, dic: mean_deviance + p_d, per_datum }
}
