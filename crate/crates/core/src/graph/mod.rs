//! Directed acyclic model graphs.
//!
//! A model is a list of named nodes. Stochastic nodes carry a distribution
//! whose parameters are constants or references to other nodes; deterministic
//! nodes carry an expression over other nodes. Observing a stochastic node
//! fixes its value and turns its density into a likelihood term.
//!
//! Node order is declaration order everywhere: iteration, validation
//! diagnostics, and the default topological order all tie-break by it, so a
//! graph built the same way twice behaves identically.

pub mod config;
pub mod expr;
pub mod split;

pub use expr::{parse_expr, Expr, ExprParseError};

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::fmt;

/// A distribution parameter: a fixed constant or a reference to another node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Node(String),
    Const(f64),
}

impl Param {
    pub fn node(name: impl Into<String>) -> Param {
        Param::Node(name.into())
    }

    pub fn as_node(&self) -> Option<&str> {
        match self {
            Param::Node(n) => Some(n),
            Param::Const(_) => None,
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Param::Node(_) => None,
            Param::Const(v) => Some(*v),
        }
    }

    pub fn resolve(&self, lookup: &dyn Fn(&str) -> f64) -> f64 {
        match self {
            Param::Node(n) => lookup(n),
            Param::Const(v) => *v,
        }
    }
}

impl From<f64> for Param {
    fn from(v: f64) -> Param {
        Param::Const(v)
    }
}

impl From<&str> for Param {
    fn from(name: &str) -> Param {
        Param::Node(name.to_string())
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Node(n) => write!(f, "{n}"),
            Param::Const(v) => write!(f, "{v}"),
        }
    }
}

/// Sampling distributions and priors.
///
/// `JeffreysProportion` is Beta(1/2, 1/2). `JeffreysRate` is the improper
/// rate prior with density proportional to 1/sqrt(x) on x > 0. `ImproperFlat`
/// is constant over the whole real line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Distribution {
    Normal { mean: Param, sd: Param },
    Uniform { lower: Param, upper: Param },
    Beta { shape1: Param, shape2: Param },
    LogNormal { log_mean: Param, log_sd: Param },
    Binomial { trials: Param, prob: Param },
    Poisson { rate: Param },
    Bernoulli { prob: Param },
    JeffreysProportion,
    JeffreysRate,
    ImproperFlat,
}

/// Where a stochastic node lives, used to pick the sampling transform.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Real,
    Positive,
    UnitInterval,
    /// Bounds may reference other nodes and move during sampling.
    Interval { lower: Param, upper: Param },
    Discrete,
}

impl Distribution {
    /// Parameters in declaration order with their field names.
    pub fn params(&self) -> Vec<(&'static str, &Param)> {
        match self {
            Distribution::Normal { mean, sd } => vec![("mean", mean), ("sd", sd)],
            Distribution::Uniform { lower, upper } => {
                vec![("lower", lower), ("upper", upper)]
            }
            Distribution::Beta { shape1, shape2 } => {
                vec![("shape1", shape1), ("shape2", shape2)]
            }
            Distribution::LogNormal { log_mean, log_sd } => {
                vec![("log_mean", log_mean), ("log_sd", log_sd)]
            }
            Distribution::Binomial { trials, prob } => {
                vec![("trials", trials), ("prob", prob)]
            }
            Distribution::Poisson { rate } => vec![("rate", rate)],
            Distribution::Bernoulli { prob } => vec![("prob", prob)],
            Distribution::JeffreysProportion
            | Distribution::JeffreysRate
            | Distribution::ImproperFlat => vec![],
        }
    }

    /// Rewrite node-valued parameters through `map`.
    pub fn rename(&self, map: &dyn Fn(&str) -> String) -> Distribution {
        let r = |p: &Param| match p {
            Param::Node(n) => Param::Node(map(n)),
            Param::Const(v) => Param::Const(*v),
        };
        match self {
            Distribution::Normal { mean, sd } => {
                Distribution::Normal { mean: r(mean), sd: r(sd) }
            }
            Distribution::Uniform { lower, upper } => {
                Distribution::Uniform { lower: r(lower), upper: r(upper) }
            }
            Distribution::Beta { shape1, shape2 } => {
                Distribution::Beta { shape1: r(shape1), shape2: r(shape2) }
            }
            Distribution::LogNormal { log_mean, log_sd } => {
                Distribution::LogNormal { log_mean: r(log_mean), log_sd: r(log_sd) }
            }
            Distribution::Binomial { trials, prob } => {
                Distribution::Binomial { trials: r(trials), prob: r(prob) }
            }
            Distribution::Poisson { rate } => Distribution::Poisson { rate: r(rate) },
            Distribution::Bernoulli { prob } => Distribution::Bernoulli { prob: r(prob) },
            other => other.clone(),
        }
    }

    pub fn support(&self) -> Support {
        match self {
            Distribution::Normal { .. } | Distribution::ImproperFlat => Support::Real,
            Distribution::Uniform { lower, upper } => {
                Support::Interval { lower: lower.clone(), upper: upper.clone() }
            }
            Distribution::Beta { .. } | Distribution::JeffreysProportion => {
                Support::UnitInterval
            }
            Distribution::LogNormal { .. } | Distribution::JeffreysRate => Support::Positive,
            Distribution::Binomial { .. }
            | Distribution::Poisson { .. }
            | Distribution::Bernoulli { .. } => Support::Discrete,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.support(), Support::Discrete)
    }

    /// Whether the density integrates to one. Improper priors cannot be
    /// forward-sampled and are excluded from prior-predictive draws.
    pub fn is_proper(&self) -> bool {
        !matches!(
            self,
            Distribution::JeffreysRate | Distribution::ImproperFlat
        )
    }

    /// Log density (or log mass) at `x`, resolving node parameters through
    /// `lookup`. Out-of-support points and invalid parameters give -inf.
    pub fn log_density(&self, x: f64, lookup: &dyn Fn(&str) -> f64) -> f64 {
        match self {
            Distribution::Normal { mean, sd } => {
                let m = mean.resolve(lookup);
                let s = sd.resolve(lookup);
                if !(s > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let z = (x - m) / s;
                -0.5 * crate::util::LN_2PI - s.ln() - 0.5 * z * z
            }
            Distribution::Uniform { lower, upper } => {
                let a = lower.resolve(lookup);
                let b = upper.resolve(lookup);
                if !(b > a) || x < a || x > b {
                    f64::NEG_INFINITY
                } else {
                    -(b - a).ln()
                }
            }
            Distribution::Beta { shape1, shape2 } => {
                let a = shape1.resolve(lookup);
                let b = shape2.resolve(lookup);
                if !(a > 0.0) || !(b > 0.0) || !(0.0..=1.0).contains(&x) {
                    return f64::NEG_INFINITY;
                }
                if (x == 0.0 && a < 1.0) || (x == 1.0 && b < 1.0) {
                    return f64::INFINITY;
                }
                ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
                    + (a - 1.0) * x.ln()
                    + (b - 1.0) * (1.0 - x).ln()
            }
            Distribution::LogNormal { log_mean, log_sd } => {
                let m = log_mean.resolve(lookup);
                let s = log_sd.resolve(lookup);
                if !(s > 0.0) || !(x > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - m) / s;
                -x.ln() - s.ln() - 0.5 * crate::util::LN_2PI - 0.5 * z * z
            }
            Distribution::Binomial { trials, prob } => {
                let n = trials.resolve(lookup);
                let p = prob.resolve(lookup);
                if !(0.0..=1.0).contains(&p) || n < 0.0 || x < 0.0 || x > n {
                    return f64::NEG_INFINITY;
                }
                let choose = ln_gamma(n + 1.0) - ln_gamma(x + 1.0) - ln_gamma(n - x + 1.0);
                choose + xlny(x, p) + xlny(n - x, 1.0 - p)
            }
            Distribution::Poisson { rate } => {
                let lam = rate.resolve(lookup);
                if lam < 0.0 || x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                xlny(x, lam) - lam - ln_gamma(x + 1.0)
            }
            Distribution::Bernoulli { prob } => {
                let p = prob.resolve(lookup);
                if !(0.0..=1.0).contains(&p) {
                    return f64::NEG_INFINITY;
                }
                if x == 1.0 {
                    p.ln()
                } else if x == 0.0 {
                    (1.0 - p).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Distribution::JeffreysProportion => {
                if !(0.0 < x && x < 1.0) {
                    return f64::NEG_INFINITY;
                }
                -std::f64::consts::PI.ln() - 0.5 * x.ln() - 0.5 * (1.0 - x).ln()
            }
            Distribution::JeffreysRate => {
                if !(x > 0.0) {
                    return f64::NEG_INFINITY;
                }
                -0.5 * x.ln()
            }
            Distribution::ImproperFlat => 0.0,
        }
    }

    /// Forward draw, for initialisation. `None` for improper or discrete
    /// distributions.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        lookup: &dyn Fn(&str) -> f64,
    ) -> Option<f64> {
        use rand_distr::Distribution as _;
        match self {
            Distribution::Normal { mean, sd } => {
                let d = rand_distr::Normal::new(mean.resolve(lookup), sd.resolve(lookup)).ok()?;
                Some(d.sample(rng))
            }
            Distribution::Uniform { lower, upper } => {
                let a = lower.resolve(lookup);
                let b = upper.resolve(lookup);
                if b > a {
                    Some(rng.gen_range(a..b))
                } else {
                    None
                }
            }
            Distribution::Beta { shape1, shape2 } => {
                let d =
                    rand_distr::Beta::new(shape1.resolve(lookup), shape2.resolve(lookup)).ok()?;
                Some(d.sample(rng))
            }
            Distribution::LogNormal { log_mean, log_sd } => {
                let d = rand_distr::LogNormal::new(
                    log_mean.resolve(lookup),
                    log_sd.resolve(lookup),
                )
                .ok()?;
                Some(d.sample(rng))
            }
            Distribution::JeffreysProportion => {
                let d = rand_distr::Beta::new(0.5, 0.5).ok()?;
                Some(d.sample(rng))
            }
            Distribution::Binomial { .. }
            | Distribution::Poisson { .. }
            | Distribution::Bernoulli { .. }
            | Distribution::JeffreysRate
            | Distribution::ImproperFlat => None,
        }
    }
}

/// x * ln(y) with the 0 * ln(0) = 0 convention.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x * y.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NodeSpec {
    Stochastic(Distribution),
    Deterministic(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDef {
    pub name: String,
    pub spec: NodeSpec,
    pub observed: Option<f64>,
}

impl NodeDef {
    pub fn is_stochastic(&self) -> bool {
        matches!(self.spec, NodeSpec::Stochastic(_))
    }

    pub fn is_latent(&self) -> bool {
        self.is_stochastic() && self.observed.is_none()
    }

    pub fn distribution(&self) -> Option<&Distribution> {
        match &self.spec {
            NodeSpec::Stochastic(d) => Some(d),
            NodeSpec::Deterministic(_) => None,
        }
    }

    /// Parent node names, first occurrence order, without repeats.
    pub fn parents(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        match &self.spec {
            NodeSpec::Stochastic(d) => {
                for (_, p) in d.params() {
                    if let Some(n) = p.as_node() {
                        if !out.contains(&n) {
                            out.push(n);
                        }
                    }
                }
            }
            NodeSpec::Deterministic(e) => {
                for n in e.refs() {
                    if !out.contains(&n) {
                        out.push(n);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphIssue {
    #[error("duplicate node name '{0}'")]
    DuplicateName(String),
    #[error("node '{node}' references undefined node '{target}'")]
    UndefinedReference { node: String, target: String },
    #[error("dependency cycle through: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("latent node '{0}' has a discrete distribution and cannot be sampled; observe it or reparameterise")]
    LatentDiscrete(String),
    #[error("observation attached to deterministic node '{0}'")]
    ObservedDeterministic(String),
    #[error("node '{node}', parameter '{param}': {message}")]
    BadParameter { node: String, param: &'static str, message: String },
    #[error("observed value {value} for '{node}' lies outside the support")]
    ObservedOutsideSupport { node: String, value: f64 },
}

/// A validated-on-demand DAG model.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelGraph {
    nodes: Vec<NodeDef>,
}

impl ModelGraph {
    pub fn new() -> ModelGraph {
        ModelGraph::default()
    }

    pub fn add(&mut self, node: NodeDef) -> &mut Self {
        self.nodes.push(node);
        self
    }

    pub fn stochastic(&mut self, name: impl Into<String>, dist: Distribution) -> &mut Self {
        self.add(NodeDef { name: name.into(), spec: NodeSpec::Stochastic(dist), observed: None })
    }

    pub fn observed(
        &mut self,
        name: impl Into<String>,
        dist: Distribution,
        value: f64,
    ) -> &mut Self {
        self.add(NodeDef {
            name: name.into(),
            spec: NodeSpec::Stochastic(dist),
            observed: Some(value),
        })
    }

    pub fn deterministic(&mut self, name: impl Into<String>, expr: Expr) -> &mut Self {
        self.add(NodeDef { name: name.into(), spec: NodeSpec::Deterministic(expr), observed: None })
    }

    /// Attach an observation to an existing stochastic node.
    pub fn observe(&mut self, name: &str, value: f64) -> Result<(), GraphIssue> {
        match self.nodes.iter_mut().find(|n| n.name == name) {
            Some(node) if node.is_stochastic() => {
                node.observed = Some(value);
                Ok(())
            }
            Some(node) => Err(GraphIssue::ObservedDeterministic(node.name.clone())),
            None => Err(GraphIssue::UndefinedReference {
                node: "<observe>".to_string(),
                target: name.to_string(),
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeDef> {
        self.nodes.iter()
    }

    pub fn get(&self, name: &str) -> Option<&NodeDef> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node_at(&self, idx: usize) -> &NodeDef {
        &self.nodes[idx]
    }

    pub fn latent_names(&self) -> Vec<&str> {
        self.nodes.iter().filter(|n| n.is_latent()).map(|n| n.name.as_str()).collect()
    }

    pub fn observed_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.is_stochastic() && n.observed.is_some())
            .map(|n| n.name.as_str())
            .collect()
    }

    /// All structural problems at once, in a stable order.
    pub fn validate(&self) -> Result<(), Vec<GraphIssue>> {
        let mut issues = Vec::new();
        let mut seen: Vec<&str> = Vec::new();
        for node in &self.nodes {
            if seen.contains(&node.name.as_str()) {
                issues.push(GraphIssue::DuplicateName(node.name.clone()));
            } else {
                seen.push(&node.name);
            }
        }
        for node in &self.nodes {
            for parent in node.parents() {
                if !seen.contains(&parent) {
                    issues.push(GraphIssue::UndefinedReference {
                        node: node.name.clone(),
                        target: parent.to_string(),
                    });
                }
            }
            match &node.spec {
                NodeSpec::Stochastic(d) => {
                    if node.observed.is_none() && d.is_discrete() {
                        issues.push(GraphIssue::LatentDiscrete(node.name.clone()));
                    }
                    self.check_const_params(node, d, &mut issues);
                }
                NodeSpec::Deterministic(_) => {
                    if node.observed.is_some() {
                        issues.push(GraphIssue::ObservedDeterministic(node.name.clone()));
                    }
                }
            }
        }
        if issues.is_empty() {
            if let Err(cycle) = self.topo_order() {
                issues.push(cycle);
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    fn check_const_params(&self, node: &NodeDef, d: &Distribution, issues: &mut Vec<GraphIssue>) {
        fn bad(
            issues: &mut Vec<GraphIssue>,
            node: &NodeDef,
            param: &'static str,
            message: String,
        ) {
            issues.push(GraphIssue::BadParameter { node: node.name.clone(), param, message });
        }
        fn outside(issues: &mut Vec<GraphIssue>, node: &NodeDef, value: f64) {
            issues.push(GraphIssue::ObservedOutsideSupport { node: node.name.clone(), value });
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match d {
            Distribution::Normal { sd, .. } => {
                if let Some(v) = sd.as_const() {
                    if !positive(v) {
                        bad(issues, node, "sd", format!("must be positive, got {v}"));
                    }
                }
            }
            Distribution::LogNormal { log_sd, .. } => {
                if let Some(v) = log_sd.as_const() {
                    if !positive(v) {
                        bad(issues, node, "log_sd", format!("must be positive, got {v}"));
                    }
                }
            }
            Distribution::Uniform { lower, upper } => {
                if let (Some(a), Some(b)) = (lower.as_const(), upper.as_const()) {
                    if !(b > a) {
                        bad(issues, node, "upper", format!("must exceed lower, got [{a}, {b}]"));
                    }
                }
            }
            Distribution::Beta { shape1, shape2 } => {
                if let Some(v) = shape1.as_const() {
                    if !positive(v) {
                        bad(issues, node, "shape1", format!("must be positive, got {v}"));
                    }
                }
                if let Some(v) = shape2.as_const() {
                    if !positive(v) {
                        bad(issues, node, "shape2", format!("must be positive, got {v}"));
                    }
                }
            }
            Distribution::Binomial { trials, prob } => {
                if let Some(n) = trials.as_const() {
                    if n < 0.0 || n.fract() != 0.0 {
                        bad(issues, node, "trials", format!("must be a nonnegative integer, got {n}"));
                    } else if let Some(y) = node.observed {
                        if y < 0.0 || y > n || y.fract() != 0.0 {
                            outside(issues, node, y);
                        }
                    }
                }
                if let Some(p) = prob.as_const() {
                    if !(0.0..=1.0).contains(&p) {
                        bad(issues, node, "prob", format!("must lie in [0, 1], got {p}"));
                    }
                }
            }
            Distribution::Poisson { rate } => {
                if let Some(v) = rate.as_const() {
                    if !(v >= 0.0) {
                        bad(issues, node, "rate", format!("must be nonnegative, got {v}"));
                    }
                }
                if let Some(y) = node.observed {
                    if y < 0.0 || y.fract() != 0.0 {
                        outside(issues, node, y);
                    }
                }
            }
            Distribution::Bernoulli { prob } => {
                if let Some(p) = prob.as_const() {
                    if !(0.0..=1.0).contains(&p) {
                        bad(issues, node, "prob", format!("must lie in [0, 1], got {p}"));
                    }
                }
                if let Some(y) = node.observed {
                    if y != 0.0 && y != 1.0 {
                        outside(issues, node, y);
                    }
                }
            }
            _ => {}
        }
    }

    /// Topological order of node indices, ties broken by declaration order.
    pub fn topo_order(&self) -> Result<Vec<usize>, GraphIssue> {
        self.topo_with(|i, j| i.cmp(&j))
    }

    /// Topological order with ties broken by node name; used where output
    /// must not depend on construction order.
    pub fn topo_order_by_name(&self) -> Result<Vec<usize>, GraphIssue> {
        self.topo_with(|i, j| self.nodes[i].name.cmp(&self.nodes[j].name))
    }

    fn topo_with(
        &self,
        tie: impl Fn(usize, usize) -> std::cmp::Ordering,
    ) -> Result<Vec<usize>, GraphIssue> {
        let n = self.nodes.len();
        let index: IndexMap<&str, usize> =
            self.nodes.iter().enumerate().map(|(i, d)| (d.name.as_str(), i)).collect();
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while !remaining.is_empty() {
            let mut best: Option<usize> = None;
            for &i in &remaining {
                let ready = self.nodes[i]
                    .parents()
                    .iter()
                    .all(|p| index.get(p).map_or(true, |&j| placed[j]));
                if ready {
                    best = match best {
                        None => Some(i),
                        Some(b) if tie(i, b) == std::cmp::Ordering::Less => Some(i),
                        keep => keep,
                    };
                }
            }
            match best {
                Some(i) => {
                    placed[i] = true;
                    order.push(i);
                    remaining.retain(|&j| j != i);
                }
                None => {
                    let stuck =
                        remaining.iter().map(|&i| self.nodes[i].name.clone()).collect();
                    return Err(GraphIssue::Cycle(stuck));
                }
            }
        }
        Ok(order)
    }

    /// Values for every node given latent values: observations are fixed,
    /// deterministic nodes are computed in topological order.
    ///
    /// Panics if `latent` misses a latent node; call after `validate`.
    pub fn eval_values(&self, latent: &IndexMap<String, f64>) -> IndexMap<String, f64> {
        let order = self.topo_order().expect("graph must be acyclic");
        let mut values: IndexMap<String, f64> = IndexMap::with_capacity(self.nodes.len());
        for idx in order {
            let node = &self.nodes[idx];
            let value = match (&node.spec, node.observed) {
                (NodeSpec::Stochastic(_), Some(y)) => y,
                (NodeSpec::Stochastic(_), None) => *latent
                    .get(&node.name)
                    .unwrap_or_else(|| panic!("missing latent value for '{}'", node.name)),
                (NodeSpec::Deterministic(e), _) => e.eval(&|n| {
                    *values.get(n).unwrap_or_else(|| panic!("unresolved reference '{n}'"))
                }),
            };
            values.insert(node.name.clone(), value);
        }
        values
    }

    /// Joint log density of latent priors and observed likelihood terms.
    pub fn log_joint(&self, latent: &IndexMap<String, f64>) -> f64 {
        let values = self.eval_values(latent);
        let lookup = |n: &str| values[n];
        let mut total = 0.0;
        for node in &self.nodes {
            if let NodeSpec::Stochastic(d) = &node.spec {
                let x = values[&node.name];
                total += d.log_density(x, &lookup);
                if total == f64::NEG_INFINITY {
                    return total;
                }
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Continuous, Discrete};

    fn no_lookup(_: &str) -> f64 {
        unreachable!("constant parameters only")
    }

    #[test]
    fn log_densities_match_reference_implementations() {
        let cases: Vec<(Distribution, f64, f64)> = vec![
            (
                Distribution::Normal { mean: Param::Const(1.5), sd: Param::Const(2.0) },
                0.7,
                statrs::distribution::Normal::new(1.5, 2.0).unwrap().ln_pdf(0.7),
            ),
            (
                Distribution::Beta { shape1: Param::Const(2.5), shape2: Param::Const(0.5) },
                0.3,
                statrs::distribution::Beta::new(2.5, 0.5).unwrap().ln_pdf(0.3),
            ),
            (
                Distribution::LogNormal { log_mean: Param::Const(8.0), log_sd: Param::Const(10.0) },
                3000.0,
                statrs::distribution::LogNormal::new(8.0, 10.0).unwrap().ln_pdf(3000.0),
            ),
            (
                Distribution::Binomial { trials: Param::Const(1536.0), prob: Param::Const(0.02) },
                35.0,
                statrs::distribution::Binomial::new(0.02, 1536).unwrap().ln_pmf(35),
            ),
            (
                Distribution::Poisson { rate: Param::Const(836.0) },
                910.0,
                statrs::distribution::Poisson::new(836.0).unwrap().ln_pmf(910),
            ),
        ];
        for (dist, x, expected) in cases {
            let got = dist.log_density(x, &no_lookup);
            assert!(
                (got - expected).abs() < 1e-9,
                "{dist:?} at {x}: got {got}, expected {expected}"
            );
        }
    }

    #[test]
    fn degenerate_cases() {
        let bern = Distribution::Bernoulli { prob: Param::Const(1.0) };
        assert_eq!(bern.log_density(1.0, &no_lookup), 0.0);
        assert_eq!(bern.log_density(0.0, &no_lookup), f64::NEG_INFINITY);
        let binom = Distribution::Binomial { trials: Param::Const(10.0), prob: Param::Const(0.0) };
        assert_eq!(binom.log_density(0.0, &no_lookup), 0.0);
        assert_eq!(binom.log_density(1.0, &no_lookup), f64::NEG_INFINITY);
        let uni = Distribution::Uniform { lower: Param::Const(0.0), upper: Param::Const(1.0) };
        assert_eq!(uni.log_density(1.5, &no_lookup), f64::NEG_INFINITY);
        assert_eq!(uni.log_density(0.5, &no_lookup), 0.0);
    }

    #[test]
    fn jeffreys_proportion_is_beta_half_half() {
        let expected = statrs::distribution::Beta::new(0.5, 0.5).unwrap().ln_pdf(0.2);
        let got = Distribution::JeffreysProportion.log_density(0.2, &no_lookup);
        assert!((got - expected).abs() < 1e-12);
    }

    fn beta_binomial() -> ModelGraph {
        let mut g = ModelGraph::new();
        g.stochastic(
            "theta",
            Distribution::Beta { shape1: Param::Const(2.0), shape2: Param::Const(3.0) },
        );
        g.observed(
            "y",
            Distribution::Binomial { trials: Param::Const(20.0), prob: Param::node("theta") },
            7.0,
        );
        g
    }

    #[test]
    fn joint_density_of_conjugate_pair() {
        let g = beta_binomial();
        g.validate().unwrap();
        let mut latent = IndexMap::new();
        latent.insert("theta".to_string(), 0.4);
        let expected = statrs::distribution::Beta::new(2.0, 3.0).unwrap().ln_pdf(0.4)
            + statrs::distribution::Binomial::new(0.4, 20).unwrap().ln_pmf(7);
        assert!((g.log_joint(&latent) - expected).abs() < 1e-9);
    }

    #[test]
    fn deterministic_chain_evaluates_in_topo_order() {
        let mut g = ModelGraph::new();
        // Deliberately declared out of dependency order.
        g.deterministic("d", parse_expr("n * r * pk").unwrap());
        g.deterministic("pk", parse_expr("p * k").unwrap());
        for name in ["r", "p", "k"] {
            g.stochastic(
                name,
                Distribution::Uniform { lower: Param::Const(0.0), upper: Param::Const(1.0) },
            );
        }
        g.deterministic("n", Expr::Const(100.0));
        g.validate().unwrap();
        let mut latent = IndexMap::new();
        latent.insert("r".to_string(), 0.5);
        latent.insert("p".to_string(), 0.2);
        latent.insert("k".to_string(), 0.3);
        let values = g.eval_values(&latent);
        assert!((values["d"] - 100.0 * 0.5 * 0.06).abs() < 1e-12);
    }

    #[test]
    fn validation_reports_problems() {
        let mut g = ModelGraph::new();
        g.stochastic("a", Distribution::Normal { mean: Param::node("b"), sd: Param::Const(1.0) });
        g.stochastic("b", Distribution::Normal { mean: Param::node("a"), sd: Param::Const(1.0) });
        let err = g.validate().unwrap_err();
        assert!(matches!(err[0], GraphIssue::Cycle(_)));

        let mut g = ModelGraph::new();
        g.stochastic("a", Distribution::Normal { mean: Param::node("ghost"), sd: Param::Const(1.0) });
        let err = g.validate().unwrap_err();
        assert!(err
            .iter()
            .any(|i| matches!(i, GraphIssue::UndefinedReference { target, .. } if target == "ghost")));

        let mut g = beta_binomial();
        g.stochastic("theta", Distribution::JeffreysProportion);
        let err = g.validate().unwrap_err();
        assert!(err.iter().any(|i| matches!(i, GraphIssue::DuplicateName(n) if n == "theta")));

        let mut g = ModelGraph::new();
        g.stochastic("n", Distribution::Poisson { rate: Param::Const(2.0) });
        let err = g.validate().unwrap_err();
        assert!(matches!(err[0], GraphIssue::LatentDiscrete(_)));
    }

    #[test]
    fn name_order_breaks_topo_ties() {
        let mut g = ModelGraph::new();
        g.stochastic("zeta", Distribution::ImproperFlat);
        g.stochastic("alpha", Distribution::ImproperFlat);
        g.deterministic("mid", parse_expr("zeta + alpha").unwrap());
        let by_decl = g.topo_order().unwrap();
        let by_name = g.topo_order_by_name().unwrap();
        assert_eq!(by_decl, vec![0, 1, 2]);
        assert_eq!(by_name, vec![1, 0, 2]);
    }
}
