//! Lowering a validated graph into slot-indexed form.
//!
//! Every node gets one slot in a flat value vector, in declaration order.
//! Expressions and distribution parameters are rewritten to slot references
//! so the sampler's inner loop never touches names. Each update unit (one
//! latent node, or a declared block of them) carries the deterministic nodes
//! it must recompute and the stochastic nodes whose densities it can change.

use super::SampleError;
use crate::graph::{Distribution, Expr, ModelGraph, NodeSpec, Param, Support};
use crate::util::LN_2PI;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use statrs::function::gamma::ln_gamma;

#[derive(Debug, Clone, Copy)]
pub(crate) enum CParam {
    Const(f64),
    Slot(usize),
}

impl CParam {
    #[inline]
    pub fn get(self, values: &[f64]) -> f64 {
        match self {
            CParam::Const(c) => c,
            CParam::Slot(i) => values[i],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum CExpr {
    Const(f64),
    Slot(usize),
    Add(Box<CExpr>, Box<CExpr>),
    Sub(Box<CExpr>, Box<CExpr>),
    Mul(Box<CExpr>, Box<CExpr>),
    Div(Box<CExpr>, Box<CExpr>),
    Log(Box<CExpr>),
    Exp(Box<CExpr>),
    Logit(Box<CExpr>),
    InvLogit(Box<CExpr>),
    Indicator { lower: Box<CExpr>, value: Box<CExpr>, upper: Box<CExpr> },
}

impl CExpr {
    pub fn eval(&self, v: &[f64]) -> f64 {
        match self {
            CExpr::Const(c) => *c,
            CExpr::Slot(i) => v[*i],
            CExpr::Add(a, b) => a.eval(v) + b.eval(v),
            CExpr::Sub(a, b) => a.eval(v) - b.eval(v),
            CExpr::Mul(a, b) => a.eval(v) * b.eval(v),
            CExpr::Div(a, b) => a.eval(v) / b.eval(v),
            CExpr::Log(a) => a.eval(v).ln(),
            CExpr::Exp(a) => a.eval(v).exp(),
            CExpr::Logit(a) => {
                let p = a.eval(v);
                (p / (1.0 - p)).ln()
            }
            CExpr::InvLogit(a) => {
                let x = a.eval(v);
                1.0 / (1.0 + (-x).exp())
            }
            CExpr::Indicator { lower, value, upper } => {
                let x = value.eval(v);
                if lower.eval(v) <= x && x <= upper.eval(v) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn lower(e: &Expr, slot_of: &dyn Fn(&str) -> usize) -> CExpr {
        let l = |e: &Expr| Box::new(CExpr::lower(e, slot_of));
        match e {
            Expr::Const(c) => CExpr::Const(*c),
            Expr::Node(n) => CExpr::Slot(slot_of(n)),
            Expr::Add(a, b) => CExpr::Add(l(a), l(b)),
            Expr::Sub(a, b) => CExpr::Sub(l(a), l(b)),
            Expr::Mul(a, b) => CExpr::Mul(l(a), l(b)),
            Expr::Div(a, b) => CExpr::Div(l(a), l(b)),
            Expr::Log(a) => CExpr::Log(l(a)),
            Expr::Exp(a) => CExpr::Exp(l(a)),
            Expr::Logit(a) => CExpr::Logit(l(a)),
            Expr::InvLogit(a) => CExpr::InvLogit(l(a)),
            Expr::Indicator { lower, value, upper } => {
                CExpr::Indicator { lower: l(lower), value: l(value), upper: l(upper) }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum CDist {
    Normal { mean: CParam, sd: CParam },
    Uniform { lower: CParam, upper: CParam },
    Beta { shape1: CParam, shape2: CParam },
    LogNormal { log_mean: CParam, log_sd: CParam },
    Binomial { trials: CParam, prob: CParam },
    Poisson { rate: CParam },
    Bernoulli { prob: CParam },
    JeffreysProportion,
    JeffreysRate,
    ImproperFlat,
}

#[inline]
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::NEG_INFINITY
    } else {
        x * y.ln()
    }
}

impl CDist {
    fn lower(d: &Distribution, slot_of: &dyn Fn(&str) -> usize) -> CDist {
        let p = |p: &Param| match p {
            Param::Const(c) => CParam::Const(*c),
            Param::Node(n) => CParam::Slot(slot_of(n)),
        };
        match d {
            Distribution::Normal { mean, sd } => CDist::Normal { mean: p(mean), sd: p(sd) },
            Distribution::Uniform { lower, upper } => {
                CDist::Uniform { lower: p(lower), upper: p(upper) }
            }
            Distribution::Beta { shape1, shape2 } => {
                CDist::Beta { shape1: p(shape1), shape2: p(shape2) }
            }
            Distribution::LogNormal { log_mean, log_sd } => {
                CDist::LogNormal { log_mean: p(log_mean), log_sd: p(log_sd) }
            }
            Distribution::Binomial { trials, prob } => {
                CDist::Binomial { trials: p(trials), prob: p(prob) }
            }
            Distribution::Poisson { rate } => CDist::Poisson { rate: p(rate) },
            Distribution::Bernoulli { prob } => CDist::Bernoulli { prob: p(prob) },
            Distribution::JeffreysProportion => CDist::JeffreysProportion,
            Distribution::JeffreysRate => CDist::JeffreysRate,
            Distribution::ImproperFlat => CDist::ImproperFlat,
        }
    }

    pub fn log_density(&self, x: f64, v: &[f64]) -> f64 {
        match self {
            CDist::Normal { mean, sd } => {
                let s = sd.get(v);
                if !(s > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let z = (x - mean.get(v)) / s;
                -0.5 * LN_2PI - s.ln() - 0.5 * z * z
            }
            CDist::Uniform { lower, upper } => {
                let a = lower.get(v);
                let b = upper.get(v);
                if !(b > a) || x < a || x > b {
                    f64::NEG_INFINITY
                } else {
                    -(b - a).ln()
                }
            }
            CDist::Beta { shape1, shape2 } => {
                let a = shape1.get(v);
                let b = shape2.get(v);
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
            CDist::LogNormal { log_mean, log_sd } => {
                let s = log_sd.get(v);
                if !(s > 0.0) || !(x > 0.0) {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - log_mean.get(v)) / s;
                -x.ln() - s.ln() - 0.5 * LN_2PI - 0.5 * z * z
            }
            CDist::Binomial { trials, prob } => {
                let n = trials.get(v);
                let p = prob.get(v);
                if !(0.0..=1.0).contains(&p) || n < 0.0 || x < 0.0 || x > n {
                    return f64::NEG_INFINITY;
                }
                ln_gamma(n + 1.0) - ln_gamma(x + 1.0) - ln_gamma(n - x + 1.0)
                    + xlny(x, p)
                    + xlny(n - x, 1.0 - p)
            }
            CDist::Poisson { rate } => {
                let lam = rate.get(v);
                if lam < 0.0 || x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                xlny(x, lam) - lam - ln_gamma(x + 1.0)
            }
            CDist::Bernoulli { prob } => {
                let p = prob.get(v);
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
            CDist::JeffreysProportion => {
                if !(0.0 < x && x < 1.0) {
                    return f64::NEG_INFINITY;
                }
                -std::f64::consts::PI.ln() - 0.5 * x.ln() - 0.5 * (1.0 - x).ln()
            }
            CDist::JeffreysRate => {
                if !(x > 0.0) {
                    return f64::NEG_INFINITY;
                }
                -0.5 * x.ln()
            }
            CDist::ImproperFlat => 0.0,
        }
    }

    /// Forward draw for initialisation; `None` for improper distributions.
    pub fn sample(&self, rng: &mut ChaCha12Rng, v: &[f64]) -> Option<f64> {
        use rand_distr::Distribution as _;
        match self {
            CDist::Normal { mean, sd } => {
                Some(rand_distr::Normal::new(mean.get(v), sd.get(v)).ok()?.sample(rng))
            }
            CDist::Uniform { lower, upper } => {
                let (a, b) = (lower.get(v), upper.get(v));
                if b > a {
                    Some(rng.gen_range(a..b))
                } else {
                    None
                }
            }
            CDist::Beta { shape1, shape2 } => {
                Some(rand_distr::Beta::new(shape1.get(v), shape2.get(v)).ok()?.sample(rng))
            }
            CDist::LogNormal { log_mean, log_sd } => {
                Some(rand_distr::LogNormal::new(log_mean.get(v), log_sd.get(v)).ok()?.sample(rng))
            }
            CDist::JeffreysProportion => Some(rand_distr::Beta::new(0.5, 0.5).ok()?.sample(rng)),
            _ => None,
        }
    }

    fn param_slots(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut push = |p: &CParam| {
            if let CParam::Slot(i) = p {
                out.push(*i);
            }
        };
        match self {
            CDist::Normal { mean, sd } => {
                push(mean);
                push(sd);
            }
            CDist::Uniform { lower, upper } => {
                push(lower);
                push(upper);
            }
            CDist::Beta { shape1, shape2 } => {
                push(shape1);
                push(shape2);
            }
            CDist::LogNormal { log_mean, log_sd } => {
                push(log_mean);
                push(log_sd);
            }
            CDist::Binomial { trials, prob } => {
                push(trials);
                push(prob);
            }
            CDist::Poisson { rate } => push(rate),
            CDist::Bernoulli { prob } => push(prob),
            _ => {}
        }
        out
    }
}

/// Map from a node's support to the unconstrained proposal scale.
#[derive(Debug, Clone, Copy)]
pub(crate) enum CTransform {
    Identity,
    Log,
    Logit,
    /// Bounds may be other slots; they must not belong to the same update
    /// unit as the transformed node.
    Interval { lower: CParam, upper: CParam },
}

impl CTransform {
    pub fn from_unconstrained(self, t: f64, v: &[f64]) -> f64 {
        match self {
            CTransform::Identity => t,
            CTransform::Log => t.exp(),
            CTransform::Logit => 1.0 / (1.0 + (-t).exp()),
            CTransform::Interval { lower, upper } => {
                let (a, b) = (lower.get(v), upper.get(v));
                a + (b - a) / (1.0 + (-t).exp())
            }
        }
    }

    pub fn to_unconstrained(self, x: f64, v: &[f64]) -> f64 {
        match self {
            CTransform::Identity => x,
            CTransform::Log => x.ln(),
            CTransform::Logit => (x / (1.0 - x)).ln(),
            CTransform::Interval { lower, upper } => {
                let (a, b) = (lower.get(v), upper.get(v));
                ((x - a) / (b - x)).ln()
            }
        }
    }

    /// log |dx/dt| evaluated at x.
    pub fn log_jacobian(self, x: f64, v: &[f64]) -> f64 {
        match self {
            CTransform::Identity => 0.0,
            CTransform::Log => x.ln(),
            CTransform::Logit => x.ln() + (1.0 - x).ln(),
            CTransform::Interval { lower, upper } => {
                let (a, b) = (lower.get(v), upper.get(v));
                (x - a).ln() + (b - x).ln() - (b - a).ln()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum CKind {
    Stoch(CDist),
    Det(CExpr),
}

#[derive(Debug, Clone)]
pub(crate) struct CNode {
    pub kind: CKind,
    pub observed: Option<f64>,
}

/// One Metropolis update: a single latent slot or a declared block.
#[derive(Debug, Clone)]
pub(crate) struct UpdateUnit {
    pub name: String,
    pub slots: Vec<usize>,
    pub transforms: Vec<CTransform>,
    /// Deterministic slots to recompute after changing `slots`, topo order.
    pub det_chain: Vec<usize>,
    /// Stochastic slots whose log density can change.
    pub dens: Vec<usize>,
    pub target_accept: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub names: Vec<String>,
    pub nodes: Vec<CNode>,
    /// Full topological order of slots.
    pub topo: Vec<usize>,
    pub latent: Vec<usize>,
    pub observed: Vec<usize>,
    pub units: Vec<UpdateUnit>,
    /// Proposal transform per slot (latent slots only).
    pub transforms: Vec<Option<CTransform>>,
}

impl Compiled {
    pub fn new(
        g: &ModelGraph,
        blocks: &[Vec<String>],
        target_accept: f64,
        block_target_accept: f64,
    ) -> Result<Compiled, SampleError> {
        g.validate().map_err(SampleError::InvalidGraph)?;
        let names: Vec<String> = g.iter().map(|n| n.name.clone()).collect();
        let slot_of = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .unwrap_or_else(|| panic!("unresolved node '{n}' after validation"))
        };
        let nodes: Vec<CNode> = g
            .iter()
            .map(|n| {
                let kind = match &n.spec {
                    NodeSpec::Stochastic(d) => CKind::Stoch(CDist::lower(d, &slot_of)),
                    NodeSpec::Deterministic(e) => CKind::Det(CExpr::lower(e, &slot_of)),
                };
                CNode { kind, observed: n.observed }
            })
            .collect();
        let topo: Vec<usize> = g
            .topo_order()
            .expect("validated graph is acyclic")
            .into_iter()
            .collect();
        let latent: Vec<usize> = g
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_latent())
            .map(|(i, _)| i)
            .collect();
        let observed: Vec<usize> = g
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_stochastic() && n.observed.is_some())
            .map(|(i, _)| i)
            .collect();

        let mut transforms: Vec<Option<CTransform>> = vec![None; nodes.len()];
        for &i in &latent {
            let dist = match &nodes[i].kind {
                CKind::Stoch(d) => d,
                CKind::Det(_) => unreachable!(),
            };
            let support = g.node_at(i).distribution().unwrap().support();
            let t = match support {
                Support::Real => CTransform::Identity,
                Support::Positive => CTransform::Log,
                Support::UnitInterval => CTransform::Logit,
                Support::Interval { .. } => match dist {
                    CDist::Uniform { lower, upper } => {
                        CTransform::Interval { lower: *lower, upper: *upper }
                    }
                    _ => CTransform::Identity,
                },
                Support::Discrete => unreachable!("validation rejects latent discrete nodes"),
            };
            transforms[i] = Some(t);
        }

        // Group latent slots into update units.
        let mut block_of: Vec<Option<usize>> = vec![None; nodes.len()];
        for (bi, block) in blocks.iter().enumerate() {
            for name in block {
                let i = names.iter().position(|x| x == name).ok_or_else(|| {
                    SampleError::BadConfig(format!("block references unknown node '{name}'"))
                })?;
                if !latent.contains(&i) {
                    return Err(SampleError::BadConfig(format!(
                        "block member '{name}' is not a latent stochastic node"
                    )));
                }
                if block_of[i].is_some() {
                    return Err(SampleError::BadConfig(format!(
                        "node '{name}' appears in two blocks"
                    )));
                }
                block_of[i] = Some(bi);
            }
        }

        let parent_slots = |i: usize| -> Vec<usize> {
            match &nodes[i].kind {
                CKind::Stoch(d) => d.param_slots(),
                CKind::Det(e) => {
                    let mut out = Vec::new();
                    collect_expr_slots(e, &mut out);
                    out
                }
            }
        };

        let mut units: Vec<UpdateUnit> = Vec::new();
        let mut block_done = vec![false; blocks.len()];
        for &i in &latent {
            let (slots, name, target) = match block_of[i] {
                Some(bi) => {
                    if block_done[bi] {
                        continue;
                    }
                    block_done[bi] = true;
                    let slots: Vec<usize> =
                        blocks[bi].iter().map(|n| names.iter().position(|x| x == n).unwrap()).collect();
                    (slots, blocks[bi].join("+"), block_target_accept)
                }
                None => (vec![i], names[i].clone(), target_accept),
            };
            let mut affected: Vec<usize> = slots.clone();
            let mut det_chain: Vec<usize> = Vec::new();
            for &j in &topo {
                if matches!(nodes[j].kind, CKind::Det(_))
                    && parent_slots(j).iter().any(|p| affected.contains(p))
                {
                    det_chain.push(j);
                    affected.push(j);
                }
            }
            let mut dens: Vec<usize> = Vec::new();
            for (j, node) in nodes.iter().enumerate() {
                if !matches!(node.kind, CKind::Stoch(_)) {
                    continue;
                }
                if slots.contains(&j) || parent_slots(j).iter().any(|p| affected.contains(p)) {
                    dens.push(j);
                }
            }
            let unit_transforms: Vec<CTransform> =
                slots.iter().map(|&s| transforms[s].unwrap()).collect();
            for (k, t) in unit_transforms.iter().enumerate() {
                if let CTransform::Interval { lower, upper } = t {
                    for b in [lower, upper] {
                        if let CParam::Slot(bs) = b {
                            if slots.contains(bs) {
                                return Err(SampleError::BadConfig(format!(
                                    "node '{}' and its interval bound sit in one block",
                                    names[slots[k]]
                                )));
                            }
                        }
                    }
                }
            }
            units.push(UpdateUnit {
                name,
                slots,
                transforms: unit_transforms,
                det_chain,
                dens,
                target_accept: target,
            });
        }

        Ok(Compiled { names, nodes, topo, latent, observed, units, transforms })
    }

    #[inline]
    pub fn node_log_density(&self, i: usize, values: &[f64]) -> f64 {
        match &self.nodes[i].kind {
            CKind::Stoch(d) => d.log_density(values[i], values),
            CKind::Det(_) => 0.0,
        }
    }

    pub fn log_joint(&self, values: &[f64]) -> f64 {
        let mut total = 0.0;
        for (i, node) in self.nodes.iter().enumerate() {
            if let CKind::Stoch(d) = &node.kind {
                total += d.log_density(values[i], values);
                if total == f64::NEG_INFINITY {
                    return total;
                }
            }
        }
        total
    }

    /// Total saturated deviance over observed nodes at the current state.
    pub fn deviance(&self, values: &[f64]) -> f64 {
        self.observed
            .iter()
            .map(|&i| self.datum_deviance(i, values))
            .sum()
    }

    pub fn datum_deviance(&self, i: usize, values: &[f64]) -> f64 {
        let y = self.nodes[i].observed.expect("observed slot");
        match &self.nodes[i].kind {
            CKind::Stoch(CDist::Binomial { trials, prob }) => {
                super::deviance::binomial(y, trials.get(values), prob.get(values))
            }
            CKind::Stoch(CDist::Poisson { rate }) => super::deviance::poisson(y, rate.get(values)),
            CKind::Stoch(CDist::Normal { mean, sd }) => {
                super::deviance::normal(y, mean.get(values), sd.get(values))
            }
            CKind::Stoch(CDist::Bernoulli { prob }) => {
                super::deviance::bernoulli(y, prob.get(values))
            }
            CKind::Stoch(d) => -2.0 * d.log_density(y, values),
            CKind::Det(_) => unreachable!(),
        }
    }
}

fn collect_expr_slots(e: &CExpr, out: &mut Vec<usize>) {
    match e {
        CExpr::Const(_) => {}
        CExpr::Slot(i) => out.push(*i),
        CExpr::Add(a, b) | CExpr::Sub(a, b) | CExpr::Mul(a, b) | CExpr::Div(a, b) => {
            collect_expr_slots(a, out);
            collect_expr_slots(b, out);
        }
        CExpr::Log(a) | CExpr::Exp(a) | CExpr::Logit(a) | CExpr::InvLogit(a) => {
            collect_expr_slots(a, out)
        }
        CExpr::Indicator { lower, value, upper } => {
            collect_expr_slots(lower, out);
            collect_expr_slots(value, out);
            collect_expr_slots(upper, out);
        }
    }
}
