//! Treatment-network models: arm-level binomial likelihoods on a consistency
//! basis, partition schemes over evidence sources, and the classic
//! one-comparison direct/indirect split.

use crate::graph::split::{
    split, ContrastDef, CopyRole, PartitionDef, SeparatorCopy, SeparatorSpec, SplitError,
    SplitModel, SplitSpec, Transform,
};
use crate::graph::{Distribution, Expr, GraphIssue, ModelGraph, Param};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NmaError {
    #[error("trial data problem: {0}")]
    BadData(String),
    #[error("no path of trials connects '{treatment}' to '{reference}'")]
    Disconnected { reference: String, treatment: String },
    #[error("not a spanning tree: {0}")]
    BadTree(String),
    #[error("partition scheme problem: {0}")]
    BadScheme(String),
    #[error("no trial compares {0} and {1} directly")]
    NoDirectEvidence(String, String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("graph construction failed: {0:?}")]
    Graph(Vec<GraphIssue>),
}

/// One arm of one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialArm {
    pub study: String,
    pub treatment: String,
    pub events: u64,
    pub total: u64,
}

impl TrialArm {
    pub fn new(study: &str, treatment: &str, events: u64, total: u64) -> TrialArm {
        TrialArm {
            study: study.into(),
            treatment: treatment.into(),
            events,
            total,
        }
    }
}

/// Arms grouped by trial, treatments sorted. The first treatment acts as the
/// trial baseline.
#[derive(Debug, Clone)]
pub struct Study {
    pub id: String,
    pub treatments: Vec<String>,
    pub arms: Vec<TrialArm>,
}

impl Study {
    pub fn baseline(&self) -> &str {
        &self.treatments[0]
    }

    pub fn design(&self) -> String {
        self.treatments.join("")
    }

    /// Unordered treatment pairs occurring in this trial.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for i in 0..self.treatments.len() {
            for j in i + 1..self.treatments.len() {
                out.push((self.treatments[i].clone(), self.treatments[j].clone()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectModel {
    Common,
    Random,
}

#[derive(Debug, Clone)]
pub struct NmaSpec {
    /// Treatment anchoring the basis parameters.
    pub reference: String,
    pub effect_model: EffectModel,
    /// Prior sd for basis effects and their partition copies.
    pub prior_sd: f64,
    /// Prior sd for trial intercepts. Near-flat: an intercept facing a
    /// zero-count arm must stay likelihood-dominated, otherwise shrinkage
    /// here leaks into the effect attached to that arm.
    pub baseline_sd: f64,
    /// Upper bound of the uniform prior on the heterogeneity sd.
    pub sigma_upper: f64,
}

impl Default for NmaSpec {
    fn default() -> NmaSpec {
        NmaSpec {
            reference: "A".into(),
            effect_model: EffectModel::Common,
            prior_sd: 10.0,
            baseline_sd: 100.0,
            sigma_upper: 5.0,
        }
    }
}

/// Built network model plus the study layout it came from.
#[derive(Debug, Clone)]
pub struct NmaModel {
    pub graph: ModelGraph,
    pub spec: NmaSpec,
    pub studies: Vec<Study>,
    /// All treatments, sorted.
    pub treatments: Vec<String>,
    /// Joint-proposal groups: correlated effects of multi-arm trials.
    pub blocks: Vec<Vec<String>>,
}

/// How multi-arm trials are assigned when partitioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiArmPlacement {
    /// With the tree-edge trials (partition 1).
    WithIndirect,
    /// With the off-tree trials (partition 2).
    WithDirect,
    /// Their own final partition.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemeKind {
    /// Tree-edge trials against everything off the tree.
    TwoWay,
    /// Greedy forest peeling: each round collects the trials on a fresh
    /// spanning forest of the edges still unassigned.
    SequentialTrees,
    /// Explicit study-id groups, one per partition.
    Custom(Vec<Vec<String>>),
}

#[derive(Debug, Clone)]
pub struct PartitionScheme {
    pub kind: SchemeKind,
    /// Spanning tree edges, each pair sorted.
    pub tree: Vec<(String, String)>,
    pub multi_arm: MultiArmPlacement,
    /// One heterogeneity sd across partitions. When false each partition gets
    /// its own copy and log-scale sd contrasts join the difference vector.
    pub share_variance: bool,
    /// True when some partition ends up without trials, or no comparison is
    /// left to contrast.
    pub degenerate: bool,
}

/// Split model bundled with its spec and renamed proposal blocks.
#[derive(Debug, Clone)]
pub struct NmaSplit {
    pub model: SplitModel,
    pub spec: SplitSpec,
    pub blocks: Vec<Vec<String>>,
    /// (partition name, study ids) in partition order.
    pub partition_studies: Vec<(String, Vec<String>)>,
}

/// Tobacco-cessation network: 24 trials, treatments A no contact, B self-help,
/// C individual counselling, D group counselling. Arm counts are
/// events/participants.
const SMOKING: &[(&str, &str, u64, u64)] = &[
    ("1", "A", 79, 702),
    ("1", "B", 77, 694),
    ("2", "A", 18, 671),
    ("2", "B", 21, 535),
    ("3", "A", 8, 116),
    ("3", "B", 19, 149),
    ("4", "A", 75, 731),
    ("4", "C", 363, 714),
    ("5", "A", 2, 106),
    ("5", "C", 9, 205),
    ("6", "A", 58, 549),
    ("6", "C", 237, 1561),
    ("7", "A", 0, 33),
    ("7", "C", 9, 48),
    ("8", "A", 3, 100),
    ("8", "C", 31, 98),
    ("9", "A", 1, 31),
    ("9", "C", 26, 95),
    ("10", "A", 6, 39),
    ("10", "C", 17, 77),
    ("11", "A", 64, 642),
    ("11", "C", 107, 761),
    ("12", "A", 5, 62),
    ("12", "C", 8, 90),
    ("13", "A", 20, 234),
    ("13", "C", 34, 237),
    ("14", "A", 95, 1107),
    ("14", "C", 143, 1031),
    ("15", "A", 15, 187),
    ("15", "C", 36, 504),
    ("16", "A", 78, 584),
    ("16", "C", 73, 675),
    ("17", "A", 69, 1177),
    ("17", "C", 54, 888),
    ("18", "A", 9, 140),
    ("18", "C", 23, 140),
    ("18", "D", 10, 138),
    ("19", "A", 0, 20),
    ("19", "D", 9, 20),
    ("20", "B", 20, 49),
    ("20", "C", 16, 43),
    ("21", "B", 11, 78),
    ("21", "C", 12, 85),
    ("21", "D", 29, 170),
    ("22", "B", 7, 66),
    ("22", "D", 32, 127),
    ("23", "C", 12, 76),
    ("23", "D", 20, 74),
    ("24", "C", 9, 55),
    ("24", "D", 3, 26),
];

pub fn smoking_trials() -> Vec<TrialArm> {
    SMOKING.iter().map(|&(s, t, r, n)| TrialArm::new(s, t, r, n)).collect()
}

/// Reads arms from delimited text with header
/// `study,design,treatment,events,total`. The design column is redundant and
/// checked against the grouped arms.
pub fn parse_trials(text: &str) -> Result<Vec<TrialArm>, NmaError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| NmaError::BadData("empty table".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["study", "design", "treatment", "events", "total"] {
        return Err(NmaError::BadData(format!(
            "expected header 'study,design,treatment,events,total', got '{header}'"
        )));
    }
    let mut arms = Vec::new();
    let mut designs: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(NmaError::BadData(format!("line {}: expected 5 fields", lineno + 2)));
        }
        let events = f[3]
            .parse::<u64>()
            .map_err(|_| NmaError::BadData(format!("line {}: bad events '{}'", lineno + 2, f[3])))?;
        let total = f[4]
            .parse::<u64>()
            .map_err(|_| NmaError::BadData(format!("line {}: bad total '{}'", lineno + 2, f[4])))?;
        designs.insert(f[0].to_string(), f[1].to_string());
        arms.push(TrialArm::new(f[0], f[2], events, total));
    }
    for s in &group_studies(&arms)? {
        if let Some(d) = designs.get(&s.id) {
            let joined = s.design();
            let dashed = s.treatments.join("-");
            if *d != joined && *d != dashed {
                return Err(NmaError::BadData(format!(
                    "study {}: design column '{}' does not match arms '{}'",
                    s.id, d, joined
                )));
            }
        }
    }
    Ok(arms)
}

pub fn group_studies(arms: &[TrialArm]) -> Result<Vec<Study>, NmaError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<TrialArm>> = BTreeMap::new();
    for a in arms {
        if a.treatment.is_empty()
            || a.treatment.contains(|c: char| c.is_whitespace() || c == '@' || c == ':')
        {
            return Err(NmaError::BadData(format!(
                "study {}: treatment label '{}' (labels must be non-empty, without whitespace, '@' or ':')",
                a.study, a.treatment
            )));
        }
        if a.events > a.total || a.total == 0 {
            return Err(NmaError::BadData(format!(
                "study {} arm {}: {} events out of {}",
                a.study, a.treatment, a.events, a.total
            )));
        }
        if !by_id.contains_key(&a.study) {
            order.push(a.study.clone());
        }
        by_id.entry(a.study.clone()).or_default().push(a.clone());
    }
    let mut studies = Vec::with_capacity(order.len());
    for id in order {
        let mut arms = by_id.remove(&id).unwrap();
        arms.sort_by(|a, b| a.treatment.cmp(&b.treatment));
        let treatments: Vec<String> = arms.iter().map(|a| a.treatment.clone()).collect();
        let mut seen = BTreeSet::new();
        for t in &treatments {
            if !seen.insert(t.clone()) {
                return Err(NmaError::BadData(format!("study {id}: treatment {t} appears twice")));
            }
        }
        if treatments.len() < 2 {
            return Err(NmaError::BadData(format!("study {id}: needs at least two arms")));
        }
        studies.push(Study { id, treatments, arms });
    }
    if studies.is_empty() {
        return Err(NmaError::BadData("no trials".into()));
    }
    Ok(studies)
}

fn sorted_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.into(), b.into())
    } else {
        (b.into(), a.into())
    }
}

/// Name of the relative-effect node for a treatment pair.
pub fn effect_node(a: &str, b: &str) -> String {
    let (lo, hi) = sorted_pair(a, b);
    format!("eta_{lo}{hi}")
}

fn check_connected(studies: &[Study], reference: &str) -> Result<Vec<String>, NmaError> {
    let mut treatments: BTreeSet<String> = BTreeSet::new();
    for s in studies {
        treatments.extend(s.treatments.iter().cloned());
    }
    if !treatments.contains(reference) {
        return Err(NmaError::BadData(format!("reference '{reference}' has no trial arms")));
    }
    let mut reached: BTreeSet<String> = BTreeSet::new();
    reached.insert(reference.to_string());
    loop {
        let before = reached.len();
        for s in studies {
            if s.treatments.iter().any(|t| reached.contains(t)) {
                reached.extend(s.treatments.iter().cloned());
            }
        }
        if reached.len() == before {
            break;
        }
    }
    if let Some(missing) = treatments.iter().find(|t| !reached.contains(*t)) {
        return Err(NmaError::Disconnected {
            reference: reference.into(),
            treatment: missing.clone(),
        });
    }
    Ok(treatments.into_iter().collect())
}

/// Per-arm effect used in the linear predictor; overriding it is how the
/// direct/indirect split rewires a comparison.
type EffectFn<'a> = dyn Fn(&Study, &str) -> Expr + 'a;

fn build_graph_with(
    studies: &[Study],
    treatments: &[String],
    spec: &NmaSpec,
    extra_effects: &[(String, Distribution)],
    effect_of: &EffectFn,
) -> Result<(ModelGraph, Vec<Vec<String>>), NmaError> {
    let reference = &spec.reference;
    let mut g = ModelGraph::new();
    let normal_prior = Distribution::Normal {
        mean: Param::Const(0.0),
        sd: Param::Const(spec.prior_sd),
    };

    for t in treatments {
        if t != reference {
            g.stochastic(effect_node(reference, t), normal_prior.clone());
        }
    }
    for (name, dist) in extra_effects {
        g.stochastic(name.clone(), dist.clone());
    }
    // Every other pair is a consistency functional of the basis.
    for i in 0..treatments.len() {
        for j in i + 1..treatments.len() {
            let (a, b) = (&treatments[i], &treatments[j]);
            if a == reference || b == reference {
                continue;
            }
            g.deterministic(
                effect_node(a, b),
                Expr::sub(
                    Expr::node(effect_node(reference, b)),
                    Expr::node(effect_node(reference, a)),
                ),
            );
        }
    }

    let random = spec.effect_model == EffectModel::Random;
    let max_extra = studies.iter().map(|s| s.treatments.len() - 1).max().unwrap_or(1);
    if random {
        g.stochastic(
            "sigma",
            Distribution::Uniform {
                lower: Param::Const(0.0),
                upper: Param::Const(spec.sigma_upper),
            },
        );
        // Exchangeable trial effects with pairwise correlation 1/2 admit a
        // sequential form: arm i regresses on the earlier arms' residual mean
        // with coefficient 1/i and sd sigma * sqrt((i+1)/(2i)).
        for i in 2..=max_extra {
            let f = ((i as f64 + 1.0) / (2.0 * i as f64)).sqrt();
            g.deterministic(
                format!("sigma_seq{i}"),
                Expr::mul(Expr::node("sigma"), Expr::constant(f)),
            );
        }
    }

    let baseline_prior = Distribution::Normal {
        mean: Param::Const(0.0),
        sd: Param::Const(spec.baseline_sd),
    };
    let mut blocks = Vec::new();
    for s in studies {
        let alpha = format!("alpha_{}", s.id);
        g.stochastic(alpha.clone(), baseline_prior.clone());
        let mut block = Vec::new();
        let mut prev_terms: Vec<(String, Expr)> = Vec::new();
        for (i, arm) in s.arms.iter().enumerate() {
            let t = &arm.treatment;
            let p_name = format!("p_{}_{}", s.id, t);
            if i == 0 {
                g.deterministic(p_name.clone(), Expr::inv_logit(Expr::node(alpha.clone())));
            } else if !random {
                let eff = effect_of(s, t);
                g.deterministic(
                    p_name.clone(),
                    Expr::inv_logit(Expr::add(Expr::node(alpha.clone()), eff)),
                );
            } else {
                let eff = effect_of(s, t);
                let delta = format!("delta_{}_{}", s.id, t);
                let (mean, sd) = if i == 1 {
                    let mean = match &eff {
                        Expr::Node(n) => Param::node(n.clone()),
                        _ => {
                            let mu = format!("mu_{}_{}", s.id, t);
                            g.deterministic(mu.clone(), eff.clone());
                            Param::node(mu)
                        }
                    };
                    (mean, Param::node("sigma"))
                } else {
                    let mut resid = None;
                    for (d, e) in &prev_terms {
                        let term = Expr::sub(Expr::node(d.clone()), e.clone());
                        resid = Some(match resid {
                            None => term,
                            Some(acc) => Expr::add(acc, term),
                        });
                    }
                    let mu = format!("mu_{}_{}", s.id, t);
                    g.deterministic(
                        mu.clone(),
                        Expr::add(
                            eff.clone(),
                            Expr::mul(Expr::constant(1.0 / i as f64), resid.unwrap()),
                        ),
                    );
                    (Param::node(mu), Param::node(format!("sigma_seq{i}")))
                };
                g.stochastic(delta.clone(), Distribution::Normal { mean, sd });
                g.deterministic(
                    p_name.clone(),
                    Expr::inv_logit(Expr::add(Expr::node(alpha.clone()), Expr::node(delta.clone()))),
                );
                prev_terms.push((delta.clone(), eff));
                block.push(delta);
            }
            g.observed(
                format!("y_{}_{}", s.id, t),
                Distribution::Binomial {
                    trials: Param::Const(arm.total as f64),
                    prob: Param::node(p_name),
                },
                arm.events as f64,
            );
        }
        if block.len() > 1 {
            blocks.push(block);
        }
    }
    g.validate().map_err(NmaError::Graph)?;
    Ok((g, blocks))
}

/// Baseline-to-arm effect under consistency: always the pair's effect node,
/// basic when the baseline is the reference, functional otherwise.
fn consistency_effect(s: &Study, t: &str) -> Expr {
    Expr::node(effect_node(s.baseline(), t))
}

pub fn build_nma_graph(arms: &[TrialArm], spec: &NmaSpec) -> Result<NmaModel, NmaError> {
    let studies = group_studies(arms)?;
    let treatments = check_connected(&studies, &spec.reference)?;
    let names: BTreeSet<String> = treatments
        .iter()
        .flat_map(|a| treatments.iter().map(move |b| (a, b)))
        .filter(|(a, b)| a < b)
        .map(|(a, b)| effect_node(a, b))
        .collect();
    let pair_count = treatments.len() * (treatments.len() - 1) / 2;
    if names.len() != pair_count {
        return Err(NmaError::BadData(
            "treatment labels produce colliding effect names; use distinct short labels".into(),
        ));
    }
    let (graph, blocks) =
        build_graph_with(&studies, &treatments, spec, &[], &|s, t| consistency_effect(s, t))?;
    Ok(NmaModel { graph, spec: spec.clone(), studies, treatments, blocks })
}

fn validate_tree(
    tree: &[(String, String)],
    treatments: &[String],
) -> Result<Vec<(String, String)>, NmaError> {
    let set: BTreeSet<&String> = treatments.iter().collect();
    let mut edges: Vec<(String, String)> = Vec::new();
    for (a, b) in tree {
        if !set.contains(a) || !set.contains(b) {
            return Err(NmaError::BadTree(format!("edge {a}-{b} mentions an unknown treatment")));
        }
        edges.push(sorted_pair(a, b));
    }
    edges.sort();
    edges.dedup();
    if edges.len() != treatments.len() - 1 {
        return Err(NmaError::BadTree(format!(
            "{} distinct edges cannot span {} treatments",
            edges.len(),
            treatments.len()
        )));
    }
    // Connected with T-1 edges means acyclic too.
    let mut reached: BTreeSet<String> = BTreeSet::new();
    reached.insert(treatments[0].clone());
    loop {
        let before = reached.len();
        for (a, b) in &edges {
            if reached.contains(a) {
                reached.insert(b.clone());
            }
            if reached.contains(b) {
                reached.insert(a.clone());
            }
        }
        if reached.len() == before {
            break;
        }
    }
    if reached.len() != treatments.len() {
        return Err(NmaError::BadTree("edges do not form one connected tree".into()));
    }
    Ok(edges)
}

/// Signed sum of tree-edge effects along the path from `a` to `b`.
fn tree_path_expr(tree: &[(String, String)], a: &str, b: &str) -> Expr {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (x, y) in tree {
        adj.entry(x).or_default().push(y);
        adj.entry(y).or_default().push(x);
    }
    // BFS with parent links; tree is connected so the path exists.
    let mut parent: BTreeMap<&str, &str> = BTreeMap::new();
    let mut queue = std::collections::VecDeque::from([a]);
    parent.insert(a, a);
    while let Some(u) = queue.pop_front() {
        if u == b {
            break;
        }
        for v in adj.get(u).into_iter().flatten() {
            if !parent.contains_key(*v) {
                parent.insert(v, u);
                queue.push_back(v);
            }
        }
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut cur = b;
    while cur != a {
        let prev = parent[cur];
        // Traversing prev -> cur; the stored edge points low -> high.
        if prev < cur {
            pos.push(Expr::node(effect_node(prev, cur)));
        } else {
            neg.push(Expr::node(effect_node(prev, cur)));
        }
        cur = prev;
    }
    let sum = |terms: Vec<Expr>| -> Option<Expr> { terms.into_iter().reduce(Expr::add) };
    match (sum(pos), sum(neg)) {
        (Some(p), Some(n)) => Expr::sub(p, n),
        (Some(p), None) => p,
        (None, Some(n)) => Expr::sub(Expr::constant(0.0), n),
        (None, None) => Expr::constant(0.0),
    }
}

/// Maps each non-reference treatment to the effect node of the tree edge
/// linking it back toward the reference.
fn orient_tree(tree: &[(String, String)], reference: &str) -> BTreeMap<String, String> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (x, y) in tree {
        adj.entry(x).or_default().push(y);
        adj.entry(y).or_default().push(x);
    }
    let mut carrier = BTreeMap::new();
    let mut seen = BTreeSet::from([reference]);
    let mut queue = std::collections::VecDeque::from([reference]);
    while let Some(u) = queue.pop_front() {
        for v in adj.get(u).into_iter().flatten() {
            if seen.insert(v) {
                carrier.insert(v.to_string(), effect_node(u, v));
                queue.push_back(v);
            }
        }
    }
    carrier
}

/// Arm coding used by the partitioned models: each treatment's effect rides
/// on its carrier edge and an arm contributes the difference of the two
/// carriers. On a star tree this is exactly the consistency basis.
fn carrier_diff(
    carrier: &BTreeMap<String, String>,
    reference: &str,
    baseline: &str,
    arm: &str,
) -> Expr {
    let term = |t: &str| (t != reference).then(|| Expr::node(carrier[t].clone()));
    match (term(arm), term(baseline)) {
        (Some(k), Some(j)) => Expr::sub(k, j),
        (Some(k), None) => k,
        (None, Some(j)) => Expr::sub(Expr::constant(0.0), j),
        (None, None) => unreachable!("arm equals its baseline"),
    }
}

/// Two-arm design edges with at least one trial, sorted.
fn data_edges(studies: &[Study]) -> Vec<(String, String)> {
    let mut set: BTreeSet<(String, String)> = BTreeSet::new();
    for s in studies {
        if s.treatments.len() == 2 {
            set.insert(sorted_pair(&s.treatments[0], &s.treatments[1]));
        }
    }
    set.into_iter().collect()
}

/// Treatment pairs compared within some trial, sorted.
fn compared_pairs(studies: &[Study]) -> Vec<(String, String)> {
    let mut set: BTreeSet<(String, String)> = BTreeSet::new();
    for s in studies {
        for p in s.pairs() {
            set.insert(p);
        }
    }
    set.into_iter().collect()
}

fn assign_partitions(
    model: &NmaModel,
    scheme: &PartitionScheme,
    tree: &[(String, String)],
) -> Result<Vec<Vec<String>>, NmaError> {
    let two_arm_edge = |s: &Study| -> Option<(String, String)> {
        (s.treatments.len() == 2).then(|| sorted_pair(&s.treatments[0], &s.treatments[1]))
    };
    match &scheme.kind {
        SchemeKind::Custom(groups) => {
            let mut seen: BTreeSet<&String> = BTreeSet::new();
            for g in groups {
                for id in g {
                    if model.studies.iter().all(|s| &s.id != id) {
                        return Err(NmaError::BadScheme(format!("unknown study '{id}'")));
                    }
                    if !seen.insert(id) {
                        return Err(NmaError::BadScheme(format!(
                            "study '{id}' assigned to two partitions"
                        )));
                    }
                }
            }
            if seen.len() != model.studies.len() {
                return Err(NmaError::BadScheme("every study needs a partition".into()));
            }
            Ok(groups.clone())
        }
        SchemeKind::TwoWay => {
            let mut parts = vec![Vec::new(), Vec::new()];
            let mut separate = Vec::new();
            for s in &model.studies {
                match two_arm_edge(s) {
                    Some(e) if tree.contains(&e) => parts[0].push(s.id.clone()),
                    Some(_) => parts[1].push(s.id.clone()),
                    None => match scheme.multi_arm {
                        MultiArmPlacement::WithIndirect => parts[0].push(s.id.clone()),
                        MultiArmPlacement::WithDirect => parts[1].push(s.id.clone()),
                        MultiArmPlacement::Separate => separate.push(s.id.clone()),
                    },
                }
            }
            if !separate.is_empty() {
                parts.push(separate);
            }
            Ok(parts)
        }
        SchemeKind::SequentialTrees => {
            if scheme.multi_arm != MultiArmPlacement::Separate {
                return Err(NmaError::BadScheme(
                    "sequential trees keep multi-arm trials in their own partition".into(),
                ));
            }
            let mut parts: Vec<Vec<String>> = vec![Vec::new()];
            let mut assigned: BTreeSet<(String, String)> =
                tree.iter().cloned().collect();
            for s in &model.studies {
                if let Some(e) = two_arm_edge(s) {
                    if tree.contains(&e) {
                        parts[0].push(s.id.clone());
                    }
                }
            }
            // Peel spanning forests off the remaining two-arm edges.
            loop {
                let remaining: Vec<(String, String)> = data_edges(&model.studies)
                    .into_iter()
                    .filter(|e| !assigned.contains(e))
                    .collect();
                if remaining.is_empty() {
                    break;
                }
                let mut forest: Vec<(String, String)> = Vec::new();
                let mut comp: BTreeMap<String, usize> = BTreeMap::new();
                let mut next = 0usize;
                for (a, b) in &remaining {
                    let ca = *comp.entry(a.clone()).or_insert_with(|| {
                        next += 1;
                        next - 1
                    });
                    let cb = *comp.entry(b.clone()).or_insert_with(|| {
                        next += 1;
                        next - 1
                    });
                    if ca != cb {
                        for v in comp.values_mut() {
                            if *v == cb {
                                *v = ca;
                            }
                        }
                        forest.push((a.clone(), b.clone()));
                    }
                }
                let mut part = Vec::new();
                for s in &model.studies {
                    if let Some(e) = two_arm_edge(s) {
                        if forest.contains(&e) {
                            part.push(s.id.clone());
                        }
                    }
                }
                assigned.extend(forest);
                parts.push(part);
            }
            let multi: Vec<String> = model
                .studies
                .iter()
                .filter(|s| s.treatments.len() > 2)
                .map(|s| s.id.clone())
                .collect();
            if !multi.is_empty() {
                parts.push(multi);
            }
            Ok(parts)
        }
    }
}

/// The standard partition schemes for one spanning tree: tree against the
/// rest with multi-arm trials on either side, and the sequential-forest
/// decomposition. Schemes yielding identical study groupings collapse to one.
pub fn enumerate_schemes(
    arms: &[TrialArm],
    tree: &[(String, String)],
) -> Result<Vec<PartitionScheme>, NmaError> {
    let model = build_nma_graph(arms, &NmaSpec::default())?;
    let tree = validate_tree(tree, &model.treatments)?;
    let candidates = [
        (SchemeKind::TwoWay, MultiArmPlacement::WithIndirect),
        (SchemeKind::TwoWay, MultiArmPlacement::WithDirect),
        (SchemeKind::SequentialTrees, MultiArmPlacement::Separate),
    ];
    let mut out: Vec<PartitionScheme> = Vec::new();
    let mut seen: Vec<Vec<Vec<String>>> = Vec::new();
    for (kind, multi_arm) in candidates {
        let mut scheme = PartitionScheme {
            kind,
            tree: tree.clone(),
            multi_arm,
            share_variance: true,
            degenerate: false,
        };
        let parts = assign_partitions(&model, &scheme, &tree)?;
        let nonempty: Vec<Vec<String>> =
            parts.iter().filter(|p| !p.is_empty()).cloned().collect();
        let off_tree: Vec<_> = compared_pairs(&model.studies)
            .into_iter()
            .filter(|e| !tree.contains(e))
            .collect();
        scheme.degenerate =
            parts.iter().any(|p| p.is_empty()) || nonempty.len() < 2 || off_tree.is_empty();
        if seen.contains(&nonempty) {
            continue;
        }
        seen.push(nonempty);
        out.push(scheme);
    }
    Ok(out)
}

/// Splits the network by evidence source. Every partition receives fresh
/// diffuse copies of the tree-edge effects; off-tree comparisons become
/// tree-path functionals and are contrasted against partition 1. Arm
/// predictors use the carrier coding, so each trial informs the copies of
/// the edges carrying its treatments rather than a derived functional.
pub fn split_nma(model: &NmaModel, scheme: &PartitionScheme) -> Result<NmaSplit, NmaError> {
    let tree = validate_tree(&scheme.tree, &model.treatments)?;
    let parts = assign_partitions(model, scheme, &tree)?;
    let part_names: Vec<String> = (1..=parts.len()).map(|i| i.to_string()).collect();

    let mut partitions = Vec::new();
    for (name, ids) in part_names.iter().zip(&parts) {
        let mut observed = Vec::new();
        for id in ids {
            let s = model.studies.iter().find(|s| &s.id == id).unwrap();
            for t in &s.treatments {
                observed.push(format!("y_{}_{}", id, t));
            }
        }
        partitions.push(PartitionDef { name: name.clone(), observed });
    }

    let diffuse = Distribution::Normal {
        mean: Param::Const(0.0),
        sd: Param::Const(model.spec.prior_sd),
    };
    let all = |role: &dyn Fn() -> CopyRole| -> Vec<(String, CopyRole)> {
        part_names.iter().map(|p| (p.clone(), role())).collect()
    };
    let mut separators = Vec::new();
    for (a, b) in &tree {
        separators.push(SeparatorSpec {
            node: effect_node(a, b),
            transform: Transform::Identity,
            contrast: false,
            copies: all(&|| CopyRole::Founder(Some(diffuse.clone()))),
        });
    }
    for (a, b) in compared_pairs(&model.studies) {
        if tree.contains(&(a.clone(), b.clone())) {
            continue;
        }
        let path = tree_path_expr(&tree, &a, &b);
        separators.push(SeparatorSpec {
            node: effect_node(&a, &b),
            transform: Transform::Identity,
            contrast: true,
            copies: all(&|| CopyRole::Define(path.clone())),
        });
    }
    let random = model.spec.effect_model == EffectModel::Random;
    let mut shared_nodes = Vec::new();
    if random {
        if scheme.share_variance {
            shared_nodes.push("sigma".to_string());
        } else {
            separators.push(SeparatorSpec {
                node: "sigma".into(),
                transform: Transform::Log,
                contrast: true,
                copies: all(&|| CopyRole::Derived),
            });
        }
    }

    let spec = SplitSpec {
        partitions,
        separators,
        shared_nodes,
        contrast_pairs: Some((1..parts.len()).map(|q| (0, q)).collect()),
    };
    // Partitioned fits re-express every arm through the tree's carriers so
    // the founder copies are informed directly by their partition's trials.
    let carrier = orient_tree(&tree, &model.spec.reference);
    let effect =
        |s: &Study, t: &str| carrier_diff(&carrier, &model.spec.reference, s.baseline(), t);
    let (graph, model_blocks) =
        build_graph_with(&model.studies, &model.treatments, &model.spec, &[], &effect)?;
    let sm = split(&graph, &spec)?;

    let mut blocks = Vec::new();
    for block in &model_blocks {
        // delta_{study}_{t}: recover the study id to find its partition.
        let study = block[0].split('_').nth(1).unwrap().to_string();
        let q = parts.iter().position(|ids| ids.contains(&study)).unwrap();
        blocks.push(block.iter().map(|n| format!("{}@{}", n, part_names[q])).collect());
    }
    let partition_studies = part_names.into_iter().zip(parts).collect();
    Ok(NmaSplit { model: sm, spec, blocks, partition_studies })
}

/// Splits a single comparison into its direct and indirect evidence. Trials
/// containing both treatments form the direct partition and get a fresh
/// effect for that comparison; everything else keeps the consistency basis.
/// The contrast is direct minus indirect.
pub fn single_node_split(model: &NmaModel, a: &str, b: &str) -> Result<NmaSplit, NmaError> {
    let (j, k) = sorted_pair(a, b);
    if !model.treatments.contains(&j) || !model.treatments.contains(&k) {
        return Err(NmaError::BadData(format!("unknown treatment in pair {j}-{k}")));
    }
    let direct: BTreeSet<String> = model
        .studies
        .iter()
        .filter(|s| s.treatments.contains(&j) && s.treatments.contains(&k))
        .map(|s| s.id.clone())
        .collect();
    if direct.is_empty() {
        return Err(NmaError::NoDirectEvidence(j, k));
    }

    let base_name = effect_node(&j, &k);
    let dir_name = format!("{base_name}_dir");
    let diffuse = Distribution::Normal {
        mean: Param::Const(0.0),
        sd: Param::Const(model.spec.prior_sd),
    };
    let effect = {
        let j = j.clone();
        let k = k.clone();
        let dir_name = dir_name.clone();
        let direct = direct.clone();
        move |s: &Study, t: &str| -> Expr {
            let bl = s.baseline();
            if direct.contains(&s.id) && t == k {
                // Baseline equal to j uses the direct effect alone; otherwise
                // route through j so only the j-k comparison is severed.
                if bl == j {
                    Expr::node(dir_name.clone())
                } else {
                    Expr::add(Expr::node(effect_node(bl, &j)), Expr::node(dir_name.clone()))
                }
            } else {
                consistency_effect(s, t)
            }
        }
    };
    let (graph, blocks) = build_graph_with(
        &model.studies,
        &model.treatments,
        &model.spec,
        &[(dir_name.clone(), diffuse.clone())],
        &effect,
    )?;

    let part_names = vec!["ind".to_string(), "dir".to_string()];
    let mut parts = vec![Vec::new(), Vec::new()];
    let mut observed = vec![Vec::new(), Vec::new()];
    for s in &model.studies {
        let q = direct.contains(&s.id) as usize;
        parts[q].push(s.id.clone());
        for t in &s.treatments {
            observed[q].push(format!("y_{}_{}", s.id, t));
        }
    }
    let spec = SplitSpec {
        partitions: part_names
            .iter()
            .zip(observed)
            .map(|(name, observed)| PartitionDef { name: name.clone(), observed })
            .collect(),
        separators: vec![SeparatorSpec {
            node: base_name.clone(),
            transform: Transform::Identity,
            contrast: true,
            copies: vec![
                ("ind".into(), CopyRole::Derived),
                ("dir".into(), CopyRole::Founder(Some(diffuse))),
            ],
        }],
        shared_nodes: vec![],
        contrast_pairs: Some(vec![(1, 0)]),
    };
    let copies = vec![
        SeparatorCopy { separator: 0, partition: 0, node: base_name.clone(), improper_default: false },
        SeparatorCopy { separator: 0, partition: 1, node: dir_name.clone(), improper_default: false },
    ];
    let contrasts = vec![ContrastDef {
        separator: 0,
        name: base_name.clone(),
        transform: Transform::Identity,
        pair: (1, 0),
        minuend: dir_name.clone(),
        subtrahend: base_name.clone(),
        label: format!("{base_name}:dir-ind"),
    }];
    let sm = SplitModel {
        graph,
        partition_names: part_names.clone(),
        partition_nodes: vec![vec![base_name], vec![dir_name]],
        shared_nodes: vec![],
        copies,
        contrasts,
    };
    let partition_studies = part_names.into_iter().zip(parts).collect();
    Ok(NmaSplit { model: sm, spec, blocks, partition_studies })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpec;
    use indexmap::IndexMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn edges(v: &[(&str, &str)]) -> Vec<(String, String)> {
        v.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn smoking_table_is_complete() {
        let arms = smoking_trials();
        assert_eq!(arms.len(), 50);
        let studies = group_studies(&arms).unwrap();
        assert_eq!(studies.len(), 24);
        let mut designs: BTreeMap<String, usize> = BTreeMap::new();
        for s in &studies {
            *designs.entry(s.design()).or_default() += 1;
        }
        let expected: BTreeMap<String, usize> = [
            ("AB", 3),
            ("AC", 14),
            ("ACD", 1),
            ("AD", 1),
            ("BC", 1),
            ("BCD", 1),
            ("BD", 1),
            ("CD", 2),
        ]
        .into_iter()
        .map(|(d, n)| (d.to_string(), n))
        .collect();
        assert_eq!(designs, expected);
        let total: u64 = arms.iter().map(|a| a.total).sum();
        assert_eq!(total, 16740);
    }

    #[test]
    fn parse_round_trips_the_embedded_table() {
        let studies = group_studies(&smoking_trials()).unwrap();
        let mut text = String::from("study,design,treatment,events,total\n");
        for s in &studies {
            for a in &s.arms {
                text.push_str(&format!(
                    "{},{},{},{},{}\n",
                    a.study,
                    s.design(),
                    a.treatment,
                    a.events,
                    a.total
                ));
            }
        }
        let parsed = parse_trials(&text).unwrap();
        assert_eq!(parsed, smoking_trials());
        assert!(matches!(
            parse_trials("study,design\n1,AB"),
            Err(NmaError::BadData(_))
        ));
    }

    #[test]
    fn common_effect_graph_has_consistency_functionals() {
        let m = build_nma_graph(&smoking_trials(), &NmaSpec::default()).unwrap();
        // 3 basis + 24 intercepts latent; 3 functionals; 50 response means.
        assert_eq!(m.graph.latent_names().len(), 27);
        assert_eq!(m.graph.observed_names().len(), 50);
        assert!(m.blocks.is_empty());
        let bc = m.graph.get("eta_BC").unwrap();
        match &bc.spec {
            NodeSpec::Deterministic(e) => assert_eq!(format!("{e}"), "eta_AC - eta_AB"),
            other => panic!("eta_BC should be deterministic, got {other:?}"),
        }
        // Relative effects stay additive along any cycle.
        let mut latent = IndexMap::new();
        for n in m.graph.latent_names() {
            latent.insert(n.to_string(), 0.3 + n.len() as f64 * 0.17);
        }
        latent.insert("eta_AB".into(), 0.7);
        latent.insert("eta_AC".into(), -1.1);
        latent.insert("eta_AD".into(), 2.3);
        let v = m.graph.eval_values(&latent);
        assert!((v["eta_BC"] + v["eta_CD"] - v["eta_BD"]).abs() < 1e-12);
        assert!((v["eta_BD"] - (2.3 - 0.7)).abs() < 1e-12);
    }

    #[test]
    fn random_effects_use_sequential_conditionals() {
        let spec = NmaSpec { effect_model: EffectModel::Random, ..NmaSpec::default() };
        let m = build_nma_graph(&smoking_trials(), &spec).unwrap();
        // One trial effect per non-baseline arm.
        let deltas = m
            .graph
            .latent_names()
            .iter()
            .filter(|n| n.starts_with("delta_"))
            .count();
        assert_eq!(deltas, 26);
        assert_eq!(
            m.blocks,
            vec![
                ids(&["delta_18_C", "delta_18_D"]),
                ids(&["delta_21_C", "delta_21_D"])
            ]
        );
        let seq = m.graph.get("sigma_seq2").unwrap();
        match &seq.spec {
            NodeSpec::Deterministic(e) => {
                assert_eq!(format!("{e}"), "sigma * 0.8660254037844386")
            }
            other => panic!("sigma_seq2 should be deterministic, got {other:?}"),
        }
        let mu = m.graph.get("mu_18_D").unwrap();
        let refs: BTreeSet<&str> = match &mu.spec {
            NodeSpec::Deterministic(e) => e.refs().into_iter().collect(),
            other => panic!("mu_18_D should be deterministic, got {other:?}"),
        };
        assert_eq!(refs, BTreeSet::from(["eta_AD", "delta_18_C", "eta_AC"]));
    }

    #[test]
    fn sequential_form_restores_exchangeable_moments() {
        let spec = NmaSpec { effect_model: EffectModel::Random, ..NmaSpec::default() };
        let m = build_nma_graph(&smoking_trials(), &spec).unwrap();
        let sigma = 1.7;
        let mut values: IndexMap<String, f64> = IndexMap::new();
        for n in m.graph.latent_names() {
            values.insert(n.to_string(), 0.0);
        }
        values.insert("sigma".into(), sigma);
        let base = m.graph.eval_values(&values);
        let dist_c = m.graph.get("delta_18_C").unwrap().distribution().unwrap().clone();
        let mu_d = match &m.graph.get("mu_18_D").unwrap().spec {
            NodeSpec::Deterministic(e) => e.clone(),
            _ => unreachable!(),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = 200_000;
        let (mut sc, mut sd_, mut scc, mut sdd, mut scd) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let mut env = base.clone();
            let dc = dist_c.sample(&mut rng, &|k: &str| env[k]).unwrap();
            env.insert("delta_18_C".into(), dc);
            let mu = mu_d.eval(&|k: &str| env[k]);
            let dd = Distribution::Normal {
                mean: Param::Const(mu),
                sd: Param::node("sigma_seq2"),
            }
            .sample(&mut rng, &|k: &str| env[k])
            .unwrap();
            sc += dc;
            sd_ += dd;
            scc += dc * dc;
            sdd += dd * dd;
            scd += dc * dd;
        }
        let nf = n as f64;
        let var_c = scc / nf - (sc / nf).powi(2);
        let var_d = sdd / nf - (sd_ / nf).powi(2);
        let cov = scd / nf - (sc / nf) * (sd_ / nf);
        let s2 = sigma * sigma;
        assert!((var_c / s2 - 1.0).abs() < 0.02, "var_c/s2 = {}", var_c / s2);
        assert!((var_d / s2 - 1.0).abs() < 0.02, "var_d/s2 = {}", var_d / s2);
        assert!((cov / s2 - 0.5).abs() < 0.01, "cov/s2 = {}", cov / s2);
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let arms = vec![
            TrialArm::new("1", "A", 5, 50),
            TrialArm::new("1", "B", 8, 50),
            TrialArm::new("2", "C", 5, 50),
            TrialArm::new("2", "D", 8, 50),
        ];
        match build_nma_graph(&arms, &NmaSpec::default()) {
            Err(NmaError::Disconnected { treatment, .. }) => {
                assert!(treatment == "C" || treatment == "D")
            }
            other => panic!("expected Disconnected, got {other:?}"),
        }
    }

    fn star_tree() -> Vec<(String, String)> {
        edges(&[("A", "B"), ("A", "C"), ("A", "D")])
    }

    #[test]
    fn standard_schemes_recover_known_study_groupings() {
        let arms = smoking_trials();
        let schemes = enumerate_schemes(&arms, &star_tree()).unwrap();
        assert_eq!(schemes.len(), 3);
        assert!(schemes.iter().all(|s| !s.degenerate));
        let m = build_nma_graph(&arms, &NmaSpec::default()).unwrap();

        let parts_b = assign_partitions(&m, &schemes[0], &schemes[0].tree).unwrap();
        let st = ids(&[
            "1", "2", "3", "4", "5", "6", "7", "8", "9", "10", "11", "12", "13", "14", "15",
            "16", "17", "19",
        ]);
        let de = ids(&["20", "22", "23", "24"]);
        let mut st_b = st.clone();
        st_b.extend(ids(&["18", "21"]));
        // Partition contents match regardless of ordering.
        let sort = |mut v: Vec<String>| {
            v.sort();
            v
        };
        assert_eq!(sort(parts_b[0].clone()), sort(st_b));
        assert_eq!(sort(parts_b[1].clone()), sort(de.clone()));

        let parts_c = assign_partitions(&m, &schemes[1], &schemes[1].tree).unwrap();
        let mut de_c = de.clone();
        de_c.extend(ids(&["18", "21"]));
        assert_eq!(sort(parts_c[0].clone()), sort(st.clone()));
        assert_eq!(sort(parts_c[1].clone()), sort(de_c));

        let parts_d = assign_partitions(&m, &schemes[2], &schemes[2].tree).unwrap();
        assert_eq!(parts_d.len(), 4);
        assert_eq!(sort(parts_d[0].clone()), sort(st));
        assert_eq!(sort(parts_d[1].clone()), sort(ids(&["20", "22"])));
        assert_eq!(sort(parts_d[2].clone()), sort(ids(&["23", "24"])));
        assert_eq!(sort(parts_d[3].clone()), sort(ids(&["18", "21"])));
    }

    #[test]
    fn two_way_split_builds_founder_copies_everywhere() {
        let spec = NmaSpec { effect_model: EffectModel::Random, ..NmaSpec::default() };
        let m = build_nma_graph(&smoking_trials(), &spec).unwrap();
        let scheme = PartitionScheme {
            kind: SchemeKind::TwoWay,
            tree: star_tree(),
            multi_arm: MultiArmPlacement::WithIndirect,
            share_variance: true,
            degenerate: false,
        };
        let ns = split_nma(&m, &scheme).unwrap();
        // Six comparisons copied into both partitions.
        assert_eq!(ns.model.copies.len(), 12);
        let labels: Vec<&str> = ns.model.contrasts.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, vec!["eta_BC:1-2", "eta_BD:1-2", "eta_CD:1-2"]);
        // Basis copies are severed diffuse normals even off their home turf.
        let ab2 = ns.model.graph.get("eta_AB@2").unwrap();
        match ab2.distribution() {
            Some(Distribution::Normal { sd, .. }) => assert_eq!(sd.as_const(), Some(10.0)),
            other => panic!("eta_AB@2 should be a diffuse normal, got {other:?}"),
        }
        // Off-tree comparisons are tree functionals in every partition.
        assert!(matches!(
            ns.model.graph.get("eta_BC@1").unwrap().spec,
            NodeSpec::Deterministic(_)
        ));
        // One heterogeneity sd for the whole graph.
        assert!(ns.model.graph.get("sigma").is_some());
        assert!(ns.model.graph.get("sigma@1").is_none());
        assert_eq!(
            ns.blocks,
            vec![
                ids(&["delta_18_C@1", "delta_18_D@1"]),
                ids(&["delta_21_C@1", "delta_21_D@1"])
            ]
        );
    }

    #[test]
    fn sequential_split_contrasts_against_partition_one() {
        let m = build_nma_graph(&smoking_trials(), &NmaSpec::default()).unwrap();
        let scheme = PartitionScheme {
            kind: SchemeKind::SequentialTrees,
            tree: star_tree(),
            multi_arm: MultiArmPlacement::Separate,
            share_variance: true,
            degenerate: false,
        };
        let ns = split_nma(&m, &scheme).unwrap();
        assert_eq!(ns.partition_studies.len(), 4);
        let labels: Vec<&str> = ns.model.contrasts.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "eta_BC:1-2",
                "eta_BC:1-3",
                "eta_BC:1-4",
                "eta_BD:1-2",
                "eta_BD:1-3",
                "eta_BD:1-4",
                "eta_CD:1-2",
                "eta_CD:1-3",
                "eta_CD:1-4",
            ]
        );
    }

    #[test]
    fn alternative_tree_rebuilds_functionals_from_paths() {
        let m = build_nma_graph(&smoking_trials(), &NmaSpec::default()).unwrap();
        let scheme = PartitionScheme {
            kind: SchemeKind::TwoWay,
            tree: edges(&[("A", "B"), ("A", "C"), ("B", "D")]),
            multi_arm: MultiArmPlacement::WithIndirect,
            share_variance: true,
            degenerate: false,
        };
        let ns = split_nma(&m, &scheme).unwrap();
        let lookup = |n: &str| match n {
            "eta_AB" => 1.0,
            "eta_AC" => 2.0,
            "eta_BD" => 5.0,
            other => panic!("unexpected ref {other}"),
        };
        let define_of = |node: &str| -> Expr {
            let s = ns.spec.separators.iter().find(|s| s.node == node).unwrap();
            assert!(s.contrast);
            match &s.copies[0].1 {
                CopyRole::Define(e) => e.clone(),
                other => panic!("{node} should be Define, got {other:?}"),
            }
        };
        assert!((define_of("eta_AD").eval(&lookup) - 6.0).abs() < 1e-12);
        assert!((define_of("eta_CD").eval(&lookup) - 4.0).abs() < 1e-12);
        // Tree edges are not contrasted, off-tree ones are.
        let by_contrast = |want: bool| -> BTreeSet<&str> {
            ns.spec
                .separators
                .iter()
                .filter(|s| s.contrast == want)
                .map(|s| s.node.as_str())
                .collect()
        };
        assert_eq!(by_contrast(false), BTreeSet::from(["eta_AB", "eta_AC", "eta_BD"]));
        assert_eq!(by_contrast(true), BTreeSet::from(["eta_AD", "eta_BC", "eta_CD"]));
        // Arm predictors ride the carriers: a CD trial informs the eta_BD
        // and eta_AC copies, the AD trial informs eta_BD alone.
        let arm_refs = |name: &str| -> BTreeSet<String> {
            match &ns.model.graph.get(name).unwrap().spec {
                NodeSpec::Deterministic(e) => e.refs().into_iter().map(str::to_string).collect(),
                other => panic!("{name} should be deterministic, got {other:?}"),
            }
        };
        let cd = arm_refs("p_23_D@2");
        assert!(cd.contains("eta_BD@2") && cd.contains("eta_AC@2"));
        assert!(!cd.contains("eta_CD@2"));
        let ad = arm_refs("p_19_D@2");
        assert!(ad.contains("eta_BD@2") && !ad.contains("eta_AB@2"));
        let bd = arm_refs("p_22_D@1");
        assert!(bd.contains("eta_BD@1") && bd.contains("eta_AB@1"));
    }

    #[test]
    fn unshared_variance_adds_log_scale_sd_contrasts() {
        let spec = NmaSpec { effect_model: EffectModel::Random, ..NmaSpec::default() };
        let m = build_nma_graph(&smoking_trials(), &spec).unwrap();
        let scheme = PartitionScheme {
            kind: SchemeKind::TwoWay,
            tree: star_tree(),
            multi_arm: MultiArmPlacement::WithDirect,
            share_variance: false,
            degenerate: false,
        };
        let ns = split_nma(&m, &scheme).unwrap();
        assert!(ns.model.graph.get("sigma@1").is_some());
        assert!(ns.model.graph.get("sigma@2").is_some());
        let sd_contrast = ns.model.contrasts.iter().find(|c| c.name == "sigma").unwrap();
        assert_eq!(sd_contrast.transform, Transform::Log);
        assert_eq!(sd_contrast.label, "sigma:1-2");
    }

    #[test]
    fn direct_indirect_split_rewires_only_the_target_comparison() {
        let m = build_nma_graph(&smoking_trials(), &NmaSpec::default()).unwrap();
        let ns = single_node_split(&m, "B", "C").unwrap();
        assert_eq!(
            ns.partition_studies[1].1,
            ids(&["20", "21"])
        );
        assert!(ns.model.graph.get("eta_BC_dir").is_some());
        let refs_of = |name: &str| -> BTreeSet<String> {
            match &ns.model.graph.get(name).unwrap().spec {
                NodeSpec::Deterministic(e) => {
                    e.refs().into_iter().map(str::to_string).collect()
                }
                other => panic!("{name} should be deterministic, got {other:?}"),
            }
        };
        // Both direct trials have baseline B, so the C arm takes the fresh
        // effect alone and the D arm keeps the consistency basis.
        assert!(refs_of("p_20_C").contains("eta_BC_dir"));
        assert!(refs_of("p_21_C").contains("eta_BC_dir"));
        assert!(refs_of("p_21_D").contains("eta_BD"));
        assert!(!refs_of("p_21_D").contains("eta_BC_dir"));
        // Indirect trials are untouched.
        assert!(refs_of("p_4_C").contains("eta_AC"));
        assert_eq!(ns.model.contrasts[0].label, "eta_BC:dir-ind");
        assert_eq!(ns.model.contrasts[0].minuend, "eta_BC_dir");

        // A comparison with no direct trials cannot be split.
        let chain = vec![
            TrialArm::new("1", "A", 5, 50),
            TrialArm::new("1", "B", 8, 50),
            TrialArm::new("2", "B", 5, 50),
            TrialArm::new("2", "C", 8, 50),
        ];
        let m2 = build_nma_graph(&chain, &NmaSpec::default()).unwrap();
        assert!(matches!(
            single_node_split(&m2, "A", "C"),
            Err(NmaError::NoDirectEvidence(_, _))
        ));
    }

    #[test]
    fn multi_arm_direct_split_routes_through_the_low_treatment() {
        // Splitting C-D: trial 18 has baseline A, so its D arm must read
        // eta_AC + eta_CD_dir.
        let m = build_nma_graph(&smoking_trials(), &NmaSpec::default()).unwrap();
        let ns = single_node_split(&m, "C", "D").unwrap();
        assert_eq!(ns.partition_studies[1].1, ids(&["18", "21", "23", "24"]));
        let p = ns.model.graph.get("p_18_D").unwrap();
        let refs: BTreeSet<&str> = match &p.spec {
            NodeSpec::Deterministic(e) => e.refs().into_iter().collect(),
            _ => unreachable!(),
        };
        assert!(refs.contains("eta_AC") && refs.contains("eta_CD_dir"));
        assert!(!refs.contains("eta_AD"));
    }
}
