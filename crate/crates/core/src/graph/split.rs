//! Splitting a model into partitions at separator nodes.
//!
//! The split assigns each observed node to one partition, then gives every
//! partition its own copy of each ancestor it needs. A separator's copy can
//! keep its original definition (`Derived`), become a founder with a fresh
//! prior severing its parents (`Founder`), or be redefined by an expression
//! over other copies in the same partition (`Define`). Nodes in
//! `shared_nodes` stay as a single instance visible to every partition, so
//! with that list empty the partitions are disjoint sub-graphs.
//!
//! Copy naming: the copy of node `n` in partition `q` is `n@q`. Observed and
//! shared nodes keep their original names.

use super::{Distribution, Expr, GraphIssue, ModelGraph, NodeDef, NodeSpec};
use serde::{Deserialize, Serialize};

/// Scale on which a separator's copies are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Logit,
    Log,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Logit => (x / (1.0 - x)).ln(),
            Transform::Log => x.ln(),
        }
    }

    pub fn label(self, inner: &str) -> String {
        match self {
            Transform::Identity => inner.to_string(),
            Transform::Logit => format!("logit({inner})"),
            Transform::Log => format!("log({inner})"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Logit => "logit",
            Transform::Log => "log",
        }
    }
}

/// How one copy of a separator is defined within its partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CopyRole {
    /// Keep the original definition (prior or deterministic expression).
    Derived,
    /// Sever parents and place a fresh prior on the copy. `None` picks a
    /// default from the separator's transform: Beta(1/2, 1/2) under logit,
    /// the Jeffreys rate prior under log, and a flat improper prior under
    /// identity (the last is flagged in the split result).
    Founder(Option<Distribution>),
    /// Redefine the copy as a function of other copies in the partition.
    Define(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorSpec {
    pub node: String,
    pub transform: Transform,
    /// (partition name, role) for each partition holding a copy. Contrast
    /// pairs follow partition declaration order.
    pub copies: Vec<(String, CopyRole)>,
    /// Copies can anchor a reparameterisation without being compared, e.g.
    /// basis parameters duplicated per partition. Only separators with
    /// `contrast` set produce rows of the difference vector.
    #[serde(default = "default_true")]
    pub contrast: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDef {
    pub name: String,
    /// Observed nodes whose likelihood terms belong to this partition.
    pub observed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub partitions: Vec<PartitionDef>,
    pub separators: Vec<SeparatorSpec>,
    /// Nodes held common across partitions, e.g. a shared variance.
    pub shared_nodes: Vec<String>,
    /// Restrict contrasts to these partition-index pairs. `None` compares
    /// every pair of partitions that both hold a copy.
    pub contrast_pairs: Option<Vec<(usize, usize)>>,
}

impl SplitSpec {
    pub fn partition_index(&self, name: &str) -> Option<usize> {
        self.partitions.iter().position(|p| p.name == name)
    }
}

/// One materialised copy of a separator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorCopy {
    pub separator: usize,
    pub partition: usize,
    /// Node name in the split graph.
    pub node: String,
    /// True when the copy fell back to the flat improper default prior.
    pub improper_default: bool,
}

/// One enumerated contrast: transform(minuend) - transform(subtrahend).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastDef {
    pub separator: usize,
    pub name: String,
    pub transform: Transform,
    pub pair: (usize, usize),
    pub minuend: String,
    pub subtrahend: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitModel {
    pub graph: ModelGraph,
    pub partition_names: Vec<String>,
    /// Split-graph node names belonging to each partition, declaration order.
    pub partition_nodes: Vec<Vec<String>>,
    pub shared_nodes: Vec<String>,
    pub copies: Vec<SeparatorCopy>,
    pub contrasts: Vec<ContrastDef>,
}

impl SplitModel {
    /// Copies per partition, indexed like `partition_names`.
    pub fn copies_per_partition(&self) -> Vec<usize> {
        let mut m = vec![0usize; self.partition_names.len()];
        for c in &self.copies {
            m[c.partition] += 1;
        }
        m
    }

    pub fn copy_count(&self) -> usize {
        self.copies.len()
    }

    pub fn copy_node(&self, separator: usize, partition: usize) -> Option<&str> {
        self.copies
            .iter()
            .find(|c| c.separator == separator && c.partition == partition)
            .map(|c| c.node.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("split references unknown node '{0}'")]
    UnknownNode(String),
    #[error("partition '{partition}' lists '{node}', which is not an observed node")]
    NotObserved { partition: String, node: String },
    #[error("observed node '{0}' is assigned to more than one partition")]
    DuplicateAssignment(String),
    #[error("separator '{0}' is an observed node")]
    InvalidSeparator(String),
    #[error("copy of '{separator}' names unknown partition '{partition}'")]
    UnknownPartition { separator: String, partition: String },
    #[error("partition '{partition}' leaves '{node}' with an improper prior and no data below it")]
    UnidentifiablePartition { partition: String, node: String },
    #[error("shared node '{node}' is not self-contained: {reason}")]
    BadSharedNode { node: String, reason: String },
    #[error("duplicate partition name '{0}'")]
    DuplicatePartition(String),
    #[error("invalid model graph: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidGraph(Vec<GraphIssue>),
}

fn default_copy_prior(transform: Transform) -> (Distribution, bool) {
    match transform {
        Transform::Logit => (Distribution::JeffreysProportion, false),
        Transform::Log => (Distribution::JeffreysRate, false),
        Transform::Identity => (Distribution::ImproperFlat, true),
    }
}

/// Split `g` according to `spec`.
pub fn split(g: &ModelGraph, spec: &SplitSpec) -> Result<SplitModel, SplitError> {
    g.validate().map_err(SplitError::InvalidGraph)?;

    let mut seen_partitions: Vec<&str> = Vec::new();
    for p in &spec.partitions {
        if seen_partitions.contains(&p.name.as_str()) {
            return Err(SplitError::DuplicatePartition(p.name.clone()));
        }
        seen_partitions.push(&p.name);
    }

    let mut assigned: Vec<&str> = Vec::new();
    for p in &spec.partitions {
        for name in &p.observed {
            let node = g.get(name).ok_or_else(|| SplitError::UnknownNode(name.clone()))?;
            if !(node.is_stochastic() && node.observed.is_some()) {
                return Err(SplitError::NotObserved {
                    partition: p.name.clone(),
                    node: name.clone(),
                });
            }
            if assigned.contains(&name.as_str()) {
                return Err(SplitError::DuplicateAssignment(name.clone()));
            }
            assigned.push(name);
        }
    }

    for s in &spec.separators {
        let node = g.get(&s.node).ok_or_else(|| SplitError::UnknownNode(s.node.clone()))?;
        if node.observed.is_some() {
            return Err(SplitError::InvalidSeparator(s.node.clone()));
        }
        for (pname, _) in &s.copies {
            if spec.partition_index(pname).is_none() {
                return Err(SplitError::UnknownPartition {
                    separator: s.node.clone(),
                    partition: pname.clone(),
                });
            }
        }
    }

    for name in &spec.shared_nodes {
        let node = g.get(name).ok_or_else(|| SplitError::UnknownNode(name.clone()))?;
        match &node.spec {
            NodeSpec::Stochastic(d) => {
                for (pname, param) in d.params() {
                    if let Some(target) = param.as_node() {
                        if !spec.shared_nodes.iter().any(|s| s == target) {
                            return Err(SplitError::BadSharedNode {
                                node: name.clone(),
                                reason: format!(
                                    "parameter '{pname}' references non-shared node '{target}'"
                                ),
                            });
                        }
                    }
                }
            }
            NodeSpec::Deterministic(_) => {
                return Err(SplitError::BadSharedNode {
                    node: name.clone(),
                    reason: "deterministic nodes cannot be shared".to_string(),
                })
            }
        }
    }

    // Effective definition of a node inside one partition.
    enum Effective<'a> {
        Original(&'a NodeDef),
        Founder(Distribution, bool),
        Define(&'a Expr),
    }

    let is_shared = |n: &str| spec.shared_nodes.iter().any(|s| s == n);

    let mut partition_retained: Vec<Vec<String>> = Vec::new();
    let mut graph = ModelGraph::new();

    for name in &spec.shared_nodes {
        let node = g.get(name).unwrap();
        graph.add(node.clone());
    }

    let mut copies: Vec<SeparatorCopy> = Vec::new();
    let mut improper_defaults: Vec<(String, bool)> = Vec::new();

    for (qi, part) in spec.partitions.iter().enumerate() {
        let effective = |n: &str| -> Option<Effective<'_>> {
            for (si, s) in spec.separators.iter().enumerate() {
                if s.node == n {
                    if let Some((_, role)) = s.copies.iter().find(|(p, _)| p == &part.name) {
                        let _ = si;
                        return Some(match role {
                            CopyRole::Derived => Effective::Original(g.get(n)?),
                            CopyRole::Founder(Some(d)) => Effective::Founder(d.clone(), false),
                            CopyRole::Founder(None) => {
                                let (d, flagged) = default_copy_prior(s.transform);
                                Effective::Founder(d, flagged)
                            }
                            CopyRole::Define(e) => Effective::Define(e),
                        });
                    }
                }
            }
            g.get(n).map(Effective::Original)
        };

        // Ancestor closure from this partition's data and declared copies,
        // stopping at shared nodes and at severed founders.
        let mut retained: Vec<String> = Vec::new();
        let mut work: Vec<String> = part.observed.clone();
        for s in &spec.separators {
            if s.copies.iter().any(|(p, _)| p == &part.name) {
                work.push(s.node.clone());
            }
        }
        while let Some(n) = work.pop() {
            if is_shared(&n) || retained.contains(&n) {
                continue;
            }
            let eff = effective(&n).ok_or_else(|| SplitError::UnknownNode(n.clone()))?;
            retained.push(n.clone());
            let parents: Vec<String> = match &eff {
                Effective::Original(def) => {
                    def.parents().iter().map(|s| s.to_string()).collect()
                }
                Effective::Founder(d, _) => d
                    .params()
                    .iter()
                    .filter_map(|(_, p)| p.as_node().map(|s| s.to_string()))
                    .collect(),
                Effective::Define(e) => e.refs().iter().map(|s| s.to_string()).collect(),
            };
            for p in parents {
                work.push(p);
            }
        }

        // Emit in original declaration order under partition-suffixed names.
        let rename = |n: &str| -> String {
            if is_shared(n) {
                n.to_string()
            } else if g.get(n).map_or(false, |d| d.observed.is_some()) {
                n.to_string()
            } else {
                format!("{n}@{}", part.name)
            }
        };
        let mut emitted: Vec<String> = Vec::new();
        for node in g.iter() {
            if !retained.contains(&node.name) {
                continue;
            }
            let new_name = rename(&node.name);
            let spec_here = match effective(&node.name).unwrap() {
                Effective::Original(def) => match &def.spec {
                    NodeSpec::Stochastic(d) => NodeSpec::Stochastic(d.rename(&rename)),
                    NodeSpec::Deterministic(e) => NodeSpec::Deterministic(e.rename(&rename)),
                },
                Effective::Founder(d, flagged) => {
                    improper_defaults.push((new_name.clone(), flagged));
                    NodeSpec::Stochastic(d.rename(&rename))
                }
                Effective::Define(e) => NodeSpec::Deterministic(e.rename(&rename)),
            };
            graph.add(NodeDef {
                name: new_name.clone(),
                spec: spec_here,
                observed: g.get(&node.name).unwrap().observed,
            });
            emitted.push(new_name);
        }
        partition_retained.push(emitted);

        for (si, s) in spec.separators.iter().enumerate() {
            if s.copies.iter().any(|(p, _)| p == &part.name) {
                let node = rename(&s.node);
                let improper_default = improper_defaults
                    .iter()
                    .find(|(n, _)| n == &node)
                    .map_or(false, |(_, f)| *f);
                copies.push(SeparatorCopy { separator: si, partition: qi, node, improper_default });
            }
        }
    }

    graph.validate().map_err(SplitError::InvalidGraph)?;

    check_identification(&graph, spec, &partition_retained)?;

    // Copies in (separator, partition) order; contrasts lexicographic in
    // (separator, partition pair).
    copies.sort_by_key(|c| (c.separator, c.partition));
    let mut contrasts = Vec::new();
    for (si, s) in spec.separators.iter().enumerate() {
        if !s.contrast {
            continue;
        }
        let in_partitions: Vec<usize> =
            copies.iter().filter(|c| c.separator == si).map(|c| c.partition).collect();
        let pairs: Vec<(usize, usize)> = match &spec.contrast_pairs {
            Some(list) => list
                .iter()
                .copied()
                .filter(|(a, b)| in_partitions.contains(a) && in_partitions.contains(b))
                .collect(),
            None => {
                let mut all = Vec::new();
                for i in 0..in_partitions.len() {
                    for j in (i + 1)..in_partitions.len() {
                        all.push((in_partitions[i], in_partitions[j]));
                    }
                }
                all
            }
        };
        for (a, b) in pairs {
            let minuend = copies
                .iter()
                .find(|c| c.separator == si && c.partition == a)
                .unwrap()
                .node
                .clone();
            let subtrahend = copies
                .iter()
                .find(|c| c.separator == si && c.partition == b)
                .unwrap()
                .node
                .clone();
            let pa = &spec.partitions[a].name;
            let pb = &spec.partitions[b].name;
            contrasts.push(ContrastDef {
                separator: si,
                name: s.node.clone(),
                transform: s.transform,
                pair: (a, b),
                minuend,
                subtrahend,
                label: format!("{}:{}-{}", s.node, pa, pb),
            });
        }
    }

    Ok(SplitModel {
        graph,
        partition_names: spec.partitions.iter().map(|p| p.name.clone()).collect(),
        partition_nodes: partition_retained,
        shared_nodes: spec.shared_nodes.clone(),
        copies,
        contrasts,
    })
}

/// Improper priors need data below them inside their own partition.
fn check_identification(
    graph: &ModelGraph,
    spec: &SplitSpec,
    partition_nodes: &[Vec<String>],
) -> Result<(), SplitError> {
    for (qi, nodes) in partition_nodes.iter().enumerate() {
        let improper: Vec<&str> = nodes
            .iter()
            .filter_map(|n| {
                let def = graph.get(n)?;
                match (&def.spec, def.observed) {
                    (NodeSpec::Stochastic(d), None) if !d.is_proper() => Some(n.as_str()),
                    _ => None,
                }
            })
            .collect();
        if improper.is_empty() {
            continue;
        }
        for name in improper {
            let mut reach: Vec<&str> = vec![name];
            let mut found = false;
            let mut cursor = 0;
            while cursor < reach.len() && !found {
                let current = reach[cursor];
                cursor += 1;
                for cand in nodes {
                    let def = graph.get(cand).unwrap();
                    if def.parents().contains(&current) && !reach.contains(&cand.as_str()) {
                        if def.observed.is_some() {
                            found = true;
                            break;
                        }
                        reach.push(cand);
                    }
                }
            }
            if !found {
                return Err(SplitError::UnidentifiablePartition {
                    partition: spec.partitions[qi].name.clone(),
                    node: name.to_string(),
                });
            }
        }
    }
    Ok(())
}
