//! Text model configuration.
//!
//! Models and splits are read from TOML with sections `[[nodes]]`,
//! `[[observations]]` and `[split]` mirroring the in-memory types. The
//! canonical form orders nodes topologically (names break ties), so equal
//! graphs serialise to byte-identical text and the writer round-trips
//! bit-exactly through the parser.

use super::split::{CopyRole, PartitionDef, SeparatorSpec, SplitSpec, Transform};
use super::{parse_expr, Distribution, GraphIssue, ModelGraph, NodeDef, NodeSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("configuration does not parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("node '{node}': {reason}")]
    NodeShape { node: String, reason: String },
    #[error("node '{node}' expression: {source}")]
    Expr { node: String, source: super::ExprParseError },
    #[error("separator '{node}' copy for partition '{partition}': {reason}")]
    CopyShape { node: String, partition: String, reason: String },
    #[error("observation targets unknown or non-stochastic node: {0}")]
    BadObservation(#[from] GraphIssue),
    #[error("invalid model: {}", issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { issues: Vec<GraphIssue> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NodeConfig {
    name: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    dist: Option<Distribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expr: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ObservationConfig {
    node: String,
    value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionConfig {
    name: String,
    #[serde(default)]
    observed: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CopyConfig {
    partition: String,
    role: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    prior: Option<Distribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expr: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeparatorConfig {
    node: String,
    transform: Transform,
    #[serde(default = "yes")]
    contrast: bool,
    #[serde(default)]
    copies: Vec<CopyConfig>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    shared_nodes: Vec<String>,
    partitions: Vec<PartitionConfig>,
    separators: Vec<SeparatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contrast_pairs: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelConfig {
    nodes: Vec<NodeConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    observations: Vec<ObservationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitConfig>,
}

/// Parses a model (and optional split) from configuration text. The returned
/// graph has passed validation.
pub fn parse_model(text: &str) -> Result<(ModelGraph, Option<SplitSpec>), ConfigError> {
    let cfg: ModelConfig = toml::from_str(text)?;
    let mut g = ModelGraph::new();
    for nc in &cfg.nodes {
        let spec = match (&nc.dist, &nc.expr) {
            (Some(d), None) => NodeSpec::Stochastic(d.clone()),
            (None, Some(e)) => NodeSpec::Deterministic(
                parse_expr(e).map_err(|source| ConfigError::Expr { node: nc.name.clone(), source })?,
            ),
            (Some(_), Some(_)) => {
                return Err(ConfigError::NodeShape {
                    node: nc.name.clone(),
                    reason: "has both dist and expr".into(),
                })
            }
            (None, None) => {
                return Err(ConfigError::NodeShape {
                    node: nc.name.clone(),
                    reason: "needs either dist or expr".into(),
                })
            }
        };
        g.add(NodeDef { name: nc.name.clone(), spec, observed: None });
    }
    for obs in &cfg.observations {
        g.observe(&obs.node, obs.value)?;
    }
    g.validate().map_err(|issues| ConfigError::Invalid { issues })?;
    let split = cfg.split.as_ref().map(split_from_config).transpose()?;
    Ok((g, split))
}

fn split_from_config(sc: &SplitConfig) -> Result<SplitSpec, ConfigError> {
    let mut separators = Vec::with_capacity(sc.separators.len());
    for s in &sc.separators {
        let mut copies = Vec::with_capacity(s.copies.len());
        for c in &s.copies {
            let role = match c.role.as_str() {
                "derived" => CopyRole::Derived,
                "founder" => CopyRole::Founder(c.prior.clone()),
                "define" => {
                    let text = c.expr.as_deref().ok_or_else(|| ConfigError::CopyShape {
                        node: s.node.clone(),
                        partition: c.partition.clone(),
                        reason: "define role needs an expr".into(),
                    })?;
                    CopyRole::Define(parse_expr(text).map_err(|source| ConfigError::Expr {
                        node: s.node.clone(),
                        source,
                    })?)
                }
                other => {
                    return Err(ConfigError::CopyShape {
                        node: s.node.clone(),
                        partition: c.partition.clone(),
                        reason: format!("unknown role '{other}'"),
                    })
                }
            };
            copies.push((c.partition.clone(), role));
        }
        separators.push(SeparatorSpec {
            node: s.node.clone(),
            transform: s.transform,
            copies,
            contrast: s.contrast,
        });
    }
    Ok(SplitSpec {
        partitions: sc
            .partitions
            .iter()
            .map(|p| PartitionDef { name: p.name.clone(), observed: p.observed.clone() })
            .collect(),
        separators,
        shared_nodes: sc.shared_nodes.clone(),
        contrast_pairs: sc.contrast_pairs.clone(),
    })
}

fn split_to_config(spec: &SplitSpec) -> SplitConfig {
    SplitConfig {
        shared_nodes: spec.shared_nodes.clone(),
        partitions: spec
            .partitions
            .iter()
            .map(|p| PartitionConfig { name: p.name.clone(), observed: p.observed.clone() })
            .collect(),
        separators: spec
            .separators
            .iter()
            .map(|s| SeparatorConfig {
                node: s.node.clone(),
                transform: s.transform,
                contrast: s.contrast,
                copies: s
                    .copies
                    .iter()
                    .map(|(partition, role)| match role {
                        CopyRole::Derived => CopyConfig {
                            partition: partition.clone(),
                            role: "derived".into(),
                            prior: None,
                            expr: None,
                        },
                        CopyRole::Founder(prior) => CopyConfig {
                            partition: partition.clone(),
                            role: "founder".into(),
                            prior: prior.clone(),
                            expr: None,
                        },
                        CopyRole::Define(e) => CopyConfig {
                            partition: partition.clone(),
                            role: "define".into(),
                            prior: None,
                            expr: Some(e.to_string()),
                        },
                    })
                    .collect(),
            })
            .collect(),
        contrast_pairs: spec.contrast_pairs.clone(),
    }
}

/// Canonical configuration text: nodes in topological order with names
/// breaking ties, observations in node order, observed values as written by
/// the shortest round-trip float format.
pub fn canonical_model(g: &ModelGraph, split: Option<&SplitSpec>) -> Result<String, ConfigError> {
    let order = g
        .topo_order_by_name()
        .map_err(|issue| ConfigError::Invalid { issues: vec![issue] })?;
    let mut nodes = Vec::with_capacity(g.len());
    let mut observations = Vec::new();
    for idx in order {
        let def = g.node_at(idx);
        nodes.push(match &def.spec {
            NodeSpec::Stochastic(d) => {
                NodeConfig { name: def.name.clone(), dist: Some(d.clone()), expr: None }
            }
            NodeSpec::Deterministic(e) => {
                NodeConfig { name: def.name.clone(), dist: None, expr: Some(e.to_string()) }
            }
        });
        if let Some(v) = def.observed {
            observations.push(ObservationConfig { node: def.name.clone(), value: v });
        }
    }
    let cfg = ModelConfig { nodes, observations, split: split.map(split_to_config) };
    Ok(toml::to_string(&cfg).expect("model config serialises"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Param;

    fn chain_graph() -> ModelGraph {
        let mut g = ModelGraph::new();
        g.stochastic(
            "mu",
            Distribution::Normal { mean: Param::Const(0.0), sd: Param::Const(10.0) },
        )
        .deterministic("double_mu", parse_expr("2 * mu").unwrap())
        .observed(
            "y",
            Distribution::Normal { mean: Param::node("double_mu"), sd: Param::Const(1.0) },
            1.5,
        );
        g
    }

    fn chain_split() -> SplitSpec {
        SplitSpec {
            partitions: vec![
                PartitionDef { name: "a".into(), observed: vec!["y".into()] },
                PartitionDef { name: "b".into(), observed: vec![] },
            ],
            separators: vec![SeparatorSpec {
                contrast: true,
                node: "mu".into(),
                transform: Transform::Identity,
                copies: vec![
                    ("a".into(), CopyRole::Derived),
                    (
                        "b".into(),
                        CopyRole::Founder(Some(Distribution::Normal {
                            mean: Param::Const(0.0),
                            sd: Param::Const(100.0),
                        })),
                    ),
                ],
            }],
            shared_nodes: vec![],
            contrast_pairs: Some(vec![(0, 1)]),
        }
    }

    #[test]
    fn canonical_text_round_trips_bit_exactly() {
        let g = chain_graph();
        let split = chain_split();
        let text = canonical_model(&g, Some(&split)).unwrap();
        let (g2, split2) = parse_model(&text).unwrap();
        let text2 = canonical_model(&g2, split2.as_ref()).unwrap();
        assert_eq!(text, text2);
        assert_eq!(split2.unwrap(), split);
        assert_eq!(g2.get("y").unwrap().observed, Some(1.5));
    }

    #[test]
    fn equal_graphs_built_in_different_order_serialise_identically() {
        let g1 = chain_graph();
        let mut g2 = ModelGraph::new();
        // Same nodes, declaration order scrambled.
        g2.observed(
            "y",
            Distribution::Normal { mean: Param::node("double_mu"), sd: Param::Const(1.0) },
            1.5,
        )
        .deterministic("double_mu", parse_expr("2 * mu").unwrap())
        .stochastic(
            "mu",
            Distribution::Normal { mean: Param::Const(0.0), sd: Param::Const(10.0) },
        );
        let t1 = canonical_model(&g1, None).unwrap();
        let t2 = canonical_model(&g2, None).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn parses_handwritten_configuration() {
        let text = r#"
[[nodes]]
name = "rho"
dist = "uniform"
lower = 0.0
upper = 1.0

[[nodes]]
name = "scaled"
expr = "logit(rho)"

[[nodes]]
name = "y"
dist = "binomial"
trials = 1536.0
prob = "rho"

[[observations]]
node = "y"
value = 35.0
"#;
        let (g, split) = parse_model(text).unwrap();
        assert!(split.is_none());
        assert_eq!(g.len(), 3);
        assert_eq!(g.get("y").unwrap().observed, Some(35.0));
        assert!(matches!(
            g.get("rho").unwrap().spec,
            NodeSpec::Stochastic(Distribution::Uniform { .. })
        ));
    }

    #[test]
    fn shape_errors_are_reported() {
        let both = r#"
[[nodes]]
name = "x"
dist = "jeffreys_rate"
expr = "1 + 1"
"#;
        assert!(matches!(parse_model(both), Err(ConfigError::NodeShape { .. })));

        let neither = r#"
[[nodes]]
name = "x"
"#;
        assert!(matches!(parse_model(neither), Err(ConfigError::NodeShape { .. })));

        let dangling = r#"
[[nodes]]
name = "x"
dist = "poisson"
rate = "missing"
"#;
        assert!(matches!(parse_model(dangling), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn founder_without_prior_keeps_default_semantics() {
        let text = r#"
[[nodes]]
name = "theta"
dist = "uniform"
lower = 0.0
upper = 1.0

[[nodes]]
name = "y1"
dist = "bernoulli"
prob = "theta"

[[nodes]]
name = "y2"
dist = "bernoulli"
prob = "theta"

[[observations]]
node = "y1"
value = 1.0

[[observations]]
node = "y2"
value = 0.0

[split]
[[split.partitions]]
name = "p"
observed = ["y1"]

[[split.partitions]]
name = "q"
observed = ["y2"]

[[split.separators]]
node = "theta"
transform = "logit"
copies = [
    { partition = "p", role = "derived" },
    { partition = "q", role = "founder" },
]
"#;
        let (_, split) = parse_model(text).unwrap();
        let split = split.unwrap();
        assert_eq!(split.separators[0].copies[1].1, CopyRole::Founder(None));
    }
}
