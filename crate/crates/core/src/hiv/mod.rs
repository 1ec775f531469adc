//! Multi-source prevalence synthesis: five data items inform three basic
//! proportions and a bounded count, tied together by an interval constraint.
//! Provides the full prior-vs-likelihood decomposition and the
//! cross-validatory leave-n-out splits.

use crate::graph::split::{
    split, CopyRole, PartitionDef, SeparatorSpec, SplitError, SplitModel, SplitSpec, Transform,
};
use crate::graph::{Distribution, Expr, ModelGraph, Param};
use crate::stats::{block_diagonal, maxt_adjust, AdjustSettings, ConflictReport, StatsError};
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HivError {
    #[error("leave-out count must be 1 or 2, got {0}")]
    BadN(usize),
    #[error("data problem: {0}")]
    BadData(String),
    #[error(transparent)]
    Split(#[from] SplitError),
}

/// Surveillance inputs. Defaults are the embedded case study: a fixed male
/// population, three proportion surveys, and two counts bounding the number
/// of diagnosed infections.
#[derive(Debug, Clone)]
pub struct HivData {
    pub population: f64,
    /// events/sample for the proportion at risk rho.
    pub y1: (u64, u64),
    /// events/sample for the diagnosed prevalence pi*kappa.
    pub y2: (u64, u64),
    /// events/sample for the undiagnosed prevalence pi*(1-kappa).
    pub y3: (u64, u64),
    /// count informing the lower bound D_L.
    pub y4: u64,
    /// count informing the upper bound D_U.
    pub y5: u64,
    /// Vague log-normal hyperparameters for both bounds.
    pub bound_log_mean: f64,
    pub bound_log_sd: f64,
}

impl Default for HivData {
    fn default() -> HivData {
        HivData {
            population: 15_749_944.0,
            y1: (35, 1536),
            y2: (113, 2840),
            y3: (136, 2725),
            y4: 836,
            y5: 5034,
            bound_log_mean: 3000f64.ln(),
            bound_log_sd: 10.0,
        }
    }
}

impl HivData {
    pub fn validate(&self) -> Result<(), HivError> {
        for (name, (y, n)) in [("y1", self.y1), ("y2", self.y2), ("y3", self.y3)] {
            if y > n || n == 0 {
                return Err(HivError::BadData(format!("{name}: {y} events out of {n}")));
            }
        }
        if self.population <= 0.0 {
            return Err(HivError::BadData("population must be positive".into()));
        }
        Ok(())
    }
}

/// rho, pi, kappa uniform; D = population * rho * pi * kappa; vague
/// log-normal bounds kept honest by an observed indicator datum.
pub fn build_hiv_graph(data: &HivData) -> Result<ModelGraph, HivError> {
    data.validate()?;
    let unit = Distribution::Uniform { lower: Param::Const(0.0), upper: Param::Const(1.0) };
    let vague = Distribution::LogNormal {
        log_mean: Param::Const(data.bound_log_mean),
        log_sd: Param::Const(data.bound_log_sd),
    };
    let mut g = ModelGraph::new();
    g.stochastic("rho", unit.clone());
    g.stochastic("pi", unit.clone());
    g.stochastic("kappa", unit);
    g.deterministic("pi_kappa", Expr::mul(Expr::node("pi"), Expr::node("kappa")));
    g.deterministic(
        "pi_1mk",
        Expr::mul(Expr::node("pi"), Expr::sub(Expr::constant(1.0), Expr::node("kappa"))),
    );
    g.deterministic(
        "D",
        Expr::mul(
            Expr::constant(data.population),
            Expr::mul(Expr::node("rho"), Expr::node("pi_kappa")),
        ),
    );
    g.stochastic("D_L", vague.clone());
    g.stochastic("D_U", vague);
    g.deterministic(
        "in_bounds",
        Expr::indicator(Expr::node("D_L"), Expr::node("D"), Expr::node("D_U")),
    );
    g.observed("constr", Distribution::Bernoulli { prob: Param::node("in_bounds") }, 1.0);
    let binom = |n: u64, p: &str| Distribution::Binomial {
        trials: Param::Const(n as f64),
        prob: Param::node(p),
    };
    g.observed("y1", binom(data.y1.1, "rho"), data.y1.0 as f64);
    g.observed("y2", binom(data.y2.1, "pi_kappa"), data.y2.0 as f64);
    g.observed("y3", binom(data.y3.1, "pi_1mk"), data.y3.0 as f64);
    g.observed("y4", Distribution::Poisson { rate: Param::node("D_L") }, data.y4 as f64);
    g.observed("y5", Distribution::Poisson { rate: Param::node("D_U") }, data.y5 as f64);
    debug_assert!(g.validate().is_ok());
    Ok(g)
}

/// (data item, node it directly informs, contrast scale, severed prior).
const SOURCES: [(&str, &str, Transform); 5] = [
    ("y1", "rho", Transform::Logit),
    ("y2", "pi_kappa", Transform::Logit),
    ("y3", "pi_1mk", Transform::Logit),
    ("y4", "D_L", Transform::Log),
    ("y5", "D_U", Transform::Log),
];

fn severed_prior(node: &str) -> Distribution {
    match node {
        "rho" | "pi_kappa" | "pi_1mk" => Distribution::JeffreysProportion,
        _ => Distribution::JeffreysRate,
    }
}

fn bounded_count() -> Distribution {
    Distribution::Uniform { lower: Param::node("D_L"), upper: Param::node("D_U") }
}

/// Prior model against each likelihood contribution separately. The counts
/// y4 and y5 share one partition so the bounded count D can be reconstructed
/// there. Contrasts subtract the likelihood-side copy from the prior-side
/// copy, on logit scale for proportions and log scale for counts.
pub fn saturated_split(g: &ModelGraph) -> Result<(SplitModel, SplitSpec), HivError> {
    let mut partitions = vec![PartitionDef { name: "p".into(), observed: vec!["constr".into()] }];
    partitions.extend([
        PartitionDef { name: "d1".into(), observed: vec!["y1".into()] },
        PartitionDef { name: "d2".into(), observed: vec!["y2".into()] },
        PartitionDef { name: "d3".into(), observed: vec!["y3".into()] },
        PartitionDef { name: "d4".into(), observed: vec!["y4".into(), "y5".into()] },
    ]);
    let pair = |node: &str, transform, part: &str, founder: Distribution| SeparatorSpec {
        node: node.into(),
        transform,
        contrast: true,
        copies: vec![
            ("p".into(), CopyRole::Derived),
            (part.into(), CopyRole::Founder(Some(founder))),
        ],
    };
    let mut separators: Vec<SeparatorSpec> = SOURCES
        .iter()
        .zip(["d1", "d2", "d3", "d4", "d4"])
        .map(|(&(_, node, t), part)| pair(node, t, part, severed_prior(node)))
        .collect();
    separators.push(pair("D", Transform::Log, "d4", bounded_count()));
    let spec = SplitSpec { partitions, separators, shared_nodes: vec![], contrast_pairs: None };
    let sm = split(g, &spec)?;
    Ok((sm, spec))
}

/// Parses a data override table: header `name,y,n,likelihood`, one row per
/// item. The three surveys need a sample size and `binomial`; the two counts
/// leave n blank with `poisson`; an optional `population` row (likelihood
/// `fixed`) replaces the default denominator.
pub fn parse_data(text: &str) -> Result<HivData, HivError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(str::trim) {
        Some("name,y,n,likelihood") => {}
        other => {
            return Err(HivError::BadData(format!(
                "expected header 'name,y,n,likelihood', got {other:?}"
            )))
        }
    }
    let mut d = HivData::default();
    let mut seen = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(HivError::BadData(format!("expected 4 fields: '{line}'")));
        }
        let bad = |what: &str| HivError::BadData(format!("{}: bad {what} in '{line}'", f[0]));
        let y: f64 = f[1].parse().map_err(|_| bad("count"))?;
        if y < 0.0 || y.fract() != 0.0 && f[0] != "population" {
            return Err(bad("count"));
        }
        let pair = || -> Result<(u64, u64), HivError> {
            if f[3] != "binomial" {
                return Err(bad("likelihood"));
            }
            Ok((y as u64, f[2].parse().map_err(|_| bad("sample size"))?))
        };
        let count = || -> Result<u64, HivError> {
            if f[3] != "poisson" || !f[2].is_empty() {
                return Err(bad("likelihood"));
            }
            Ok(y as u64)
        };
        match f[0] {
            "y1" => d.y1 = pair()?,
            "y2" => d.y2 = pair()?,
            "y3" => d.y3 = pair()?,
            "y4" => d.y4 = count()?,
            "y5" => d.y5 = count()?,
            "population" => {
                if f[3] != "fixed" || !f[2].is_empty() {
                    return Err(bad("likelihood"));
                }
                d.population = y;
            }
            other => return Err(HivError::BadData(format!("unknown item '{other}'"))),
        }
        if seen.contains(&f[0].to_string()) {
            return Err(HivError::BadData(format!("duplicate item '{}'", f[0])));
        }
        seen.push(f[0].to_string());
    }
    for need in ["y1", "y2", "y3", "y4", "y5"] {
        if !seen.iter().any(|s| s == need) {
            return Err(HivError::BadData(format!("missing item '{need}'")));
        }
    }
    d.validate()?;
    Ok(d)
}

/// The embedded case study in `parse_data` form.
pub fn data_table(d: &HivData) -> String {
    format!(
        "name,y,n,likelihood\n\
         y1,{},{},binomial\n\
         y2,{},{},binomial\n\
         y3,{},{},binomial\n\
         y4,{},,poisson\n\
         y5,{},,poisson\n\
         population,{},,fixed\n",
        d.y1.0, d.y1.1, d.y2.0, d.y2.1, d.y3.0, d.y3.1, d.y4, d.y5, d.population
    )
}

/// Which data items a cross-validatory model removes, and which nodes are
/// split as a result.
#[derive(Debug, Clone)]
pub struct LeaveOutSpec {
    pub label: String,
    pub n: usize,
    pub left_out: Vec<String>,
    pub split_nodes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LeaveOutModel {
    pub info: LeaveOutSpec,
    pub model: SplitModel,
    pub spec: SplitSpec,
}

/// All leave-one-out or leave-two-out splits, partition 1 holding the
/// left-out evidence under severed priors and partition 2 the remainder
/// under the original priors (constraint included).
///
/// Removing both prevalence surveys also splits pi and kappa, recovered in
/// partition 1 from the two severed prevalences. Removing both counts also
/// splits D, free between its bounds in partition 1 while partition 2 keeps
/// the deterministic definition.
pub fn leave_n_out_splits(g: &ModelGraph, n: usize) -> Result<Vec<LeaveOutModel>, HivError> {
    let sets: Vec<Vec<usize>> = match n {
        1 => (0..5).map(|i| vec![i]).collect(),
        // Pairs among the proportion surveys first, then survey-count pairs,
        // then the two counts.
        2 => vec![
            vec![0, 1],
            vec![0, 2],
            vec![1, 2],
            vec![0, 3],
            vec![0, 4],
            vec![1, 3],
            vec![1, 4],
            vec![2, 3],
            vec![2, 4],
            vec![3, 4],
        ],
        other => return Err(HivError::BadN(other)),
    };
    let mut out = Vec::with_capacity(sets.len());
    for (mi, set) in sets.iter().enumerate() {
        let label = char::from(b'A' + mi as u8).to_string();
        let left_out: Vec<String> = set.iter().map(|&i| SOURCES[i].0.to_string()).collect();
        let kept: Vec<String> = (0..5)
            .filter(|i| !set.contains(i))
            .map(|i| SOURCES[i].0.to_string())
            .chain(["constr".to_string()])
            .collect();
        let pair = |node: &str, transform, role1: CopyRole| SeparatorSpec {
            node: node.into(),
            transform,
            contrast: true,
            copies: vec![("1".into(), role1), ("2".into(), CopyRole::Derived)],
        };
        let mut separators: Vec<SeparatorSpec> = set
            .iter()
            .map(|&i| {
                let (_, node, t) = SOURCES[i];
                pair(node, t, CopyRole::Founder(Some(severed_prior(node))))
            })
            .collect();
        if set == &[1, 2] {
            // Both prevalence surveys gone: pi and kappa become estimable
            // from the severed copies alone.
            separators.push(pair(
                "pi",
                Transform::Logit,
                CopyRole::Define(Expr::add(Expr::node("pi_kappa"), Expr::node("pi_1mk"))),
            ));
            separators.push(pair(
                "kappa",
                Transform::Logit,
                CopyRole::Define(Expr::div(Expr::node("pi_kappa"), Expr::node("pi"))),
            ));
        }
        if set == &[3, 4] {
            separators.push(pair(
                "D",
                Transform::Log,
                CopyRole::Founder(Some(bounded_count())),
            ));
        }
        let split_nodes = separators.iter().map(|s| s.node.clone()).collect();
        let spec = SplitSpec {
            partitions: vec![
                PartitionDef { name: "1".into(), observed: left_out.clone() },
                PartitionDef { name: "2".into(), observed: kept },
            ],
            separators,
            shared_nodes: vec![],
            contrast_pairs: None,
        };
        let sm = split(g, &spec)?;
        out.push(LeaveOutModel {
            info: LeaveOutSpec { label, n, left_out, split_nodes },
            model: sm,
            spec,
        });
    }
    Ok(out)
}

/// How far multiplicity adjustment reaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjustScope {
    /// Each model's contrasts against their own joint null.
    Within,
    /// One joint null across every report passed, models independent.
    Pooled,
}

#[derive(Debug, Clone)]
pub struct AdjustedRow {
    pub model: String,
    pub contrast: String,
    pub p: f64,
}

/// Re-adjusts the contrasts of several fitted split models at a wider scope.
/// Cross-model correlations are unknown (the models share data), so pooling
/// treats models as independent blocks; results are exploratory.
pub fn adjust_across_models(
    reports: &[(String, &ConflictReport)],
    scope: AdjustScope,
    settings: &AdjustSettings,
) -> Result<Vec<AdjustedRow>, StatsError> {
    let mut rows = Vec::new();
    match scope {
        AdjustScope::Within => {
            for (model, rep) in reports {
                let z: Vec<f64> = rep.contrasts.iter().map(|c| c.z).collect();
                let r = corr_matrix(rep);
                let adj = maxt_adjust(&z, &r, settings)?;
                for (c, p) in rep.contrasts.iter().zip(adj.local) {
                    rows.push(AdjustedRow { model: model.clone(), contrast: c.label.clone(), p });
                }
            }
        }
        AdjustScope::Pooled => {
            let mut z = Vec::new();
            let mut blocks = Vec::new();
            for (_, rep) in reports {
                z.extend(rep.contrasts.iter().map(|c| c.z));
                blocks.push(corr_matrix(rep));
            }
            let r = block_diagonal(&blocks);
            let adj = maxt_adjust(&z, &r, settings)?;
            let mut k = 0;
            for (model, rep) in reports {
                for c in &rep.contrasts {
                    rows.push(AdjustedRow {
                        model: model.clone(),
                        contrast: c.label.clone(),
                        p: adj.local[k],
                    });
                    k += 1;
                }
            }
        }
    }
    Ok(rows)
}

fn corr_matrix(rep: &ConflictReport) -> DMatrix<f64> {
    let m = rep.correlation.len();
    DMatrix::from_fn(m, m, |i, j| rep.correlation[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeSpec;
    use crate::stats::{Chi2Result, ContrastRow, PvalueMethod};
    use crate::util::phi;
    use indexmap::IndexMap;

    fn feasible_point() -> IndexMap<String, f64> {
        IndexMap::from([
            ("rho".to_string(), 0.01),
            ("pi".to_string(), 0.08),
            ("kappa".to_string(), 0.4),
            ("D_L".to_string(), 3000.0),
            ("D_U".to_string(), 6000.0),
        ])
    }

    #[test]
    fn graph_links_every_source_to_its_parameter() {
        let g = build_hiv_graph(&HivData::default()).unwrap();
        assert_eq!(g.latent_names().len(), 5);
        assert_eq!(g.observed_names().len(), 6);
        let v = g.eval_values(&feasible_point());
        // D = N * rho * pi * kappa.
        let expect = 15_749_944.0 * 0.01 * 0.08 * 0.4;
        assert!((v["D"] - expect).abs() < 1e-6);
        assert_eq!(v["in_bounds"], 1.0);
        assert!(g.log_joint(&feasible_point()).is_finite());
    }

    #[test]
    fn constraint_vetoes_out_of_bound_counts() {
        let g = build_hiv_graph(&HivData::default()).unwrap();
        let mut pt = feasible_point();
        pt.insert("D_U".to_string(), 4000.0);
        // D ~ 5040 now exceeds the upper bound.
        assert_eq!(g.log_joint(&pt), f64::NEG_INFINITY);
    }

    #[test]
    fn bad_counts_are_rejected() {
        let bad = HivData { y1: (40, 30), ..HivData::default() };
        assert!(matches!(build_hiv_graph(&bad), Err(HivError::BadData(_))));
    }

    #[test]
    fn data_table_round_trips() {
        let d = HivData::default();
        let parsed = parse_data(&data_table(&d)).unwrap();
        assert_eq!(parsed.y1, d.y1);
        assert_eq!(parsed.y5, d.y5);
        assert_eq!(parsed.population, d.population);
        let partial = "name,y,n,likelihood\ny1,35,1536,binomial\n";
        assert!(matches!(parse_data(partial), Err(HivError::BadData(m)) if m.contains("y2")));
        assert!(parse_data("name,y,n,likelihood\ny1,35,1536,poisson\n").is_err());
        assert!(parse_data("n,y\n").is_err());
    }

    #[test]
    fn saturated_split_isolates_each_likelihood_term() {
        let g = build_hiv_graph(&HivData::default()).unwrap();
        let (sm, spec) = saturated_split(&g).unwrap();
        assert_eq!(sm.partition_names, vec!["p", "d1", "d2", "d3", "d4"]);
        assert_eq!(sm.copy_count(), 12);
        let labels: Vec<&str> = sm.contrasts.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            vec![
                "rho:p-d1",
                "pi_kappa:p-d2",
                "pi_1mk:p-d3",
                "D_L:p-d4",
                "D_U:p-d4",
                "D:p-d4"
            ]
        );
        let transforms: Vec<Transform> = spec.separators.iter().map(|s| s.transform).collect();
        assert_eq!(
            transforms,
            vec![
                Transform::Logit,
                Transform::Logit,
                Transform::Logit,
                Transform::Log,
                Transform::Log,
                Transform::Log
            ]
        );
        // Likelihood partitions hold only the directly informed parameter.
        assert_eq!(sm.partition_nodes[1], vec!["rho@d1", "y1"]);
        assert_eq!(sm.partition_nodes[2], vec!["pi_kappa@d2", "y2"]);
        let d4: Vec<&str> = sm.partition_nodes[4].iter().map(String::as_str).collect();
        assert_eq!(d4, vec!["D@d4", "D_L@d4", "D_U@d4", "y4", "y5"]);
        // The free count sits between its own partition's bounds.
        match sm.graph.get("D@d4").unwrap().distribution().unwrap() {
            Distribution::Uniform { lower, upper } => {
                assert_eq!(lower.as_node(), Some("D_L@d4"));
                assert_eq!(upper.as_node(), Some("D_U@d4"));
            }
            other => panic!("D@d4 should be uniform between bounds, got {other:?}"),
        }
        // Prior partition keeps the original structure and the constraint.
        assert!(matches!(sm.graph.get("D@p").unwrap().spec, NodeSpec::Deterministic(_)));
        assert!(sm.graph.get("pi@p").is_some());
        assert!(sm.graph.get("constr").unwrap().observed.is_some());
        // Severed priors: flat-ish beta for proportions, scale prior for counts.
        assert_eq!(
            sm.graph.get("rho@d1").unwrap().distribution(),
            Some(&Distribution::JeffreysProportion)
        );
        assert_eq!(
            sm.graph.get("D_L@d4").unwrap().distribution(),
            Some(&Distribution::JeffreysRate)
        );
    }

    #[test]
    fn leave_one_out_splits_each_informed_node() {
        let g = build_hiv_graph(&HivData::default()).unwrap();
        let models = leave_n_out_splits(&g, 1).unwrap();
        assert_eq!(models.len(), 5);
        let expect = [
            ("A", "y1", "rho"),
            ("B", "y2", "pi_kappa"),
            ("C", "y3", "pi_1mk"),
            ("D", "y4", "D_L"),
            ("E", "y5", "D_U"),
        ];
        for (m, (label, y, node)) in models.iter().zip(expect) {
            assert_eq!(m.info.label, label);
            assert_eq!(m.info.left_out, vec![y.to_string()]);
            assert_eq!(m.info.split_nodes, vec![node.to_string()]);
            assert_eq!(m.model.contrasts.len(), 1);
            assert_eq!(m.model.contrasts[0].label, format!("{node}:1-2"));
            // Partition 2 keeps the original prior.
            let orig = g.get(node).unwrap();
            let copy = m.model.graph.get(&format!("{node}@2")).unwrap();
            match (&orig.spec, &copy.spec) {
                (NodeSpec::Stochastic(a), NodeSpec::Stochastic(b)) => assert_eq!(a, b),
                (NodeSpec::Deterministic(_), NodeSpec::Deterministic(_)) => {}
                other => panic!("partition 2 changed the node kind: {other:?}"),
            }
        }
        assert!(matches!(leave_n_out_splits(&g, 3), Err(HivError::BadN(3))));
    }

    #[test]
    fn leave_two_out_recovers_the_extra_splits() {
        let g = build_hiv_graph(&HivData::default()).unwrap();
        let models = leave_n_out_splits(&g, 2).unwrap();
        assert_eq!(models.len(), 10);
        let total: usize = models.iter().map(|m| m.model.contrasts.len()).sum();
        assert_eq!(total, 23);
        let by_label = |l: &str| models.iter().find(|m| m.info.label == l).unwrap();

        let c = by_label("C");
        assert_eq!(c.info.left_out, vec!["y2", "y3"]);
        assert_eq!(c.info.split_nodes, vec!["pi_kappa", "pi_1mk", "pi", "kappa"]);
        // pi and kappa in partition 1 rebuild from the severed prevalences.
        let mut latent = IndexMap::new();
        for n in c.model.graph.latent_names() {
            latent.insert(n.to_string(), 0.3);
        }
        latent.insert("pi_kappa@1".to_string(), 0.03);
        latent.insert("pi_1mk@1".to_string(), 0.05);
        let v = c.model.graph.eval_values(&latent);
        assert!((v["pi@1"] - 0.08).abs() < 1e-12);
        assert!((v["kappa@1"] - 0.375).abs() < 1e-12);

        let j = by_label("J");
        assert_eq!(j.info.left_out, vec!["y4", "y5"]);
        assert_eq!(j.info.split_nodes, vec!["D_L", "D_U", "D"]);
        assert!(matches!(
            j.model.graph.get("D@1").unwrap().spec,
            NodeSpec::Stochastic(Distribution::Uniform { .. })
        ));
        assert!(matches!(j.model.graph.get("D@2").unwrap().spec, NodeSpec::Deterministic(_)));
        // Constraint stays with the remainder partition.
        for m in &models {
            assert!(m.spec.partitions[1].observed.contains(&"constr".to_string()));
        }
    }

    fn fake_report(z: Vec<f64>) -> ConflictReport {
        let m = z.len();
        let eye: Vec<Vec<f64>> =
            (0..m).map(|i| (0..m).map(|j| f64::from(i == j)).collect()).collect();
        ConflictReport {
            contrasts: z
                .iter()
                .enumerate()
                .map(|(k, &zk)| ContrastRow {
                    label: format!("c{k}"),
                    mean: zk,
                    sd: 1.0,
                    z: zk,
                    p_kde: 0.0,
                    p_normal: 0.0,
                    p_adjusted: 0.0,
                    skewness: 0.0,
                    excess_kurtosis: 0.0,
                    normality_flag: false,
                    diffuse_flag: false,
                    improper_prior_flag: false,
                })
                .collect(),
            chi2: Chi2Result { statistic: 0.0, df: m, pvalue: 1.0 },
            maxt_global: 1.0,
            mvn_error: 0.0,
            psd_repaired: false,
            correlation: eye,
            pvalue_method: PvalueMethod::Normal,
        }
    }

    #[test]
    fn pooling_widens_the_adjustment() {
        let a = fake_report(vec![2.0, 0.5]);
        let b = fake_report(vec![1.0, 0.3, 0.8]);
        let reports = vec![("A".to_string(), &a), ("B".to_string(), &b)];
        let st = AdjustSettings::default();
        let within = adjust_across_models(&reports, AdjustScope::Within, &st).unwrap();
        let pooled = adjust_across_models(&reports, AdjustScope::Pooled, &st).unwrap();
        assert_eq!(within.len(), 5);
        assert_eq!(pooled.len(), 5);
        // Independent blocks: adjusted p = 1 - (2*phi(|z|)-1)^m.
        let expect = |z: f64, m: i32| 1.0 - (2.0 * phi(z) - 1.0).powi(m);
        assert!((within[0].p - expect(2.0, 2)).abs() < 2e-3);
        assert!((pooled[0].p - expect(2.0, 5)).abs() < 2e-3);
        for (w, p) in within.iter().zip(&pooled) {
            assert_eq!(w.model, p.model);
            assert_eq!(w.contrast, p.contrast);
            assert!(p.p >= w.p - 2e-3, "pooling should not shrink {}: {} vs {}", w.contrast, p.p, w.p);
        }
    }
}
