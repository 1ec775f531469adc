//! Conflict statistics for split models.
//!
//! A fitted split yields posterior draws of each separator copy. This module
//! turns them into transformed-scale contrasts, then into single-contrast
//! p-values, a pooling chi-square test, and max-T multiplicity-adjusted
//! p-values that respect the posterior correlation between contrasts.

pub mod kde;
pub mod mvn;
pub mod pinv;

pub use kde::{single_conflict_pvalue, Kde, PvalueMethod};
pub use mvn::{mvn_rectangle, MvnError, MvnEstimate, DEFAULT_MVN_POINTS, DEFAULT_MVN_SHIFTS};
pub use pinv::pseudo_inverse;

use crate::graph::split::{SplitModel, SplitSpec, Transform};
use crate::infer::PosteriorSamples;
use crate::util::{chi2_sf, phi, skew_kurtosis};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("draw of {node} at {value} is outside the domain of its {transform} transform")]
    TransformDomain { node: String, value: f64, transform: &'static str },
    #[error("degenerate distribution: {what}")]
    DegenerateDistribution { what: String },
    #[error("need at least {need} draws, got {got}")]
    TooFewDraws { got: usize, need: usize },
    #[error("posterior draws carry no column for {0}")]
    MissingColumn(String),
    #[error(transparent)]
    Mvn(#[from] MvnError),
}

/// One separator copy on its transformed scale.
#[derive(Debug, Clone, Serialize)]
pub struct PhiEntry {
    pub node: String,
    pub separator: usize,
    pub partition: String,
    pub transform: Transform,
    /// Posterior sd on the transformed scale.
    pub sd: f64,
    /// Copy fell back to an improper flat default prior.
    pub improper_default: bool,
}

/// Transformed separator copies and the contrasts between them.
///
/// `c_delta` is p x m over {-1, 0, +1} with exactly one +1 and one -1 per
/// row; `delta_draws` holds the kept draws of each contrast column-wise in a
/// draws x p matrix, and `s_delta` their sample covariance.
#[derive(Debug, Clone)]
pub struct ContrastSet {
    pub phi: Vec<PhiEntry>,
    pub c_delta: DMatrix<f64>,
    pub delta_draws: DMatrix<f64>,
    pub delta_mean: DVector<f64>,
    pub s_delta: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Per contrast: indices into `phi` of (minuend, subtrahend).
    pub pairs: Vec<(usize, usize)>,
}

impl ContrastSet {
    pub fn n_contrasts(&self) -> usize {
        self.labels.len()
    }

    pub fn delta_column(&self, k: usize) -> Vec<f64> {
        self.delta_draws.column(k).iter().copied().collect()
    }
}

/// Assembles contrasts from a fitted split.
///
/// Every copy draw is pushed through the separator's transform; a draw on
/// the boundary or outside the transform's domain is an error rather than an
/// infinity smuggled into the summaries.
pub fn build_contrasts(
    split: &SplitModel,
    samples: &PosteriorSamples,
    spec: &SplitSpec,
) -> Result<ContrastSet, StatsError> {
    let n = samples.n_kept();
    let m = split.copies.len();
    let mut phi = Vec::with_capacity(m);
    let mut phi_draws: Vec<Vec<f64>> = Vec::with_capacity(m);
    for copy in &split.copies {
        let transform = spec.separators[copy.separator].transform;
        let raw = samples
            .column(&copy.node)
            .ok_or_else(|| StatsError::MissingColumn(copy.node.clone()))?;
        let mut t = Vec::with_capacity(n);
        for &x in &raw {
            let v = transform.apply(x);
            if !v.is_finite() {
                return Err(StatsError::TransformDomain {
                    node: copy.node.clone(),
                    value: x,
                    transform: transform.name(),
                });
            }
            t.push(v);
        }
        phi.push(PhiEntry {
            node: copy.node.clone(),
            separator: copy.separator,
            partition: split.partition_names[copy.partition].clone(),
            transform,
            sd: crate::util::sd(&t),
            improper_default: copy.improper_default,
        });
        phi_draws.push(t);
    }

    let index_of = |node: &str| phi.iter().position(|e| e.node == node);
    let p = split.contrasts.len();
    let mut c_delta = DMatrix::zeros(p, m);
    let mut delta_draws = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(p);
    let mut pairs = Vec::with_capacity(p);
    for (k, con) in split.contrasts.iter().enumerate() {
        let a = index_of(&con.minuend)
            .ok_or_else(|| StatsError::MissingColumn(con.minuend.clone()))?;
        let b = index_of(&con.subtrahend)
            .ok_or_else(|| StatsError::MissingColumn(con.subtrahend.clone()))?;
        c_delta[(k, a)] = 1.0;
        c_delta[(k, b)] = -1.0;
        for i in 0..n {
            delta_draws[(i, k)] = phi_draws[a][i] - phi_draws[b][i];
        }
        labels.push(con.label.clone());
        pairs.push((a, b));
    }

    let delta_mean = DVector::from_iterator(
        p,
        (0..p).map(|k| delta_draws.column(k).iter().sum::<f64>() / n as f64),
    );
    let mut s_delta = DMatrix::zeros(p, p);
    if n > 1 {
        for j in 0..p {
            for k in j..p {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += (delta_draws[(i, j)] - delta_mean[j])
                        * (delta_draws[(i, k)] - delta_mean[k]);
                }
                let v = acc / (n as f64 - 1.0);
                s_delta[(j, k)] = v;
                s_delta[(k, j)] = v;
            }
        }
    }

    Ok(ContrastSet { phi, c_delta, delta_draws, delta_mean, s_delta, labels, pairs })
}

/// Standardised means and the contrast correlation matrix.
///
/// A contrast with zero posterior variance has no z-score and is an error.
pub fn standardise(cs: &ContrastSet) -> Result<(Vec<f64>, DMatrix<f64>), StatsError> {
    let p = cs.n_contrasts();
    let mut sds = Vec::with_capacity(p);
    for k in 0..p {
        let v = cs.s_delta[(k, k)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(StatsError::DegenerateDistribution {
                what: format!("contrast {} has zero posterior variance", cs.labels[k]),
            });
        }
        sds.push(v.sqrt());
    }
    let z: Vec<f64> = (0..p).map(|k| cs.delta_mean[k] / sds[k]).collect();
    let r = DMatrix::from_fn(p, p, |i, j| cs.s_delta[(i, j)] / (sds[i] * sds[j]));
    Ok((z, r))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Chi2Result {
    pub statistic: f64,
    pub df: usize,
    pub pvalue: f64,
}

/// Chi-square pooling test from standardised means and their correlation.
///
/// Uses the pseudo-inverse of R so duplicated or linearly dependent
/// contrasts reduce the degrees of freedom instead of breaking the test.
pub fn chi2_of(z: &[f64], r: &DMatrix<f64>, pinv_tol: f64) -> Chi2Result {
    let (r_pinv, rank) = pseudo_inverse(r, pinv_tol);
    let zv = DVector::from_column_slice(z);
    let statistic = (zv.transpose() * &r_pinv * &zv)[(0, 0)].max(0.0);
    let pvalue = if rank == 0 { 1.0 } else { chi2_sf(statistic, rank as f64) };
    Chi2Result { statistic, df: rank, pvalue }
}

pub fn global_chi2(cs: &ContrastSet, pinv_tol: f64) -> Result<Chi2Result, StatsError> {
    let (z, r) = standardise(cs)?;
    Ok(chi2_of(&z, &r, pinv_tol))
}

/// Knobs for the adjustment integrals.
#[derive(Debug, Clone, Copy)]
pub struct AdjustSettings {
    pub mvn_points: usize,
    pub mvn_shifts: usize,
    pub mvn_seed: u64,
    pub pinv_tol: f64,
}

impl Default for AdjustSettings {
    fn default() -> Self {
        AdjustSettings {
            mvn_points: DEFAULT_MVN_POINTS,
            mvn_shifts: DEFAULT_MVN_SHIFTS,
            mvn_seed: 1,
            pinv_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaxTResult {
    /// Per contrast: Pr[max_k |T_k| >= |z_k|] under the joint null.
    pub local: Vec<f64>,
    /// Pr[max_k |T_k| >= max_k |z_k|].
    pub global: f64,
    /// Largest internal error estimate among the rectangle integrals.
    pub mvn_error: f64,
    pub repaired: bool,
}

/// Single-step max-T adjustment against N(0, R).
pub fn maxt_adjust(
    z: &[f64],
    r: &DMatrix<f64>,
    st: &AdjustSettings,
) -> Result<MaxTResult, StatsError> {
    let mut local = Vec::with_capacity(z.len());
    let mut mvn_error = 0.0_f64;
    let mut repaired = false;
    let mut rect = |bound: f64| -> Result<f64, StatsError> {
        let est = mvn_rectangle(r, bound.abs(), st.mvn_points, st.mvn_shifts, st.mvn_seed)?;
        mvn_error = mvn_error.max(est.error);
        repaired |= est.repaired;
        Ok((1.0 - est.value).clamp(0.0, 1.0))
    };
    for &zk in z {
        local.push(rect(zk)?);
    }
    let zmax = z.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let global = rect(zmax)?;
    Ok(MaxTResult { local, global, mvn_error, repaired })
}

/// Block-diagonal assembly for pooling contrasts across independent fits.
pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct ReportSettings {
    pub adjust: AdjustSettings,
    /// Which unadjusted p-value the text rendering leads with.
    pub pvalue_method: PvalueMethod,
    /// Transformed-scale sd above which a copy counts as weakly identified.
    pub diffuse_sd: f64,
}

impl Default for ReportSettings {
    fn default() -> Self {
        ReportSettings {
            adjust: AdjustSettings::default(),
            pvalue_method: PvalueMethod::Kde,
            diffuse_sd: 5.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContrastRow {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub z: f64,
    /// Density-ordering p-value from the draws.
    pub p_kde: f64,
    /// Two-sided normal tail at zero.
    pub p_normal: f64,
    /// Max-T adjusted p-value.
    pub p_adjusted: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Draws look non-normal; the normal-score p-values are then advisory.
    pub normality_flag: bool,
    /// A copy behind this contrast is weakly identified.
    pub diffuse_flag: bool,
    /// A copy behind this contrast used an improper flat default prior.
    pub improper_prior_flag: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConflictReport {
    pub contrasts: Vec<ContrastRow>,
    pub chi2: Chi2Result,
    pub maxt_global: f64,
    pub mvn_error: f64,
    pub psd_repaired: bool,
    pub correlation: Vec<Vec<f64>>,
    pub pvalue_method: PvalueMethod,
}

/// Full per-split report: one row per contrast plus the two global tests.
pub fn conflict_report(cs: &ContrastSet, rs: &ReportSettings) -> Result<ConflictReport, StatsError> {
    let (z, r) = standardise(cs)?;
    let chi2 = chi2_of(&z, &r, rs.adjust.pinv_tol);
    let adj = maxt_adjust(&z, &r, &rs.adjust)?;
    let mut rows = Vec::with_capacity(cs.n_contrasts());
    for k in 0..cs.n_contrasts() {
        let draws = cs.delta_column(k);
        let p_kde = single_conflict_pvalue(&draws, PvalueMethod::Kde)?;
        let p_normal = 2.0 * (1.0 - phi(z[k].abs()));
        let (g1, g2) = skew_kurtosis(&draws);
        let (a, b) = cs.pairs[k];
        rows.push(ContrastRow {
            label: cs.labels[k].clone(),
            mean: cs.delta_mean[k],
            sd: cs.s_delta[(k, k)].sqrt(),
            z: z[k],
            p_kde,
            p_normal,
            p_adjusted: adj.local[k],
            skewness: g1,
            excess_kurtosis: g2,
            normality_flag: g1.abs() > 0.5 || g2.abs() > 1.0,
            diffuse_flag: cs.phi[a].sd > rs.diffuse_sd || cs.phi[b].sd > rs.diffuse_sd,
            improper_prior_flag: cs.phi[a].improper_default || cs.phi[b].improper_default,
        });
    }
    let p = cs.n_contrasts();
    let correlation = (0..p).map(|i| (0..p).map(|j| r[(i, j)]).collect()).collect();
    Ok(ConflictReport {
        contrasts: rows,
        chi2,
        maxt_global: adj.global,
        mvn_error: adj.mvn_error,
        psd_repaired: adj.repaired,
        correlation,
        pvalue_method: rs.pvalue_method,
    })
}

impl ConflictReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// Fixed-width table with one row per contrast and the global tests
    /// underneath. Flags: n non-normal draws, d diffuse copy, i improper
    /// default prior.
    pub fn text_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let width = self
            .contrasts
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(8)
            .max(8);
        let _ = writeln!(
            out,
            "{:width$}  {:>9} {:>9} {:>8} {:>8} {:>8}  flags",
            "contrast", "mean", "sd", "z", "p", "p_adj"
        );
        for c in &self.contrasts {
            let p_lead = match self.pvalue_method {
                PvalueMethod::Kde => c.p_kde,
                PvalueMethod::Normal => c.p_normal,
            };
            let mut flags = String::new();
            if c.normality_flag {
                flags.push('n');
            }
            if c.diffuse_flag {
                flags.push('d');
            }
            if c.improper_prior_flag {
                flags.push('i');
            }
            let _ = writeln!(
                out,
                "{:width$}  {:>9.4} {:>9.4} {:>8.3} {:>8.4} {:>8.4}  {}",
                c.label, c.mean, c.sd, c.z, p_lead, c.p_adjusted, flags
            );
        }
        let _ = writeln!(
            out,
            "\nchi-square pooling: X2 = {:.3} on {} df, p = {:.4}",
            self.chi2.statistic, self.chi2.df, self.chi2.pvalue
        );
        let _ = writeln!(out, "max-T global: p = {:.4}", self.maxt_global);
        if self.psd_repaired {
            let _ = writeln!(out, "note: contrast correlation needed a PSD repair");
        }
        out
    }
}
