//! End-to-end analyses behind the `evsplit` binary: the builtin model
//! catalogue, run orchestration, artifact files, and the conflict p-value
//! calibration study.
//!
//! Every artifact is written atomically (temp file then rename) and contains
//! no timestamps, so a rerun with the same manifest settings reproduces
//! every file byte for byte.

use crate::graph::config::{parse_model, ConfigError};
use crate::graph::split::{split, SplitModel, SplitSpec};
use crate::graph::ModelGraph;
use crate::hiv::{
    self, adjust_across_models, AdjustScope, HivError, LeaveOutModel, LeaveOutSpec,
};
use crate::infer::{
    deviance_summary, mc_standard_error, sample, DevianceSummary, PosteriorSamples, SampleError,
    SamplerConfig,
};
use crate::nma::{
    build_nma_graph, smoking_trials, split_nma, EffectModel, MultiArmPlacement, NmaError, NmaSpec,
    PartitionScheme, SchemeKind,
};
use crate::stats::{
    build_contrasts, conflict_report, single_conflict_pvalue, ConflictReport, Kde, PvalueMethod,
    ReportSettings, StatsError,
};
use crate::util::{ks_uniform, seeded_stream};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("treatment network: {0}")]
    Nma(#[from] NmaError),
    #[error("synthesis: {0}")]
    Hiv(#[from] HivError),
    #[error("split: {0}")]
    Split(#[from] crate::graph::split::SplitError),
    #[error("sampler: {0}")]
    Sample(#[from] SampleError),
    #[error("statistics: {0}")]
    Stats(#[from] StatsError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// 2 for anything wrong with the request, 3 for failures while running it.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_)
            | RunError::Config(_)
            | RunError::Nma(_)
            | RunError::Hiv(_)
            | RunError::Split(_) => 2,
            RunError::Sample(_) | RunError::Stats(_) | RunError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub sampler: SamplerConfig,
    pub report: ReportSettings,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// Grid points written per density curve.
    pub density_points: usize,
}

impl Default for RunSettings {
    fn default() -> RunSettings {
        RunSettings {
            sampler: SamplerConfig::default(),
            report: ReportSettings::default(),
            out: None,
            format: OutputFormat::Text,
            density_points: 256,
        }
    }
}

/// A resolved analysis: what to fit and how it is examined afterwards.
pub enum Analysis {
    Fit { name: String, graph: ModelGraph, blocks: Vec<Vec<String>> },
    SplitFit { name: String, model: SplitModel, spec: SplitSpec, blocks: Vec<Vec<String>> },
    /// Family of cross-validatory splits fitted together and reported as one
    /// table.
    Suite { name: String, models: Vec<LeaveOutModel> },
}

impl Analysis {
    pub fn name(&self) -> &str {
        match self {
            Analysis::Fit { name, .. }
            | Analysis::SplitFit { name, .. }
            | Analysis::Suite { name, .. } => name,
        }
    }
}

pub const BUILTINS: [&str; 11] = [
    "smoking-common",
    "smoking-random",
    "smoking-scheme-b",
    "smoking-scheme-c",
    "smoking-scheme-d",
    "smoking-scheme-e",
    "smoking-scheme-f",
    "hiv-original",
    "hiv-saturated",
    "hiv-leave1",
    "hiv-leave2",
];

fn star_tree() -> Vec<(String, String)> {
    [("A", "B"), ("A", "C"), ("A", "D")]
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .to_vec()
}

fn bd_tree() -> Vec<(String, String)> {
    [("A", "B"), ("A", "C"), ("B", "D")]
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .to_vec()
}

fn smoking_scheme(letter: char) -> Result<PartitionScheme, RunError> {
    let (tree, kind, multi_arm) = match letter {
        'b' => (star_tree(), SchemeKind::TwoWay, MultiArmPlacement::WithIndirect),
        'c' => (star_tree(), SchemeKind::TwoWay, MultiArmPlacement::WithDirect),
        'd' => (star_tree(), SchemeKind::SequentialTrees, MultiArmPlacement::Separate),
        'e' => (bd_tree(), SchemeKind::TwoWay, MultiArmPlacement::WithIndirect),
        'f' => (bd_tree(), SchemeKind::TwoWay, MultiArmPlacement::WithDirect),
        other => return Err(RunError::Usage(format!("no smoking scheme '{other}'"))),
    };
    Ok(PartitionScheme { kind, tree, multi_arm, share_variance: true, degenerate: false })
}

/// Resolves a builtin name, optionally with a data override in the builtin
/// family's table format.
pub fn builtin(name: &str, data: Option<&str>) -> Result<Analysis, RunError> {
    let named = |graph, blocks| Analysis::Fit { name: name.to_string(), graph, blocks };
    if let Some(rest) = name.strip_prefix("smoking-") {
        let arms = match data {
            Some(text) => crate::nma::parse_trials(text)?,
            None => smoking_trials(),
        };
        let spec = |effect_model| NmaSpec { effect_model, ..NmaSpec::default() };
        return match rest {
            "common" => {
                let m = build_nma_graph(&arms, &spec(EffectModel::Common))?;
                Ok(named(m.graph, m.blocks))
            }
            "random" => {
                let m = build_nma_graph(&arms, &spec(EffectModel::Random))?;
                Ok(named(m.graph, m.blocks))
            }
            _ => {
                let letter = match rest.strip_prefix("scheme-") {
                    Some(l) if l.len() == 1 => l.chars().next().unwrap(),
                    _ => return Err(RunError::Usage(format!("unknown builtin '{name}'"))),
                };
                let m = build_nma_graph(&arms, &spec(EffectModel::Random))?;
                let s = split_nma(&m, &smoking_scheme(letter)?)?;
                Ok(Analysis::SplitFit {
                    name: name.to_string(),
                    model: s.model,
                    spec: s.spec,
                    blocks: s.blocks,
                })
            }
        };
    }
    if let Some(rest) = name.strip_prefix("hiv-") {
        let d = match data {
            Some(text) => hiv::parse_data(text)?,
            None => hiv::HivData::default(),
        };
        let g = hiv::build_hiv_graph(&d)?;
        return match rest {
            "original" => Ok(named(g, Vec::new())),
            "saturated" => {
                let (model, spec) = hiv::saturated_split(&g)?;
                Ok(Analysis::SplitFit { name: name.to_string(), model, spec, blocks: Vec::new() })
            }
            "leave1" => Ok(Analysis::Suite {
                name: name.to_string(),
                models: hiv::leave_n_out_splits(&g, 1)?,
            }),
            "leave2" => Ok(Analysis::Suite {
                name: name.to_string(),
                models: hiv::leave_n_out_splits(&g, 2)?,
            }),
            _ => Err(RunError::Usage(format!("unknown builtin '{name}'"))),
        };
    }
    Err(RunError::Usage(format!(
        "unknown builtin '{name}'; available: {}",
        BUILTINS.join(", ")
    )))
}

/// Resolves a model config file. `want_split` demands or forbids a split
/// section, matching the subcommand used.
pub fn from_config(name: &str, text: &str, want_split: bool) -> Result<Analysis, RunError> {
    let (graph, split_spec) = parse_model(text)?;
    match (split_spec, want_split) {
        (Some(spec), true) => {
            let model = split(&graph, &spec)?;
            Ok(Analysis::SplitFit { name: name.to_string(), model, spec, blocks: Vec::new() })
        }
        (None, false) => Ok(Analysis::Fit { name: name.to_string(), graph, blocks: Vec::new() }),
        (Some(_), false) => {
            Err(RunError::Usage(format!("{name} declares a split; use split-fit")))
        }
        (None, true) => Err(RunError::Usage(format!("{name} has no [[split.partition]] section"))),
    }
}

/// One fitted model with everything the report stage needs.
pub struct FittedSplit {
    pub label: String,
    pub info: Option<LeaveOutSpec>,
    pub samples: PosteriorSamples,
    pub deviance: DevianceSummary,
    pub report: ConflictReport,
    pub densities: Vec<(String, Vec<(f64, f64)>)>,
    pub mcse: Vec<(String, f64)>,
}

pub struct RunOutput {
    /// Human- or machine-readable summary, matching the requested format.
    pub rendered: String,
    pub warnings: Vec<String>,
    pub artifacts: Vec<PathBuf>,
    pub exit: i32,
}

pub fn run(analysis: &Analysis, settings: &RunSettings) -> Result<RunOutput, RunError> {
    let mut warnings = Vec::new();
    let mut artifacts = Vec::new();
    let out = settings.out.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
    }
    let rendered = match analysis {
        Analysis::Fit { graph, blocks, .. } => {
            let samples = sample(graph, &with_blocks(&settings.sampler, blocks))?;
            warnings.extend(samples.warnings.clone());
            let dev = deviance_summary(graph, &samples);
            if let Some(dir) = out {
                write_posterior(dir, &samples, &mut artifacts)?;
                write_deviance(dir, &dev, &mut artifacts)?;
                let mut w = Vec::new();
                samples.write_columnar(&mut w)?;
                write_atomic(&dir.join("draws.csv"), &w, &mut artifacts)?;
            }
            match settings.format {
                OutputFormat::Text => render_fit_text(graph, &samples, &dev),
                OutputFormat::Json => fit_json(&samples, &dev)?,
            }
        }
        Analysis::SplitFit { model, spec, blocks, .. } => {
            let f = fit_split("", None, model, spec, settings, &settings.sampler, blocks)?;
            mcse_warnings(&f, &mut warnings);
            warnings.extend(f.samples.warnings.clone());
            if let Some(dir) = out {
                write_split_artifacts(dir, &f, settings, &mut artifacts)?;
                let mut w = Vec::new();
                f.samples.write_columnar(&mut w)?;
                write_atomic(&dir.join("draws.csv"), &w, &mut artifacts)?;
            }
            match settings.format {
                OutputFormat::Text => render_split_text(&f),
                OutputFormat::Json => split_json(&f)?,
            }
        }
        Analysis::Suite { models, .. } => {
            let fits = fit_suite(models, settings)?;
            for f in &fits {
                mcse_warnings(f, &mut warnings);
                for w in &f.samples.warnings {
                    warnings.push(format!("model {}: {w}", f.label));
                }
            }
            let table = leave_out_table(&fits, settings)?;
            if let Some(dir) = out {
                for f in &fits {
                    let sub = dir.join("models").join(&f.label);
                    fs::create_dir_all(&sub)?;
                    write_split_artifacts(&sub, f, settings, &mut artifacts)?;
                }
                write_atomic(
                    &dir.join("leave_out_table.csv"),
                    table_csv(&table).as_bytes(),
                    &mut artifacts,
                )?;
                write_atomic(
                    &dir.join("leave_out_table.txt"),
                    table_text(&table).as_bytes(),
                    &mut artifacts,
                )?;
            }
            match settings.format {
                OutputFormat::Text => table_text(&table),
                OutputFormat::Json => serde_json::to_string_pretty(&table)
                    .map_err(|e| RunError::Usage(e.to_string()))?,
            }
        }
    };
    Ok(RunOutput { rendered, warnings, artifacts, exit: 0 })
}

/// `run` plus the manifest artifact, which must be written last so it can
/// list everything else.
pub fn execute(
    command: &str,
    analysis: &Analysis,
    data_text: Option<&str>,
    settings: &RunSettings,
) -> Result<RunOutput, RunError> {
    let mut out = run(analysis, settings)?;
    if let Some(dir) = &settings.out {
        let m = manifest(command, analysis.name(), data_text, settings, &out.artifacts, dir);
        write_atomic(&dir.join("manifest.json"), m.as_bytes(), &mut out.artifacts)?;
    }
    Ok(out)
}

/// Runs the calibration study and writes its artifacts when an output
/// directory is set.
pub fn execute_null(
    replicates: usize,
    seed: u64,
    shift_sds: f64,
    method: PvalueMethod,
    out: Option<&Path>,
    format: OutputFormat,
) -> Result<RunOutput, RunError> {
    let study = simulate_null(replicates, seed, shift_sds, method)?;
    let mut artifacts = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut csv = String::from("replicate,pvalue\n");
        for (i, p) in study.pvalues.iter().enumerate() {
            let _ = writeln!(csv, "{i},{p}");
        }
        write_atomic(&dir.join("null_pvalues.csv"), csv.as_bytes(), &mut artifacts)?;
        let json = serde_json::to_string_pretty(&study)
            .map_err(|e| RunError::Usage(e.to_string()))?;
        write_atomic(&dir.join("null_summary.json"), json.as_bytes(), &mut artifacts)?;
        let cfg = serde_json::json!({
            "command": "simulate-null",
            "replicates": replicates,
            "seed": seed,
            "shift_sds": shift_sds,
            "pvalue_method": method,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let cfg_text = serde_json::to_string(&cfg).expect("manifest serialises");
        let files: Vec<String> = artifacts
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).to_string_lossy().into_owned())
            .collect();
        let m = serde_json::json!({
            "config": cfg,
            "config_sha256": sha256_hex(&cfg_text),
            "artifacts": files,
        });
        write_atomic(
            &dir.join("manifest.json"),
            serde_json::to_string_pretty(&m).expect("manifest serialises").as_bytes(),
            &mut artifacts,
        )?;
    }
    let rendered = match format {
        OutputFormat::Text => null_study_text(&study),
        OutputFormat::Json => serde_json::to_string_pretty(&study)
            .map_err(|e| RunError::Usage(e.to_string()))?,
    };
    Ok(RunOutput { rendered, warnings: Vec::new(), artifacts, exit: 0 })
}

fn with_blocks(cfg: &SamplerConfig, blocks: &[Vec<String>]) -> SamplerConfig {
    let mut c = cfg.clone();
    if c.blocks.is_empty() {
        c.blocks = blocks.to_vec();
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn fit_split(
    label: &str,
    info: Option<&LeaveOutSpec>,
    model: &SplitModel,
    spec: &SplitSpec,
    settings: &RunSettings,
    sampler: &SamplerConfig,
    blocks: &[Vec<String>],
) -> Result<FittedSplit, RunError> {
    let samples = sample(&model.graph, &with_blocks(sampler, blocks))?;
    let cs = build_contrasts(model, &samples, spec)?;
    let report = conflict_report(&cs, &settings.report)?;
    let mut densities = Vec::with_capacity(cs.n_contrasts());
    let mut mcse = Vec::with_capacity(cs.n_contrasts());
    for k in 0..cs.n_contrasts() {
        let col = cs.delta_column(k);
        densities.push((cs.labels[k].clone(), Kde::fit(&col)?.curve(settings.density_points)));
        mcse.push((cs.labels[k].clone(), series_mcse(&col, samples.chains)));
    }
    let deviance = deviance_summary(&model.graph, &samples);
    Ok(FittedSplit {
        label: label.to_string(),
        info: info.cloned(),
        samples,
        deviance,
        report,
        densities,
        mcse,
    })
}

fn fit_suite(models: &[LeaveOutModel], settings: &RunSettings) -> Result<Vec<FittedSplit>, RunError> {
    let fits: Vec<Result<FittedSplit, RunError>> = models
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            let mut sampler = settings.sampler.clone();
            sampler.seed = sampler.seed.wrapping_add(i as u64);
            fit_split(&m.info.label, Some(&m.info), &m.model, &m.spec, settings, &sampler, &[])
        })
        .collect();
    fits.into_iter().collect()
}

/// Batch-means Monte Carlo standard error of a chain-major series.
fn series_mcse(xs: &[f64], chains: usize) -> f64 {
    let per = xs.len() / chains.max(1);
    let mut batch_means = Vec::new();
    let b = (per as f64).sqrt().floor().max(1.0) as usize;
    for c in 0..chains.max(1) {
        let seg = &xs[c * per..(c + 1) * per];
        for chunk in seg.chunks_exact(b) {
            batch_means.push(crate::util::mean(chunk));
        }
    }
    if batch_means.len() < 2 {
        return f64::NAN;
    }
    crate::util::sd(&batch_means) / (batch_means.len() as f64).sqrt()
}

/// Reported means should carry MCSE below 0.01 on the contrast scale.
const MCSE_TOL: f64 = 0.01;

fn mcse_warnings(f: &FittedSplit, warnings: &mut Vec<String>) {
    for (label, e) in &f.mcse {
        if !(*e < MCSE_TOL) {
            warnings.push(format!(
                "contrast {label}: Monte Carlo standard error {e:.4} exceeds {MCSE_TOL}; \
                 increase --iters"
            ));
        }
    }
}

// ---------------------------------------------------------------------------
// Leave-out family table

#[derive(Debug, Clone, serde::Serialize)]
pub struct LeaveOutRow {
    pub model: String,
    pub left_out: Vec<String>,
    pub contrast: String,
    pub mean: f64,
    pub sd: f64,
    pub p_unadjusted: f64,
    /// Max-T over the model's own contrasts; absent for single-contrast models.
    pub p_within: Option<f64>,
    /// Max-T pooled over every model in the family, models independent.
    pub p_family: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LeaveOutTable {
    pub family: String,
    pub rows: Vec<LeaveOutRow>,
}

/// One row per contrast with within-model and family-pooled adjustments.
pub fn leave_out_table(
    fits: &[FittedSplit],
    settings: &RunSettings,
) -> Result<LeaveOutTable, RunError> {
    let reports: Vec<(String, &ConflictReport)> =
        fits.iter().map(|f| (f.label.clone(), &f.report)).collect();
    let family =
        adjust_across_models(&reports, AdjustScope::Pooled, &settings.report.adjust)?;
    let mut rows = Vec::new();
    let mut k = 0;
    let n = fits.first().and_then(|f| f.info.as_ref()).map_or(0, |i| i.n);
    for f in fits {
        let left_out = f.info.as_ref().map(|i| i.left_out.clone()).unwrap_or_default();
        for c in &f.report.contrasts {
            rows.push(LeaveOutRow {
                model: f.label.clone(),
                left_out: left_out.clone(),
                contrast: c.label.clone(),
                mean: c.mean,
                sd: c.sd,
                p_unadjusted: match f.report.pvalue_method {
                    PvalueMethod::Kde => c.p_kde,
                    PvalueMethod::Normal => c.p_normal,
                },
                p_within: (f.report.contrasts.len() > 1).then_some(c.p_adjusted),
                p_family: family[k].p,
            });
            k += 1;
        }
    }
    Ok(LeaveOutTable { family: format!("leave-{n}-out"), rows })
}

pub fn table_csv(t: &LeaveOutTable) -> String {
    let mut s = String::from("model,left_out,contrast,mean,sd,p_unadjusted,p_within,p_family\n");
    for r in &t.rows {
        let w = r.p_within.map(|p| fmt_p(p)).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{:.4},{:.4},{},{},{}",
            r.model,
            r.left_out.join("+"),
            r.contrast,
            r.mean,
            r.sd,
            fmt_p(r.p_unadjusted),
            w,
            fmt_p(r.p_family)
        );
    }
    s
}

fn fmt_p(p: f64) -> String {
    if p < 0.0001 {
        "<0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

pub fn table_text(t: &LeaveOutTable) -> String {
    let mut s = format!("{} conflict table\n", t.family);
    let _ = writeln!(
        s,
        "{:<6} {:<10} {:<16} {:>9} {:>8} {:>8} {:>8} {:>8}",
        "model", "left out", "contrast", "mean", "sd", "p", "p_within", "p_family"
    );
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{:<6} {:<10} {:<16} {:>9.3} {:>8.3} {:>8} {:>8} {:>8}",
            r.model,
            r.left_out.join("+"),
            r.contrast,
            r.mean,
            r.sd,
            fmt_p(r.p_unadjusted),
            r.p_within.map(fmt_p).unwrap_or_else(|| "-".into()),
            fmt_p(r.p_family)
        );
    }
    s
}

// ---------------------------------------------------------------------------
// Artifacts

/// Temp-then-rename so readers never observe a half-written file.
fn write_atomic(path: &Path, bytes: &[u8], artifacts: &mut Vec<PathBuf>) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    artifacts.push(path.to_path_buf());
    Ok(())
}

pub const POSTERIOR_HEADER: &str = "node,mean,sd,mcse,psrf";

fn write_posterior(
    dir: &Path,
    samples: &PosteriorSamples,
    artifacts: &mut Vec<PathBuf>,
) -> io::Result<()> {
    let mut s = format!("{POSTERIOR_HEADER}\n");
    for name in &samples.node_names {
        let (m, sd) = samples.mean_sd(name).unwrap();
        let mcse = mc_standard_error(samples, name).map(|e| format!("{e:.6}")).unwrap_or_default();
        let psrf = samples
            .psrf
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| format!("{r:.4}"))
            .unwrap_or_default();
        let _ = writeln!(s, "{name},{m},{sd},{mcse},{psrf}");
    }
    write_atomic(&dir.join("posterior.csv"), s.as_bytes(), artifacts)
}

fn write_deviance(
    dir: &Path,
    dev: &DevianceSummary,
    artifacts: &mut Vec<PathBuf>,
) -> Result<(), RunError> {
    let json = serde_json::to_string_pretty(dev).map_err(|e| RunError::Usage(e.to_string()))?;
    write_atomic(&dir.join("deviance.json"), json.as_bytes(), artifacts)?;
    let mut s = String::from("node,mean_deviance,plugin_deviance,p_d,dic\n");
    for d in &dev.per_datum {
        let _ = writeln!(
            s,
            "{},{:.3},{:.3},{:.3},{:.3}",
            d.node, d.mean_deviance, d.plugin_deviance, d.p_d, d.dic
        );
    }
    let _ = writeln!(
        s,
        "total,{:.3},{:.3},{:.3},{:.3}",
        dev.mean_deviance, dev.plugin_deviance, dev.p_d, dev.dic
    );
    write_atomic(&dir.join("deviance.csv"), s.as_bytes(), artifacts)?;
    Ok(())
}

fn density_file_name(label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{safe}.csv")
}

fn write_split_artifacts(
    dir: &Path,
    f: &FittedSplit,
    settings: &RunSettings,
    artifacts: &mut Vec<PathBuf>,
) -> Result<(), RunError> {
    write_posterior(dir, &f.samples, artifacts)?;
    write_deviance(dir, &f.deviance, artifacts)?;
    write_atomic(
        &dir.join("conflict_report.json"),
        f.report.to_json().as_bytes(),
        artifacts,
    )?;
    write_atomic(
        &dir.join("conflict_report.txt"),
        f.report.text_table().as_bytes(),
        artifacts,
    )?;
    let ddir = dir.join("densities");
    fs::create_dir_all(&ddir)?;
    for ((label, curve), row) in f.densities.iter().zip(&f.report.contrasts) {
        // Annotated like the published density displays: the conflict
        // p-values ride along as comments.
        let mut s = format!(
            "# contrast {label}: p_unadjusted={}, p_adjusted={}\n",
            fmt_p(match settings.report.pvalue_method {
                PvalueMethod::Kde => row.p_kde,
                PvalueMethod::Normal => row.p_normal,
            }),
            fmt_p(row.p_adjusted)
        );
        s.push_str("x,density\n");
        for (x, d) in curve {
            let _ = writeln!(s, "{x},{d}");
        }
        write_atomic(&ddir.join(density_file_name(label)), s.as_bytes(), artifacts)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Rendering

fn render_fit_text(g: &ModelGraph, samples: &PosteriorSamples, dev: &DevianceSummary) -> String {
    let mut s = String::from("posterior summary\n");
    let _ = writeln!(s, "{:<20} {:>10} {:>10} {:>8}", "node", "mean", "sd", "psrf");
    for name in g.latent_names() {
        let (m, sd) = samples.mean_sd(name).unwrap();
        let psrf = samples
            .psrf
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| format!("{r:.3}"))
            .unwrap_or_default();
        let _ = writeln!(s, "{name:<20} {m:>10.4} {sd:>10.4} {psrf:>8}");
    }
    let _ = writeln!(
        s,
        "deviance: mean {:.2}, plugin {:.2}, p_D {:.2}, DIC {:.2}",
        dev.mean_deviance, dev.plugin_deviance, dev.p_d, dev.dic
    );
    s
}

fn fit_json(samples: &PosteriorSamples, dev: &DevianceSummary) -> Result<String, RunError> {
    let posterior: Vec<serde_json::Value> = samples
        .node_names
        .iter()
        .map(|name| {
            let (m, sd) = samples.mean_sd(name).unwrap();
            serde_json::json!({"node": name, "mean": m, "sd": sd})
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "posterior": posterior,
        "deviance": dev,
    }))
    .map_err(|e| RunError::Usage(e.to_string()))
}

fn render_split_text(f: &FittedSplit) -> String {
    let mut s = f.report.text_table();
    let _ = writeln!(
        s,
        "deviance: mean {:.2}, plugin {:.2}, p_D {:.2}, DIC {:.2}",
        f.deviance.mean_deviance, f.deviance.plugin_deviance, f.deviance.p_d, f.deviance.dic
    );
    s
}

fn split_json(f: &FittedSplit) -> Result<String, RunError> {
    serde_json::to_string_pretty(&serde_json::json!({
        "conflict": serde_json::from_str::<serde_json::Value>(&f.report.to_json())
            .unwrap_or_default(),
        "deviance": f.deviance,
    }))
    .map_err(|e| RunError::Usage(e.to_string()))
}

// ---------------------------------------------------------------------------
// Manifest

/// Everything needed to reproduce a run, hashed for quick comparison.
/// Deliberately free of timestamps, host names, and paths.
pub fn manifest(
    command: &str,
    analysis_name: &str,
    data_text: Option<&str>,
    settings: &RunSettings,
    artifacts: &[PathBuf],
    out_dir: &Path,
) -> String {
    let cfg = serde_json::json!({
        "command": command,
        "model": analysis_name,
        "data_sha256": data_text.map(sha256_hex),
        "sampler": settings.sampler,
        "adjust": {
            "mvn_points": settings.report.adjust.mvn_points,
            "mvn_shifts": settings.report.adjust.mvn_shifts,
            "mvn_seed": settings.report.adjust.mvn_seed,
            "pinv_tol": settings.report.adjust.pinv_tol,
        },
        "pvalue_method": settings.report.pvalue_method,
        "density_points": settings.density_points,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let cfg_text = serde_json::to_string(&cfg).expect("manifest serialises");
    let files: Vec<String> = artifacts
        .iter()
        .map(|p| {
            p.strip_prefix(out_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .replace(std::path::MAIN_SEPARATOR, "/")
        })
        .collect();
    let full = serde_json::json!({
        "config": cfg,
        "config_sha256": sha256_hex(&cfg_text),
        "artifacts": files,
    });
    serde_json::to_string_pretty(&full).expect("manifest serialises")
}

pub fn sha256_hex(text: &str) -> String {
    let h = Sha256::digest(text.as_bytes());
    h.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Null calibration

#[derive(Debug, Clone, serde::Serialize)]
pub struct NullStudy {
    pub replicates: usize,
    /// Location shift injected into one partition, in contrast-sd units.
    pub shift_sds: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    pub frac_below_05: f64,
    pub pvalues: Vec<f64>,
}

/// Calibration of the unadjusted conflict p-value on the two-partition
/// normal location model: one observation per partition, unit error, flat
/// founder priors, so each copy's posterior is normal around its datum and
/// the contrast has sd sqrt(2). Under no shift the p-value is uniform;
/// `shift_sds` > 0 measures power instead.
pub fn simulate_null(
    replicates: usize,
    seed: u64,
    shift_sds: f64,
    method: PvalueMethod,
) -> Result<NullStudy, RunError> {
    if replicates < 100 {
        return Err(RunError::Usage(format!(
            "need at least 100 replicates for a stable uniformity test, got {replicates}"
        )));
    }
    let draws_per = 4000;
    let shift = shift_sds * std::f64::consts::SQRT_2;
    let pvalues: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = seeded_stream(seed, 0x6e75 + r as u64);
            let y1: f64 = shift + rng.sample::<f64, _>(StandardNormal);
            let y2: f64 = rng.sample::<f64, _>(StandardNormal);
            let delta: Vec<f64> = (0..draws_per)
                .map(|_| {
                    let a: f64 = rng.sample(StandardNormal);
                    let b: f64 = rng.sample(StandardNormal);
                    (y1 + a) - (y2 + b)
                })
                .collect();
            single_conflict_pvalue(&delta, method)
        })
        .collect::<Result<_, _>>()?;
    let (ks_statistic, ks_pvalue) = ks_uniform(&pvalues);
    let below = pvalues.iter().filter(|p| **p < 0.05).count();
    Ok(NullStudy {
        replicates,
        shift_sds,
        ks_statistic,
        ks_pvalue,
        frac_below_05: below as f64 / replicates as f64,
        pvalues,
    })
}

pub fn null_study_text(s: &NullStudy) -> String {
    format!(
        "replicates: {}\nshift: {} contrast sds\nKS statistic: {:.4}\nKS p-value: {:.4}\n\
         fraction with p < 0.05: {:.3}\n",
        s.replicates, s.shift_sds, s.ks_statistic, s.ks_pvalue, s.frac_below_05
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{Chi2Result, ContrastRow};

    #[test]
    fn every_builtin_resolves() {
        for name in BUILTINS {
            let a = builtin(name, None).unwrap();
            assert_eq!(a.name(), name);
        }
        assert!(matches!(builtin("smoking-scheme-z", None), Err(RunError::Usage(_))));
        assert!(matches!(builtin("nope", None), Err(e) if e.exit_code() == 2));
    }

    #[test]
    fn builtins_have_the_expected_shape() {
        match builtin("smoking-random", None).unwrap() {
            Analysis::Fit { blocks, .. } => assert_eq!(blocks.len(), 2),
            _ => panic!("smoking-random is a plain fit"),
        }
        match builtin("smoking-scheme-d", None).unwrap() {
            Analysis::SplitFit { model, .. } => assert_eq!(model.partition_names.len(), 4),
            _ => panic!("schemes are split fits"),
        }
        match builtin("hiv-leave2", None).unwrap() {
            Analysis::Suite { models, .. } => assert_eq!(models.len(), 10),
            _ => panic!("leave2 is a suite"),
        }
    }

    #[test]
    fn data_override_reaches_the_graph() {
        let table = "name,y,n,likelihood\n\
                     y1,10,100,binomial\ny2,10,100,binomial\ny3,10,100,binomial\n\
                     y4,50,,poisson\ny5,90,,poisson\n";
        match builtin("hiv-original", Some(table)).unwrap() {
            Analysis::Fit { graph, .. } => {
                assert_eq!(graph.get("y1").unwrap().observed, Some(10.0));
            }
            _ => panic!(),
        }
        assert!(builtin("hiv-original", Some("garbage")).is_err());
    }

    const TOY_CONFIG: &str = "[[nodes]]\nname = \"mu\"\ndist = \"normal\"\nmean = 0.0\nsd = 2.0\n\n\
                              [[nodes]]\nname = \"y\"\ndist = \"normal\"\nmean = \"mu\"\nsd = 1.0\n\n\
                              [[observations]]\nnode = \"y\"\nvalue = 1.5\n";

    #[test]
    fn config_split_requirements_are_enforced() {
        assert!(matches!(from_config("m", TOY_CONFIG, false).unwrap(), Analysis::Fit { .. }));
        assert!(from_config("m", TOY_CONFIG, true).is_err());
    }

    fn toy_report(z: Vec<f64>) -> ConflictReport {
        let m = z.len();
        ConflictReport {
            contrasts: z
                .iter()
                .enumerate()
                .map(|(k, &zk)| ContrastRow {
                    label: format!("c{k}"),
                    mean: zk,
                    sd: 1.0,
                    z: zk,
                    p_kde: 2.0 * (1.0 - crate::util::phi(zk.abs())),
                    p_normal: 2.0 * (1.0 - crate::util::phi(zk.abs())),
                    p_adjusted: 0.6,
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
            correlation: (0..m)
                .map(|i| (0..m).map(|j| f64::from(i == j)).collect())
                .collect(),
            pvalue_method: PvalueMethod::Kde,
        }
    }

    fn toy_fit(label: &str, n: usize, z: Vec<f64>) -> FittedSplit {
        FittedSplit {
            label: label.into(),
            info: Some(LeaveOutSpec {
                label: label.into(),
                n,
                left_out: vec![format!("y_{label}")],
                split_nodes: vec![],
            }),
            samples: PosteriorSamples {
                node_names: vec![],
                chains: 1,
                kept_per_chain: 0,
                draws: vec![],
                deviance_trace: vec![],
                accept_rates: vec![],
                psrf: vec![],
                warnings: vec![],
            },
            deviance: DevianceSummary {
                mean_deviance: 0.0,
                plugin_deviance: 0.0,
                p_d: 0.0,
                dic: 0.0,
                per_datum: vec![],
            },
            report: toy_report(z),
            densities: vec![],
            mcse: vec![],
        }
    }

    #[test]
    fn leave_out_table_pools_across_models() {
        let fits =
            vec![toy_fit("A", 1, vec![2.0]), toy_fit("B", 1, vec![0.5, 1.0])];
        let settings = RunSettings::default();
        let t = leave_out_table(&fits, &settings).unwrap();
        assert_eq!(t.family, "leave-1-out");
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows[0].p_within.is_none(), "single contrast has no within adjustment");
        assert!(t.rows[1].p_within.is_some());
        assert!(t.rows[0].p_family > t.rows[0].p_unadjusted);
        let csv = table_csv(&t);
        assert!(csv.starts_with("model,left_out,contrast,mean,sd,p_unadjusted,p_within,p_family"));
        assert_eq!(csv.lines().count(), 4);
        assert!(table_text(&t).contains("leave-1-out"));
    }

    #[test]
    fn manifest_is_stable_and_sensitive() {
        let s = RunSettings::default();
        let arts = vec![PathBuf::from("/tmp/x/posterior.csv")];
        let a = manifest("fit", "hiv-original", None, &s, &arts, Path::new("/tmp/x"));
        let b = manifest("fit", "hiv-original", None, &s, &arts, Path::new("/tmp/x"));
        assert_eq!(a, b);
        assert!(a.contains("\"posterior.csv\""));
        assert!(!a.to_lowercase().contains("time"), "manifests must not embed timestamps");
        let mut s2 = RunSettings::default();
        s2.sampler.seed += 1;
        let c = manifest("fit", "hiv-original", None, &s2, &arts, Path::new("/tmp/x"));
        let hash = |m: &str| {
            serde_json::from_str::<serde_json::Value>(m).unwrap()["config_sha256"]
                .as_str()
                .unwrap()
                .to_string()
        };
        assert_ne!(hash(&a), hash(&c));
    }

    #[test]
    fn null_calibration_is_deterministic_and_in_range() {
        let a = simulate_null(120, 9, 0.0, PvalueMethod::Normal).unwrap();
        let b = simulate_null(120, 9, 0.0, PvalueMethod::Normal).unwrap();
        assert_eq!(a.pvalues, b.pvalues);
        assert!(a.pvalues.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(matches!(
            simulate_null(50, 1, 0.0, PvalueMethod::Normal),
            Err(RunError::Usage(_))
        ));
    }

    #[test]
    fn batch_means_error_shrinks_with_length() {
        let mut rng = seeded_stream(3, 0);
        let short: Vec<f64> = (0..400).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let long: Vec<f64> = (0..40_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(series_mcse(&long, 4) < series_mcse(&short, 4));
        assert!(series_mcse(&long, 4) < 0.02);
    }

    #[test]
    fn tiny_fit_writes_identical_artifacts_twice() {
        let analysis = from_config("toy", TOY_CONFIG, false).unwrap();
        let mut settings = RunSettings::default();
        settings.sampler.chains = 2;
        settings.sampler.iterations = 3000;
        settings.sampler.burn_in = 1000;
        let dir = tempfile::tempdir().unwrap();
        let read_all = |root: &Path| -> Vec<(String, Vec<u8>)> {
            let mut out = Vec::new();
            for e in fs::read_dir(root).unwrap() {
                let p = e.unwrap().path();
                if p.is_file() {
                    out.push((
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        fs::read(&p).unwrap(),
                    ));
                }
            }
            out.sort();
            out
        };
        settings.out = Some(dir.path().join("a"));
        run(&analysis, &settings).unwrap();
        let first = read_all(&dir.path().join("a"));
        settings.out = Some(dir.path().join("b"));
        run(&analysis, &settings).unwrap();
        let second = read_all(&dir.path().join("b"));
        assert_eq!(
            first.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
            vec!["deviance.csv", "deviance.json", "draws.csv", "posterior.csv"]
        );
        for ((na, ba), (nb, bb)) in first.iter().zip(&second) {
            assert_eq!(na, nb);
            assert_eq!(ba, bb, "{na} differs between identical runs");
        }
    }
}
