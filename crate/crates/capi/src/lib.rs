//! C interface to the conflict-diagnostics library.
//!
//! Everything crosses the boundary through two opaque handles: a model
//! (graph plus optional split layout) and a set of posterior samples.
//! Functions return [`EvsplitStatus`]; on anything but `Ok` a message is
//! available from [`evsplit_last_error`] until the next call on the same
//! thread. Strings handed out by this library are heap-allocated UTF-8 and
//! must be released with [`evsplit_string_free`]; handles have their own
//! `_free` functions. Passing a handle to any function after freeing it is
//! undefined behaviour, as with any C library.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use evsplit::graph::config::parse_model;
use evsplit::graph::split::{split, SplitModel, SplitSpec};
use evsplit::graph::ModelGraph;
use evsplit::infer::{deviance_summary, sample, PosteriorSamples, SamplerConfig};
use evsplit::runner::{builtin, Analysis};
use evsplit::stats::{build_contrasts, conflict_report, ReportSettings};

/// Incremented whenever the exported surface changes incompatibly.
pub const EVSPLIT_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvsplitStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Model text failed to parse or validate.
    Parse = 3,
    UnknownBuiltin = 4,
    /// The builtin exists but cannot be driven through this interface
    /// (cross-validatory suites run many fits; use the command-line tool).
    Unsupported = 5,
    Sample = 6,
    /// Conflict functions need a model with a split layout.
    NoSplit = 7,
    /// The named node is not in the sampled graph.
    UnknownNode = 8,
    Report = 9,
    /// A panic was caught at the boundary; state may be inconsistent.
    Panic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl AsRef<str>) {
    let clean: String = msg.as_ref().chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap());
}

fn fail(status: EvsplitStatus, msg: impl AsRef<str>) -> EvsplitStatus {
    set_error(msg);
    status
}

/// Message for the most recent failure on this thread, empty string if none.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn evsplit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn evsplit_abi_version() -> u32 {
    EVSPLIT_ABI_VERSION
}

fn guarded(f: impl FnOnce() -> EvsplitStatus) -> EvsplitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(EvsplitStatus::Panic, "internal panic caught at the C boundary"),
    }
}

/// # Safety
/// `ptr` must be non-null and point to a NUL-terminated string.
unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, EvsplitStatus> {
    if ptr.is_null() {
        return Err(fail(EvsplitStatus::NullArgument, "string argument is null"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(EvsplitStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn give_string(s: String, out: *mut *mut c_char) -> EvsplitStatus {
    let c = match CString::new(s) {
        Ok(c) => c,
        Err(_) => return fail(EvsplitStatus::Report, "rendered output contained NUL"),
    };
    unsafe { *out = c.into_raw() };
    EvsplitStatus::Ok
}

/// A model ready to sample: the graph, joint-proposal blocks, and the split
/// layout when there is one.
pub struct EvsplitModel {
    graph: ModelGraph,
    split: Option<(SplitModel, SplitSpec)>,
    blocks: Vec<Vec<String>>,
}

/// Posterior draws from [`evsplit_sample`].
pub struct EvsplitSamples {
    inner: PosteriorSamples,
}

/// Sampler knobs exposed over the ABI. Burn-in counts against `iterations`,
/// which is per chain. Zero is not a usable value for any field here; start
/// from [`evsplit_sampler_defaults`] and override.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EvsplitSamplerOptions {
    pub chains: u32,
    pub iterations: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub seed: u64,
}

#[no_mangle]
pub extern "C" fn evsplit_sampler_defaults() -> EvsplitSamplerOptions {
    let d = SamplerConfig::default();
    EvsplitSamplerOptions {
        chains: d.chains as u32,
        iterations: d.iterations as u64,
        burn_in: d.burn_in as u64,
        thin: d.thin as u64,
        seed: d.seed,
    }
}

/// Parses model configuration text (the same TOML the command-line tool
/// accepts) into a model handle. If the text declares a split, the handle
/// samples the joint partitioned graph and can produce conflict reports.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evsplit_model_from_toml(
    text: *const c_char,
    out: *mut *mut EvsplitModel,
) -> EvsplitStatus {
    guarded(|| {
        if out.is_null() {
            return fail(EvsplitStatus::NullArgument, "out pointer is null");
        }
        let text = match utf8_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let (graph, split_spec) = match parse_model(text) {
            Ok(pair) => pair,
            Err(e) => return fail(EvsplitStatus::Parse, e.to_string()),
        };
        let model = match split_spec {
            None => EvsplitModel { graph, split: None, blocks: Vec::new() },
            Some(spec) => match split(&graph, &spec) {
                Ok(sm) => EvsplitModel {
                    graph: sm.graph.clone(),
                    split: Some((sm, spec)),
                    blocks: Vec::new(),
                },
                Err(e) => return fail(EvsplitStatus::Parse, e.to_string()),
            },
        };
        *out = Box::into_raw(Box::new(model));
        EvsplitStatus::Ok
    })
}

/// Resolves one of the library's named analyses (`smoking-common`,
/// `smoking-scheme-b` … `smoking-scheme-f`, `hiv-original`, `hiv-saturated`).
/// Suite builtins (`hiv-leave1`, `hiv-leave2`) are refused with
/// `Unsupported`.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evsplit_model_builtin(
    name: *const c_char,
    out: *mut *mut EvsplitModel,
) -> EvsplitStatus {
    guarded(|| {
        if out.is_null() {
            return fail(EvsplitStatus::NullArgument, "out pointer is null");
        }
        let name = match utf8_arg(name) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let analysis = match builtin(name, None) {
            Ok(a) => a,
            Err(e) => return fail(EvsplitStatus::UnknownBuiltin, e.to_string()),
        };
        let model = match analysis {
            Analysis::Fit { graph, blocks, .. } => EvsplitModel { graph, split: None, blocks },
            Analysis::SplitFit { model, spec, blocks, .. } => EvsplitModel {
                graph: model.graph.clone(),
                split: Some((model, spec)),
                blocks,
            },
            Analysis::Suite { name, .. } => {
                return fail(
                    EvsplitStatus::Unsupported,
                    format!("builtin '{name}' is a suite of fits; run it via the CLI"),
                )
            }
        };
        *out = Box::into_raw(Box::new(model));
        EvsplitStatus::Ok
    })
}

/// Number of nodes in the graph this model samples.
///
/// # Safety
/// `model` must be a live handle from this library, or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn evsplit_model_len(model: *const EvsplitModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).graph.len() as u64
}

/// Whether the model carries a split layout, i.e. conflict reporting works.
///
/// # Safety
/// `model` must be a live handle from this library, or null (returns false).
#[no_mangle]
pub unsafe extern "C" fn evsplit_model_is_split(model: *const EvsplitModel) -> bool {
    !model.is_null() && (*model).split.is_some()
}

/// # Safety
/// `model` must come from this library and not have been freed already;
/// null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn evsplit_model_free(model: *mut EvsplitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the sampler. `options` may be null for the defaults. Multi-arm
/// proposal blocks declared by the model are applied automatically.
///
/// # Safety
/// `model` must be a live handle; `options` null or valid; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn evsplit_sample(
    model: *const EvsplitModel,
    options: *const EvsplitSamplerOptions,
    out: *mut *mut EvsplitSamples,
) -> EvsplitStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(EvsplitStatus::NullArgument, "model and out must be non-null");
        }
        let model = &*model;
        let mut cfg = SamplerConfig { blocks: model.blocks.clone(), ..SamplerConfig::default() };
        if !options.is_null() {
            let o = &*options;
            cfg.chains = o.chains as usize;
            cfg.iterations = o.iterations as usize;
            cfg.burn_in = o.burn_in as usize;
            cfg.thin = o.thin as usize;
            cfg.seed = o.seed;
        }
        match sample(&model.graph, &cfg) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(EvsplitSamples { inner: s }));
                EvsplitStatus::Ok
            }
            Err(e) => fail(EvsplitStatus::Sample, e.to_string()),
        }
    })
}

/// Kept draws across all chains.
///
/// # Safety
/// `samples` must be a live handle from this library, or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn evsplit_samples_len(samples: *const EvsplitSamples) -> u64 {
    if samples.is_null() {
        return 0;
    }
    (*samples).inner.n_kept() as u64
}

/// Number of sampled nodes (columns).
///
/// # Safety
/// `samples` must be a live handle from this library, or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn evsplit_samples_node_count(samples: *const EvsplitSamples) -> u64 {
    if samples.is_null() {
        return 0;
    }
    (*samples).inner.node_names.len() as u64
}

/// Name of column `index`, as a fresh string for [`evsplit_string_free`].
///
/// # Safety
/// `samples` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evsplit_samples_node_name(
    samples: *const EvsplitSamples,
    index: u64,
    out: *mut *mut c_char,
) -> EvsplitStatus {
    guarded(|| {
        if samples.is_null() || out.is_null() {
            return fail(EvsplitStatus::NullArgument, "samples and out must be non-null");
        }
        let names = &(*samples).inner.node_names;
        match names.get(index as usize) {
            Some(n) => give_string(n.clone(), out),
            None => fail(
                EvsplitStatus::UnknownNode,
                format!("column {index} out of range ({} columns)", names.len()),
            ),
        }
    })
}

/// Posterior mean and standard deviation of one node.
///
/// # Safety
/// `samples` must be a live handle; `node` NUL-terminated; `mean` and `sd`
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn evsplit_samples_mean_sd(
    samples: *const EvsplitSamples,
    node: *const c_char,
    mean: *mut f64,
    sd: *mut f64,
) -> EvsplitStatus {
    guarded(|| {
        if samples.is_null() || mean.is_null() || sd.is_null() {
            return fail(EvsplitStatus::NullArgument, "samples, mean and sd must be non-null");
        }
        let node = match utf8_arg(node) {
            Ok(n) => n,
            Err(s) => return s,
        };
        match (*samples).inner.mean_sd(node) {
            Some((m, s)) => {
                *mean = m;
                *sd = s;
                EvsplitStatus::Ok
            }
            None => fail(EvsplitStatus::UnknownNode, format!("no sampled node '{node}'")),
        }
    })
}

/// Potential scale reduction factor of one node; 1 is ideal.
///
/// # Safety
/// Same contract as [`evsplit_samples_mean_sd`].
#[no_mangle]
pub unsafe extern "C" fn evsplit_samples_psrf(
    samples: *const EvsplitSamples,
    node: *const c_char,
    out: *mut f64,
) -> EvsplitStatus {
    guarded(|| {
        if samples.is_null() || out.is_null() {
            return fail(EvsplitStatus::NullArgument, "samples and out must be non-null");
        }
        let node = match utf8_arg(node) {
            Ok(n) => n,
            Err(s) => return s,
        };
        let inner = &(*samples).inner;
        match inner.psrf.iter().find(|(n, _)| n == node) {
            Some((_, v)) => {
                *out = *v;
                EvsplitStatus::Ok
            }
            None => fail(EvsplitStatus::UnknownNode, format!("no diagnostic for node '{node}'")),
        }
    })
}

/// # Safety
/// `samples` must come from this library and not have been freed already;
/// null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn evsplit_samples_free(samples: *mut EvsplitSamples) {
    if !samples.is_null() {
        drop(Box::from_raw(samples));
    }
}

/// Deviance summary (mean deviance, plug-in deviance, p_D, DIC, per-datum
/// rows) of a fit, rendered as JSON.
///
/// # Safety
/// `model` and `samples` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evsplit_deviance_json(
    model: *const EvsplitModel,
    samples: *const EvsplitSamples,
    out: *mut *mut c_char,
) -> EvsplitStatus {
    guarded(|| {
        if model.is_null() || samples.is_null() || out.is_null() {
            return fail(EvsplitStatus::NullArgument, "all arguments must be non-null");
        }
        let summary = deviance_summary(&(*model).graph, &(*samples).inner);
        match serde_json::to_string_pretty(&summary) {
            Ok(s) => give_string(s, out),
            Err(e) => fail(EvsplitStatus::Report, e.to_string()),
        }
    })
}

unsafe fn conflict_rendered(
    model: *const EvsplitModel,
    samples: *const EvsplitSamples,
    out: *mut *mut c_char,
    render: impl Fn(&evsplit::stats::ConflictReport) -> String,
) -> EvsplitStatus {
    if model.is_null() || samples.is_null() || out.is_null() {
        return fail(EvsplitStatus::NullArgument, "all arguments must be non-null");
    }
    let Some((sm, spec)) = &(*model).split else {
        return fail(EvsplitStatus::NoSplit, "model has no split layout");
    };
    let cs = match build_contrasts(sm, &(*samples).inner, spec) {
        Ok(cs) => cs,
        Err(e) => return fail(EvsplitStatus::Report, e.to_string()),
    };
    match conflict_report(&cs, &ReportSettings::default()) {
        Ok(report) => give_string(render(&report), out),
        Err(e) => fail(EvsplitStatus::Report, e.to_string()),
    }
}

/// Conflict diagnostics of a fitted split model as JSON: separator
/// summaries, contrasts with unadjusted and adjusted p-values, the pooled
/// chi-squared test.
///
/// # Safety
/// `model` and `samples` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evsplit_conflict_json(
    model: *const EvsplitModel,
    samples: *const EvsplitSamples,
    out: *mut *mut c_char,
) -> EvsplitStatus {
    guarded(|| conflict_rendered(model, samples, out, |r| r.to_json()))
}

/// Same diagnostics as [`evsplit_conflict_json`], rendered as the aligned
/// text table the CLI prints.
///
/// # Safety
/// `model` and `samples` must be live handles; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn evsplit_conflict_text(
    model: *const EvsplitModel,
    samples: *const EvsplitSamples,
    out: *mut *mut c_char,
) -> EvsplitStatus {
    guarded(|| conflict_rendered(model, samples, out, |r| r.text_table()))
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn evsplit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
