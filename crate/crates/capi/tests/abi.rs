//! Drives the exported C functions exactly as a foreign caller would:
//! C strings in, status codes out, every returned resource freed.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use evsplit_capi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(evsplit_last_error()) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { evsplit_string_free(p) };
    s
}

const CONJUGATE_MODEL: &str = r#"
[[nodes]]
name = "mu"
dist = "normal"
mean = 0.0
sd = 10.0

[[nodes]]
name = "y"
dist = "normal"
mean = "mu"
sd = 1.0

[[observations]]
node = "y"
value = 3.0
"#;

fn small_options() -> EvsplitSamplerOptions {
    EvsplitSamplerOptions { chains: 2, iterations: 20_000, burn_in: 5_000, thin: 5, seed: 7 }
}

#[test]
fn abi_version_and_defaults_are_stable() {
    assert_eq!(evsplit_abi_version(), 1);
    let d = evsplit_sampler_defaults();
    assert_eq!(d.chains, 4);
    assert!(d.iterations > d.burn_in);
    assert!(d.thin >= 1);
}

#[test]
fn null_arguments_are_rejected_with_messages() {
    let mut model: *mut EvsplitModel = ptr::null_mut();
    let status = unsafe { evsplit_model_from_toml(ptr::null(), &mut model) };
    assert_eq!(status, EvsplitStatus::NullArgument);
    assert!(!last_error().is_empty());
    assert!(model.is_null());

    let text = CString::new("x = 1").unwrap();
    let status = unsafe { evsplit_model_from_toml(text.as_ptr(), ptr::null_mut()) };
    assert_eq!(status, EvsplitStatus::NullArgument);

    unsafe {
        assert_eq!(evsplit_model_len(ptr::null()), 0);
        assert!(!evsplit_model_is_split(ptr::null()));
        assert_eq!(evsplit_samples_len(ptr::null()), 0);
        // Frees tolerate null.
        evsplit_model_free(ptr::null_mut());
        evsplit_samples_free(ptr::null_mut());
        evsplit_string_free(ptr::null_mut());
    }
}

#[test]
fn parse_failures_carry_the_parser_message() {
    let text = CString::new("[[nodes]]\nname = \"a\"\ndist = \"normal\"\n").unwrap();
    let mut model: *mut EvsplitModel = ptr::null_mut();
    let status = unsafe { evsplit_model_from_toml(text.as_ptr(), &mut model) };
    assert_eq!(status, EvsplitStatus::Parse);
    assert!(model.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn unknown_builtin_is_reported() {
    let name = CString::new("no-such-analysis").unwrap();
    let mut model: *mut EvsplitModel = ptr::null_mut();
    let status = unsafe { evsplit_model_builtin(name.as_ptr(), &mut model) };
    assert_eq!(status, EvsplitStatus::UnknownBuiltin);
    assert!(last_error().contains("no-such-analysis"));
}

#[test]
fn suite_builtins_are_refused() {
    for name in ["hiv-leave1", "hiv-leave2"] {
        let name = CString::new(name).unwrap();
        let mut model: *mut EvsplitModel = ptr::null_mut();
        let status = unsafe { evsplit_model_builtin(name.as_ptr(), &mut model) };
        assert_eq!(status, EvsplitStatus::Unsupported);
        assert!(last_error().contains("CLI"));
    }
}

#[test]
fn conjugate_model_round_trips_through_the_abi() {
    let text = CString::new(CONJUGATE_MODEL).unwrap();
    let mut model: *mut EvsplitModel = ptr::null_mut();
    assert_eq!(unsafe { evsplit_model_from_toml(text.as_ptr(), &mut model) }, EvsplitStatus::Ok);
    assert_eq!(unsafe { evsplit_model_len(model) }, 2);
    assert!(!unsafe { evsplit_model_is_split(model) });

    let opts = small_options();
    let mut samples: *mut EvsplitSamples = ptr::null_mut();
    assert_eq!(unsafe { evsplit_sample(model, &opts, &mut samples) }, EvsplitStatus::Ok);
    assert_eq!(unsafe { evsplit_samples_len(samples) }, 2 * 3_000);
    // Columns cover the whole graph, observed nodes included.
    assert_eq!(unsafe { evsplit_samples_node_count(samples) }, 2);

    let mut name_ptr: *mut c_char = ptr::null_mut();
    assert_eq!(
        unsafe { evsplit_samples_node_name(samples, 0, &mut name_ptr) },
        EvsplitStatus::Ok
    );
    assert_eq!(take_string(name_ptr), "mu");

    // y ~ N(mu, 1) observed at 3 with a N(0, 10^2) prior: posterior mean
    // 300/101, sd sqrt(100/101).
    let node = CString::new("mu").unwrap();
    let (mut mean, mut sd) = (0.0, 0.0);
    assert_eq!(
        unsafe { evsplit_samples_mean_sd(samples, node.as_ptr(), &mut mean, &mut sd) },
        EvsplitStatus::Ok
    );
    assert!((mean - 300.0 / 101.0).abs() < 0.1, "mean {mean}");
    assert!((sd - (100.0f64 / 101.0).sqrt()).abs() < 0.1, "sd {sd}");

    let mut psrf = 0.0;
    assert_eq!(
        unsafe { evsplit_samples_psrf(samples, node.as_ptr(), &mut psrf) },
        EvsplitStatus::Ok
    );
    assert!(psrf < 1.1, "psrf {psrf}");

    let missing = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { evsplit_samples_mean_sd(samples, missing.as_ptr(), &mut mean, &mut sd) },
        EvsplitStatus::UnknownNode
    );

    let mut json: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { evsplit_deviance_json(model, samples, &mut json) }, EvsplitStatus::Ok);
    let parsed: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert!(parsed["dic"].is_number());

    // No split layout: conflict reporting must refuse.
    let mut text_out: *mut c_char = ptr::null_mut();
    assert_eq!(
        unsafe { evsplit_conflict_text(model, samples, &mut text_out) },
        EvsplitStatus::NoSplit
    );

    unsafe {
        evsplit_samples_free(samples);
        evsplit_model_free(model);
    }
}

#[test]
fn split_builtin_yields_a_conflict_report() {
    let name = CString::new("smoking-scheme-b").unwrap();
    let mut model: *mut EvsplitModel = ptr::null_mut();
    assert_eq!(unsafe { evsplit_model_builtin(name.as_ptr(), &mut model) }, EvsplitStatus::Ok);
    assert!(unsafe { evsplit_model_is_split(model) });
    assert!(unsafe { evsplit_model_len(model) } > 100);

    let opts = EvsplitSamplerOptions { chains: 2, iterations: 8_000, burn_in: 3_000, thin: 5, seed: 3 };
    let mut samples: *mut EvsplitSamples = ptr::null_mut();
    assert_eq!(unsafe { evsplit_sample(model, &opts, &mut samples) }, EvsplitStatus::Ok);

    let mut json: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { evsplit_conflict_json(model, samples, &mut json) }, EvsplitStatus::Ok);
    let parsed: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    let contrasts = parsed["contrasts"].as_array().unwrap();
    assert_eq!(contrasts.len(), 3);
    for row in contrasts {
        assert!(row["p_adjusted"].as_f64().unwrap() > 0.0);
    }
    assert!(parsed["chi2"].is_object());

    let mut table: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { evsplit_conflict_text(model, samples, &mut table) }, EvsplitStatus::Ok);
    let table = take_string(table);
    assert!(table.contains("chi-square"));
    assert!(table.contains("eta_CD:1-2"));

    unsafe {
        evsplit_samples_free(samples);
        evsplit_model_free(model);
    }
}

#[test]
fn generated_header_declares_the_surface() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/evsplit.h"
    ))
    .expect("header is generated by the build script");
    for needle in [
        "#define EVSPLIT_ABI_VERSION 1",
        "EvsplitStatus_Ok = 0",
        "typedef struct EvsplitModel EvsplitModel;",
        "typedef struct EvsplitSamples EvsplitSamples;",
        "evsplit_model_from_toml",
        "evsplit_model_builtin",
        "evsplit_sample(",
        "evsplit_samples_mean_sd",
        "evsplit_deviance_json",
        "evsplit_conflict_json",
        "evsplit_string_free",
        "evsplit_last_error",
    ] {
        assert!(header.contains(needle), "header is missing {needle:?}");
    }
}
