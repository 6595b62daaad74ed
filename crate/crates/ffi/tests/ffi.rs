use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ineqsurvey::synth::GeneratorConfig;
use ineqsurvey_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(is_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn small_dataset(dir: &Path) -> PathBuf {
    let config = GeneratorConfig {
        population_size: 4_000,
        target_sample: 700,
        ..GeneratorConfig::default()
    };
    ineqsurvey::pipeline::simulate_to_dir(dir, &config, 2).unwrap();
    dir.join(ineqsurvey::pipeline::DATASET_FILE)
}

#[test]
fn indices_through_the_c_abi() {
    let v = [1.0, 2.0, 3.0, 4.0];
    let mut out = 0.0;
    unsafe {
        assert_eq!(is_gini_weighted(v.as_ptr(), ptr::null(), 4, &mut out), IsStatus::Ok);
        assert!((out - 0.25).abs() < 1e-15);
        // Weight 2 on a unit equals duplicating it.
        let w = [2.0, 1.0, 1.0, 1.0];
        let dup = [1.0, 1.0, 2.0, 3.0, 4.0];
        let mut g_dup = 0.0;
        assert_eq!(is_gini_weighted(v.as_ptr(), w.as_ptr(), 4, &mut out), IsStatus::Ok);
        assert_eq!(is_gini_weighted(dup.as_ptr(), ptr::null(), 5, &mut g_dup), IsStatus::Ok);
        assert!((out - g_dup).abs() < 1e-15);
        assert_eq!(is_theil([5.0; 3].as_ptr(), ptr::null(), 3, &mut out), IsStatus::Ok);
        assert!(out.abs() < 1e-15);
        assert_eq!(is_atkinson(v.as_ptr(), ptr::null(), 4, 1.0, &mut out), IsStatus::Ok);
        let geo = (24f64).powf(0.25);
        assert!((out - (1.0 - geo / 2.5)).abs() < 1e-15);
        assert_eq!(
            is_weighted_quantile(v.as_ptr(), ptr::null(), 4, 0.5, &mut out),
            IsStatus::Ok
        );
        assert_eq!(out, 2.0);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(
            is_gini_weighted(ptr::null(), ptr::null(), 3, &mut out),
            IsStatus::NullPointer
        );
        assert!(last_error().contains("values"));
        let v = [1.0, 2.0];
        assert_eq!(
            is_weighted_quantile(v.as_ptr(), ptr::null(), 2, 1.5, &mut out),
            IsStatus::InvalidInput
        );
        assert!(last_error().contains("quantile"), "{}", last_error());
        let neg = [-1.0, 2.0];
        assert_ne!(is_theil(neg.as_ptr(), ptr::null(), 2, &mut out), IsStatus::Ok);

        let mut ds = ptr::null_mut();
        let missing = CString::new("/nonexistent/dataset.jsonl").unwrap();
        assert_eq!(is_dataset_load(missing.as_ptr(), 0.0, &mut ds), IsStatus::Runtime);
        assert!(ds.is_null());
        assert!(!last_error().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"schema\":\"ineqsurvey.dataset\"}\n").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(is_dataset_load(bad.as_ptr(), 0.0, &mut ds), IsStatus::InvalidInput);
        assert!(last_error().contains("line 1"), "{}", last_error());

        is_dataset_free(ptr::null_mut());
        is_report_free(ptr::null_mut());
    }
}

#[test]
fn estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(small_dataset(dir.path()).to_str().unwrap()).unwrap();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            is_dataset_load(path.as_ptr(), 0.0, &mut ds),
            IsStatus::Ok,
            "{}",
            last_error()
        );
        let mut n = 0;
        assert_eq!(is_dataset_len(ds, &mut n), IsStatus::Ok);
        assert!(n > 300);

        let mut opts = std::mem::zeroed::<IsEstimateOptions>();
        assert_eq!(is_default_options(&mut opts), IsStatus::Ok);
        assert_eq!(opts.iterations, 20_000);
        opts.iterations = 80;
        opts.burn_in = 20;
        opts.seed = 3;
        let summaries = CString::new("gini,atkinson:1.5").unwrap();
        let mut report = ptr::null_mut();
        assert_eq!(
            is_estimate(ds, &opts, summaries.as_ptr(), &mut report),
            IsStatus::Ok,
            "{}",
            last_error()
        );
        let mut rows = 0;
        assert_eq!(is_report_len(report, &mut rows), IsStatus::Ok);
        assert_eq!(rows, 2);
        let mut row = IsReportRow::default();
        assert_eq!(is_report_row(report, 0, &mut row), IsStatus::Ok);
        assert!(row.lower <= row.prediction && row.prediction <= row.upper);
        assert!(row.prediction > 0.3 && row.prediction < 0.9);
        assert_eq!(row.n_used, 60);
        assert_eq!(CStr::from_ptr(is_report_label(report, 0)).to_str().unwrap(), "Gini");
        assert!(is_report_label(report, 2).is_null());
        assert_eq!(is_report_row(report, 2, &mut row), IsStatus::InvalidInput);

        let out = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
        assert_eq!(is_report_write(report, out.as_ptr()), IsStatus::Ok, "{}", last_error());
        assert!(dir.path().join("run/manifest.json").exists());

        let bad = CString::new("gini,nonsense").unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(is_estimate(ds, &opts, bad.as_ptr(), &mut other), IsStatus::InvalidInput);
        assert!(other.is_null());

        is_report_free(report);
        is_dataset_free(ds);
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "ineqsurvey.h"

int main(int argc, char **argv) {
    double v[4] = {1.0, 2.0, 3.0, 4.0};
    double g = 0.0;
    if (is_gini_weighted(v, NULL, 4, &g) != IS_STATUS_OK || g != 0.25) return 2;
    if (is_weighted_quantile(v, NULL, 4, 2.0, &g) != IS_STATUS_INVALID_INPUT) return 3;
    if (strlen(is_last_error_message()) == 0) return 4;

    IsDataset *ds = NULL;
    if (is_dataset_load(argv[1], 0.0, &ds) != IS_STATUS_OK) {
        fprintf(stderr, "%s\n", is_last_error_message());
        return 5;
    }
    IsEstimateOptions opts;
    is_default_options(&opts);
    opts.iterations = 40;
    opts.burn_in = 10;
    opts.seed = 9;
    IsReport *rep = NULL;
    if (is_estimate(ds, &opts, "gini", &rep) != IS_STATUS_OK) {
        fprintf(stderr, "%s\n", is_last_error_message());
        return 6;
    }
    IsReportRow row;
    if (is_report_row(rep, 0, &row) != IS_STATUS_OK) return 7;
    printf("%s %s %.6f %zu\n", is_version(), is_report_label(rep, 0), row.prediction, row.n_used);
    is_report_free(rep);
    is_dataset_free(ds);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let lib = [
        deps.join("libineqsurvey_ffi.a"),
        deps.parent().unwrap().join("libineqsurvey_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.exists())
    .expect("static library next to the test binary");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let data = small_dataset(dir.path());
    let out = Command::new(&exe).arg(&data).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = stdout.split_whitespace().collect();
    assert_eq!(fields[0], env!("CARGO_PKG_VERSION"));
    assert_eq!(fields[1], "Gini");
    assert_eq!(fields[3], "30");
}
