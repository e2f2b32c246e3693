use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use peanosphere_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pmc_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn closed_forms_and_error_codes() {
    let mut c = 0.0;
    assert_eq!(pmc_correlation_from_kappa(16.0, &mut c), PmcStatus::Ok);
    assert!((c + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    let mut s = 0.0;
    assert_eq!(pmc_sigma_from_correlation(c, &mut s), PmcStatus::Ok);
    assert!((s - 4.0).abs() < 1e-12);
    let mut v = 0.0;
    assert_eq!(pmc_laplace_theory(1.0, 1.0, 2.0, 0.1, &mut v), PmcStatus::Ok);
    assert!((v - 0.01).abs() < 1e-15);

    assert_eq!(pmc_correlation_from_kappa(3.0, &mut c), PmcStatus::InvalidParameter);
    assert!(last_error().contains("kappa"), "{}", last_error());
    assert_eq!(pmc_sigma_from_correlation(0.0, ptr::null_mut()), PmcStatus::NullPointer);
    assert!(last_error().contains("out_sigma"));
    assert_eq!(pmc_independent_cone_prob(-1.0, 1.0, &mut v), PmcStatus::InvalidParameter);
}

#[test]
fn field_model_handle() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(pmc_field_model_new(1.0, 0.85, 40, PmcSampler::RadialLateral, &mut m), PmcStatus::Ok);
        let mut dim = 0;
        assert_eq!(pmc_field_model_dim(m, &mut dim), PmcStatus::Ok);
        assert_eq!(dim, 80);
        let mut a = vec![0.0; dim];
        let mut b = vec![0.0; dim];
        assert_eq!(pmc_field_model_sample(m, 3, 0, a.as_mut_ptr(), dim), PmcStatus::Ok);
        assert_eq!(pmc_field_model_sample(m, 3, 0, b.as_mut_ptr(), dim), PmcStatus::Ok);
        assert_eq!(a, b);
        assert_eq!(pmc_field_model_sample(m, 3, 1, b.as_mut_ptr(), dim), PmcStatus::Ok);
        assert_ne!(a, b);
        assert_eq!(pmc_field_model_sample(m, 3, 0, a.as_mut_ptr(), dim - 1), PmcStatus::InvalidParameter);
        pmc_field_model_free(m);
        pmc_field_model_free(ptr::null_mut());

        assert_eq!(pmc_field_model_new(1.0, 1.5, 40, PmcSampler::Dense, &mut m), PmcStatus::InvalidParameter);
        assert_eq!(pmc_field_model_dim(ptr::null(), &mut dim), PmcStatus::NullPointer);
    }
}

#[test]
fn experiment_report_handle() {
    unsafe {
        let name = CString::new("exponent-identity").unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(pmc_run_experiment(name.as_ptr(), ptr::null(), &mut r), PmcStatus::Ok);
        let mut v = PmcVerdict::Fail;
        assert_eq!(pmc_report_verdict(r, &mut v), PmcStatus::Ok);
        assert_eq!(v, PmcVerdict::Pass);
        let mut j = ptr::null();
        assert_eq!(pmc_report_json(r, &mut j), PmcStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(j).to_str().unwrap()).unwrap();
        assert_eq!(json["experiment"], "exponent-identity");
        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(pmc_report_write(r, d.as_ptr()), PmcStatus::Ok);
        assert!(dir.path().join("identity.csv").exists());
        pmc_report_free(r);

        let bad = CString::new("kappas = [8.01]\nbogus = 1").unwrap();
        assert_eq!(pmc_run_experiment(name.as_ptr(), bad.as_ptr(), &mut r), PmcStatus::Config);
        assert!(last_error().contains("bogus"));
        let unknown = CString::new("no-such-thing").unwrap();
        assert_eq!(pmc_run_experiment(unknown.as_ptr(), ptr::null(), &mut r), PmcStatus::Config);
        assert_eq!(pmc_run_experiment(ptr::null(), ptr::null(), &mut r), PmcStatus::NullPointer);
    }
}

/// Compiles and runs a C program against the generated header and the
/// static library.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("peanosphere.h").exists());
    // Integration test binaries live in target/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libpeanosphere_ffi.a");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "peanosphere.h"
int main(void) {
    double c = 0.0;
    if (pmc_correlation_from_kappa(16.0, &c) != PMC_STATUS_OK) return 1;
    if (c > -0.7071 || c < -0.7072) return 2;
    if (pmc_correlation_from_kappa(2.0, &c) != PMC_STATUS_INVALID_PARAMETER) return 3;
    if (strlen(pmc_last_error_message()) == 0) return 4;
    PmcReport *r = NULL;
    if (pmc_run_experiment("exponent-identity", "", &r) != PMC_STATUS_OK) return 5;
    PmcVerdict v;
    if (pmc_report_verdict(r, &v) != PMC_STATUS_OK || v != PMC_VERDICT_PASS) return 6;
    pmc_report_free(r);
    printf("ok %s\n", pmc_version());
    return 0;
}
"#,
    )
    .unwrap();
    if !lib.exists() {
        // Syntax-check the header when the static library is not in this
        // profile directory.
        let st = Command::new("cc").args(["-fsyntax-only", "-I"]).arg(&header_dir).arg(&src).status().expect("cc runs");
        assert!(st.success());
        return;
    }
    let bin = tmp.path().join("main");
    let st = Command::new("cc")
        .arg("-I")
        .arg(&header_dir)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("cc runs");
    assert!(st.success(), "C program failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
