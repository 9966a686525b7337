use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use frgp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(frgp_last_error()) }.to_string_lossy().into_owned()
}

fn dataset(n: usize) -> *mut FrgpDataset {
    let x: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let y: Vec<f64> = x.iter().map(|v| (6.0 * v).sin()).collect();
    let mut d = ptr::null_mut();
    let s = unsafe { frgp_dataset_new(x.as_ptr(), y.as_ptr(), n, 1, 0.01, &mut d) };
    assert_eq!(s, FrgpStatus::Ok);
    d
}

fn gpi_model() -> *mut FrgpModel {
    let support = [4usize, 8, 12];
    let weights = [0.0, 0.0, 0.0];
    let mut m = ptr::null_mut();
    let s = unsafe { frgp_model_gpi_matern(1.5, 1, true, support.as_ptr(), weights.as_ptr(), 3, 3.0, 3.0, &mut m) };
    assert_eq!(s, FrgpStatus::Ok, "{}", last_error());
    m
}

#[test]
fn sampler_round_trip() {
    let d = dataset(80);
    let m = gpi_model();
    let mut lm = 0.0;
    assert_eq!(unsafe { frgp_log_marginal(d, m, 8, 5.0, &mut lm) }, FrgpStatus::Ok);
    assert!(lm.is_finite());
    let mut chain = ptr::null_mut();
    assert_eq!(unsafe { frgp_run_sampler(d, m, 200, 50, 11, &mut chain) }, FrgpStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { frgp_chain_len(chain) }, 150);
    let acc = unsafe { frgp_chain_acceptance_rate(chain) };
    assert!((0.0..=1.0).contains(&acc));
    let (mut n, mut k) = (0usize, 0.0f64);
    assert_eq!(unsafe { frgp_chain_hyper(chain, 0, &mut n, &mut k) }, FrgpStatus::Ok);
    assert!([4, 8, 12].contains(&n) && k > 0.0);
    assert_eq!(unsafe { frgp_chain_hyper(chain, 150, &mut n, &mut k) }, FrgpStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    let q = [0.25, 0.5];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { frgp_chain_posterior_mean(chain, q.as_ptr(), 2, out.as_mut_ptr(), 2) }, FrgpStatus::Ok);
    assert!((out[0] - 1.5f64.sin()).abs() < 0.1, "{out:?}");
    assert_eq!(
        unsafe { frgp_chain_posterior_mean(chain, q.as_ptr(), 2, out.as_mut_ptr(), 1) },
        FrgpStatus::BufferTooSmall
    );
    unsafe {
        frgp_chain_free(chain);
        frgp_model_free(m);
        frgp_dataset_free(d);
    }
}

#[test]
fn error_codes() {
    let mut d = ptr::null_mut();
    let x = [0.5];
    assert_eq!(unsafe { frgp_dataset_new(x.as_ptr(), ptr::null(), 1, 1, 0.01, &mut d) }, FrgpStatus::NullPointer);
    assert_eq!(unsafe { frgp_dataset_new(x.as_ptr(), x.as_ptr(), 1, 1, -1.0, &mut d) }, FrgpStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let mut m = ptr::null_mut();
    let support = [4usize];
    let w = [0.0];
    assert_eq!(
        unsafe { frgp_model_spde(3, false, support.as_ptr(), w.as_ptr(), 1, 2.0, 1.0, &mut m) },
        FrgpStatus::InvalidArgument
    );
    let mut q = [0.0; 9];
    assert_eq!(unsafe { frgp_spde_precision(2, 1.0, 2, q.as_mut_ptr(), 9) }, FrgpStatus::Ok);
    assert_eq!(q[0], 8.25);
    assert_eq!(unsafe { frgp_spde_precision(2, 1.0, 2, q.as_mut_ptr(), 4) }, FrgpStatus::BufferTooSmall);
    assert_eq!(unsafe { frgp_spde_precision(2, -1.0, 2, q.as_mut_ptr(), 9) }, FrgpStatus::InvalidArgument);
    let bad = CString::new(r#"{"schema_version": 1, "nope": 2}"#).unwrap();
    let data = dataset(10);
    let mut chain = ptr::null_mut();
    assert_eq!(unsafe { frgp_run_config(data, bad.as_ptr(), 1, &mut chain) }, FrgpStatus::Config);
    assert!(chain.is_null());
    unsafe {
        frgp_dataset_free(data);
        frgp_dataset_free(ptr::null_mut());
        frgp_chain_free(ptr::null_mut());
        frgp_model_free(ptr::null_mut());
    }
    assert_eq!(unsafe { frgp_chain_len(ptr::null()) }, 0);
    let v = unsafe { CStr::from_ptr(frgp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn json_config_entry_point() {
    let data = dataset(60);
    let cfg = CString::new(
        r#"{"schema_version": 1, "function": "f1", "n": 60, "method": "spde", "beta": 2,
            "prior": {"n_support": [4, 8], "n_log_weights": [0, 0],
                      "kappa": {"kind": "gamma", "shape": 3, "scale": 3}},
            "iters": 60, "burnin": 20}"#,
    )
    .unwrap();
    let mut chain = ptr::null_mut();
    assert_eq!(unsafe { frgp_run_config(data, cfg.as_ptr(), 5, &mut chain) }, FrgpStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { frgp_chain_len(chain) }, 40);
    unsafe {
        frgp_chain_free(chain);
        frgp_dataset_free(data);
    }
}

/// Compiles a C program against the generated header and runs it linked to the cdylib.
#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libfrgp_ffi.so").exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or cdylib");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "frgp.h"
int main(void) {
    double q[9];
    if (frgp_spde_precision(2, 1.0, 2, q, 9) != FRGP_STATUS_OK) return 1;
    if (q[0] != 8.25) return 2;
    if (frgp_spde_precision(2, 1.0, 3, q, 9) == FRGP_STATUS_OK) return 3;
    if (frgp_last_error()[0] == '\0') return 4;
    printf("%s\n", frgp_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("main");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lfrgp_ffi")
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
