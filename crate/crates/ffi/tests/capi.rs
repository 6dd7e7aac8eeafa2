//! Exercises the C ABI end to end: a tiny training run driven through
//! the exported functions, checkpoint evaluation, the oracle entry
//! point, and (when a C compiler is available) an actual C consumer
//! compiled against the generated header and linked to the staticlib.

use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use tripod_ffi::{
    tripod_config_free, tripod_config_from_json, tripod_config_set_seed, tripod_eval_checkpoint,
    tripod_last_error, tripod_oracle, tripod_train, tripod_version, TripodConfig, TripodMetrics,
    TripodStatus,
};

#[test]
fn train_eval_roundtrip_through_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let json = CString::new(
        r#"{
            "hidden_width": 16,
            "hidden_layers": 2,
            "max_updates": 40,
            "eval_every": 20,
            "batch_size": 8,
            "lambda_klm": 1e-3,
            "lambda_nhp": 1e-3,
            "psnr_threshold": 0.0
        }"#,
    )
    .unwrap();
    let mut cfg: *mut TripodConfig = ptr::null_mut();
    assert_eq!(
        unsafe { tripod_config_from_json(json.as_ptr(), &mut cfg) },
        TripodStatus::Ok
    );
    assert_eq!(unsafe { tripod_config_set_seed(cfg, 3) }, TripodStatus::Ok);

    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut metrics = TripodMetrics::default();
    let status = unsafe { tripod_train(cfg, out_dir.as_ptr(), &mut metrics) };
    if status != TripodStatus::Ok {
        let msg = unsafe { CStr::from_ptr(tripod_last_error()) };
        panic!("train failed: {:?} ({})", status, msg.to_string_lossy());
    }
    assert!(metrics.psnr.is_finite());
    assert!((0.0..=1.0).contains(&metrics.info_m));

    // a checkpoint landed on disk and evaluates through the ABI
    let ckpt = dir.path().join("checkpoint_000040.trpd");
    assert!(ckpt.exists());
    let path = CString::new(ckpt.to_str().unwrap()).unwrap();
    let mut eval = TripodMetrics::default();
    assert_eq!(
        unsafe { tripod_eval_checkpoint(path.as_ptr(), &mut eval) },
        TripodStatus::Ok
    );
    assert_eq!(eval.step, 40);
    assert!((eval.psnr - metrics.psnr).abs() < 1e-9 || eval.psnr.is_finite());

    unsafe { tripod_config_free(cfg) };
}

#[test]
fn psnr_filter_surfaces_no_checkpoint_status() {
    let json = CString::new(
        r#"{
            "hidden_width": 8,
            "hidden_layers": 1,
            "max_updates": 2,
            "eval_every": 1,
            "batch_size": 4,
            "hp_mode": "off",
            "klm_mode": "off",
            "psnr_threshold": 99.0
        }"#,
    )
    .unwrap();
    let mut cfg: *mut TripodConfig = ptr::null_mut();
    assert_eq!(
        unsafe { tripod_config_from_json(json.as_ptr(), &mut cfg) },
        TripodStatus::Ok
    );
    let mut metrics = TripodMetrics::default();
    let status = unsafe { tripod_train(cfg, ptr::null(), &mut metrics) };
    assert_eq!(status, TripodStatus::NoCheckpoint);
    unsafe { tripod_config_free(cfg) };
}

#[test]
fn oracle_suite_callable_from_c_abi() {
    let suite = CString::new("kde").unwrap();
    assert_eq!(unsafe { tripod_oracle(suite.as_ptr()) }, TripodStatus::Ok);
    let bogus = CString::new("nonsense").unwrap();
    assert_eq!(unsafe { tripod_oracle(bogus.as_ptr()) }, TripodStatus::Config);
}

#[test]
fn version_string_exposed() {
    let v = unsafe { CStr::from_ptr(tripod_version()) };
    assert!(v.to_str().unwrap().starts_with('v'));
}

/// Compiles and runs a real C program against include/tripod.h and the
/// static library. Skips quietly when no C compiler or artifact is
/// available (e.g. cross builds with a custom target dir).
#[test]
fn c_consumer_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    let target_dir = manifest.join("../../target");
    let profile_dirs = [target_dir.join("debug"), target_dir.join("release")];
    let Some(lib_dir) = profile_dirs
        .iter()
        .find(|d| d.join("libtripod_ffi.a").exists())
    else {
        eprintln!("skipping: libtripod_ffi.a not found");
        return;
    };
    let cc = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok());
    let Some(cc) = cc else {
        eprintln!("skipping: no C compiler");
        return;
    };

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "tripod.h"

int main(void) {
    if (tripod_version() == NULL) return 1;
    TripodConfig *cfg = NULL;
    if (tripod_config_from_json("{\"n_q\": 7}", &cfg) != TRIPOD_STATUS_OK) return 2;
    char *json = NULL;
    if (tripod_config_to_json(cfg, &json) != TRIPOD_STATUS_OK) return 3;
    int ok = json != NULL;
    tripod_string_free(json);
    tripod_config_free(cfg);
    if (tripod_config_from_json("{\"bad_key\": 1}", &cfg) != TRIPOD_STATUS_CONFIG) return 4;
    printf("c-abi-ok\n");
    return ok ? 0 : 5;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let compile = std::process::Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg("-L")
        .arg(lib_dir)
        .arg("-ltripod_ffi")
        .arg("-lpthread")
        .arg("-ldl")
        .arg("-lm")
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("compiler invocation");
    assert!(
        compile.status.success(),
        "C compile failed: {}",
        String::from_utf8_lossy(&compile.stderr)
    );
    let run = std::process::Command::new(&exe).output().expect("run smoke");
    assert!(run.status.success(), "exit {:?}", run.status);
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "c-abi-ok");
}
