//! C ABI for the tripod kit: opaque config handles, status codes, and
//! plain-struct metric results, so other languages can drive training,
//! checkpoint evaluation, and the verification oracles.
//!
//! Conventions: every function returns a [`TripodStatus`]; out-pointers
//! are written only on `Ok`; strings are NUL-terminated UTF-8 owned by
//! the callee unless stated otherwise; `tripod_last_error` returns a
//! thread-local message describing the most recent failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use tripod_core::config::RunConfig;
use tripod_core::model::checkpoint::Checkpoint;
use tripod_core::model::train::{evaluate_model, select_checkpoint, train};
use tripod_core::model::Autoencoder;
use tripod_core::tensor::rng::RngState;
use tripod_core::tensor::TensorError;

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripodStatus {
    /// Success.
    Ok = 0,
    /// Internal error (I/O, panic, unexpected state).
    Internal = 1,
    /// Invalid configuration or argument.
    Config = 2,
    /// Numerical failure (non-finite values).
    Numerical = 3,
    /// No checkpoint passed the PSNR filter.
    NoCheckpoint = 4,
    /// A required pointer argument was NULL.
    NullPointer = 5,
}

/// Metric bundle for one evaluated checkpoint.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TripodMetrics {
    pub info_m: f64,
    pub info_c: f64,
    pub info_e: f64,
    pub dci_d: f64,
    pub dci_c: f64,
    pub dci_i: f64,
    pub psnr: f64,
    pub step: u64,
}

/// Opaque run-configuration handle.
pub struct TripodConfig {
    inner: RunConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(e: &TensorError) -> TripodStatus {
    match e {
        TensorError::NonFinite { .. } => TripodStatus::Numerical,
        TensorError::NoCheckpointPassed => TripodStatus::NoCheckpoint,
        TensorError::Domain { .. } => TripodStatus::Config,
        _ => TripodStatus::Internal,
    }
}

fn guarded(f: impl FnOnce() -> TripodStatus) -> TripodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic across FFI boundary");
            TripodStatus::Internal
        }
    }
}

/// # Safety
/// `ptr` must be either NULL or a pointer previously returned through
/// this API and still live.
unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Build identifier of the linked library. The returned pointer is
/// static; do not free it.
#[no_mangle]
pub extern "C" fn tripod_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(tripod_core::VERSION).unwrap())
        .as_ptr()
}

/// Message for the most recent failure on this thread. The pointer is
/// valid until the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn tripod_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Creates a config with all defaults. On success writes a handle the
/// caller must release with `tripod_config_free`.
#[no_mangle]
pub extern "C" fn tripod_config_default(out: *mut *mut TripodConfig) -> TripodStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is NULL");
            return TripodStatus::NullPointer;
        }
        let handle = Box::new(TripodConfig {
            inner: RunConfig::default(),
        });
        unsafe { *out = Box::into_raw(handle) };
        TripodStatus::Ok
    })
}

/// Parses a flat-JSON config (same schema as the CLI's `--config`
/// file). Unknown keys are rejected.
///
/// # Safety
/// `json` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to pointer.
#[no_mangle]
pub unsafe extern "C" fn tripod_config_from_json(
    json: *const c_char,
    out: *mut *mut TripodConfig,
) -> TripodStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is NULL");
            return TripodStatus::NullPointer;
        }
        let Some(text) = (unsafe { cstr_arg(json) }) else {
            set_error("json pointer is NULL or not UTF-8");
            return TripodStatus::NullPointer;
        };
        match RunConfig::from_json(text) {
            Ok(cfg) => {
                unsafe { *out = Box::into_raw(Box::new(TripodConfig { inner: cfg })) };
                TripodStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Serializes a config back to JSON. The returned string must be
/// released with `tripod_string_free`.
///
/// # Safety
/// `config` must be a live handle from this API.
#[no_mangle]
pub unsafe extern "C" fn tripod_config_to_json(
    config: *const TripodConfig,
    out: *mut *mut c_char,
) -> TripodStatus {
    guarded(|| {
        if config.is_null() || out.is_null() {
            set_error("NULL argument");
            return TripodStatus::NullPointer;
        }
        let cfg = unsafe { &*config };
        let json = CString::new(cfg.inner.to_json()).unwrap_or_default();
        unsafe { *out = json.into_raw() };
        TripodStatus::Ok
    })
}

/// Overrides the config's seed.
///
/// # Safety
/// `config` must be a live handle from this API.
#[no_mangle]
pub unsafe extern "C" fn tripod_config_set_seed(
    config: *mut TripodConfig,
    seed: u64,
) -> TripodStatus {
    guarded(|| {
        if config.is_null() {
            set_error("config pointer is NULL");
            return TripodStatus::NullPointer;
        }
        unsafe { (*config).inner.seed = seed };
        TripodStatus::Ok
    })
}

/// Releases a config handle. NULL is a no-op.
///
/// # Safety
/// `config` must be NULL or a handle from this API, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tripod_config_free(config: *mut TripodConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// Releases a string returned by this API. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a string returned by this API, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tripod_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

fn train_impl(
    cfg: &RunConfig,
    out_dir: Option<&str>,
    metrics: &mut TripodMetrics,
) -> Result<(), (TripodStatus, String)> {
    let result = train(cfg).map_err(|e| (status_of(&e), e.to_string()))?;
    let best = select_checkpoint(&result.checkpoints, &result.evals, cfg.psnr_threshold)
        .map_err(|e| (status_of(&e), e.to_string()))?;
    let proc = cfg.process().expect("validated by train");
    let mut rng = RngState::new(cfg.seed);
    let mut model =
        Autoencoder::build(cfg, &proc, &mut rng).map_err(|e| (status_of(&e), e.to_string()))?;
    model.params = best.params.clone();
    let report = evaluate_model(&model, &proc, best.step, cfg.seed)
        .map_err(|e| (status_of(&e), e.to_string()))?;
    if let Some(dir) = out_dir {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)
            .map_err(|e| (TripodStatus::Internal, e.to_string()))?;
        for ckpt in &result.checkpoints {
            ckpt.write_to(&dir.join(format!("checkpoint_{:06}.trpd", ckpt.step)))
                .map_err(|e| (TripodStatus::Internal, e.to_string()))?;
        }
    }
    *metrics = TripodMetrics {
        info_m: report.info_m,
        info_c: report.info_c,
        info_e: report.info_e,
        dci_d: report.dci_d,
        dci_c: report.dci_c,
        dci_i: report.dci_i,
        psnr: report.psnr,
        step: report.step,
    };
    Ok(())
}

/// Trains under `config`, selects the best checkpoint by the PSNR
/// filter, and writes its metrics to `out_metrics`. When `out_dir` is
/// non-NULL, checkpoints are also written there.
///
/// # Safety
/// `config` must be a live handle; `out_dir` NULL or a valid string;
/// `out_metrics` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tripod_train(
    config: *const TripodConfig,
    out_dir: *const c_char,
    out_metrics: *mut TripodMetrics,
) -> TripodStatus {
    guarded(|| {
        if config.is_null() || out_metrics.is_null() {
            set_error("NULL argument");
            return TripodStatus::NullPointer;
        }
        let cfg = unsafe { &(*config).inner };
        let dir = unsafe { cstr_arg(out_dir) };
        let mut metrics = TripodMetrics::default();
        match train_impl(cfg, dir, &mut metrics) {
            Ok(()) => {
                unsafe { *out_metrics = metrics };
                TripodStatus::Ok
            }
            Err((status, msg)) => {
                set_error(&msg);
                status
            }
        }
    })
}

/// Evaluates a checkpoint file on its embedded dataset.
///
/// # Safety
/// `path` must be a valid NUL-terminated path string; `out_metrics` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tripod_eval_checkpoint(
    path: *const c_char,
    out_metrics: *mut TripodMetrics,
) -> TripodStatus {
    guarded(|| {
        if out_metrics.is_null() {
            set_error("out_metrics is NULL");
            return TripodStatus::NullPointer;
        }
        let Some(path) = (unsafe { cstr_arg(path) }) else {
            set_error("path is NULL or not UTF-8");
            return TripodStatus::NullPointer;
        };
        let ckpt = match Checkpoint::read_from(Path::new(path)) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return TripodStatus::Config;
            }
        };
        let run = || -> Result<TripodMetrics, TensorError> {
            let cfg = RunConfig::from_json(&ckpt.config_json)?;
            let proc = cfg.process().ok_or(TensorError::Domain {
                op: "ffi_eval",
                detail: format!("unknown dataset `{}`", cfg.dataset),
            })?;
            let mut rng = RngState::new(cfg.seed);
            let mut model = Autoencoder::build(&cfg, &proc, &mut rng)?;
            model.params = ckpt.params.clone();
            let report = evaluate_model(&model, &proc, ckpt.step, cfg.seed)?;
            Ok(TripodMetrics {
                info_m: report.info_m,
                info_c: report.info_c,
                info_e: report.info_e,
                dci_d: report.dci_d,
                dci_c: report.dci_c,
                dci_i: report.dci_i,
                psnr: report.psnr,
                step: report.step,
            })
        };
        match run() {
            Ok(m) => {
                unsafe { *out_metrics = m };
                TripodStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Runs a verification suite ("all", "gradcheck", "kde", "hutchinson",
/// "prop31", "prop32"). Returns Ok only when every check passes.
///
/// # Safety
/// `suite` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tripod_oracle(suite: *const c_char) -> TripodStatus {
    guarded(|| {
        let Some(name) = (unsafe { cstr_arg(suite) }) else {
            set_error("suite is NULL or not UTF-8");
            return TripodStatus::NullPointer;
        };
        match tripod_core::oracle::run_suite(name) {
            Ok(checks) => {
                if checks.iter().all(|c| c.pass) {
                    TripodStatus::Ok
                } else {
                    let failed: Vec<String> = checks
                        .iter()
                        .filter(|c| !c.pass)
                        .map(|c| c.name.clone())
                        .collect();
                    set_error(&format!("failed checks: {}", failed.join(", ")));
                    TripodStatus::Numerical
                }
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}
