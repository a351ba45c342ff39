//! C ABI over the aircast toolkit: opaque handles, integer status codes,
//! and a thread-local last-error message. The generated header lands in
//! `include/aircast.h`.
//!
//! Conventions:
//! - Every function returns an [`AcStatus`]; `AC_STATUS_OK` is zero.
//! - String arguments are NUL-terminated UTF-8.
//! - On failure, [`ac_last_error`] yields a human-readable message for the
//!   calling thread.
//! - Handles from `ac_predictor_open` must be released with
//!   `ac_predictor_close`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use aircast::cli::{load_model_and_data, run_training, write_eval_csv};
use aircast::config::RunConfig;
use aircast::data::synth;
use aircast::data::{write_graph_csv, write_readings_csv, write_stations_csv};
use aircast::model::Model;
use aircast::timefmt::{format_iso, parse_iso};
use aircast::train::{evaluate, predict_window};
use aircast::Error;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Shape = 6,
    Runtime = 7,
    Panicked = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg: String = msg.into();
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> AcStatus {
    match err {
        Error::Io { .. } => AcStatus::Io,
        Error::Parse { .. } => AcStatus::Parse,
        Error::Config(_) => AcStatus::Config,
        Error::ShapeMismatch { .. } => AcStatus::Shape,
        _ => AcStatus::Runtime,
    }
}

fn fail(err: Error) -> AcStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn guarded(f: impl FnOnce() -> AcStatus) -> AcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic in aircast-ffi".to_string());
            set_error(msg);
            AcStatus::Panicked
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated string.
unsafe fn arg_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, AcStatus> {
    if ptr.is_null() {
        set_error(format!("argument '{name}' is NULL"));
        return Err(AcStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => {
            set_error(format!("argument '{name}' is not valid UTF-8"));
            Err(AcStatus::InvalidUtf8)
        }
    }
}

/// Copies the last error message of this thread into `buf` (truncated to
/// `cap` bytes including the trailing NUL) and returns the full message
/// length in bytes, excluding the NUL. Call with `cap == 0` to size a
/// buffer first.
///
/// # Safety
/// `buf` must be NULL or point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ac_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Generates a synthetic dataset (stations.csv, readings.csv,
/// true_graph.csv) in `out_dir`. `graph_kind` is "ring", "clusters" or
/// "random".
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ac_synth(
    nodes: u32,
    steps: u64,
    graph_kind: *const c_char,
    seed: u64,
    out_dir: *const c_char,
) -> AcStatus {
    guarded(|| {
        let kind_s = match arg_str(graph_kind, "graph_kind") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let dir_s = match arg_str(out_dir, "out_dir") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let kind: synth::GraphKind = match kind_s.parse() {
            Ok(k) => k,
            Err(e) => return fail(e),
        };
        if let Err(e) =
            std::fs::create_dir_all(dir_s).map_err(|e| Error::Io { path: dir_s.into(), source: e })
        {
            return fail(e);
        }
        let hash = aircast::config::fnv1a(
            format!("graph={kind_s}\nnodes={nodes}\nseed={seed}\nsteps={steps}\n").as_bytes(),
        );
        let d = match synth::generate(nodes as usize, steps as usize, seed, kind) {
            Ok(d) => d,
            Err(e) => return fail(e),
        };
        let dir = Path::new(dir_s);
        let r = write_stations_csv(&dir.join("stations.csv"), &d.stations, &hash)
            .and_then(|_| {
                write_readings_csv(&dir.join("readings.csv"), &d.stations, &d.frame, &hash)
            })
            .and_then(|_| {
                write_graph_csv(
                    &dir.join("true_graph.csv"),
                    &d.stations,
                    d.truth.weights(),
                    false,
                    &hash,
                )
            });
        match r {
            Ok(()) => AcStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Trains on `data_dir` with the configuration file at `config_path`,
/// writing model.ckpt, train_log.csv and evaluation.csv into `out_dir`.
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ac_train(
    config_path: *const c_char,
    data_dir: *const c_char,
    out_dir: *const c_char,
) -> AcStatus {
    guarded(|| {
        let (cfg_s, data_s, out_s) = match (
            arg_str(config_path, "config_path"),
            arg_str(data_dir, "data_dir"),
            arg_str(out_dir, "out_dir"),
        ) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(st), _, _) | (_, Err(st), _) | (_, _, Err(st)) => return st,
        };
        let cfg = match RunConfig::load(Path::new(cfg_s)) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        if let Err(e) =
            std::fs::create_dir_all(out_s).map_err(|e| Error::Io { path: out_s.into(), source: e })
        {
            return fail(e);
        }
        match run_training(&cfg, Path::new(data_s), Path::new(out_s)) {
            Ok(_) => AcStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Evaluates a checkpoint on the test split of `data_dir` and writes the
/// per-horizon MAE/RMSE table to `out_csv`.
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ac_evaluate(
    checkpoint_path: *const c_char,
    data_dir: *const c_char,
    out_csv: *const c_char,
) -> AcStatus {
    guarded(|| {
        let (ckpt_s, data_s, out_s) = match (
            arg_str(checkpoint_path, "checkpoint_path"),
            arg_str(data_dir, "data_dir"),
            arg_str(out_csv, "out_csv"),
        ) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(st), _, _) | (_, Err(st), _) | (_, _, Err(st)) => return st,
        };
        let (model, ckpt, ds) = match load_model_and_data(Path::new(ckpt_s), Path::new(data_s)) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let mut report = match evaluate(&model, &ds, &ds.test) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        report.config_hash = ckpt.meta.config_hash;
        match write_eval_csv(Path::new(out_s), &report) {
            Ok(()) => AcStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Computes per-station local Moran values for every timestamp and
/// writes them to `out_csv` (wraps the CLI's `moran` subcommand).
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ac_moran(
    data_dir: *const c_char,
    k: u32,
    out_csv: *const c_char,
) -> AcStatus {
    guarded(|| {
        let (data_s, out_s) = match (arg_str(data_dir, "data_dir"), arg_str(out_csv, "out_csv")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(st), _) | (_, Err(st)) => return st,
        };
        let args: Vec<String> = [
            "moran",
            "--data-dir",
            data_s,
            "--k",
            &k.to_string(),
            "--out",
            out_s,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        match aircast::cli::run(&args) {
            Ok(()) => AcStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Opaque forecasting handle: a loaded checkpoint bound to a data
/// directory.
pub struct AcPredictor {
    model: Model,
    ds: aircast::data::Dataset,
}

/// Opens a predictor from a checkpoint and the data directory providing
/// the observation history. The handle is not thread-safe; confine it to
/// one thread.
///
/// # Safety
/// String arguments must be NULL or valid NUL-terminated strings and
/// `out` must be NULL or a valid pointer slot.
#[no_mangle]
pub unsafe extern "C" fn ac_predictor_open(
    checkpoint_path: *const c_char,
    data_dir: *const c_char,
    out: *mut *mut AcPredictor,
) -> AcStatus {
    guarded(|| {
        if out.is_null() {
            set_error("argument 'out' is NULL");
            return AcStatus::NullArgument;
        }
        let (ckpt_s, data_s) = match (
            arg_str(checkpoint_path, "checkpoint_path"),
            arg_str(data_dir, "data_dir"),
        ) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(st), _) | (_, Err(st)) => return st,
        };
        match load_model_and_data(Path::new(ckpt_s), Path::new(data_s)) {
            Ok((model, _, ds)) => {
                *out = Box::into_raw(Box::new(AcPredictor { model, ds }));
                AcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a predictor handle. NULL is a no-op.
///
/// # Safety
/// `p` must be NULL or a handle from `ac_predictor_open` not yet closed.
#[no_mangle]
pub unsafe extern "C" fn ac_predictor_close(p: *mut AcPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Station count and forecast horizon of an open predictor.
///
/// # Safety
/// `p` must be an open handle; the out-pointers must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn ac_predictor_dims(
    p: *const AcPredictor,
    n_stations: *mut u32,
    horizon: *mut u32,
) -> AcStatus {
    guarded(|| {
        if p.is_null() || n_stations.is_null() || horizon.is_null() {
            set_error("NULL argument to ac_predictor_dims");
            return AcStatus::NullArgument;
        }
        let p = &*p;
        *n_stations = p.model.cfg.n_nodes as u32;
        *horizon = p.model.cfg.out_steps as u32;
        AcStatus::Ok
    })
}

/// Forecasts the horizon following the window that ends at
/// `at_timestamp` (ISO-8601 UTC, on the data grid). `out` receives
/// n_stations×horizon doubles, row-major by station, in denormalized
/// units; `out_len` must equal that product.
///
/// # Safety
/// `p` must be an open handle, `at_timestamp` a valid NUL-terminated
/// string, and `out` must point to at least `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ac_predictor_forecast(
    p: *const AcPredictor,
    at_timestamp: *const c_char,
    out: *mut f64,
    out_len: usize,
) -> AcStatus {
    guarded(|| {
        if p.is_null() || out.is_null() {
            set_error("NULL argument to ac_predictor_forecast");
            return AcStatus::NullArgument;
        }
        let at_s = match arg_str(at_timestamp, "at_timestamp") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let p = &*p;
        let need = p.model.cfg.n_nodes * p.model.cfg.out_steps;
        if out_len != need {
            set_error(format!("out_len must be {need}, got {out_len}"));
            return AcStatus::Shape;
        }
        let at = match parse_iso(at_s) {
            Ok(t) => t,
            Err(e) => return fail(e),
        };
        let t_in = p.model.cfg.in_steps;
        let Some(step) = p.ds.frame.step_of(at) else {
            set_error(format!("timestamp {} is not on the data grid", format_iso(at)));
            return AcStatus::Runtime;
        };
        if step + 1 < t_in {
            set_error(format!("window ending at {} needs {t_in} past steps", format_iso(at)));
            return AcStatus::Runtime;
        }
        match predict_window(&p.model, &p.ds, step + 1 - t_in) {
            Ok(values) => {
                std::ptr::copy_nonoverlapping(values.as_ptr(), out, need);
                AcStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
