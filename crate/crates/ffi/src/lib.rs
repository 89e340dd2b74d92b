//! C interface to `owrlab`.
//!
//! Every fallible function returns an [`OwrlabStatus`]; on failure the
//! message is available from [`owrlab_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use owrlab::cli::commands;
use owrlab::cli::config::{load_config, parse_config, ExperimentConfig};
use owrlab::datagen::Sample;
use owrlab::eval::{split_domain, train_model, ResultRow};
use owrlab::owr::{OwrModel, Prediction};
use owrlab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OwrlabStatus {
    Ok = 0,
    /// A null pointer, bad UTF-8 or an out-of-range index.
    InvalidArgument = 1,
    Config = 2,
    Parse = 3,
    Io = 4,
    Dimension = 5,
    Contract = 6,
    Numeric = 7,
    /// The library panicked; the handle arguments should not be reused.
    Internal = 8,
}

impl From<&Error> for OwrlabStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Config(_) => OwrlabStatus::Config,
            Error::Parse { .. } => OwrlabStatus::Parse,
            Error::Io { .. } => OwrlabStatus::Io,
            Error::Dimension { .. } => OwrlabStatus::Dimension,
            Error::Contract(_) => OwrlabStatus::Contract,
            Error::Numeric(_) => OwrlabStatus::Numeric,
        }
    }
}

/// Experiment configuration.
pub struct OwrlabConfig {
    inner: ExperimentConfig,
}

/// Rows of a finished run.
pub struct OwrlabRun {
    rows: Vec<ResultRow>,
    results_path: CString,
}

/// A model trained through a full incremental schedule.
pub struct OwrlabModel {
    model: OwrModel,
    input_len: usize,
}

/// One results row: a (test domain, seed, step) of a method and plugin.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OwrlabRow {
    /// Index into the configured methods.
    pub method_index: u32,
    /// Index into the configured plugins.
    pub plugin_index: u32,
    pub train_domain: u32,
    pub test_domain: u32,
    pub seed: u64,
    pub step: u32,
    pub closed_world_no_reject: f64,
    pub closed_world_with_reject: f64,
    pub open_set_acc: f64,
    pub owr_h: f64,
}

/// Label written by [`owrlab_model_classify`] for rejected samples.
pub const OWRLAB_UNKNOWN: i64 = -1;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(OwrlabStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(OwrlabStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(OwrlabStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OwrlabStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OwrlabStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            OwrlabStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn owrlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn owrlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

fn store_config(cfg: ExperimentConfig, out: &mut *mut OwrlabConfig) {
    *out = Box::into_raw(Box::new(OwrlabConfig { inner: cfg }));
}

/// Parses a configuration from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn owrlab_config_from_toml(toml: *const c_char, out: *mut *mut OwrlabConfig) -> OwrlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(toml, "toml")?;
        store_config(parse_config(text, "<string>")?, out);
        Ok(())
    })
}

/// Reads a configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn owrlab_config_load(path: *const c_char, out: *mut *mut OwrlabConfig) -> OwrlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(path, "path")?);
        store_config(load_config(&path)?, out);
        Ok(())
    })
}

/// Replaces the seed list.
///
/// # Safety
/// `seeds` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn owrlab_config_set_seeds(cfg: *mut OwrlabConfig, seeds: *const u64, len: usize) -> OwrlabStatus {
    guard(|| {
        let cfg = out_arg(cfg, "cfg")?;
        if seeds.is_null() && len > 0 {
            return Err(invalid("seeds is null"));
        }
        cfg.inner.seeds = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(seeds, len).to_vec() };
        Ok(())
    })
}

/// Sets the directory runs write into.
///
/// # Safety
/// `dir` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn owrlab_config_set_output_dir(cfg: *mut OwrlabConfig, dir: *const c_char) -> OwrlabStatus {
    guard(|| {
        let cfg = out_arg(cfg, "cfg")?;
        cfg.inner.output_dir = PathBuf::from(str_arg(dir, "dir")?);
        Ok(())
    })
}

/// Checks every precondition of a run.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn owrlab_config_validate(cfg: *const OwrlabConfig) -> OwrlabStatus {
    guard(|| Ok(ref_arg(cfg, "cfg")?.inner.validate()?))
}

/// # Safety
/// `cfg` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn owrlab_config_free(cfg: *mut OwrlabConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every method, plugin and seed with `jobs` workers, writing the
/// manifest and results under the configured output directory.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn owrlab_run(cfg: *const OwrlabConfig, jobs: u32, out: *mut *mut OwrlabRun) -> OwrlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &ref_arg(cfg, "cfg")?.inner;
        if jobs == 0 {
            return Err(invalid("jobs must be at least 1"));
        }
        cfg.validate()?;
        let summary = commands::run(cfg, jobs as usize)?;
        let results_path = CString::new(summary.results_path.to_string_lossy().into_owned())
            .map_err(|_| invalid("results path contains NUL"))?;
        *out = Box::into_raw(Box::new(OwrlabRun {
            rows: summary.rows,
            results_path,
        }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn owrlab_run_row_count(run: *const OwrlabRun) -> usize {
    run.as_ref().map_or(0, |r| r.rows.len())
}

/// Path of the results CSV; owned by the handle.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn owrlab_run_results_path(run: *const OwrlabRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.results_path.as_ptr())
}

/// Copies row `index` into `out`. Method and plugin indices refer to
/// `cfg`, which must be the configuration the run was started from.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn owrlab_run_get_row(
    run: *const OwrlabRun,
    cfg: *const OwrlabConfig,
    index: usize,
    out: *mut OwrlabRow,
) -> OwrlabStatus {
    guard(|| {
        let run = ref_arg(run, "run")?;
        let cfg = &ref_arg(cfg, "cfg")?.inner;
        let out = out_arg(out, "out")?;
        let r = run
            .rows
            .get(index)
            .ok_or_else(|| invalid(format!("row {index} out of range ({} rows)", run.rows.len())))?;
        let method_index = cfg
            .methods
            .iter()
            .position(|m| m.variant.name() == r.method)
            .ok_or_else(|| invalid(format!("method {} is not in cfg", r.method)))?;
        let plugin_index = cfg
            .plugins
            .iter()
            .position(|p| p.method.name() == r.dg)
            .ok_or_else(|| invalid(format!("plugin {} is not in cfg", r.dg)))?;
        *out = OwrlabRow {
            method_index: method_index as u32,
            plugin_index: plugin_index as u32,
            train_domain: r.train_domain,
            test_domain: r.test_domain,
            seed: r.seed,
            step: r.step as u32,
            closed_world_no_reject: r.closed_world_no_reject,
            closed_world_with_reject: r.closed_world_with_reject,
            open_set_acc: r.open_set_acc,
            owr_h: r.owr_h,
        };
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn owrlab_run_free(run: *mut OwrlabRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Trains configured method `method_index` with plugin `plugin_index`
/// through the whole schedule of `seed` on the train domain.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn owrlab_model_train(
    cfg: *const OwrlabConfig,
    method_index: u32,
    plugin_index: u32,
    seed: u64,
    out: *mut *mut OwrlabModel,
) -> OwrlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &ref_arg(cfg, "cfg")?.inner;
        cfg.validate()?;
        let method = cfg
            .methods
            .get(method_index as usize)
            .ok_or_else(|| invalid(format!("method index {method_index} out of range")))?;
        let dg = cfg
            .plugins
            .get(plugin_index as usize)
            .ok_or_else(|| invalid(format!("plugin index {plugin_index} out of range")))?;
        let domains = commands::load_domains(cfg)?;
        let train_domain = &domains[&cfg.schedule.train_domain];
        let schedule = cfg.schedule_for(seed)?;
        let split = split_domain(train_domain);
        let shape = train_domain.shape();
        let (model, _) = train_model(method, dg, &schedule, &split.train, shape, seed)?;
        *out = Box::into_raw(Box::new(OwrlabModel {
            model,
            input_len: shape.len(),
        }));
        Ok(())
    })
}

/// Number of `f32` values one image has (height x width x channels, in
/// row-major order with interleaved channels, values in [0, 1]).
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn owrlab_model_input_len(model: *const OwrlabModel) -> usize {
    model.as_ref().map_or(0, |m| m.input_len)
}

/// Classifies `count` images stored back to back in `pixels`. Writes one
/// class id per image to `labels`, or [`OWRLAB_UNKNOWN`] when `reject` is
/// nonzero and the image is rejected.
///
/// # Safety
/// `pixels` must hold `count * owrlab_model_input_len` values and `labels`
/// room for `count` values.
#[no_mangle]
pub unsafe extern "C" fn owrlab_model_classify(
    model: *const OwrlabModel,
    pixels: *const f32,
    count: usize,
    reject: i32,
    labels: *mut i64,
) -> OwrlabStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if count == 0 {
            return Ok(());
        }
        if pixels.is_null() || labels.is_null() {
            return Err(invalid("pixels and labels must not be null"));
        }
        let px = std::slice::from_raw_parts(pixels, count * m.input_len);
        let samples: Vec<Sample> = px
            .chunks_exact(m.input_len)
            .map(|p| Sample {
                pixels: p.to_vec(),
                class_id: 0,
                domain_id: 0,
                instance_id: 0,
            })
            .collect();
        let preds = m.model.predict(&samples, reject != 0)?;
        let out = std::slice::from_raw_parts_mut(labels, count);
        for (o, p) in out.iter_mut().zip(preds) {
            *o = match p {
                Prediction::Known(c) => i64::from(c),
                Prediction::Unknown => OWRLAB_UNKNOWN,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn owrlab_model_free(model: *mut OwrlabModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs the built-in gradient and formula checks and writes the number of
/// failures to `failed`.
///
/// # Safety
/// `failed` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn owrlab_selftest(failed: *mut u32) -> OwrlabStatus {
    guard(|| {
        let failed = out_arg(failed, "failed")?;
        let checks = owrlab::cli::selftest::run_selftest()?;
        *failed = checks.iter().filter(|c| !c.passed).count() as u32;
        Ok(())
    })
}
