//! C interface to deepfactor.
//!
//! Every fallible function returns a [`DfStatus`]; on failure the message is
//! available from [`df_last_error_message`] on the same thread. Objects are
//! opaque handles created by the `*_simulate`, `*_load` and `*_train` functions and
//! released with the matching `*_free`. Matrices are written row-major into
//! caller-provided buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use deepfactor::data::{load_panel, simulate_market, DataPaths, LoadOptions, PanelDataset, SimConfig};
use deepfactor::stats::alpha_rmse;
use deepfactor::training::{gradient_check_full, train, Benchmark, CellSpec, Prepared, TrainConfig, TrainedModel};
use deepfactor::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    InvalidArgument = 1,
    Data = 2,
    Numerical = 3,
    NullPointer = 4,
    Panic = 5,
}

/// Which benchmark factors sit beside the deep factors.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfBenchmark {
    Capm = 0,
    Ff3 = 1,
    Ff4 = 2,
}

impl From<DfBenchmark> for Benchmark {
    fn from(b: DfBenchmark) -> Self {
        match b {
            DfBenchmark::Capm => Benchmark::Capm,
            DfBenchmark::Ff3 => Benchmark::Ff3,
            DfBenchmark::Ff4 => Benchmark::Ff4,
        }
    }
}

/// A loaded or simulated panel of firms, macro series, factors and
/// portfolios.
pub struct DfDataset {
    inner: PanelDataset,
}

/// A trained deep factor model.
pub struct DfModel {
    inner: TrainedModel,
}

enum Failure {
    Lib(Error),
    Null(&'static str),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            match e.exit_code() {
                1 => DfStatus::InvalidArgument,
                2 => DfStatus::Data,
                _ => DfStatus::Numerical,
            }
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            DfStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            DfStatus::InvalidArgument
        }
        Err(_) => {
            set_error("internal panic".into());
            DfStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn df_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulates a market with one planted factor.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_simulate(firms: usize, months: usize, seed: u64, out: *mut *mut DfDataset) -> DfStatus {
    guard(|| {
        let sim = simulate_market(&SimConfig {
            firms,
            months,
            seed,
            ..SimConfig::default()
        })?;
        put(out, DfDataset { inner: sim.dataset })
    })
}

/// Loads `firms.csv`, `macro.csv`, `factors.csv` and `portfolios.csv` from
/// `dir`.
///
/// # Safety
/// `dir` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_load(dir: *const c_char, out: *mut *mut DfDataset) -> DfStatus {
    guard(|| {
        let dir = path_arg(dir, "dir")?;
        let inner = load_panel(&DataPaths::in_dir(dir), LoadOptions::default())?;
        put(out, DfDataset { inner })
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_free(dataset: *mut DfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle and `months`/`portfolios` writable.
#[no_mangle]
pub unsafe extern "C" fn df_dataset_shape(
    dataset: *const DfDataset,
    months: *mut usize,
    portfolios: *mut usize,
) -> DfStatus {
    guard(|| {
        let d = &get(dataset, "dataset")?.inner;
        put_value(months, d.num_months())?;
        put_value(portfolios, d.num_portfolios())
    })
}

/// Trains one architecture on every month of `dataset`. Mini-batches are
/// capped at the sample length.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_model_train(
    dataset: *const DfDataset,
    layers: usize,
    factors: usize,
    conditions: usize,
    benchmark: DfBenchmark,
    epochs: usize,
    seed: u64,
    out: *mut *mut DfModel,
) -> DfStatus {
    guard(|| {
        let d = &get(dataset, "dataset")?.inner;
        let prep = Prepared::new(d)?;
        let defaults = TrainConfig::default();
        let config = TrainConfig {
            epochs,
            batch_months: defaults.batch_months.min(d.num_months()),
            ..defaults
        };
        let cell = CellSpec {
            layers,
            factors,
            conditions,
        };
        let inner = train(&prep, cell, benchmark.into(), &config, 0..d.num_months(), seed, None)?;
        put(out, DfModel { inner })
    })
}

/// # Safety
/// `path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_model_load(path: *const c_char, out: *mut *mut DfModel) -> DfStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, DfModel { inner: TrainedModel::load(path)? })
    })
}

/// # Safety
/// `model` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn df_model_save(model: *const DfModel, path: *const c_char) -> DfStatus {
    guard(|| {
        let m = &get(model, "model")?.inner;
        Ok(m.save(path_arg(path, "path")?)?)
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn df_model_free(model: *mut DfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of deep factors and the full-window training loss.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn df_model_summary(model: *const DfModel, factors: *mut usize, final_loss: *mut f64) -> DfStatus {
    guard(|| {
        let m = &get(model, "model")?.inner;
        put_value(factors, m.cell.factors)?;
        put_value(final_loss, m.final_train_loss)
    })
}

/// Hard-sort deep factor returns over every month of `dataset`, written as
/// a factors x months row-major matrix into `buffer` of `len` doubles.
///
/// # Safety
/// Handles must be live and `buffer` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn df_model_factor_returns(
    model: *const DfModel,
    dataset: *const DfDataset,
    buffer: *mut f64,
    len: usize,
) -> DfStatus {
    guard(|| {
        let m = &get(model, "model")?.inner;
        let d = &get(dataset, "dataset")?.inner;
        if buffer.is_null() {
            return Err(Failure::Null("buffer"));
        }
        let prep = Prepared::new(d)?;
        let months: Vec<usize> = (0..d.num_months()).collect();
        let f = m.deep_factors(&prep, &months, None)?;
        let values = f.as_slice();
        if values.len() != len {
            return Err(Failure::Arg(format!("buffer holds {len} values, {} needed", values.len())));
        }
        std::slice::from_raw_parts_mut(buffer, len).copy_from_slice(values);
        Ok(())
    })
}

/// Root mean squared pricing-error alpha of the model on every month of
/// `dataset`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_model_alpha_rmse(model: *const DfModel, dataset: *const DfDataset, out: *mut f64) -> DfStatus {
    guard(|| {
        let m = &get(model, "model")?.inner;
        let d = &get(dataset, "dataset")?.inner;
        let prep = Prepared::new(d)?;
        let months: Vec<usize> = (0..d.num_months()).collect();
        let e = m.pricing_errors(&prep, &months, None)?;
        let alphas: Vec<f64> = (0..e.rows()).map(|i| e.row(i).iter().sum::<f64>() / e.cols() as f64).collect();
        put_value(out, alpha_rmse(&alphas)?)
    })
}

/// Largest relative error between analytic and finite-difference
/// gradients of one architecture on `dataset`.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn df_gradcheck(
    dataset: *const DfDataset,
    layers: usize,
    factors: usize,
    conditions: usize,
    seed: u64,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        let d = &get(dataset, "dataset")?.inner;
        let prep = Prepared::new(d)?;
        let config = TrainConfig {
            p_keep: 1.0,
            ..TrainConfig::default()
        };
        let cell = CellSpec {
            layers,
            factors,
            conditions,
        };
        let g = gradient_check_full(&prep, cell, Benchmark::Capm, &config, seed)?;
        let e = g
            .max_relative_error
            .ok_or_else(|| Failure::Lib(Error::Numerical("sort is not differentiable".into())))?;
        put_value(out, e)
    })
}
