//! C interface to `fnode`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `_free` function. Every fallible call returns an
//! [`FnodeStatus`]; on failure [`fnode_last_error`] describes the cause on
//! the calling thread. Panics are caught and reported as
//! [`FnodeStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use fnode::archive::ModelArchive;
use fnode::config::RunConfig;
use fnode::gmm::GmmModel;
use fnode::inference::{self, DrawSource};
use fnode::odeint::TimeGrid;
use fnode::pipeline::{self, MixtureStep};
use fnode::syndata::{self, PanelDataset, SineConfig, Trajectory};
use fnode::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FnodeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    /// Non-finite values, shape errors or an ODE blow-up.
    Numeric = 5,
    Divergence = 6,
    NoAcceptance = 7,
    /// The output buffer is smaller than the required element count.
    BufferTooSmall = 8,
    /// A panic inside the library.
    Internal = 9,
}

/// A panel dataset.
pub struct FnodeDataset(PanelDataset);

/// A trained model together with its fitted mixture, if any.
pub struct FnodeModel(ModelArchive);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(FnodeStatus, String);

fn status_of(e: &Error) -> FnodeStatus {
    match e {
        Error::Invalid(_) | Error::MissingParam(_) | Error::Version { .. } => FnodeStatus::InvalidArgument,
        Error::Parse { .. } | Error::Json(_) => FnodeStatus::Parse,
        Error::Io(_) => FnodeStatus::Io,
        Error::Divergence { .. } => FnodeStatus::Divergence,
        Error::NoAcceptance { .. } => FnodeStatus::NoAcceptance,
        Error::InSample { source, .. } => status_of(source),
        _ => FnodeStatus::Numeric,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: FnodeStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FnodeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FnodeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(format!("internal error: {msg}"));
            FnodeStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(FnodeStatus::NullPointer, format!("`{what}` is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(FnodeStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FnodeStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(FnodeStatus::NullPointer, format!("`{what}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_buffer<'a>(p: *mut f64, cap: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(fail(FnodeStatus::NullPointer, format!("`{what}` is null")));
    }
    if cap < need {
        return Err(fail(
            FnodeStatus::BufferTooSmall,
            format!("`{what}` holds {cap} values but {need} are needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(FnodeStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn trajectory(data: &PanelDataset, index: usize) -> Result<&Trajectory, Failure> {
    data.trajectories.get(index).ok_or_else(|| {
        fail(
            FnodeStatus::InvalidArgument,
            format!("trajectory index {index} out of range (dataset has {})", data.len()),
        )
    })
}

fn mixture(a: &ModelArchive) -> Result<&GmmModel, Failure> {
    a.gmm
        .as_ref()
        .ok_or_else(|| fail(FnodeStatus::InvalidArgument, "the model has no fitted mixture"))
}

fn grid(times: &[f64]) -> Result<TimeGrid, Failure> {
    Ok(TimeGrid::new(times.to_vec())?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fnode_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fnode_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Generates a synthetic dataset: `set` 0 draws amplitude classes, 1
/// frequency classes.
///
/// # Safety
/// `out` must be a valid pointer to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn fnode_dataset_generate(
    set: u32,
    n_per_class: usize,
    n_classes: usize,
    n_points: usize,
    seed: u64,
    out: *mut *mut FnodeDataset,
) -> FnodeStatus {
    guard(|| {
        let cfg = SineConfig {
            n_per_class,
            n_classes,
            n_points,
            seed,
            ..SineConfig::default()
        };
        let data = match set {
            0 => syndata::generate_set_a(&cfg)?,
            1 => syndata::generate_set_b(&cfg)?,
            other => return Err(fail(FnodeStatus::InvalidArgument, format!("unknown set {other}"))),
        };
        put(out, FnodeDataset(data))
    })
}

/// Reads a dataset file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn fnode_dataset_load(path: *const c_char, out: *mut *mut FnodeDataset) -> FnodeStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        put(out, FnodeDataset(syndata::load_dataset(Path::new(path))?))
    })
}

/// Parses dataset text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn fnode_dataset_parse(text: *const c_char, out: *mut *mut FnodeDataset) -> FnodeStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        put(out, FnodeDataset(syndata::parse_dataset(text, "<memory>")?))
    })
}

/// Writes a dataset file.
///
/// # Safety
/// `data` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fnode_dataset_save(data: *const FnodeDataset, path: *const c_char) -> FnodeStatus {
    guard(|| {
        let data = borrow(data, "data")?;
        let path = c_str(path, "path")?;
        Ok(syndata::save_dataset(&data.0, Path::new(path))?)
    })
}

/// Number of trajectories; 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fnode_dataset_len(data: *const FnodeDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Observations in trajectory `index`.
///
/// # Safety
/// `data` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn fnode_dataset_trajectory_len(
    data: *const FnodeDataset,
    index: usize,
    out_len: *mut usize,
) -> FnodeStatus {
    guard(|| {
        let data = borrow(data, "data")?;
        let n = trajectory(&data.0, index)?.len();
        if out_len.is_null() {
            return Err(fail(FnodeStatus::NullPointer, "`out_len` is null"));
        }
        *out_len = n;
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fnode_dataset_free(data: *mut FnodeDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Trains a model on `data` and fits its mixture. `config` holds `key =
/// value` lines and may be null for the defaults.
///
/// # Safety
/// `data` must be a live handle, `config` null or NUL-terminated, `out`
/// writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn fnode_train(
    data: *const FnodeDataset,
    config: *const c_char,
    out: *mut *mut FnodeModel,
) -> FnodeStatus {
    guard(|| {
        let data = borrow(data, "data")?;
        let cfg = if config.is_null() {
            RunConfig::default()
        } else {
            RunConfig::parse(c_str(config, "config")?, "<config>")?
        };
        let outcome = pipeline::train(&data.0, &cfg, None, MixtureStep::Auto, |_, _| {})?;
        put(out, FnodeModel(outcome.archive))
    })
}

/// Reads a model archive.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn fnode_model_load(path: *const c_char, out: *mut *mut FnodeModel) -> FnodeStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        put(out, FnodeModel(ModelArchive::load(Path::new(path))?))
    })
}

/// Writes a model archive.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fnode_model_save(model: *const FnodeModel, path: *const c_char) -> FnodeStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let path = c_str(path, "path")?;
        Ok(model.0.save(Path::new(path))?)
    })
}

/// Latent, embedding and observation widths. Any output pointer may be null.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fnode_model_dims(
    model: *const FnodeModel,
    latent_dim: *mut usize,
    gamma_dim: *mut usize,
    obs_dim: *mut usize,
) -> FnodeStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0.model;
        for (p, v) in [
            (latent_dim, m.latent_dim()),
            (gamma_dim, m.gamma_dim()),
            (obs_dim, m.config.obs_dim),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// 1 when the model carries a fitted mixture, else 0.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fnode_model_has_mixture(model: *const FnodeModel) -> i32 {
    model.as_ref().map_or(0, |m| m.0.gmm.is_some() as i32)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fnode_model_free(model: *mut FnodeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Posterior mean of γ for trajectory `index`, `gamma_dim` values.
///
/// # Safety
/// Handles must be live and `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn fnode_encode_gamma(
    model: *const FnodeModel,
    data: *const FnodeDataset,
    index: usize,
    out: *mut f64,
    cap: usize,
) -> FnodeStatus {
    guard(|| {
        let m = &borrow(model, "model")?.0.model;
        let x = trajectory(&borrow(data, "data")?.0, index)?;
        let gamma = m.encode_gamma(x)?.mean;
        out_buffer(out, cap, gamma.len(), "out")?.copy_from_slice(gamma.data());
        Ok(())
    })
}

/// `n` trajectories from the initial state of trajectory `index` with γ
/// drawn from the mixture, on `times`. Values are laid out sample-major:
/// `out[(s * n_times + t) * obs_dim + j]`.
///
/// # Safety
/// Handles must be live, `times` must hold `n_times` doubles and `out` `cap`.
#[no_mangle]
pub unsafe extern "C" fn fnode_sample(
    model: *const FnodeModel,
    data: *const FnodeDataset,
    index: usize,
    times: *const f64,
    n_times: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
    cap: usize,
) -> FnodeStatus {
    guard(|| {
        let a = &borrow(model, "model")?.0;
        let x = trajectory(&borrow(data, "data")?.0, index)?;
        let grid = grid(slice(times, n_times, "times")?)?;
        let draws = inference::sample_trajectories(&a.model, mixture(a)?, x, &grid, n, seed)?;
        let values: Vec<f64> = draws.iter().flatten().flat_map(|v| v.data().iter().copied()).collect();
        out_buffer(out, cap, values.len(), "out")?.copy_from_slice(&values);
        Ok(())
    })
}

/// Negative log-likelihood of trajectory `index` under the mixture, averaged
/// over `n_gamma` posterior draws. Larger is more anomalous.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fnode_ood_score(
    model: *const FnodeModel,
    data: *const FnodeDataset,
    index: usize,
    n_gamma: usize,
    seed: u64,
    out: *mut f64,
) -> FnodeStatus {
    guard(|| {
        let a = &borrow(model, "model")?.0;
        let x = trajectory(&borrow(data, "data")?.0, index)?;
        let score = inference::ood_score(&a.model, mixture(a)?, x, n_gamma, seed)?;
        if out.is_null() {
            return Err(fail(FnodeStatus::NullPointer, "`out` is null"));
        }
        *out = score;
        Ok(())
    })
}

/// Posterior credible band for trajectory `index` on `times`, including
/// observation noise. Each output holds `n_times * obs_dim` values.
///
/// # Safety
/// Handles must be live, `times` must hold `n_times` doubles and each output
/// `cap`.
#[no_mangle]
pub unsafe extern "C" fn fnode_credible_band(
    model: *const FnodeModel,
    data: *const FnodeDataset,
    index: usize,
    times: *const f64,
    n_times: usize,
    n_draws: usize,
    level: f64,
    seed: u64,
    lower: *mut f64,
    mean: *mut f64,
    upper: *mut f64,
    cap: usize,
) -> FnodeStatus {
    guard(|| {
        let a = &borrow(model, "model")?.0;
        let x = trajectory(&borrow(data, "data")?.0, index)?;
        let grid = grid(slice(times, n_times, "times")?)?;
        let band = inference::credible_band(&a.model, DrawSource::Posterior, x, &grid, n_draws, level, true, seed)?;
        for (src, dst, what) in [
            (&band.lower, lower, "lower"),
            (&band.mean, mean, "mean"),
            (&band.upper, upper, "upper"),
        ] {
            let flat: Vec<f64> = src.iter().flat_map(|v| v.data().iter().copied()).collect();
            out_buffer(dst, cap, flat.len(), what)?.copy_from_slice(&flat);
        }
        Ok(())
    })
}
