//! C ABI over the `tzsl` library.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free`. Every fallible call returns a [`TzslStatus`]; on
//! failure the message is available from [`tzsl_last_error`] on the same
//! thread. Strings returned through `char **` out-parameters are owned by
//! the caller and released with [`tzsl_string_free`]. Panics never unwind
//! into C; they surface as `TZSL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tzsl::cli::CheckpointMeta;
use tzsl::config::{parse_train_config, PriorMode, TrainConfig};
use tzsl::dataspace::{load_dataset, make_synthetic_tzsl, ClassPrior, Preprocessing, SplitDataset, SyntheticSpec};
use tzsl::eval::{self, Snapshot};
use tzsl::nets::ModelSet;
use tzsl::train::{estimate_prior, run_pipeline};
use tzsl::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzslStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Io = 5,
    Format = 6,
    NonFinite = 7,
    Singular = 8,
    Diverged = 9,
    MissingData = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzslEvalMode {
    Tzsl = 0,
    Gtzsl = 1,
    /// JSON array with one report per feature space.
    Spaces = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TzslPriorMethod {
    Cpe = 0,
    Bbse = 1,
    Uniform = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TzslDatasetShape {
    pub num_seen_classes: usize,
    pub num_unseen_classes: usize,
    pub feature_dim: usize,
    pub attribute_dim: usize,
    pub num_seen: usize,
    pub num_unseen: usize,
    /// 1 when unseen evaluation labels are present.
    pub has_unseen_labels: i32,
}

/// Opaque dataset handle.
pub struct TzslDataset(SplitDataset);

/// Opaque trained model: nets, unseen prior and the settings they came from.
pub struct TzslModel {
    models: ModelSet,
    meta: CheckpointMeta,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> TzslStatus {
    match err {
        Error::InvalidArgument(_) | Error::Degenerate(_) | Error::InductiveContract(_) => TzslStatus::InvalidArgument,
        Error::Config { .. } => TzslStatus::Config,
        Error::ShapeMismatch(_) | Error::LabelOutOfRange { .. } => TzslStatus::Shape,
        Error::MissingFile { .. } | Error::Io { .. } => TzslStatus::Io,
        Error::Manifest { .. } => TzslStatus::Format,
        Error::NonFinite(_) | Error::NonFiniteLoss { .. } => TzslStatus::NonFinite,
        Error::SingularConfusion { .. } => TzslStatus::Singular,
        Error::Diverged { .. } => TzslStatus::Diverged,
        Error::MissingEvalData(_) => TzslStatus::MissingData,
    }
}

struct Fail(TzslStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(TzslStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TzslStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TzslStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            TzslStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(TzslStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn opt_json<T: serde::de::DeserializeOwned>(p: *const c_char, what: &str) -> Result<Option<T>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    let text = str_arg(p, what)?;
    serde_json::from_str(text)
        .map(Some)
        .map_err(|e| Fail(TzslStatus::Config, format!("{what}: {e}")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Ok(());
    }
    let c = CString::new(s).map_err(|_| Fail(TzslStatus::InvalidArgument, "string has interior nul".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn tzsl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn tzsl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset directory. `preprocessing_json` may be null for L2 at
/// radius 1.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tzsl_dataset_load(
    dir: *const c_char,
    preprocessing_json: *const c_char,
    out: *mut *mut TzslDataset,
) -> TzslStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let pre: Preprocessing = opt_json(preprocessing_json, "preprocessing")?.unwrap_or_default();
        write_out(out, TzslDataset(load_dataset(&dir, &pre)?));
        Ok(())
    })
}

/// Generates a synthetic dataset. Null `spec_json` gives the standard
/// fixture; null `preprocessing_json` gives L2 at radius 1.
///
/// # Safety
/// Pointers must be valid or null as documented; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tzsl_dataset_synthetic(
    spec_json: *const c_char,
    seed: u64,
    preprocessing_json: *const c_char,
    out: *mut *mut TzslDataset,
) -> TzslStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec: SyntheticSpec = opt_json(spec_json, "spec")?.unwrap_or_else(SyntheticSpec::fixture);
        let pre: Preprocessing = opt_json(preprocessing_json, "preprocessing")?.unwrap_or_default();
        write_out(out, TzslDataset(make_synthetic_tzsl(&spec, seed)?.preprocessed(&pre)?));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn tzsl_dataset_free(ds: *mut TzslDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tzsl_dataset_shape(ds: *const TzslDataset, out: *mut TzslDatasetShape) -> TzslStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = TzslDatasetShape {
            num_seen_classes: ds.num_seen_classes(),
            num_unseen_classes: ds.num_unseen_classes(),
            feature_dim: ds.feature_dim(),
            attribute_dim: ds.attribute_dim(),
            num_seen: ds.seen_features().rows(),
            num_unseen: ds.unseen_features().rows(),
            has_unseen_labels: ds.unseen_labels_eval().is_some() as i32,
        };
        Ok(())
    })
}

/// Trains the full transductive pipeline. `config_json` is a strict
/// training config (null for the fixture settings). On success `*out` owns
/// the model and, when `report_json` is non-null, `*report_json` holds the
/// evaluation report.
///
/// # Safety
/// `ds` must be a live handle; pointers must be valid or null as documented.
#[no_mangle]
pub unsafe extern "C" fn tzsl_train(
    ds: *const TzslDataset,
    config_json: *const c_char,
    out: *mut *mut TzslModel,
    report_json: *mut *mut c_char,
) -> TzslStatus {
    guard(|| {
        let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_json.is_null() {
            TrainConfig::fixture()
        } else {
            parse_train_config(str_arg(config_json, "config")?)?
        };
        let (state, report) = run_pipeline(data, &cfg)?;
        let meta = CheckpointMeta {
            train: cfg,
            preprocessing: data.preprocessing().copied().unwrap_or_else(Preprocessing::raw),
            prior: state.prior.probs().to_vec(),
            epoch: state.epoch,
        };
        write_string(report_json, to_json(&report))?;
        write_out(
            out,
            TzslModel {
                models: state.models,
                meta,
            },
        );
        Ok(())
    })
}

/// Writes a checkpoint directory readable by the command-line tool.
///
/// # Safety
/// `model` must be a live handle and `dir` a valid string.
#[no_mangle]
pub unsafe extern "C" fn tzsl_model_save(model: *const TzslModel, dir: *const c_char) -> TzslStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        m.models.save(&dir, serde_json::to_value(&m.meta).expect("serializable"))?;
        Ok(())
    })
}

/// # Safety
/// `dir` must be a valid string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tzsl_model_load(dir: *const c_char, out: *mut *mut TzslModel) -> TzslStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let (models, meta) = ModelSet::load(&dir)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)
            .map_err(|e| Fail(TzslStatus::Format, format!("checkpoint meta in {}: {e}", dir.display())))?;
        write_out(out, TzslModel { models, meta });
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn tzsl_model_free(model: *mut TzslModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn check_pair(m: &TzslModel, ds: &SplitDataset) -> Result<ClassPrior, Fail> {
    if m.models.feature_dim() != ds.feature_dim()
        || m.models.attribute_dim() != ds.attribute_dim()
        || m.meta.prior.len() != ds.num_unseen_classes()
    {
        return Err(Fail(
            TzslStatus::Shape,
            format!(
                "model (d_v={}, d_a={}, {} unseen) does not fit dataset (d_v={}, d_a={}, {} unseen)",
                m.models.feature_dim(),
                m.models.attribute_dim(),
                m.meta.prior.len(),
                ds.feature_dim(),
                ds.attribute_dim(),
                ds.num_unseen_classes()
            ),
        ));
    }
    Ok(ClassPrior::new(m.meta.prior.clone())?)
}

/// Evaluates a model; the report (or array of reports) is written to
/// `*report_json`.
///
/// # Safety
/// Handles must be live and `report_json` writable.
#[no_mangle]
pub unsafe extern "C" fn tzsl_evaluate(
    model: *const TzslModel,
    ds: *const TzslDataset,
    mode: TzslEvalMode,
    report_json: *mut *mut c_char,
) -> TzslStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        if report_json.is_null() {
            return Err(null("report_json"));
        }
        let prior = check_pair(m, data)?;
        let snap = Snapshot {
            models: &m.models,
            prior: &prior,
        };
        let cfg = &m.meta.train;
        let json = match mode {
            TzslEvalMode::Tzsl => to_json(&eval::tzsl_evaluate(&snap, data, cfg)?),
            TzslEvalMode::Gtzsl => to_json(&eval::gtzsl_evaluate(&snap, data, cfg)?),
            TzslEvalMode::Spaces => to_json(&eval::space_sweep(&snap, data, cfg)?),
        };
        write_string(report_json, json)
    })
}

/// Estimates the unseen class prior into `out_probs[0..len]`, where `len`
/// must equal the number of unseen classes.
///
/// # Safety
/// Handles must be live and `out_probs` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn tzsl_prior_estimate(
    model: *const TzslModel,
    ds: *const TzslDataset,
    method: TzslPriorMethod,
    seed: u64,
    out_probs: *mut f64,
    len: usize,
) -> TzslStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let data = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        if out_probs.is_null() {
            return Err(null("out_probs"));
        }
        check_pair(m, data)?;
        if len != data.num_unseen_classes() {
            return Err(Fail(
                TzslStatus::Shape,
                format!("buffer of {len} for {} unseen classes", data.num_unseen_classes()),
            ));
        }
        let mode = match method {
            TzslPriorMethod::Cpe => PriorMode::Cpe,
            TzslPriorMethod::Bbse => PriorMode::Bbse,
            TzslPriorMethod::Uniform => PriorMode::Uniform,
        };
        let p = estimate_prior(&m.models, data, &m.meta.train, mode, seed)?;
        std::slice::from_raw_parts_mut(out_probs, len).copy_from_slice(p.probs());
        Ok(())
    })
}

/// Scales `input[0..len]` to norm `radius` into `out` (which may alias
/// `input`).
///
/// # Safety
/// `input` and `out` must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn tzsl_l2_normalize(input: *const f64, len: usize, radius: f64, out: *mut f64) -> TzslStatus {
    guard(|| {
        if input.is_null() || out.is_null() {
            return Err(null("input or out"));
        }
        let v = std::slice::from_raw_parts(input, len).to_vec();
        let n = tzsl::dataspace::l2_normalize(&v, radius)?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&n);
        Ok(())
    })
}

/// `2 s u / (s + u)`, and 0 when both are 0.
#[no_mangle]
pub extern "C" fn tzsl_harmonic_mean(acc_seen: f64, acc_unseen: f64) -> f64 {
    eval::harmonic_mean(acc_seen, acc_unseen)
}
