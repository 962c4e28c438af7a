//! C ABI over the sfnet laboratory.
//!
//! Every function returns an [`SfnetStatus`]; on failure the message is
//! available from [`sfnet_last_error`] on the same thread. Models are opaque
//! handles created by `sfnet_model_*` constructors and released with
//! [`sfnet_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sfnet::checkpoint::{load_checkpoint, save_checkpoint};
use sfnet::model::{count_store_params, SFNet, SFNetConfig};
use sfnet::train::{auc, metrics, ConfusionCounts};
use sfnet::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SfnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Config = 4,
    Io = 5,
    Checkpoint = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct SfnetModel {
    inner: SFNet<f32>,
}

/// Classification metrics; undefined entries are NaN.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct SfnetMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> SfnetStatus {
    match e {
        Error::Shape(_) | Error::Stage { .. } | Error::Length { .. } => SfnetStatus::Shape,
        Error::Config(_) => SfnetStatus::Config,
        Error::Io { .. } | Error::Csv(_) => SfnetStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => SfnetStatus::Checkpoint,
        Error::NonFinite { .. } | Error::Diverged { .. } => SfnetStatus::Numeric,
        Error::Invalid(_) => SfnetStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SfnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SfnetStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("{what} is null"));
            SfnetStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(&msg);
            SfnetStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            SfnetStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::Null(what))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    non_null(p, "path")?;
    let s = CStr::from_ptr(p).to_str().map_err(|_| Failure::Arg("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn emit(out: *mut *mut SfnetModel, model: SFNet<f32>) -> Result<(), Failure> {
    *out = Box::into_raw(Box::new(SfnetModel { inner: model }));
    Ok(())
}

/// Message of the most recent failure on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sfnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Build the desk-scale tiny model with seeded initialization.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_new_tiny(seed: u64, out: *mut *mut SfnetModel) -> SfnetStatus {
    guard(|| {
        non_null(out, "out")?;
        emit(out, SFNet::new(SFNetConfig::tiny(), seed)?)
    })
}

/// Build a model from a flat JSON config document.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_from_json(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SfnetModel,
) -> SfnetStatus {
    guard(|| {
        non_null(config_json, "config_json")?;
        non_null(out, "out")?;
        let text = CStr::from_ptr(config_json).to_str().map_err(|_| Failure::Arg("config is not valid UTF-8".into()))?;
        let cfg: SFNetConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        emit(out, SFNet::new(cfg, seed)?)
    })
}

/// Load a checkpoint directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_load(path: *const c_char, out: *mut *mut SfnetModel) -> SfnetStatus {
    guard(|| {
        non_null(out, "out")?;
        let dir = path_arg(path)?;
        emit(out, load_checkpoint(&dir)?)
    })
}

/// Write a checkpoint directory.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_save(model: *const SfnetModel, path: *const c_char) -> SfnetStatus {
    guard(|| {
        non_null(model, "model")?;
        let dir = path_arg(path)?;
        save_checkpoint(&(*model).inner, &dir)?;
        Ok(())
    })
}

/// Release a handle. Null is accepted and ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_free(model: *mut SfnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable element count of the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_param_count(model: *const SfnetModel, out: *mut u64) -> SfnetStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = count_store_params((*model).inner.store()).total;
        Ok(())
    })
}

/// Input extent `[W, H, D]` expected by the model.
///
/// # Safety
/// `model` must be a live handle; `out` must point to three writable values.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_input_extent(model: *const SfnetModel, out: *mut usize) -> SfnetStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        let e = (*model).inner.config().input_extent;
        ptr::copy_nonoverlapping(e.as_ptr(), out, 3);
        Ok(())
    })
}

/// Evaluation-mode logits for `batch` volumes laid out `[N, C, W, H, D]`
/// with the last axis fastest. `logits` receives `batch * num_classes`
/// values and `logits_len` must equal that count.
///
/// # Safety
/// `input` must hold `batch * C * W * H * D` readable floats; `logits` must
/// hold `logits_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sfnet_model_forward(
    model: *const SfnetModel,
    input: *const f32,
    batch: usize,
    logits: *mut f32,
    logits_len: usize,
) -> SfnetStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(input, "input")?;
        non_null(logits, "logits")?;
        let net = &(*model).inner;
        let cfg = net.config();
        if batch == 0 {
            return Err(Failure::Arg("batch must be at least 1".into()));
        }
        if logits_len != batch * cfg.num_classes {
            return Err(Failure::Arg(format!(
                "logits_len is {logits_len}, expected {}",
                batch * cfg.num_classes
            )));
        }
        let [w, h, d] = cfg.input_extent;
        let shape = [batch, cfg.in_channels, w, h, d];
        let n: usize = shape.iter().product();
        let x = Tensor::new(&shape, std::slice::from_raw_parts(input, n).to_vec())?;
        let y = net.logits(&x)?;
        ptr::copy_nonoverlapping(y.data().as_ptr(), logits, logits_len);
        Ok(())
    })
}

/// Accuracy, sensitivity, specificity and F1 of a confusion table.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sfnet_metrics(tp: u64, fn_: u64, fp: u64, tn: u64, out: *mut SfnetMetrics) -> SfnetStatus {
    guard(|| {
        non_null(out, "out")?;
        let m = metrics(&ConfusionCounts { tp, fn_, fp, tn });
        let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out = SfnetMetrics { acc: v(m.acc), sen: v(m.sen), spe: v(m.spe), f1: v(m.f1) };
        Ok(())
    })
}

/// ROC AUC of class-1 scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must each hold `n` readable values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sfnet_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> SfnetStatus {
    guard(|| {
        non_null(scores, "scores")?;
        non_null(labels, "labels")?;
        non_null(out, "out")?;
        let s = std::slice::from_raw_parts(scores, n);
        let l = std::slice::from_raw_parts(labels, n);
        *out = auc(s, l)?;
        Ok(())
    })
}
