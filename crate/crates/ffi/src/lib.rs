//! C ABI over `clipdiv`. The header is generated into `include/clipdiv.h`.
//!
//! Every call returns a [`ClipdivStatus`]. On failure a message is kept per
//! thread and read with [`clipdiv_last_error`]. Datasets, prompt banks and
//! models are opaque handles: created by `*_read`, `clipdiv_synth_generate` or
//! `clipdiv_train`, released with the matching `*_free`. Buffer arguments must
//! hold the stated number of elements; null handles and null output pointers
//! are reported as `CLIPDIV_STATUS_NULL_POINTER` instead of dereferenced.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use clipdiv::dataio::{
    read_checkpoint, read_dataset, read_prompts, synth_generate, write_checkpoint, write_dataset, write_prompts,
    EmbeddingDataset, SynthConfig,
};
use clipdiv::guidance::zero_shot_probs;
use clipdiv::losses::{KlDirection, LossWeights};
use clipdiv::numerics::{kl_div, softmax_into, Mat};
use clipdiv::trainer::{evaluate, lr_multiplier, train, TrainingConfig};
use clipdiv::{Error, PromptBank, UdaModel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipdivStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad buffer size, non-UTF-8 path, or shape mismatch.
    InvalidArgument = 2,
    /// Rejected configuration or inconsistent inputs.
    Config = 3,
    /// Malformed manifest or blob.
    Format = 4,
    Io = 5,
    /// Degenerate numeric input (zero vectors, empty classes).
    Numeric = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClipdivKlDirection {
    GuidanceFirst = 0,
    ModelFirst = 1,
}

/// Opaque dataset handle.
pub struct ClipdivDataset(EmbeddingDataset);

/// Opaque prompt bank handle.
pub struct ClipdivPromptBank(PromptBank);

/// Opaque trained model plus the class names it predicts.
pub struct ClipdivModel {
    model: UdaModel,
    class_names: Vec<String>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipdivShape {
    pub num_samples: usize,
    pub dim_input: usize,
    /// 0 when the dataset has no CLIP embeddings.
    pub dim_clip: usize,
    pub num_classes: usize,
    pub has_labels: bool,
    pub has_eval_labels: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipdivSynthConfig {
    pub num_classes: usize,
    pub dim_input: usize,
    pub dim_clip: usize,
    pub n_per_domain: usize,
    pub domain_gap: f64,
    pub clip_fidelity: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipdivTrainConfig {
    pub lambda_abs: f64,
    pub lambda_rel: f64,
    pub lambda_pl: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_extractor: f64,
    pub lr_classifier: f64,
    pub momentum: f64,
    pub eta0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub seed: u64,
    pub kl_direction: ClipdivKlDirection,
    /// Width of the single hidden layer; 0 removes it.
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn status_of(e: &Error) -> ClipdivStatus {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidInput(_)
        | Error::InvalidLabel { .. }
        | Error::InvalidDataset(_) => ClipdivStatus::Config,
        Error::Dimension(_) | Error::InvalidBatch(_) => ClipdivStatus::InvalidArgument,
        Error::Format { .. } | Error::Json { .. } => ClipdivStatus::Format,
        Error::Io { .. } => ClipdivStatus::Io,
        Error::DegenerateInput(_) | Error::DegenerateBatch(_) | Error::DegenerateCentroid(_) => ClipdivStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ClipdivStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClipdivStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            ClipdivStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            ClipdivStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            ClipdivStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn buffer<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn buffer_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Failure> {
    rows.checked_mul(cols)
        .ok_or_else(|| Failure::Invalid(format!("{rows} x {cols} overflows")))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Mat, Failure> {
    let data = buffer(p, checked_len(rows, cols)?, what)?;
    Ok(Mat::from_shape_vec((rows, cols), data.to_vec()).expect("length checked"))
}

fn into_handle<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null. Valid until the next failure.
#[no_mangle]
pub extern "C" fn clipdiv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn clipdiv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_dataset_read(path: *const c_char, out: *mut *mut ClipdivDataset) -> ClipdivStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = read_dataset(&path_arg(path, "path")?)?;
        into_handle(ClipdivDataset(ds), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_dataset_write(dataset: *const ClipdivDataset, path: *const c_char) -> ClipdivStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        write_dataset(&path_arg(path, "path")?, &ds.0)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_dataset_shape(
    dataset: *const ClipdivDataset,
    out: *mut ClipdivShape,
) -> ClipdivStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        *out_ptr(out, "out")? = ClipdivShape {
            num_samples: ds.len(),
            dim_input: ds.dim_input(),
            dim_clip: ds.dim_clip().unwrap_or(0),
            num_classes: ds.num_classes(),
            has_labels: ds.labels.is_some(),
            has_eval_labels: ds.eval_labels.is_some(),
        };
        Ok(())
    })
}

/// Accepts null.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_dataset_free(dataset: *mut ClipdivDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_prompts_read(path: *const c_char, out: *mut *mut ClipdivPromptBank) -> ClipdivStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let bank = read_prompts(&path_arg(path, "path")?)?;
        into_handle(ClipdivPromptBank(bank), out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_prompts_write(
    prompts: *const ClipdivPromptBank,
    path: *const c_char,
) -> ClipdivStatus {
    guard(|| {
        let bank = handle(prompts, "prompts")?;
        write_prompts(&path_arg(path, "path")?, &bank.0)?;
        Ok(())
    })
}

/// Accepts null.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_prompts_free(prompts: *mut ClipdivPromptBank) {
    if !prompts.is_null() {
        drop(Box::from_raw(prompts));
    }
}

#[no_mangle]
pub extern "C" fn clipdiv_synth_config_default() -> ClipdivSynthConfig {
    let c = SynthConfig::default();
    ClipdivSynthConfig {
        num_classes: c.num_classes,
        dim_input: c.dim_input,
        dim_clip: c.dim_clip,
        n_per_domain: c.n_per_domain,
        domain_gap: c.domain_gap,
        clip_fidelity: c.clip_fidelity,
        noise_scale: c.noise_scale,
        seed: c.seed,
    }
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_synth_generate(
    config: *const ClipdivSynthConfig,
    out_source: *mut *mut ClipdivDataset,
    out_target: *mut *mut ClipdivDataset,
    out_prompts: *mut *mut ClipdivPromptBank,
) -> ClipdivStatus {
    guard(|| {
        let c = handle(config, "config")?;
        let (os, ot, op) = (
            out_ptr(out_source, "out_source")?,
            out_ptr(out_target, "out_target")?,
            out_ptr(out_prompts, "out_prompts")?,
        );
        let generated = synth_generate(&SynthConfig {
            num_classes: c.num_classes,
            dim_input: c.dim_input,
            dim_clip: c.dim_clip,
            n_per_domain: c.n_per_domain,
            domain_gap: c.domain_gap,
            clip_fidelity: c.clip_fidelity,
            noise_scale: c.noise_scale,
            seed: c.seed,
        })?;
        into_handle(ClipdivDataset(generated.source), os);
        into_handle(ClipdivDataset(generated.target), ot);
        into_handle(ClipdivPromptBank(generated.bank), op);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn clipdiv_train_config_default() -> ClipdivTrainConfig {
    let c = TrainingConfig::default();
    ClipdivTrainConfig {
        lambda_abs: c.weights.lambda_abs,
        lambda_rel: c.weights.lambda_rel,
        lambda_pl: c.weights.lambda_pl,
        epochs: c.epochs,
        batch_size: c.batch_size,
        lr_extractor: c.lr_extractor,
        lr_classifier: c.lr_classifier,
        momentum: c.momentum,
        eta0: c.eta0,
        alpha: c.alpha,
        beta: c.beta,
        tau: c.tau,
        seed: c.seed,
        kl_direction: ClipdivKlDirection::GuidanceFirst,
        hidden_dim: c.hidden_dims.first().copied().unwrap_or(0),
        feature_dim: c.feature_dim,
    }
}

fn training_config(c: &ClipdivTrainConfig) -> TrainingConfig {
    TrainingConfig {
        weights: LossWeights {
            lambda_abs: c.lambda_abs,
            lambda_rel: c.lambda_rel,
            lambda_pl: c.lambda_pl,
        },
        epochs: c.epochs,
        batch_size: c.batch_size,
        lr_extractor: c.lr_extractor,
        lr_classifier: c.lr_classifier,
        momentum: c.momentum,
        eta0: c.eta0,
        alpha: c.alpha,
        beta: c.beta,
        tau: c.tau,
        seed: c.seed,
        kl_direction: match c.kl_direction {
            ClipdivKlDirection::GuidanceFirst => KlDirection::GuidanceFirst,
            ClipdivKlDirection::ModelFirst => KlDirection::ModelFirst,
        },
        hidden_dims: if c.hidden_dim == 0 { vec![] } else { vec![c.hidden_dim] },
        feature_dim: c.feature_dim,
    }
}

/// Trains a model. `out_target_accuracy` may be null; it receives NaN when the
/// target has no evaluation labels.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_train(
    source: *const ClipdivDataset,
    target: *const ClipdivDataset,
    prompts: *const ClipdivPromptBank,
    config: *const ClipdivTrainConfig,
    out_model: *mut *mut ClipdivModel,
    out_target_accuracy: *mut f64,
) -> ClipdivStatus {
    guard(|| {
        let (src, tgt) = (handle(source, "source")?, handle(target, "target")?);
        let bank = handle(prompts, "prompts")?;
        let cfg = training_config(handle(config, "config")?);
        let out = out_ptr(out_model, "out_model")?;
        let (model, metrics) = train(&src.0, &tgt.0, &bank.0, &cfg)?;
        if let Some(acc) = out_target_accuracy.as_mut() {
            *acc = metrics.final_target_accuracy().unwrap_or(f64::NAN);
        }
        into_handle(
            ClipdivModel {
                model,
                class_names: src.0.class_names.clone(),
            },
            out,
        );
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_model_read(path: *const c_char, out: *mut *mut ClipdivModel) -> ClipdivStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (model, class_names) = read_checkpoint(&path_arg(path, "path")?)?;
        into_handle(ClipdivModel { model, class_names }, out);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_model_write(model: *const ClipdivModel, path: *const c_char) -> ClipdivStatus {
    guard(|| {
        let m = handle(model, "model")?;
        write_checkpoint(&path_arg(path, "path")?, &m.model, &m.class_names)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_model_dims(
    model: *const ClipdivModel,
    out_dim_input: *mut usize,
    out_num_classes: *mut usize,
) -> ClipdivStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        *out_ptr(out_dim_input, "out_dim_input")? = m.dim_input();
        *out_ptr(out_num_classes, "out_num_classes")? = m.num_classes();
        Ok(())
    })
}

/// Accepts null.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_model_free(model: *mut ClipdivModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Argmax class of each row of the row-major `rows x cols` matrix `inputs`.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_model_predict(
    model: *const ClipdivModel,
    inputs: *const f64,
    rows: usize,
    cols: usize,
    out_labels: *mut u32,
) -> ClipdivStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let x = matrix(inputs, rows, cols, "inputs")?;
        let out = buffer_mut(out_labels, rows, "out_labels")?;
        for (o, p) in out.iter_mut().zip(m.predict(&x)?) {
            *o = p as u32;
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_evaluate(
    model: *const ClipdivModel,
    dataset: *const ClipdivDataset,
    out_accuracy: *mut f64,
) -> ClipdivStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        *out_ptr(out_accuracy, "out_accuracy")? = evaluate(&m.model, &ds.0)?;
        Ok(())
    })
}

/// Zero-shot distributions: `image` is `n x d`, `text` is `k x d`, `out` is `n x k`, all row-major.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_zero_shot_probs(
    image: *const f64,
    n: usize,
    d: usize,
    text: *const f64,
    k: usize,
    tau: f64,
    out: *mut f64,
) -> ClipdivStatus {
    guard(|| {
        let img = matrix(image, n, d, "image")?;
        let txt = matrix(text, k, d, "text")?;
        let dst = buffer_mut(out, checked_len(n, k)?, "out")?;
        let probs = zero_shot_probs(&img, &txt, tau)?;
        dst.copy_from_slice(probs.as_slice().expect("standard layout"));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn clipdiv_softmax(logits: *const f64, k: usize, tau: f64, out: *mut f64) -> ClipdivStatus {
    guard(|| {
        let z = buffer(logits, k, "logits")?;
        softmax_into(z, tau, buffer_mut(out, k, "out")?)?;
        Ok(())
    })
}

/// `KL(p || q)` over `k` entries.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_kl_div(p: *const f64, q: *const f64, k: usize, out: *mut f64) -> ClipdivStatus {
    guard(|| {
        *out_ptr(out, "out")? = kl_div(buffer(p, k, "p")?, buffer(q, k, "q")?)?;
        Ok(())
    })
}

/// `eta0 / (1 + alpha * theta)^beta`.
#[no_mangle]
pub unsafe extern "C" fn clipdiv_lr_multiplier(
    theta: f64,
    eta0: f64,
    alpha: f64,
    beta: f64,
    out: *mut f64,
) -> ClipdivStatus {
    guard(|| {
        *out_ptr(out, "out")? = lr_multiplier(theta, eta0, alpha, beta)?;
        Ok(())
    })
}
