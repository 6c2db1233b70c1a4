//! C ABI over the depvoice classifier.
//!
//! Handles (`DvModel`, `DvImage`) are opaque and owned by the caller once
//! returned; release them with the matching `*_free`. Every fallible call
//! returns a `DvStatus`; on failure a message for the calling thread is
//! available through `dv_last_error_message`. Panics never cross the
//! boundary; they surface as `DV_STATUS_PANIC`.

use depvoice::audio_io::{parse_wav, AudioBuffer};
use depvoice::dataset::AugmentSpec;
use depvoice::dsp::{ImageTensor, RenderPipeline};
use depvoice::metrics::{report, ConfusionMatrix};
use depvoice::nn::{load_checkpoint, save_checkpoint, Model, NnError};
use depvoice::segmenter::{segment_buffer, SegmentPolicy};
use depvoice::trainer::{predict_tta, sgdr_lr, SgdrSchedule, TrainError};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Malformed = 4,
    Checksum = 5,
    Version = 6,
    Shape = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Loaded classifier.
pub struct DvModel {
    inner: Model<f32>,
}

/// Rendered spectrogram image, RGB in `[0, 1]`.
pub struct DvImage {
    inner: ImageTensor,
}

/// Binary classification metrics. `precision` and `recall` are only
/// meaningful when the matching `has_*` flag is 1.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DvMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub has_precision: u8,
    pub has_recall: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(DvStatus, String);

impl Failure {
    fn arg(msg: impl Into<String>) -> Self {
        Failure(DvStatus::InvalidArgument, msg.into())
    }
}

impl From<NnError> for Failure {
    fn from(e: NnError) -> Self {
        let status = match &e {
            NnError::InvalidConfig(_) => DvStatus::InvalidArgument,
            NnError::ShapeMismatch(_) => DvStatus::Shape,
            NnError::ChecksumMismatch { .. } => DvStatus::Checksum,
            NnError::VersionMismatch { .. } => DvStatus::Version,
            NnError::MalformedCheckpoint(_) => DvStatus::Malformed,
            NnError::Io(_) => DvStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Nn(n) => n.into(),
            other => Failure(DvStatus::InvalidArgument, other.to_string()),
        }
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            DvStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            DvStatus::Panic
        }
    }
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(DvStatus::NullPointer, format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure(DvStatus::NullPointer, "path is null".into()));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::arg("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(DvStatus::NullPointer, format!("{what} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// including the terminator, or 0 when there is no pending error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dv_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv_model_load(path: *const c_char, out: *mut *mut DvModel) -> DvStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = std::ptr::null_mut();
        let model = load_checkpoint(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(DvModel { inner: model }));
        Ok(())
    })
}

/// Writes the model to a checkpoint file.
///
/// # Safety
/// `model` must come from `dv_model_load`; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dv_model_save(model: *const DvModel, path: *const c_char) -> DvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        save_checkpoint(&m.inner, &path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or come from `dv_model_load`, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dv_model_free(model: *mut DvModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Square input side length expected by the model; 0 for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn dv_model_input_size(model: *const DvModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.input_size)
}

/// Number of output classes; 0 for null.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn dv_model_num_classes(model: *const DvModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.num_classes)
}

fn render(audio: &AudioBuffer, offset_s: f64, window_s: f64, size: usize) -> Result<ImageTensor, Failure> {
    if size == 0 {
        return Err(Failure::arg("image size must be positive"));
    }
    let policy = SegmentPolicy {
        offset_s,
        window_s,
        end_s: None,
    };
    let clip = segment_buffer(audio, &policy)
        .map_err(|e| Failure::arg(e.to_string()))?
        .remove(0);
    let pipeline = RenderPipeline {
        out_size: size,
        ..RenderPipeline::default()
    };
    pipeline.run(&clip).map_err(|e| Failure::arg(e.to_string()))
}

/// Reads a PCM16 WAV file, cuts the window `[offset_s, offset_s + window_s)`
/// and renders it to a `size` x `size` spectrogram image.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv_wav_to_image(
    path: *const c_char,
    offset_s: f64,
    window_s: f64,
    size: usize,
    out: *mut *mut DvImage,
) -> DvStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = std::ptr::null_mut();
        let path = path_arg(path)?;
        let bytes = std::fs::read(&path).map_err(|e| Failure(DvStatus::Io, format!("{}: {e}", path.display())))?;
        let (_, audio) = parse_wav(&bytes).map_err(|e| Failure(DvStatus::Malformed, e.to_string()))?;
        let image = render(&audio, offset_s, window_s, size)?;
        *out = Box::into_raw(Box::new(DvImage { inner: image }));
        Ok(())
    })
}

/// Renders mono samples in `[-1, 1]` the same way as `dv_wav_to_image`.
///
/// # Safety
/// `samples` must point to `n` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv_samples_to_image(
    samples: *const f32,
    n: usize,
    sample_rate_hz: u32,
    offset_s: f64,
    window_s: f64,
    size: usize,
    out: *mut *mut DvImage,
) -> DvStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = std::ptr::null_mut();
        if samples.is_null() {
            return Err(Failure(DvStatus::NullPointer, "samples is null".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Failure::arg("sample rate must be positive"));
        }
        let data = std::slice::from_raw_parts(samples, n).to_vec();
        let image = render(&AudioBuffer::new(data, sample_rate_hz, "ffi"), offset_s, window_s, size)?;
        *out = Box::into_raw(Box::new(DvImage { inner: image }));
        Ok(())
    })
}

/// Image height and width.
///
/// # Safety
/// `image` must be a live image handle; `height` and `width` writable.
#[no_mangle]
pub unsafe extern "C" fn dv_image_dims(image: *const DvImage, height: *mut usize, width: *mut usize) -> DvStatus {
    guard(|| {
        let img = non_null(image, "image")?;
        *out_slot(height, "height")? = img.inner.height;
        *out_slot(width, "width")? = img.inner.width;
        Ok(())
    })
}

/// Releases an image. Null is ignored.
///
/// # Safety
/// `image` must be null or come from an image constructor, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dv_image_free(image: *mut DvImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Class probabilities averaged over the image and `k` augmented views
/// (`k = 0` is a plain prediction). Writes `num_classes` floats to `probs`;
/// index 0 is non-depressed, 1 is depressed.
///
/// # Safety
/// Handles must be live; `probs` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn dv_predict_tta(
    model: *const DvModel,
    image: *const DvImage,
    k: usize,
    aug_seed: u64,
    probs: *mut f32,
    len: usize,
) -> DvStatus {
    guard(|| {
        let m = non_null(model, "model")?;
        let img = non_null(image, "image")?;
        if probs.is_null() {
            return Err(Failure(DvStatus::NullPointer, "probs is null".into()));
        }
        let classes = m.inner.config.num_classes;
        if len < classes {
            return Err(Failure(
                DvStatus::BufferTooSmall,
                format!("probs holds {len} floats, {classes} needed"),
            ));
        }
        let spec = AugmentSpec {
            rng_seed: aug_seed,
            ..AugmentSpec::default()
        };
        let p = predict_tta(&m.inner, &img.inner, &spec, k)?;
        std::slice::from_raw_parts_mut(probs, classes).copy_from_slice(&p);
        Ok(())
    })
}

/// `dv_predict_tta` with no augmented views.
///
/// # Safety
/// As for `dv_predict_tta`.
#[no_mangle]
pub unsafe extern "C" fn dv_predict(model: *const DvModel, image: *const DvImage, probs: *mut f32, len: usize) -> DvStatus {
    dv_predict_tta(model, image, 0, 0, probs, len)
}

/// Metrics for a confusion matrix with depressed as the positive class.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv_metrics(tp: u64, fp: u64, fn_: u64, tn: u64, out: *mut DvMetrics) -> DvStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let r = report(&ConfusionMatrix::new(tp, fp, fn_, tn)).map_err(|e| Failure::arg(e.to_string()))?;
        *out = DvMetrics {
            accuracy: r.accuracy,
            precision: r.precision.unwrap_or(0.0),
            recall: r.recall.unwrap_or(0.0),
            f1: r.f1,
            has_precision: r.precision.is_some() as u8,
            has_recall: r.recall.is_some() as u8,
        };
        Ok(())
    })
}

/// SGDR learning rate at global `step` (`lr_min = lr_max / 100`).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dv_sgdr_lr(
    lr_max: f64,
    cycle_len: usize,
    cycle_mult: usize,
    steps_per_epoch: usize,
    step: usize,
    out: *mut f64,
) -> DvStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let s = SgdrSchedule::new(lr_max, cycle_len, cycle_mult, steps_per_epoch);
        s.validate()?;
        *out = sgdr_lr(step, &s);
        Ok(())
    })
}
