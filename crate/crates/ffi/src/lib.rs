//! C ABI over `descpress`.
//!
//! Objects are opaque handles created by `*_load`, `*_fit`, `dp_train` or
//! `dp_descriptors_from_rows` and released with the matching `*_free`. Every
//! fallible call returns a [`DpStatus`]; on failure the message is available
//! from [`dp_last_error`] on the same thread until the next failing call.
//! Output pointers are written only on success.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use descpress::cli::parse_config_text;
use descpress::data::{load_descriptors, save_descriptors, DescriptorSet, Precision};
use descpress::eval::{evaluate, Task};
use descpress::nn::{load_model, save_model, FrozenEncoder, MlpModel};
use descpress::numerics::Matrix;
use descpress::pca::{fit_pca, pca_transform, PcaModel};
use descpress::train::{reduce, train, NoObserver, Scheme, TrainConfig};
use descpress::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    Shape = 2,
    Format = 3,
    Io = 4,
    Numeric = 5,
    Config = 6,
    State = 7,
    /// The library panicked; the handle involved should be considered unusable.
    Panic = 8,
}

/// Value width of a saved descriptor file.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpPrecision {
    F32 = 4,
    F64 = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpTask {
    Verification = 0,
    Matching = 1,
    Retrieval = 2,
}

/// Descriptors with labels, sequence ids and optional noise tiers.
pub struct DpDescriptors {
    inner: DescriptorSet,
}

/// Trained encoder together with its folded single-precision copy.
pub struct DpEncoder {
    model: MlpModel,
    frozen: FrozenEncoder,
}

pub struct DpPca {
    inner: PcaModel,
}

impl DpEncoder {
    fn new(model: MlpModel) -> DpEncoder {
        let frozen = FrozenEncoder::new(&model);
        DpEncoder { model, frozen }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DpStatus {
    match e {
        Error::Shape(_) => DpStatus::Shape,
        Error::Format { .. } => DpStatus::Format,
        Error::Io { .. } => DpStatus::Io,
        Error::Numeric(_) => DpStatus::Numeric,
        Error::Config(_) => DpStatus::Config,
        Error::State(_) => DpStatus::State,
    }
}

struct Fail(DpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("panic: {msg}"));
            DpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    str_arg(p, name).map(PathBuf::from)
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut_arg<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(invalid(format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn checked_len(rows: usize, cols: usize) -> Result<usize, Fail> {
    rows.checked_mul(cols).ok_or_else(|| invalid("rows * cols overflows"))
}

/// Message of the last failed call on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn dp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- descriptors ----

/// Loads a DDR1 descriptor file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_descriptors_load(path: *const c_char, out: *mut *mut DpDescriptors) -> DpStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, DpDescriptors { inner: load_descriptors(path)? })
    })
}

/// Builds a set from `rows × cols` row-major values and per-row labels and
/// sequence ids. `sequence_ids` may be null, in which case every row gets 0.
///
/// # Safety
/// `data` must hold `rows * cols` doubles; `labels` (and `sequence_ids`, when
/// non-null) must hold `rows` values.
#[no_mangle]
pub unsafe extern "C" fn dp_descriptors_from_rows(
    data: *const f64,
    rows: usize,
    cols: usize,
    labels: *const u32,
    sequence_ids: *const u32,
    out: *mut *mut DpDescriptors,
) -> DpStatus {
    guard(|| {
        let values = slice_arg(data, checked_len(rows, cols)?, "data")?;
        let labels = slice_arg(labels, rows, "labels")?.to_vec();
        let seqs = if sequence_ids.is_null() {
            vec![0; rows]
        } else {
            slice_arg(sequence_ids, rows, "sequence_ids")?.to_vec()
        };
        let m = Matrix::from_vec(rows, cols, values.to_vec())?;
        put(out, DpDescriptors { inner: DescriptorSet::new(m, labels, seqs, None)? })
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `set` a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_descriptors_save(
    set: *const DpDescriptors,
    path: *const c_char,
    precision: DpPrecision,
) -> DpStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let path = path_arg(path, "path")?;
        let precision = match precision {
            DpPrecision::F32 => Precision::F32,
            DpPrecision::F64 => Precision::F64,
        };
        save_descriptors(&set.inner, path, precision)?;
        Ok(())
    })
}

/// Number of rows; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_descriptors_len(set: *const DpDescriptors) -> usize {
    set.as_ref().map_or(0, |s| s.inner.len())
}

/// Row width; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_descriptors_dim(set: *const DpDescriptors) -> usize {
    set.as_ref().map_or(0, |s| s.inner.dim())
}

/// Copies the row-major values into `buf`; `len` must equal `rows * dim`.
///
/// # Safety
/// `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dp_descriptors_copy(set: *const DpDescriptors, buf: *mut f64, len: usize) -> DpStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let data = set.inner.descriptors.data();
        if len != data.len() {
            return Err(Fail(
                DpStatus::Shape,
                format!("buffer holds {len} values, set has {}", data.len()),
            ));
        }
        slice_mut_arg(buf, len, "buf")?.copy_from_slice(data);
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_descriptors_free(set: *mut DpDescriptors) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// ---- encoders ----

/// Loads a DNN1 encoder file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dp_encoder_load(path: *const c_char, out: *mut *mut DpEncoder) -> DpStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, DpEncoder::new(load_model(path)?))
    })
}

/// # Safety
/// `enc` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dp_encoder_save(enc: *const DpEncoder, path: *const c_char) -> DpStatus {
    guard(|| {
        let enc = ref_arg(enc, "encoder")?;
        save_model(&enc.model, path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Trains an encoder. `scheme` is `us`, `ss` or `sv`; `config` is null or
/// `key=value` lines (with `#` comments) applied over the scheme defaults.
///
/// # Safety
/// `set` must be a live handle; strings nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_train(
    set: *const DpDescriptors,
    scheme: *const c_char,
    dim: usize,
    config: *const c_char,
    out: *mut *mut DpEncoder,
) -> DpStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        let scheme: Scheme = str_arg(scheme, "scheme")?.parse()?;
        let mut cfg = TrainConfig::new(scheme, dim);
        if !config.is_null() {
            for (k, v) in parse_config_text(str_arg(config, "config")?)? {
                cfg.set(&k, &v)?;
            }
        }
        let model = train(&set.inner, &cfg, &mut NoObserver)?;
        put(out, DpEncoder::new(model))
    })
}

/// # Safety
/// `enc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_encoder_input_dim(enc: *const DpEncoder) -> usize {
    enc.as_ref().map_or(0, |e| e.model.input_dim())
}

/// # Safety
/// `enc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dp_encoder_output_dim(enc: *const DpEncoder) -> usize {
    enc.as_ref().map_or(0, |e| e.model.output_dim())
}

/// Projects `rows` single-precision rows through the folded encoder.
///
/// # Safety
/// `input` must hold `rows * input_dim` floats and `output` `rows * output_dim`.
#[no_mangle]
pub unsafe extern "C" fn dp_encoder_project_f32(
    enc: *const DpEncoder,
    input: *const f32,
    rows: usize,
    output: *mut f32,
) -> DpStatus {
    guard(|| {
        let enc = ref_arg(enc, "encoder")?;
        let x = slice_arg(input, checked_len(rows, enc.frozen.input_dim())?, "input")?;
        let y = slice_mut_arg(output, checked_len(rows, enc.frozen.output_dim())?, "output")?;
        enc.frozen.project_into(x, y)?;
        Ok(())
    })
}

/// Projects a descriptor set in double precision into a new set.
///
/// # Safety
/// `enc` and `set` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_encoder_reduce(
    enc: *const DpEncoder,
    set: *const DpDescriptors,
    out: *mut *mut DpDescriptors,
) -> DpStatus {
    guard(|| {
        let enc = ref_arg(enc, "encoder")?;
        let set = ref_arg(set, "set")?;
        put(out, DpDescriptors { inner: reduce(&enc.model, &set.inner)? })
    })
}

/// # Safety
/// `enc` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_encoder_free(enc: *mut DpEncoder) {
    if !enc.is_null() {
        drop(Box::from_raw(enc));
    }
}

// ---- PCA ----

/// # Safety
/// `set` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_pca_fit(set: *const DpDescriptors, dim: usize, out: *mut *mut DpPca) -> DpStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        put(out, DpPca { inner: fit_pca(&set.inner, dim)? })
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_pca_load(path: *const c_char, out: *mut *mut DpPca) -> DpStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        put(out, DpPca { inner: PcaModel::load(path)? })
    })
}

/// # Safety
/// `pca` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dp_pca_save(pca: *const DpPca, path: *const c_char) -> DpStatus {
    guard(|| {
        let pca = ref_arg(pca, "pca")?;
        pca.inner.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Projects and ℓ2-normalizes a descriptor set into a new set.
///
/// # Safety
/// `pca` and `set` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_pca_reduce(
    pca: *const DpPca,
    set: *const DpDescriptors,
    out: *mut *mut DpDescriptors,
) -> DpStatus {
    guard(|| {
        let pca = ref_arg(pca, "pca")?;
        let set = ref_arg(set, "set")?;
        put(out, DpDescriptors { inner: pca_transform(&pca.inner, &set.inner)? })
    })
}

/// # Safety
/// `pca` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dp_pca_free(pca: *mut DpPca) {
    if !pca.is_null() {
        drop(Box::from_raw(pca));
    }
}

// ---- evaluation ----

/// Mean average precision of `set` on `task` with default sampling sizes.
///
/// # Safety
/// `set` must be a live handle; `map` writable.
#[no_mangle]
pub unsafe extern "C" fn dp_evaluate(set: *const DpDescriptors, task: DpTask, seed: u64, map: *mut f64) -> DpStatus {
    guard(|| {
        let set = ref_arg(set, "set")?;
        if map.is_null() {
            return Err(invalid("map is null"));
        }
        let task = match task {
            DpTask::Verification => Task::Verification,
            DpTask::Matching => Task::Matching,
            DpTask::Retrieval => Task::Retrieval,
        };
        *map = evaluate(&set.inner, task, seed)?.map_overall;
        Ok(())
    })
}
