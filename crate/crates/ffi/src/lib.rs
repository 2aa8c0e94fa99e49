//! C interface to the usgan core: load a trained generator and sample
//! from it, render phantom subjects, and compute the evaluation metrics.
//!
//! Every function returns a [`UsganStatus`]. On failure the message is
//! kept per thread and can be read with [`usgan_last_error`]. Output
//! buffers are caller-allocated; their required length is documented on
//! each function and checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use usgan::cli::checkpoint::gan_from_checkpoint;
use usgan::cli::Checkpoint;
use usgan::data::{generate_subject, tensor_to_images, Label, VIEWS_PER_SUBJECT};
use usgan::gan::GanModel;
use usgan::metrics::{frechet_distance, inception_score, paired_t_test, FeatureMatrix};
use usgan::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UsganStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Format = 5,
    Degenerate = 6,
    Internal = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> UsganStatus {
    match err {
        Error::Io { .. } => UsganStatus::Io,
        Error::Format { .. } | Error::Checkpoint(_) => UsganStatus::Format,
        Error::Degenerate(_) => UsganStatus::Degenerate,
        Error::NonFinite { .. } | Error::MissingGradient(_) => UsganStatus::Internal,
        _ => UsganStatus::InvalidArgument,
    }
}

struct Failure(UsganStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn fail(status: UsganStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UsganStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            UsganStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            UsganStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(UsganStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(
    p: *mut T,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(fail(UsganStatus::NullPointer, format!("{what} is null")));
    }
    if len < need {
        return Err(fail(
            UsganStatus::BufferTooSmall,
            format!("{what} holds {len} elements, {need} required"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(UsganStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null after a
/// successful one. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn usgan_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn usgan_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque handle to a trained generator.
pub struct UsganGenerator {
    model: GanModel<f32>,
}

/// Loads a generator checkpoint written by `usgan train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
/// The handle written to `*out` must be released with
/// [`usgan_generator_free`].
#[no_mangle]
pub unsafe extern "C" fn usgan_generator_load(
    path: *const c_char,
    out: *mut *mut UsganGenerator,
) -> UsganStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(fail(UsganStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(UsganStatus::InvalidArgument, "path is not UTF-8"))?;
        let model = gan_from_checkpoint::<f32>(&Checkpoint::load(Path::new(path))?)?;
        *out = Box::into_raw(Box::new(UsganGenerator { model }));
        Ok(())
    })
}

/// Releases a generator. Null is ignored.
///
/// # Safety
/// `gen` must be null or a handle from [`usgan_generator_load`] that has
/// not been freed.
#[no_mangle]
pub unsafe extern "C" fn usgan_generator_free(gen: *mut UsganGenerator) {
    if !gen.is_null() {
        drop(Box::from_raw(gen));
    }
}

/// Side length in pixels of the images the generator produces.
///
/// # Safety
/// `gen` must be a live handle and `out_side` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn usgan_generator_resolution(
    gen: *const UsganGenerator,
    out_side: *mut usize,
) -> UsganStatus {
    guard(|| {
        let gen = gen
            .as_ref()
            .ok_or_else(|| fail(UsganStatus::NullPointer, "generator is null"))?;
        *out_ref(out_side, "out_side")? = gen.model.config.output_resolution();
        Ok(())
    })
}

/// Samples `n` images as 8-bit grayscale, row-major, one after another.
/// `out` must hold `n * side * side` bytes. Equal seeds give equal images.
///
/// # Safety
/// `gen` must be a live handle not used concurrently from another
/// thread, and `out` must point to `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn usgan_generator_synthesize(
    gen: *mut UsganGenerator,
    n: usize,
    seed: u64,
    out: *mut u8,
    out_len: usize,
) -> UsganStatus {
    guard(|| {
        let gen = gen
            .as_mut()
            .ok_or_else(|| fail(UsganStatus::NullPointer, "generator is null"))?;
        let side = gen.model.config.output_resolution();
        let out = slice_mut(out, out_len, n * side * side, "out")?;
        if n == 0 {
            return Ok(());
        }
        let images = tensor_to_images(&gen.model.synthesize(n, seed)?)?;
        for (chunk, img) in out.chunks_exact_mut(side * side).zip(&images) {
            chunk.copy_from_slice(&img.pixels);
        }
        Ok(())
    })
}

/// Renders the views of one phantom subject. `label` is 0 for healthy
/// and 1 for diseased; `out` must hold `views * resolution^2` bytes where
/// `views` is [`usgan_views_per_subject`].
///
/// # Safety
/// `out` must point to `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn usgan_phantom_subject(
    label: u32,
    seed: u64,
    resolution: usize,
    out: *mut u8,
    out_len: usize,
) -> UsganStatus {
    guard(|| {
        let label = Label::from_index(label as usize)?;
        let subject = generate_subject(label, seed, resolution)?;
        let out = slice_mut(
            out,
            out_len,
            VIEWS_PER_SUBJECT * resolution * resolution,
            "out",
        )?;
        for (chunk, img) in out
            .chunks_exact_mut(resolution * resolution)
            .zip(&subject.images)
        {
            chunk.copy_from_slice(&img.pixels);
        }
        Ok(())
    })
}

/// Number of views rendered per phantom subject.
#[no_mangle]
pub extern "C" fn usgan_views_per_subject() -> usize {
    VIEWS_PER_SUBJECT
}

/// Fréchet distance between two feature sets given as row-major
/// `n x dim` matrices.
///
/// # Safety
/// `real` and `fake` must point to `n_real * dim` and `n_fake * dim`
/// readable doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn usgan_frechet_distance(
    real: *const f64,
    n_real: usize,
    fake: *const f64,
    n_fake: usize,
    dim: usize,
    out: *mut f64,
) -> UsganStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let real = FeatureMatrix::new(n_real, dim, slice(real, n_real * dim, "real")?.to_vec())?;
        let fake = FeatureMatrix::new(n_fake, dim, slice(fake, n_fake * dim, "fake")?.to_vec())?;
        *out = frechet_distance(&real, &fake)?;
        Ok(())
    })
}

/// Inception score of `n` class-probability rows of width `classes`,
/// averaged over `splits` disjoint splits. Writes mean and population
/// standard deviation across splits.
///
/// # Safety
/// `probs` must point to `n * classes` readable doubles; `out_mean` and
/// `out_std` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn usgan_inception_score(
    probs: *const f64,
    n: usize,
    classes: usize,
    splits: usize,
    out_mean: *mut f64,
    out_std: *mut f64,
) -> UsganStatus {
    guard(|| {
        let out_mean = out_ref(out_mean, "out_mean")?;
        let out_std = out_ref(out_std, "out_std")?;
        let probs = FeatureMatrix::new(n, classes, slice(probs, n * classes, "probs")?.to_vec())?;
        (*out_mean, *out_std) = inception_score(&probs, splits)?;
        Ok(())
    })
}

/// Two-tailed paired t-test over `k` pairs.
///
/// # Safety
/// `a` and `b` must point to `k` readable doubles each; the outputs must
/// be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn usgan_paired_t_test(
    a: *const f64,
    b: *const f64,
    k: usize,
    out_t: *mut f64,
    out_df: *mut usize,
    out_p: *mut f64,
) -> UsganStatus {
    guard(|| {
        let (out_t, out_df, out_p) = (
            out_ref(out_t, "out_t")?,
            out_ref(out_df, "out_df")?,
            out_ref(out_p, "out_p")?,
        );
        let t = paired_t_test(slice(a, k, "a")?, slice(b, k, "b")?)?;
        *out_t = t.t_statistic;
        *out_df = t.degrees_of_freedom;
        *out_p = t.p_value;
        Ok(())
    })
}
