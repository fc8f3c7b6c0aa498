//! C ABI for `sharpfactor`.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns an [`SfStatus`]
//! and stores a message retrievable with [`sf_last_error_message`] on the
//! calling thread. Flat parameter vectors concatenate the column-major
//! vectorizations of the factors, `W_1` first.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sharpfactor::directional::{second_directional, Direction};
use sharpfactor::factors::{loss, make_minimizer, DimSignature, EntryLaw, FactorChain, InstanceDoc, Target};
use sharpfactor::sharpness::{lambda_max, Method, SharpnessReport};
use sharpfactor::Error;

/// Status codes; the nonzero values match the CLI exit codes where they overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    Io = 1,
    Invalid = 2,
    NotMinimizer = 3,
    NoConvergence = 4,
    SizeCap = 5,
    NullPointer = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A factor chain together with its target matrix.
pub struct SfInstance {
    chain: FactorChain,
    target: Target,
    seed: Option<u64>,
}

/// Result of a sharpness computation.
pub struct SfReport {
    report: SharpnessReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SfStatus {
    match err.exit_code() {
        1 => SfStatus::Io,
        3 => SfStatus::NotMinimizer,
        4 => SfStatus::NoConvergence,
        5 => SfStatus::SizeCap,
        _ => SfStatus::Invalid,
    }
}

fn guard<F: FnOnce() -> Result<(), (SfStatus, String)>>(f: F) -> SfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SfStatus::Panic
        }
    }
}

fn lib(err: Error) -> (SfStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (SfStatus, String) {
    (SfStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (SfStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (SfStatus, String)> {
    if len < src.len() {
        return Err((
            SfStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    if src.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(null("output buffer"));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), out, src.len()) };
    Ok(())
}

/// Builds a random minimizer for widths `dims[0..len]` (standard normal
/// factors, target set to their product).
///
/// # Safety
/// `dims` must point to `len` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_make_minimizer(
    dims: *const usize,
    len: usize,
    seed: u64,
    out: *mut *mut SfInstance,
) -> SfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dims = slice(dims, len, "dims")?.to_vec();
        let sig = DimSignature::new(dims).map_err(lib)?;
        let (chain, target) = make_minimizer(&sig, seed, EntryLaw::default()).map_err(lib)?;
        *out = Box::into_raw(Box::new(SfInstance {
            chain,
            target,
            seed: Some(seed),
        }));
        Ok(())
    })
}

/// Parses an instance document `{"dims", "factors", "target"}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_from_json(json: *const c_char, out: *mut *mut SfInstance) -> SfStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| (SfStatus::Invalid, e.to_string()))?;
        let doc: InstanceDoc = serde_json::from_str(text).map_err(|e| lib(e.into()))?;
        let (chain, target) = doc.to_instance().map_err(lib)?;
        *out = Box::into_raw(Box::new(SfInstance {
            chain,
            target,
            seed: doc.seed,
        }));
        Ok(())
    })
}

/// Serializes an instance; free the string with [`sf_string_free`].
///
/// # Safety
/// `inst` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_to_json(inst: *const SfInstance, out: *mut *mut c_char) -> SfStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let doc = InstanceDoc::from_instance(&inst.chain, &inst.target, inst.seed);
        let text = serde_json::to_string(&doc).map_err(|e| lib(e.into()))?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `inst` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_free(inst: *mut SfInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Number of parameters `N`; zero for a null handle.
///
/// # Safety
/// `inst` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_num_params(inst: *const SfInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.chain.signature().num_params())
}

/// Depth `L`; zero for a null handle.
///
/// # Safety
/// `inst` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_depth(inst: *const SfInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.chain.depth())
}

/// Copies the `N` flat parameters into `buf`.
///
/// # Safety
/// `inst` must be a live handle and `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_params(inst: *const SfInstance, buf: *mut f64, len: usize) -> SfStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        copy_out(inst.chain.flatten().as_slice(), buf, len)
    })
}

/// `‖M − W_L⋯W_1‖_F²`.
///
/// # Safety
/// `inst` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_instance_loss(inst: *const SfInstance, out: *mut f64) -> SfStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = loss(&inst.chain, &inst.target).map_err(lib)?;
        Ok(())
    })
}

/// Largest Hessian eigenvalue at a certified minimizer, with the maximizing
/// direction. Fails with `NotMinimizer` away from minima.
///
/// # Safety
/// `inst` must be a live handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_lambda_max(inst: *const SfInstance, out: *mut *mut SfReport) -> SfStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = lambda_max(&inst.chain, &inst.target).map_err(lib)?;
        *out = Box::into_raw(Box::new(SfReport { report }));
        Ok(())
    })
}

/// # Safety
/// `rep` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn sf_report_free(rep: *mut SfReport) {
    if !rep.is_null() {
        drop(Box::from_raw(rep));
    }
}

/// NaN for a null handle.
///
/// # Safety
/// `rep` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_report_lambda_max(rep: *const SfReport) -> f64 {
    rep.as_ref().map_or(f64::NAN, |r| r.report.lambda_max)
}

/// Static name of the formula used; null for a null handle.
///
/// # Safety
/// `rep` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_report_method(rep: *const SfReport) -> *const c_char {
    match rep.as_ref().map(|r| r.report.method) {
        Some(Method::GeneralKron) => c"general_kron".as_ptr(),
        Some(Method::ScalarChain) => c"scalar_chain".as_ptr(),
        Some(Method::Depth2) => c"depth2".as_ptr(),
        Some(Method::DenseOracle) => c"dense_oracle".as_ptr(),
        None => ptr::null(),
    }
}

/// 1 if the top eigenvalue looked tied, 0 if not, -1 for a null handle.
///
/// # Safety
/// `rep` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sf_report_degenerate(rep: *const SfReport) -> i32 {
    rep.as_ref().map_or(-1, |r| r.report.degenerate as i32)
}

/// Copies the unit-norm extremal direction (length `N`) into `buf`.
///
/// # Safety
/// `rep` must be a live handle and `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sf_report_direction(rep: *const SfReport, buf: *mut f64, len: usize) -> SfStatus {
    guard(|| {
        let rep = rep.as_ref().ok_or_else(|| null("report"))?;
        let dir = rep
            .report
            .extremal_direction
            .as_ref()
            .ok_or_else(|| (SfStatus::Invalid, "report carries no direction".to_string()))?;
        copy_out(dir.flatten().as_slice(), buf, len)
    })
}

/// Exact second derivative of the loss along the flat direction `dir`.
///
/// # Safety
/// `inst` must be a live handle, `dir` must hold `len` values and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sf_second_directional(
    inst: *const SfInstance,
    dir: *const f64,
    len: usize,
    out: *mut f64,
) -> SfStatus {
    guard(|| {
        let inst = inst.as_ref().ok_or_else(|| null("instance"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let flat = slice(dir, len, "direction")?;
        let d = Direction::from_flat(inst.chain.signature(), flat).map_err(lib)?;
        *out = second_directional(&inst.chain, &inst.target, &d).map_err(lib)?;
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Valid until the next
/// call into the library from the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}
