//! C interface to `evifuse`.
//!
//! Every fallible function returns an [`EvfStatus`]. On failure a
//! description is available from [`evf_last_error_message`] on the same
//! thread. Results are written through out-pointers only on success.
//!
//! Loaded models are opaque handles that must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use evifuse::data::Sample;
use evifuse::dst::{self, BinaryMass, Decision, Label};
use evifuse::evidence::{evidence_score, EvidenceNetParams};
use evifuse::harness::TrainedSystem;
use evifuse::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvfStatus {
    Ok = 0,
    NullPointer = 1,
    /// Argument outside its domain (probability, mass, score).
    Domain = 2,
    TotalConflict = 3,
    EmptyInput = 4,
    /// Input length does not match the model.
    Shape = 5,
    Io = 6,
    /// Malformed parameter file or data.
    Format = 7,
    InvalidUtf8 = 8,
    Panic = 9,
}

/// Mass on `{T}`, `{F}` and the whole frame `U`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvfBinaryMass {
    pub t: f64,
    pub f: f64,
    pub u: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvfDecision {
    /// 1 for positive, 0 for negative.
    pub label: i32,
    /// Pignistic probability of the positive outcome (mean probability for
    /// average fusion).
    pub score: f64,
    /// Residual mass on `U`.
    pub conflict: f64,
}

/// Opaque evidence network.
pub struct EvfEvidenceNet {
    params: EvidenceNetParams,
}

/// Opaque trained system: branches, evidence networks and scaling.
pub struct EvfSystem {
    system: TrainedSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> EvfStatus {
    match err {
        Error::Domain(_) => EvfStatus::Domain,
        Error::TotalConflict { .. } => EvfStatus::TotalConflict,
        Error::EmptyList | Error::EmptyBatch => EvfStatus::EmptyInput,
        Error::Shape { .. } | Error::LengthMismatch { .. } | Error::FrameMismatch { .. } => EvfStatus::Shape,
        Error::Io(_) => EvfStatus::Io,
        _ => EvfStatus::Format,
    }
}

struct Failure(EvfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EvfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EvfStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(EvfStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn read<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(name))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write<T>(ptr: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    ptr.write(value);
    Ok(())
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(EvfStatus::InvalidUtf8, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn to_mass(m: &EvfBinaryMass) -> Result<BinaryMass, Failure> {
    Ok(BinaryMass::new(m.t, m.f, m.u)?)
}

fn from_mass(m: &BinaryMass) -> EvfBinaryMass {
    EvfBinaryMass {
        t: m.t(),
        f: m.f(),
        u: m.u(),
    }
}

fn from_decision(d: &Decision) -> EvfDecision {
    EvfDecision {
        label: i32::from(d.label == Label::Positive),
        score: d.score,
        conflict: d.conflict,
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn evf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn evf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// `(s p, s (1 - p), 1 - s)`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evf_calibrated_mass(p: f64, s: f64, out: *mut EvfBinaryMass) -> EvfStatus {
    guard(|| {
        let m = dst::calibrated_mass(p, s)?;
        write(out, from_mass(&m), "out")
    })
}

/// Dempster combination of two masses.
///
/// # Safety
/// `a` and `b` must be null or valid for reads, `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evf_combine_pair(
    a: *const EvfBinaryMass,
    b: *const EvfBinaryMass,
    out: *mut EvfBinaryMass,
) -> EvfStatus {
    guard(|| {
        let a = to_mass(read(a, "a")?)?;
        let b = to_mass(read(b, "b")?)?;
        write(out, from_mass(&dst::combine_pair(&a, &b)?), "out")
    })
}

/// Left fold of [`evf_combine_pair`] over `n` masses.
///
/// # Safety
/// `masses` must point to `n` readable values; `out` null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evf_combine_many(
    masses: *const EvfBinaryMass,
    n: usize,
    out: *mut EvfBinaryMass,
) -> EvfStatus {
    guard(|| {
        let list = slice(masses, n, "masses")?
            .iter()
            .map(to_mass)
            .collect::<Result<Vec<_>, _>>()?;
        write(out, from_mass(&dst::combine_many(&list)?), "out")
    })
}

/// Normalization mass `M` and conflict `kappa` of a pair.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn evf_conflict(
    a: *const EvfBinaryMass,
    b: *const EvfBinaryMass,
    normalization: *mut f64,
    kappa: *mut f64,
) -> EvfStatus {
    guard(|| {
        let a = to_mass(read(a, "a")?)?;
        let b = to_mass(read(b, "b")?)?;
        let c = dst::conflict(&a, &b);
        if normalization.is_null() || kappa.is_null() {
            return Err(null("normalization/kappa"));
        }
        write(normalization, c.normalization, "normalization")?;
        write(kappa, c.kappa, "kappa")
    })
}

/// Pignistic decision.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn evf_decide(m: *const EvfBinaryMass, out: *mut EvfDecision) -> EvfStatus {
    guard(|| {
        let m = to_mass(read(m, "m")?)?;
        write(out, from_decision(&dst::decide(&m)), "out")
    })
}

/// Loads an evidence network from a single-block parameter file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evf_evidence_net_load(path: *const c_char, out: *mut *mut EvfEvidenceNet) -> EvfStatus {
    guard(|| {
        let path = path_arg(path)?;
        let text = std::fs::read_to_string(&path).map_err(Error::from)?;
        let params = EvidenceNetParams::from_text(&text)?;
        write(out, Box::into_raw(Box::new(EvfEvidenceNet { params })), "out")
    })
}

/// Input width of the network, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evf_evidence_net_input_dim(net: *const EvfEvidenceNet) -> usize {
    net.as_ref().map_or(0, |n| n.params.input_dim())
}

/// Evidence score in `[0, 1]` for one feature vector.
///
/// # Safety
/// `net` must be a live handle, `features` readable for `n` values.
#[no_mangle]
pub unsafe extern "C" fn evf_evidence_net_score(
    net: *const EvfEvidenceNet,
    features: *const f64,
    n: usize,
    out: *mut f64,
) -> EvfStatus {
    guard(|| {
        let net = read(net, "net")?;
        let x = slice(features, n, "features")?;
        write(out, evidence_score(&net.params, x)?, "out")
    })
}

/// # Safety
/// `net` must be null or a handle from [`evf_evidence_net_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evf_evidence_net_free(net: *mut EvfEvidenceNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Loads a trained system file written by the `train` or `run` commands.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn evf_system_load(path: *const c_char, out: *mut *mut EvfSystem) -> EvfStatus {
    guard(|| {
        let path = path_arg(path)?;
        let system = TrainedSystem::load(&path)?;
        write(out, Box::into_raw(Box::new(EvfSystem { system })), "out")
    })
}

/// Input sizes expected by [`evf_system_predict`]. Any out-pointer may be null.
///
/// # Safety
/// `system` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn evf_system_input_dims(
    system: *const EvfSystem,
    n_codes: *mut usize,
    n_continuous: *mut usize,
    n_vector: *mut usize,
) -> EvfStatus {
    guard(|| {
        let layout = &read(system, "system")?.system.layout;
        for (ptr, v) in [
            (n_codes, layout.cardinalities.len()),
            (n_continuous, layout.n_continuous),
            (n_vector, layout.vector_dim),
        ] {
            if !ptr.is_null() {
                ptr.write(v);
            }
        }
        Ok(())
    })
}

/// Predicts from unscaled inputs. Writes the Dempster-fused decision to
/// `dst_out` and the average-fusion decision to `average_out` (either may
/// be null). `branch_probs` and `branch_evidence`, when non-null, receive
/// three values each in the order tabular, vector, fusion.
///
/// # Safety
/// `system` must be a live handle; input pointers readable for their lengths;
/// output pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn evf_system_predict(
    system: *const EvfSystem,
    codes: *const usize,
    n_codes: usize,
    continuous: *const f64,
    n_continuous: usize,
    vector: *const f64,
    n_vector: usize,
    dst_out: *mut EvfDecision,
    average_out: *mut EvfDecision,
    branch_probs: *mut f64,
    branch_evidence: *mut f64,
) -> EvfStatus {
    guard(|| {
        let system = &read(system, "system")?.system;
        let sample = Sample {
            codes: slice(codes, n_codes, "codes")?.to_vec(),
            continuous: slice(continuous, n_continuous, "continuous")?.to_vec(),
            vector: slice(vector, n_vector, "vector")?.to_vec(),
            label: 0,
        };
        for (i, &c) in sample.codes.iter().enumerate() {
            if c >= system.layout.cardinalities.get(i).copied().unwrap_or(usize::MAX) {
                return Err(Failure(
                    EvfStatus::Domain,
                    format!("code {c} out of range for categorical column {i}"),
                ));
            }
        }
        let p = system.predict_raw(&sample)?;
        if !dst_out.is_null() {
            dst_out.write(from_decision(&p.dst));
        }
        if !average_out.is_null() {
            average_out.write(from_decision(&p.average));
        }
        if !branch_probs.is_null() {
            std::ptr::copy_nonoverlapping(p.probabilities.as_ptr(), branch_probs, 3);
        }
        if !branch_evidence.is_null() {
            std::ptr::copy_nonoverlapping(p.evidence.as_ptr(), branch_evidence, 3);
        }
        Ok(())
    })
}

/// # Safety
/// `system` must be null or a handle from [`evf_system_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn evf_system_free(system: *mut EvfSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}
