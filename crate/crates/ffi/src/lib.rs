// SPDX-License-Identifier: Apache-2.0
//! C ABI for `crs-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` /
//! `*_generate` / `crs_run_*` and released with the matching `*_free`.
//! Every fallible function returns a [`CrsStatus`]; the message of the last
//! failure on the calling thread is available from
//! [`crs_last_error_message`]. Operand words are MSB-first strings of '0' and
//! '1'.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use crs_core::ecm::EcmParams;
use crs_core::exec::{self, ExecOptions, ExecTrace, Operands, PulseParams};
use crs_core::microcode::{self, Program, Scheme};
use crs_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Convergence = 4,
    Execution = 5,
    Calibration = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrsScheme {
    Pc = 0,
    Tc = 1,
}

/// Pulse parameters of device-level execution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrsPulseParams {
    pub v_w: f64,
    pub t_pulse: f64,
    pub t_gap: f64,
    pub samples_per_pulse: usize,
    pub i_spike: f64,
}

impl From<PulseParams> for CrsPulseParams {
    fn from(p: PulseParams) -> Self {
        Self {
            v_w: p.v_w,
            t_pulse: p.t_pulse,
            t_gap: p.t_gap,
            samples_per_pulse: p.samples_per_pulse,
            i_spike: p.i_spike,
        }
    }
}

impl From<CrsPulseParams> for PulseParams {
    fn from(p: CrsPulseParams) -> Self {
        Self {
            v_w: p.v_w,
            t_pulse: p.t_pulse,
            t_gap: p.t_gap,
            samples_per_pulse: p.samples_per_pulse,
            i_spike: p.i_spike,
        }
    }
}

/// One destructive read recorded during execution.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrsVerdict {
    /// One-based step number.
    pub step: usize,
    pub array: usize,
    pub wl: usize,
    pub bl: usize,
    pub spike: bool,
    pub bit: bool,
}

/// ECM device parameters.
pub struct CrsParams(EcmParams);

/// A compiled adder program.
pub struct CrsProgram(Program);

/// Result of running a program.
pub struct CrsTrace(ExecTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> CrsStatus {
    match e {
        Error::Argument(_) | Error::ParamFile { .. } => CrsStatus::InvalidArgument,
        Error::Domain(_) => CrsStatus::Domain,
        Error::Convergence { .. } => CrsStatus::Convergence,
        Error::Execution { .. } | Error::Indeterminate { .. } | Error::Extraction(_) => {
            CrsStatus::Execution
        }
        Error::Calibration(_) => CrsStatus::Calibration,
        Error::Io(_) | Error::Json(_) => CrsStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CrsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CrsStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is null"));
            CrsStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic".into());
            CrsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Core(Error::Argument(format!("{what} is not valid UTF-8"))))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Core(Error::Argument("string contains a NUL byte".into())))
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes, 0 if there
/// is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn crs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn crs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Next logic state of a CRS cell.
#[no_mangle]
pub extern "C" fn crs_fsm_next(z_prev: bool, wl: bool, bl: bool) -> bool {
    crs_core::crs::fsm_next(z_prev, wl, bl)
}

/// Create a parameter set with the default device values.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_params_new(out: *mut *mut CrsParams) -> CrsStatus {
    guard(|| {
        *out_ref(out, "out")? = Box::into_raw(Box::new(CrsParams(EcmParams::default())));
        Ok(())
    })
}

/// Parse a `key=value` parameter file body.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_params_parse(
    text: *const c_char,
    out: *mut *mut CrsParams,
) -> CrsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let params: EcmParams = c_str(text, "text")?.parse()?;
        *out = Box::into_raw(Box::new(CrsParams(params)));
        Ok(())
    })
}

/// Set one parameter by key. The set is validated as a whole afterwards and
/// left unchanged on failure.
///
/// # Safety
/// `params` must come from this library; `key` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn crs_params_set(
    params: *mut CrsParams,
    key: *const c_char,
    value: f64,
) -> CrsStatus {
    guard(|| {
        let params = out_ref(params, "params")?;
        let key = c_str(key, "key")?;
        let mut next = params.0;
        *next
            .field_mut(key)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {key:?}")))? = value;
        next.validate()?;
        params.0 = next;
        Ok(())
    })
}

/// Read one parameter by key.
///
/// # Safety
/// `params` must come from this library; `key` must be NUL-terminated;
/// `value` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_params_get(
    params: *const CrsParams,
    key: *const c_char,
    value: *mut f64,
) -> CrsStatus {
    guard(|| {
        let params = deref(params, "params")?;
        let key = c_str(key, "key")?;
        let out = out_ref(value, "value")?;
        *out = params
            .0
            .field(key)
            .ok_or_else(|| Error::Argument(format!("unknown parameter {key:?}")))?;
        Ok(())
    })
}

/// # Safety
/// `params` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn crs_params_free(params: *mut CrsParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Compile an `n`-bit adder (or subtractor).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_program_generate(
    scheme: CrsScheme,
    n: usize,
    subtract: bool,
    out: *mut *mut CrsProgram,
) -> CrsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let scheme = match scheme {
            CrsScheme::Pc => Scheme::Pc,
            CrsScheme::Tc => Scheme::Tc,
        };
        *out = Box::into_raw(Box::new(CrsProgram(microcode::gen_adder(
            scheme, n, subtract,
        )?)));
        Ok(())
    })
}

/// Number of steps, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn crs_program_len(program: *const CrsProgram) -> usize {
    program.as_ref().map_or(0, |p| p.0.len())
}

/// Number of cells the program uses, or 0 for a null handle.
///
/// # Safety
/// `program` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn crs_program_devices(program: *const CrsProgram) -> usize {
    program.as_ref().map_or(0, |p| p.0.devices)
}

/// Serialize to JSON. Release the string with [`crs_string_free`].
///
/// # Safety
/// `program` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_program_to_json(
    program: *const CrsProgram,
    out: *mut *mut c_char,
) -> CrsStatus {
    guard(|| {
        let program = deref(program, "program")?;
        let out = out_ref(out, "out")?;
        *out = into_c_string(program.0.to_json()?)?;
        Ok(())
    })
}

/// Parse a program from JSON.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_program_from_json(
    json: *const c_char,
    out: *mut *mut CrsProgram,
) -> CrsStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let program = Program::from_json(c_str(json, "json")?)?;
        *out = Box::into_raw(Box::new(CrsProgram(program)));
        Ok(())
    })
}

/// Number of structural problems found in the program (0 means valid).
///
/// # Safety
/// `program` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn crs_program_diagnostic_count(program: *const CrsProgram) -> usize {
    program
        .as_ref()
        .map_or(0, |p| microcode::validate_program(&p.0).len())
}

/// # Safety
/// `program` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn crs_program_free(program: *mut CrsProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn crs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Search pulse parameters for half-select operation.
///
/// # Safety
/// `params` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_calibrate(
    params: *const CrsParams,
    margin: f64,
    out: *mut CrsPulseParams,
) -> CrsStatus {
    guard(|| {
        let params = deref(params, "params")?;
        let out = out_ref(out, "out")?;
        *out = exec::calibrate_pulse(&params.0, margin)?.pulse.into();
        Ok(())
    })
}

unsafe fn operands(a: *const c_char, b: *const c_char, c0: bool) -> Result<Operands, Failure> {
    Ok(Operands::parse(c_str(a, "a")?, c_str(b, "b")?, c0)?)
}

/// Run a program on the behavioral FSM array.
///
/// # Safety
/// `program` must come from this library; `a` and `b` must be
/// NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_run_behavioral(
    program: *const CrsProgram,
    a: *const c_char,
    b: *const c_char,
    c0: bool,
    out: *mut *mut CrsTrace,
) -> CrsStatus {
    guard(|| {
        let program = deref(program, "program")?;
        let out = out_ref(out, "out")?;
        let trace = exec::run_behavioral(&program.0, &operands(a, b, c0)?)?;
        *out = Box::into_raw(Box::new(CrsTrace(trace)));
        Ok(())
    })
}

/// Run a program on ECM device pairs. Waveforms are not captured.
///
/// # Safety
/// As [`crs_run_behavioral`]; additionally `pulse` and `params` must be valid.
#[no_mangle]
pub unsafe extern "C" fn crs_run_device(
    program: *const CrsProgram,
    a: *const c_char,
    b: *const c_char,
    c0: bool,
    pulse: *const CrsPulseParams,
    params: *const CrsParams,
    out: *mut *mut CrsTrace,
) -> CrsStatus {
    guard(|| {
        let program = deref(program, "program")?;
        let pulse = *deref(pulse, "pulse")?;
        let params = deref(params, "params")?;
        let out = out_ref(out, "out")?;
        let opts = ExecOptions {
            capture_waveform: false,
            ..Default::default()
        };
        let trace = exec::run_device_with(
            &program.0,
            &operands(a, b, c0)?,
            &pulse.into(),
            &params.0,
            &opts,
        )?;
        *out = Box::into_raw(Box::new(CrsTrace(trace)));
        Ok(())
    })
}

/// Write the result word (MSB first, NUL-terminated) into `buf`. Returns the
/// number of result bits, or 0 if `trace` is null. The output is truncated
/// if `len` is too small.
///
/// # Safety
/// `trace` must be null or come from this library; `buf` must be null or
/// point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn crs_trace_result(
    trace: *const CrsTrace,
    buf: *mut c_char,
    len: usize,
) -> usize {
    let Some(trace) = trace.as_ref() else {
        return 0;
    };
    let word = trace.0.result_string();
    if !buf.is_null() && len > 0 {
        let n = word.len().min(len - 1);
        ptr::copy_nonoverlapping(word.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
    }
    word.len()
}

/// Number of reads recorded in the trace.
///
/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn crs_trace_verdict_count(trace: *const CrsTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.verdicts.len())
}

/// # Safety
/// `trace` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn crs_trace_verdict(
    trace: *const CrsTrace,
    index: usize,
    out: *mut CrsVerdict,
) -> CrsStatus {
    guard(|| {
        let trace = deref(trace, "trace")?;
        let out = out_ref(out, "out")?;
        let v = trace.0.verdicts.get(index).ok_or_else(|| {
            Error::Argument(format!(
                "verdict index {index} out of range ({} reads)",
                trace.0.verdicts.len()
            ))
        })?;
        *out = CrsVerdict {
            step: v.step,
            array: v.cell.array,
            wl: v.cell.wl,
            bl: v.cell.bl,
            spike: v.spike,
            bit: v.bit,
        };
        Ok(())
    })
}

/// Number of cells whose state differed from the FSM prediction.
///
/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn crs_trace_violation_count(trace: *const CrsTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.0.violations.len())
}

/// # Safety
/// `trace` must be null or come from this library and not be used again.
#[no_mangle]
pub unsafe extern "C" fn crs_trace_free(trace: *mut CrsTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
