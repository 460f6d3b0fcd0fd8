// SPDX-License-Identifier: Apache-2.0
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use crs_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe { crs_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

fn result_word(trace: *const CrsTrace) -> String {
    let mut buf = [0 as c_char; 16];
    let n = unsafe { crs_trace_result(trace, buf.as_mut_ptr(), buf.len()) };
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned();
    assert_eq!(s.len(), n);
    s
}

#[test]
fn generate_and_run_behavioral() {
    let mut program = ptr::null_mut();
    assert_eq!(
        unsafe { crs_program_generate(CrsScheme::Tc, 2, false, &mut program) },
        CrsStatus::Ok
    );
    assert_eq!(unsafe { crs_program_len(program) }, 13);
    assert_eq!(unsafe { crs_program_devices(program) }, 4);
    assert_eq!(unsafe { crs_program_diagnostic_count(program) }, 0);

    let (a, b) = (CString::new("01").unwrap(), CString::new("01").unwrap());
    let mut trace = ptr::null_mut();
    assert_eq!(
        unsafe { crs_run_behavioral(program, a.as_ptr(), b.as_ptr(), false, &mut trace) },
        CrsStatus::Ok
    );
    assert_eq!(result_word(trace), "010");

    let count = unsafe { crs_trace_verdict_count(trace) };
    let mut tc_reads = Vec::new();
    for i in 0..count {
        let mut v = CrsVerdict {
            step: 0,
            array: 0,
            wl: 0,
            bl: 0,
            spike: false,
            bit: false,
        };
        assert_eq!(
            unsafe { crs_trace_verdict(trace, i, &mut v) },
            CrsStatus::Ok
        );
        if v.step > 1 {
            tc_reads.push((v.step, v.spike));
        }
    }
    assert_eq!(tc_reads, vec![(4, false), (8, true), (12, true)]);

    let mut v = CrsVerdict {
        step: 0,
        array: 0,
        wl: 0,
        bl: 0,
        spike: false,
        bit: false,
    };
    assert_eq!(
        unsafe { crs_trace_verdict(trace, count, &mut v) },
        CrsStatus::InvalidArgument
    );
    unsafe {
        crs_trace_free(trace);
        crs_program_free(program);
    }
}

#[test]
fn json_round_trip() {
    let mut program = ptr::null_mut();
    assert_eq!(
        unsafe { crs_program_generate(CrsScheme::Pc, 3, true, &mut program) },
        CrsStatus::Ok
    );
    let mut json = ptr::null_mut();
    assert_eq!(
        unsafe { crs_program_to_json(program, &mut json) },
        CrsStatus::Ok
    );
    let mut copy = ptr::null_mut();
    assert_eq!(
        unsafe { crs_program_from_json(json, &mut copy) },
        CrsStatus::Ok
    );
    assert_eq!(unsafe { crs_program_len(copy) }, 10);
    unsafe {
        crs_string_free(json);
        crs_program_free(copy);
        crs_program_free(program);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut program = ptr::null_mut();
    assert_eq!(
        unsafe { crs_program_generate(CrsScheme::Pc, 0, false, &mut program) },
        CrsStatus::InvalidArgument
    );
    assert!(last_error().contains("width"), "{}", last_error());
    assert!(program.is_null());

    assert_eq!(
        unsafe { crs_program_generate(CrsScheme::Pc, 1, false, ptr::null_mut()) },
        CrsStatus::NullPointer
    );
    assert_eq!(last_error(), "out is null");

    assert_eq!(
        unsafe { crs_program_generate(CrsScheme::Pc, 2, false, &mut program) },
        CrsStatus::Ok
    );
    let (a, b) = (CString::new("0110").unwrap(), CString::new("01").unwrap());
    let mut trace = ptr::null_mut();
    let status = unsafe { crs_run_behavioral(program, a.as_ptr(), b.as_ptr(), false, &mut trace) };
    assert_eq!(status, CrsStatus::InvalidArgument);
    unsafe { crs_program_free(program) };
}

#[test]
fn params_get_set_validate() {
    let mut params = ptr::null_mut();
    assert_eq!(unsafe { crs_params_new(&mut params) }, CrsStatus::Ok);
    let key = CString::new("alpha").unwrap();
    let mut value = 0.0;
    assert_eq!(
        unsafe { crs_params_get(params, key.as_ptr(), &mut value) },
        CrsStatus::Ok
    );
    assert_eq!(value, 0.5);
    assert_eq!(
        unsafe { crs_params_set(params, key.as_ptr(), 1.5) },
        CrsStatus::Domain
    );
    assert_eq!(
        unsafe { crs_params_get(params, key.as_ptr(), &mut value) },
        CrsStatus::Ok
    );
    assert_eq!(value, 0.5, "failed set must leave the value unchanged");
    assert_eq!(
        unsafe { crs_params_set(params, key.as_ptr(), 0.4) },
        CrsStatus::Ok
    );
    let bogus = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { crs_params_set(params, bogus.as_ptr(), 1.0) },
        CrsStatus::InvalidArgument
    );
    unsafe { crs_params_free(params) };

    let text = CString::new("l = 30e-9\n# comment\n").unwrap();
    let mut parsed = ptr::null_mut();
    assert_eq!(
        unsafe { crs_params_parse(text.as_ptr(), &mut parsed) },
        CrsStatus::Ok
    );
    let key = CString::new("l").unwrap();
    assert_eq!(
        unsafe { crs_params_get(parsed, key.as_ptr(), &mut value) },
        CrsStatus::Ok
    );
    assert_eq!(value, 30e-9);
    unsafe { crs_params_free(parsed) };
}

#[test]
fn device_run_matches_behavioral() {
    let mut params = ptr::null_mut();
    assert_eq!(unsafe { crs_params_new(&mut params) }, CrsStatus::Ok);
    let mut pulse = CrsPulseParams {
        v_w: 0.0,
        t_pulse: 0.0,
        t_gap: 0.0,
        samples_per_pulse: 0,
        i_spike: 0.0,
    };
    assert_eq!(
        unsafe { crs_calibrate(params, 100.0, &mut pulse) },
        CrsStatus::Ok
    );
    assert!(pulse.v_w > 0.0 && pulse.i_spike > 0.0);
    pulse.samples_per_pulse = 20;

    let mut program = ptr::null_mut();
    assert_eq!(
        unsafe { crs_program_generate(CrsScheme::Pc, 1, false, &mut program) },
        CrsStatus::Ok
    );
    let (a, b) = (CString::new("1").unwrap(), CString::new("1").unwrap());
    let mut trace = ptr::null_mut();
    let status = unsafe {
        crs_run_device(
            program,
            a.as_ptr(),
            b.as_ptr(),
            false,
            &pulse,
            params,
            &mut trace,
        )
    };
    assert_eq!(status, CrsStatus::Ok, "{}", last_error());
    assert_eq!(result_word(trace), "10");
    assert_eq!(unsafe { crs_trace_violation_count(trace) }, 0);
    unsafe {
        crs_trace_free(trace);
        crs_program_free(program);
        crs_params_free(params);
    }
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        crs_params_free(ptr::null_mut());
        crs_program_free(ptr::null_mut());
        crs_trace_free(ptr::null_mut());
        crs_string_free(ptr::null_mut());
        assert_eq!(crs_program_len(ptr::null()), 0);
        assert_eq!(crs_trace_result(ptr::null(), ptr::null_mut(), 0), 0);
    }
    assert!(crs_fsm_next(false, true, false));
    let version = unsafe { CStr::from_ptr(crs_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crs.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "crs_program_generate",
        "crs_run_behavioral",
        "crs_run_device",
        "crs_calibrate",
        "crs_trace_verdict",
        "crs_last_error_message",
        "typedef struct CrsTrace CrsTrace",
        "CRS_STATUS_NULL_POINTER = 1",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/crs.h");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(status) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status()
        else {
            eprintln!("{compiler} not available; skipping");
            continue;
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
