use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sharpfactor_ffi::*;

fn make(dims: &[usize], seed: u64) -> *mut SfInstance {
    let mut out = ptr::null_mut();
    let st = unsafe { sf_instance_make_minimizer(dims.as_ptr(), dims.len(), seed, &mut out) };
    assert_eq!(st, SfStatus::Ok);
    out
}

#[test]
fn lambda_and_direction_round_trip() {
    let inst = make(&[3, 4, 5, 2], 11);
    let n = unsafe { sf_instance_num_params(inst) };
    assert_eq!(n, 3 * 4 + 4 * 5 + 5 * 2);
    assert_eq!(unsafe { sf_instance_depth(inst) }, 3);

    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { sf_lambda_max(inst, &mut rep) }, SfStatus::Ok);
    let lam = unsafe { sf_report_lambda_max(rep) };
    let method = unsafe { CStr::from_ptr(sf_report_method(rep)) };
    assert_eq!(method.to_str().unwrap(), "general_kron");

    let mut dir = vec![0.0; n];
    assert_eq!(
        unsafe { sf_report_direction(rep, dir.as_mut_ptr(), n - 1) },
        SfStatus::BufferTooSmall
    );
    assert_eq!(unsafe { sf_report_direction(rep, dir.as_mut_ptr(), n) }, SfStatus::Ok);
    let mut q = 0.0;
    assert_eq!(
        unsafe { sf_second_directional(inst, dir.as_ptr(), n, &mut q) },
        SfStatus::Ok
    );
    assert!((q - lam).abs() <= 1e-6 * lam);

    let mut l = f64::NAN;
    assert_eq!(unsafe { sf_instance_loss(inst, &mut l) }, SfStatus::Ok);
    assert_eq!(l, 0.0);
    unsafe {
        sf_report_free(rep);
        sf_instance_free(inst);
    }
}

#[test]
fn json_round_trip_is_exact() {
    let inst = make(&[2, 3, 2], 5);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sf_instance_to_json(inst, &mut s) }, SfStatus::Ok);
    let text = unsafe { CStr::from_ptr(s) }.to_owned();
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { sf_instance_from_json(text.as_ptr(), &mut back) }, SfStatus::Ok);
    let n = unsafe { sf_instance_num_params(inst) };
    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
    unsafe {
        sf_instance_params(inst, a.as_mut_ptr(), n);
        sf_instance_params(back, b.as_mut_ptr(), n);
    }
    assert_eq!(a, b);
    unsafe {
        sf_string_free(s);
        sf_instance_free(inst);
        sf_instance_free(back);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let bad = [2usize, 0, 2];
    let mut out = ptr::null_mut();
    let st = unsafe { sf_instance_make_minimizer(bad.as_ptr(), 3, 0, &mut out) };
    assert_eq!(st, SfStatus::Invalid);
    assert!(out.is_null());
    let msg = unsafe { CStr::from_ptr(sf_last_error_message()) };
    assert!(!msg.to_bytes().is_empty());

    let off = CString::new(r#"{"dims":[1,1,1],"factors":[[1.0],[1.0]],"target":[2.0]}"#).unwrap();
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { sf_instance_from_json(off.as_ptr(), &mut inst) }, SfStatus::Ok);
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { sf_lambda_max(inst, &mut rep) }, SfStatus::NotMinimizer);
    assert!(rep.is_null());
    unsafe { sf_instance_free(inst) };

    let junk = CString::new("{not json").unwrap();
    assert_eq!(unsafe { sf_instance_from_json(junk.as_ptr(), &mut inst) }, SfStatus::Invalid);
}

#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libsharpfactor_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built at {}, skipping C link check", lib.display());
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("cc available");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("depth2 "));
}
