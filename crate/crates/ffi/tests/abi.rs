use std::ffi::{CStr, CString};
use std::ptr;

use swcert_ffi::*;

fn last_error() -> String {
    let p = swcert_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn ncs() -> *mut SwcertSystem {
    let mut sys = ptr::null_mut();
    assert_eq!(unsafe { swcert_system_ncs(&mut sys) }, SwcertStatus::Ok);
    sys
}

#[test]
fn ncs_shape() {
    let sys = ncs();
    unsafe {
        assert_eq!(swcert_system_dimension(sys), 2);
        assert_eq!(swcert_system_node_count(sys), 3);
        assert_eq!(swcert_system_label_count(sys), 2);
        swcert_system_free(sys);
        assert_eq!(swcert_system_dimension(ptr::null()), 0);
        swcert_system_free(ptr::null_mut());
    }
    let version = unsafe { CStr::from_ptr(swcert_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn certify_round_trip() {
    let sys = ncs();
    let mut report = ptr::null_mut();
    let status = unsafe { swcert_certify(sys, SwcertMode::Hybrid as u32, 1, 1500, 0.0, 0.05, 3, &mut report) };
    assert_eq!(status, SwcertStatus::Ok);
    let mut bounds = SwcertBounds::default();
    assert_eq!(unsafe { swcert_report_bounds(report, &mut bounds) }, SwcertStatus::Ok);
    assert!(bounds.lambda_star > 0.6 && bounds.lambda_star < 0.72);
    assert!(bounds.rho_final >= bounds.lambda_star);
    assert_eq!(bounds.certifies_stability, bounds.rho_final < 1.0);
    assert_eq!(unsafe { swcert_report_matrix_count(report) }, 3);

    let mut p = [0.0; 4];
    assert_eq!(unsafe { swcert_report_matrix(report, 0, p.as_mut_ptr(), 4) }, SwcertStatus::Ok);
    assert_eq!(p[1], p[2]);
    assert!(p[0] >= 1.0 - 1e-9 && p[3] >= 1.0 - 1e-9);
    assert_eq!(unsafe { swcert_report_matrix(report, 0, p.as_mut_ptr(), 3) }, SwcertStatus::InvalidArgument);
    assert_eq!(unsafe { swcert_report_matrix(report, 9, p.as_mut_ptr(), 4) }, SwcertStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe {
        swcert_report_free(report);
        swcert_system_free(sys);
    }
}

#[test]
fn error_codes() {
    let sys = ncs();
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(swcert_certify(sys, 0, 1, 5, 0.0, 0.05, 0, &mut report), SwcertStatus::Certify);
        assert!(last_error().contains("insufficient samples"));
        assert_eq!(swcert_certify(sys, 7, 1, 100, 0.0, 0.05, 0, &mut report), SwcertStatus::InvalidArgument);
        assert_eq!(swcert_certify(sys, 0, 1, 100, 0.0, 1.5, 0, &mut report), SwcertStatus::InvalidArgument);
        assert_eq!(swcert_certify(sys, 0, 0, 100, 0.0, 0.05, 0, &mut report), SwcertStatus::Sampling);
        assert_eq!(swcert_certify(ptr::null(), 0, 1, 100, 0.0, 0.05, 0, &mut report), SwcertStatus::NullPointer);
        assert_eq!(swcert_certify(sys, 0, 1, 100, 0.0, 0.05, 0, ptr::null_mut()), SwcertStatus::NullPointer);
        assert!(report.is_null());

        let mut bad = ptr::null_mut();
        let json = CString::new(r#"{"name":"x","nodes":["a"],"edges":[["a","b",1]],"matrices":[[1.0]],"dimension":1}"#).unwrap();
        assert_eq!(swcert_system_from_json(json.as_ptr(), &mut bad), SwcertStatus::Config);
        assert!(last_error().contains("edges[0]"));
        let missing = CString::new("/no/such/file.json").unwrap();
        assert_eq!(swcert_system_load(missing.as_ptr(), &mut bad), SwcertStatus::Config);
        assert_eq!(swcert_system_load(ptr::null(), &mut bad), SwcertStatus::NullPointer);
        assert!(bad.is_null());
        swcert_system_free(sys);
    }
}

#[test]
fn system_from_json_and_file() {
    let json = r#"{"name":"scalar","nodes":["u"],"edges":[["u","u",1]],"matrices":[[0.5]],"dimension":1}"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    std::fs::write(&path, json).unwrap();
    let cjson = CString::new(json).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    for load in [
        Box::new(|out: *mut *mut SwcertSystem| unsafe { swcert_system_from_json(cjson.as_ptr(), out) })
            as Box<dyn Fn(*mut *mut SwcertSystem) -> SwcertStatus>,
        Box::new(|out| unsafe { swcert_system_load(cpath.as_ptr(), out) }),
    ] {
        let mut sys = ptr::null_mut();
        assert_eq!(load(&mut sys), SwcertStatus::Ok);
        let mut upper = 0.0;
        let mut lower = 0.0;
        unsafe {
            assert_eq!(swcert_whitebox_upper(sys, 1, 1e-4, &mut upper), SwcertStatus::Ok);
            assert_eq!(swcert_cycle_lower(sys, 4, &mut lower), SwcertStatus::Ok);
            assert_eq!(swcert_whitebox_upper(sys, 1, 0.0, &mut upper), SwcertStatus::InvalidArgument);
            swcert_system_free(sys);
        }
        assert!((lower - 0.5).abs() < 1e-12);
        assert!((0.5 - 1e-9..=0.5 + 1e-3).contains(&upper));
    }
}

#[test]
fn scalar_functions() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(swcert_epsilon(0.05, 100, 2, &mut v), SwcertStatus::Ok);
        assert!((v - (1.0 - 0.05f64.powf(0.01))).abs() < 1e-12);
        assert_eq!(swcert_epsilon(0.05, 3, 9, &mut v), SwcertStatus::InvalidArgument);
        assert_eq!(swcert_delta(0.25, 2, &mut v), SwcertStatus::Ok);
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);
        assert_eq!(swcert_delta(0.6, 2, &mut v), SwcertStatus::InvalidArgument);
        assert_eq!(swcert_delta(0.1, 2, ptr::null_mut()), SwcertStatus::NullPointer);
    }
}
