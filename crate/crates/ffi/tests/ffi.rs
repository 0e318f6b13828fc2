use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use qmetro_ffi::*;

fn parse(text: &str) -> *mut QmState {
    let c = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { qm_state_parse(c.as_ptr(), &mut s) }, QmStatus::Ok);
    assert!(!s.is_null());
    s
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(qm_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(qm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn state_round_trip_and_photons() {
    let s = parse("cat:alpha=3");
    let mut n = 0.0;
    assert_eq!(unsafe { qm_state_mean_photons(s, &mut n) }, QmStatus::Ok);
    // N^2 alpha^2 with N^2 = 1 / (2 + 2 e^{-alpha^2/2})
    let expect = 9.0 / (2.0 + 2.0 * (-4.5f64).exp());
    assert!((n - expect).abs() < 1e-12, "{n}");

    let mut needed = 0;
    let mut buf = [0 as libc::c_char; 64];
    assert_eq!(
        unsafe { qm_state_describe(s, buf.as_mut_ptr(), buf.len(), &mut needed) },
        QmStatus::Ok
    );
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    assert_eq!(text, "cat:alpha=3");
    assert_eq!(needed, text.len());

    // truncation to a short buffer stays NUL-terminated
    let mut small = [0x7f as libc::c_char; 4];
    assert_eq!(
        unsafe { qm_state_describe(s, small.as_mut_ptr(), small.len(), ptr::null_mut()) },
        QmStatus::Ok
    );
    assert_eq!(unsafe { CStr::from_ptr(small.as_ptr()) }.to_str().unwrap(), "cat");
    unsafe { qm_state_free(s) };
}

#[test]
fn lossy_qfi_and_bound() {
    let s = parse("coh:alpha=3");
    let mut f = 0.0;
    assert_eq!(
        unsafe { qm_lossy_qfi(s, 0.5, QmLossMode::BothArms, &mut f) },
        QmStatus::Ok
    );
    assert!((f - 18.0).abs() < 1e-9);
    let mut d = 0.0;
    assert_eq!(unsafe { qm_crb(f, 2.0, &mut d) }, QmStatus::Ok);
    assert!((d - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(unsafe { qm_crb(0.0, 2.0, &mut d) }, QmStatus::ZeroInformation);
    assert!(last_error().contains("infinite"));
    unsafe { qm_state_free(s) };

    // phase-arm loss on NOON(2): 2 N^2 eta^N / (1 + eta^N)
    let s = parse("noon:N=2");
    assert_eq!(
        unsafe { qm_lossy_qfi(s, 0.5, QmLossMode::PhaseArmOnly, &mut f) },
        QmStatus::Ok
    );
    assert!((f - 1.6).abs() < 1e-9, "{f}");
    unsafe { qm_state_free(s) };
}

#[test]
fn curve_handles() {
    let s = parse("noon:N=4");
    let mut c = ptr::null_mut();
    let st = unsafe { qm_crb_curve(s, 0.5, 1.0, 3, 400.0, QmLossMode::BothArms, &mut c) };
    assert_eq!(st, QmStatus::Ok);
    assert_eq!(unsafe { qm_curve_len(c) }, 3);
    let mut p = QmPoint::default();
    assert_eq!(unsafe { qm_curve_point(c, 2, &mut p) }, QmStatus::Ok);
    assert_eq!(p.eta, 1.0);
    assert!((p.delta_phi - 1.0 / (4.0 * 200f64.sqrt())).abs() < 1e-12);
    assert!((p.m * p.n_phi - 400.0).abs() < 1e-9);
    assert!(p.a_opt.is_nan());
    assert_eq!(unsafe { qm_curve_point(c, 3, &mut p) }, QmStatus::IndexOutOfRange);
    assert!(last_error().contains("index 3"));
    unsafe {
        qm_curve_free(c);
        qm_state_free(s);
    }
    assert_eq!(unsafe { qm_curve_len(ptr::null()) }, 0);
}

#[test]
fn optimizers() {
    let n_phi = 9.0 / (2.0 + 2.0 * (-4.5f64).exp());
    let mut u = QmUcsOptimum::default();
    assert_eq!(unsafe { qm_optimize_ucs_a(n_phi, 1.0, 400.0, &mut u) }, QmStatus::Ok);
    assert!((u.a - 1.0).abs() < 1e-6 && u.f_q > 0.0);

    let mut c = QmChopOptimum::default();
    assert_eq!(unsafe { qm_chop_optimize(0.5, 400.0, 5.0, &mut c) }, QmStatus::Ok);
    assert!(c.n_phi > 0.1 && c.n_phi < 12.5 && c.delta_phi > 0.0);

    let s = parse("cat:alpha=2");
    let mut m = QmMeasurement::default();
    assert_eq!(
        unsafe { qm_measurement_optimum(s, 0.8, 8.0, 400.0, &mut m) },
        QmStatus::Ok
    );
    assert!(m.phi > 0.0 && m.phi < std::f64::consts::PI);
    assert!((m.delta_phi - 1.0 / (m.m * m.f_c).sqrt()).abs() < 1e-12);
    unsafe { qm_state_free(s) };

    let s = parse("noon:N=2");
    assert_eq!(
        unsafe { qm_measurement_optimum(s, 0.8, 8.0, 400.0, &mut m) },
        QmStatus::Unsupported
    );
    unsafe { qm_state_free(s) };
}

#[test]
fn errors_and_nulls() {
    let bad = CString::new("squeezed:r=1").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { qm_state_parse(bad.as_ptr(), &mut s) }, QmStatus::Parse);
    assert!(s.is_null());
    assert!(last_error().contains("squeezed"));

    assert_eq!(unsafe { qm_state_parse(ptr::null(), &mut s) }, QmStatus::NullPointer);
    let mut f = 0.0;
    assert_eq!(
        unsafe { qm_lossy_qfi(ptr::null(), 0.5, QmLossMode::BothArms, &mut f) },
        QmStatus::NullPointer
    );
    assert!(last_error().contains("state"));

    let st = parse("cat:alpha=3");
    assert_eq!(
        unsafe { qm_lossy_qfi(st, 1.5, QmLossMode::BothArms, &mut f) },
        QmStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { qm_lossy_qfi(st, 0.5, QmLossMode::BothArms, ptr::null_mut()) },
        QmStatus::NullPointer
    );
    assert_eq!(
        unsafe { qm_lossy_qfi(st, 0.5, QmLossMode::BothArms, &mut f) },
        QmStatus::Ok
    );
    assert_eq!(last_error(), "");
    unsafe {
        qm_state_free(st);
        qm_state_free(ptr::null_mut());
        qm_curve_free(ptr::null_mut());
    }
}

#[test]
fn header_is_current_and_compiles() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/qmetro.h")).unwrap();
    for name in [
        "qm_version",
        "qm_last_error",
        "qm_state_parse",
        "qm_state_free",
        "qm_state_describe",
        "qm_state_mean_photons",
        "qm_lossy_qfi",
        "qm_crb",
        "qm_crb_curve",
        "qm_curve_len",
        "qm_curve_point",
        "qm_curve_free",
        "qm_optimize_ucs_a",
        "qm_chop_optimize",
        "qm_measurement_optimum",
        "typedef struct QmState QmState;",
        "QM_STATUS_TRUNCATION = 4",
    ] {
        assert!(header.contains(name), "{name}");
    }
    let Ok(probe) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(probe.status.success());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "qmetro.h"
int use(void) {
    QmState *s = 0;
    QmCurve *c = 0;
    QmPoint p;
    double f;
    if (qm_state_parse("cat:alpha=3", &s) != QM_STATUS_OK) return 1;
    qm_lossy_qfi(s, 0.5, QM_LOSS_MODE_BOTH_ARMS, &f);
    qm_crb_curve(s, 0.1, 1.0, 10, 400.0, QM_LOSS_MODE_BOTH_ARMS, &c);
    qm_curve_point(c, qm_curve_len(c) - 1, &p);
    qm_curve_free(c);
    qm_state_free(s);
    return p.eta > 0.0 && qm_last_error() != 0 && qm_version() != 0 ? 0 : 1;
}
"#,
    )
    .unwrap();
    for std in ["-std=c99", "-std=c11"] {
        let o = Command::new("cc")
            .args([std, "-Wall", "-Wextra", "-Werror", "-fsyntax-only", "-I"])
            .arg(dir.join("include"))
            .arg(&src)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
}
