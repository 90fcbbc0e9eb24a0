use std::ffi::{c_void, CStr, CString};
use std::ptr;

use igeo_ffi::*;

fn family(name: &str) -> *mut IgeoFamily {
    let name = CString::new(name).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { igeo_family_builtin(name.as_ptr(), &mut out) }, IgeoStatus::Ok);
    assert!(!out.is_null());
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(igeo_last_error()) }.to_str().unwrap().to_owned()
}

#[test]
fn bernoulli_fisher_and_kl() {
    let fam = family("bernoulli-mean");
    assert_eq!(unsafe { igeo_family_dim(fam) }, 1);
    let mut g = [0.0];
    assert_eq!(unsafe { igeo_fisher(fam, [0.3].as_ptr(), 1, g.as_mut_ptr()) }, IgeoStatus::Ok);
    assert!((g[0] - 1.0 / 0.21).abs() < 1e-9);
    let mut d = 0.0;
    let s = unsafe { igeo_divergence(fam, IgeoDivergence::Kl, 0.0, [0.3].as_ptr(), [0.6].as_ptr(), 1, &mut d) };
    assert_eq!(s, IgeoStatus::Ok);
    let want = 0.3 * (0.3f64 / 0.6).ln() + 0.7 * (0.7f64 / 0.4).ln();
    assert!((d - want).abs() < 1e-14);
    unsafe { igeo_family_free(fam) };
}

#[test]
fn induced_geometry_matches_analytic() {
    let fam = family("gaussian-loc-scale");
    let theta = [0.2, 1.3];
    let (mut g1, mut c1, mut d1) = ([0.0; 4], [0.0; 8], [0.0; 8]);
    let (mut g2, mut c2, mut d2) = ([0.0; 4], [0.0; 8], [0.0; 8]);
    unsafe {
        let s = igeo_induced_geometry(
            fam, IgeoDivergence::Renyi, 0.5, theta.as_ptr(), 2, g1.as_mut_ptr(), c1.as_mut_ptr(), d1.as_mut_ptr(),
        );
        assert_eq!(s, IgeoStatus::Ok);
        let s = igeo_geometry(fam, IgeoLabel::Rho, 0.5, theta.as_ptr(), 2, g2.as_mut_ptr(), c2.as_mut_ptr(), d2.as_mut_ptr());
        assert_eq!(s, IgeoStatus::Ok);
        igeo_family_free(fam);
    }
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "{g1:?} {g2:?}");
    }
    for (a, b) in c1.iter().chain(&d1).zip(c2.iter().chain(&d2)) {
        assert!((a - b).abs() <= 5e-3, "{a} {b}");
    }
}

#[test]
fn hartigan_and_priors() {
    let fam = family("bernoulli-natural");
    let mut h = [0.0];
    assert_eq!(unsafe { igeo_hartigan(fam, 0.5, [0.7].as_ptr(), 1, h.as_mut_ptr()) }, IgeoStatus::Ok);
    // Jeffreys on the natural chart: ½ log(p(1−p)), derivative ½(1 − 2p).
    let p = 1.0 / (1.0 + (-0.7f64).exp());
    assert!((h[0] - 0.5 * (1.0 - 2.0 * p)).abs() < 1e-9, "{}", h[0]);
    let mut v = 0.0;
    assert_eq!(
        unsafe { igeo_log_prior(fam, IgeoLabel::Fisher, 0.0, [1.0].as_ptr(), 1, &mut v) },
        IgeoStatus::Ok
    );
    let p1 = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((v - 0.5 * (p1 * (1.0 - p1) / 0.25).ln()).abs() < 1e-8, "{v}");
    unsafe { igeo_family_free(fam) };
}

unsafe extern "C" fn square(theta: *const f64, n: usize, user: *mut c_void) -> f64 {
    *(user as *mut usize) += 1;
    let t = std::slice::from_raw_parts(theta, n);
    t.iter().map(|x| x * x).sum()
}

#[test]
fn laplacian_through_callback() {
    let fam = family("gaussian-loc");
    let mut calls = 0usize;
    let mut out = 0.0;
    let s = unsafe {
        igeo_laplacian(
            fam, IgeoLabel::Lc, 0.0, Some(square), (&mut calls as *mut usize).cast(), [0.4].as_ptr(), 1, &mut out,
        )
    };
    assert_eq!(s, IgeoStatus::Ok, "{}", last_error());
    // Unit Fisher metric: the Laplacian of θ² is 2.
    assert!((out - 2.0).abs() < 1e-5, "{out}");
    assert!(calls > 0);
    unsafe { igeo_family_free(fam) };
}

#[test]
fn family_from_json() {
    let json = CString::new(
        r#"{"kind": "exponential", "name": "normal-mean",
            "space": {"type": "real-line", "center": 0.0, "scale": 1.0},
            "sufficient_stats": ["y"], "carrier": "-y^2 / 2.0",
            "domain": {"lower": [null], "upper": [null]}}"#,
    )
    .unwrap();
    let mut fam = ptr::null_mut();
    assert_eq!(unsafe { igeo_family_from_json(json.as_ptr(), &mut fam) }, IgeoStatus::Ok);
    let mut g = [0.0];
    assert_eq!(unsafe { igeo_fisher(fam, [0.1].as_ptr(), 1, g.as_mut_ptr()) }, IgeoStatus::Ok);
    assert!((g[0] - 1.0).abs() < 1e-9);
    unsafe { igeo_family_free(fam) };
}

#[test]
fn error_codes_and_messages() {
    let mut out = ptr::null_mut();
    let bad = CString::new("weibull").unwrap();
    assert_eq!(unsafe { igeo_family_builtin(bad.as_ptr(), &mut out) }, IgeoStatus::UnknownFamily);
    assert!(last_error().contains("weibull"));
    assert_eq!(unsafe { igeo_family_builtin(ptr::null(), &mut out) }, IgeoStatus::NullPointer);

    let fam = family("bernoulli-mean");
    let mut d = 0.0;
    let s = unsafe { igeo_divergence(fam, IgeoDivergence::Renyi, 1.0, [0.3].as_ptr(), [0.6].as_ptr(), 1, &mut d) };
    assert_eq!(s, IgeoStatus::InvalidOrder);
    let s = unsafe { igeo_divergence(fam, IgeoDivergence::Kl, 0.0, [1.3].as_ptr(), [0.6].as_ptr(), 1, &mut d) };
    assert_eq!(s, IgeoStatus::Domain);
    let mut g = [0.0; 4];
    assert_eq!(unsafe { igeo_fisher(fam, [0.3, 0.1].as_ptr(), 2, g.as_mut_ptr()) }, IgeoStatus::InvalidArgument);
    assert_eq!(unsafe { igeo_fisher(ptr::null(), [0.3].as_ptr(), 1, g.as_mut_ptr()) }, IgeoStatus::NullPointer);
    let s = unsafe { igeo_laplacian(fam, IgeoLabel::Lc, 0.0, None, ptr::null_mut(), [0.3].as_ptr(), 1, &mut d) };
    assert_eq!(s, IgeoStatus::NullPointer);
    assert_eq!(unsafe { igeo_fisher(fam, [0.3].as_ptr(), 1, g.as_mut_ptr()) }, IgeoStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe {
        igeo_family_free(fam);
        igeo_family_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/igeo.h");
    for name in [
        "typedef struct IgeoFamily IgeoFamily",
        "igeo_family_builtin",
        "igeo_family_from_json",
        "igeo_family_free",
        "igeo_divergence",
        "igeo_fisher",
        "igeo_geometry",
        "igeo_induced_geometry",
        "igeo_hartigan",
        "igeo_log_prior",
        "igeo_laplacian",
        "igeo_last_error",
        "IGEO_STATUS_DOMAIN = 4",
    ] {
        assert!(header.contains(name), "{name}");
    }
    assert!(!unsafe { CStr::from_ptr(igeo_version()) }.to_bytes().is_empty());
}
