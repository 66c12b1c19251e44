use std::ffi::{CStr, CString};
use std::ptr;

use lasalt_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(lasalt_last_error()) }.to_string_lossy().into_owned()
}

fn grid(n: u32) -> *mut LasaltGrid {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { lasalt_grid_new(n, 0.0, &mut g) }, LasaltStatus::Ok);
    g
}

fn coords(n: usize) -> Vec<(f64, f64)> {
    let h = 2.0 * std::f64::consts::PI / n as f64;
    (0..n * n).map(|k| ((k % n) as f64 * h, (k / n) as f64 * h)).collect()
}

#[test]
fn grid_handle_lifecycle_and_errors() {
    let g = grid(16);
    assert_eq!(unsafe { lasalt_grid_nodes(g) }, 256);
    unsafe { lasalt_grid_free(g) };
    assert_eq!(unsafe { lasalt_grid_nodes(ptr::null()) }, 0);

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { lasalt_grid_new(7, 0.0, &mut bad) }, LasaltStatus::Config);
    assert!(bad.is_null());
    assert!(last_error().contains("even"));
    assert_eq!(unsafe { lasalt_grid_new(16, 0.0, ptr::null_mut()) }, LasaltStatus::NullPointer);
    // Freeing null is a no-op.
    unsafe { lasalt_grid_free(ptr::null_mut()) };
}

#[test]
fn lie_scalar_matches_analytic_advection() {
    let n = 16;
    let g = grid(n as u32);
    let pts = coords(n);
    // xi = (1, 0), f = sin x  =>  xi . grad f = cos x
    let mut xi = vec![0.0; 2 * n * n];
    xi[..n * n].iter_mut().for_each(|v| *v = 1.0);
    let f: Vec<f64> = pts.iter().map(|(x, _)| x.sin()).collect();
    let mut out = vec![0.0; n * n];
    assert_eq!(unsafe { lasalt_lie_scalar(g, xi.as_ptr(), f.as_ptr(), out.as_mut_ptr()) }, LasaltStatus::Ok);
    for ((x, _), v) in pts.iter().zip(&out) {
        assert!((v - x.cos()).abs() < 1e-12);
    }
    assert_eq!(unsafe { lasalt_lie_scalar(g, ptr::null(), f.as_ptr(), out.as_mut_ptr()) }, LasaltStatus::NullPointer);
    unsafe { lasalt_grid_free(g) };
}

#[test]
fn canonical_noise_gives_scaled_laplacian() {
    let n = 16;
    let g = grid(n as u32);
    let spec = CString::new("\"canonical(0.5)\"").unwrap();
    let mut noise = ptr::null_mut();
    assert_eq!(unsafe { lasalt_noise_new(g, spec.as_ptr(), &mut noise) }, LasaltStatus::Ok);
    let mut lam = 0.0;
    assert_eq!(unsafe { lasalt_noise_lambda_min(noise, &mut lam) }, LasaltStatus::Ok);
    assert_eq!(lam, 0.25);
    // f = cos(2x) sin(y): Laplacian is -5 f.
    let f: Vec<f64> = coords(n).iter().map(|(x, y)| (2.0 * x).cos() * y.sin()).collect();
    let mut out = vec![0.0; n * n];
    assert_eq!(unsafe { lasalt_double_lie_scalar(noise, f.as_ptr(), out.as_mut_ptr()) }, LasaltStatus::Ok);
    for (a, b) in out.iter().zip(&f) {
        assert!((a + 0.25 * 5.0 * b).abs() < 1e-12);
    }
    let bad = CString::new("\"nonsense(1)\"").unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { lasalt_noise_new(g, bad.as_ptr(), &mut none) }, LasaltStatus::Config);
    unsafe {
        lasalt_noise_free(noise);
        lasalt_grid_free(g);
    }
}

#[test]
fn biot_savart_of_sin_x() {
    let n = 16;
    let g = grid(n as u32);
    let pts = coords(n);
    let w: Vec<f64> = pts.iter().map(|(x, _)| x.sin()).collect();
    let mut v = vec![0.0; 2 * n * n];
    assert_eq!(unsafe { lasalt_biot_savart(g, w.as_ptr(), v.as_mut_ptr()) }, LasaltStatus::Ok);
    for (k, (x, _)) in pts.iter().enumerate() {
        assert!(v[k].abs() < 1e-12);
        assert!((v[n * n + k] + x.cos()).abs() < 1e-12);
    }
    let ones = vec![1.0; n * n];
    assert_eq!(unsafe { lasalt_biot_savart(g, ones.as_ptr(), v.as_mut_ptr()) }, LasaltStatus::Numerical);
    assert!(last_error().contains("mean"));
    unsafe { lasalt_grid_free(g) };
}

const SMALL_CONFIG: &str = r#"{
    "grid": {"n": 16},
    "noise": "canonical(0.2)",
    "initial": {"omega": "taylor_green(0.5)", "theta": "theta_blob(3.14159,3.14159,0.8,1)"},
    "solver": {"dt": 0.01, "t_end": 0.05},
    "ensemble": {"members": 4, "seed": 1},
    "output": {"directory": "unused"}
}"#;

#[test]
fn expectation_run_save_and_load() {
    let cfg = CString::new(SMALL_CONFIG).unwrap();
    let mut traj = ptr::null_mut();
    assert_eq!(unsafe { lasalt_expectation_run(cfg.as_ptr(), &mut traj) }, LasaltStatus::Ok);
    let (mut count, mut n) = (0usize, 0u32);
    assert_eq!(unsafe { lasalt_trajectory_shape(traj, &mut count, &mut n) }, LasaltStatus::Ok);
    assert_eq!((count, n), (6, 16));
    let mut theta = vec![0.0; 256];
    let mut t = 0.0;
    assert_eq!(unsafe { lasalt_trajectory_theta(traj, 5, theta.as_mut_ptr(), 256, &mut t) }, LasaltStatus::Ok);
    assert!((t - 0.05).abs() < 1e-12);
    assert_eq!(
        unsafe { lasalt_trajectory_theta(traj, 6, theta.as_mut_ptr(), 256, ptr::null_mut()) },
        LasaltStatus::InvalidArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { lasalt_trajectory_save(traj, path.as_ptr()) }, LasaltStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { lasalt_trajectory_load(path.as_ptr(), &mut back) }, LasaltStatus::Ok);
    let mut again = vec![0.0; 256];
    assert_eq!(unsafe { lasalt_trajectory_theta(back, 5, again.as_mut_ptr(), 256, ptr::null_mut()) }, LasaltStatus::Ok);
    assert_eq!(theta, again);

    // A tampered snapshot is caught by its checksum.
    let file = dir.path().join("theta_000005.lsf1");
    let mut bytes = std::fs::read(&file).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&file, bytes).unwrap();
    let mut broken = ptr::null_mut();
    assert_eq!(unsafe { lasalt_trajectory_load(path.as_ptr(), &mut broken) }, LasaltStatus::HashMismatch);
    unsafe {
        lasalt_trajectory_free(traj);
        lasalt_trajectory_free(back);
    }

    let invalid = CString::new(SMALL_CONFIG.replace("\"n\": 16", "\"n\": 15")).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { lasalt_expectation_run(invalid.as_ptr(), &mut none) }, LasaltStatus::Config);
}

#[test]
fn lsf1_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.lsf1").to_str().unwrap()).unwrap();
    let values: Vec<f64> = (0..2 * 64).map(|k| k as f64 * 0.5 - 3.0).collect();
    assert_eq!(unsafe { lasalt_lsf1_write(path.as_ptr(), 8, 2, 42, 0.125, values.as_ptr()) }, LasaltStatus::Ok);
    let (mut n, mut c, mut s, mut t) = (0u32, 0u32, 0u64, 0.0f64);
    assert_eq!(unsafe { lasalt_lsf1_read_header(path.as_ptr(), &mut n, &mut c, &mut s, &mut t) }, LasaltStatus::Ok);
    assert_eq!((n, c, s, t), (8, 2, 42, 0.125));
    let mut back = vec![0.0; 128];
    assert_eq!(unsafe { lasalt_lsf1_read_values(path.as_ptr(), back.as_mut_ptr(), 128) }, LasaltStatus::Ok);
    assert_eq!(back, values);
    assert_eq!(unsafe { lasalt_lsf1_read_values(path.as_ptr(), back.as_mut_ptr(), 10) }, LasaltStatus::InvalidArgument);
    let missing = CString::new(dir.path().join("none.lsf1").to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { lasalt_lsf1_read_header(missing.as_ptr(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) },
        LasaltStatus::Io
    );
}

#[test]
fn verify_subset_returns_report() {
    let mut cfg: serde_json::Value = serde_json::from_str(SMALL_CONFIG).unwrap();
    cfg["verify"] = serde_json::json!({"criteria": ["A-1", "A-11"]});
    let text = CString::new(cfg.to_string()).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { lasalt_verify(text.as_ptr(), &mut report) }, LasaltStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(report) }.to_str().unwrap()).unwrap();
    unsafe { lasalt_string_free(report) };
    assert_eq!(json["pass"], true);
    let ids: Vec<&str> = json["criteria"].as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["A-1", "A-11"]);

    cfg["verify"] = serde_json::json!({"criteria": ["A-99"]});
    let text = CString::new(cfg.to_string()).unwrap();
    assert_eq!(unsafe { lasalt_verify(text.as_ptr(), &mut report) }, LasaltStatus::Config);
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lasalt.h")).unwrap();
    for name in [
        "LasaltGrid",
        "LasaltNoise",
        "LasaltTrajectory",
        "LASALT_STATUS_HASH_MISMATCH",
        "lasalt_last_error",
        "lasalt_lie_scalar",
        "lasalt_biot_savart",
        "lasalt_expectation_run",
        "lasalt_verify",
        "lasalt_lsf1_read_values",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // The header must compile as C when a compiler is available.
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lasalt.h"))
        .output()
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
