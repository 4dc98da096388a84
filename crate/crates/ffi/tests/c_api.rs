//! The C interface exercised through its exported symbols.

use std::ffi::{CStr, CString};
use std::ptr;

use fedbcd_ffi::*;

const CONFIG: &str = "rounds = 5\nseeds = [3]\n[topology]\nservers = 3\ndevices_per_server = 2\n\
                      [problem]\nclasses = 3\nfeatures = 2\ndiversity = 2\nsamples_per_device = 8\n\
                      test_samples_per_device = 4\n[hyper]\nactive_per_server = 1\nbatch_size = 4\n";

fn last_error() -> String {
    let p = fedbcd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_sim(toml: &str, seed: u64) -> Result<*mut FedbcdSimulation, FedbcdStatus> {
    let c = CString::new(toml).unwrap();
    let mut h = ptr::null_mut();
    match unsafe { fedbcd_simulation_new(c.as_ptr(), seed, &mut h) } {
        FedbcdStatus::Ok => Ok(h),
        s => {
            assert!(h.is_null());
            Err(s)
        }
    }
}

#[test]
fn simulation_lifecycle() {
    let h = new_sim(CONFIG, 3).unwrap();
    unsafe {
        assert_eq!(fedbcd_simulation_round(h), 0);
        assert_eq!(fedbcd_simulation_num_servers(h), 3);
        let dim = fedbcd_simulation_dim(h);
        assert_eq!(dim, 3 * 3);
        let mut m = std::mem::zeroed::<FedbcdMetrics>();
        assert_eq!(fedbcd_simulation_metrics(h, &mut m), FedbcdStatus::Ok);
        assert_eq!(m.round, 0);
        let mut last = 0.0;
        for t in 1..=4 {
            assert_eq!(fedbcd_simulation_step(h, &mut m), FedbcdStatus::Ok);
            assert_eq!(m.round, t);
            assert!(m.sim_time > last);
            assert!((0.0..=1.0).contains(&m.personalized_accuracy_mean));
            last = m.sim_time;
        }
        assert_eq!(fedbcd_simulation_step(h, ptr::null_mut()), FedbcdStatus::Ok);
        assert_eq!(fedbcd_simulation_round(h), 5);
        assert!(fedbcd_simulation_sim_time(h) > last);
        let mut z = vec![0.0; dim];
        assert_eq!(
            fedbcd_simulation_server_model(h, 1, z.as_mut_ptr(), dim),
            FedbcdStatus::Ok
        );
        assert!(z.iter().any(|v| *v != 0.0));
        assert_eq!(
            fedbcd_simulation_server_model(h, 1, z.as_mut_ptr(), dim - 1),
            FedbcdStatus::BufferTooSmall
        );
        assert_eq!(
            fedbcd_simulation_server_model(h, 3, z.as_mut_ptr(), dim),
            FedbcdStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));
        fedbcd_simulation_free(h);
    }
}

#[test]
fn matches_the_rust_simulator() {
    let cfg = fedbcd::config::RunConfig::from_toml_str(CONFIG).unwrap();
    let run = fedbcd::experiment::run_simulation(&cfg, 9).unwrap();
    let h = new_sim(CONFIG, 9).unwrap();
    for r in &run.records[1..] {
        let mut m = unsafe { std::mem::zeroed::<FedbcdMetrics>() };
        assert_eq!(
            unsafe { fedbcd_simulation_step(h, &mut m) },
            FedbcdStatus::Ok
        );
        assert_eq!(m.objective_value, r.objective_value);
        assert_eq!(m.sim_time, r.sim_time);
    }
    unsafe { fedbcd_simulation_free(h) };
}

#[test]
fn regression_reports_nan_accuracy() {
    let h = new_sim(
        "[problem]\nloss = \"least_squares\"\ndiversity = 1\n[topology]\nservers = 2\ndevices_per_server = 2\n[hyper]\nactive_per_server = 1\n",
        1,
    ).unwrap();
    let mut m = unsafe { std::mem::zeroed::<FedbcdMetrics>() };
    assert_eq!(
        unsafe { fedbcd_simulation_step(h, &mut m) },
        FedbcdStatus::Ok
    );
    assert!(m.global_accuracy.is_nan() && m.personalized_accuracy_mean.is_nan());
    unsafe { fedbcd_simulation_free(h) };
}

#[test]
fn bad_inputs_map_to_status_codes() {
    assert_eq!(
        new_sim("nonsense = [", 1).unwrap_err(),
        FedbcdStatus::InvalidConfig
    );
    assert_eq!(
        new_sim("[hyper]\neta_x = -1.0", 1).unwrap_err(),
        FedbcdStatus::InvalidConfig
    );
    assert!(last_error().contains("eta_x"));
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { fedbcd_simulation_new(ptr::null(), 1, &mut h) },
        FedbcdStatus::NullPointer
    );
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { fedbcd_simulation_new(bad.as_ptr().cast(), 1, &mut h) },
        FedbcdStatus::InvalidUtf8
    );
    unsafe {
        assert_eq!(
            fedbcd_simulation_step(ptr::null_mut(), ptr::null_mut()),
            FedbcdStatus::NullPointer
        );
        assert_eq!(fedbcd_simulation_round(ptr::null()), 0);
        assert!(fedbcd_simulation_sim_time(ptr::null()).is_nan());
        fedbcd_simulation_free(ptr::null_mut());
    }
}

#[test]
fn latency_helpers() {
    let exp = CString::new("exp:1").unwrap();
    let (mut mean, mut se) = (0.0, 0.0);
    let s = unsafe { fedbcd_latency_ratio(exp.as_ptr(), 10, 5, 100_000, 1, &mut mean, &mut se) };
    assert_eq!(s, FedbcdStatus::Ok);
    let h = |a: usize, b: usize| (a..=b).map(|j| 1.0 / j as f64).sum::<f64>();
    assert!((mean - h(6, 10) / h(1, 10)).abs() < 0.01);
    assert!(se > 0.0 && se < 0.01);
    let mut q = 0.0;
    assert_eq!(
        unsafe { fedbcd_quantile(exp.as_ptr(), 0.5, &mut q) },
        FedbcdStatus::Ok
    );
    assert!((q - 2f64.ln()).abs() < 1e-12);
    assert_eq!(
        unsafe { fedbcd_quantile(exp.as_ptr(), 1.0, &mut q) },
        FedbcdStatus::InvalidArgument
    );
    let bad = CString::new("gamma:2").unwrap();
    assert_eq!(
        unsafe { fedbcd_quantile(bad.as_ptr(), 0.5, &mut q) },
        FedbcdStatus::InvalidConfig
    );
    assert_eq!(
        unsafe { fedbcd_latency_ratio(exp.as_ptr(), 4, 5, 10, 1, &mut mean, ptr::null_mut()) },
        FedbcdStatus::InvalidArgument
    );
}

#[test]
fn errors_are_thread_local() {
    let _ = new_sim("nonsense = [", 1);
    let here = last_error();
    let there = std::thread::spawn(|| fedbcd_last_error_message().is_null())
        .join()
        .unwrap();
    assert!(there);
    assert_eq!(last_error(), here);
}

#[test]
fn header_declares_every_export_and_compiles() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let header = std::fs::read_to_string(format!("{dir}/include/fedbcd.h")).unwrap();
    for sym in [
        "fedbcd_last_error_message",
        "fedbcd_simulation_new",
        "fedbcd_simulation_free",
        "fedbcd_simulation_step",
        "fedbcd_simulation_metrics",
        "fedbcd_simulation_round",
        "fedbcd_simulation_sim_time",
        "fedbcd_simulation_dim",
        "fedbcd_simulation_num_servers",
        "fedbcd_simulation_server_model",
        "fedbcd_latency_ratio",
        "fedbcd_quantile",
        "FEDBCD_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
    // Syntax check with the system C compiler when one is installed.
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(format!("{dir}/include/fedbcd.h"))
        .status()
    else {
        eprintln!("cc not found; skipping the header compile check");
        return;
    };
    assert!(status.success());
}
