//! End-to-end integration: CLI binary, file formats, determinism.

use std::path::Path;
use std::process::Command;

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use tempfile::tempdir;

use svcplm::data::Dataset;
use svcplm::io::write_dataset_csv;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_svcplm")
}

fn demo_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let v = Array1::from_shape_fn(n, |_| rng.gen_range(0.0f64..1.0));
    let xi = v.mapv(|t| 3.0 * t - 2.0 * (4.0 * std::f64::consts::PI * t).cos());
    let w = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
    let x = Array2::from_shape_fn((n, 2), |_| {
        0.8f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    let u = Array1::from_shape_fn(n, |_| rng.gen_range(0.0f64..3.0));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let a1 = (-u[i] * u[i]).exp() + (std::f64::consts::PI * u[i]).sin();
        let a2 = 0.5 * u[i] * u[i] - (2.0 * std::f64::consts::PI * u[i]).cos();
        y[i] = 0.2 * xi[i] - w[[i, 0]] + w[[i, 1]]
            + a1 * x[[i, 0]]
            + a2 * x[[i, 1]]
            + rng.sample::<f64, _>(StandardNormal);
    }
    let eta = Array2::from_shape_fn((n, 1), |(i, _)| {
        xi[i] + 2.0f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
    });
    Dataset {
        y,
        eta,
        v,
        w,
        x,
        u,
        xi: Some(xi.insert_axis(Axis(1))),
    }
}

#[test]
fn fit_command_writes_artifacts() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset_csv(&csv, &demo_dataset(100, 1)).unwrap();
    let out = dir.path().join("results");
    let status = Command::new(bin())
        .args([
            "fit",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--mode",
            "proposed",
            "--h",
            "0.4",
        ])
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(out.join("fit.json").exists());
    assert!(out.join("alpha_curve.csv").exists());
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(fit["theta_hat"].as_array().unwrap().len(), 3);
    assert!(fit["trace_S"].as_f64().unwrap() > 0.0);
    assert_eq!(fit["mode"], "proposed");
    let header = std::fs::read_to_string(out.join("alpha_curve.csv")).unwrap();
    assert!(header.starts_with("u,alpha_1,alpha_2\n"));
}

#[test]
fn fit_command_missing_column_exits_2() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    std::fs::write(&csv, "Y,eta_1,V,X_1\n1,2,0.5,1\n2,3,0.6,1\n").unwrap();
    let out = Command::new(bin())
        .args([
            "fit",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains('U'), "stderr: {msg}");
}

#[test]
fn fit_command_collinear_covariates_exit_3() {
    // duplicate W columns make Z~'Z~ singular
    let dir = tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut ds = demo_dataset(60, 3);
    let w0 = ds.w.column(0).to_owned();
    ds.w.column_mut(1).assign(&w0);
    write_dataset_csv(&csv, &ds).unwrap();
    let out = Command::new(bin())
        .args([
            "fit",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
            "--h",
            "0.4",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("fit_theta"), "stderr: {msg}");
}

#[test]
fn test_command_deterministic_and_shaped() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset_csv(&csv, &demo_dataset(80, 5)).unwrap();
    let run = |out: &Path| {
        let st = Command::new(bin())
            .args([
                "test",
                "--input",
                csv.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--test",
                "ratio",
                "--a",
                "1,1,1",
                "--bootstrap",
                "200",
                "--seed",
                "7",
                "--h",
                "0.4",
            ])
            .output()
            .unwrap();
        assert!(st.status.success());
        std::fs::read(out.join("test.json")).unwrap()
    };
    let a = run(&dir.path().join("o1"));
    let b = run(&dir.path().join("o2"));
    assert_eq!(a, b, "test.json must be byte-identical for a fixed seed");
    let parsed: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert!(parsed["rho_n"].as_f64().is_some());
    let p = parsed["p_asymptotic"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert_eq!(parsed["B"], 200);
}

#[test]
fn test_command_malformed_hypothesis_exits_2() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset_csv(&csv, &demo_dataset(60, 7)).unwrap();
    let out = Command::new(bin())
        .args([
            "test",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
            "--test",
            "wald",
            "--a",
            "1,1", // wrong width for p = 3
            "--h",
            "0.4",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_smoke_preset_shape_and_unknown_preset() {
    let dir = tempdir().unwrap();
    let st = Command::new(bin())
        .args([
            "simulate",
            "--preset",
            "scenario_iii",
            "--replicates",
            "4",
            "--n",
            "50",
            "--seed",
            "23",
            "--out",
            dir.path().join("sim").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(st.status.success());
    let report = std::fs::read_to_string(dir.path().join("sim/report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "sweep,method,coef,est,se,sd,cov");
    // 5 sweeps x 3 methods x 3 coefficients + header
    assert_eq!(lines.len(), 1 + 45);
    assert!(dir.path().join("sim/provenance.json").exists());

    let bad = Command::new(bin())
        .args([
            "simulate",
            "--preset",
            "not_a_preset",
            "--out",
            dir.path().join("x").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn simulate_byte_identical_across_runs_and_thread_counts() {
    let dir = tempdir().unwrap();
    let run = |out: &Path, threads: &str| {
        let st = Command::new(bin())
            .args([
                "simulate",
                "--preset",
                "table5_desk",
                "--replicates",
                "3",
                "--n",
                "40",
                "--seed",
                "99",
                "--threads",
                threads,
                "--out",
                out.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        (
            std::fs::read(out.join("report.csv")).unwrap(),
            std::fs::read(out.join("provenance.json")).unwrap(),
        )
    };
    let (r1, p1) = run(&dir.path().join("a"), "1");
    let (r2, p2) = run(&dir.path().join("b"), "8");
    let (r3, p3) = run(&dir.path().join("c"), "1");
    assert_eq!(r1, r2, "report.csv differs across thread counts");
    assert_eq!(r1, r3, "report.csv differs across reruns");
    assert_eq!(p1, p2);
    assert_eq!(p1, p3);
}

#[test]
fn commands_do_not_mutate_inputs() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    write_dataset_csv(&csv, &demo_dataset(60, 11)).unwrap();
    let before = std::fs::read(&csv).unwrap();
    let _ = Command::new(bin())
        .args([
            "calibrate",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            dir.path().join("cal").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    let _ = Command::new(bin())
        .args([
            "cv",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            dir.path().join("cv").to_str().unwrap(),
            "--cv-grid",
            "0.2,0.8,3",
            "--mode",
            "naive",
        ])
        .output()
        .unwrap();
    let after = std::fs::read(&csv).unwrap();
    assert_eq!(before, after);
    assert!(dir.path().join("cal/calibration.csv").exists());
    let cv: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cv/cv.json")).unwrap())
            .unwrap();
    assert!(cv["selected_h"].as_f64().unwrap() > 0.0);
    assert_eq!(cv["grid"].as_array().unwrap().len(), 3);
}

#[test]
fn benchmark_mode_without_xi_exits_2() {
    let dir = tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    let mut ds = demo_dataset(50, 13);
    ds.xi = None;
    write_dataset_csv(&csv, &ds).unwrap();
    let out = Command::new(bin())
        .args([
            "fit",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            dir.path().join("o").to_str().unwrap(),
            "--mode",
            "benchmark",
            "--h",
            "0.4",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
