use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

use timebin_core::config::RunConfig;
use timebin_core::io;
use timebin_core::tomography::ProjectorSet;
use timebin_core::DensityMatrix;

fn timebin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timebin")).args(args).output().unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no error JSON in {text}"));
    serde_json::from_str::<Value>(line).unwrap()["error"].clone()
}

#[test]
fn simulate_writes_artifacts_deterministically() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = timebin(&["simulate", "--out", path_str(dir), "--seed", "3"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["trajectory.csv", "counts.csv", "density_matrix.json", "density_matrix_raw.json", "report.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs between runs");
    }
    let report = json(&a.join("report.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["config"]["seed"], 3);
    let f = report["data"]["fidelity_bell"].as_f64().unwrap();
    assert!(f > 0.85 && f <= 1.0);
    let pb = report["data"]["p_b"].as_f64().unwrap();
    assert!((report["data"]["p_b_squared"].as_f64().unwrap() - pb * pb).abs() < 1e-15);

    let rho = io::read_density_matrix(&a.join("density_matrix.json")).unwrap();
    assert!((rho.trace().re - 1.0).abs() < 1e-12);
    assert!(rho.min_eigenvalue() > -1e-12);
    let counts = io::read_counts_csv(&a.join("counts.csv")).unwrap();
    assert!((counts.total() - report["data"]["total_counts"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn zero_drive_fails_in_tomography() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"params": {"omega0": 0.0}}"#);
    let out_dir = tmp.path().join("out");
    let out = timebin(&["simulate", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert_eq!(out.status.code(), Some(4));
    let err = stderr_error(&out);
    assert_eq!(err["stage"], "tomography");
    assert_eq!(err["exit_code"], 4);
    assert!(err["message"].as_str().unwrap().contains("k = 0"), "{err}");
    assert!(out_dir.join("trajectory.csv").exists());
    let counts = io::read_counts_csv(&out_dir.join("counts.csv")).unwrap();
    assert_eq!(counts.total(), 0.0);
    assert_eq!(json(&out_dir.join("error.json"))["error"]["stage"], "tomography");
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = timebin(&["simulate", "--config", path_str(&missing), "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["stage"], "config");

    let cfg = write_config(tmp.path(), r#"{"params": {"omega_zero": 0.1}}"#);
    let out = timebin(&["simulate", "--config", path_str(&cfg), "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_error(&out)["message"].as_str().unwrap().contains("omega_zero"));

    let out = timebin(&["sweep", "--grid", "0.3:0.01:3,10:20:2", "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));

    let out = timebin(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tomo_reconstructs_bell_state_from_born_counts() {
    let tmp = TempDir::new().unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let phi = DensityMatrix::pure(&[Complex::new(s, 0.0), Complex::default(), Complex::default(), Complex::new(s, 0.0)]);
    let counts = ProjectorSet::default().born_counts(&phi).unwrap().scaled(1000.0).unwrap();
    let data = tmp.path().join("counts.csv");
    io::write_counts_csv(&data, &counts, &RunConfig::default()).unwrap();

    let out_dir = tmp.path().join("out");
    let out = timebin(&["tomo", "--data", path_str(&data), "--out", path_str(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rho = io::read_density_matrix(&out_dir.join("density_matrix.json")).unwrap();
    assert!((rho.get(0, 3) - Complex::new(0.5, 0.0)).norm() < 1e-12);
    assert!((rho.get(0, 0).re - 0.5).abs() < 1e-12);
    let report = json(&out_dir.join("tomo_report.json"));
    assert!((report["data"]["fidelity_bell"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(report["data"]["reference"], "model");

    // against itself as the reference
    let reference = out_dir.join("density_matrix.json");
    let out = timebin(&["tomo", "--data", path_str(&data), "--reference", path_str(&reference), "--out", path_str(&out_dir)]);
    assert!(out.status.success());
    let report = json(&out_dir.join("tomo_report.json"));
    assert!((report["data"]["fidelity_mixed"].as_f64().unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn tomo_reports_malformed_rows() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("counts.csv");
    let mut text = String::from("nu,counts\n");
    for nu in 1..=16 {
        text += &format!("{nu},{}\n", if nu == 7 { "lots" } else { "1.0" });
    }
    std::fs::write(&data, text).unwrap();
    let out = timebin(&["tomo", "--data", path_str(&data), "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
    let message = stderr_error(&out)["message"].as_str().unwrap().to_owned();
    assert!(message.contains("line 8") && message.contains("counts"), "{message}");

    let out = timebin(&["tomo", "--data", path_str(&tmp.path().join("absent.csv")), "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn decay_fit_recovers_biexciton_lifetime() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let series: Vec<(f64, f64)> = (0..300)
        .map(|k| {
            let t = k as f64 * 10.0;
            let clean = 5000.0 * (-t / 458.0).exp() + 20.0;
            (t, clean * (1.0 + 0.01 * rng.random_range(-1.0..1.0)))
        })
        .collect();
    let data = tmp.path().join("decay.csv");
    io::write_decay_csv(&data, &series, &RunConfig::default()).unwrap();
    let out = timebin(&["decay-fit", "--data", path_str(&data), "--out", path_str(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = json(&tmp.path().join("decay_fit.json"));
    let rate = fit["data"]["rate"].as_f64().unwrap();
    assert!((rate * 458.0 - 1.0).abs() < 0.02, "rate {rate}");
    assert!((fit["data"]["lifetime"].as_f64().unwrap() - 1.0 / rate).abs() < 1e-9);
}

#[test]
fn decay_fit_rejects_rising_series() {
    let tmp = TempDir::new().unwrap();
    let series: Vec<(f64, f64)> = (0..20).map(|k| (k as f64, 10.0 + k as f64)).collect();
    let data = tmp.path().join("decay.csv");
    io::write_decay_csv(&data, &series, &RunConfig::default()).unwrap();
    let out = timebin(&["decay-fit", "--data", path_str(&data), "--out", path_str(tmp.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_error(&out)["stage"], "calibration");
}

#[test]
fn single_cell_sweep_matches_simulate() {
    let tmp = TempDir::new().unwrap();
    let (sim, sw) = (tmp.path().join("sim"), tmp.path().join("sweep"));
    assert!(timebin(&["simulate", "--out", path_str(&sim)]).status.success());
    let out = timebin(&["sweep", "--grid", "0.05:0.05:1,85:85:1", "--out", path_str(&sw)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let f_sim = json(&sim.join("report.json"))["data"]["fidelity_bell"].as_f64().unwrap();
    let grid = io::read_sweep_csv(&sw.join("sweep.csv")).unwrap();
    assert_eq!(grid.shape(), (1, 1));
    assert_eq!(grid.fidelity(0, 0), f_sim);
    assert_eq!(grid.counts_norm(0, 0), 1.0);

    let report = json(&sw.join("sweep_report.json"));
    assert_eq!(report["data"]["energy_alignment"]["insufficient_variation"], true);
    // a single cell has no level strictly below its maximum
    assert!(report["data"]["contour_error"].is_string());
    assert!(!sw.join("contour.csv").exists());
}

#[test]
fn small_sweep_writes_contour() {
    let tmp = TempDir::new().unwrap();
    let out = timebin(&["sweep", "--grid", "0.01:0.3:4,10:150:4", "--level", "0.32", "--out", path_str(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let contour = io::read_contour_csv(&tmp.path().join("contour.csv")).unwrap();
    assert!(!contour.is_empty());
    let grid = io::read_sweep_csv(&tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(grid.shape(), (4, 4));
    assert_eq!(grid.failed_cells(), 0);
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["contour_points"].as_u64().unwrap() as usize, contour.len());
}

#[test]
fn fit_with_one_free_count_scale() {
    let tmp = TempDir::new().unwrap();
    let truth = timebin_core::ModelParams::default();
    let rows: Vec<_> = [0.05, 0.15, 0.25]
        .iter()
        .map(|&o| {
            let power = timebin_core::model::omega0_to_power(o, &truth).unwrap();
            let c = timebin_core::calibration::predict_counts(&truth, power).unwrap();
            timebin_core::calibration::RabiRow { power, counts_b: c.counts_b, counts_x: c.counts_x }
        })
        .collect();
    let data = timebin_core::calibration::RabiDataset::new(rows, truth.tau, Default::default()).unwrap();
    let csv = tmp.path().join("rabi.csv");
    io::write_rabi_csv(&csv, &data, &RunConfig::default()).unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"params": {"gamma_xg_i0": 0.5},
            "fit": {"free": [{"name": "gamma_xg_i0", "lower": 0.1, "upper": 3.0}], "max_evaluations": 80}}"#,
    );
    let out = timebin(&["fit", "--config", path_str(&cfg), "--data", path_str(&csv), "--out", path_str(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&tmp.path().join("fit_report.json"));
    let fitted = report["data"]["report"]["params"]["gamma_xg_i0"].as_f64().unwrap();
    assert!((fitted / 0.69 - 1.0).abs() < 0.01, "fitted {fitted}");
    assert_eq!(report["data"]["improved"], true);
    assert!(report["data"]["report"]["evaluations"].as_u64().unwrap() <= 80);
    let table = std::fs::read_to_string(tmp.path().join("rabi_fit.csv")).unwrap();
    assert_eq!(table.lines().filter(|l| !l.starts_with('#')).count(), 4);
}
