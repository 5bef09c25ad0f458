//! End-to-end checks of the `ovs` binary: exit statuses, file inventory
//! and output determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn ovs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ovs"))
}

fn small_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small.toml")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ovs_cli_{tag}_{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn missing_config_exits_one() {
    let out = temp_dir("missing");
    let result = ovs()
        .args(["simulate", "--config", "/nonexistent/nowhere.toml"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("config not found"), "{stderr}");
}

#[test]
fn invalid_config_exits_one() {
    let out = temp_dir("invalid");
    let bad = out.join("bad.toml");
    let text = std::fs::read_to_string(small_config())
        .unwrap()
        .replace("t_step = 5.0", "t_step = 0.0");
    std::fs::write(&bad, text).unwrap();
    let result = ovs()
        .arg("simulate")
        .arg("--config")
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("nonpositive time step"), "{stderr}");
}

#[test]
fn simulate_writes_curve_and_snapshot_dumps() {
    let out = temp_dir("simulate");
    let status = ovs()
        .arg("simulate")
        .arg("--config")
        .arg(small_config())
        .arg("--out")
        .arg(&out)
        .args(["--mode", "cu_5_4", "--dump-stress", "stress", "--dump-temps", "temps"])
        .status()
        .unwrap();
    assert!(status.success());

    let curve = std::fs::read_to_string(out.join("curve_cu_5_4.csv")).unwrap();
    let mut lines = curve.lines();
    assert!(lines.next().unwrap().starts_with("# config="));
    assert_eq!(lines.next().unwrap(), "time_s,crystal_t_k,error");
    let first = lines.next().unwrap();
    let cols: Vec<&str> = first.split(',').collect();
    assert_eq!(cols[0], "0");
    assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0, "first-row error must be zero");
    assert_eq!(curve.lines().count(), 2 + 13, "13 snapshots for 60 s / 5 s");

    // One dump per snapshot.
    let stress_files: Vec<_> = std::fs::read_dir(out.join("stress")).unwrap().collect();
    assert_eq!(stress_files.len(), 13);
    let temp_files: Vec<_> = std::fs::read_dir(out.join("temps")).unwrap().collect();
    assert_eq!(temp_files.len(), 13);

    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"subcommand\": \"simulate\""));
    assert!(manifest.contains("curve_cu_5_4.csv"));
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let out_a = temp_dir("det_a");
    let out_b = temp_dir("det_b");
    for out in [&out_a, &out_b] {
        let status = ovs()
            .arg("simulate")
            .arg("--config")
            .arg(small_config())
            .arg("--out")
            .arg(out)
            .args(["--mode", "cu_5_4", "--dump-sections", "sections.csv"])
            .status()
            .unwrap();
        assert!(status.success());
    }
    for name in ["curve_cu_5_4.csv", "sections.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between runs");
    }
}

#[test]
fn field_reports_longitudinal_angle() {
    let out = temp_dir("field");
    let status = ovs()
        .arg("field")
        .arg("--out")
        .arg(&out)
        .args(["--mode", "ito_0_10"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("field_ito_0_10.csv")).unwrap();
    let row = text.lines().last().unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[0], "ito_0_10");
    let angle: f64 = cols[1].parse().unwrap();
    assert!(angle.abs() < 0.5, "angle {angle}");
    let hwv: f64 = cols[2].parse().unwrap();
    assert!(hwv.is_infinite());
}

#[test]
fn fit_round_trips_a_trace() {
    let out = temp_dir("fit");
    // Synthesize a model trace: 0.3 cos(2 pi 50 t) + 0.01 t^2 + 0.5.
    let trace = out.join("trace.csv");
    let mut text = String::from("time_s,intensity\n");
    for k in 0..8000 {
        let t = k as f64 / 50e3;
        let v = 0.3 * (2.0 * std::f64::consts::PI * 50.0 * t).cos() + 0.01 * t * t + 0.5;
        text.push_str(&format!("{t},{v}\n"));
    }
    std::fs::write(&trace, text).unwrap();

    let status = ovs()
        .arg("fit")
        .arg(&trace)
        .args(["--freq", "50"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report = std::fs::read_to_string(out.join("fit_report.csv")).unwrap();
    let mut lines = report.lines();
    assert!(lines.next().unwrap().starts_with("# config="));
    assert_eq!(lines.next().unwrap(), "i_ac,phi_rad,a,b,c,residual_rms,mean_dc");
    let cols: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((cols[0] - 0.3).abs() < 1e-6, "i_ac {}", cols[0]);
    assert!(cols[1].abs() < 1e-6, "phi {}", cols[1]);
    assert!((cols[2] - 0.01).abs() < 1e-6, "a {}", cols[2]);
    assert!((cols[4] - 0.5).abs() < 1e-6, "c {}", cols[4]);
}

#[test]
fn export_mesh_writes_legacy_grid() {
    let out = temp_dir("mesh");
    let status = ovs()
        .arg("export-mesh")
        .arg("--config")
        .arg(small_config())
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(out.join("mesh.vtk")).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0"));
    assert!(text.contains("DATASET UNSTRUCTURED_GRID"));
    assert!(text.contains("CELL_TYPES"));
}

#[test]
fn env_override_changes_effective_config() {
    let out = temp_dir("env");
    // Shrink the window via environment override and watch the snapshot
    // count drop.
    let status = ovs()
        .arg("simulate")
        .arg("--config")
        .arg(small_config())
        .arg("--out")
        .arg(&out)
        .args(["--mode", "cu_5_4"])
        .env("OVS_SIM_T_TOTAL", "10")
        .status()
        .unwrap();
    assert!(status.success());
    let curve = std::fs::read_to_string(out.join("curve_cu_5_4.csv")).unwrap();
    assert_eq!(curve.lines().count(), 2 + 3, "snapshots at 0, 5, 10 s");
}

#[test]
fn sweep_single_mode_writes_report() {
    let out = temp_dir("sweep1");
    let status = ovs()
        .arg("sweep")
        .arg("--config")
        .arg(small_config())
        .arg("--out")
        .arg(&out)
        .args(["--modes", "cu_5_4"])
        .status()
        .unwrap();
    assert!(status.success());
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3, "comment, header, one row");
    assert!(out.join("curve_cu_5_4.csv").exists());
}
