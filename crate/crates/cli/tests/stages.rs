//! The `insdepth` binary, stage by stage.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use insdepth_core::earth::EarthModel;
use insdepth_core::io::{read_nav, read_trajectory};

const SHORT: &str = r#"
schema_version = 1

[trajectory]
duration = 200.0

[errors.gyro]
bias = 0.01
scale_factor = 5e-6
noise_density = 1e-5

[errors.accel]
bias = 0.1
scale_factor = 1e-6
noise_density = 0.05

[train]
variants = ["superficial", "medium"]
window = 16
epochs = 2
"#;

fn insdepth(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_insdepth"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) {
    let o = insdepth(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

/// CSV text with the named column blanked out.
fn without_column(text: &str, column: &str) -> String {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let Some(i) = header.iter().position(|h| *h == column) else {
        return text.to_string();
    };
    std::iter::once(header.join(","))
        .chain(lines.map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f[i] = "";
            f.join(",")
        }))
        .collect::<Vec<_>>()
        .join("\n")
}

fn same_artifacts(a: &Path, b: &Path) {
    let mut names: Vec<_> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.ends_with(".toml"))
        .collect();
    names.sort();
    let mut other: Vec<_> = fs::read_dir(b)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| !n.ends_with(".toml"))
        .collect();
    other.sort();
    assert_eq!(names, other);
    for n in names {
        let (x, y) = (fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
        if n.ends_with(".csv") {
            let (x, y) = (String::from_utf8(x).unwrap(), String::from_utf8(y).unwrap());
            assert_eq!(without_column(&x, "train_seconds"), without_column(&y, "train_seconds"), "{n}");
        } else {
            assert!(x == y, "{n} differs");
        }
    }
}

#[test]
fn staged_run_equals_run_all() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, SHORT).unwrap();
    let cfg = cfg.to_str().unwrap();
    let (all, staged) = (dir.path().join("all"), dir.path().join("staged"));
    ok(&["run-all", "--config", cfg, "--seed", "11"], &all);
    for c in ["simulate", "derive-imu", "corrupt", "mechanize", "train", "evaluate"] {
        ok(&[c, "--config", cfg, "--seed", "11"], &staged);
    }
    same_artifacts(&all, &staged);
    for f in [
        "trajectory.csv",
        "imu_ideal.csv",
        "imu.csv",
        "nav.csv",
        "model_superficial.bin",
        "model_medium.bin",
        "corrected_superficial.csv",
        "corrected_medium.csv",
        "report.csv",
        "report_published.csv",
    ] {
        assert!(all.join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(all.join("report.csv")).unwrap();
    assert!(report.starts_with("variant,rmse_e,rmse_n,rmse_u,rmse_3d_avg,accuracy_pct,train_seconds\n"));
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn per_variant_stages_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, SHORT).unwrap();
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("o");
    for c in ["simulate", "derive-imu", "corrupt", "mechanize"] {
        ok(&[c, "--config", cfg], &out);
    }
    ok(&["train", "--config", cfg, "--variant", "superficial"], &out);
    assert!(out.join("model_superficial.bin").exists());
    assert!(!out.join("model_medium.bin").exists());
    // evaluating every configured variant needs the missing model
    let o = insdepth(&["evaluate", "--config", cfg], &out);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("evaluate") && err.contains("model_medium.bin"), "{err}");
    ok(&["evaluate", "--config", cfg, "--variant", "superficial"], &out);
}

#[test]
fn ideal_dead_reckoning_without_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, SHORT).unwrap();
    let out = dir.path().join("o");
    ok(&["simulate", "--config", cfg.to_str().unwrap()], &out);
    ok(&["mechanize", "--config", cfg.to_str().unwrap()], &out);
    let e = EarthModel::wgs84();
    let traj = read_trajectory(&out.join("trajectory.csv")).unwrap();
    let nav = read_nav(&out.join("nav.csv"), traj.origin).unwrap();
    let r = insdepth_core::io::trajectory_enu(&traj, &e).unwrap();
    let n = nav.enu_positions(&e).unwrap();
    let worst = r
        .iter()
        .zip(&n)
        .map(|(a, b)| (a.to_vector() - b.to_vector()).norm())
        .fold(0.0, f64::max);
    assert!(worst < 0.01, "{worst}");
}

#[test]
fn missing_inputs_and_bad_configs_fail_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    let o = insdepth(&["mechanize"], &out);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("mechanize") && err.contains("simulate"), "{err}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[trajectory]\nduration = -1.0\n").unwrap();
    let o = insdepth(&["simulate", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("trajectory.duration"));

    let o = insdepth(&["fly"], &out);
    assert!(!o.status.success());
}

#[test]
fn stock_scenario_fails_at_mechanize() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = insdepth(&["run-all", "--config", "default", "--seed", "7"], &out);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("mechanize: step"), "{err}");
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_insdepth"))
        .args(["simulate", "--config", "default"])
        .env(insdepth_cli::OUT_DIR_ENV, &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("trajectory.csv").exists());
}
