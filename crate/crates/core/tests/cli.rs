use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sector-ks")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SMALL_RUN: &str = r#"
[domain]
theta = 1.5707963267948966
radius = 1.0

[mesh]
nr = 12
nphi = 8
grading = 1.05

[initial]
kind = "gaussian"
mass = 2.0
center_r = 0.5
center_phi = 0.7
width = 0.3

[scheme]
t_end = 0.5
dt_max = 0.05

[output]
snapshot_interval = 0.25
"#;

#[test]
fn mesh_info_reports_quarter_disc_area() {
    let out = bin(&["mesh-info", "--theta", "1.5707963267948966", "--radius", "1", "--nr", "8", "--nphi", "4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let area: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("area "))
        .expect("area line")
        .trim()
        .parse()
        .unwrap();
    assert!((area - std::f64::consts::FRAC_PI_4).abs() < 1e-14);
    assert!(text.contains("cells 32"));
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["config.toml", "diagnostics.csv", "final.txt", "summary.txt", "run.log"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("outcome GlobalUpToHorizon"), "{summary}");
    let csv = fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert!(csv.lines().count() > 2);
    let snaps = fs::read_dir(out_dir.join("snapshots")).unwrap().count();
    assert!(snaps >= 2);
    // The written config parses back to the same run.
    let echoed = fs::read_to_string(out_dir.join("config.toml")).unwrap();
    let a = sector_ks::config::parse_config(SMALL_RUN).unwrap();
    let b = sector_ks::config::parse_config(&echoed).unwrap();
    assert_eq!(a.scheme, b.scheme);
    assert_eq!(a.mass, b.mass);
}

#[test]
fn bundled_preset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sub");
    let out = bin(&["run", "--config", "quarter_subcritical", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(out_dir.join("summary.txt")).unwrap();
    assert!(summary.contains("GlobalUpToHorizon"));
}

#[test]
fn malformed_config_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[domain]\ntheta = 1.0\n[mesh]\nnr = 0\nbogus = 1\n").unwrap();
    let out_dir = dir.path().join("never");
    let out = bin(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("domain.radius") && err.contains("bogus"), "{err}");
    assert!(!Path::new(&out_dir).exists());
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = bin(&["run", "--config", "no_such_preset_or_file"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tm_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "tm-sweep", "--theta", "1.5707963267948966", "--radius", "1", "--nr", "24", "--nphi", "4", "--grading",
        "1.15", "--members", "6", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("tm_sweep.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 7);
}

#[test]
fn sweep_with_tiny_budget_reports_partial_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL_RUN).unwrap();
    let out_dir = dir.path().join("sweep");
    let out = bin(&["sweep", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--budget", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("sweep.csv").is_file());
}
