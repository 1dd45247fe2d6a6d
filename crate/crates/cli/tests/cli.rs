use std::path::Path;
use std::process::{Command, Output};

const GAMMA_1D: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/gamma_1d.toml");

fn gamma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gamma")).args(args).env("GAMMA_WORKERS", "1").output().unwrap()
}

fn short_config(dir: &Path) -> String {
    let text = std::fs::read_to_string(GAMMA_1D).unwrap().replace("levels = 4", "levels = 2");
    let path = dir.join("short.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn sigma_prints_closed_form_json() {
    let out = gamma(&["sigma"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = v["sigma"].as_f64().unwrap();
    assert!((s - 5.75f64.sqrt() * 8.0 / 3.0).abs() < 1e-8, "{s}");
}

#[test]
fn run_passes_and_plots_redraw_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = gamma(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().any(|l| l.starts_with("PASS final_ratio")));
    let report = out_dir.join("gamma_1d.csv");
    let before = std::fs::read(out_dir.join("gamma_1d").join("ratio.svg")).unwrap();
    let redraw = dir.path().join("redraw");
    assert!(gamma(&["plot", report.to_str().unwrap(), "--out", redraw.to_str().unwrap()]).status.success());
    assert_eq!(before, std::fs::read(redraw.join("ratio.svg")).unwrap());
}

#[test]
fn unknown_key_exits_with_error_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(GAMMA_1D).unwrap().replace("[schedule]", "[schedule]\nlevles = 3");
    let path = dir.path().join("typo.toml");
    std::fs::write(&path, text).unwrap();
    let out = gamma(&["run", path.to_str().unwrap(), "--no-plots"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("levles"));
}

#[test]
fn profile_csv_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.csv");
    let out = gamma(&["profile", "--eps", "0.1", "--samples", "51", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let mut rd = csv::Reader::from_path(&path).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["t", "g", "u"]);
    let u: Vec<f64> = rd.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert_eq!(u.len(), 51);
    assert!(u.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!((u[0], u[50]), (-1.0, 1.0));
}

#[test]
fn unfold_check_reports_passing_identities() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path());
    let path = dir.path().join("unfold.csv");
    let out = gamma(&["unfold-check", &cfg, "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let mut rd = csv::Reader::from_path(&path).unwrap();
    let pass = rd.headers().unwrap().iter().position(|h| h == "pass").unwrap();
    let rows: Vec<_> = rd.records().map(|r| r.unwrap()).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| &r[pass] == "true"));
}

#[test]
fn cellprob_scan_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cell.csv");
    let out = gamma(&["cellprob", "--ladder", "0.1,0.03", "--z", "0,0.5", "--grid", "16x16", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv::Reader::from_path(&path).unwrap().records().count();
    assert_eq!(rows, 4);
}
