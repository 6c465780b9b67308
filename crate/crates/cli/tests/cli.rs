use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bubblepair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bubblepair"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn out_dir(root: &Path, name: &str) -> String {
    root.join(name).to_str().unwrap().to_string()
}

#[test]
fn validation_errors_exit_2() {
    let out = bubblepair(&["--eps", "-0.5", "analyze", "--state", "1,0,1,0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("physical.eps"));

    let out = bubblepair(&["--d-ratio", "1.5", "analyze", "--state", "1,0,1,0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = bubblepair(&["analyze", "--state", "1,0,1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = bubblepair(&["chart", "--x", "d_ratio:6:35", "--y", "pac:1.2e6:1.8e6:3", "--seed", "17.5,1.52e6,1,0,1,0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn breakdown_exits_3_and_records_the_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = out_dir(dir.path(), "collapse");
    let out = bubblepair(&["--out", &out_path, "poincare", "--state", "0.001,0,1,0", "--skip", "1", "--collect", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("collapse/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["jobs"][0]["ok"], false);
    assert!(!dir.path().join("collapse/poincare.csv").exists());
}

#[test]
fn manifest_rerun_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = out_dir(dir.path(), "first");
    let out = bubblepair(&[
        "--pac", "1.2e6", "--d-ratio", "13", "--transient", "20", "--measure", "40", "--max-measure", "40",
        "--out", &first, "analyze", "--state", "1.09,-0.47,0.77,0.49",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("first/poincare.csv")).unwrap();
    assert!(csv.starts_with("k,r1,u1,r2,u2\n"));
    assert!(dir.path().join("first/record.json").exists());

    let second = out_dir(dir.path(), "second");
    let manifest = dir.path().join("first/manifest.json");
    let out = bubblepair(&["--config", manifest.to_str().unwrap(), "--out", &second, "run"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv, fs::read_to_string(dir.path().join("second/poincare.csv")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{"physical": {"p_ac": 1.0e6, "eps": 1.01}, "analysis": {"transient_periods": 5, "measure_periods": 8, "max_measure_periods": 8}}"#,
    )
    .unwrap();
    let out_path = out_dir(dir.path(), "o");
    let out = bubblepair(&[
        "--config", cfg.to_str().unwrap(), "--eps", "1.02", "--out", &out_path, "poincare", "--state", "1,0,1,0",
        "--skip", "2", "--collect", "3",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["physical"]["eps"], 1.02);
    assert_eq!(manifest["config"]["physical"]["p_ac"], 1.0e6);
    let rows = fs::read_to_string(dir.path().join("o/poincare.csv")).unwrap().lines().count();
    assert_eq!(rows, 4);
}

#[test]
fn single_cell_chart_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let chart = out_dir(dir.path(), "chart");
    let out = bubblepair(&[
        "--transient", "5", "--measure", "8", "--max-measure", "8", "--eps", "1.024", "--out", &chart, "chart",
        "--x", "d_ratio:17.5:17.5:1", "--y", "pac:1.52e6:1.52e6:1", "--seed", "17.5,1.52e6,1.09,-0.47,0.77,0.49",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("chart/chart.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "ix,iy,x_value,y_value,eff_l1,eff_l2,class,converged");

    let seeds = dir.path().join("seeds.json");
    fs::write(&seeds, r#"[{"label": "sync", "state": [1.0, 0.0, 1.0, 0.0]}]"#).unwrap();
    let sweep = out_dir(dir.path(), "sweep");
    let out = bubblepair(&[
        "--transient", "5", "--measure", "8", "--max-measure", "8", "--out", &sweep, "sweep-eps", "--from", "0.999",
        "--to", "1.001", "--step", "1e-3", "--seeds", seeds.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("sweep/sweep.csv")).unwrap();
    // start point in each arm plus one step each way
    assert_eq!(text.lines().count(), 1 + 4);
}
