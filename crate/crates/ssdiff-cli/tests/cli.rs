use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssdiff(args: &[&str], out: &Path, config: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ssdiff"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().expect("binary runs")
}

fn json(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "dim": 1,
        "amp": 0.3,
        "n_list": [256, 512, 1024],
        "k_rule": { "rule": "fixed", "k": 24 },
        "seeds": 2,
        "ot": { "grid_per_axis": 128 },
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn help_lists_every_subcommand() {
    let o = Command::new(env!("CARGO_BIN_EXE_ssdiff")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["sample", "graph", "stationary", "bound", "w2", "sweep", "lab", "fit", "verify"] {
        assert!(text.contains(sub), "missing {sub}");
    }
    for flag in ["--config", "--seed", "--out", "--workers"] {
        assert!(text.contains(flag), "missing {flag}");
    }
}

#[test]
fn single_cloud_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path();
    let s = json(&ssdiff(&["sample", "--n", "300", "--seed", "9"], out, Some(&cfg)));
    assert_eq!(s["n"], 300);
    let points = out.join("points.csv");
    assert_eq!(fs::read_to_string(&points).unwrap().lines().count(), 301);

    let g = json(&ssdiff(&["graph", "--points", points.to_str().unwrap(), "--k", "20"], out, Some(&cfg)));
    assert_eq!(g["k"], 20);
    let st = json(&ssdiff(&["stationary", "--graph", out.join("kernel.txt").to_str().unwrap()], out, None));
    assert!(st["residual"].as_f64().unwrap() <= 1e-12);
    let probs: f64 = fs::read_to_string(out.join("stationary.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((probs - 1.0).abs() < 1e-12);

    let b = json(&ssdiff(&["bound", "--points", points.to_str().unwrap(), "--k", "20"], out, Some(&cfg)));
    assert!(b["assembly"]["total"].as_f64().unwrap() > 0.0);
    assert_eq!(b["schema"], 1);

    let w = json(&ssdiff(&["w2", "--points", points.to_str().unwrap(), "--k", "20"], out, Some(&cfg)));
    let w2 = w["w2_torus"].as_f64().unwrap();
    assert!(w2 > 0.0 && w2 < 0.2 && w["exact"] == true);
}

#[test]
fn sweep_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let s = json(&ssdiff(&["sweep", "--workers", "1"], &out, Some(&cfg)));
    assert_eq!(s["rows"], 6);
    assert_eq!(s["failed"], 0);
    for f in ["results.csv", "manifest.json", "summary.json", "w2_vs_n.svg", "items_vs_n.svg"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let results = out.join("results.csv");
    let f = json(&ssdiff(&["fit", "--results", results.to_str().unwrap(), "--x", "n", "--y", "i1"], &out, None));
    assert!(f["fit"]["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn lab_writes_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let l = json(&ssdiff(&["lab"], dir.path(), None));
    assert_eq!(l["interpolation_pass"], true);
    assert!(l["gradient_max_ratio"].as_f64().unwrap() <= 1.05);
    for f in ["lab_report.json", "lab_gradient.csv", "lab_trace.csv"] {
        assert!(dir.path().join(f).exists());
    }
}

#[test]
fn errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n_list": [100], "k_rule": {"rule": "fixed", "k": 100}}"#).unwrap();
    let o = ssdiff(&["sample", "--n", "10"], dir.path(), Some(&bad));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    let o = ssdiff(&["graph", "--points", "/nonexistent.csv", "--k", "3"], dir.path(), None);
    assert!(!o.status.success());
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = ssdiff::experiments::SweepConfig::load(&root.join("default.json")).unwrap();
    assert_eq!(default.hash(), ssdiff::experiments::SweepConfig::default().hash());
    let uniform = ssdiff::experiments::SweepConfig::load(&root.join("uniform_1d.json")).unwrap();
    assert_eq!(uniform, ssdiff::experiments::uniform_sanity_config());
}
