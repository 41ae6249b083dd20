use std::path::Path;
use std::process::{Command, Output};

fn exceed(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exceed")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = exceed(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    exceed(dir, args).status.code().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const UNIFORM: &str = "seed = 4\n[model]\nmodel = \"unif1d\"\n[prior]\nlaw = \"pareto\"\nalpha = 2.0\nbeta = 0.5\n";

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("u.toml"), UNIFORM).unwrap();
    dir
}

#[test]
fn simulate_writes_sample_and_sidecar() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["simulate", "--config", "u.toml", "--theta", "2", "--n", "25", "--out", "x.csv"]);
    let text = std::fs::read_to_string(d.join("x.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1"));
    let values: Vec<f64> = lines.map(|l| l.parse().unwrap()).collect();
    assert_eq!(values.len(), 25);
    assert!(values.iter().all(|v| *v > 0.0 && *v < 2.0));
    let meta = json(&d.join("x.csv.meta.json"));
    assert_eq!(meta["command"], "simulate");
    assert_eq!(meta["seed"], 4);
    assert_eq!(meta["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_overrides_the_configuration() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["simulate", "--config", "u.toml", "--theta", "1", "--n", "10", "--out", "a.csv"]);
    ok(d, &["simulate", "--config", "u.toml", "--seed", "4", "--theta", "1", "--n", "10", "--out", "b.csv"]);
    ok(d, &["simulate", "--config", "u.toml", "--seed", "5", "--theta", "1", "--n", "10", "--out", "c.csv"]);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn estimate_bayes_matches_the_closed_form() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(d.join("x.csv"), "x1\n0.2\n0.9\n0.4\n").unwrap();
    ok(d, &["estimate", "--config", "u.toml", "--method", "bayes1d", "--data", "x.csv", "--out", "e.json"]);
    let report = json(&d.join("e.json"));
    let expected = 2f64.powf(1.0 / 5.0) * 0.9;
    assert!((report["theta"][0].as_f64().unwrap() - expected).abs() < 1e-12);
    let meta = json(&d.join("e.json.meta.json"));
    assert_eq!(meta["inputs"][0]["path"], "x.csv");
}

#[test]
fn preprocess_reports_thresholds() {
    let dir = workspace();
    let d = dir.path();
    let rows: String = (1..=100).map(|k| format!("{k},{}\n", 101 - k)).collect();
    std::fs::write(d.join("raw.csv"), format!("a,b\n{rows}")).unwrap();
    ok(d, &["preprocess", "--in", "raw.csv", "--percentile", "0.9", "--out", "std.csv"]);
    let t = json(&d.join("std.thresholds.json"));
    assert!((t["thresholds"][0].as_f64().unwrap() - 90.1).abs() < 1e-9);
    assert_eq!(t["n_input"], 100);
    assert_eq!(t["n_exceedances"], 20);
    assert!(d.join("std.csv.meta.json").exists());
}

#[test]
fn diagnose_writes_every_plot_table() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["simulate", "--config", "u.toml", "--theta", "1", "--n", "30", "--out", "x.csv"]);
    ok(d, &["diagnose", "--config", "u.toml", "--data", "x.csv", "--theta", "1", "--out-prefix", "diag", "--svg"]);
    for f in ["diag_qq_x1.csv", "diag_potential.csv", "diag_stats.json", "diag_qq_x1.svg", "diag_potential.svg"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let stats = json(&d.join("diag_stats.json"));
    assert!(stats["e_stat"].as_f64().unwrap() >= 0.0);
    let header = std::fs::read_to_string(d.join("diag_qq_x1.csv")).unwrap();
    assert!(header.starts_with("ref_index,coord,obs,sim,weight,band_lo,band_hi\n"));
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(d.join("x.csv"), "x1\n0.5\n").unwrap();
    std::fs::write(d.join("typo.toml"), "seed = 1\nsede = 2\n").unwrap();
    std::fs::write(d.join("noseed.toml"), "[model]\nmodel = \"unif1d\"\n").unwrap();
    assert_eq!(code(d, &["simulate", "--config", "noseed.toml", "--theta", "1", "--n", "5", "--out", "o.csv"]), 2);
    assert_eq!(code(d, &["simulate", "--config", "typo.toml", "--theta", "1", "--n", "5", "--out", "o.csv"]), 2);
    assert_eq!(code(d, &["simulate", "--config", "u.toml", "--theta", "1,2", "--n", "5", "--out", "o.csv"]), 2);
    assert_eq!(code(d, &["simulate", "--config", "u.toml", "--theta", "-1", "--n", "5", "--out", "o.csv"]), 2);
    assert_eq!(code(d, &["estimate", "--config", "u.toml", "--method", "eot", "--lambda", "0.1", "--data", "x.csv", "--out", "o.json"]), 2);
    assert_eq!(code(d, &["estimate", "--config", "u.toml", "--method", "nbe", "--data", "x.csv", "--out", "o.json"]), 2);
    assert_eq!(code(d, &["preprocess", "--in", "x.csv", "--percentile", "1.5", "--out", "o.csv"]), 2);
    assert_eq!(code(d, &["preprocess", "--in", "x.csv", "--fixed-threshold", "3", "--out", "o.csv"]), 2);
    assert!(!d.join("o.csv").exists() && !d.join("o.json").exists());
}

#[test]
fn missing_files_exit_with_four() {
    let dir = workspace();
    let d = dir.path();
    assert_eq!(code(d, &["estimate", "--config", "u.toml", "--method", "bayes1d", "--data", "none.csv", "--out", "o.json"]), 4);
    assert_eq!(code(d, &["simulate", "--config", "absent.toml", "--theta", "1", "--n", "5", "--out", "o.csv"]), 4);
    assert_eq!(code(d, &["simulate", "--config", "u.toml", "--theta", "1", "--n", "5", "--out", "no/such/dir/o.csv"]), 4);
}

#[test]
fn network_from_another_model_is_rejected() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(
        d.join("m.toml"),
        "seed = 2\n[model]\nmodel = \"mgpd\"\n[model.generator]\nfamily = \"GumbelT\"\ndimension = 2\nparams = [1.0]\n\
         [prior]\nlaw = \"uniform\"\nlower = [0.5, 0.5, -0.2, -0.2]\nupper = [2.0, 2.0, 0.2, 0.2]\n\
         [train]\nsample_size = 10\ntraining_sets = 20\nepochs = 1\nhidden = 4\n",
    )
    .unwrap();
    ok(d, &["train", "--config", "m.toml", "--out-net", "net.json"]);
    assert!(d.join("net.loss.csv").exists());
    std::fs::write(d.join("x.csv"), "x1\n0.5\n0.7\n").unwrap();
    assert_eq!(code(d, &["estimate", "--config", "u.toml", "--method", "nbe", "--net", "net.json", "--data", "x.csv", "--out", "o.json"]), 2);
}
