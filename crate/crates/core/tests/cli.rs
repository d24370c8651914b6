use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn dpgm(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dpgm"));
    cmd.args(args).env_remove("DPGM_THREADS");
    if let Some(t) = threads {
        cmd.env("DPGM_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn gradcheck_writes_only_its_report() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gc");
    let o = dpgm(&["gradcheck", "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out), vec!["gradcheck.json"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    assert!(report.as_array().unwrap().len() > 20);
}

#[test]
fn config_errors_exit_with_1() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();
    let malformed = write(tmp.path(), "m.json", "{ not json");
    let wrong_type = write(tmp.path(), "w.json", r#"{"topics": "three"}"#);
    let missing = tmp.path().join("absent.json");
    for cfg in [malformed.as_str(), wrong_type.as_str(), missing.to_str().unwrap()] {
        assert_eq!(code(&dpgm(&["etm", "--config", cfg, "--out", out], None)), 1, "{cfg}");
    }
    let bad_hmc = write(tmp.path(), "h.json", r#"{"hmc": {"leapfrog": 0}}"#);
    assert_eq!(code(&dpgm(&["hmc-bench", "--config", &bad_hmc, "--out", out], None)), 1);
    assert_eq!(code(&dpgm(&["etm", "--no-such-flag"], None)), 1);
    assert_eq!(code(&dpgm(&["frobnicate"], None)), 1);
    assert_eq!(code(&dpgm(&["--help"], None)), 0);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    for t in ["0", "many"] {
        let o = dpgm(&["gradcheck", "--out", out.to_str().unwrap()], Some(t));
        assert_eq!(code(&o), 1);
        assert!(String::from_utf8_lossy(&o.stderr).contains("DPGM_THREADS"));
    }
}

#[test]
fn divergence_exits_with_2_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let cfg = write(tmp.path(), "c.json", r#"{"lr": 1e9, "epochs": 3}"#);
    let o = dpgm(&["etm", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(files(&out).is_empty());
}

#[test]
fn etm_outputs_depend_only_on_the_seed() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = dpgm(&["etm", "--epochs", "5", "--seed", seed, "--out", out.to_str().unwrap()], None);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(files(&out), vec!["topics.json", "train_log.csv"]);
        (fs::read(out.join("topics.json")).unwrap(), fs::read(out.join("train_log.csv")).unwrap())
    };
    let a = run("a", "4");
    let b = run("b", "4");
    let c = run("c", "5");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
    let log = String::from_utf8(a.1).unwrap();
    assert_eq!(log.lines().count(), 6);
}

#[test]
fn thread_count_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{"test": 12, "train": 200, "encoder_epochs": 5, "is": {"samples": 300}}"#,
    );
    let mut outputs = Vec::new();
    for t in ["1", "3"] {
        let out = tmp.path().join(format!("t{t}"));
        let o = dpgm(&["eval-loglik", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()], Some(t));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("loglik.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let report: serde_json::Value = serde_json::from_slice(&outputs[0]).unwrap();
    assert_eq!(report["points"].as_array().unwrap().len(), 12);
    assert_eq!(report["samples"], 300);
}

#[test]
fn k_particles_flag_overrides_the_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"is": {"samples": 300}, "test": 3, "train": 100}"#);
    let out = tmp.path().join("o");
    let o = dpgm(
        &["eval-loglik", "--config", &cfg, "--k-particles", "40", "--epochs", "2", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("loglik.json")).unwrap()).unwrap();
    assert_eq!(report["samples"], 40);
}

#[test]
fn short_ringsim_writes_all_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "c.json",
        r#"{"hidden": [8, 8], "latent_dim": 2, "batch": 50, "data_samples": 200, "eval_samples": 100}"#,
    );
    let out = tmp.path().join("o");
    let o = dpgm(
        &["ringsim", "--config", &cfg, "--lambda", "0.05", "--epochs", "2", "--seed", "3", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(files(&out), vec!["coverage.json", "samples.csv", "train_log.csv"]);
    let cov: serde_json::Value = serde_json::from_slice(&fs::read(out.join("coverage.json")).unwrap()).unwrap();
    assert_eq!(cov["lambda"], 0.05);
    assert_eq!(cov["seed"], 3);
    assert_eq!(cov["coverage"]["proportions"].as_array().unwrap().len(), 10);
    let samples = fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().filter(|l| !l.starts_with('#')).count(), 100);
    assert_eq!(fs::read_to_string(out.join("train_log.csv")).unwrap().lines().count(), 3);
}

#[test]
fn short_oracle_writes_bounds() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"train": 100, "test": 10}"#);
    let out = tmp.path().join("o");
    let o = dpgm(
        &["oracle", "--config", &cfg, "--epochs", "2", "--k-particles", "5", "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bounds = fs::read_to_string(out.join("bounds.csv")).unwrap();
    let methods: Vec<&str> = bounds.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, vec!["generating_model", "vae", "rem_v1", "rem_v2"]);
}
