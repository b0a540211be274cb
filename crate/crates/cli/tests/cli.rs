use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ibflab_cli::{parse_config, ConfigError};
use ibflab_core::model::SpectralModel;

const MODEL: &str = r#"{"wavenumbers": [0.25], "weights": [1.0], "angular_order": 32, "solenoidal_fraction": 1.0}"#;

fn with_model(model: &str, sim: &str) -> String {
    format!(r#"{{"master_seed": 7, "model": {model}, "sim": {sim}}}"#)
}

fn ibflab(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ibflab"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap()
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

const LYAPUNOV: &str = r#"{"lyapunov": {"horizon": 2, "dt": 0.01, "n_replicas": 6, "renorm_every": 10}}"#;

#[test]
fn config_errors_name_the_key() {
    let bad_weights = with_model(
        r#"{"wavenumbers": [0.25, 0.5], "weights": [0.5, 0.6], "angular_order": 32, "solenoidal_fraction": 1.0}"#,
        "{}",
    );
    let odd_order = with_model(
        r#"{"wavenumbers": [0.25], "weights": [1.0], "angular_order": 7, "solenoidal_fraction": 1.0}"#,
        "{}",
    );
    let no_seed = format!(r#"{{"model": {MODEL}}}"#);
    for (text, key) in [(bad_weights, "weights"), (odd_order, "angular_order"), (no_seed, "master_seed")] {
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains(key), "{err} should mention {key}");
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = with_model(MODEL, r#"{"lyapunov": {"horizon": 2, "dt": 0.01, "n_replicas": 6, "renorm_every": 10, "extra": 1}}"#);
    assert!(matches!(parse_config(&text), Err(ConfigError::Syntax(_))));
    let top = format!(r#"{{"master_seed": 1, "model": {MODEL}, "colour": "red"}}"#);
    assert!(parse_config(&top).unwrap_err().to_string().contains("colour"));
}

#[test]
fn invalid_sim_values_name_the_block() {
    let text = with_model(MODEL, r#"{"lyapunov": {"horizon": 2, "dt": 0.0, "n_replicas": 6, "renorm_every": 10}}"#);
    let err = parse_config(&text).unwrap_err();
    assert!(err.to_string().contains("lyapunov"), "{err}");
}

#[test]
fn bad_config_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let text = with_model(
        r#"{"wavenumbers": [-1.0], "weights": [1.0], "angular_order": 32, "solenoidal_fraction": 1.0}"#,
        LYAPUNOV,
    );
    let o = ibflab(&["lyapunov", "--out", out.to_str().unwrap()], &text, tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_block_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = ibflab(&["diffusivity", "--out", out.to_str().unwrap()], &with_model(MODEL, LYAPUNOV), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diffusivity"));
}

#[test]
fn missing_output_dir_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ibflab(&["lyapunov"], &with_model(MODEL, LYAPUNOV), tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("output_dir"));
}

#[test]
fn lyapunov_writes_manifest_and_replica_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = ibflab(&["lyapunov", "--out", out.to_str().unwrap()], &with_model(MODEL, LYAPUNOV), tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("lyapunov.csv")), "replica,mu1,mu2,T,dt");
    let rows = fs::read_to_string(out.join("lyapunov.csv")).unwrap().lines().count();
    assert_eq!(rows, 7);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "lyapunov");
    assert_eq!(manifest["config"]["master_seed"], 7);
    let fresh = SpectralModel::single(0.25, 32, 1.0).build().unwrap().moduli();
    for (key, want) in [
        ("beta_l", fresh.beta_l),
        ("beta_n", fresh.beta_n),
        ("kappa", fresh.kappa),
        ("mu1", fresh.mu1),
        ("mu2", fresh.mu2),
    ] {
        let got = manifest["moduli"][key].as_f64().unwrap();
        assert!((got - want).abs() <= 1e-12, "{key}: {got} vs {want}");
    }
    assert!(manifest["wall_time"]["lyapunov"].as_f64().unwrap() >= 0.0);
}

#[test]
fn support_report_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let sim = r#"{"support": {"horizons": [2], "grid_points": 3, "directions": 8, "levels": 2, "net_cap": 2000,
                  "eps_tol": 1e-4, "poly_verts": 64, "dt": 0.05, "sample_points": 4, "n_replicas": 2}}"#;
    let text = format!(r#"{{"master_seed": 2, "k_hat": 0.12, "model": {MODEL}, "sim": {sim}}}"#);
    let o = ibflab(&["support", "--out", out.to_str().unwrap()], &text, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(header(&out.join("support_report.csv")), "T,replica,d_upper,d_lower,d_H,K_hat");
    assert!(out.join("support_summary.csv").exists());
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let text = with_model(MODEL, LYAPUNOV);
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(threads);
        let o = ibflab(&["lyapunov", "--threads", threads, "--out", out.to_str().unwrap()], &text, tmp.path());
        assert!(o.status.success());
        runs.push(csvs(&out));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = with_model(MODEL, LYAPUNOV);
    let run = |name: &str, extra: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["lyapunov", "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(ibflab(&args, &text, tmp.path()).status.success());
        csvs(&out)
    };
    let plain = run("plain", &[]);
    let same = run("same", &["--seed", "7"]);
    let other = run("other", &["--seed", "8"]);
    assert_eq!(plain, same);
    assert_ne!(plain["lyapunov.csv"], other["lyapunov.csv"]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("other/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 8);
}

#[test]
fn strict_mode_fails_on_censored_hitting_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = r#"{"curve": {"dt": 0.2, "h_max": 1.0, "vertex_cap": 50000},
                  "hitting": {"radius": 4, "t_max_factor": 8, "k_rough": 1.0},
                  "stable_norm": {"distances": [10], "n_replicas": 12}}"#;
    let text = format!(r#"{{"master_seed": 3, "model": {MODEL}, "sim": {sim}}}"#);

    let lax = tmp.path().join("lax");
    let o = ibflab(&["stable-norm", "--out", lax.to_str().unwrap()], &text, tmp.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("censored fraction"));
    let summary = fs::read_to_string(lax.join("stable_norm.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",true"), "{summary}");

    let strict = tmp.path().join("strict");
    let o = ibflab(&["stable-norm", "--strict", "--out", strict.to_str().unwrap()], &text, tmp.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(strict.join("stable_norm_runs.csv").exists());
}

#[test]
fn run_subcommand_uses_experiment_key() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let text = format!(
        r#"{{"master_seed": 7, "experiment": "lyapunov", "output_dir": "{}", "model": {MODEL}, "sim": {LYAPUNOV}}}"#,
        out.display()
    );
    let o = ibflab(&["run"], &text, tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("lyapunov.csv").exists());
    let no_exp = with_model(MODEL, LYAPUNOV);
    assert_eq!(ibflab(&["run", "--out", out.to_str().unwrap()], &no_exp, tmp.path()).status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    for text in [include_str!("../../../configs/default.json"), include_str!("../../../configs/smoke.json")] {
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.experiment, Some(ibflab_cli::Experiment::Suite));
        cfg.check_blocks(ibflab_cli::Experiment::Suite).unwrap();
    }
}
