//! End-to-end checks of the binary: flags, exit codes, artifacts.

use std::path::Path;
use std::process::{Command, Output};

use coopo::data::{generate, BehaviorDescriptor, Tier};
use coopo::envs::make_benchmark;

fn coopo_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coopo"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().last().expect("summary line");
    serde_json::from_str(line).expect("summary is JSON")
}

fn write_dataset(dir: &Path, n: usize, seed: u64) -> std::path::PathBuf {
    let mut env = make_benchmark("chain5").unwrap();
    let behavior = BehaviorDescriptor::for_env(&env, Tier::Medium);
    let dataset = generate(&mut env, &behavior, n, seed).unwrap();
    let path = dir.join("chain5_medium.json");
    dataset.save(&path).unwrap();
    path
}

fn small_config(dir: &Path, dataset: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "env": "chain5",
        "dataset": dataset,
        "seed": 5,
        "cycles": 1,
        "eval_episodes": 2,
        "offline": {"epochs": 2, "batch": 128, "lr": 0.01},
        "online": {"episodes": 1, "episodes_per_collect": 1, "batch": 64, "lr": 0.01},
        "model": {"hidden_layers": 0}
    });
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn gen_data_writes_the_requested_count() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("d.json");
    let output = run(coopo_bin()
        .args(["gen-data", "--env", "chain5", "--tier", "medium", "--n", "500", "--seed", "3"])
        .arg("--out")
        .arg(&out_path));
    assert!(output.status.success(), "{output:?}");
    let summary = stdout_json(&output);
    assert_eq!(summary["n"], 500);

    let text = std::fs::read_to_string(&out_path).unwrap();
    let meta: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(meta["n"], 500);
    assert_eq!(meta["env"], "chain5");
    assert_eq!(text.lines().count(), 501);
}

#[test]
fn train_echoes_the_resolved_config_and_streams_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 400, 1);
    let cfg = small_config(dir.path(), &dataset);
    let out_dir = dir.path().join("run");

    let output = run(coopo_bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(&out_dir));
    assert!(output.status.success(), "{output:?}");
    let summary = stdout_json(&output);
    assert_eq!(summary["run_id"], "chain5_s5");
    assert_eq!(summary["algo"], "coopo");

    let resolved = std::fs::read_to_string(out_dir.join("resolved_config.json")).unwrap();
    assert!(resolved.contains("\"seed\": 5"));
    let metrics = std::fs::read_to_string(out_dir.join("chain5_s5.csv")).unwrap();
    assert!(metrics.starts_with("run_id,cycle,phase,step,mean_return"));
    assert!(metrics.lines().count() > 3);
}

#[test]
fn identical_runs_reproduce_metrics_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 400, 1);
    let cfg = small_config(dir.path(), &dataset);

    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let output =
            run(coopo_bin().arg("train").arg("--config").arg(&cfg).arg("--out").arg(&out_dir));
        assert!(output.status.success(), "{output:?}");
        files.push(std::fs::read(out_dir.join("chain5_s5.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn the_env_var_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 400, 1);
    let cfg = small_config(dir.path(), &dataset);
    let out_dir = dir.path().join("run");

    let output = run(coopo_bin()
        .env("COOPO_SEED", "99")
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir));
    assert!(output.status.success(), "{output:?}");
    let resolved = std::fs::read_to_string(out_dir.join("resolved_config.json")).unwrap();
    assert!(resolved.contains("\"seed\": 99"));
    assert!(out_dir.join("chain5_s99.csv").is_file());
}

#[test]
fn the_seed_flag_beats_the_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 400, 1);
    let cfg = small_config(dir.path(), &dataset);
    let out_dir = dir.path().join("run");

    let output = run(coopo_bin()
        .env("COOPO_SEED", "99")
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .args(["--seed", "7"])
        .arg("--out")
        .arg(&out_dir));
    assert!(output.status.success(), "{output:?}");
    assert!(out_dir.join("chain5_s7.csv").is_file());
}

#[test]
fn malformed_configs_name_the_key_and_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"cycles":"five"}"#).unwrap();

    let output = run(coopo_bin()
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x")));
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("cycles"), "{stderr}");
}

#[test]
fn a_bad_seed_env_var_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 400, 1);
    let cfg = small_config(dir.path(), &dataset);

    let output = run(coopo_bin()
        .env("COOPO_SEED", "twelve")
        .arg("train")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x")));
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("COOPO_SEED"));
}

#[test]
fn verify_runs_a_suite_and_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(coopo_bin()
        .args(["verify", "--suite", "identity"])
        .arg("--out")
        .arg(dir.path()));
    assert!(output.status.success(), "{output:?}");
    let report = stdout_json(&output);
    assert_eq!(report["suite"], "identity");
    assert_eq!(report["pass"], true);
    assert!(report["max_residual"].as_f64().unwrap() < 1e-9);

    let saved = std::fs::read_to_string(dir.path().join("verify_report.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&saved).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 1);
}

#[test]
fn unknown_suites_exit_one() {
    let output = run(coopo_bin().args(["verify", "--suite", "nonsense"]));
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("nonsense"));
}

#[test]
fn compare_writes_one_metrics_file_per_algo_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = write_dataset(dir.path(), 400, 1);
    let cfg = small_config(dir.path(), &dataset);
    let out_dir = dir.path().join("cmp");

    let output = run(coopo_bin()
        .arg("compare")
        .args(["--algo", "coopo", "--algo", "ppo", "--seeds", "2", "--threshold", "1.0"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir));
    assert!(output.status.success(), "{output:?}");
    for name in ["coopo_s5.csv", "coopo_s6.csv", "ppo_s5.csv", "ppo_s6.csv"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let summary = stdout_json(&output);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);
    assert_eq!(summary["runs"][0]["algo"], "coopo");
    assert!(summary["runs"][0]["trajectories_to_threshold"].is_array());

    let figs = dir.path().join("figs");
    let export = run(coopo_bin()
        .arg("export-plots")
        .arg("--metrics")
        .arg(&out_dir)
        .arg("--out")
        .arg(&figs));
    assert!(export.status.success(), "{export:?}");
    let curves = std::fs::read_to_string(figs.join("return_vs_trajectories.csv")).unwrap();
    assert!(curves.starts_with("curve,x,y,y_lo,y_hi"));
    assert!(curves.lines().any(|l| l.starts_with("coopo,")));
    assert!(curves.lines().any(|l| l.starts_with("ppo,")));
}

#[test]
fn export_plots_needs_at_least_one_metrics_file() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let output = run(coopo_bin()
        .arg("export-plots")
        .arg("--metrics")
        .arg(&empty)
        .arg("--out")
        .arg(dir.path().join("figs")));
    assert_eq!(output.status.code(), Some(1));
}
