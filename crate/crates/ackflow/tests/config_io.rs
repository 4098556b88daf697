//! Scenario file round-trips, validation diagnostics, trace emission layout,
//! and command-line behavior of the `ackflow` binary.

use std::fs;
use std::process::Command;

use ackflow::runner::{resolve_models, run_scenario, ModelChoice};
use ackflow::scenario::{builtin, builtin_names, load_scenario, Scenario, ScenarioError};

#[test]
fn toml_roundtrip_is_identity_for_all_builtins() {
    let dir = tempfile::tempdir().unwrap();
    for name in builtin_names() {
        let sc = builtin(name).unwrap();
        let path = dir.path().join(format!("{name}.toml"));
        fs::write(&path, sc.to_toml()).unwrap();
        let loaded = load_scenario(path.to_str().unwrap()).unwrap();
        assert_eq!(loaded, sc, "{name} did not survive a dump/load cycle");
    }
}

#[test]
fn parse_errors_name_the_file_and_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    fs::write(&path, "name = \"x\"\n[topology\n").unwrap();
    let err = load_scenario(path.to_str().unwrap()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, ScenarioError::Parse { .. }), "{msg}");
    assert!(msg.contains("broken.toml"), "{msg}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = builtin("scenario7").unwrap().to_toml();
    text.push_str("\n[extra]\nsurprise = 1\n");
    let path = dir.path().join("extra.toml");
    fs::write(&path, text).unwrap();
    let err = load_scenario(path.to_str().unwrap()).unwrap_err();
    assert!(err.to_string().contains("unknown field"), "{err}");
}

#[test]
fn validation_errors_name_the_field() {
    let base = builtin("scenario7").unwrap();

    let mut sc = base.clone();
    sc.run.dt = 0.0;
    expect_invalid(&sc, "run.dt");

    let mut sc = base.clone();
    sc.run.deterministic = false;
    expect_invalid(&sc, "run.deterministic");

    let mut sc = base.clone();
    sc.traffic.windows[0].initial = -1.0;
    expect_invalid(&sc, "traffic.windows.initial");

    let mut sc = base.clone();
    sc.traffic.windows[0].user = "ghost".into();
    expect_invalid(&sc, "traffic.windows.user");

    let mut sc = base.clone();
    sc.topology.cross.push(ackflow::scenario::CrossDef {
        buffer: "b1".into(),
        share: 1.5,
    });
    expect_invalid(&sc, "topology.cross.share");

    // Route problems surface through the graph builder with the bad name.
    let mut sc = base;
    sc.topology.users[0].path = vec!["nowhere".into()];
    let err = sc.validate().unwrap_err();
    assert!(err.to_string().contains("nowhere"), "{err}");
}

fn expect_invalid(sc: &Scenario, field: &str) {
    match sc.validate().unwrap_err() {
        ScenarioError::Invalid { field: f, .. } => assert_eq!(f, field),
        other => panic!("expected invalid {field}, got {other}"),
    }
}

#[test]
fn run_scenario_writes_model_trees_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = builtin("scenario7").unwrap();
    sc.run.dt = 1e-3;
    sc.run.t_end = 1.0;
    let outcome = run_scenario(&sc, &[ModelChoice::Flow, ModelChoice::Oracle], dir.path()).unwrap();

    assert_eq!(outcome.model_dirs.len(), 2);
    for (_, model_dir) in &outcome.model_dirs {
        for file in ["trace.csv", "b1.csv", "u1.csv"] {
            let p = model_dir.join(file);
            assert!(p.is_file(), "missing {}", p.display());
        }
        let header = fs::read_to_string(model_dir.join("b1.csv")).unwrap();
        assert!(header.starts_with("time_s,b1.q,b1.tau"), "{header}");
    }
    let summary = fs::read_to_string(outcome.summary_path.unwrap()).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "model_a,model_b,column,max_abs_deviation"
    );
    assert!(summary.contains("flow,oracle,b1.q,"), "{summary}");
}

#[test]
fn squarewave_all_means_the_three_applicable_models() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = builtin("squarewave").unwrap();
    sc.run.t_end = 1.0;
    let models = resolve_models(&sc, "all").unwrap();
    assert_eq!(
        models,
        vec![
            ModelChoice::Flow,
            ModelChoice::PseudoQueue,
            ModelChoice::Oracle
        ]
    );
    let outcome = run_scenario(&sc, &models, dir.path()).unwrap();
    let dirs: Vec<String> = outcome
        .model_dirs
        .iter()
        .map(|(m, _)| m.dir_name().to_string())
        .collect();
    assert_eq!(dirs, ["flow", "pseudo_queue", "oracle"]);
}

#[test]
fn identical_configs_replay_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = builtin("scenario7").unwrap();
    sc.run.dt = 1e-3;
    sc.run.t_end = 1.0;
    run_scenario(&sc, &[ModelChoice::Flow], &dir.path().join("a")).unwrap();
    run_scenario(&sc, &[ModelChoice::Flow], &dir.path().join("b")).unwrap();
    let a = fs::read(dir.path().join("a/flow/trace.csv")).unwrap();
    let b = fs::read(dir.path().join("b/flow/trace.csv")).unwrap();
    assert!(!a.is_empty() && a == b);
}

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ackflow"));
    // Keep the ambient environment from steering output locations.
    cmd.env_remove("ACKFLOW_OUT_DIR");
    cmd
}

#[test]
fn cli_runs_a_builtin_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args([
            "scenario7",
            "--model",
            "flow",
            "--dt",
            "1e-3",
            "--t-end",
            "1",
        ])
        .args(["--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(dir.path().join("flow/b1.csv").is_file());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("flow"), "{stdout}");
}

#[test]
fn cli_loads_scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = builtin("scenario7").unwrap();
    sc.run.dt = 1e-3;
    sc.run.t_end = 1.0;
    let path = dir.path().join("mine.toml");
    fs::write(&path, sc.to_toml()).unwrap();
    let out = cli()
        .args([path.to_str().unwrap(), "--model", "flow"])
        .args(["--out", dir.path().join("traces").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(dir.path().join("traces/flow/b1.csv").is_file());
}

#[test]
fn cli_env_var_sets_output_dir_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let via_env = dir.path().join("via_env");
    let out = cli()
        .args([
            "scenario7",
            "--model",
            "flow",
            "--dt",
            "1e-3",
            "--t-end",
            "1",
        ])
        .env("ACKFLOW_OUT_DIR", &via_env)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(via_env.join("flow/b1.csv").is_file());

    let via_flag = dir.path().join("via_flag");
    let out = cli()
        .args([
            "scenario7",
            "--model",
            "flow",
            "--dt",
            "1e-3",
            "--t-end",
            "1",
        ])
        .env("ACKFLOW_OUT_DIR", dir.path().join("ignored"))
        .args(["--out", via_flag.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(via_flag.join("flow/b1.csv").is_file());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn cli_validation_problems_exit_1() {
    let dir = tempfile::tempdir().unwrap();

    let out = cli()
        .args(["scenario7", "--model", "bogus"])
        .args(["--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    assert!(String::from_utf8(out.stderr).unwrap().contains("bogus"));

    let out = cli()
        .args([dir.path().join("missing.toml").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");

    // Ratio/joint/static need window users; the square-wave study has none.
    let out = cli()
        .args(["squarewave", "--model", "ratio"])
        .args(["--out", dir.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{out:?}");
}

#[test]
fn cli_runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("occupied");
    fs::write(&blocker, "not a directory").unwrap();
    let out = cli()
        .args([
            "scenario7",
            "--model",
            "flow",
            "--dt",
            "1e-3",
            "--t-end",
            "1",
        ])
        .args(["--out", blocker.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}
