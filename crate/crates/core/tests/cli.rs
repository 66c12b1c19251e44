use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lasalt::config::RunConfig;

fn lasalt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lasalt")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn small_config(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::desk_default();
    cfg.grid.n = 16;
    cfg.solver.t_end = 0.02;
    cfg.solver.save_every = 5;
    cfg.ensemble.members = 16;
    cfg.ensemble.batches = 4;
    cfg.ensemble.observe_every = 10;
    cfg.output.directory = dir.join("runs");
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_runs_and_refuses_to_clobber() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let first = lasalt(&["expectation", "--config", s(&cfg)]);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let traj = tmp.path().join("runs/expectation");
    assert!(traj.join("meta.json").is_file());

    let again = lasalt(&["expectation", "--config", s(&cfg)]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(code(&lasalt(&["expectation", "--config", s(&cfg), "--force"])), 0);

    for verb in ["spde", "moments", "ensemble", "characteristics"] {
        let o = lasalt(&[verb, "--config", s(&cfg)]);
        assert_eq!(code(&o), 0, "{verb}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(tmp.path().join("runs").join(verb).is_dir());
    }
}

#[test]
fn stale_or_tampered_trajectories_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = small_config(tmp.path());
    assert_eq!(code(&lasalt(&["expectation", "--config", s(&cfg_path)])), 0);

    // A different physics configuration no longer matches the stored hash.
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    cfg.physics.g = 2.5;
    let other = tmp.path().join("other.json");
    std::fs::write(&other, cfg.to_json()).unwrap();
    let o = lasalt(&["moments", "--config", s(&other)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));

    // Flip a byte inside one stored snapshot.
    let traj = tmp.path().join("runs/expectation");
    let victim = std::fs::read_dir(&traj)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "lsf1"))
        .max()
        .unwrap();
    let mut bytes = std::fs::read(&victim).unwrap();
    let k = bytes.len() - 3;
    bytes[k] ^= 0x40;
    std::fs::write(&victim, bytes).unwrap();
    let o = lasalt(&["spde", "--config", s(&cfg_path)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_configurations_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = lasalt(&["expectation", "--config", s(&tmp.path().join("nope.json"))]);
    assert_eq!(code(&missing), 2);

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"grid": {"n": 16}, "solver": {"dt": 0.01, "t_end": 0.015}}"#).unwrap();
    assert_eq!(code(&lasalt(&["expectation", "--config", s(&bad)])), 2);

    std::fs::write(&bad, r#"{"grid": {"n": 16}, "unknown": 1}"#).unwrap();
    assert_eq!(code(&lasalt(&["expectation", "--config", s(&bad)])), 2);

    // No trajectory yet for a downstream verb.
    let cfg = small_config(tmp.path());
    assert_eq!(code(&lasalt(&["moments", "--config", s(&cfg)])), 2);
}

#[test]
fn degenerate_noise_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::desk_default();
    cfg.grid.n = 16;
    cfg.solver.t_end = 0.02;
    cfg.noise = serde_json::from_str(r#"[{"modes": [{"component": 1, "kx": 0, "ky": 1, "amp_sin": 0.1}]}]"#).unwrap();
    cfg.output.directory = tmp.path().join("runs");
    let path = tmp.path().join("config.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let o = lasalt(&["expectation", "--config", s(&path)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
