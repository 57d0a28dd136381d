use std::path::Path;
use std::process::{Command, Output};

fn temple(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_temple"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn temple")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_config(dir: &Path) -> String {
    let cfg = r#"{
        "env": {"num_keys": 1, "max_episode_steps": 60},
        "policy": {"kind": "temple", "skill_dim": 3, "hidden": 16},
        "train": {"rollout_steps": 128, "num_envs": 2, "max_updates": 2, "minibatch_size": 8},
        "logging": {"eval_episodes": 5, "wall_time": false}
    }"#;
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn oracle_prints_optimal_returns() {
    let tmp = tempfile::tempdir().unwrap();
    for (k, want) in [(1, "12"), (2, "14"), (3, "16"), (4, "18")] {
        let o = temple(&["oracle", "--env", &format!("key={k}")], tmp.path());
        assert!(o.status.success());
        assert_eq!(stdout(&o).trim(), want);
    }
}

#[test]
fn oracle_respects_step_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let o = temple(&["oracle", "--env", "key=1,steps=3"], tmp.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "0");
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(temple(&["train"], tmp.path()).status.code(), Some(1));
    assert_eq!(temple(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(temple(&["train", "--config", "missing.json"], tmp.path()).status.code(), Some(1));
    assert_eq!(temple(&["oracle", "--env", "keys=nine"], tmp.path()).status.code(), Some(1));
    let cfg = tiny_config(tmp.path());
    let bad = temple(&["train", "--config", &cfg, "--set", "train.gamma=2"], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = temple(&["eval", "--checkpoint", "nope.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_eval_trace_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let t = temple(&["train", "--config", &cfg], tmp.path());
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));

    // default run directory: runs/<timestamp>_<hash>
    let runs: Vec<_> = std::fs::read_dir(tmp.path().join("runs")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run = runs[0].as_ref().unwrap().path();
    let name = run.file_name().unwrap().to_str().unwrap().to_string();
    let (_, hash) = name.rsplit_once('_').unwrap();
    assert_eq!(hash.len(), 8);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    for f in ["config.json", "metrics.csv", "final.json", "final.bin", "eval.json"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("update,env_steps,episodes,mean_return"));

    let ck = run.join("final.json");
    let ck = ck.to_str().unwrap();
    let e = temple(&["eval", "--checkpoint", ck, "--episodes", "4", "--out", "ev"], tmp.path());
    assert!(e.status.success());
    assert!(stdout(&e).contains('±'));
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["returns"].as_array().unwrap().len(), 4);

    let tr = temple(&["trace", "--checkpoint", ck, "--out", "t.csv", "--color", "0,2"], tmp.path());
    assert!(tr.status.success(), "{}", String::from_utf8_lossy(&tr.stderr));
    let text = stdout(&tr);
    assert!(text.contains("switch recomputation error: 0e0"), "{text}");
    let csv = std::fs::read_to_string(tmp.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("t,h0,h1,h2,c,row,col,action,reward,hhat0,hhat1,hhat2,gate"));
    assert!(tmp.path().join("t.colors.csv").exists());

    let same_dim = temple(&["trace", "--checkpoint", ck, "--out", "u.csv", "--color", "1,1"], tmp.path());
    assert_eq!(same_dim.status.code(), Some(1));
}

#[test]
fn sweep_writes_one_cell_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let o = temple(
        &["sweep", "--config", &cfg, "--dims", "2,3", "--lens", "1,2", "--seeds", "0", "--out", "sw"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for cell in ["d2_l1", "d2_l2", "d3_l1", "d3_l2"] {
        assert!(tmp.path().join("sw").join(cell).join("seed0/final.json").exists(), "{cell}");
    }
    let summary = std::fs::read_to_string(tmp.path().join("sw/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}
