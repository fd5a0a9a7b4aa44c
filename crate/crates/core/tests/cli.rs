use std::process::Command;

fn intersim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_intersim"))
}

#[test]
fn eval_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = intersim()
        .args(["eval", "--seed", "3", "--horizon-s", "300", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["vehicles.csv", "blocks.csv", "energy_stats.csv", "waiting.csv", "summary.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["policy"], "fixed_cycle");
}

#[test]
fn train_then_eval_with_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let status = intersim()
        .args(["train", "--episodes", "2", "--horizon-s", "240", "--out"])
        .arg(dir.path())
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let table = dir.path().join("qtable.csv");
    let eval_dir = dir.path().join("eval");
    let out = intersim()
        .args(["eval", "--horizon-s", "240", "--qtable"])
        .arg(&table)
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = intersim()
        .arg("stats")
        .arg(eval_dir.join("vehicles.csv"))
        .output()
        .unwrap();
    assert!(stats.status.success());
    assert!(String::from_utf8_lossy(&stats.stdout).starts_with("group,"));
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "T_RL = -1.0\n").unwrap();
    let out = intersim().args(["eval", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn plan_prints_a_trajectory() {
    let out = intersim().args(["plan", "--green", "--v0", "10"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,u,v,p"));
    assert!(lines.count() > 10);
}
