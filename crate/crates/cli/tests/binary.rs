use std::process::Command;

fn fan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fan"))
}

#[test]
fn verify_prop1_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = fan()
        .args(["verify-prop1", "--prop1.problems", "5"])
        .arg(format!("--output_dir={}", dir.path().display()))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    for f in ["config.txt", "manifest.txt", "prop1.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let manifest = std::fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("command verify-prop1") && manifest.contains("file prop1.csv"));
}

#[test]
fn bad_config_exits_one_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = fan()
        .args(["eval", "--target.sigma", "-1"])
        .arg(format!("--output_dir={}", dir.path().display()))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("target.sigma"));
}

#[test]
fn missing_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = fan()
        .args([
            "eval",
            "--eval.checkpoint",
            "/nonexistent/policy.ckpt",
            "--eval.fan_states",
            "0",
        ])
        .arg(format!("--output_dir={}", dir.path().display()))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn sft_then_ppo_then_eval_chain_through_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |args: &[String]| {
        let out = fan().args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let s = |x: &str| x.to_string();
    run(&[
        s("collect-demos"),
        s("--sft.demos"),
        s("4"),
        format!("--output_dir={}", d.join("demos").display()),
    ]);
    run(&[
        s("train-sft"),
        s("--sft.epochs"),
        s("5"),
        format!("--sft.demos_path={}", d.join("demos/demos.txt").display()),
        format!("--output_dir={}", d.join("sft").display()),
    ]);
    run(&[
        s("train-ppo"),
        s("--ppo.iterations"),
        s("2"),
        s("--ppo.episodes_per_iteration"),
        s("4"),
        s("--ppo.eval_episodes"),
        s("5"),
        format!("--ppo.init={}", d.join("sft/policy.ckpt").display()),
        format!("--output_dir={}", d.join("ppo").display()),
    ]);
    run(&[
        s("eval"),
        s("--eval.episodes"),
        s("5"),
        s("--eval.variants"),
        s("canonical,vision-strong"),
        s("--eval.fan_states"),
        s("0"),
        format!("--eval.checkpoint={}", d.join("ppo/policy.ckpt").display()),
        format!("--output_dir={}", d.join("eval").display()),
    ]);
    let eval = std::fs::read_to_string(d.join("eval/eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 3);
    assert!(eval.contains("checkpoint") && eval.contains("vision-strong"));
    assert!(!d.join("eval/fan.csv").exists());
}
