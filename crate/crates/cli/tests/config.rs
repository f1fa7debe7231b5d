use std::fs;

use fan_cli::{parse_overrides, CliError, RunConfig};
use fan_core::Method;

fn args(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

#[test]
fn empty_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.conf");
    fs::write(&p, "# nothing here\n\n").unwrap();
    let cfg = RunConfig::resolve(Some(&p), &[]).unwrap();
    assert_eq!(cfg, RunConfig::default());
    let x = &cfg.experiment;
    assert_eq!((x.sft_alpha, x.ppo_alpha, x.sigma), (0.05, 1.0, 0.3));
    assert_eq!((x.ppo.clip, x.ppo.lambda), (0.2, 0.95));
}

#[test]
fn override_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.conf");
    fs::write(&p, "ppo.alpha = 0.5\nseed = 3\n").unwrap();
    let o = parse_overrides(&args(&["--ppo.alpha", "0.1"])).unwrap();
    let cfg = RunConfig::resolve(Some(&p), &o).unwrap();
    assert_eq!(cfg.experiment.ppo_alpha, 0.1);
    assert_eq!(cfg.seed, 3);
    assert_eq!(
        cfg.experiment.ppo_config(Method::FanPpo, 0).alpha,
        Some(0.1)
    );
}

#[test]
fn both_override_spellings() {
    let o = parse_overrides(&args(&["--seed=7", "--target.sigma", "0.2"])).unwrap();
    assert_eq!(
        o,
        vec![
            ("seed".into(), "7".into()),
            ("target.sigma".into(), "0.2".into())
        ]
    );
    assert!(parse_overrides(&args(&["--seed"])).is_err());
    assert!(parse_overrides(&args(&["seed", "1"])).is_err());
}

#[test]
fn negative_sigma_names_the_field() {
    let o = vec![("target.sigma".to_string(), "-0.3".to_string())];
    let err = RunConfig::resolve(None, &o).unwrap_err();
    assert!(matches!(err, CliError::Config(_)));
    assert!(err.to_string().contains("target.sigma"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn unknown_key_is_rejected_with_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("typo.conf");
    fs::write(&p, "seed = 1\nppo.alpah = 1.0\n").unwrap();
    let err = RunConfig::resolve(Some(&p), &[]).unwrap_err().to_string();
    assert!(err.contains("ppo.alpah") && err.contains(":2:"), "{err}");
}

#[test]
fn resolved_text_round_trips() {
    let o = parse_overrides(&args(&[
        "--seed",
        "42",
        "--env.object_anchors",
        "0.2, 0.5; 0.8, 0.5",
        "--target.sigma_min",
        "0.07",
        "--experiment.variants",
        "all",
        "--sft.method",
        "fan-sft",
        "--eval.checkpoint",
        "runs/x/policy.ckpt",
    ]))
    .unwrap();
    let cfg = RunConfig::resolve(None, &o).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("echo.conf");
    fs::write(&p, cfg.to_text()).unwrap();
    let again = RunConfig::resolve(Some(&p), &[]).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.to_text(), cfg.to_text());
}

#[test]
fn every_key_is_settable_from_its_echo() {
    let cfg = RunConfig::default();
    for key in RunConfig::KEYS {
        let mut c = RunConfig::default();
        let v = cfg.get(key).unwrap();
        c.set(key, &v)
            .unwrap_or_else(|e| panic!("{key} = {v}: {e}"));
        assert_eq!(c.get(key).unwrap(), v, "{key}");
    }
}

#[test]
fn rl_method_is_refused_for_sft() {
    let o = vec![("sft.method".to_string(), "fan-ppo".to_string())];
    assert!(RunConfig::resolve(None, &o).is_err());
}
