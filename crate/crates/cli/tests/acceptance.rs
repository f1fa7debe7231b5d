//! Exit criteria. Each test prints one PASS/FAIL line to stderr, outside the
//! harness capture, then asserts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fan_cli::audit::kl_descent_audit;
use fan_cli::commands::{parse_command, Command};
use fan_cli::{run_command, RunConfig};
use fan_core::eval::{evaluate_policy, rl_stage, supervised_stage, HEADLINE_OOD};
use fan_core::seeding::derive_seed;
use fan_core::{ExperimentConfig, Method, PolicyModel, PpoReport, SftObjective, Variant};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn report(id: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id}: {verdict} ({detail})");
}

fn config(dir: &Path, overrides: &[(&str, &str)]) -> RunConfig {
    let mut o: Vec<(String, String)> = vec![("output_dir".into(), dir.display().to_string())];
    o.extend(
        overrides
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string())),
    );
    RunConfig::resolve(None, &o).expect("valid config")
}

#[test]
fn criterion_1_prop1_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    assert_eq!(
        (cfg.prop1.problems, cfg.prop1.n, cfg.prop1.mesh),
        (100, 3, 0.002)
    );
    let t = Instant::now();
    let result = run_command(Command::VerifyProp1, &cfg);
    let elapsed = t.elapsed();

    let tv_tol = 2.0 * 0.002 * 3.0;
    let mut rdr = csv::Reader::from_path(dir.path().join("prop1.csv")).unwrap();
    let rows: Vec<BTreeMap<String, String>> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let col = |r: &BTreeMap<String, String>, k: &str| r[k].parse::<f64>().unwrap();
    let tv = rows
        .iter()
        .map(|r| col(r, "tv_distance"))
        .fold(0.0, f64::max);
    let slack = rows
        .iter()
        .map(|r| col(r, "slackness_residual"))
        .fold(0.0, f64::max);
    let shift = rows
        .iter()
        .map(|r| col(r, "shift_error"))
        .fold(0.0, f64::max);
    let passed = result.is_ok()
        && rows.len() == 100
        && tv <= tv_tol
        && slack <= 1e-8
        && shift <= 1e-12
        && elapsed <= Duration::from_secs(300);
    report(
        "1",
        passed,
        &format!(
            "{} problems, max TV {tv:.2e} <= {tv_tol:.1e}, slackness {slack:.1e} <= 1e-8, shift {shift:.1e} <= 1e-12, {elapsed:.1?}",
            rows.len()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_2_gradient_integrity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &[]);
    let t = Instant::now();
    let result = run_command(Command::Gradcheck, &cfg);
    let elapsed = t.elapsed();
    let tolerances = [
        ("nll", 1e-5),
        ("kl-params", 1e-5),
        ("kl-logits", 1e-7),
        ("value-mse", 1e-5),
        ("ppo", 1e-4),
        ("fan-ppo", 1e-4),
    ];
    let mut rdr = csv::Reader::from_path(dir.path().join("gradcheck.csv")).unwrap();
    let rows: Vec<BTreeMap<String, String>> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let mut worst = Vec::new();
    let mut passed = result.is_ok() && elapsed <= Duration::from_secs(120);
    for (check, tol) in tolerances {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r["check"] == check)
            .map(|r| r["error"].parse().unwrap())
            .collect();
        let e = errs.iter().cloned().fold(0.0, f64::max);
        passed &= !errs.is_empty() && e <= tol;
        worst.push(format!("{check} {e:.1e}"));
    }
    report(
        "2",
        passed,
        &format!("worst errors: {}; {elapsed:.1?}", worst.join(", ")),
    );
    assert!(passed);
}

fn params(m: &PolicyModel) -> Vec<u64> {
    use fan_core::Parameterized;
    m.params().iter().map(|p| p.to_bits()).collect()
}

#[test]
fn criterion_3_exact_reductions() {
    let mut cfg = ExperimentConfig::default();
    cfg.sft.epochs = 200;
    cfg.ppo.iterations = 5;
    cfg.warmstart_epochs = 200;
    let seed = 11;

    let (sft, _) = supervised_stage(&cfg, Method::Sft, seed).unwrap();
    let mut zero = cfg.clone();
    zero.sft_alpha = 0.0;
    let (fan0, _) = supervised_stage(&zero, Method::FanSft, seed).unwrap();
    zero.label_smoothing = 0.0;
    let (ls0, _) = supervised_stage(&zero, Method::LabelSmoothing, seed).unwrap();
    let sft_same = params(&sft) == params(&fan0);
    let ls_same = params(&sft) == params(&ls0);

    let (start, _) = supervised_stage(&cfg, Method::Ppo, seed).unwrap();
    let ppo = rl_stage(&cfg, Method::Ppo, seed, &start).unwrap();
    zero.ppo_alpha = 0.0;
    let fan_ppo0 = rl_stage(&zero, Method::FanPpo, seed, &start).unwrap();
    let ppo_same = params(&ppo.model) == params(&fan_ppo0.model)
        && ppo
            .iterations
            .iter()
            .zip(&fan_ppo0.iterations)
            .all(|(a, b)| {
                a.policy_loss.to_bits() == b.policy_loss.to_bits()
                    && a.eval_success == b.eval_success
            });

    let passed = sft_same && ls_same && ppo_same;
    report(
        "3",
        passed,
        &format!("FAN-SFT(0)=SFT {sft_same}, LS(0)=SFT {ls_same}, FAN-PPO(0)=PPO {ppo_same}"),
    );
    assert!(passed);
}

#[test]
fn criterion_4a_kl_descent() {
    let cfg = ExperimentConfig::default();
    let grid = cfg.grid().unwrap();
    let rows: Vec<_> = (0..20)
        .map(|s| kl_descent_audit(&grid, cfg.sigma, s, 1.0, 10_000, 1e-6).unwrap())
        .collect();
    let reached = rows
        .iter()
        .filter(|r| r.steps_to_threshold.is_some())
        .count();
    let worst = rows.iter().map(|r| r.final_kl).fold(0.0, f64::max);
    let best = rows
        .iter()
        .map(|r| r.final_kl)
        .fold(f64::INFINITY, f64::min);
    let passed = reached == rows.len();
    report(
        "4a",
        passed,
        &format!("{reached}/20 starts below 1e-6 within 10000 steps; final KL in [{best:.1e}, {worst:.1e}]"),
    );
    assert!(passed);
}

/// PPO and FAN-PPO runs on the canonical env, one per seed, shared by the
/// RL criteria.
struct RlRuns {
    ppo: Vec<PpoReport>,
    fan: Vec<PpoReport>,
    elapsed: Duration,
}

fn rl_runs() -> &'static RlRuns {
    static RUNS: OnceLock<RlRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let t = Instant::now();
        let mut ppo = Vec::new();
        let mut fan = Vec::new();
        for seed in SEEDS {
            let (start, abort) = supervised_stage(&cfg, Method::Ppo, seed).unwrap();
            assert!(abort.is_none());
            ppo.push(rl_stage(&cfg, Method::Ppo, seed, &start).unwrap());
            fan.push(rl_stage(&cfg, Method::FanPpo, seed, &start).unwrap());
        }
        RlRuns {
            ppo,
            fan,
            elapsed: t.elapsed(),
        }
    })
}

fn final_mean(reports: &[PpoReport], f: impl Fn(&fan_core::rft::PpoIteration) -> f64) -> f64 {
    reports
        .iter()
        .map(|r| f(r.iterations.last().unwrap()))
        .sum::<f64>()
        / reports.len() as f64
}

#[test]
fn criterion_4b_fan_ppo_shape() {
    let runs = rl_runs();
    let w = (
        final_mean(&runs.ppo, |i| i.mean_fan_width),
        final_mean(&runs.fan, |i| i.mean_fan_width),
    );
    let h = (
        final_mean(&runs.ppo, |i| i.mean_entropy),
        final_mean(&runs.fan, |i| i.mean_entropy),
    );
    let passed = w.1 > w.0 && h.1 > h.0;
    report(
        "4b",
        passed,
        &format!(
            "FAN width {:.3} vs {:.3}, entropy {:.3} vs {:.3} nats",
            w.1, w.0, h.1, h.0
        ),
    );
    assert!(passed);
}

/// Median first iteration at 80% greedy success; runs that never get
/// there count as infinite.
fn median_iterations(reports: &[PpoReport]) -> f64 {
    let mut v: Vec<f64> = reports
        .iter()
        .map(|r| {
            r.milestone(0.8)
                .and_then(|m| m.iteration)
                .map_or(f64::INFINITY, |i| i as f64)
        })
        .collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

#[test]
fn criterion_5_sample_efficiency() {
    let runs = rl_runs();
    let cfg = ExperimentConfig::default();
    assert_eq!(
        (cfg.ppo_alpha, cfg.sigma, cfg.ppo.clip, cfg.ppo.lambda),
        (1.0, 0.3, 0.2, 0.95)
    );
    let (p, f) = (median_iterations(&runs.ppo), median_iterations(&runs.fan));
    let passed = f < p && runs.elapsed <= Duration::from_secs(1800);
    report(
        "5",
        passed,
        &format!(
            "median iterations to 80%: FAN-PPO {f} vs PPO {p}; {:.1?} for 10 runs",
            runs.elapsed
        ),
    );
    assert!(passed);
}

fn headline_ood(model: &PolicyModel, cfg: &ExperimentConfig, seed: u64) -> f64 {
    let grid = cfg.grid().unwrap();
    HEADLINE_OOD
        .iter()
        .map(|&a| {
            let env = Variant::Ood(a).env(&cfg.env).unwrap();
            evaluate_policy(
                model,
                &grid,
                &env,
                cfg.eval_episodes,
                derive_seed(seed, "eval"),
            )
            .unwrap()
            .success
        })
        .sum::<f64>()
        / HEADLINE_OOD.len() as f64
}

#[test]
fn criterion_6_ood_direction() {
    let cfg = ExperimentConfig::default();
    assert_eq!((cfg.demos, cfg.sft_alpha), (30, 0.05));
    let n = SEEDS.len() as f64;
    let mut sft = 0.0;
    let mut fan_sft = 0.0;
    for seed in SEEDS {
        sft += headline_ood(
            &supervised_stage(&cfg, Method::Sft, seed).unwrap().0,
            &cfg,
            seed,
        ) / n;
        fan_sft += headline_ood(
            &supervised_stage(&cfg, Method::FanSft, seed).unwrap().0,
            &cfg,
            seed,
        ) / n;
    }
    let runs = rl_runs();
    let mut ppo = 0.0;
    let mut fan_ppo = 0.0;
    for (k, seed) in SEEDS.into_iter().enumerate() {
        assert_eq!(runs.ppo[k].iterations.len(), runs.fan[k].iterations.len());
        ppo += headline_ood(&runs.ppo[k].model, &cfg, seed) / n;
        fan_ppo += headline_ood(&runs.fan[k].model, &cfg, seed) / n;
    }
    let sft_ok = fan_sft - sft >= 0.03;
    let ppo_ok = fan_ppo - ppo >= 0.03;
    report(
        "6",
        sft_ok && ppo_ok,
        &format!(
            "mean OOD success: FAN-SFT {:.1}% vs SFT {:.1}% ({}); FAN-PPO {:.1}% vs PPO {:.1}% ({})",
            100.0 * fan_sft,
            100.0 * sft,
            if sft_ok { "ok" } else { "short of +3pp" },
            100.0 * fan_ppo,
            100.0 * ppo,
            if ppo_ok { "ok" } else { "short of +3pp" },
        ),
    );
    assert!(sft_ok && ppo_ok);
}

#[test]
fn criterion_7_fan_existence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        &[("eval.fan_states", "100"), ("eval.fan_delta", "0.05")],
    );
    run_command(Command::Eval, &cfg).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("fan.csv")).unwrap();
    let rows: Vec<BTreeMap<String, String>> = rdr.deserialize().map(|r| r.unwrap()).collect();
    let hits = rows.iter().filter(|r| r["nontrivial"] == "true").count();
    let frac = hits as f64 / rows.len() as f64;
    let passed = rows.len() == 100 && frac >= 0.9;
    report(
        "7",
        passed,
        &format!(
            "{hits}/{} expert-visited states have a FAN of >= 2 bins",
            rows.len()
        ),
    );
    assert!(passed);
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "config.txt")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn criterion_8_determinism() {
    let small = [
        ("sft.demos", "5"),
        ("sft.epochs", "20"),
        ("sft.eval_episodes", "10"),
        ("sft.eval_every", "5"),
        ("ppo.warmstart_demos", "5"),
        ("ppo.warmstart_epochs", "20"),
        ("ppo.iterations", "3"),
        ("ppo.episodes_per_iteration", "8"),
        ("ppo.eval_episodes", "10"),
        ("eval.episodes", "20"),
        ("eval.fan_states", "20"),
        ("experiment.methods", "sft,fan-sft,ppo,fan-ppo"),
        ("experiment.seeds", "0,1"),
        ("experiment.variants", "canonical,vision-weak"),
        ("prop1.problems", "10"),
    ];
    let names = [
        "collect-demos",
        "train-sft",
        "train-ppo",
        "eval",
        "verify-prop1",
        "experiment",
        "gradcheck",
    ];
    let mut failed = Vec::new();
    let mut files = 0;
    for name in names {
        let cmd = parse_command(name).unwrap();
        let runs: Vec<_> = (0..2)
            .map(|_| {
                let dir = tempfile::tempdir().unwrap();
                run_command(cmd, &config(dir.path(), &small)).unwrap();
                let out = outputs(dir.path());
                (dir, out)
            })
            .collect();
        files += runs[0].1.len();
        if runs[0].1 != runs[1].1 || !runs[0].1.keys().any(|k| k.ends_with(".csv")) {
            failed.push(name);
        }
    }
    let passed = failed.is_empty();
    report(
        "8",
        passed,
        &format!(
            "{} subcommands rerun, {files} output files compared; mismatches: {failed:?}",
            names.len()
        ),
    );
    assert!(passed);
}

#[test]
fn shaped_sft_targets_the_adaptive_gaussian() {
    let cfg = ExperimentConfig::default();
    match cfg.sft_config(Method::FanSft, 0).objective {
        SftObjective::Shaped { alpha, target } => {
            assert_eq!(alpha, 0.05);
            assert!(matches!(
                target,
                fan_core::TargetSpec::AdaptiveGaussian { .. }
            ));
        }
        other => panic!("unexpected objective {other:?}"),
    }
}
