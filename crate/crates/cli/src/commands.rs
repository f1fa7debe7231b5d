//! One function per subcommand. Each writes into the run's output
//! directory: the resolved config, its metrics CSVs, a checkpoint where a
//! model is produced, and a manifest listing all of them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fan_core::env::q_oracle_one_step;
use fan_core::eval::{
    evaluate_expert, evaluate_policy, expert_visited_states, fan_from_q, rl_stage, run_experiment,
    summary_table, supervised_stage,
};
use fan_core::rft::{write_milestones, write_ppo_metrics};
use fan_core::seeding::derive_seed;
use fan_core::sft::{
    collect_expert_demos, load_demonstrations, snap_demonstrations, train_sft,
    write_demonstrations, write_sft_metrics,
};
use fan_core::tabular::{verify_battery, write_reports};
use fan_core::{Checkpoint, PolicyModel};

use crate::audit::gradient_audits;
use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CollectDemos,
    TrainSft,
    TrainPpo,
    Eval,
    VerifyProp1,
    Experiment,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::CollectDemos => "collect-demos",
            Command::TrainSft => "train-sft",
            Command::TrainPpo => "train-ppo",
            Command::Eval => "eval",
            Command::VerifyProp1 => "verify-prop1",
            Command::Experiment => "experiment",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Files written and a human-readable summary.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_manifest(
    dir: &Path,
    cmd: Command,
    cfg: &RunConfig,
    files: &[PathBuf],
) -> Result<(), CliError> {
    let mut text = format!(
        "artifact fan-cli {}\ncommand {}\nseed {}\n",
        env!("CARGO_PKG_VERSION"),
        cmd.name(),
        cfg.seed
    );
    for f in files {
        let name = f.strip_prefix(dir).unwrap_or(f);
        text.push_str(&format!("file {}\n", name.display()));
    }
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// Runs `cmd`. The resolved config and the manifest are written even when
/// the command itself fails part way.
pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, cfg.to_text())?;

    let mut out = Outcome::default();
    let result = match cmd {
        Command::CollectDemos => collect_demos(cfg, &dir, &mut out),
        Command::TrainSft => train_sft_cmd(cfg, &dir, &mut out),
        Command::TrainPpo => train_ppo_cmd(cfg, &dir, &mut out),
        Command::Eval => eval_cmd(cfg, &dir, &mut out),
        Command::VerifyProp1 => verify_prop1_cmd(cfg, &dir, &mut out),
        Command::Experiment => experiment_cmd(cfg, &dir, &mut out),
        Command::Gradcheck => gradcheck_cmd(cfg, &dir, &mut out),
    };
    let mut files = vec![config_path];
    files.extend(out.files.iter().cloned());
    write_manifest(&dir, cmd, cfg, &files)?;
    result.map(|()| out)
}

#[derive(Serialize)]
struct DemoRow {
    demo: usize,
    instruction: usize,
    steps: usize,
}

fn collect_demos(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let x = &cfg.experiment;
    let raw = collect_expert_demos(&x.env, x.demos, derive_seed(cfg.seed, "demos"))?;
    let path = dir.join("demos.txt");
    write_demonstrations(&path, &raw)?;
    let rows: Vec<DemoRow> = raw
        .iter()
        .enumerate()
        .map(|(i, d)| DemoRow {
            demo: i,
            instruction: d.instruction,
            steps: d.steps.len(),
        })
        .collect();
    let stats = dir.join("demo_stats.csv");
    write_csv(&stats, &rows)?;
    out.files.extend([path, stats]);
    out.summary = format!("collected {} expert demonstrations", raw.len());
    Ok(())
}

fn train_sft_cmd(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let x = &cfg.experiment;
    let grid = x.grid()?;
    let demos = match &cfg.demos_path {
        Some(p) => load_demonstrations(p, &grid)?,
        None => snap_demonstrations(
            collect_expert_demos(&x.env, x.demos, derive_seed(cfg.seed, "demos"))?,
            &grid,
        )?,
    };
    let model = x.model.policy(&x.env, &grid, cfg.seed)?;
    let mut sc = x.sft_config(cfg.sft_method, cfg.seed);
    sc.eval_episodes = x.sft.eval_episodes;
    let report = train_sft(&model, &grid, &demos, &sc, Some(&x.env))?;

    let metrics = dir.join("sft_metrics.csv");
    write_sft_metrics(&metrics, &report.epochs)?;
    let ckpt = dir.join("policy.ckpt");
    Checkpoint::Policy(report.model.clone()).write(&ckpt)?;
    out.files.extend([metrics, ckpt]);
    if let Some(msg) = report.aborted {
        return Err(CliError::Aborted(msg));
    }
    let last = report.epochs.last();
    out.summary = format!(
        "{} on {} demos: final nll {:.4}, entropy {:.4}",
        cfg.sft_method.name(),
        demos.len(),
        last.map_or(f64::NAN, |e| e.nll),
        last.map_or(f64::NAN, |e| e.entropy),
    );
    Ok(())
}

fn load_policy(path: &Path) -> Result<PolicyModel, CliError> {
    match Checkpoint::read(path)? {
        Checkpoint::Policy(p) => Ok(p),
        Checkpoint::Value(_) => Err(CliError::Config(format!(
            "{} holds a value network, not a policy",
            path.display()
        ))),
    }
}

fn train_ppo_cmd(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let x = &cfg.experiment;
    let start = match &cfg.ppo_init {
        Some(p) => load_policy(p)?,
        None => match supervised_stage(x, cfg.ppo_method, cfg.seed)? {
            (_, Some(msg)) => return Err(CliError::Aborted(format!("warm start: {msg}"))),
            (m, None) => m,
        },
    };
    let report = rl_stage(x, cfg.ppo_method, cfg.seed, &start)?;

    let metrics = dir.join("ppo_metrics.csv");
    write_ppo_metrics(&metrics, &report.iterations)?;
    let ms = dir.join("milestones.csv");
    write_milestones(&ms, &report.milestones)?;
    let ckpt = dir.join("policy.ckpt");
    Checkpoint::Policy(report.model.clone()).write(&ckpt)?;
    let vckpt = dir.join("value.ckpt");
    Checkpoint::Value(report.value.clone()).write(&vckpt)?;
    out.files.extend([metrics, ms, ckpt, vckpt]);
    if let Some(msg) = report.aborted {
        return Err(CliError::Aborted(msg));
    }
    let reached = report
        .milestone(0.8)
        .and_then(|m| m.iteration)
        .map_or("never".to_string(), |i| format!("iteration {i}"));
    out.summary = format!(
        "{} for {} iterations; 80% greedy success reached: {reached}",
        cfg.ppo_method.name(),
        report.iterations.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    variant: String,
    policy: String,
    episodes: usize,
    success: f64,
    stderr: f64,
    mean_entropy: Option<f64>,
    mean_fan_proxy_width: Option<f64>,
    mean_variance: Option<f64>,
}

#[derive(Serialize)]
struct FanRow {
    state: usize,
    width_dx: usize,
    width_dy: usize,
    width_gripper: usize,
    degenerate: bool,
    nontrivial: bool,
}

fn eval_cmd(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let x = &cfg.experiment;
    let grid = x.grid()?;
    let policy = cfg
        .eval_checkpoint
        .as_deref()
        .map(load_policy)
        .transpose()?;
    let seed = derive_seed(cfg.seed, "eval");
    let mut rows = Vec::new();
    for v in &cfg.eval_variants {
        let env = v.env(&x.env)?;
        let row = match &policy {
            Some(p) => {
                let r = evaluate_policy(p, &grid, &env, x.eval_episodes, seed)?;
                EvalRow {
                    variant: v.name().into(),
                    policy: "checkpoint".into(),
                    episodes: x.eval_episodes,
                    success: r.success,
                    stderr: r.stderr,
                    mean_entropy: Some(r.mean_entropy),
                    mean_fan_proxy_width: Some(r.mean_width),
                    mean_variance: Some(r.mean_variance),
                }
            }
            None => {
                let r = evaluate_expert(&env, x.eval_episodes, seed)?;
                EvalRow {
                    variant: v.name().into(),
                    policy: "expert".into(),
                    episodes: x.eval_episodes,
                    success: r.success,
                    stderr: r.stderr,
                    mean_entropy: None,
                    mean_fan_proxy_width: None,
                    mean_variance: None,
                }
            }
        };
        rows.push(row);
    }
    let path = dir.join("eval.csv");
    write_csv(&path, &rows)?;
    out.files.push(path);
    let mut summary: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{} {}: {:.1}% ± {:.1}",
                r.policy,
                r.variant,
                100.0 * r.success,
                100.0 * r.stderr
            )
        })
        .collect();

    if cfg.fan_states > 0 {
        let (frac, fan_rows) = fan_existence(cfg)?;
        let path = dir.join("fan.csv");
        write_csv(&path, &fan_rows)?;
        out.files.push(path);
        summary.push(format!(
            "non-trivial FAN in {:.1}% of {} expert-visited states",
            100.0 * frac,
            fan_rows.len()
        ));
    }
    out.summary = summary.join("\n");
    Ok(())
}

/// Fraction of expert-visited states whose one-step Q table has a level
/// set of at least two contiguous bins in some move dimension.
fn fan_existence(cfg: &RunConfig) -> Result<(f64, Vec<FanRow>), CliError> {
    let x = &cfg.experiment;
    let grid = x.grid()?;
    let states = expert_visited_states(&x.env, cfg.fan_states, derive_seed(cfg.seed, "fan"))?;
    let mut rows = Vec::with_capacity(states.len());
    for (i, s) in states.iter().enumerate() {
        let q = q_oracle_one_step(s, &grid, x.ppo.gamma)?;
        let f = fan_from_q(&q, cfg.fan_delta)?;
        let w = f.widths();
        rows.push(FanRow {
            state: i,
            width_dx: w[0],
            width_dy: w[1],
            width_gripper: w[2],
            degenerate: f.degenerate,
            nontrivial: w[0] >= 2 || w[1] >= 2,
        });
    }
    let frac = rows.iter().filter(|r| r.nontrivial).count() as f64 / rows.len().max(1) as f64;
    Ok((frac, rows))
}

fn verify_prop1_cmd(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let p = &cfg.prop1;
    let reports = verify_battery(p.problems, p.n, p.mesh, p.first_seed)?;
    let path = dir.join("prop1.csv");
    write_reports(&path, &reports)?;
    out.files.push(path);
    let failed: Vec<u64> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.seed)
        .collect();
    let worst_tv = reports.iter().map(|r| r.tv_distance).fold(0.0, f64::max);
    let worst_slack = reports
        .iter()
        .map(|r| r.slackness_residual)
        .fold(0.0, f64::max);
    let worst_shift = reports.iter().map(|r| r.shift_error).fold(0.0, f64::max);
    out.summary = format!(
        "{} problems: {} passed; max TV {worst_tv:.2e}, max slackness residual {worst_slack:.2e}, \
         max shift error {worst_shift:.2e}",
        reports.len(),
        reports.len() - failed.len()
    );
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(format!(
            "problems with seeds {failed:?} failed"
        )));
    }
    Ok(())
}

fn experiment_cmd(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let rows = run_experiment(&cfg.experiment, dir)?;
    out.files
        .extend([dir.join("experiment.csv"), dir.join("summary.txt")]);
    out.summary = summary_table(&cfg.experiment, &rows);
    let aborted = rows.iter().filter(|r| r.status != "ok").count();
    if aborted > 0 {
        return Err(CliError::Aborted(format!(
            "{aborted} rows come from aborted or failed runs"
        )));
    }
    Ok(())
}

fn gradcheck_cmd(cfg: &RunConfig, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for s in 0..3 {
        rows.extend(gradient_audits(derive_seed(cfg.seed, "gradcheck") + s)?);
    }
    let path = dir.join("gradcheck.csv");
    write_csv(&path, &rows)?;
    out.files.push(path);
    out.summary = rows
        .iter()
        .map(|r| {
            format!(
                "{:<10} seed {:>20}: error {:.2e} (tolerance {:.0e}) {}",
                r.check,
                r.seed,
                r.error,
                r.tolerance,
                if r.passed { "ok" } else { "FAIL" }
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    if rows.iter().any(|r| !r.passed) {
        return Err(CliError::CheckFailed(
            "finite-difference audit out of tolerance".into(),
        ));
    }
    Ok(())
}

/// Names accepted on the command line.
pub fn parse_command(s: &str) -> Option<Command> {
    [
        Command::CollectDemos,
        Command::TrainSft,
        Command::TrainPpo,
        Command::Eval,
        Command::VerifyProp1,
        Command::Experiment,
        Command::Gradcheck,
    ]
    .into_iter()
    .find(|c| c.name() == s)
}
