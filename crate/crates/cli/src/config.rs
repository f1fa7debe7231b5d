//! `key = value` run configuration with dotted section keys.
//!
//! ```text
//! # comment
//! seed = 0
//! output_dir = runs/demo
//! ppo.alpha = 1.0
//! env.start_offset = 0, 0.2
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fan_core::eval::{ExperimentConfig, Method, Variant};
use fan_core::RewardMode;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Settings {
    pub problems: usize,
    pub n: usize,
    pub mesh: f64,
    pub first_seed: u64,
}

impl Default for Prop1Settings {
    fn default() -> Self {
        Self {
            problems: 100,
            n: 3,
            mesh: 0.002,
            first_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Environment, model, trainer and sweep settings.
    pub experiment: ExperimentConfig,
    pub sft_method: Method,
    pub ppo_method: Method,
    /// Demonstration file for `train-sft`; collected in-process when unset.
    pub demos_path: Option<PathBuf>,
    /// Starting policy for `train-ppo`; a plain-SFT warm start when unset.
    pub ppo_init: Option<PathBuf>,
    pub eval_checkpoint: Option<PathBuf>,
    pub eval_variants: Vec<Variant>,
    pub fan_states: usize,
    pub fan_delta: f64,
    pub prop1: Prop1Settings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            experiment: ExperimentConfig::default(),
            sft_method: Method::Sft,
            ppo_method: Method::FanPpo,
            demos_path: None,
            ppo_init: None,
            eval_checkpoint: None,
            eval_variants: vec![Variant::Canonical],
            fan_states: 100,
            fan_delta: 0.05,
            prop1: Prop1Settings::default(),
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("`{key}`: cannot parse `{value}` as {what}"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| bad(key, v, std::any::type_name::<T>()))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn pair(key: &str, v: &str) -> Result<[f64; 2], CliError> {
    let xs: Vec<f64> = list(key, v)?;
    <[f64; 2]>::try_from(xs).map_err(|_| bad(key, v, "a pair `x, y`"))
}

fn pairs(key: &str, v: &str) -> Result<Vec<[f64; 2]>, CliError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(';').map(|p| pair(key, p)).collect()
}

fn flag(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, v, "`true` or `false`")),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn method(key: &str, v: &str, rl: bool) -> Result<Method, CliError> {
    let m = Method::parse(v).map_err(|e| CliError::Config(format!("`{key}`: {e}")))?;
    if m.is_rl() != rl {
        let kind = if rl { "an RL" } else { "a supervised" };
        return Err(CliError::Config(format!(
            "`{key}` must name {kind} method, got `{v}`"
        )));
    }
    Ok(m)
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

fn fmt_pair(p: [f64; 2]) -> String {
    format!("{:?}, {:?}", p[0], p[1])
}

impl RunConfig {
    /// Every accepted key, in echo order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "output_dir",
        "grid.bins",
        "policy.hidden",
        "policy.embed_dim",
        "env.horizon",
        "env.objects",
        "env.object_slots",
        "env.instructions",
        "env.success_radius",
        "env.grasp_radius",
        "env.action_limit",
        "env.move_scale",
        "env.obs_noise",
        "env.start_offset",
        "env.reposition_step",
        "env.reposition_distance",
        "env.instruction_remap",
        "env.reward",
        "env.object_anchors",
        "env.target_anchor",
        "env.spawn_jitter",
        "env.gripper_anchor",
        "env.gripper_jitter",
        "sft.method",
        "sft.alpha",
        "sft.label_smoothing",
        "sft.learning_rate",
        "sft.batch_size",
        "sft.epochs",
        "sft.demos",
        "sft.demos_path",
        "sft.eval_episodes",
        "sft.eval_every",
        "ppo.method",
        "ppo.alpha",
        "ppo.shape_gripper",
        "ppo.clip",
        "ppo.gamma",
        "ppo.lambda",
        "ppo.episodes_per_iteration",
        "ppo.epochs",
        "ppo.minibatch",
        "ppo.iterations",
        "ppo.policy_lr",
        "ppo.value_lr",
        "ppo.value_epochs",
        "ppo.entropy_coef",
        "ppo.normalize_advantages",
        "ppo.eval_every",
        "ppo.eval_episodes",
        "ppo.milestones",
        "ppo.warmstart_demos",
        "ppo.warmstart_epochs",
        "ppo.init",
        "target.sigma",
        "target.sigma_min",
        "target.kappa",
        "eval.episodes",
        "eval.variants",
        "eval.checkpoint",
        "eval.fan_states",
        "eval.fan_delta",
        "experiment.methods",
        "experiment.seeds",
        "experiment.variants",
        "prop1.problems",
        "prop1.n",
        "prop1.mesh",
        "prop1.first_seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let x = &mut self.experiment;
        match key {
            "seed" => self.seed = num(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            "grid.bins" => x.model.bins = num(key, v)?,
            "policy.hidden" => x.model.hidden = list(key, v)?,
            "policy.embed_dim" => x.model.embed_dim = num(key, v)?,
            "env.horizon" => x.env.horizon = num(key, v)?,
            "env.objects" => x.env.objects = num(key, v)?,
            "env.object_slots" => x.env.object_slots = num(key, v)?,
            "env.instructions" => x.env.instructions = num(key, v)?,
            "env.success_radius" => x.env.success_radius = num(key, v)?,
            "env.grasp_radius" => x.env.grasp_radius = num(key, v)?,
            "env.action_limit" => x.env.action_limit = num(key, v)?,
            "env.move_scale" => x.env.move_scale = num(key, v)?,
            "env.obs_noise" => x.env.obs_noise = num(key, v)?,
            "env.start_offset" => x.env.start_offset = pair(key, v)?,
            "env.reposition_step" => {
                x.env.reposition_step = if v == "none" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "env.reposition_distance" => x.env.reposition_distance = num(key, v)?,
            "env.instruction_remap" => x.env.instruction_remap = list(key, v)?,
            "env.reward" => {
                x.env.reward = match v {
                    "sparse" => RewardMode::Sparse,
                    "shaped" => RewardMode::Shaped,
                    _ => return Err(bad(key, v, "`sparse` or `shaped`")),
                }
            }
            "env.object_anchors" => x.env.object_anchors = pairs(key, v)?,
            "env.target_anchor" => x.env.target_anchor = pair(key, v)?,
            "env.spawn_jitter" => x.env.spawn_jitter = pair(key, v)?,
            "env.gripper_anchor" => x.env.gripper_anchor = pair(key, v)?,
            "env.gripper_jitter" => x.env.gripper_jitter = pair(key, v)?,
            "sft.method" => self.sft_method = method(key, v, false)?,
            "sft.alpha" => x.sft_alpha = num(key, v)?,
            "sft.label_smoothing" => x.label_smoothing = num(key, v)?,
            "sft.learning_rate" => x.sft.learning_rate = num(key, v)?,
            "sft.batch_size" => x.sft.batch_size = num(key, v)?,
            "sft.epochs" => x.sft.epochs = num(key, v)?,
            "sft.demos" => x.demos = num(key, v)?,
            "sft.demos_path" => self.demos_path = path(v),
            "sft.eval_episodes" => x.sft.eval_episodes = num(key, v)?,
            "sft.eval_every" => x.sft.eval_every = num(key, v)?,
            "ppo.method" => self.ppo_method = method(key, v, true)?,
            "ppo.alpha" => x.ppo_alpha = num(key, v)?,
            "ppo.shape_gripper" => x.ppo.shape_gripper = flag(key, v)?,
            "ppo.clip" => x.ppo.clip = num(key, v)?,
            "ppo.gamma" => x.ppo.gamma = num(key, v)?,
            "ppo.lambda" => x.ppo.lambda = num(key, v)?,
            "ppo.episodes_per_iteration" => x.ppo.episodes_per_iteration = num(key, v)?,
            "ppo.epochs" => x.ppo.epochs = num(key, v)?,
            "ppo.minibatch" => x.ppo.minibatch = num(key, v)?,
            "ppo.iterations" => x.ppo.iterations = num(key, v)?,
            "ppo.policy_lr" => x.ppo.policy_lr = num(key, v)?,
            "ppo.value_lr" => x.ppo.value_lr = num(key, v)?,
            "ppo.value_epochs" => x.ppo.value_epochs = num(key, v)?,
            "ppo.entropy_coef" => x.entropy_coef = num(key, v)?,
            "ppo.normalize_advantages" => x.ppo.normalize_advantages = flag(key, v)?,
            "ppo.eval_every" => x.ppo.eval_every = num(key, v)?,
            "ppo.eval_episodes" => x.ppo.eval_episodes = num(key, v)?,
            "ppo.milestones" => x.ppo.milestones = list(key, v)?,
            "ppo.warmstart_demos" => x.warmstart_demos = num(key, v)?,
            "ppo.warmstart_epochs" => x.warmstart_epochs = num(key, v)?,
            "ppo.init" => self.ppo_init = path(v),
            "target.sigma" => x.sigma = num(key, v)?,
            "target.sigma_min" => {
                x.sigma_min = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "target.kappa" => x.kappa = num(key, v)?,
            "eval.episodes" => x.eval_episodes = num(key, v)?,
            "eval.variants" => {
                self.eval_variants = parse_variants(key, v)?;
            }
            "eval.checkpoint" => self.eval_checkpoint = path(v),
            "eval.fan_states" => self.fan_states = num(key, v)?,
            "eval.fan_delta" => self.fan_delta = num(key, v)?,
            "experiment.methods" => {
                x.methods = v
                    .split(',')
                    .map(|m| {
                        Method::parse(m.trim())
                            .map_err(|e| CliError::Config(format!("`{key}`: {e}")))
                    })
                    .collect::<Result<_, _>>()?
            }
            "experiment.seeds" => x.seeds = list(key, v)?,
            "experiment.variants" => x.variants = parse_variants(key, v)?,
            "prop1.problems" => self.prop1.problems = num(key, v)?,
            "prop1.n" => self.prop1.n = num(key, v)?,
            "prop1.mesh" => self.prop1.mesh = num(key, v)?,
            "prop1.first_seed" => self.prop1.first_seed = num(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let x = &self.experiment;
        let opt_path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        };
        let variants =
            |vs: &[Variant]| join(&vs.iter().map(|v| v.name()).collect::<Vec<_>>(), ", ");
        Some(match key {
            "seed" => self.seed.to_string(),
            "output_dir" => self.output_dir.display().to_string(),
            "grid.bins" => x.model.bins.to_string(),
            "policy.hidden" => join(&x.model.hidden, ", "),
            "policy.embed_dim" => x.model.embed_dim.to_string(),
            "env.horizon" => x.env.horizon.to_string(),
            "env.objects" => x.env.objects.to_string(),
            "env.object_slots" => x.env.object_slots.to_string(),
            "env.instructions" => x.env.instructions.to_string(),
            "env.success_radius" => format!("{:?}", x.env.success_radius),
            "env.grasp_radius" => format!("{:?}", x.env.grasp_radius),
            "env.action_limit" => format!("{:?}", x.env.action_limit),
            "env.move_scale" => format!("{:?}", x.env.move_scale),
            "env.obs_noise" => format!("{:?}", x.env.obs_noise),
            "env.start_offset" => fmt_pair(x.env.start_offset),
            "env.reposition_step" => x
                .env
                .reposition_step
                .map_or("none".into(), |s| s.to_string()),
            "env.reposition_distance" => format!("{:?}", x.env.reposition_distance),
            "env.instruction_remap" => join(&x.env.instruction_remap, ", "),
            "env.reward" => match x.env.reward {
                RewardMode::Sparse => "sparse".into(),
                RewardMode::Shaped => "shaped".into(),
            },
            "env.object_anchors" => x
                .env
                .object_anchors
                .iter()
                .map(|p| fmt_pair(*p))
                .collect::<Vec<_>>()
                .join("; "),
            "env.target_anchor" => fmt_pair(x.env.target_anchor),
            "env.spawn_jitter" => fmt_pair(x.env.spawn_jitter),
            "env.gripper_anchor" => fmt_pair(x.env.gripper_anchor),
            "env.gripper_jitter" => fmt_pair(x.env.gripper_jitter),
            "sft.method" => self.sft_method.name().into(),
            "sft.alpha" => format!("{:?}", x.sft_alpha),
            "sft.label_smoothing" => format!("{:?}", x.label_smoothing),
            "sft.learning_rate" => format!("{:?}", x.sft.learning_rate),
            "sft.batch_size" => x.sft.batch_size.to_string(),
            "sft.epochs" => x.sft.epochs.to_string(),
            "sft.demos" => x.demos.to_string(),
            "sft.demos_path" => opt_path(&self.demos_path),
            "sft.eval_episodes" => x.sft.eval_episodes.to_string(),
            "sft.eval_every" => x.sft.eval_every.to_string(),
            "ppo.method" => self.ppo_method.name().into(),
            "ppo.alpha" => format!("{:?}", x.ppo_alpha),
            "ppo.shape_gripper" => x.ppo.shape_gripper.to_string(),
            "ppo.clip" => format!("{:?}", x.ppo.clip),
            "ppo.gamma" => format!("{:?}", x.ppo.gamma),
            "ppo.lambda" => format!("{:?}", x.ppo.lambda),
            "ppo.episodes_per_iteration" => x.ppo.episodes_per_iteration.to_string(),
            "ppo.epochs" => x.ppo.epochs.to_string(),
            "ppo.minibatch" => x.ppo.minibatch.to_string(),
            "ppo.iterations" => x.ppo.iterations.to_string(),
            "ppo.policy_lr" => format!("{:?}", x.ppo.policy_lr),
            "ppo.value_lr" => format!("{:?}", x.ppo.value_lr),
            "ppo.value_epochs" => x.ppo.value_epochs.to_string(),
            "ppo.entropy_coef" => format!("{:?}", x.entropy_coef),
            "ppo.normalize_advantages" => x.ppo.normalize_advantages.to_string(),
            "ppo.eval_every" => x.ppo.eval_every.to_string(),
            "ppo.eval_episodes" => x.ppo.eval_episodes.to_string(),
            "ppo.milestones" => join(
                &x.ppo
                    .milestones
                    .iter()
                    .map(|m| format!("{m:?}"))
                    .collect::<Vec<_>>(),
                ", ",
            ),
            "ppo.warmstart_demos" => x.warmstart_demos.to_string(),
            "ppo.warmstart_epochs" => x.warmstart_epochs.to_string(),
            "ppo.init" => opt_path(&self.ppo_init),
            "target.sigma" => format!("{:?}", x.sigma),
            "target.sigma_min" => x.sigma_min.map_or("auto".into(), |s| format!("{s:?}")),
            "target.kappa" => format!("{:?}", x.kappa),
            "eval.episodes" => x.eval_episodes.to_string(),
            "eval.variants" => variants(&self.eval_variants),
            "eval.checkpoint" => opt_path(&self.eval_checkpoint),
            "eval.fan_states" => self.fan_states.to_string(),
            "eval.fan_delta" => format!("{:?}", self.fan_delta),
            "experiment.methods" => join(
                &x.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
                ", ",
            ),
            "experiment.seeds" => join(&x.seeds, ", "),
            "experiment.variants" => variants(&x.variants),
            "prop1.problems" => self.prop1.problems.to_string(),
            "prop1.n" => self.prop1.n.to_string(),
            "prop1.mesh" => format!("{:?}", self.prop1.mesh),
            "prop1.first_seed" => self.prop1.first_seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped; a repeated key keeps its last value.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "{}:{}: expected `key = value`",
                    origin.display(),
                    i + 1
                ))
            })?;
            self.set(k.trim(), v).map_err(|e| match e {
                CliError::Config(msg) => {
                    CliError::Config(format!("{}:{}: {msg}", origin.display(), i + 1))
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then `overrides` in order.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(p) = file {
            let text = std::fs::read_to_string(p).map_err(|e| {
                CliError::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            cfg.apply_text(&text, p)?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Derived fields that follow other keys.
    fn sync(&mut self) {
        let env = &mut self.experiment.env;
        if env.instruction_remap.len() != env.instructions {
            env.instruction_remap = (0..env.instructions).collect();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let x = &self.experiment;
        if !(x.sigma > 0.0) {
            return Err(CliError::Config(format!(
                "target.sigma must be > 0, got {}",
                x.sigma
            )));
        }
        if let Some(s) = x.sigma_min {
            if !(s > 0.0) {
                return Err(CliError::Config(format!(
                    "target.sigma_min must be > 0, got {s}"
                )));
            }
        }
        if !(x.kappa > 0.0) {
            return Err(CliError::Config(format!(
                "target.kappa must be > 0, got {}",
                x.kappa
            )));
        }
        if !(x.sft_alpha >= 0.0) {
            return Err(CliError::Config(format!(
                "sft.alpha must be >= 0, got {}",
                x.sft_alpha
            )));
        }
        if !(x.ppo_alpha >= 0.0) {
            return Err(CliError::Config(format!(
                "ppo.alpha must be >= 0, got {}",
                x.ppo_alpha
            )));
        }
        if !(0.0..1.0).contains(&x.label_smoothing) {
            return Err(CliError::Config(format!(
                "sft.label_smoothing must be in [0, 1), got {}",
                x.label_smoothing
            )));
        }
        if !(x.entropy_coef >= 0.0) {
            return Err(CliError::Config(format!(
                "ppo.entropy_coef must be >= 0, got {}",
                x.entropy_coef
            )));
        }
        if self.eval_variants.is_empty() {
            return Err(CliError::Config(
                "eval.variants must name at least one variant".into(),
            ));
        }
        if !(self.fan_delta > 0.0 && self.fan_delta < 1.0) {
            return Err(CliError::Config(format!(
                "eval.fan_delta must be in (0, 1), got {}",
                self.fan_delta
            )));
        }
        if self.prop1.problems == 0 {
            return Err(CliError::Config("prop1.problems must be >= 1".into()));
        }
        if !(2..=4).contains(&self.prop1.n) {
            return Err(CliError::Config(format!(
                "prop1.n must be in [2, 4], got {}",
                self.prop1.n
            )));
        }
        x.validate()?;
        x.sft_config(self.sft_method, self.seed).validate()?;
        x.ppo_config(self.ppo_method, self.seed).validate()?;
        Ok(())
    }

    /// Resolved configuration as text; re-parsing it yields `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for key in Self::KEYS {
            let sec = key.split_once('.').map_or("", |(s, _)| s);
            if sec != section {
                out.push('\n');
                section = sec;
            }
            let _ = writeln!(
                out,
                "{key} = {}",
                self.get(key).expect("every listed key has a value")
            );
        }
        out.trim_start().to_string()
    }
}

fn parse_variants(key: &str, v: &str) -> Result<Vec<Variant>, CliError> {
    if v.trim() == "all" {
        return Ok(Variant::all());
    }
    if v.trim() == "headline" {
        return Ok(fan_core::eval::HEADLINE_OOD
            .into_iter()
            .map(Variant::Ood)
            .collect());
    }
    v.split(',')
        .map(|s| Variant::parse(s.trim()).map_err(|e| CliError::Config(format!("`{key}`: {e}"))))
        .collect()
}

/// Splits `--key value` and `--key=value` flags into pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            return Err(CliError::Config(format!("unexpected argument `{a}`")));
        };
        match flag.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Config(format!("flag `--{flag}` needs a value")))?;
                out.push((flag.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}
