//! Tolerance measurement, distribution-shape metrics, greedy evaluation and
//! the method-by-variant experiment runner.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::env::{expert, make_ood_variant, Env, EnvConfig, OodAxis, QTable};
use crate::error::{Error, Result};
use crate::fanreg::{build_target, kl_divergence, TargetContext, TargetSpec};
use crate::grid::ActionGrid;
use crate::policy::{ActionDistribution, PolicyModel, ValueModel};
use crate::rft::{train_ppo, PpoConfig, PpoReport};
use crate::seeding::{derive_seed, stream_rng};
use crate::sft::{collect_expert_demos, snap_demonstrations, train_sft, SftConfig, SftObjective};

/// Per-dimension description of a policy's action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeMetrics {
    pub entropy: Vec<f64>,
    pub variance: Vec<f64>,
    pub mode: Vec<usize>,
    pub width: Vec<usize>,
    /// KL to the fixed Gaussian centered on the mode, summed over dimensions.
    pub kl_to_target: f64,
}

pub fn shape_metrics(
    dist: &ActionDistribution,
    grid: &ActionGrid,
    sigma: f64,
) -> Result<ShapeMetrics> {
    let q = build_target(
        dist,
        grid,
        TargetSpec::FixedGaussian { sigma },
        TargetContext::Reinforced,
    )?;
    Ok(ShapeMetrics {
        entropy: (0..dist.dims()).map(|d| dist.entropy_dim(d)).collect(),
        variance: (0..dist.dims())
            .map(|d| dist.variance_dim(grid, d))
            .collect(),
        mode: dist.argmax(),
        width: fan_proxy_width(dist, 0.5)?,
        kl_to_target: kl_divergence(dist, &q)?,
    })
}

/// Contiguous run of indices around `center` where `keep` holds.
fn grow(len: usize, center: usize, keep: impl Fn(usize) -> bool) -> (usize, usize) {
    let mut lo = center;
    while lo > 0 && keep(lo - 1) {
        lo -= 1;
    }
    let mut hi = center;
    while hi + 1 < len && keep(hi + 1) {
        hi += 1;
    }
    (lo, hi)
}

/// Half-max style width: per dimension, the number of bins in the maximal
/// contiguous interval around the mode with `p >= tau * max p`.
pub fn fan_proxy_width(dist: &ActionDistribution, tau: f64) -> Result<Vec<usize>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::config(format!(
            "width threshold must be in (0, 1), got {tau}"
        )));
    }
    let modes = dist.argmax();
    Ok(modes
        .iter()
        .enumerate()
        .map(|(d, &m)| {
            let p = dist.probs(d);
            let cut = tau * p[m];
            let (lo, hi) = grow(p.len(), m, |j| p[j] >= cut);
            hi - lo + 1
        })
        .collect())
}

/// Near-optimal bin intervals extracted from a one-step Q table.
#[derive(Debug, Clone, PartialEq)]
pub struct FanSets {
    /// Inclusive `(lo, hi)` bin interval per dimension.
    pub intervals: Vec<(usize, usize)>,
    pub argmax: Vec<usize>,
    /// Set when the table is flat and every action is equally good.
    pub degenerate: bool,
}

impl FanSets {
    pub fn widths(&self) -> Vec<usize> {
        self.intervals.iter().map(|(lo, hi)| hi - lo + 1).collect()
    }
}

/// Per dimension, fixes the other coordinates at the joint argmax and grows
/// the contiguous interval whose deficit from the best value stays within
/// `delta_fraction * (max Q - min Q)`.
pub fn fan_from_q(q: &QTable, delta_fraction: f64) -> Result<FanSets> {
    if !(delta_fraction > 0.0 && delta_fraction < 1.0) {
        return Err(Error::config(format!(
            "delta fraction must be in (0, 1), got {delta_fraction}"
        )));
    }
    if q.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite Q value"));
    }
    let mut best = 0;
    let mut worst = q.values[0];
    for (i, &v) in q.values.iter().enumerate() {
        if v > q.values[best] {
            best = i;
        }
        worst = worst.min(v);
    }
    let top = q.values[best];
    let argmax = q.unravel(best);
    if top == worst {
        return Ok(FanSets {
            intervals: vec![(0, q.bins - 1); q.dims],
            argmax,
            degenerate: true,
        });
    }
    let delta = delta_fraction * (top - worst);
    let intervals = (0..q.dims)
        .map(|d| {
            let value_at = |j: usize| {
                let mut b = argmax.clone();
                b[d] = j;
                q.get(&b)
            };
            grow(q.bins, argmax[d], |j| top - value_at(j) <= delta)
        })
        .collect();
    Ok(FanSets {
        intervals,
        argmax,
        degenerate: false,
    })
}

/// Success rate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub success: f64,
    pub stderr: f64,
    pub episodes: usize,
}

fn binomial(successes: usize, n: usize) -> EvalResult {
    let p = successes as f64 / n as f64;
    EvalResult {
        success: p,
        stderr: (p * (1.0 - p) / n as f64).sqrt(),
        episodes: n,
    }
}

/// Runs `n` episodes with `act`, which maps the environment, observation and
/// presented instruction to a continuous action. Episode `i` resets from
/// stream `(seed, i)`.
pub fn evaluate<F>(env: &EnvConfig, n: usize, seed: u64, mut act: F) -> Result<EvalResult>
where
    F: FnMut(&Env, &[f64], usize) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::config("evaluation needs at least one episode"));
    }
    let mut e = Env::new(env.clone())?;
    let mut wins = 0;
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64);
        let (mut obs, l) = e.reset(&mut rng)?;
        loop {
            let a = act(&e, &obs, l)?;
            let out = e.step(&a)?;
            obs = out.obs;
            if out.done {
                break;
            }
        }
        wins += e.state().success as usize;
    }
    Ok(binomial(wins, n))
}

/// Greedy evaluation plus shape statistics over visited states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyEval {
    pub success: f64,
    pub stderr: f64,
    pub mean_entropy: f64,
    pub mean_width: f64,
    pub mean_variance: f64,
}

/// Per-dimension argmax policy on `n` seeded episodes.
pub fn evaluate_policy(
    model: &PolicyModel,
    grid: &ActionGrid,
    env: &EnvConfig,
    n: usize,
    seed: u64,
) -> Result<PolicyEval> {
    let (mut h, mut w, mut v, mut k) = (0.0, 0.0, 0.0, 0usize);
    let r = evaluate(env, n, seed, |_, obs, l| {
        let dist = model.forward(obs, l)?;
        let widths = fan_proxy_width(&dist, 0.5)?;
        h += dist.entropy();
        w += widths.iter().sum::<usize>() as f64 / widths.len() as f64;
        v += (0..dist.dims())
            .map(|d| dist.variance_dim(grid, d))
            .sum::<f64>()
            / dist.dims() as f64;
        k += 1;
        grid.decode(&dist.argmax())
    })?;
    let k = k.max(1) as f64;
    Ok(PolicyEval {
        success: r.success,
        stderr: r.stderr,
        mean_entropy: h / k,
        mean_width: w / k,
        mean_variance: v / k,
    })
}

pub fn evaluate_expert(env: &EnvConfig, n: usize, seed: u64) -> Result<EvalResult> {
    evaluate(env, n, seed, |e, _, _| Ok(expert(e.config(), e.state())))
}

/// States visited by the expert on seeded episodes, as environment
/// snapshots; at most `count` are returned, taken in episode order.
pub fn expert_visited_states(env: &EnvConfig, count: usize, seed: u64) -> Result<Vec<Env>> {
    let mut out = Vec::with_capacity(count);
    let mut e = Env::new(env.clone())?;
    let mut i = 0u64;
    while out.len() < count {
        let mut rng = stream_rng(seed, i);
        i += 1;
        e.reset(&mut rng)?;
        while !e.state().done && out.len() < count {
            out.push(e.clone());
            let a = expert(e.config(), e.state());
            e.step(&a)?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sft,
    FanSft,
    LabelSmoothing,
    Ppo,
    FanPpo,
    EntropyPpo,
    KernelPpo,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Sft,
        Method::FanSft,
        Method::LabelSmoothing,
        Method::Ppo,
        Method::FanPpo,
        Method::EntropyPpo,
        Method::KernelPpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sft => "sft",
            Method::FanSft => "fan-sft",
            Method::LabelSmoothing => "label-smoothing",
            Method::Ppo => "ppo",
            Method::FanPpo => "fan-ppo",
            Method::EntropyPpo => "entropy-ppo",
            Method::KernelPpo => "kernel-ppo",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }

    pub fn is_rl(self) -> bool {
        matches!(
            self,
            Method::Ppo | Method::FanPpo | Method::EntropyPpo | Method::KernelPpo
        )
    }
}

/// Evaluation condition: the canonical task or one perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Canonical,
    Ood(OodAxis),
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Canonical => "canonical",
            Variant::Ood(a) => a.name(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "canonical" {
            Ok(Variant::Canonical)
        } else {
            OodAxis::parse(s).map(Variant::Ood)
        }
    }

    pub fn all() -> Vec<Variant> {
        std::iter::once(Variant::Canonical)
            .chain(OodAxis::ALL.into_iter().map(Variant::Ood))
            .collect()
    }

    pub fn env(self, base: &EnvConfig) -> Result<EnvConfig> {
        match self {
            Variant::Canonical => Ok(base.clone()),
            Variant::Ood(a) => make_ood_variant(base, a),
        }
    }
}

/// The four perturbations averaged in the headline OOD comparison.
pub const HEADLINE_OOD: [OodAxis; 4] = [
    OodAxis::VisionWeak,
    OodAxis::SemanticUnseenInstruction,
    OodAxis::ExecutionStartPose,
    OodAxis::ExecutionReposition,
];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub bins: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            bins: 9,
            hidden: vec![64, 64],
            embed_dim: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::config(format!(
                "grid.bins must be >= 2, got {}",
                self.bins
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("policy.hidden sizes must be >= 1"));
        }
        Ok(())
    }

    pub fn policy(&self, env: &EnvConfig, grid: &ActionGrid, seed: u64) -> Result<PolicyModel> {
        PolicyModel::new(
            env.obs_dim(),
            self.embed_dim,
            env.embedding_rows(),
            self.hidden.clone(),
            grid,
            derive_seed(seed, "policy"),
        )
    }

    pub fn value(&self, env: &EnvConfig, seed: u64) -> Result<ValueModel> {
        ValueModel::new(
            env.obs_dim(),
            self.embed_dim,
            env.embedding_rows(),
            self.hidden.clone(),
            derive_seed(seed, "value"),
        )
    }
}

/// Everything one experiment sweep needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub env: EnvConfig,
    pub model: ModelConfig,
    /// Expert demonstrations for the supervised methods.
    pub demos: usize,
    pub sft: SftConfig,
    pub sft_alpha: f64,
    pub label_smoothing: f64,
    pub ppo: PpoConfig,
    pub ppo_alpha: f64,
    pub sigma: f64,
    /// Floor of the adaptive FAN-SFT target; half a bin width when unset.
    pub sigma_min: Option<f64>,
    pub entropy_coef: f64,
    pub kappa: f64,
    /// Demonstrations and epochs of the plain-SFT warm start shared by all RL
    /// methods of a seed.
    pub warmstart_demos: usize,
    pub warmstart_epochs: usize,
    pub eval_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            seeds: vec![0, 1, 2, 3, 4],
            variants: Variant::all(),
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            demos: 30,
            sft: SftConfig {
                learning_rate: 0.2,
                batch_size: 16,
                epochs: 1000,
                ..SftConfig::default()
            },
            sft_alpha: 0.05,
            label_smoothing: 0.1,
            ppo: PpoConfig {
                episodes_per_iteration: 64,
                epochs: 4,
                iterations: 60,
                ..PpoConfig::default()
            },
            ppo_alpha: 1.0,
            sigma: 0.3,
            sigma_min: None,
            entropy_coef: 0.01,
            kappa: 0.25,
            warmstart_demos: 20,
            warmstart_epochs: 1000,
            eval_episodes: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.seeds.is_empty() || self.variants.is_empty() {
            return Err(Error::config(
                "experiment needs at least one method, seed and variant",
            ));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval.episodes must be >= 1"));
        }
        self.env.validate()?;
        self.model.validate()?;
        self.sft.validate()?;
        self.ppo.validate()?;
        for m in &self.methods {
            self.sft_config(*m, 0).validate()?;
            self.ppo_config(*m, 0).validate()?;
        }
        Ok(())
    }

    /// SFT settings for `method` (the warm start for RL methods).
    pub fn sft_config(&self, method: Method, seed: u64) -> SftConfig {
        let objective = match method {
            Method::FanSft => SftObjective::Shaped {
                alpha: self.sft_alpha,
                target: match self.sigma_min {
                    Some(sigma_min) => TargetSpec::AdaptiveGaussian { sigma_min },
                    None => TargetSpec::adaptive_default(&self.grid_unchecked()),
                },
            },
            Method::LabelSmoothing => SftObjective::LabelSmoothing {
                eps: self.label_smoothing,
            },
            _ => SftObjective::Nll,
        };
        let mut c = SftConfig {
            objective,
            seed: derive_seed(seed, "sft"),
            eval_episodes: 0,
            ..self.sft.clone()
        };
        if method.is_rl() {
            c.epochs = self.warmstart_epochs;
        }
        c
    }

    pub fn ppo_config(&self, method: Method, seed: u64) -> PpoConfig {
        let mut c = PpoConfig {
            seed: derive_seed(seed, "ppo"),
            report_sigma: self.sigma,
            ..self.ppo.clone()
        };
        match method {
            Method::FanPpo => {
                c.alpha = Some(self.ppo_alpha);
                c.target = TargetSpec::FixedGaussian { sigma: self.sigma };
            }
            Method::KernelPpo => {
                c.alpha = Some(self.ppo_alpha);
                c.target = TargetSpec::KernelSmoothed { kappa: self.kappa };
            }
            Method::EntropyPpo => {
                c.alpha = None;
                c.entropy_coef = self.entropy_coef;
            }
            _ => c.alpha = None,
        }
        c
    }

    pub fn grid(&self) -> Result<ActionGrid> {
        self.env.action_grid(self.model.bins)
    }

    fn grid_unchecked(&self) -> ActionGrid {
        self.env
            .action_grid(self.model.bins.max(2))
            .unwrap_or_else(|_| ActionGrid::uniform(3, -1.0, 1.0, 2).expect("static grid"))
    }
}

/// Trains one method for one seed. Returns the model, the environment steps
/// to 80% greedy success (RL methods), and an abort note if any.
pub fn train_method(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
) -> Result<(PolicyModel, Option<usize>, Option<String>)> {
    let (sft_model, abort) = supervised_stage(cfg, method, seed)?;
    if abort.is_some() || !method.is_rl() {
        return Ok((sft_model, None, abort));
    }
    let r = rl_stage(cfg, method, seed, &sft_model)?;
    let steps = r.milestone(0.8).and_then(|m| m.env_steps);
    Ok((r.model, steps, r.aborted))
}

/// The supervised part of a method: full SFT for supervised methods, the
/// plain-SFT warm start for RL methods. Returns the last finite model and
/// the abort note, if any.
pub fn supervised_stage(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
) -> Result<(PolicyModel, Option<String>)> {
    let grid = cfg.grid()?;
    let model = cfg.model.policy(&cfg.env, &grid, seed)?;
    let n_demos = if method.is_rl() {
        cfg.warmstart_demos
    } else {
        cfg.demos
    };
    let sft_cfg = cfg.sft_config(method, seed);
    if n_demos == 0 || sft_cfg.epochs == 0 {
        return Ok((model, None));
    }
    let raw = collect_expert_demos(&cfg.env, n_demos, derive_seed(seed, "demos"))?;
    let demos = snap_demonstrations(raw, &grid)?;
    let r = train_sft(&model, &grid, &demos, &sft_cfg, None)?;
    Ok((r.model, r.aborted))
}

/// PPO finetuning of `start` with the settings of an RL `method`.
pub fn rl_stage(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    start: &PolicyModel,
) -> Result<PpoReport> {
    let grid = cfg.grid()?;
    let value = cfg.model.value(&cfg.env, seed)?;
    train_ppo(
        start,
        &value,
        &cfg.env,
        &grid,
        &cfg.ppo_config(method, seed),
    )
}

/// One cell of the long-format results table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub method: String,
    pub seed: u64,
    pub variant: String,
    pub success: f64,
    pub mean_entropy: f64,
    pub mean_fan_proxy_width: f64,
    pub env_steps_to_80: Option<usize>,
    pub status: String,
}

/// Trains every method for every seed, evaluates on every variant and
/// writes `experiment.csv` and `summary.txt` into `out_dir`. Training aborts
/// are recorded in the `status` column and the sweep continues.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<ExperimentRow>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let grid = cfg.grid()?;
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let (model, steps, status) = match train_method(cfg, method, seed) {
                Ok((m, s, abort)) => (Some(m), s, abort.unwrap_or_else(|| "ok".into())),
                Err(e) => (None, None, format!("error: {e}")),
            };
            for &variant in &cfg.variants {
                let env = variant.env(&cfg.env)?;
                let (success, h, w) = match &model {
                    Some(m) => {
                        let r = evaluate_policy(
                            m,
                            &grid,
                            &env,
                            cfg.eval_episodes,
                            derive_seed(seed, "eval"),
                        )?;
                        (r.success, r.mean_entropy, r.mean_width)
                    }
                    None => (f64::NAN, f64::NAN, f64::NAN),
                };
                rows.push(ExperimentRow {
                    method: method.name().into(),
                    seed,
                    variant: variant.name().into(),
                    success,
                    mean_entropy: h,
                    mean_fan_proxy_width: w,
                    env_steps_to_80: steps,
                    status: status.clone(),
                });
            }
        }
    }
    let mut w = csv::Writer::from_path(out_dir.join("experiment.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    std::fs::write(out_dir.join("summary.txt"), summary_table(cfg, &rows))?;
    Ok(rows)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v.sqrt())
}

/// Success (%) as mean ± std over seeds, one row per method, one column per
/// variant, plus the average over the headline perturbations when present.
pub fn summary_table(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> String {
    let headline: Vec<&str> = HEADLINE_OOD.iter().map(|a| a.name()).collect();
    let has_headline = headline
        .iter()
        .all(|h| cfg.variants.iter().any(|v| v.name() == *h));
    let mut out = String::new();
    let _ = write!(out, "{:<16}", "method");
    for v in &cfg.variants {
        let _ = write!(out, " {:>28}", v.name());
    }
    if has_headline {
        let _ = write!(out, " {:>16}", "ood-avg");
    }
    out.push('\n');
    for m in &cfg.methods {
        let _ = write!(out, "{:<16}", m.name());
        for v in &cfg.variants {
            let xs: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == m.name() && r.variant == v.name())
                .map(|r| 100.0 * r.success)
                .collect();
            let (mu, sd) = mean_std(&xs);
            let _ = write!(out, " {:>28}", format!("{mu:.1} ± {sd:.1}"));
        }
        if has_headline {
            let per_seed: Vec<f64> = cfg
                .seeds
                .iter()
                .map(|&s| {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter(|r| {
                            r.method == m.name()
                                && r.seed == s
                                && headline.contains(&r.variant.as_str())
                        })
                        .map(|r| 100.0 * r.success)
                        .collect();
                    xs.iter().sum::<f64>() / xs.len() as f64
                })
                .collect();
            let (mu, sd) = mean_std(&per_seed);
            let _ = write!(out, " {:>16}", format!("{mu:.1} ± {sd:.1}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qtable(dims: usize, bins: usize, f: impl Fn(&[usize]) -> f64) -> QTable {
        let mut q = QTable {
            dims,
            bins,
            values: vec![0.0; bins.pow(dims as u32)],
        };
        for i in 0..q.values.len() {
            let b = q.unravel(i);
            q.values[i] = f(&b);
        }
        q
    }

    #[test]
    fn full_fraction_covers_everything() {
        let q = qtable(2, 5, |b| {
            -((b[0] as f64 - 2.0).powi(2)) - (b[1] as f64 - 1.0).abs()
        });
        let f = fan_from_q(&q, 1.0 - 1e-12).unwrap();
        // other coordinates are pinned at the argmax, so each line reaches the
        // whole range only if every deficit on it is within the gap
        assert_eq!(f.intervals, vec![(0, 4), (0, 4)]);
        let s = fan_from_q(&q, 1e-9).unwrap();
        assert_eq!(s.intervals, vec![(2, 2), (1, 1)]);
        assert!(!s.degenerate);
    }

    #[test]
    fn flat_table_is_degenerate() {
        let q = qtable(3, 4, |_| 0.5);
        let f = fan_from_q(&q, 0.05).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.intervals, vec![(0, 3); 3]);
    }

    #[test]
    fn affine_invariance_on_exact_values() {
        let q = qtable(3, 5, |b| (b[0] * 7 + b[1] * 3 + b[2]) as f64 % 11.0);
        let base = fan_from_q(&q, 0.3).unwrap();
        for (a, c) in [(2.0, 0.0), (0.5, 4.0), (3.0, -16.0)] {
            let mut t = q.clone();
            for v in &mut t.values {
                *v = a * *v + c;
            }
            assert_eq!(fan_from_q(&t, 0.3).unwrap(), base);
        }
    }

    #[test]
    fn proxy_width_cases() {
        let mut logits = vec![-30.0; 9];
        logits[4] = 30.0;
        let spike = ActionDistribution::from_logits(1, 9, logits).unwrap();
        assert_eq!(fan_proxy_width(&spike, 0.5).unwrap(), vec![1]);
        let flat = ActionDistribution::from_logits(1, 9, vec![0.0; 9]).unwrap();
        assert_eq!(fan_proxy_width(&flat, 0.5).unwrap(), vec![9]);

        // Gaussian with sigma = 2 bin widths on grid(-1, 1, 9): half-max at
        // |x - mu| <= sigma sqrt(2 ln 2) = 2.35 widths -> 5 bins
        let g = ActionGrid::uniform(1, -1.0, 1.0, 9).unwrap();
        let sigma = 2.0 * g.bin_width(0);
        let c = g.centers(0);
        let q: Vec<f64> = c
            .iter()
            .map(|x| (-(x - c[4]).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let expected = q.iter().filter(|&&v| v >= 0.5 * q[4]).count();
        assert_eq!(expected, 5);
        let d = ActionDistribution::from_probs(&[q.clone()]).unwrap();
        assert_eq!(fan_proxy_width(&d, 0.5).unwrap(), vec![expected]);
    }

    proptest! {
        #[test]
        fn proxy_width_is_shift_invariant(logits in proptest::collection::vec(-5.0f64..5.0, 7), c in -50.0f64..50.0) {
            let a = ActionDistribution::from_logits(1, 7, logits.clone()).unwrap();
            let b = ActionDistribution::from_logits(1, 7, logits.iter().map(|x| x + c).collect()).unwrap();
            prop_assert_eq!(fan_proxy_width(&a, 0.5).unwrap(), fan_proxy_width(&b, 0.5).unwrap());
        }

        #[test]
        fn fan_intervals_contain_argmax(vals in proptest::collection::vec(-1.0f64..1.0, 27), frac in 0.01f64..0.99) {
            let q = QTable { dims: 3, bins: 3, values: vals };
            let f = fan_from_q(&q, frac).unwrap();
            for (d, (lo, hi)) in f.intervals.iter().enumerate() {
                prop_assert!(*lo <= f.argmax[d] && f.argmax[d] <= *hi);
            }
        }
    }

    #[test]
    fn expert_scores_near_perfect_and_uniform_policy_fails() {
        let env = EnvConfig::default();
        assert!(evaluate_expert(&env, 100, 1).unwrap().success >= 0.99);
        let g = env.action_grid(9).unwrap();
        let shape = crate::policy::NetShape {
            obs_dim: env.obs_dim(),
            embed_dim: 2,
            instructions: 4,
            hidden: vec![4],
            out_dim: 27,
        };
        let uniform =
            PolicyModel::from_network(crate::policy::Network::zeros(shape).unwrap(), 3, 9).unwrap();
        let mut rng_bits = 0u64;
        let r = evaluate(&env, 200, 3, |_, obs, l| {
            let d = uniform.forward(obs, l)?;
            rng_bits += 1;
            let mut rng = stream_rng(99, rng_bits);
            g.decode(&d.sample(&mut rng))
        })
        .unwrap();
        assert!(r.success < 0.05, "{}", r.success);
        let greedy = evaluate_policy(&uniform, &g, &env, 200, 3).unwrap();
        assert!(greedy.success < 0.05);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let env = EnvConfig::default();
        let g = env.action_grid(9).unwrap();
        let m = PolicyModel::new(env.obs_dim(), 2, 4, vec![8], &g, 5).unwrap();
        let a = evaluate_policy(&m, &g, &env, 20, 7).unwrap();
        let b = evaluate_policy(&m, &g, &env, 20, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        for v in Variant::all() {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        assert!(Method::parse("grpo").is_err());
    }
}
