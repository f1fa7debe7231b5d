//! Reinforced finetuning: rollouts, GAE, value fitting, the clipped
//! surrogate, and its KL-shaped variant.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{Env, EnvConfig, MOVE_DIMS};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, fan_proxy_width};
use crate::fanreg::{
    build_target, kl_divergence, kl_logit_gradient, pass_through_from, TargetContext,
    TargetDistribution, TargetSpec,
};
use crate::grid::ActionGrid;
use crate::policy::{Activations, Parameterized, PolicyModel, ValueModel};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub instruction: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// True when the episode ended by success rather than by the horizon.
    pub terminal: bool,
    pub success: bool,
    /// Shape statistics of the behavior policy at each visited state.
    pub shape: Vec<StepShape>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Per-state policy statistics recorded during collection.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepShape {
    pub entropy: f64,
    pub kl_to_target: f64,
    pub variance: f64,
    pub fan_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    /// Shaping coefficient; `None` trains plain PPO without evaluating the
    /// shaping term at all.
    pub alpha: Option<f64>,
    pub target: TargetSpec,
    /// Also shape the gripper dimension; off by default, where the target
    /// covers the move dimensions only.
    pub shape_gripper: bool,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub episodes_per_iteration: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub iterations: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub value_epochs: usize,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Greedy-success thresholds whose first crossing is recorded.
    pub milestones: Vec<f64>,
    /// Std of the fixed Gaussian used for the logged KL column.
    pub report_sigma: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            target: TargetSpec::FixedGaussian { sigma: 0.3 },
            shape_gripper: false,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            episodes_per_iteration: 32,
            epochs: 1,
            minibatch: 128,
            iterations: 100,
            policy_lr: 0.05,
            value_lr: 0.05,
            value_epochs: 4,
            entropy_coef: 0.0,
            normalize_advantages: true,
            seed: 0,
            eval_every: 1,
            eval_episodes: 50,
            milestones: vec![0.5, 0.8, 0.9],
            report_sigma: 0.3,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::config(format!(
                "ppo.clip must be in (0, 1), got {}",
                self.clip
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!(
                "ppo.gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!(
                "ppo.lambda must be in [0, 1], got {}",
                self.lambda
            )));
        }
        if let Some(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::config(format!("ppo.alpha must be >= 0, got {a}")));
            }
        }
        self.target.validate()?;
        if matches!(self.target, TargetSpec::LabelSmoothing { .. }) {
            return Err(Error::config(
                "label smoothing needs a demonstrated action and cannot be used in RL finetuning",
            ));
        }
        if self.episodes_per_iteration == 0 || self.minibatch == 0 {
            return Err(Error::config(
                "ppo.episodes_per_iteration and ppo.minibatch must be >= 1",
            ));
        }
        for (name, lr) in [
            ("ppo.policy_lr", self.policy_lr),
            ("ppo.value_lr", self.value_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be > 0, got {lr}")));
            }
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::config("ppo.entropy_coef must be >= 0"));
        }
        if !(self.report_sigma > 0.0) {
            return Err(Error::config("ppo.report_sigma must be > 0"));
        }
        Ok(())
    }

    /// The terms that enter the policy objective.
    pub fn loss_terms(&self) -> PpoTerms {
        PpoTerms {
            clip: self.clip,
            alpha: self.alpha,
            target: self.target,
            shape_gripper: self.shape_gripper,
            entropy_coef: self.entropy_coef,
        }
    }
}

/// Runs `n` episodes of the stochastic policy. Episode `i` of iteration `k`
/// draws from stream `(seed, k << 32 | i)`; episodes run in parallel and are
/// returned in index order.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    model: &PolicyModel,
    value: &ValueModel,
    env: &EnvConfig,
    grid: &ActionGrid,
    n: usize,
    seed: u64,
    iteration: u64,
    report_sigma: f64,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::config("collect_rollouts needs n >= 1"));
    }
    env.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, (iteration << 32) | i as u64);
            rollout_episode(model, value, env, grid, &mut rng, report_sigma)
                .map_err(|e| annotate(e, i))
        })
        .collect()
}

fn annotate(e: Error, episode: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("episode {episode}: {m}")),
        Error::Config(m) => Error::Config(format!("episode {episode}: {m}")),
        other => other,
    }
}

fn rollout_episode(
    model: &PolicyModel,
    value: &ValueModel,
    env_cfg: &EnvConfig,
    grid: &ActionGrid,
    rng: &mut rand_chacha::ChaCha8Rng,
    report_sigma: f64,
) -> Result<Trajectory> {
    let mut env = Env::new(env_cfg.clone())?;
    let (mut obs, instruction) = env.reset(rng)?;
    let report = TargetSpec::FixedGaussian {
        sigma: report_sigma,
    };
    let mut t = Trajectory {
        instruction,
        observations: Vec::new(),
        actions: Vec::new(),
        log_probs: Vec::new(),
        rewards: Vec::new(),
        values: Vec::new(),
        advantages: Vec::new(),
        returns: Vec::new(),
        terminal: false,
        success: false,
        shape: Vec::new(),
    };
    loop {
        let dist = model.forward(&obs, instruction)?;
        let a = dist.sample(rng);
        let lp = dist.log_prob(&a)?;
        let v = value.value(&obs, instruction)?;
        let q = build_target(&dist, grid, report, TargetContext::Reinforced)?;
        let widths = fan_proxy_width(&dist, 0.5)?;
        t.shape.push(StepShape {
            entropy: dist.entropy(),
            kl_to_target: kl_divergence(&dist, &q)?,
            variance: (0..dist.dims())
                .map(|d| dist.variance_dim(grid, d))
                .sum::<f64>()
                / dist.dims() as f64,
            fan_width: widths.iter().sum::<usize>() as f64 / widths.len() as f64,
        });
        let out = env.step(&grid.decode(&a)?)?;
        t.observations.push(obs);
        t.actions.push(a);
        t.log_probs.push(lp);
        t.values.push(v);
        t.rewards.push(out.reward);
        obs = out.obs;
        if out.done {
            break;
        }
    }
    t.success = env.state().success;
    t.terminal = t.success;
    Ok(t)
}

/// Fills advantages and returns: `delta_t = r_t + gamma V_{t+1} - V_t` with
/// the value after the last step taken as 0, `A_t = sum (gamma lambda)^i
/// delta_{t+i}`, `G_t = A_t + V_t`.
pub fn compute_gae(traj: &mut Trajectory, gamma: f64, lambda: f64) {
    let n = traj.len();
    traj.advantages = vec![0.0; n];
    traj.returns = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { traj.values[t + 1] } else { 0.0 };
        let delta = traj.rewards[t] + gamma * next - traj.values[t];
        running = delta + gamma * lambda * running;
        traj.advantages[t] = running;
        traj.returns[t] = running + traj.values[t];
    }
}

/// One policy-update example.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoSample {
    pub obs: Vec<f64>,
    pub instruction: usize,
    pub bins: Vec<usize>,
    pub behavior_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
    /// Shaping target read off the behavior policy. When absent it is built
    /// from the policy being optimized.
    pub target: Option<TargetDistribution>,
}

pub fn flatten_rollouts(trajs: &[Trajectory]) -> Vec<PpoSample> {
    trajs
        .iter()
        .flat_map(|t| {
            (0..t.len()).map(move |k| PpoSample {
                obs: t.observations[k].clone(),
                instruction: t.instruction,
                bins: t.actions[k].clone(),
                behavior_log_prob: t.log_probs[k],
                advantage: t.advantages[k],
                ret: t.returns[k],
                target: None,
            })
        })
        .collect()
}

/// Shifts and scales advantages to zero mean and unit variance.
pub fn normalize_advantages(samples: &mut [PpoSample]) {
    if samples.is_empty() {
        return;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.advantage).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|s| (s.advantage - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt() + 1e-8;
    for s in samples {
        s.advantage = (s.advantage - mean) / std;
    }
}

const CHUNK: usize = 16;

/// Mean squared error of the value head against the returns.
pub fn value_loss(value: &ValueModel, batch: &[PpoSample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::config("value_loss on an empty batch"));
    }
    let n = value.num_params();
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; n];
            let mut l = 0.0;
            for s in chunk {
                let (v, acts) = value.forward_cached(&s.obs, s.instruction)?;
                let e = v - s.ret;
                l += e * e;
                value.backward_cached(&acts, 2.0 * e, &mut g)?;
            }
            Ok((l, g))
        })
        .collect();
    let (loss, grad) = merge(parts, n, scale)?;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("value loss is {loss}")));
    }
    Ok((loss, grad))
}

fn merge(parts: Vec<Result<(f64, Vec<f64>)>>, n: usize, scale: f64) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    for g in &mut grad {
        *g *= scale;
    }
    Ok((loss * scale, grad))
}

/// `min(I A, clip(I, 1 - eps, 1 + eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Which terms enter the policy loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoTerms {
    pub clip: f64,
    pub alpha: Option<f64>,
    pub target: TargetSpec,
    pub shape_gripper: bool,
    pub entropy_coef: f64,
}

impl PpoTerms {
    pub fn plain(clip: f64) -> Self {
        Self {
            clip,
            alpha: None,
            target: TargetSpec::FixedGaussian { sigma: 0.3 },
            shape_gripper: false,
            entropy_coef: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoLoss {
    pub loss: f64,
    pub surrogate: f64,
    pub kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss over `batch`, plus `alpha` times the mean KL to a
/// target rebuilt from the current policy when `alpha` is set, minus the
/// entropy bonus when its coefficient is nonzero.
pub fn ppo_loss(
    model: &PolicyModel,
    grid: &ActionGrid,
    batch: &[PpoSample],
    terms: PpoTerms,
) -> Result<(PpoLoss, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::config("ppo_loss on an empty batch"));
    }
    let n = model.num_params();
    let scale = 1.0 / batch.len() as f64;
    let parts: Vec<Result<(PpoLoss, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut g = vec![0.0; n];
            let mut acc = PpoLoss::default();
            for (k, s) in chunk.iter().enumerate() {
                let (l, upstream, acts) = ppo_sample(model, grid, s, terms, c * CHUNK + k)?;
                acc.loss += l.loss;
                acc.surrogate += l.surrogate;
                acc.kl += l.kl;
                acc.entropy += l.entropy;
                acc.clip_fraction += l.clip_fraction;
                model.backward_cached(&acts, &upstream, &mut g)?;
            }
            Ok((acc, g))
        })
        .collect();
    let mut total = PpoLoss::default();
    let mut grad = vec![0.0; n];
    for p in parts {
        let (l, g) = p?;
        total.loss += l.loss;
        total.surrogate += l.surrogate;
        total.kl += l.kl;
        total.entropy += l.entropy;
        total.clip_fraction += l.clip_fraction;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    total.loss *= scale;
    total.surrogate *= scale;
    total.kl *= scale;
    total.entropy *= scale;
    total.clip_fraction *= scale;
    for g in &mut grad {
        *g *= scale;
    }
    if !total.loss.is_finite() {
        return Err(Error::numeric(format!("policy loss is {}", total.loss)));
    }
    Ok((total, grad))
}

fn ppo_sample(
    model: &PolicyModel,
    grid: &ActionGrid,
    s: &PpoSample,
    terms: PpoTerms,
    index: usize,
) -> Result<(PpoLoss, Vec<f64>, Activations)> {
    let (dist, acts) = model.forward_cached(&s.obs, s.instruction)?;
    let lp = dist.log_prob(&s.bins)?;
    let ratio = (lp - s.behavior_log_prob).exp();
    if !ratio.is_finite() {
        return Err(Error::numeric(format!(
            "importance ratio is {ratio} at step {index} (behavior log-prob {})",
            s.behavior_log_prob
        )));
    }
    let a = s.advantage;
    let unclipped = ratio * a;
    let clipped = ratio.clamp(1.0 - terms.clip, 1.0 + terms.clip) * a;
    let mut out = PpoLoss::default();
    // d(-I A)/dlogits = -A I dlogp/dlogits; zero where the clipped branch is active
    let coef = if unclipped <= clipped {
        out.surrogate = -unclipped;
        -a * ratio
    } else {
        out.surrogate = -clipped;
        out.clip_fraction = 1.0;
        0.0
    };
    out.loss = out.surrogate;
    let mut upstream: Vec<f64> = dist
        .log_prob_logit_grad(&s.bins)?
        .into_iter()
        .map(|g| coef * g)
        .collect();
    if let Some(alpha) = terms.alpha {
        let mut q = match &s.target {
            Some(q) => q.clone(),
            None => build_target(&dist, grid, terms.target, TargetContext::Reinforced)?,
        };
        if !terms.shape_gripper {
            q = pass_through_from(&q, &dist, MOVE_DIMS)?;
        }
        let kl = kl_divergence(&dist, &q)?;
        out.kl = kl;
        out.loss += alpha * kl;
        for (u, k) in upstream.iter_mut().zip(kl_logit_gradient(&dist, &q)?) {
            *u += alpha * k;
        }
    }
    if terms.entropy_coef != 0.0 {
        let h = dist.entropy();
        out.entropy = h;
        out.loss -= terms.entropy_coef * h;
        for (u, e) in upstream.iter_mut().zip(dist.entropy_logit_grad()) {
            *u -= terms.entropy_coef * e;
        }
    }
    Ok((out, upstream, acts))
}

/// Importance ratios of `batch` under `model`.
pub fn importance_ratios(model: &PolicyModel, batch: &[PpoSample]) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| {
            Ok(
                (model.forward(&s.obs, s.instruction)?.log_prob(&s.bins)? - s.behavior_log_prob)
                    .exp(),
            )
        })
        .collect()
}

/// One row of the PPO metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PpoIteration {
    pub iteration: usize,
    pub env_steps: usize,
    pub rollout_success: f64,
    pub eval_success: Option<f64>,
    pub mean_kl: f64,
    pub mean_entropy: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub mean_variance: f64,
    pub mean_fan_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Milestone {
    pub threshold: f64,
    pub iteration: Option<usize>,
    pub env_steps: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PpoReport {
    pub model: PolicyModel,
    pub value: ValueModel,
    pub iterations: Vec<PpoIteration>,
    pub milestones: Vec<Milestone>,
    pub aborted: Option<String>,
}

impl PpoReport {
    pub fn milestone(&self, threshold: f64) -> Option<&Milestone> {
        self.milestones.iter().find(|m| m.threshold == threshold)
    }
}

/// Collect, estimate advantages, update the policy then the value head, and
/// evaluate greedily at the configured cadence. Episodes cut by the horizon
/// bootstrap from 0 like true terminals.
pub fn train_ppo(
    model: &PolicyModel,
    value: &ValueModel,
    env: &EnvConfig,
    grid: &ActionGrid,
    config: &PpoConfig,
) -> Result<PpoReport> {
    config.validate()?;
    env.validate()?;
    let terms = config.loss_terms();
    let mut model = model.clone();
    let mut value = value.clone();
    let mut rng = stream_rng(config.seed, u64::MAX);
    let mut rows: Vec<PpoIteration> = Vec::with_capacity(config.iterations);
    let mut milestones: Vec<Milestone> = config
        .milestones
        .iter()
        .map(|&threshold| Milestone {
            threshold,
            iteration: None,
            env_steps: None,
        })
        .collect();
    let mut env_steps = 0usize;

    for it in 1..=config.iterations {
        let snapshot = (model.clone(), value.clone());
        let abort = |msg: String, rows: Vec<PpoIteration>, milestones: Vec<Milestone>| PpoReport {
            model: snapshot.0.clone(),
            value: snapshot.1.clone(),
            iterations: rows,
            milestones,
            aborted: Some(format!("iteration {it}: {msg}")),
        };
        let mut trajs = match collect_rollouts(
            &model,
            &value,
            env,
            grid,
            config.episodes_per_iteration,
            config.seed,
            it as u64,
            config.report_sigma,
        ) {
            Ok(t) => t,
            Err(e) if e.is_numeric() => return Ok(abort(e.to_string(), rows, milestones)),
            Err(e) => return Err(e),
        };
        for t in &mut trajs {
            compute_gae(t, config.gamma, config.lambda);
        }
        let mut samples = flatten_rollouts(&trajs);
        env_steps += samples.len();
        if terms.alpha.is_some() {
            for s in &mut samples {
                let dist = model.forward(&s.obs, s.instruction)?;
                s.target = Some(build_target(
                    &dist,
                    grid,
                    terms.target,
                    TargetContext::Reinforced,
                )?);
            }
        }
        if config.normalize_advantages {
            normalize_advantages(&mut samples);
        }

        let mut policy_loss = 0.0;
        let mut batches = 0usize;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch) {
                let batch: Vec<PpoSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let (l, g) = match ppo_loss(&model, grid, &batch, terms) {
                    Ok(v) => v,
                    Err(e) if e.is_numeric() => return Ok(abort(e.to_string(), rows, milestones)),
                    Err(e) => return Err(e),
                };
                policy_loss += l.loss;
                batches += 1;
                model.sgd_step(&g, config.policy_lr);
            }
        }
        let mut vloss = 0.0;
        let mut vbatches = 0usize;
        for _ in 0..config.value_epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch) {
                let batch: Vec<PpoSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let (l, g) = match value_loss(&value, &batch) {
                    Ok(v) => v,
                    Err(e) if e.is_numeric() => return Ok(abort(e.to_string(), rows, milestones)),
                    Err(e) => return Err(e),
                };
                vloss += l;
                vbatches += 1;
                value.sgd_step(&g, config.value_lr);
            }
        }
        if !model.network().all_finite() || !value.network().all_finite() {
            return Ok(abort("non-finite parameters".into(), rows, milestones));
        }

        let steps: Vec<&StepShape> = trajs.iter().flat_map(|t| &t.shape).collect();
        let mean =
            |f: fn(&StepShape) -> f64| steps.iter().map(|s| f(s)).sum::<f64>() / steps.len() as f64;
        let eval_now = config.eval_episodes > 0
            && (it == config.iterations || (config.eval_every > 0 && it % config.eval_every == 0));
        let eval_success = if eval_now {
            Some(
                evaluate_policy(
                    &model,
                    grid,
                    env,
                    config.eval_episodes,
                    config.seed ^ 0x5eed,
                )?
                .success,
            )
        } else {
            None
        };
        if let Some(s) = eval_success {
            for m in &mut milestones {
                if m.iteration.is_none() && s >= m.threshold {
                    m.iteration = Some(it);
                    m.env_steps = Some(env_steps);
                }
            }
        }
        rows.push(PpoIteration {
            iteration: it,
            env_steps,
            rollout_success: trajs.iter().filter(|t| t.success).count() as f64 / trajs.len() as f64,
            eval_success,
            mean_kl: mean(|s| s.kl_to_target),
            mean_entropy: mean(|s| s.entropy),
            policy_loss: if batches > 0 {
                policy_loss / batches as f64
            } else {
                0.0
            },
            value_loss: if vbatches > 0 {
                vloss / vbatches as f64
            } else {
                0.0
            },
            mean_variance: mean(|s| s.variance),
            mean_fan_width: mean(|s| s.fan_width),
        });
    }
    Ok(PpoReport {
        model,
        value,
        iterations: rows,
        milestones,
        aborted: None,
    })
}

pub fn write_ppo_metrics(path: &Path, rows: &[PpoIteration]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record([
            "iteration",
            "env_steps",
            "rollout_success",
            "eval_success",
            "mean_kl",
            "mean_entropy",
            "policy_loss",
            "value_loss",
            "mean_variance",
            "mean_fan_width",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_milestones(path: &Path, milestones: &[Milestone]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if milestones.is_empty() {
        w.write_record(["threshold", "iteration", "env_steps"])?;
    }
    for m in milestones {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}
