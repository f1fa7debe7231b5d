//! Demonstration files and supervised finetuning: plain NLL, NLL plus the
//! KL shaping term, and the label-smoothing baseline.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::env::{expert_episode, Env, EnvConfig};
use crate::error::{Error, Result};
use crate::eval::evaluate_policy;
use crate::fanreg::{
    build_target, kl_divergence, kl_logit_gradient, TargetContext, TargetDistribution, TargetSpec,
};
use crate::grid::ActionGrid;
use crate::policy::{Parameterized, PolicyModel};
use crate::seeding::stream_rng;

/// Move commands below this magnitude count as "no motion".
pub const NOOP_MOVE_EPS: f64 = 1e-3;

/// A demonstration with actions already snapped to bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub instruction: usize,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// A demonstration as recorded, with continuous actions.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDemonstration {
    pub instruction: usize,
    pub steps: Vec<(Vec<f64>, Vec<f64>)>,
}

/// One `(s, a, l)` training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub instruction: usize,
    pub bins: Vec<usize>,
}

pub fn flatten(demos: &[Demonstration]) -> Vec<Sample> {
    demos
        .iter()
        .flat_map(|d| {
            d.observations.iter().zip(&d.actions).map(|(o, a)| Sample {
                obs: o.clone(),
                instruction: d.instruction,
                bins: a.clone(),
            })
        })
        .collect()
}

/// Records `n` successful expert episodes. Failed episodes are skipped; at
/// most `20 n` episodes are tried.
pub fn collect_expert_demos(
    config: &EnvConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<RawDemonstration>> {
    let mut env = Env::new(config.clone())?;
    let mut out = Vec::with_capacity(n);
    let mut episode = 0u64;
    while out.len() < n {
        if episode >= 20 * n as u64 {
            return Err(Error::config(format!(
                "expert succeeded in only {} of {} episodes",
                out.len(),
                episode
            )));
        }
        let mut rng = stream_rng(seed, episode);
        episode += 1;
        let (steps, instruction, ok) = expert_episode(&mut env, &mut rng)?;
        if ok {
            out.push(RawDemonstration { instruction, steps });
        }
    }
    Ok(out)
}

/// Writes the line-oriented demonstration format: a header `m D`, then one
/// step per line as `demo_id instruction_id t s_1 .. s_m a_1 .. a_D`.
pub fn write_demonstrations(path: &Path, demos: &[RawDemonstration]) -> Result<()> {
    let (m, d) = demos
        .iter()
        .flat_map(|x| x.steps.first())
        .map(|(s, a)| (s.len(), a.len()))
        .next()
        .ok_or_else(|| Error::EmptyDataset(path.to_path_buf()))?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{m} {d}")?;
    for (id, demo) in demos.iter().enumerate() {
        for (t, (s, a)) in demo.steps.iter().enumerate() {
            if s.len() != m || a.len() != d {
                return Err(Error::Shape {
                    what: "demonstration step",
                    expected: m + d,
                    got: s.len() + a.len(),
                });
            }
            write!(w, "{id} {} {t}", demo.instruction)?;
            for v in s.iter().chain(a) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a demonstration file and snaps it with [`snap_demonstrations`].
pub fn load_demonstrations(path: &Path, grid: &ActionGrid) -> Result<Vec<Demonstration>> {
    let reader = BufReader::new(File::open(path)?);
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut header: Option<(usize, usize)> = None;
    let mut raw: Vec<(usize, RawDemonstration, usize)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let Some((m, d)) = header else {
            let fields: Vec<&str> = text.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(perr(lineno, "header must be `m D`".into()));
            }
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| perr(lineno, format!("header: {e}")))
            };
            let (m, d) = (parse(fields[0])?, parse(fields[1])?);
            if d != grid.dims() {
                return Err(perr(
                    lineno,
                    format!("file has {d} action dimensions, grid has {}", grid.dims()),
                ));
            }
            header = Some((m, d));
            continue;
        };
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 3 + m + d {
            return Err(perr(
                lineno,
                format!("expected {} fields, found {}", 3 + m + d, fields.len()),
            ));
        }
        let int = |k: usize, what: &str| {
            fields[k]
                .parse::<usize>()
                .map_err(|e| perr(lineno, format!("{what}: {e}")))
        };
        let (demo_id, instruction, t) =
            (int(0, "demo_id")?, int(1, "instruction_id")?, int(2, "t")?);
        let mut values = Vec::with_capacity(m + d);
        for (k, f) in fields[3..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|e| perr(lineno, format!("field {}: {e}", k + 4)))?;
            if !v.is_finite() {
                return Err(perr(lineno, format!("field {} is not finite", k + 4)));
            }
            values.push(v);
        }
        let action = values.split_off(m);

        match raw.last_mut() {
            Some((id, demo, next_t)) if *id == demo_id => {
                if demo.instruction != instruction {
                    return Err(perr(
                        lineno,
                        "instruction changes within a demonstration".into(),
                    ));
                }
                if t != *next_t {
                    return Err(perr(lineno, format!("expected t = {next_t}, found {t}")));
                }
                *next_t += 1;
                demo.steps.push((values, action));
            }
            _ => {
                if raw.iter().any(|(id, _, _)| *id == demo_id) {
                    return Err(perr(
                        lineno,
                        format!("demonstration {demo_id} is not contiguous"),
                    ));
                }
                if t != 0 {
                    return Err(perr(
                        lineno,
                        format!("demonstration {demo_id} must start at t = 0"),
                    ));
                }
                raw.push((
                    demo_id,
                    RawDemonstration {
                        instruction,
                        steps: vec![(values, action)],
                    },
                    1,
                ));
            }
        }
    }

    let demos = snap_demonstrations(raw.into_iter().map(|(_, r, _)| r).collect(), grid)?;
    if demos.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    Ok(demos)
}

/// Snaps continuous actions to bins and drops no-op steps: all move
/// components below [`NOOP_MOVE_EPS`] with the gripper intent unchanged from
/// the previous kept step (episodes start open). Demonstrations left empty
/// are dropped.
pub fn snap_demonstrations(
    raw: Vec<RawDemonstration>,
    grid: &ActionGrid,
) -> Result<Vec<Demonstration>> {
    let mut demos = Vec::with_capacity(raw.len());
    for r in raw {
        let mut obs = Vec::new();
        let mut acts = Vec::new();
        let mut closed = false;
        for (s, a) in r.steps {
            let now_closed = a.last().is_some_and(|&g| g > 0.0);
            let still = a[..a.len().saturating_sub(1)]
                .iter()
                .all(|x| x.abs() < NOOP_MOVE_EPS);
            if still && now_closed == closed {
                continue;
            }
            closed = now_closed;
            acts.push(grid.encode(&a)?);
            obs.push(s);
        }
        if !acts.is_empty() {
            demos.push(Demonstration {
                instruction: r.instruction,
                observations: obs,
                actions: acts,
            });
        }
    }
    Ok(demos)
}

/// Supervised objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SftObjective {
    /// Mean negative log-likelihood of the demonstrated bins.
    Nll,
    /// NLL plus `alpha` times the KL from the policy to a target built from
    /// the policy itself.
    Shaped { alpha: f64, target: TargetSpec },
    /// Cross-entropy against a label-smoothed one-hot.
    LabelSmoothing { eps: f64 },
}

impl SftObjective {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SftObjective::Nll => Ok(()),
            SftObjective::Shaped { alpha, target } => {
                if !(alpha >= 0.0 && alpha.is_finite()) {
                    return Err(Error::config(format!(
                        "sft.alpha must be >= 0, got {alpha}"
                    )));
                }
                if matches!(target, TargetSpec::LabelSmoothing { .. }) {
                    return Err(Error::config("label smoothing is not a KL target"));
                }
                target.validate()
            }
            SftObjective::LabelSmoothing { eps } => TargetSpec::LabelSmoothing { eps }.validate(),
        }
    }
}

/// Loss breakdown for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SftLoss {
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub entropy: f64,
}

const CHUNK: usize = 16;

/// Mean loss and parameter gradient over `batch`. Gradient accumulation is
/// chunked and merged in batch order, so the result does not depend on the
/// number of worker threads.
pub fn sft_loss(
    model: &PolicyModel,
    grid: &ActionGrid,
    batch: &[Sample],
    objective: SftObjective,
) -> Result<(SftLoss, Vec<f64>)> {
    sft_loss_with_targets(model, grid, batch, objective, None)
}

/// Shaping targets the current model induces on `batch`, one per sample;
/// `None` for objectives without a KL term.
pub fn sft_targets(
    model: &PolicyModel,
    grid: &ActionGrid,
    batch: &[Sample],
    objective: SftObjective,
) -> Result<Option<Vec<TargetDistribution>>> {
    let SftObjective::Shaped { target, .. } = objective else {
        return Ok(None);
    };
    batch
        .iter()
        .map(|s| {
            let dist = model.forward(&s.obs, s.instruction)?;
            build_target(
                &dist,
                grid,
                target,
                TargetContext::Supervised { demo_bins: &s.bins },
            )
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// [`sft_loss`] with the shaping targets supplied instead of rebuilt from
/// the model, e.g. frozen at another parameter point.
pub fn sft_loss_with_targets(
    model: &PolicyModel,
    grid: &ActionGrid,
    batch: &[Sample],
    objective: SftObjective,
    targets: Option<&[TargetDistribution]>,
) -> Result<(SftLoss, Vec<f64>)> {
    if let Some(t) = targets {
        if t.len() != batch.len() {
            return Err(Error::Shape {
                what: "frozen targets",
                expected: batch.len(),
                got: t.len(),
            });
        }
    }
    if batch.is_empty() {
        return Err(Error::config("sft_loss on an empty batch"));
    }
    objective.validate()?;
    let n = model.num_params();
    let scale = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(SftLoss, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grad = vec![0.0; n];
            let mut acc = SftLoss::default();
            for (k, s) in chunk.iter().enumerate() {
                let frozen = targets.map(|t| &t[c * CHUNK + k]);
                let (parts, upstream, acts) = sample_terms(model, grid, s, objective, frozen)?;
                acc.loss += parts.loss;
                acc.nll += parts.nll;
                acc.kl += parts.kl;
                acc.entropy += parts.entropy;
                model.backward_cached(&acts, &upstream, &mut grad)?;
            }
            Ok((acc, grad))
        })
        .collect();

    let mut total = SftLoss::default();
    let mut grad = vec![0.0; n];
    for part in partials {
        let (l, g) = part?;
        total.loss += l.loss;
        total.nll += l.nll;
        total.kl += l.kl;
        total.entropy += l.entropy;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    total.loss *= scale;
    total.nll *= scale;
    total.kl *= scale;
    total.entropy *= scale;
    for g in &mut grad {
        *g *= scale;
    }
    if !total.loss.is_finite() {
        return Err(Error::numeric(format!("SFT loss is {}", total.loss)));
    }
    Ok((total, grad))
}

fn sample_terms(
    model: &PolicyModel,
    grid: &ActionGrid,
    s: &Sample,
    objective: SftObjective,
    frozen: Option<&TargetDistribution>,
) -> Result<(SftLoss, Vec<f64>, crate::policy::Activations)> {
    let (dist, acts) = model.forward_cached(&s.obs, s.instruction)?;
    let bins = dist.bins();
    let mut parts = SftLoss {
        entropy: dist.entropy(),
        ..SftLoss::default()
    };
    let upstream = match objective {
        SftObjective::Nll => {
            let nll = -dist.log_prob(&s.bins)?;
            parts.nll = nll;
            parts.loss = nll;
            dist.log_prob_logit_grad(&s.bins)?
                .into_iter()
                .map(|g| -g)
                .collect()
        }
        SftObjective::Shaped { alpha, target } => {
            let nll = -dist.log_prob(&s.bins)?;
            let built;
            let q = match frozen {
                Some(q) => q,
                None => {
                    built = build_target(
                        &dist,
                        grid,
                        target,
                        TargetContext::Supervised { demo_bins: &s.bins },
                    )?;
                    &built
                }
            };
            let kl = kl_divergence(&dist, q)?;
            parts.nll = nll;
            parts.kl = kl;
            parts.loss = nll + alpha * kl;
            let kl_grad = kl_logit_gradient(&dist, q)?;
            dist.log_prob_logit_grad(&s.bins)?
                .into_iter()
                .zip(kl_grad)
                .map(|(g, k)| -g + alpha * k)
                .collect()
        }
        SftObjective::LabelSmoothing { eps } => {
            let q = build_target(
                &dist,
                grid,
                TargetSpec::LabelSmoothing { eps },
                TargetContext::Supervised { demo_bins: &s.bins },
            )?;
            let mut ce = 0.0;
            let mut up = Vec::with_capacity(dist.dims() * bins);
            for d in 0..dist.dims() {
                for ((&qj, &lp), &p) in q.q(d).iter().zip(dist.log_probs(d)).zip(dist.probs(d)) {
                    if qj > 0.0 {
                        ce += qj * lp;
                    }
                    up.push(p - qj);
                }
            }
            parts.nll = -dist.log_prob(&s.bins)?;
            parts.loss = -ce;
            up
        }
    };
    Ok((parts, upstream, acts))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftConfig {
    pub objective: SftObjective,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Greedy evaluation episodes per evaluated epoch; 0 disables.
    pub eval_episodes: usize,
    /// Evaluate every this many epochs (and always after the last one).
    pub eval_every: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            objective: SftObjective::Nll,
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            eval_episodes: 0,
            eval_every: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "sft.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("sft.batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// One row of the SFT metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SftEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub nll: f64,
    pub kl: f64,
    pub entropy: f64,
    pub eval_success: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SftReport {
    pub model: PolicyModel,
    pub epochs: Vec<SftEpoch>,
    /// Set when training stopped early; `model` is then the last finite one.
    pub aborted: Option<String>,
}

/// Loss above which a run counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Minibatch gradient descent over shuffled `(demo, step)` pairs.
///
/// When `eval_env` is given and `eval_episodes > 0`, greedy success on that
/// environment is logged at the configured cadence.
pub fn train_sft(
    model: &PolicyModel,
    grid: &ActionGrid,
    demos: &[Demonstration],
    config: &SftConfig,
    eval_env: Option<&EnvConfig>,
) -> Result<SftReport> {
    config.validate()?;
    let samples = flatten(demos);
    if samples.is_empty() {
        return Err(Error::EmptyDataset(PathBuf::from("<memory>")));
    }
    let mut model = model.clone();
    let mut rng = stream_rng(config.seed, 0);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let last_good = model.clone();
        let mut acc = SftLoss::default();
        let mut weight = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (parts, grad) = match sft_loss(&model, grid, &batch, config.objective) {
                Ok(v) => v,
                Err(e) if e.is_numeric() => {
                    return Ok(SftReport {
                        model: last_good,
                        epochs,
                        aborted: Some(format!("epoch {epoch}: {e}")),
                    })
                }
                Err(e) => return Err(e),
            };
            if parts.loss > DIVERGENCE_LIMIT {
                return Ok(SftReport {
                    model: last_good,
                    epochs,
                    aborted: Some(format!(
                        "epoch {epoch}: loss {} exceeds {DIVERGENCE_LIMIT}",
                        parts.loss
                    )),
                });
            }
            let w = batch.len() as f64;
            acc.loss += parts.loss * w;
            acc.nll += parts.nll * w;
            acc.kl += parts.kl * w;
            acc.entropy += parts.entropy * w;
            weight += w;
            model.sgd_step(&grad, config.learning_rate);
        }
        if !model.network().all_finite() {
            return Ok(SftReport {
                model: last_good,
                epochs,
                aborted: Some(format!("epoch {epoch}: non-finite parameters")),
            });
        }
        let eval_now = config.eval_episodes > 0
            && (epoch == config.epochs
                || (config.eval_every > 0 && epoch % config.eval_every == 0));
        let eval_success = match (eval_env, eval_now) {
            (Some(env), true) => Some(
                evaluate_policy(
                    &model,
                    grid,
                    env,
                    config.eval_episodes,
                    config.seed ^ 0x5eed,
                )?
                .success,
            ),
            _ => None,
        };
        epochs.push(SftEpoch {
            epoch,
            loss: acc.loss / weight,
            nll: acc.nll / weight,
            kl: acc.kl / weight,
            entropy: acc.entropy / weight,
            eval_success,
        });
    }
    Ok(SftReport {
        model,
        epochs,
        aborted: None,
    })
}

pub fn write_sft_metrics(path: &Path, rows: &[SftEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["epoch", "loss", "nll", "kl", "entropy", "eval_success"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
