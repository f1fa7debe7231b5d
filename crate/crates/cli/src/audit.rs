//! Finite-difference and shaping audits on seeded tiny models.

use rand::Rng;
use serde::Serialize;

use fan_core::fanreg::{
    build_target, gaussian_target, kl_descent, kl_divergence, kl_logit_gradient,
};
use fan_core::policy::finite_diff_check;
use fan_core::rft::{ppo_loss, value_loss, PpoSample, PpoTerms};
use fan_core::seeding::stream_rng;
use fan_core::sft::{sft_loss, Sample, SftObjective};
use fan_core::{
    ActionDistribution, ActionGrid, Parameterized, PolicyModel, Result, TargetContext, TargetSpec,
    ValueModel,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub check: String,
    pub seed: u64,
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl AuditRow {
    fn new(check: &str, seed: u64, error: f64, tolerance: f64) -> Self {
        Self {
            check: check.into(),
            seed,
            error,
            tolerance,
            passed: error <= tolerance,
        }
    }
}

const OBS: usize = 4;
const FD_STEP: f64 = 1e-6;
const COORDS: usize = 200;

fn tiny_grid() -> ActionGrid {
    ActionGrid::uniform(3, -1.0, 1.0, 5).expect("static grid")
}

fn tiny_models(seed: u64) -> Result<(PolicyModel, ValueModel)> {
    let g = tiny_grid();
    Ok((
        PolicyModel::new(OBS, 2, 2, vec![8], &g, seed)?,
        ValueModel::new(OBS, 2, 2, vec![8], seed ^ 0x5a5a)?,
    ))
}

fn random_obs<R: Rng>(rng: &mut R) -> Vec<f64> {
    (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn sft_batch(model: &PolicyModel, seed: u64, n: usize) -> Vec<Sample> {
    let mut rng = stream_rng(seed, 1);
    (0..n)
        .map(|i| Sample {
            obs: random_obs(&mut rng),
            instruction: i % 2,
            bins: (0..model.dims())
                .map(|_| rng.random_range(0..model.bins()))
                .collect(),
        })
        .collect()
}

fn ppo_batch(model: &PolicyModel, seed: u64, n: usize) -> Result<Vec<PpoSample>> {
    let mut rng = stream_rng(seed, 2);
    (0..n)
        .map(|i| {
            let obs = random_obs(&mut rng);
            let l = i % 2;
            let d = model.forward(&obs, l)?;
            let bins = d.sample(&mut rng);
            let lp = d.log_prob(&bins)?;
            Ok(PpoSample {
                obs,
                instruction: l,
                bins,
                // ratios stay inside the clip band, clear of its kinks
                behavior_log_prob: lp + rng.random_range(-0.1..0.1),
                advantage: rng.random_range(-1.0..1.0),
                ret: rng.random_range(-1.0..1.0),
                target: None,
            })
        })
        .collect()
}

/// Mean KL to targets frozen at the model's current parameters.
fn frozen_kl_loss(
    model: &PolicyModel,
    batch: &[Sample],
    targets: &[fan_core::TargetDistribution],
) -> Result<(f64, Vec<f64>)> {
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.num_params()];
    for (s, q) in batch.iter().zip(targets) {
        let dist = model.forward(&s.obs, s.instruction)?;
        loss += scale * kl_divergence(&dist, q)?;
        let up: Vec<f64> = kl_logit_gradient(&dist, q)?
            .iter()
            .map(|g| g * scale)
            .collect();
        let g = model.backward(&s.obs, s.instruction, &up)?;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss, grad))
}

/// Central differences on raw logits of a KL with a fixed target.
fn kl_logit_check(seed: u64) -> Result<f64> {
    let g = tiny_grid();
    let mut rng = stream_rng(seed, 3);
    let (dims, bins) = (g.dims(), g.bins());
    let logits: Vec<f64> = (0..dims * bins)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let dist = ActionDistribution::from_logits(dims, bins, logits.clone())?;
    let q = gaussian_target(&dist, &g, TargetSpec::FixedGaussian { sigma: 0.3 })?;
    let analytic = kl_logit_gradient(&dist, &q)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..logits.len() {
        let mut z = logits.clone();
        z[i] += h;
        let plus = kl_divergence(&ActionDistribution::from_logits(dims, bins, z.clone())?, &q)?;
        z[i] -= 2.0 * h;
        let minus = kl_divergence(&ActionDistribution::from_logits(dims, bins, z)?, &q)?;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max((analytic[i] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}

/// Every gradient audit for one seed.
pub fn gradient_audits(seed: u64) -> Result<Vec<AuditRow>> {
    let g = tiny_grid();
    let (policy, value) = tiny_models(seed)?;
    let sb = sft_batch(&policy, seed, 12);
    let pb = ppo_batch(&policy, seed, 12)?;

    let nll = finite_diff_check(
        &policy,
        |m: &PolicyModel| sft_loss(m, &g, &sb, SftObjective::Nll).map(|(l, gr)| (l.loss, gr)),
        COORDS,
        FD_STEP,
        seed,
    )?;

    let spec = TargetSpec::FixedGaussian { sigma: 0.3 };
    let targets = sb
        .iter()
        .map(|s| {
            let dist = policy.forward(&s.obs, s.instruction)?;
            build_target(&dist, &g, spec, TargetContext::Reinforced)
        })
        .collect::<Result<Vec<_>>>()?;
    let kl = finite_diff_check(
        &policy,
        |m: &PolicyModel| frozen_kl_loss(m, &sb, &targets),
        COORDS,
        FD_STEP,
        seed,
    )?;

    let vmse = finite_diff_check(
        &value,
        |v: &ValueModel| value_loss(v, &pb),
        COORDS,
        FD_STEP,
        seed,
    )?;

    let ppo = finite_diff_check(
        &policy,
        |m: &PolicyModel| ppo_loss(m, &g, &pb, PpoTerms::plain(0.2)).map(|(l, gr)| (l.loss, gr)),
        COORDS,
        FD_STEP,
        seed,
    )?;
    let fan_terms = PpoTerms {
        alpha: Some(1.0),
        target: spec,
        ..PpoTerms::plain(0.2)
    };
    let fan_ppo = finite_diff_check(
        &policy,
        |m: &PolicyModel| ppo_loss(m, &g, &pb, fan_terms).map(|(l, gr)| (l.loss, gr)),
        COORDS,
        FD_STEP,
        seed,
    )?;

    Ok(vec![
        AuditRow::new("nll", seed, nll, 1e-5),
        AuditRow::new("kl-params", seed, kl, 1e-5),
        AuditRow::new("kl-logits", seed, kl_logit_check(seed)?, 1e-7),
        AuditRow::new("value-mse", seed, vmse, 1e-5),
        AuditRow::new("ppo", seed, ppo, 1e-4),
        AuditRow::new("fan-ppo", seed, fan_ppo, 1e-4),
    ])
}

/// Outcome of KL-only descent from one random start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentRow {
    pub seed: u64,
    pub initial_kl: f64,
    pub final_kl: f64,
    /// First step with KL below the threshold, if reached.
    pub steps_to_threshold: Option<usize>,
    pub monotone: bool,
}

/// Gradient descent on the KL term alone, from random logits against the
/// fixed-variance Gaussian centered at the starting mode.
pub fn kl_descent_audit(
    grid: &ActionGrid,
    sigma: f64,
    seed: u64,
    lr: f64,
    steps: usize,
    threshold: f64,
) -> Result<DescentRow> {
    let mut rng = stream_rng(seed, 4);
    let (dims, bins) = (grid.dims(), grid.bins());
    let logits: Vec<f64> = (0..dims * bins)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();
    let dist = ActionDistribution::from_logits(dims, bins, logits)?;
    let q = gaussian_target(&dist, grid, TargetSpec::FixedGaussian { sigma })?;
    let trace = kl_descent(&dist, &q, lr, steps)?;
    Ok(DescentRow {
        seed,
        initial_kl: trace[0],
        final_kl: *trace.last().expect("trace has steps + 1 entries"),
        steps_to_threshold: trace.iter().position(|&k| k < threshold),
        monotone: trace.windows(2).all(|w| w[1] <= w[0]),
    })
}
