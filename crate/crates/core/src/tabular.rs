//! Exact single-state check of the closed-form KL-shaped trust-region
//! update against brute-force enumeration of the probability simplex.
//!
//! The update maximizes `E_pi[A] - alpha KL(pi || q)` subject to
//! `KL(pi || pi_t) <= eps`; with multiplier `beta` its maximizer is
//! `pi ∝ q^(alpha/(alpha+beta)) pi_t^(beta/(alpha+beta)) exp(Q/(alpha+beta))`.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularProblem {
    /// Current policy, strictly positive.
    pub pi_t: Vec<f64>,
    /// Action values.
    pub q_values: Vec<f64>,
    /// Shaping target, strictly positive.
    pub target: Vec<f64>,
    pub alpha: f64,
    /// Trust-region radius in nats.
    pub eps: f64,
}

fn check_simplex(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::config(format!("{name} must be strictly positive")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::config(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

impl TabularProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.pi_t.len();
        if n == 0 || self.q_values.len() != n || self.target.len() != n {
            return Err(Error::Shape {
                what: "tabular problem",
                expected: n,
                got: self.q_values.len().min(self.target.len()),
            });
        }
        check_simplex("pi_t", &self.pi_t)?;
        check_simplex("target", &self.target)?;
        if self.q_values.iter().any(|q| !q.is_finite()) {
            return Err(Error::config("Q values must be finite"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.pi_t.len()
    }

    /// `A = Q - E_{pi_t}[Q]`.
    pub fn advantages(&self) -> Vec<f64> {
        let v: f64 = self
            .pi_t
            .iter()
            .zip(&self.q_values)
            .map(|(p, q)| p * q)
            .sum();
        self.q_values.iter().map(|q| q - v).collect()
    }

    pub fn with_q(&self, q_values: Vec<f64>) -> Self {
        Self {
            q_values,
            ..self.clone()
        }
    }
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a.ln() - b.ln()))
        .sum()
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `w_a = (alpha log q_a + beta log pi_t[a] + Q_a) / (alpha + beta)`,
/// softmax-normalized.
pub fn closed_form_policy(p: &TabularProblem, beta: f64) -> Result<Vec<f64>> {
    if !(beta >= 0.0) {
        return Err(Error::config(format!("beta must be >= 0, got {beta}")));
    }
    let denom = p.alpha + beta;
    if !(denom > 0.0) {
        return Err(Error::config("alpha + beta must be > 0"));
    }
    let w: Vec<f64> = (0..p.n())
        .map(|a| (p.alpha * p.target[a].ln() + beta * p.pi_t[a].ln() + p.q_values[a]) / denom)
        .collect();
    let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / z).collect())
}

/// Largest number of doublings when bracketing the multiplier.
pub const MAX_DOUBLINGS: usize = 200;

/// Multiplier of the trust-region constraint and the matching policy.
///
/// Zero when the unconstrained solution already satisfies the constraint;
/// otherwise bracket by doubling from `[0, 1]` and bisect until
/// `|KL - eps| <= 1e-10 / max(1, beta)`. The sampled `KL(beta)` values must
/// be non-increasing in `beta`; a violation above `1e-12` is an error.
pub fn solve_beta_star(p: &TabularProblem) -> Result<(f64, Vec<f64>)> {
    p.validate()?;
    let kl_at = |b: f64| -> Result<(f64, Vec<f64>)> {
        let pi = closed_form_policy(p, b)?;
        Ok((kl(&pi, &p.pi_t), pi))
    };
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let (k0, pi0) = kl_at(0.0)?;
    samples.push((0.0, k0));
    if k0 <= p.eps {
        return Ok((0.0, pi0));
    }

    let (mut lo, mut hi) = (0.0, 1.0);
    let mut doublings = 0;
    loop {
        let (k, _) = kl_at(hi)?;
        samples.push((hi, k));
        if k <= p.eps {
            break;
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::Solver(format!(
                "no bracket for the multiplier after {MAX_DOUBLINGS} doublings"
            )));
        }
    }

    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        let (k, pi) = kl_at(mid)?;
        samples.push((mid, k));
        let gap = (k - p.eps).abs();
        if best.as_ref().is_none_or(|(_, g, _)| gap < *g) {
            best = Some((mid, gap, pi));
        }
        if gap <= 1e-10 / mid.max(1.0) || mid <= lo || mid >= hi {
            break;
        }
        if k > p.eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in samples.windows(2) {
        if w[1].1 > w[0].1 + 1e-12 {
            return Err(Error::Solver(format!(
                "KL(pi_beta || pi_t) increased from {} at beta = {} to {} at beta = {}",
                w[0].1, w[0].0, w[1].1, w[1].0
            )));
        }
    }
    let (beta, _, pi) = best.expect("at least one bisection step");
    Ok((beta, pi))
}

/// Calls `f` with every composition of `total` into `parts` non-negative
/// integers, in lexicographic order.
fn for_each_composition(parts: usize, total: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(buf: &mut Vec<usize>, parts: usize, left: usize, f: &mut impl FnMut(&[usize])) {
        if buf.len() + 1 == parts {
            buf.push(left);
            f(buf);
            buf.pop();
            return;
        }
        for k in 0..=left {
            buf.push(k);
            rec(buf, parts, left - k, f);
            buf.pop();
        }
    }
    let mut buf = Vec::with_capacity(parts);
    rec(&mut buf, parts, total, f);
}

/// Shaped trust-region objective written with advantages.
pub fn objective(p: &TabularProblem, pi: &[f64]) -> f64 {
    let a = p.advantages();
    pi.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() - p.alpha * kl(pi, &p.target)
}

/// Brute-force maximizer over the simplex mesh `{k / m}` with
/// `m = 1 / mesh`; entries are clamped to `>= 1e-9` and renormalized, points
/// outside the trust region are skipped, ties keep the first point.
pub fn oracle_solve(p: &TabularProblem, mesh: f64) -> Result<Vec<f64>> {
    p.validate()?;
    if p.n() > 4 {
        return Err(Error::Capacity(format!(
            "oracle enumerates at most 4 actions, got {}",
            p.n()
        )));
    }
    if !(mesh > 0.0 && mesh <= 0.002) {
        return Err(Error::config(format!(
            "mesh step must be in (0, 0.002], got {mesh}"
        )));
    }
    let m = (1.0 / mesh).round();
    if ((1.0 / mesh) - m).abs() > 1e-6 {
        return Err(Error::config(format!(
            "1 / mesh must be an integer, got {}",
            1.0 / mesh
        )));
    }
    let m = m as usize;
    let n = p.n();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pi = vec![0.0; n];
    for_each_composition(n, m, &mut |ks| {
        for (x, &k) in pi.iter_mut().zip(ks) {
            *x = (k as f64 / m as f64).max(1e-9);
        }
        let z: f64 = pi.iter().sum();
        for x in pi.iter_mut() {
            *x /= z;
        }
        if kl(&pi, &p.pi_t) > p.eps {
            return;
        }
        let v = objective(p, &pi);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, pi.clone()));
        }
    });
    best.map(|(_, pi)| pi)
        .ok_or_else(|| Error::Solver("no mesh point lies inside the trust region".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Report {
    pub seed: u64,
    pub beta_star: f64,
    pub tv_distance: f64,
    pub slackness_residual: f64,
    pub shift_error: f64,
    pub min_entry: f64,
    pub passed: bool,
    #[serde(skip)]
    pub failures: Vec<String>,
    #[serde(skip)]
    pub policy: Vec<f64>,
    #[serde(skip)]
    pub oracle: Vec<f64>,
}

/// Checks the closed form against the oracle, its invariance to a constant
/// shift of `Q`, the two interpolation limits, and complementary slackness.
pub fn verify_prop1(p: &TabularProblem, mesh: f64, seed: u64) -> Result<Prop1Report> {
    let (beta, policy) = solve_beta_star(p)?;
    let oracle = oracle_solve(p, mesh)?;
    let mut failures = Vec::new();

    let tv = total_variation(&policy, &oracle);
    let tv_tol = 2.0 * mesh * p.n() as f64;
    if tv > tv_tol {
        failures.push(format!("closed form vs oracle TV {tv:.3e} > {tv_tol:.3e}"));
    }

    let with_adv = closed_form_policy(&p.with_q(p.advantages()), beta)?;
    let shift_error = policy
        .iter()
        .zip(&with_adv)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if shift_error > 1e-12 {
        failures.push(format!("Q vs advantage mismatch {shift_error:.3e}"));
    }

    let frozen = closed_form_policy(p, 1e12)?;
    let tv_frozen = total_variation(&frozen, &p.pi_t);
    if tv_frozen > 1e-6 {
        failures.push(format!("beta -> inf limit TV {tv_frozen:.3e}"));
    }
    let pull = closed_form_policy(&p.with_q(vec![0.0; p.n()]), 0.0)?;
    let tv_pull = total_variation(&pull, &p.target);
    if tv_pull > 1e-12 {
        failures.push(format!("pure-target limit TV {tv_pull:.3e}"));
    }

    let k = kl(&policy, &p.pi_t);
    let slackness_residual = if beta == 0.0 {
        if k > p.eps {
            failures.push(format!("beta* = 0 but KL {k} exceeds eps {}", p.eps));
        }
        0.0
    } else {
        (beta * (k - p.eps)).abs()
    };
    if slackness_residual > 1e-8 {
        failures.push(format!("slackness residual {slackness_residual:.3e}"));
    }

    Ok(Prop1Report {
        seed,
        beta_star: beta,
        tv_distance: tv,
        slackness_residual,
        shift_error,
        min_entry: policy.iter().copied().fold(f64::INFINITY, f64::min),
        passed: failures.is_empty(),
        failures,
        policy,
        oracle,
    })
}

/// A random problem: positive policy and Gaussian-shaped target over `n`
/// evenly spaced actions, values in `[-1, 1]`, `alpha` in `[0.2, 2]`,
/// `eps` in `[0.01, 0.5]`.
pub fn random_problem(seed: u64, n: usize) -> TabularProblem {
    let mut rng = stream_rng(seed, 0);
    let normalize = |v: Vec<f64>| {
        let z: f64 = v.iter().sum();
        v.into_iter().map(|x| x / z).collect::<Vec<f64>>()
    };
    let pi_t = normalize((0..n).map(|_| rng.random_range(0.05..1.0)).collect());
    let mu = rng.random_range(0..n) as f64;
    let sigma: f64 = rng.random_range(0.5..2.0);
    let target = normalize(
        (0..n)
            .map(|i| (-(i as f64 - mu).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect(),
    );
    let q_values = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    TabularProblem {
        pi_t,
        q_values,
        target,
        alpha: rng.random_range(0.2..2.0),
        eps: rng.random_range(0.01..0.5),
    }
}

/// Verifies `count` random problems with seeds `first_seed..`.
pub fn verify_battery(
    count: usize,
    n: usize,
    mesh: f64,
    first_seed: u64,
) -> Result<Vec<Prop1Report>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = first_seed + i;
            verify_prop1(&random_problem(seed, n), mesh, seed)
        })
        .collect()
}

pub fn write_reports(path: &Path, reports: &[Prop1Report]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
