//! Target distributions over action bins and the KL shaping regularizer.
//!
//! Every target is a proper per-dimension categorical over the grid bins, so
//! `KL(pi || q)` is well defined and decomposes into a sum over dimensions.
//! Targets are constants with respect to the policy parameters: the mode and
//! the adaptive width are read off the current policy and then frozen.

use crate::error::{Error, Result};
use crate::grid::ActionGrid;
use crate::policy::ActionDistribution;

/// Which target to regularize toward. Widths are in action units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec {
    /// Discretized Gaussian with fixed standard deviation, centered on the
    /// policy mode.
    FixedGaussian { sigma: f64 },
    /// Discretized Gaussian whose variance is the policy's own variance around
    /// its mode, floored at `sigma_min^2`.
    AdaptiveGaussian { sigma_min: f64 },
    /// The policy convolved with a Gaussian kernel of width `kappa`.
    KernelSmoothed { kappa: f64 },
    /// Cross-entropy target for SFT: `1 - eps` on the demonstrated bin.
    LabelSmoothing { eps: f64 },
    /// Uniform target; `KL(pi || U) = log B - H(pi)`.
    Entropy,
}

impl TargetSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TargetSpec::FixedGaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::config(format!("target.sigma must be > 0, got {sigma}")),
            ),
            TargetSpec::AdaptiveGaussian { sigma_min }
                if !(sigma_min > 0.0 && sigma_min.is_finite()) =>
            {
                Err(Error::config(format!(
                    "target.sigma_min must be > 0, got {sigma_min}"
                )))
            }
            TargetSpec::KernelSmoothed { kappa } if !(kappa > 0.0 && kappa.is_finite()) => Err(
                Error::config(format!("target.kappa must be > 0, got {kappa}")),
            ),
            TargetSpec::LabelSmoothing { eps } if !(0.0..1.0).contains(&eps) => Err(Error::config(
                format!("target.label_smoothing must be in [0, 1), got {eps}"),
            )),
            _ => Ok(()),
        }
    }

    /// Adaptive target with the floor at half a bin width.
    pub fn adaptive_default(grid: &ActionGrid) -> Self {
        let w = (0..grid.dims())
            .map(|d| grid.bin_width(d))
            .fold(f64::INFINITY, f64::min);
        TargetSpec::AdaptiveGaussian { sigma_min: 0.5 * w }
    }
}

/// Where a target is requested. Label smoothing only exists when a
/// demonstrated bin is available.
#[derive(Debug, Clone, Copy)]
pub enum TargetContext<'a> {
    Supervised { demo_bins: &'a [usize] },
    Reinforced,
}

/// Per-dimension normalized probabilities over bins.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    bins: usize,
    log_q: Vec<f64>,
    q: Vec<f64>,
    mode: Vec<f64>,
}

impl TargetDistribution {
    fn from_log_weights(bins: usize, log_w: Vec<f64>, mode: Vec<f64>) -> Self {
        let mut log_q = Vec::with_capacity(log_w.len());
        for row in log_w.chunks_exact(bins) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
            log_q.extend(row.iter().map(|w| w - lse));
        }
        let q = log_q.iter().map(|l| l.exp()).collect();
        Self {
            bins,
            log_q,
            q,
            mode,
        }
    }

    fn from_weights(bins: usize, w: Vec<f64>, mode: Vec<f64>) -> Self {
        let mut q = Vec::with_capacity(w.len());
        for row in w.chunks_exact(bins) {
            let total: f64 = row.iter().sum();
            q.extend(row.iter().map(|x| x / total));
        }
        let log_q = q.iter().map(|p: &f64| p.ln()).collect();
        Self {
            bins,
            log_q,
            q,
            mode,
        }
    }

    /// Builds a target directly from rows of probabilities (normalized here).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let bins = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != bins) || bins == 0 {
            return Err(Error::config(
                "target rows must be non-empty and equal length",
            ));
        }
        if rows.iter().flatten().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::numeric(
                "target probabilities must be strictly positive",
            ));
        }
        let w: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(Self::from_weights(bins, w, vec![f64::NAN; rows.len()]))
    }

    pub fn dims(&self) -> usize {
        self.mode.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn q(&self, d: usize) -> &[f64] {
        &self.q[d * self.bins..(d + 1) * self.bins]
    }

    pub fn log_q(&self, d: usize) -> &[f64] {
        &self.log_q[d * self.bins..(d + 1) * self.bins]
    }

    /// Gaussian center per dimension in action units (NaN for targets
    /// without one).
    pub fn mode(&self) -> &[f64] {
        &self.mode
    }
}

fn check_compat(dist: &ActionDistribution, grid: &ActionGrid) -> Result<()> {
    if grid.bins() < 2 {
        return Err(Error::config("target needs at least two bins"));
    }
    if dist.dims() != grid.dims() || dist.bins() != grid.bins() {
        return Err(Error::Shape {
            what: "distribution vs grid",
            expected: grid.dims() * grid.bins(),
            got: dist.dims() * dist.bins(),
        });
    }
    Ok(())
}

/// Discretized Gaussian centered on the policy's per-dimension mode.
pub fn gaussian_target(
    dist: &ActionDistribution,
    grid: &ActionGrid,
    spec: TargetSpec,
) -> Result<TargetDistribution> {
    check_compat(dist, grid)?;
    spec.validate()?;
    let bins = grid.bins();
    let modes = dist.argmax();
    let mut log_w = Vec::with_capacity(grid.dims() * bins);
    let mut centers_mu = Vec::with_capacity(grid.dims());
    for (d, &m) in modes.iter().enumerate() {
        let c = grid.centers(d);
        let mu = c[m];
        let var = match spec {
            TargetSpec::FixedGaussian { sigma } => sigma * sigma,
            TargetSpec::AdaptiveGaussian { sigma_min } => {
                let spread: f64 = dist
                    .probs(d)
                    .iter()
                    .zip(&c)
                    .map(|(p, x)| p * (x - mu).powi(2))
                    .sum();
                spread.max(sigma_min * sigma_min)
            }
            _ => {
                return Err(Error::config(
                    "gaussian_target needs a fixed or adaptive Gaussian spec",
                ))
            }
        };
        log_w.extend(c.iter().map(|x| -(x - mu).powi(2) / (2.0 * var)));
        centers_mu.push(mu);
    }
    Ok(TargetDistribution::from_log_weights(
        bins, log_w, centers_mu,
    ))
}

/// `q = normalize(K_kappa * pi)` with a Gaussian kernel over bin centers.
pub fn kernel_smoothed_target(
    dist: &ActionDistribution,
    grid: &ActionGrid,
    kappa: f64,
) -> Result<TargetDistribution> {
    check_compat(dist, grid)?;
    TargetSpec::KernelSmoothed { kappa }.validate()?;
    let bins = grid.bins();
    let mut w = Vec::with_capacity(grid.dims() * bins);
    for d in 0..grid.dims() {
        let c = grid.centers(d);
        let p = dist.probs(d);
        for &x in &c {
            let s: f64 = c
                .iter()
                .zip(p)
                .map(|(y, pj)| (-(x - y).powi(2) / (2.0 * kappa * kappa)).exp() * pj)
                .sum();
            w.push(s);
        }
    }
    Ok(TargetDistribution::from_weights(
        bins,
        w,
        vec![f64::NAN; grid.dims()],
    ))
}

/// Label-smoothing and uniform (entropy) targets.
pub fn baseline_target(
    dist: &ActionDistribution,
    grid: &ActionGrid,
    spec: TargetSpec,
    ctx: TargetContext<'_>,
) -> Result<TargetDistribution> {
    check_compat(dist, grid)?;
    spec.validate()?;
    let bins = grid.bins();
    let nan_mode = vec![f64::NAN; grid.dims()];
    match spec {
        TargetSpec::Entropy => Ok(TargetDistribution::from_weights(
            bins,
            vec![1.0; grid.dims() * bins],
            nan_mode,
        )),
        TargetSpec::LabelSmoothing { eps } => {
            let TargetContext::Supervised { demo_bins } = ctx else {
                return Err(Error::config(
                    "label smoothing needs a demonstrated action and cannot be used in RL finetuning",
                ));
            };
            if demo_bins.len() != grid.dims() {
                return Err(Error::Shape {
                    what: "demonstrated bins",
                    expected: grid.dims(),
                    got: demo_bins.len(),
                });
            }
            let off = eps / (bins - 1) as f64;
            let mut q = vec![off; grid.dims() * bins];
            for (d, &j) in demo_bins.iter().enumerate() {
                if j >= bins {
                    return Err(Error::Index {
                        what: "bin",
                        index: j,
                        limit: bins,
                    });
                }
                q[d * bins + j] = 1.0 - eps;
            }
            let log_q = q.iter().map(|x: &f64| x.ln()).collect();
            Ok(TargetDistribution {
                bins,
                log_q,
                q,
                mode: nan_mode,
            })
        }
        _ => Err(Error::config(
            "baseline_target needs a label-smoothing or entropy spec",
        )),
    }
}

/// Dispatches on the target kind.
pub fn build_target(
    dist: &ActionDistribution,
    grid: &ActionGrid,
    spec: TargetSpec,
    ctx: TargetContext<'_>,
) -> Result<TargetDistribution> {
    match spec {
        TargetSpec::FixedGaussian { .. } | TargetSpec::AdaptiveGaussian { .. } => {
            gaussian_target(dist, grid, spec)
        }
        TargetSpec::KernelSmoothed { kappa } => kernel_smoothed_target(dist, grid, kappa),
        TargetSpec::LabelSmoothing { .. } | TargetSpec::Entropy => {
            baseline_target(dist, grid, spec, ctx)
        }
    }
}

/// Copies the policy into dimensions `from..` of `q`, so they add neither
/// KL nor gradient.
pub fn pass_through_from(
    q: &TargetDistribution,
    dist: &ActionDistribution,
    from: usize,
) -> Result<TargetDistribution> {
    check_shapes(dist, q)?;
    let mut out = q.clone();
    let b = q.bins;
    for d in from..q.dims() {
        out.log_q[d * b..(d + 1) * b].copy_from_slice(dist.log_probs(d));
        out.q[d * b..(d + 1) * b].copy_from_slice(dist.probs(d));
    }
    Ok(out)
}

fn check_shapes(dist: &ActionDistribution, q: &TargetDistribution) -> Result<()> {
    if dist.dims() != q.dims() || dist.bins() != q.bins() {
        return Err(Error::Shape {
            what: "target",
            expected: dist.dims() * dist.bins(),
            got: q.dims() * q.bins(),
        });
    }
    Ok(())
}

/// `sum_d sum_j pi_dj (log pi_dj - log q_dj)`, in log space.
pub fn kl_divergence(dist: &ActionDistribution, q: &TargetDistribution) -> Result<f64> {
    check_shapes(dist, q)?;
    let mut kl = 0.0;
    for d in 0..dist.dims() {
        for ((p, lp), lq) in dist.probs(d).iter().zip(dist.log_probs(d)).zip(q.log_q(d)) {
            if *p > 0.0 {
                kl += p * (lp - lq);
            }
        }
    }
    Ok(kl)
}

/// Gradient of [`kl_divergence`] with respect to the policy logits, target
/// held fixed: `p_k (u_k - sum_j p_j u_j)` with `u = log p - log q`.
pub fn kl_logit_gradient(dist: &ActionDistribution, q: &TargetDistribution) -> Result<Vec<f64>> {
    check_shapes(dist, q)?;
    let mut g = Vec::with_capacity(dist.dims() * dist.bins());
    for d in 0..dist.dims() {
        let p = dist.probs(d);
        let u: Vec<f64> = dist
            .log_probs(d)
            .iter()
            .zip(q.log_q(d))
            .map(|(a, b)| a - b)
            .collect();
        let mean: f64 = p
            .iter()
            .zip(&u)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, u)| p * u)
            .sum();
        g.extend(
            p.iter()
                .zip(&u)
                .map(|(p, u)| if *p > 0.0 { p * (u - mean) } else { 0.0 }),
        );
    }
    Ok(g)
}

/// Plain gradient descent with step `lr` on the logits of `dist` against
/// the fixed target `q`. Returns the KL before every step and after the
/// last one.
pub fn kl_descent(
    dist: &ActionDistribution,
    q: &TargetDistribution,
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>> {
    let (dims, bins) = (dist.dims(), dist.bins());
    let mut logits: Vec<f64> = (0..dims).flat_map(|d| dist.logits(d).to_vec()).collect();
    let mut cur = dist.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        trace.push(kl_divergence(&cur, q)?);
        let g = kl_logit_gradient(&cur, q)?;
        for (z, g) in logits.iter_mut().zip(&g) {
            *z -= lr * g;
        }
        cur = ActionDistribution::from_logits(dims, bins, logits.clone())?;
    }
    trace.push(kl_divergence(&cur, q)?);
    Ok(trace)
}
