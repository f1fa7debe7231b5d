//! Feed-forward policy and value networks with hand-written reverse mode.
//!
//! Every network stores its parameters in one flat `Vec<f64>` so that SGD,
//! finite differences and checkpointing all operate on the same buffer. The
//! layout, in declaration order, is:
//!
//! 1. instruction embedding table, `instructions x embed_dim`, row-major;
//! 2. for each layer: weights `out x in` (row-major), then biases `out`.
//!
//! Hidden layers use `tanh`; the output layer is linear.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::ActionGrid;

/// Layer sizes of a network. `out_dim` is `D * B` for a policy and 1 for a
/// value head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetShape {
    pub obs_dim: usize,
    pub embed_dim: usize,
    pub instructions: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
}

impl NetShape {
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.embed_dim
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.out_dim));
        dims
    }

    pub fn embedding_len(&self) -> usize {
        self.instructions * self.embed_dim
    }

    pub fn num_params(&self) -> usize {
        self.embedding_len() + self.layers().iter().map(|&(i, o)| i * o + o).sum::<usize>()
    }

    fn validate(&self) -> Result<()> {
        if self.instructions == 0 {
            return Err(Error::config("network needs at least one instruction id"));
        }
        if self.out_dim == 0 || self.input_dim() == 0 {
            return Err(Error::config("network input and output must be non-empty"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Access to a flat parameter vector; lets finite-difference audits and
/// optimizers treat policy and value networks alike.
pub trait Parameterized {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Plain gradient descent step.
    fn sgd_step(&mut self, grad: &[f64], lr: f64) {
        for (p, g) in self.params_mut().iter_mut().zip(grad) {
            *p -= lr * g;
        }
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    instruction: usize,
    /// `layer_inputs[k]` is the input of affine layer `k`.
    layer_inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    shape: NetShape,
    seed: u64,
    params: Vec<f64>,
}

impl Network {
    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero, embeddings uniform
    /// in `+-1`.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shape.num_params());
        for _ in 0..shape.embedding_len() {
            params.push(rng.random_range(-1.0..1.0));
        }
        for (fan_in, fan_out) in shape.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            shape,
            seed,
            params,
        })
    }

    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let params = vec![0.0; shape.num_params()];
        Ok(Self {
            shape,
            seed: 0,
            params,
        })
    }

    pub fn from_params(shape: NetShape, seed: u64, params: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.num_params() {
            return Err(Error::Shape {
                what: "parameter vector",
                expected: shape.num_params(),
                got: params.len(),
            });
        }
        Ok(Self {
            shape,
            seed,
            params,
        })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_inputs(&self, obs: &[f64], instruction: usize) -> Result<()> {
        if obs.len() != self.shape.obs_dim {
            return Err(Error::Shape {
                what: "observation",
                expected: self.shape.obs_dim,
                got: obs.len(),
            });
        }
        if instruction >= self.shape.instructions {
            return Err(Error::UnknownInstruction(instruction));
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[f64], instruction: usize) -> Result<Activations> {
        self.check_inputs(obs, instruction)?;
        let e = self.shape.embed_dim;
        let mut x = Vec::with_capacity(self.shape.input_dim());
        x.extend_from_slice(obs);
        x.extend_from_slice(&self.params[instruction * e..(instruction + 1) * e]);

        let layers = self.shape.layers();
        let last = layers.len() - 1;
        let mut offset = self.shape.embedding_len();
        let mut layer_inputs = Vec::with_capacity(layers.len());
        for (k, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut z: Vec<f64> = w
                .chunks_exact(fan_in)
                .zip(b)
                .map(|(row, &bias)| bias + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            if k != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            layer_inputs.push(std::mem::replace(&mut x, z));
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Activations {
            instruction,
            layer_inputs,
            output: x,
        })
    }

    /// Accumulates `d(output . upstream)/d(params)` into `grad`.
    pub fn backward(&self, acts: &Activations, upstream: &[f64], grad: &mut [f64]) -> Result<()> {
        if upstream.len() != self.shape.out_dim {
            return Err(Error::Shape {
                what: "upstream gradient",
                expected: self.shape.out_dim,
                got: upstream.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(Error::Shape {
                what: "gradient buffer",
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let layers = self.shape.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = self.shape.embedding_len();
        for &(i, o) in &layers {
            offsets.push(offset);
            offset += i * o + o;
        }

        let mut delta = upstream.to_vec();
        for k in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[k];
            let off = offsets[k];
            let input = &acts.layer_inputs[k];
            {
                let (gw, gb) =
                    grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for (j, &dj) in delta.iter().enumerate() {
                    gb[j] += dj;
                    if dj != 0.0 {
                        for (g, &x) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(input) {
                            *g += dj * x;
                        }
                    }
                }
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for (j, &dj) in delta.iter().enumerate() {
                if dj != 0.0 {
                    for (p, &wij) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *p += dj * wij;
                    }
                }
            }
            if k > 0 {
                // input of layer k is tanh output of layer k-1
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }

        // delta is now the gradient on the concatenated input; the trailing
        // embed_dim entries belong to the embedding row that was used.
        let e = self.shape.embed_dim;
        let row = acts.instruction * e;
        for (g, d) in grad[row..row + e]
            .iter_mut()
            .zip(&delta[self.shape.obs_dim..])
        {
            *g += d;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

impl Parameterized for Network {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

/// Factorized categorical distribution over `D` dimensions of `B` bins.
/// Stored row-major: entry `(d, j)` lives at `d * B + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    dims: usize,
    bins: usize,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_logits(dims: usize, bins: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != dims * bins {
            return Err(Error::Shape {
                what: "logits",
                expected: dims * bins,
                got: logits.len(),
            });
        }
        let mut log_probs = Vec::with_capacity(logits.len());
        for row in logits.chunks_exact(bins) {
            log_probs.extend(log_softmax(row));
        }
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self {
            dims,
            bins,
            logits,
            log_probs,
            probs,
        })
    }

    /// Builds a distribution directly from per-dimension probabilities.
    /// Zero entries are allowed and get `-inf` log-probability.
    pub fn from_probs(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.len();
        let bins = rows.first().map_or(0, |r| r.len());
        if dims == 0 || bins == 0 {
            return Err(Error::config("empty distribution"));
        }
        let mut probs = Vec::with_capacity(dims * bins);
        for r in rows {
            if r.len() != bins {
                return Err(Error::Shape {
                    what: "probability row",
                    expected: bins,
                    got: r.len(),
                });
            }
            let total: f64 = r.iter().sum();
            if r.iter().any(|&p| p < 0.0 || !p.is_finite()) || total <= 0.0 {
                return Err(Error::numeric(
                    "probabilities must be finite and non-negative",
                ));
            }
            probs.extend(r.iter().map(|p| p / total));
        }
        let log_probs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            dims,
            bins,
            logits: log_probs.clone(),
            log_probs,
            probs,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn probs(&self, d: usize) -> &[f64] {
        &self.probs[d * self.bins..(d + 1) * self.bins]
    }

    pub fn log_probs(&self, d: usize) -> &[f64] {
        &self.log_probs[d * self.bins..(d + 1) * self.bins]
    }

    pub fn logits(&self, d: usize) -> &[f64] {
        &self.logits[d * self.bins..(d + 1) * self.bins]
    }

    fn check_bins(&self, bins: &[usize]) -> Result<()> {
        if bins.len() != self.dims {
            return Err(Error::Shape {
                what: "bin index vector",
                expected: self.dims,
                got: bins.len(),
            });
        }
        if let Some(&j) = bins.iter().find(|&&j| j >= self.bins) {
            return Err(Error::Index {
                what: "bin",
                index: j,
                limit: self.bins,
            });
        }
        Ok(())
    }

    /// Joint log-probability, the sum of per-dimension log-probabilities.
    pub fn log_prob(&self, bins: &[usize]) -> Result<f64> {
        self.check_bins(bins)?;
        Ok(bins
            .iter()
            .enumerate()
            .map(|(d, &j)| self.log_probs[d * self.bins + j])
            .sum())
    }

    /// Gradient of the joint log-probability with respect to the logits.
    pub fn log_prob_logit_grad(&self, bins: &[usize]) -> Result<Vec<f64>> {
        self.check_bins(bins)?;
        let mut g: Vec<f64> = self.probs.iter().map(|p| -p).collect();
        for (d, &j) in bins.iter().enumerate() {
            g[d * self.bins + j] += 1.0;
        }
        Ok(g)
    }

    /// One independent categorical draw per dimension.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.dims)
            .map(|d| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let row = self.probs(d);
                for (j, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return j;
                    }
                }
                // u landed in the rounding gap above the cumulative sum
                row.iter().rposition(|&p| p > 0.0).unwrap_or(self.bins - 1)
            })
            .collect()
    }

    /// Per-dimension mode; ties go to the lowest bin index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.dims)
            .map(|d| {
                let row = self.log_probs(d);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Entropy of dimension `d` in nats.
    pub fn entropy_dim(&self, d: usize) -> f64 {
        self.probs(d)
            .iter()
            .zip(self.log_probs(d))
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, l)| -p * l)
            .sum()
    }

    /// Entropy of the joint factorized distribution.
    pub fn entropy(&self) -> f64 {
        (0..self.dims).map(|d| self.entropy_dim(d)).sum()
    }

    /// Gradient of the joint entropy with respect to the logits.
    pub fn entropy_logit_grad(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.probs.len()];
        for d in 0..self.dims {
            let h = self.entropy_dim(d);
            for j in 0..self.bins {
                let i = d * self.bins + j;
                g[i] = -self.probs[i] * (self.log_probs[i] + h);
            }
        }
        g
    }

    /// Variance of dimension `d` in action units, measured on bin centers.
    pub fn variance_dim(&self, grid: &ActionGrid, d: usize) -> f64 {
        let c = grid.centers(d);
        let p = self.probs(d);
        let mean: f64 = p.iter().zip(&c).map(|(p, c)| p * c).sum();
        p.iter().zip(&c).map(|(p, c)| p * (c - mean).powi(2)).sum()
    }
}

fn log_softmax(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(move |z| z - lse)
}

/// Instruction-conditioned categorical policy over an action grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    net: Network,
    dims: usize,
    bins: usize,
}

impl PolicyModel {
    pub fn new(
        obs_dim: usize,
        embed_dim: usize,
        instructions: usize,
        hidden: Vec<usize>,
        grid: &ActionGrid,
        seed: u64,
    ) -> Result<Self> {
        let shape = NetShape {
            obs_dim,
            embed_dim,
            instructions,
            hidden,
            out_dim: grid.dims() * grid.bins(),
        };
        Ok(Self {
            net: Network::new(shape, seed)?,
            dims: grid.dims(),
            bins: grid.bins(),
        })
    }

    pub fn from_network(net: Network, dims: usize, bins: usize) -> Result<Self> {
        if net.shape().out_dim != dims * bins {
            return Err(Error::Shape {
                what: "policy output",
                expected: dims * bins,
                got: net.shape().out_dim,
            });
        }
        Ok(Self { net, dims, bins })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn forward(&self, obs: &[f64], instruction: usize) -> Result<ActionDistribution> {
        Ok(self.forward_cached(obs, instruction)?.0)
    }

    pub fn forward_cached(
        &self,
        obs: &[f64],
        instruction: usize,
    ) -> Result<(ActionDistribution, Activations)> {
        let acts = self.net.forward(obs, instruction)?;
        let dist = ActionDistribution::from_logits(self.dims, self.bins, acts.output().to_vec())?;
        Ok((dist, acts))
    }

    /// Accumulates the parameter gradient of `logits . upstream` into `grad`.
    pub fn backward_cached(
        &self,
        acts: &Activations,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.net.backward(acts, upstream, grad)
    }

    /// Recomputes the forward pass and returns a fresh gradient vector.
    pub fn backward(&self, obs: &[f64], instruction: usize, upstream: &[f64]) -> Result<Vec<f64>> {
        let acts = self.net.forward(obs, instruction)?;
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward(&acts, upstream, &mut grad)?;
        Ok(grad)
    }
}

impl Parameterized for PolicyModel {
    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }
}

/// Scalar state-value head with its own trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    net: Network,
}

impl ValueModel {
    pub fn new(
        obs_dim: usize,
        embed_dim: usize,
        instructions: usize,
        hidden: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        let shape = NetShape {
            obs_dim,
            embed_dim,
            instructions,
            hidden,
            out_dim: 1,
        };
        Ok(Self {
            net: Network::new(shape, seed)?,
        })
    }

    pub fn from_network(net: Network) -> Result<Self> {
        if net.shape().out_dim != 1 {
            return Err(Error::Shape {
                what: "value output",
                expected: 1,
                got: net.shape().out_dim,
            });
        }
        Ok(Self { net })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn value(&self, obs: &[f64], instruction: usize) -> Result<f64> {
        Ok(self.net.forward(obs, instruction)?.output()[0])
    }

    pub fn forward_cached(&self, obs: &[f64], instruction: usize) -> Result<(f64, Activations)> {
        let acts = self.net.forward(obs, instruction)?;
        Ok((acts.output()[0], acts))
    }

    pub fn backward_cached(
        &self,
        acts: &Activations,
        upstream: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.net.backward(acts, &[upstream], grad)
    }
}

impl Parameterized for ValueModel {
    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }
}

/// Compares an analytic gradient against central differences on a random
/// subset of at least `coords` parameters (all of them if fewer exist).
///
/// `loss` returns `(value, analytic_gradient)`; only its value is used at
/// perturbed points. The result is
/// `max |analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<M, F>(
    model: &M,
    loss: F,
    coords: usize,
    step: f64,
    seed: u64,
) -> Result<f64>
where
    M: Parameterized + Clone,
    F: Fn(&M) -> Result<(f64, Vec<f64>)>,
{
    let (base, analytic) = loss(model)?;
    if !base.is_finite() {
        return Err(Error::numeric("loss is not finite at the base point"));
    }
    if analytic.len() != model.num_params() {
        return Err(Error::Shape {
            what: "analytic gradient",
            expected: model.num_params(),
            got: analytic.len(),
        });
    }
    let n = model.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = if coords >= n {
        (0..n).collect()
    } else {
        let mut v = index::sample(&mut rng, n, coords).into_vec();
        v.sort_unstable();
        v
    };

    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in picked {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + step;
        let (plus, _) = loss(&probe)?;
        probe.params_mut()[i] = orig - step;
        let (minus, _) = loss(&probe)?;
        probe.params_mut()[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::numeric(format!(
                "loss not finite when perturbing parameter {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

const CHECKPOINT_MAGIC: &str = "fan-checkpoint 1";

/// A saved network. Policies carry `(D, B)`; value heads store `0 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Policy(PolicyModel),
    Value(ValueModel),
}

impl Checkpoint {
    /// Text layout, one field per line:
    ///
    /// ```text
    /// fan-checkpoint 1
    /// kind policy|value
    /// obs_dim <m>
    /// embed_dim <e>
    /// instructions <n>
    /// hidden <h1> <h2> ...
    /// out_dim <o>
    /// action <D> <B>
    /// seed <seed>
    /// params <count>
    /// <param 0>
    /// ...
    /// ```
    ///
    /// Parameters are printed with Rust's shortest round-trip float format, so
    /// a save/load cycle is bit-exact.
    pub fn write(&self, path: &Path) -> Result<()> {
        let (kind, net, dims, bins) = match self {
            Checkpoint::Policy(p) => ("policy", p.network(), p.dims(), p.bins()),
            Checkpoint::Value(v) => ("value", v.network(), 0, 0),
        };
        let s = net.shape();
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        writeln!(out, "kind {kind}")?;
        writeln!(out, "obs_dim {}", s.obs_dim)?;
        writeln!(out, "embed_dim {}", s.embed_dim)?;
        writeln!(out, "instructions {}", s.instructions)?;
        let hidden: Vec<String> = s.hidden.iter().map(|h| h.to_string()).collect();
        writeln!(out, "hidden {}", hidden.join(" "))?;
        writeln!(out, "out_dim {}", s.out_dim)?;
        writeln!(out, "action {dims} {bins}")?;
        writeln!(out, "seed {}", net.seed())?;
        writeln!(out, "params {}", net.num_params())?;
        for p in net.params() {
            writeln!(out, "{p}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = BufReader::new(fs::File::open(path)?);
        let mut lines = file.lines().enumerate();
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line + 1,
            msg,
        };
        let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| perr(usize::MAX - 1, format!("missing `{key}` line")))?;
            let line = line?;
            let mut parts = line.split_whitespace();
            if key.is_empty() {
                return Ok((n, std::iter::once(line.clone()).collect()));
            }
            if parts.next() != Some(key) {
                return Err(perr(n, format!("expected `{key}`, got `{line}`")));
            }
            Ok((n, parts.map(str::to_string).collect()))
        };
        let num = |n: usize, s: &str| -> Result<usize> {
            s.parse().map_err(|_| perr(n, format!("bad integer `{s}`")))
        };

        let (n, magic) = next("")?;
        if magic[0].trim() != CHECKPOINT_MAGIC {
            return Err(perr(n, "not a checkpoint file".into()));
        }
        let (n, kind) = next("kind")?;
        let kind = kind.first().cloned().unwrap_or_default();
        if kind != "policy" && kind != "value" {
            return Err(perr(n, format!("unknown kind `{kind}`")));
        }
        let (n, v) = next("obs_dim")?;
        let obs_dim = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = next("embed_dim")?;
        let embed_dim = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = next("instructions")?;
        let instructions = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = next("hidden")?;
        let hidden = v.iter().map(|s| num(n, s)).collect::<Result<Vec<_>>>()?;
        let (n, v) = next("out_dim")?;
        let out_dim = num(n, v.first().map_or("", String::as_str))?;
        let (n, v) = next("action")?;
        if v.len() != 2 {
            return Err(perr(n, "expected `action <D> <B>`".into()));
        }
        let (dims, bins) = (num(n, &v[0])?, num(n, &v[1])?);
        let (n, v) = next("seed")?;
        let seed: u64 = v
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| perr(n, "bad seed".into()))?;
        let (n, v) = next("params")?;
        let count = num(n, v.first().map_or("", String::as_str))?;
        let mut params = Vec::with_capacity(count);
        for (n, line) in lines {
            let line = line?;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            params.push(
                t.parse::<f64>()
                    .map_err(|_| perr(n, format!("bad parameter `{t}`")))?,
            );
        }
        if params.len() != count {
            return Err(perr(
                n,
                format!("expected {count} parameters, found {}", params.len()),
            ));
        }
        let shape = NetShape {
            obs_dim,
            embed_dim,
            instructions,
            hidden,
            out_dim,
        };
        let net = Network::from_params(shape, seed, params)?;
        if kind == "policy" {
            Ok(Checkpoint::Policy(PolicyModel::from_network(
                net, dims, bins,
            )?))
        } else {
            Ok(Checkpoint::Value(ValueModel::from_network(net)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(d: usize, b: usize) -> ActionGrid {
        ActionGrid::uniform(d, -1.0, 1.0, b).unwrap()
    }

    fn tiny(seed: u64) -> PolicyModel {
        PolicyModel::new(3, 2, 2, vec![5], &grid(2, 3), seed).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let g = grid(3, 5);
        let shape = NetShape {
            obs_dim: 4,
            embed_dim: 2,
            instructions: 2,
            hidden: vec![8, 8],
            out_dim: 15,
        };
        let m =
            PolicyModel::from_network(Network::zeros(shape).unwrap(), g.dims(), g.bins()).unwrap();
        let dist = m.forward(&[0.3, -1.0, 2.0, 0.1], 1).unwrap();
        for d in 0..3 {
            for &p in dist.probs(d) {
                assert_abs_diff_eq!(p, 0.2, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn forward_matches_naive_recomputation() {
        // layout: embedding table, then per layer W (row-major) and b
        let m = tiny(7);
        let obs = [0.1, -0.2, 0.3];
        let l = 1;
        let p = m.net.params();
        let emb = &p[l * 2..l * 2 + 2];
        let x: Vec<f64> = obs.iter().chain(emb).copied().collect();
        let mut off = 2 * 2;
        let mut h = vec![0.0; 5];
        for (o, hv) in h.iter_mut().enumerate() {
            let mut z = 0.0;
            for (i, xi) in x.iter().enumerate() {
                z += p[off + o * 5 + i] * xi;
            }
            *hv = z;
        }
        off += 5 * 5;
        for (o, hv) in h.iter_mut().enumerate() {
            *hv = (*hv + p[off + o]).tanh();
        }
        off += 5;
        let mut logits = vec![0.0; 6];
        for (o, lo) in logits.iter_mut().enumerate() {
            let mut z = p[off + 6 * 5 + o];
            for (i, hi) in h.iter().enumerate() {
                z += p[off + o * 5 + i] * hi;
            }
            *lo = z;
        }
        assert_eq!(off + 6 * 5 + 6, p.len());
        let dist = m.forward(&obs, l).unwrap();
        for d in 0..2 {
            let row = &logits[d * 3..d * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for j in 0..3 {
                assert_abs_diff_eq!(dist.probs(d)[j], row[j].exp() / z, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn forward_errors() {
        let m = tiny(1);
        assert!(matches!(
            m.forward(&[0.0; 3], 2),
            Err(Error::UnknownInstruction(2))
        ));
        assert!(matches!(m.forward(&[0.0; 4], 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn log_prob_examples() {
        let u = ActionDistribution::from_logits(2, 4, vec![0.0; 8]).unwrap();
        assert_abs_diff_eq!(
            u.log_prob(&[1, 3]).unwrap(),
            2.0 * (0.25f64).ln(),
            epsilon = 1e-15
        );
        let d = ActionDistribution::from_probs(&[vec![0.7, 0.3]]).unwrap();
        assert_abs_diff_eq!(d.log_prob(&[0]).unwrap(), 0.7f64.ln(), epsilon = 1e-15);
        let d =
            ActionDistribution::from_probs(&[vec![0.5, 0.25, 0.25], vec![0.9, 0.1, 0.0]]).unwrap();
        assert_abs_diff_eq!(d.log_prob(&[1, 0]).unwrap(), 0.225f64.ln(), epsilon = 1e-15);
        assert!(matches!(d.log_prob(&[3, 0]), Err(Error::Index { .. })));
    }

    #[test]
    fn degenerate_and_seeded_sampling() {
        let d = ActionDistribution::from_probs(&[vec![0.0, 0.0, 1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(d.sample(&mut rng), vec![2]);
        }
        let u = ActionDistribution::from_logits(2, 5, vec![0.0; 10]).unwrap();
        let a: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(11);
            (0..50).map(|_| u.sample(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(11);
            (0..50).map(|_| u.sample(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let bins = 6;
        let n = 100_000;
        let u = ActionDistribution::from_logits(1, bins, vec![0.0; bins]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            counts[u.sample(&mut rng)[0]] += 1;
        }
        let p = 1.0 / bins as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn backward_trivial_cases() {
        let m = tiny(5);
        let g = m.backward(&[0.4, 0.1, -0.3], 0, &[0.0; 6]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));

        // linear model: d logit_k / d bias_k = upstream_k
        let lin = PolicyModel::new(3, 2, 2, vec![], &grid(2, 3), 5).unwrap();
        let up = [0.5, -1.0, 2.0, 0.25, 0.0, -3.0];
        let g = lin.backward(&[0.4, 0.1, -0.3], 0, &up).unwrap();
        let bias_off = lin.network().shape().embedding_len() + 5 * 6;
        for k in 0..6 {
            assert_eq!(g[bias_off + k], up[k]);
        }
        assert!(matches!(
            lin.backward(&[0.4, 0.1, -0.3], 0, &up[..5]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = PolicyModel::new(4, 3, 3, vec![6, 5], &grid(3, 4), 21).unwrap();
        let obs = [0.2, -0.7, 0.5, 0.9];
        let up: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let loss = |m: &PolicyModel| -> Result<(f64, Vec<f64>)> {
            let (dist, _) = m.forward_cached(&obs, 2)?;
            let v: f64 = (0..3)
                .flat_map(|d| dist.logits(d).to_vec())
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum();
            Ok((v, m.backward(&obs, 2, &up)?))
        };
        let err = finite_diff_check(&m, loss, usize::MAX, 1e-5, 0).unwrap();
        assert!(err <= 1e-5, "max rel err {err}");
    }

    #[test]
    fn log_prob_loss_passes_gradcheck() {
        let m = tiny(8);
        let obs = [0.3, 0.6, -0.1];
        let loss = |m: &PolicyModel| -> Result<(f64, Vec<f64>)> {
            let (dist, acts) = m.forward_cached(&obs, 1)?;
            let lp = dist.log_prob(&[2, 0])?;
            let up: Vec<f64> = dist
                .log_prob_logit_grad(&[2, 0])?
                .iter()
                .map(|g| -g)
                .collect();
            let mut grad = vec![0.0; m.num_params()];
            m.backward_cached(&acts, &up, &mut grad)?;
            Ok((-lp, grad))
        };
        let err = finite_diff_check(&m, loss, 50, 1e-5, 1).unwrap();
        assert!(err <= 1e-5, "max rel err {err}");
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let logits = vec![0.3, -1.2, 2.0, 0.1, 0.5, 0.5];
        let d = ActionDistribution::from_logits(2, 3, logits.clone()).unwrap();
        let g = d.entropy_logit_grad();
        for i in 0..6 {
            let mut p = logits.clone();
            let mut m = logits.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let hp = ActionDistribution::from_logits(2, 3, p).unwrap().entropy();
            let hm = ActionDistribution::from_logits(2, 3, m).unwrap().entropy();
            assert_abs_diff_eq!(g[i], (hp - hm) / 2e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let m = PolicyModel::new(5, 3, 4, vec![7, 6], &grid(3, 9), 42).unwrap();
        Checkpoint::Policy(m.clone()).write(&path).unwrap();
        match Checkpoint::read(&path).unwrap() {
            Checkpoint::Policy(back) => {
                assert_eq!(back, m);
                assert!(back
                    .params()
                    .iter()
                    .zip(m.params())
                    .all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            _ => panic!("wrong kind"),
        }
        let v = ValueModel::new(5, 3, 4, vec![4], 9).unwrap();
        let vpath = dir.path().join("v.ckpt");
        Checkpoint::Value(v.clone()).write(&vpath).unwrap();
        assert_eq!(Checkpoint::read(&vpath).unwrap(), Checkpoint::Value(v));
    }

    #[test]
    fn truncated_checkpoint_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        Checkpoint::Policy(tiny(3)).write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut: String = text.lines().take(15).map(|l| format!("{l}\n")).collect();
        fs::write(&path, cut).unwrap();
        assert!(matches!(Checkpoint::read(&path), Err(Error::Parse { .. })));
    }

    proptest! {
        #[test]
        fn rows_normalize(logits in prop::collection::vec(-40.0f64..40.0, 12)) {
            let d = ActionDistribution::from_logits(3, 4, logits).unwrap();
            for k in 0..3 {
                let s: f64 = d.probs(k).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
                prop_assert!(d.log_probs(k).iter().all(|l| l.is_finite()));
            }
        }
    }
}
