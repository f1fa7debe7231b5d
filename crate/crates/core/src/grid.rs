//! Uniform discretization of continuous action dimensions into bins.

use crate::error::{Error, Result};

/// Per-dimension continuous ranges split into `bins` equal-width cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    bins: usize,
}

impl ActionGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: usize) -> Result<Self> {
        if lo.is_empty() {
            return Err(Error::config("action grid needs at least one dimension"));
        }
        if lo.len() != hi.len() {
            return Err(Error::Shape {
                what: "grid upper bounds",
                expected: lo.len(),
                got: hi.len(),
            });
        }
        if bins < 2 {
            return Err(Error::config(format!("grid.bins must be >= 2, got {bins}")));
        }
        for (d, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::config(format!(
                    "grid dimension {d}: need lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi, bins })
    }

    /// Same range `[lo, hi]` on every one of `dims` dimensions.
    pub fn uniform(dims: usize, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::new(vec![lo; dims], vec![hi; dims], bins)
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn lo(&self, d: usize) -> f64 {
        self.lo[d]
    }

    pub fn hi(&self, d: usize) -> f64 {
        self.hi[d]
    }

    pub fn bin_width(&self, d: usize) -> f64 {
        (self.hi[d] - self.lo[d]) / self.bins as f64
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d >= self.dims() {
            return Err(Error::Index {
                what: "dimension",
                index: d,
                limit: self.dims(),
            });
        }
        Ok(())
    }

    fn check_bin(&self, j: usize) -> Result<()> {
        if j >= self.bins {
            return Err(Error::Index {
                what: "bin",
                index: j,
                limit: self.bins,
            });
        }
        Ok(())
    }

    pub fn bin_center(&self, d: usize, j: usize) -> Result<f64> {
        self.check_dim(d)?;
        self.check_bin(j)?;
        Ok(self.center_unchecked(d, j))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, d: usize, j: usize) -> f64 {
        self.lo[d] + (j as f64 + 0.5) * self.bin_width(d)
    }

    /// All bin centers of dimension `d`, in increasing order.
    pub fn centers(&self, d: usize) -> Vec<f64> {
        (0..self.bins)
            .map(|j| self.center_unchecked(d, j))
            .collect()
    }

    /// Clamps each component into range, then returns the containing bin.
    /// The upper boundary belongs to the last bin.
    pub fn encode(&self, action: &[f64]) -> Result<Vec<usize>> {
        if action.len() != self.dims() {
            return Err(Error::Shape {
                what: "continuous action",
                expected: self.dims(),
                got: action.len(),
            });
        }
        action
            .iter()
            .enumerate()
            .map(|(d, &x)| {
                if x.is_nan() {
                    return Err(Error::numeric(format!("NaN in action dimension {d}")));
                }
                let x = x.clamp(self.lo[d], self.hi[d]);
                let j = ((x - self.lo[d]) / self.bin_width(d)).floor() as usize;
                Ok(j.min(self.bins - 1))
            })
            .collect()
    }

    pub fn decode(&self, bins: &[usize]) -> Result<Vec<f64>> {
        if bins.len() != self.dims() {
            return Err(Error::Shape {
                what: "bin index vector",
                expected: self.dims(),
                got: bins.len(),
            });
        }
        bins.iter()
            .enumerate()
            .map(|(d, &j)| self.bin_center(d, j))
            .collect()
    }
}
