//! Discretized elements of the segment space `C([-τ, 0] → H)`.
//!
//! A segment on a grid with `m` delay steps holds `m + 1` nodes, ordered
//! from `θ = -τ` (node 0) to `θ = 0` (node `m`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

/// Owned segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPath {
    dim: usize,
    step: f64,
    values: Vec<f64>,
}

/// Borrowed window of `m + 1` consecutive nodes, e.g. `X_t` inside a trajectory.
#[derive(Clone, Copy, Debug)]
pub struct SegmentView<'a> {
    data: &'a [f64],
    dim: usize,
    m: usize,
    step: f64,
}

impl SegmentPath {
    pub fn new(dim: usize, step: f64, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.is_empty() || values.len() % dim != 0 || values.len() / dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "segment needs at least two nodes of dimension {dim}, got {} values",
                values.len()
            )));
        }
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("segment step {step} must be positive")));
        }
        Ok(Self { dim, step, values })
    }

    pub fn constant(value: &[f64], m: usize, step: f64) -> Self {
        let mut values = Vec::with_capacity((m + 1) * value.len());
        for _ in 0..=m {
            values.extend_from_slice(value);
        }
        Self {
            dim: value.len(),
            step,
            values,
        }
    }

    pub fn zeros(dim: usize, m: usize, step: f64) -> Self {
        Self::constant(&vec![0.0; dim], m, step)
    }

    /// Samples `g(θ)` at `θ_j = -τ + jΔ`.
    pub fn from_fn(dim: usize, m: usize, step: f64, mut g: impl FnMut(f64) -> Vec<f64>) -> Self {
        let tau = m as f64 * step;
        let mut values = Vec::with_capacity((m + 1) * dim);
        for j in 0..=m {
            let v = g(-tau + j as f64 * step);
            debug_assert_eq!(v.len(), dim);
            values.extend_from_slice(&v);
        }
        Self { dim, step, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn m(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn at_zero(&self) -> &[f64] {
        self.node(self.m())
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView::new(&self.values, self.dim, self.step)
    }

    pub fn sup_norm(&self) -> f64 {
        self.view().sup_norm()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            step: self.step,
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// `self + a·other`
    pub fn add_scaled(&self, a: f64, other: &SegmentPath) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            dim: self.dim,
            step: self.step,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        })
    }

    pub fn check_same_grid(&self, other: &SegmentPath) -> Result<()> {
        if self.dim != other.dim || self.values.len() != other.values.len() {
            return Err(Error::GridMismatch(format!(
                "segments of shape ({}, {}) and ({}, {})",
                self.dim,
                self.m() + 1,
                other.dim,
                other.m() + 1
            )));
        }
        Ok(())
    }

    /// Piecewise-linear resampling onto `new_m` delay steps.
    pub fn resample(&self, new_m: usize) -> Self {
        let m = self.m();
        let tau = m as f64 * self.step;
        let new_step = tau / new_m as f64;
        let mut values = Vec::with_capacity((new_m + 1) * self.dim);
        for j in 0..=new_m {
            let pos = j as f64 * m as f64 / new_m as f64;
            let lo = (pos.floor() as usize).min(m);
            let hi = (lo + 1).min(m);
            let w = pos - lo as f64;
            let (a, b) = (self.node(lo), self.node(hi));
            values.extend(a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y));
        }
        Self {
            dim: self.dim,
            step: new_step,
            values,
        }
    }
}

impl<'a> SegmentView<'a> {
    pub fn new(data: &'a [f64], dim: usize, step: f64) -> Self {
        debug_assert!(data.len() % dim == 0);
        Self {
            data,
            dim,
            m: data.len() / dim - 1,
            step,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn data(&self) -> &'a [f64] {
        self.data
    }

    #[inline]
    pub fn node(&self, j: usize) -> &'a [f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    /// `ξ(0)`
    #[inline]
    pub fn at_zero(&self) -> &'a [f64] {
        self.node(self.m())
    }

    /// `ξ(-τ)`
    #[inline]
    pub fn at_delay(&self) -> &'a [f64] {
        self.node(0)
    }

    /// `ξ(-τ/2)`; requires an even number of delay steps.
    #[inline]
    pub fn at_half_delay(&self) -> &'a [f64] {
        self.node(self.m() / 2)
    }

    pub fn sup_norm(&self) -> f64 {
        self.data
            .chunks_exact(self.dim)
            .map(norm)
            .fold(0.0, f64::max)
    }

    pub fn to_owned(&self) -> SegmentPath {
        SegmentPath {
            dim: self.dim,
            step: self.step,
            values: self.data.to_vec(),
        }
    }
}

/// Grid-independent description of an initial segment or direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentSpec {
    /// `ξ(θ) = value`
    Constant { value: Vec<f64> },
    /// `ξ(θ) = offset + amplitude·cos(frequency·θ)`, θ in units of time.
    Smooth {
        offset: Vec<f64>,
        amplitude: Vec<f64>,
        frequency: f64,
    },
    /// Values at equally spaced nodes on `[-τ, 0]`, linearly interpolated.
    Table { values: Vec<Vec<f64>> },
}

impl SegmentSpec {
    pub fn dim(&self) -> usize {
        match self {
            SegmentSpec::Constant { value } => value.len(),
            SegmentSpec::Smooth { offset, .. } => offset.len(),
            SegmentSpec::Table { values } => values.first().map_or(0, Vec::len),
        }
    }

    pub fn sample(&self, dim: usize, m: usize, step: f64) -> Result<SegmentPath> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                what: "segment",
                expected: dim,
                found: self.dim(),
            });
        }
        match self {
            SegmentSpec::Constant { value } => Ok(SegmentPath::constant(value, m, step)),
            SegmentSpec::Smooth {
                offset,
                amplitude,
                frequency,
            } => {
                if amplitude.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "segment amplitude",
                        expected: dim,
                        found: amplitude.len(),
                    });
                }
                Ok(SegmentPath::from_fn(dim, m, step, |theta| {
                    offset
                        .iter()
                        .zip(amplitude)
                        .map(|(o, a)| o + a * (frequency * theta).cos())
                        .collect()
                }))
            }
            SegmentSpec::Table { values } => {
                if values.len() < 2 || values.iter().any(|v| v.len() != dim) {
                    return Err(Error::InvalidArgument(
                        "segment table needs at least two rows of the state dimension".into(),
                    ));
                }
                let knots = values.len() - 1;
                let tau = m as f64 * step;
                let table =
                    SegmentPath::new(dim, tau / knots as f64, values.iter().flatten().copied().collect())?;
                Ok(table.resample(m))
            }
        }
    }
}
