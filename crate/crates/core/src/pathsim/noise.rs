use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::GridSpec;
use crate::error::{Error, Result};

/// Brownian increments `ΔW_0 … ΔW_{K-1}` of a `d`-mode truncation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBundle {
    dim: usize,
    step: f64,
    seed: u64,
    stream: u64,
    increments: Vec<f64>,
}

impl NoiseBundle {
    pub fn from_increments(dim: usize, step: f64, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || increments.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                what: "noise increments",
                expected: dim,
                found: increments.len(),
            });
        }
        Ok(Self {
            dim,
            step,
            seed: 0,
            stream: 0,
            increments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of increments.
    pub fn len(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increments_mut(&mut self) -> &mut [f64] {
        &mut self.increments
    }

    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    /// Antithetic partner.
    pub fn negated(&self) -> Self {
        Self {
            increments: self.increments.iter().map(|x| -x).collect(),
            ..self.clone()
        }
    }

    /// Sums consecutive groups of `r` increments.
    pub fn coarsen(&self, r: usize) -> Result<Self> {
        if r == 0 || self.len() % r != 0 {
            return Err(Error::InvalidGrid(format!(
                "cannot coarsen {} increments by {r}",
                self.len()
            )));
        }
        let d = self.dim;
        let mut out = vec![0.0; self.increments.len() / r];
        for (k, chunk) in self.increments.chunks_exact(r * d).enumerate() {
            for j in 0..r {
                for i in 0..d {
                    out[k * d + i] += chunk[j * d + i];
                }
            }
        }
        Ok(Self {
            step: self.step * r as f64,
            increments: out,
            ..self.clone()
        })
    }
}

/// Increments for one path, a pure function of `(seed, path_index)`: each path
/// owns an independent ChaCha stream.
pub fn sample_noise(grid: &GridSpec, dim: usize, seed: u64, path_index: u64) -> NoiseBundle {
    draw(grid.k, grid.step, dim, seed, path_index)
}

/// Increments on `grid` formed by summing `r` sub-increments from the stream
/// that drives the grid refined `r` times. Couples runs at `Δ` and `Δ/r`.
pub fn sample_noise_refined(
    grid: &GridSpec,
    dim: usize,
    seed: u64,
    path_index: u64,
    r: usize,
) -> Result<NoiseBundle> {
    if r == 1 {
        return Ok(sample_noise(grid, dim, seed, path_index));
    }
    let fine = grid.refine(r)?;
    draw(fine.k, fine.step, dim, seed, path_index).coarsen(r)
}

fn draw(k: usize, step: f64, dim: usize, seed: u64, stream: u64) -> NoiseBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let scale = step.sqrt();
    let increments = (0..k * dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    NoiseBundle {
        dim,
        step,
        seed,
        stream,
        increments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathsim::make_grid;

    #[test]
    fn deterministic_and_distinct() {
        let g = make_grid(1.0, 2.0, 10).unwrap();
        let a = sample_noise(&g, 3, 7, 11);
        assert_eq!(a, sample_noise(&g, 3, 7, 11));
        assert_ne!(a, sample_noise(&g, 3, 7, 12));
        assert_ne!(a, sample_noise(&g, 3, 8, 11));
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn refined_matches_fine_stream() {
        let g = make_grid(1.0, 2.0, 10).unwrap();
        let fine = sample_noise(&g.refine(2).unwrap(), 2, 3, 4);
        let coarse = sample_noise_refined(&g, 2, 3, 4, 2).unwrap();
        assert_eq!(coarse.len(), 20);
        for k in 0..20 {
            for i in 0..2 {
                let s = fine.increment(2 * k)[i] + fine.increment(2 * k + 1)[i];
                assert!((coarse.increment(k)[i] - s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn moments() {
        let n = 1_000_000;
        let step = 0.01;
        let g = make_grid(step * 1000.0, step * 1000.0 * 2.0, 1000).unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0;
        let mut idx = 0;
        while count < n {
            let b = sample_noise(&g, 1, 99, idx);
            for x in b.increments() {
                sum += x;
                sq += x * x;
            }
            count += b.len();
            idx += 1;
        }
        let mean = sum / count as f64;
        let var = sq / count as f64 - mean * mean;
        assert!(mean.abs() <= 4.0 * (g.step / count as f64).sqrt(), "mean {mean}");
        assert!((var / g.step - 1.0).abs() < 0.01, "var {var}");
    }
}
