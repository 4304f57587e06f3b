use serde::Serialize;

use crate::error::{Error, Result};

/// Uniform grid on `[-τ, T]` with step `Δ = τ/m` and `K = T/Δ` forward steps.
///
/// Nodes are addressed either globally (`n ∈ 0..=m+K`, `t_n = (n - m)Δ`) or by
/// forward time index (`k ∈ 0..=K`, `t_k = kΔ`, global node `m + k`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub delay: f64,
    pub horizon: f64,
    pub step: f64,
    pub m: usize,
    pub k: usize,
}

impl GridSpec {
    pub fn n_nodes(&self) -> usize {
        self.m + self.k + 1
    }

    /// Time of forward index `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step
    }

    /// Forward index of `T - τ`.
    pub fn kink(&self) -> usize {
        self.k - self.m
    }

    /// Forward index of a grid-aligned time in `[0, T]`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let x = t / self.step;
        let k = x.round();
        if (x - k).abs() > 1e-9 * x.max(1.0) || k as usize > self.k {
            return Err(Error::OffGrid(t));
        }
        Ok(k as usize)
    }

    /// Same interval with `r` times as many steps.
    pub fn refine(&self, r: usize) -> Result<GridSpec> {
        if r == 0 {
            return Err(Error::InvalidGrid("refinement factor must be positive".into()));
        }
        make_grid(self.delay, self.horizon, self.m * r)
    }
}

pub fn make_grid(delay: f64, horizon: f64, m: usize) -> Result<GridSpec> {
    if !(delay > 0.0) || !delay.is_finite() {
        return Err(Error::InvalidGrid(format!("delay {delay} must be positive")));
    }
    if !(horizon > delay) || !horizon.is_finite() {
        return Err(Error::InvalidGrid(format!(
            "horizon {horizon} must exceed the delay {delay}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidGrid("m must be at least 1".into()));
    }
    let step = delay / m as f64;
    let x = horizon / step;
    let k = x.round();
    if (x - k).abs() > 1e-9 * x {
        return Err(Error::InvalidGrid(format!(
            "horizon {horizon} is not a multiple of the step {step}"
        )));
    }
    Ok(GridSpec {
        delay,
        horizon,
        step,
        m,
        k: k as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let g = make_grid(1.0, 2.0, 10).unwrap();
        assert_eq!((g.step, g.k, g.kink()), (0.1, 20, 10));
        assert!(make_grid(1.0, 1.05, 10).is_err());
        let g = make_grid(0.5, 2.0, 5).unwrap();
        assert_eq!((g.step, g.k), (0.1, 20));
        assert!(make_grid(1.0, 1.0, 10).is_err(), "T must exceed tau");
        assert!(make_grid(1.0, 2.0, 0).is_err());
    }

    #[test]
    fn index_lookup() {
        let g = make_grid(1.0, 2.0, 10).unwrap();
        assert_eq!(g.index_of(0.0).unwrap(), 0);
        assert_eq!(g.index_of(1.0).unwrap(), 10);
        assert_eq!(g.index_of(0.3).unwrap(), 3);
        assert!(matches!(g.index_of(0.35), Err(Error::OffGrid(_))));
        assert!(matches!(g.index_of(2.1), Err(Error::OffGrid(_))));
        assert_eq!(g.refine(2).unwrap().k, 40);
    }
}
