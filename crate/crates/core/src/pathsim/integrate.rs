use super::{GridSpec, NoiseBundle};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::segment::{SegmentPath, SegmentView};
use crate::sensitivity::IntegrandPath;

/// Solution on `[-τ, T]` together with the increments that produced it.
#[derive(Clone, Debug)]
pub struct Trajectory<'n> {
    grid: GridSpec,
    dim: usize,
    values: Vec<f64>,
    /// `tanh` of every node, kept when the model saturates.
    sat: Option<Vec<f64>>,
    noise: &'n NoiseBundle,
}

impl<'n> Trajectory<'n> {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// All `m + K + 1` nodes, oldest first.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise(&self) -> &'n NoiseBundle {
        self.noise
    }

    /// Global node `n`, time `(n - m)Δ`.
    #[inline]
    pub fn node(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    /// `X(t_k)`
    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        self.node(self.grid.m + k)
    }

    /// `X_{t_k}`
    #[inline]
    pub fn segment(&self, k: usize) -> SegmentView<'_> {
        let d = self.dim;
        SegmentView::new(
            &self.values[k * d..(k + self.grid.m + 1) * d],
            d,
            self.grid.step,
        )
    }

    /// `tanh` of `X_{t_k}` when cached, otherwise `X_{t_k}` itself. Only the
    /// saturating coefficients read it.
    #[inline]
    pub(crate) fn sat_segment(&self, k: usize) -> SegmentView<'_> {
        let d = self.dim;
        let data = self.sat.as_deref().unwrap_or(&self.values);
        SegmentView::new(&data[k * d..(k + self.grid.m + 1) * d], d, self.grid.step)
    }

    #[inline]
    pub(crate) fn sat_state(&self, k: usize) -> &[f64] {
        let d = self.dim;
        let n = self.grid.m + k;
        &self.sat.as_deref().unwrap_or(&self.values)[n * d..(n + 1) * d]
    }

    pub fn initial_segment(&self) -> SegmentView<'_> {
        self.segment(0)
    }

    pub fn terminal_segment(&self) -> SegmentView<'_> {
        self.segment(self.grid.k)
    }

    /// Sup over nodes of the distance to another trajectory on the same grid.
    pub fn sup_distance(&self, other: &Trajectory<'_>) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .zip(other.values.chunks_exact(self.dim))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn from_parts(
        spec: &ModelSpec,
        grid: GridSpec,
        values: Vec<f64>,
        noise: &'n NoiseBundle,
    ) -> Self {
        let sat = spec
            .saturates()
            .then(|| values.iter().map(|x| crate::model::sat(*x)).collect());
        Self {
            grid,
            dim: spec.dim,
            values,
            sat,
            noise,
        }
    }
}

/// `X_t` as an owned segment; `t` must be a grid time in `[0, T]`.
pub fn segment_at(traj: &Trajectory<'_>, t: f64) -> Result<SegmentPath> {
    let k = traj.grid.index_of(t)?;
    Ok(traj.segment(k).to_owned())
}

pub(crate) fn check_inputs(
    spec: &ModelSpec,
    xi: &SegmentPath,
    noise: &NoiseBundle,
    grid: &GridSpec,
) -> Result<()> {
    let d = spec.dim;
    if xi.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "initial segment",
            expected: d,
            found: xi.dim(),
        });
    }
    if noise.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "noise",
            expected: d,
            found: noise.dim(),
        });
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b;
    if xi.m() != grid.m || !close(xi.step(), grid.step) {
        return Err(Error::GridMismatch(format!(
            "segment has {} steps of {}, grid has {} of {}",
            xi.m(),
            xi.step(),
            grid.m,
            grid.step
        )));
    }
    if !close(spec.delay, grid.delay) {
        return Err(Error::GridMismatch(format!(
            "model delay {} differs from grid delay {}",
            spec.delay, grid.delay
        )));
    }
    if noise.len() != grid.k || !close(noise.step(), grid.step) {
        return Err(Error::GridMismatch(format!(
            "noise has {} increments of {}, grid has {} of {}",
            noise.len(),
            noise.step(),
            grid.k,
            grid.step
        )));
    }
    spec.drift.check_grid(grid.m)
}

/// `e^{λ_i Δ}`
pub(crate) fn decay_factors(spec: &ModelSpec, step: f64) -> Vec<f64> {
    spec.eigenvalues.iter().map(|l| (l * step).exp()).collect()
}

/// Exponential Euler with left-point coefficients:
/// `X_{k+1} = e^{ΔA}[X_k + F(X_{t_k})Δ + σ(X_k)ΔW_k]`.
pub fn integrate_mild<'n>(
    spec: &ModelSpec,
    xi: &SegmentPath,
    noise: &'n NoiseBundle,
    grid: &GridSpec,
) -> Result<Trajectory<'n>> {
    integrate(spec, xi, noise, grid, None)
}

/// As [`integrate_mild`] with `ΔW_k` replaced by `ΔW_k + ε ḣ(t_k) Δ`.
pub fn integrate_shifted<'n>(
    spec: &ModelSpec,
    xi: &SegmentPath,
    noise: &'n NoiseBundle,
    hdot: &IntegrandPath,
    epsilon: f64,
    grid: &GridSpec,
) -> Result<Trajectory<'n>> {
    if hdot.dim() != spec.dim || hdot.len() != grid.k {
        return Err(Error::GridMismatch(format!(
            "integrand has {} nodes of dim {}, grid has {} steps",
            hdot.len(),
            hdot.dim(),
            grid.k
        )));
    }
    let shift = if epsilon == 0.0 {
        None
    } else {
        Some((hdot, epsilon))
    };
    integrate(spec, xi, noise, grid, shift)
}

fn integrate<'n>(
    spec: &ModelSpec,
    xi: &SegmentPath,
    noise: &'n NoiseBundle,
    grid: &GridSpec,
    shift: Option<(&IntegrandPath, f64)>,
) -> Result<Trajectory<'n>> {
    check_inputs(spec, xi, noise, grid)?;
    let d = spec.dim;
    let m = grid.m;
    let dt = grid.step;
    let mut values = Vec::with_capacity(grid.n_nodes() * d);
    values.extend_from_slice(xi.values());
    values.resize(grid.n_nodes() * d, 0.0);

    let decay = decay_factors(spec, dt);
    let saturates = spec.saturates();
    let mut sat = Vec::new();
    if saturates {
        sat.reserve_exact(grid.n_nodes() * d);
        sat.extend(xi.values().iter().map(|x| crate::model::sat(*x)));
    }
    let mut drift = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for k in 0..grid.k {
        let (head, tail) = values.split_at_mut((m + k + 1) * d);
        let seg = SegmentView::new(&head[k * d..], d, dt);
        let sat_seg = if saturates {
            SegmentView::new(&sat[k * d..], d, dt)
        } else {
            seg
        };
        let x = seg.at_zero();
        spec.drift.eval_cached(seg, sat_seg, &mut drift);
        let inc = noise.increment(k);
        let w: &[f64] = match shift {
            Some((h, eps)) => {
                let hk = h.at(k);
                for i in 0..d {
                    dw[i] = inc[i] + eps * hk[i] * dt;
                }
                &dw
            }
            None => inc,
        };
        spec.diffusion.apply_cached(sat_seg.at_zero(), w, &mut diff);
        let next = &mut tail[..d];
        let mut finite = true;
        for ((((n, e), xi), fi), si) in next.iter_mut().zip(&decay).zip(x).zip(&drift).zip(&diff) {
            *n = e * (xi + fi * dt + si);
            finite &= n.is_finite();
        }
        if !finite {
            return Err(Error::IntegrationFailure { step: k });
        }
        if saturates {
            sat.extend(next.iter().map(|x| crate::model::sat(*x)));
        }
    }
    Ok(Trajectory {
        grid: *grid,
        dim: d,
        values,
        sat: saturates.then_some(sat),
        noise,
    })
}
