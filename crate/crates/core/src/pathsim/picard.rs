use super::integrate::{check_inputs, decay_factors};
use super::{GridSpec, NoiseBundle, Trajectory};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::segment::{SegmentPath, SegmentView};

#[derive(Clone, Debug)]
pub struct PicardResult<'n> {
    pub trajectory: Trajectory<'n>,
    /// `sup_t ‖X^{(j+1)}(t) - X^{(j)}(t)‖` for `j = 0 … n_iter-1`.
    pub distances: Vec<f64>,
}

/// Iterates the discrete mild-form map
/// `𝒦(Y)(t_{k+1}) = e^{t_{k+1}A}ξ(0) + Σ_{j≤k} e^{(t_{k+1}-t_j)A}[F(Y_{t_j})Δ + σ(Y(t_j))ΔW_j]`
/// starting from `ξ` frozen at `ξ(0)` on `[0, T]`. The fixed point is the
/// exponential-Euler solution on the same noise.
pub fn picard_reference<'n>(
    spec: &ModelSpec,
    xi: &SegmentPath,
    noise: &'n NoiseBundle,
    grid: &GridSpec,
    n_iter: usize,
) -> Result<PicardResult<'n>> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
    }
    check_inputs(spec, xi, noise, grid)?;
    let d = spec.dim;
    let m = grid.m;
    let dt = grid.step;
    let n_nodes = grid.n_nodes();
    let decay = decay_factors(spec, dt);

    let mut current = Vec::with_capacity(n_nodes * d);
    current.extend_from_slice(xi.values());
    for _ in 0..grid.k {
        current.extend_from_slice(xi.at_zero());
    }
    let mut next = current.clone();
    let mut drift = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut distances = Vec::with_capacity(n_iter);
    let mut growth = 0;

    for iter in 0..n_iter {
        for k in 0..grid.k {
            let seg = SegmentView::new(&current[k * d..(k + m + 1) * d], d, dt);
            spec.drift.eval_into(seg, &mut drift, &mut scratch);
            spec.diffusion
                .apply_into(seg.at_zero(), noise.increment(k), &mut diff);
            let (head, tail) = next.split_at_mut((m + k + 1) * d);
            let y = &head[(m + k) * d..];
            for i in 0..d {
                tail[i] = decay[i] * (y[i] + drift[i] * dt + diff[i]);
            }
        }
        let dist = next
            .chunks_exact(d)
            .zip(current.chunks_exact(d))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max);
        if !dist.is_finite() {
            return Err(Error::PicardDivergence { iteration: iter });
        }
        if let Some(&prev) = distances.last() {
            if dist > prev {
                growth += 1;
                if growth >= 3 {
                    return Err(Error::PicardDivergence { iteration: iter });
                }
            } else {
                growth = 0;
            }
        }
        distances.push(dist);
        std::mem::swap(&mut current, &mut next);
    }
    Ok(PicardResult {
        trajectory: Trajectory::from_parts(spec, *grid, current, noise),
        distances,
    })
}
