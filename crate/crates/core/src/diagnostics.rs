//! Numerical diagnostics: proof-identity residuals, moments of `Z`, the
//! `∫‖Z‖²/u²` integral, the noise-shift linearization error and grid
//! convergence studies.

use std::collections::VecDeque;

use serde::Serialize;

use crate::bismut::{BismutSetup, GradientEstimate};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::mc::{mean_vector, run_paths, McConfig};
use crate::model::{ModelSpec, NoiseKind};
use crate::pathsim::{integrate_mild, integrate_shifted, sample_noise_refined, GridSpec};
use crate::segment::SegmentPath;
use crate::sensitivity::{malliavin_path, tangent_path, z_path, ControlFunction};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub max: f64,
    pub n_paths: usize,
}

/// Additive regime: `sup_t ‖∇_η X(t) - D_h X(t) - Υ(t)‖` per path.
pub fn proof_identity_additive(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    u: &ControlFunction,
    mc: &McConfig,
) -> Result<MeanEstimate> {
    if spec.noise_kind != NoiseKind::Additive {
        return Err(Error::Unsupported("additive identity on a multiplicative model".into()));
    }
    let setup = BismutSetup::new(spec, grid, xi, eta, u)?;
    let ups = setup.upsilon().expect("additive setup carries upsilon");
    let s = run_paths(mc, grid, spec.dim, 1, |_, noise| {
        let traj = integrate_mild(spec, xi, noise, grid)?;
        let (h, _) = setup.integrand(&traj)?;
        let beta = tangent_path(spec, &traj, eta)?;
        let alpha = malliavin_path(spec, &traj, &h)?;
        let gamma: Vec<f64> = beta
            .values()
            .iter()
            .zip(alpha.values())
            .map(|(b, a)| b - a)
            .collect();
        Ok(vec![ups.sup_distance(&gamma)])
    })?;
    Ok(MeanEstimate {
        mean: s.mean(0),
        std_error: s.std_error(0),
        max: s.max(0),
        n_paths: s.n_paths(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiplicativeIdentity {
    /// `‖∇_η X(T) - D_h X(T) - Z(T)‖`, with `Z(T) = 0`.
    pub terminal: MeanEstimate,
    /// `sup_t ‖∇_η X(t) - D_h X(t) - Z(t)‖`.
    pub sup: MeanEstimate,
}

/// Multiplicative regime: `Γ = ∇_η X - D_h X` against `Z`.
pub fn proof_identity_multiplicative(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    u: &ControlFunction,
    mc: &McConfig,
) -> Result<MultiplicativeIdentity> {
    if spec.noise_kind != NoiseKind::Multiplicative {
        return Err(Error::Unsupported("multiplicative identity on an additive model".into()));
    }
    let setup = BismutSetup::new(spec, grid, xi, eta, u)?;
    let d = spec.dim;
    let s = run_paths(mc, grid, d, 2, |_, noise| {
        let traj = integrate_mild(spec, xi, noise, grid)?;
        let z = z_path(spec, &traj, eta, u)?;
        let (h, _) = setup.integrand(&traj)?;
        let beta = tangent_path(spec, &traj, eta)?;
        let alpha = malliavin_path(spec, &traj, &h)?;
        let gamma: Vec<f64> = beta
            .values()
            .iter()
            .zip(alpha.values())
            .map(|(b, a)| b - a)
            .collect();
        let n = grid.n_nodes() - 1;
        let end: Vec<f64> = (0..d).map(|i| gamma[n * d + i] - z.node(n)[i]).collect();
        Ok(vec![norm(&end), z.sup_distance(&gamma)])
    })?;
    let est = |j| MeanEstimate {
        mean: s.mean(j),
        std_error: s.std_error(j),
        max: s.max(j),
        n_paths: s.n_paths(),
    };
    Ok(MultiplicativeIdentity {
        terminal: est(0),
        sup: est(1),
    })
}

/// Sliding-window maximum of `xs` over windows of `w` consecutive entries.
fn sliding_max(xs: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len() + 1 - w);
    let mut dq: VecDeque<usize> = VecDeque::new();
    for (i, &x) in xs.iter().enumerate() {
        while dq.back().is_some_and(|&j| xs[j] <= x) {
            dq.pop_back();
        }
        dq.push_back(i);
        if dq[0] + w <= i {
            dq.pop_front();
        }
        if i + 1 >= w {
            out.push(xs[dq[0]]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ZMoments {
    pub p: Vec<f64>,
    /// `max_t Ê‖Z_t‖^p_∞` over `t ∈ [0, T-τ]`, one entry per `p`.
    pub max_moment: Vec<f64>,
    /// Largest `‖Z(t_k)‖` seen at any node `t_k ≥ T-τ`, over all paths.
    pub max_after_kink: f64,
    pub n_paths: usize,
}

/// Moments of the segment sup-norm of `Z`.
pub fn z_moments(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    u: &ControlFunction,
    ps: &[f64],
    mc: &McConfig,
) -> Result<ZMoments> {
    let kink = grid.kink();
    let np = ps.len();
    let len = (kink + 1) * np + 1;
    let (means, n) = mean_vector(mc, grid, spec.dim, len, |_, noise| {
        let traj = integrate_mild(spec, xi, noise, grid)?;
        let z = z_path(spec, &traj, eta, u)?;
        let norms: Vec<f64> = z.values().chunks_exact(spec.dim).map(norm).collect();
        let seg_sup = sliding_max(&norms[..grid.m + kink + 1], grid.m + 1);
        let mut row = Vec::with_capacity(len);
        for p in ps {
            row.extend(seg_sup.iter().map(|x| x.powf(*p)));
        }
        row.push(norms[grid.m + kink..].iter().cloned().fold(0.0, f64::max));
        Ok(row)
    })?;
    // The last entry is a mean of per-path maxima; zero iff every path is zero.
    let max_after_kink = means[len - 1];
    Ok(ZMoments {
        p: ps.to_vec(),
        max_moment: (0..np)
            .map(|j| {
                means[j * (kink + 1)..(j + 1) * (kink + 1)]
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max)
            })
            .collect(),
        max_after_kink,
        n_paths: n,
    })
}

/// `Ê Σ_{t_k < T-τ} ‖Z(t_k)‖²/u(t_k)² Δ`
pub fn z_over_u_integral(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    u: &ControlFunction,
    mc: &McConfig,
) -> Result<MeanEstimate> {
    let s = run_paths(mc, grid, spec.dim, 1, |_, noise| {
        let traj = integrate_mild(spec, xi, noise, grid)?;
        let z = z_path(spec, &traj, eta, u)?;
        let mut acc = 0.0;
        for k in 0..grid.kink() {
            let r = norm(z.state(k)) / u.u(k);
            acc += r * r * grid.step;
        }
        Ok(vec![acc])
    })?;
    Ok(MeanEstimate {
        mean: s.mean(0),
        std_error: s.std_error(0),
        max: s.max(0),
        n_paths: s.n_paths(),
    })
}

/// `Ê sup_t ‖(X^{εh}(t) - X(t))/ε - D_h X(t)‖`: the linearization error of the
/// noise shift along the Bismut integrand.
#[allow(clippy::too_many_arguments)]
pub fn shift_linearization_error(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    u: &ControlFunction,
    epsilon: f64,
    mc: &McConfig,
) -> Result<MeanEstimate> {
    let setup = BismutSetup::new(spec, grid, xi, eta, u)?;
    let s = run_paths(mc, grid, spec.dim, 1, |_, noise| {
        let p = setup.path(noise)?;
        let shifted = integrate_shifted(spec, xi, noise, &p.hdot, epsilon, grid)?;
        let alpha = malliavin_path(spec, &p.traj, &p.hdot)?;
        let quotient: Vec<f64> = shifted
            .values()
            .iter()
            .zip(p.traj.values())
            .map(|(a, b)| (a - b) / epsilon)
            .collect();
        Ok(vec![alpha.sup_distance(&quotient)])
    })?;
    Ok(MeanEstimate {
        mean: s.mean(0),
        std_error: s.std_error(0),
        max: s.max(0),
        n_paths: s.n_paths(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfConvergence {
    pub steps: Vec<f64>,
    /// `(Ê‖X^{Δ_l}(T) - X^{Δ_{l+1}}(T)‖²)^{1/2}` for consecutive levels.
    pub rms_differences: Vec<f64>,
    /// Consecutive ratios of the differences; `2^{-q}` for strong order `q`.
    pub ratios: Vec<f64>,
}

/// Strong self-convergence over `levels` successive halvings of `grid`, all
/// levels driven by the same Brownian paths.
pub fn strong_self_convergence(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    levels: usize,
    mc: &McConfig,
) -> Result<SelfConvergence> {
    if levels < 2 {
        return Err(Error::InvalidArgument("need at least two levels".into()));
    }
    let grids: Vec<GridSpec> = (0..levels)
        .map(|l| grid.refine(1 << l))
        .collect::<Result<_>>()?;
    let xis: Vec<SegmentPath> = grids.iter().map(|g| xi.resample(g.m)).collect();
    let finest = 1usize << (levels - 1);
    let s = run_paths(mc, grid, spec.dim, levels - 1, |i, _| {
        let mut ends = Vec::with_capacity(levels);
        for (l, g) in grids.iter().enumerate() {
            let noise = sample_noise_refined(g, spec.dim, mc.seed, i as u64, finest >> l)?;
            let traj = integrate_mild(spec, &xis[l], &noise, g)?;
            ends.push(traj.state(g.k).to_vec());
        }
        Ok(ends
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .collect())
    })?;
    let rms: Vec<f64> = (0..levels - 1).map(|j| s.mean(j).sqrt()).collect();
    Ok(SelfConvergence {
        steps: grids.iter().map(|g| g.step).collect(),
        ratios: rms.windows(2).map(|w| w[1] / w[0]).collect(),
        rms_differences: rms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridConvergence {
    pub coarse_step: f64,
    pub coarse: GradientEstimate,
    pub fine: GradientEstimate,
    pub difference: f64,
    pub combined_se: f64,
}

/// Runs an estimator at `Δ` and `Δ/2` on coupled noise: the coarse run sums
/// pairs of the increments that drive the fine run.
pub fn grid_convergence(
    grid: &GridSpec,
    mc: &McConfig,
    run: impl Fn(&GridSpec, &McConfig) -> Result<GradientEstimate>,
) -> Result<GridConvergence> {
    let coarse = run(grid, &mc.with_refinement(2))?;
    let fine = run(&grid.refine(2)?, &mc.with_refinement(1))?;
    Ok(GridConvergence {
        coarse_step: grid.step,
        difference: (coarse.value - fine.value).abs(),
        combined_se: coarse.std_error.hypot(fine.std_error),
        coarse,
        fine,
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sliding_max_matches_naive() {
        let xs = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0];
        for w in 1..=xs.len() {
            let naive: Vec<f64> = xs
                .windows(w)
                .map(|s| s.iter().cloned().fold(f64::MIN, f64::max))
                .collect();
            assert_eq!(sliding_max(&xs, w), naive);
        }
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1e-2, 5e-3, 2.5e-3];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v * v).collect();
        assert!((loglog_slope(&x, &y) - 2.0).abs() < 1e-12);
    }
}
