//! Independent estimators of `∇_η P_T f` used to validate the Bismut estimators.

use serde::Serialize;

use crate::bismut::{check_functional, BismutSetup, GradientEstimate, Method};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::mc::{run_paths, McConfig};
use crate::model::{DriftSpec, ModelSpec, TestFunctional};
use crate::pathsim::{integrate_mild, integrate_shifted, sample_noise_refined, GridSpec};
use crate::segment::SegmentPath;
use crate::sensitivity::{tangent_path, ControlFunction};

/// `1e-3·max(1, ‖ξ‖_∞)/‖η‖_∞`
pub fn default_fd_epsilon(xi: &SegmentPath, eta: &SegmentPath) -> f64 {
    let e = eta.sup_norm();
    if e == 0.0 {
        1e-3
    } else {
        1e-3 * xi.sup_norm().max(1.0) / e
    }
}

/// How the two arms of a finite difference draw their noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// Both arms on the same increments.
    Common,
    /// The minus arm on an unrelated stream.
    Independent,
}

/// `[P̂_T f(ξ+εη) - P̂_T f(ξ-εη)]/(2ε)` with common random numbers.
pub fn fd_gradient(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunctional,
    epsilon: f64,
    mc: &McConfig,
) -> Result<GradientEstimate> {
    fd_gradient_with(spec, grid, xi, eta, f, epsilon, mc, Coupling::Common)
}

#[allow(clippy::too_many_arguments)]
pub fn fd_gradient_with(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunctional,
    epsilon: f64,
    mc: &McConfig,
    coupling: Coupling,
) -> Result<GradientEstimate> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
    }
    check_functional(spec, grid, f)?;
    let plus = xi.add_scaled(epsilon, eta)?;
    let minus = xi.add_scaled(-epsilon, eta)?;
    let samples = run_paths(mc, grid, spec.dim, 1, |i, noise| {
        let fp = f.eval(integrate_mild(spec, &plus, noise, grid)?.terminal_segment());
        let fm = match coupling {
            Coupling::Common => f.eval(integrate_mild(spec, &minus, noise, grid)?.terminal_segment()),
            Coupling::Independent => {
                let other = sample_noise_refined(
                    grid,
                    spec.dim,
                    mc.seed ^ 0x5eed_0f_1de9,
                    i as u64,
                    mc.noise_refinement,
                )?;
                f.eval(integrate_mild(spec, &minus, &other, grid)?.terminal_segment())
            }
        };
        Ok(vec![(fp - fm) / (2.0 * epsilon)])
    })?;
    Ok(GradientEstimate::from_column(&samples, 0, Method::FiniteDifference))
}

/// `E⟨∇f(X_T), ∇_η X_T⟩` using the tangent path.
pub fn pathwise_gradient(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunctional,
    mc: &McConfig,
) -> Result<GradientEstimate> {
    if !f.has_gradient() {
        return Err(Error::MissingGradientRule);
    }
    check_functional(spec, grid, f)?;
    let samples = run_paths(mc, grid, spec.dim, 1, |_, noise| {
        let traj = integrate_mild(spec, xi, noise, grid)?;
        let beta = tangent_path(spec, &traj, eta)?;
        let g = f
            .gradient(traj.terminal_segment(), beta.terminal_segment())
            .ok_or(Error::MissingGradientRule)?;
        Ok(vec![g])
    })?;
    Ok(GradientEstimate::from_column(&samples, 0, Method::Pathwise))
}

/// Refinement of the method-of-steps reference relative to the MC grid.
pub const ANALYTIC_REFINEMENT: usize = 10;

/// Deterministic gradient for linear models with linear `f = ⟨v, ξ(0)⟩`:
/// `⟨v, y(T)⟩` where `y' = Ay + B0 y(t) + B1 y(t-τ)`, `y_0 = η`, solved by the
/// method of steps with classical Runge-Kutta on a grid ten times finer.
pub fn analytic_linear_gradient(
    spec: &ModelSpec,
    grid: &GridSpec,
    eta: &SegmentPath,
    f: &TestFunctional,
) -> Result<f64> {
    spec.check()?;
    let (b0, b1) = match &spec.drift {
        DriftSpec::LinearDelay { b0, b1 } => (b0, b1),
        _ => return Err(Error::Unsupported("analytic oracle needs a linear delay drift".into())),
    };
    let v = match f {
        TestFunctional::LinearEndpoint { v } => v,
        _ => return Err(Error::Unsupported("analytic oracle needs a linear endpoint functional".into())),
    };
    if !spec.diffusion.is_state_independent() {
        return Err(Error::Unsupported("analytic oracle needs constant diffusion".into()));
    }
    f.check(spec.dim, grid.m)?;
    if eta.dim() != spec.dim || eta.m() != grid.m {
        return Err(Error::GridMismatch("direction does not match the grid".into()));
    }
    let d = spec.dim;
    let r = ANALYTIC_REFINEMENT;
    let nm = grid.m * r;
    let n = grid.k * r;
    let h = grid.step / r as f64;

    // y and y' on the fine grid, global index j ↔ t = (j - nm)h.
    let hist = eta.resample(nm);
    let mut y = Vec::with_capacity((nm + n + 1) * d);
    y.extend_from_slice(hist.values());
    y.resize((nm + n + 1) * d, 0.0);
    let mut dy = vec![0.0; (nm + n + 1) * d];

    let rhs = |x: &[f64], lag: &[f64], out: &mut [f64]| {
        b0.mul_vec_into(x, out);
        b1.mul_vec_add(lag, out);
        for i in 0..d {
            out[i] += spec.eigenvalues[i] * x[i];
        }
    };
    let node = |buf: &Vec<f64>, j: usize| buf[j * d..(j + 1) * d].to_vec();

    let mut lag_mid = vec![0.0; d];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut tmp = vec![0.0; d];
    for s in 0..n {
        let j = nm + s;
        let lag_a = node(&y, s);
        let lag_b = node(&y, s + 1);
        if s + 1 <= nm {
            for i in 0..d {
                lag_mid[i] = 0.5 * (lag_a[i] + lag_b[i]);
            }
        } else {
            let (da, db) = (node(&dy, s), node(&dy, s + 1));
            for i in 0..d {
                lag_mid[i] = 0.5 * (lag_a[i] + lag_b[i]) + h / 8.0 * (da[i] - db[i]);
            }
        }
        let x = node(&y, j);
        rhs(&x, &lag_a, &mut k1);
        dy[j * d..(j + 1) * d].copy_from_slice(&k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, &lag_mid, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(&tmp, &lag_mid, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] + h * k3[i];
        }
        rhs(&tmp, &lag_b, &mut k4);
        for i in 0..d {
            y[(j + 1) * d + i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if s + 1 == n {
            let last = node(&y, j + 1);
            let lag = node(&y, s + 1);
            rhs(&last, &lag, &mut tmp);
            dy[(j + 1) * d..(j + 2) * d].copy_from_slice(&tmp);
        }
    }
    Ok(dot(v, &y[(nm + n) * d..]))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IbpResidual {
    /// `|Ê[D_h f] - Ê[f·weight]|`
    pub residual: f64,
    /// Standard error of the paired difference.
    pub std_error: f64,
    pub lhs: f64,
    pub lhs_std_error: f64,
    pub rhs: f64,
    pub rhs_std_error: f64,
    pub n_paths: usize,
}

/// Integration-by-parts check `E[D_h f(X_T)] = E[f(X_T)∫⟨ḣ, dW⟩]` with `ḣ` the
/// Bismut integrand of the model's noise regime and `D_h f` the central
/// difference along the noise shift `W + εh`.
#[allow(clippy::too_many_arguments)]
pub fn ibp_residual(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunctional,
    u: &ControlFunction,
    epsilon: f64,
    mc: &McConfig,
) -> Result<IbpResidual> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
    }
    check_functional(spec, grid, f)?;
    let setup = BismutSetup::new(spec, grid, xi, eta, u)?;
    let samples = run_paths(mc, grid, spec.dim, 3, |_, noise| {
        let p = setup.path(noise)?;
        let fp = f.eval(integrate_shifted(spec, xi, noise, &p.hdot, epsilon, grid)?.terminal_segment());
        let fm = f.eval(integrate_shifted(spec, xi, noise, &p.hdot, -epsilon, grid)?.terminal_segment());
        let dh = (fp - fm) / (2.0 * epsilon);
        let fw = f.eval(p.traj.terminal_segment()) * p.weight;
        Ok(vec![dh, fw, dh - fw])
    })?;
    Ok(IbpResidual {
        residual: samples.mean(2).abs(),
        std_error: samples.std_error(2),
        lhs: samples.mean(0),
        lhs_std_error: samples.std_error(0),
        rhs: samples.mean(1),
        rhs_std_error: samples.std_error(1),
        n_paths: samples.n_paths(),
    })
}
