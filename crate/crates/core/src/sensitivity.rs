//! Control functions, the auxiliary processes `Υ`, `Z`, tangent and Malliavin
//! derivatives, and the Bismut integrands `ḣ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};
use crate::model::{DiffusionSpec, ModelSpec, NoiseKind};
use crate::pathsim::{GridSpec, Trajectory};
use crate::segment::{SegmentPath, SegmentView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlKind {
    AdditiveNormalized,
    MultiplicativeLinear,
    Table,
}

/// `u` and `u̇` on the forward nodes `t_k = kΔ`, `k = 0..=K`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlFunction {
    kind: ControlKind,
    u: Vec<f64>,
    udot: Vec<f64>,
    p: f64,
    theta_p: f64,
    kink: usize,
}

impl ControlFunction {
    /// Builds a control from node values. `u` must be positive before the
    /// index of `T - τ` and exactly zero from there on.
    pub fn from_nodes(
        kind: ControlKind,
        grid: &GridSpec,
        u: Vec<f64>,
        udot: Vec<f64>,
        p: f64,
    ) -> Result<Self> {
        let kink = grid.kink();
        if u.len() != grid.k + 1 || udot.len() != grid.k + 1 {
            return Err(Error::InvalidControl(format!(
                "control needs {} node values, got {} and {}",
                grid.k + 1,
                u.len(),
                udot.len()
            )));
        }
        if let Some(k) = (0..kink).find(|&k| !(u[k] > 0.0) || !u[k].is_finite()) {
            return Err(Error::InvalidControl(format!(
                "u must be positive before T - tau, u(t_{k}) = {}",
                u[k]
            )));
        }
        if let Some(k) = (kink..=grid.k).find(|&k| u[k] != 0.0) {
            return Err(Error::InvalidControl(format!(
                "u must vanish from T - tau on, u(t_{k}) = {}",
                u[k]
            )));
        }
        if udot.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidControl("non-finite derivative".into()));
        }
        let theta_p = (0..kink)
            .map(|k| p + (p - 1.0) * udot[k])
            .fold(f64::INFINITY, f64::min);
        if kind != ControlKind::AdditiveNormalized {
            if !(p > 1.0) {
                return Err(Error::InvalidControl(format!("p = {p} must exceed 1")));
            }
            if !(theta_p > 0.0) {
                return Err(Error::InvalidControl(format!(
                    "theta_p = {theta_p} must be positive for p = {p}"
                )));
            }
        }
        Ok(Self {
            kind,
            u,
            udot,
            p,
            theta_p,
            kink,
        })
    }

    /// `u(t) = scale·((T - τ - t)^+)^exponent`. With `scale = None` the control
    /// is normalized to `u(0) = 1`.
    pub fn power_law(grid: &GridSpec, exponent: f64, scale: Option<f64>, p: f64) -> Result<Self> {
        if !(exponent >= 1.0) {
            return Err(Error::InvalidControl(format!(
                "exponent {exponent} must be at least 1"
            )));
        }
        let kink = grid.kink();
        let span = kink as f64 * grid.step;
        let scale = scale.unwrap_or_else(|| span.powf(-exponent));
        let mut u = vec![0.0; grid.k + 1];
        let mut udot = vec![0.0; grid.k + 1];
        for k in 0..kink {
            let r = (kink - k) as f64 * grid.step;
            u[k] = scale * r.powf(exponent);
            udot[k] = -scale * exponent * r.powf(exponent - 1.0);
        }
        if scale.is_nan() {
            return Err(Error::InvalidControl("scale is NaN".into()));
        }
        Self::from_nodes(ControlKind::Table, grid, u, udot, p)
    }

    pub fn kind(&self) -> ControlKind {
        self.kind
    }

    pub fn u(&self, k: usize) -> f64 {
        self.u[k]
    }

    pub fn udot(&self, k: usize) -> f64 {
        self.udot[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.udot
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `inf_t p + (p - 1)u̇(t)` over the nodes before `T - τ`.
    pub fn theta_p(&self) -> f64 {
        self.theta_p
    }

    /// Forward index of `T - τ`.
    pub fn kink(&self) -> usize {
        self.kink
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.u.len() != grid.k + 1 || self.kink != grid.kink() {
            return Err(Error::GridMismatch(format!(
                "control has {} nodes, grid has {}",
                self.u.len(),
                grid.k + 1
            )));
        }
        Ok(())
    }
}

/// The two closed-form controls; table controls come from
/// [`ControlFunction::power_law`] or [`ControlFunction::from_nodes`].
pub fn control_function(kind: ControlKind, grid: &GridSpec, p: f64) -> Result<ControlFunction> {
    let kink = grid.kink();
    let span = kink as f64 * grid.step;
    let mut u = vec![0.0; grid.k + 1];
    let mut udot = vec![0.0; grid.k + 1];
    match kind {
        ControlKind::AdditiveNormalized => {
            for k in 0..kink {
                u[k] = (kink - k) as f64 / kink as f64;
                udot[k] = -1.0 / span;
            }
        }
        ControlKind::MultiplicativeLinear => {
            for k in 0..kink {
                u[k] = (kink - k) as f64 * grid.step;
                udot[k] = -1.0;
            }
        }
        ControlKind::Table => {
            return Err(Error::InvalidControl(
                "table controls are built from node values".into(),
            ))
        }
    }
    ControlFunction::from_nodes(kind, grid, u, udot, p)
}

/// Adapted `H`-valued integrand on the forward steps `k = 0..K-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrandPath {
    dim: usize,
    step: f64,
    values: Vec<f64>,
}

impl IntegrandPath {
    pub fn zeros(dim: usize, step: f64, len: usize) -> Self {
        Self {
            dim,
            step,
            values: vec![0.0; dim * len],
        }
    }

    pub fn from_fn(dim: usize, step: f64, len: usize, mut g: impl FnMut(usize) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(dim * len);
        for k in 0..len {
            let v = g(k);
            assert_eq!(v.len(), dim, "integrand value has wrong dimension");
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

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .map(norm)
            .fold(0.0, f64::max)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|x| a * x).collect(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxRole {
    Upsilon,
    Z,
    Tangent,
    Malliavin,
}

/// Auxiliary path on the full grid `[-τ, T]`, laid out like a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxPath {
    role: AuxRole,
    grid: GridSpec,
    dim: usize,
    values: Vec<f64>,
}

impl AuxPath {
    pub fn role(&self) -> AuxRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Global node `n`.
    #[inline]
    pub fn node(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    /// Value at `t_k = kΔ`.
    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        self.node(self.grid.m + k)
    }

    /// Segment ending at `t_k`.
    #[inline]
    pub fn segment(&self, k: usize) -> SegmentView<'_> {
        let d = self.dim;
        SegmentView::new(
            &self.values[k * d..(k + self.grid.m + 1) * d],
            d,
            self.grid.step,
        )
    }

    pub fn terminal_segment(&self) -> SegmentView<'_> {
        self.segment(self.grid.k)
    }

    /// `sup_k ‖self(t_k) - other(t_k)‖` over all nodes.
    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .zip(other.chunks_exact(self.dim))
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

fn check_direction(spec: &ModelSpec, grid: &GridSpec, eta: &SegmentPath) -> Result<()> {
    if eta.dim() != spec.dim {
        return Err(Error::DimensionMismatch {
            what: "direction",
            expected: spec.dim,
            found: eta.dim(),
        });
    }
    if eta.m() != grid.m {
        return Err(Error::GridMismatch(format!(
            "direction has {} steps, grid has {}",
            eta.m(),
            grid.m
        )));
    }
    Ok(())
}

/// `Υ(t) = u(t)e^{tA}η(0)` for `t ≥ 0`, `Υ = η` on `[-τ, 0]`.
pub fn upsilon_path(
    spec: &ModelSpec,
    eta: &SegmentPath,
    u: &ControlFunction,
    grid: &GridSpec,
) -> Result<AuxPath> {
    check_direction(spec, grid, eta)?;
    u.check_grid(grid)?;
    let d = spec.dim;
    let mut values = Vec::with_capacity(grid.n_nodes() * d);
    values.extend_from_slice(&eta.values()[..grid.m * d]);
    let e0 = eta.at_zero();
    for k in 0..=grid.k {
        let t = grid.time(k);
        for i in 0..d {
            values.push(u.u(k) * (spec.eigenvalues[i] * t).exp() * e0[i]);
        }
    }
    Ok(AuxPath {
        role: AuxRole::Upsilon,
        grid: *grid,
        dim: d,
        values,
    })
}

fn start_values(grid: &GridSpec, d: usize, init: Option<&SegmentPath>) -> Vec<f64> {
    let mut values = Vec::with_capacity(grid.n_nodes() * d);
    match init {
        Some(eta) => values.extend_from_slice(eta.values()),
        None => values.resize((grid.m + 1) * d, 0.0),
    }
    values.resize(grid.n_nodes() * d, 0.0);
    values
}

/// `β = ∇_η X` by the linearized scheme
/// `β_{k+1} = e^{ΔA}[β_k + ∇_{β_{t_k}}F(X_{t_k})Δ + (∇_{β_k}σ(X_k))ΔW_k]`, `β_0 = η`.
pub fn tangent_path(spec: &ModelSpec, traj: &Trajectory<'_>, eta: &SegmentPath) -> Result<AuxPath> {
    let grid = *traj.grid();
    check_direction(spec, &grid, eta)?;
    let values = propagate(spec, traj, start_values(&grid, spec.dim, Some(eta)), None, None);
    Ok(AuxPath {
        role: AuxRole::Tangent,
        grid,
        dim: spec.dim,
        values,
    })
}

/// `α = D_h X`: the linearized scheme with forcing `σ(X_k)ḣ_kΔ` and `α_0 = 0`.
pub fn malliavin_path(spec: &ModelSpec, traj: &Trajectory<'_>, hdot: &IntegrandPath) -> Result<AuxPath> {
    let grid = *traj.grid();
    if hdot.dim() != spec.dim || hdot.len() != grid.k {
        return Err(Error::GridMismatch(format!(
            "integrand has {} steps, grid has {}",
            hdot.len(),
            grid.k
        )));
    }
    let values = propagate(spec, traj, start_values(&grid, spec.dim, None), Some(hdot), None);
    Ok(AuxPath {
        role: AuxRole::Malliavin,
        grid,
        dim: spec.dim,
        values,
    })
}

/// `Z` of the multiplicative formula: the tangent dynamics damped by `-Z/u`,
/// split so that the factor `u(t_{k+1})/u(t_k)` acts on `Z_k` before the
/// explicit step,
/// `Z_{k+1} = e^{ΔA}[(u_{k+1}/u_k)Z_k + ∇_{Z_{t_k}}F(X_{t_k})Δ + (∇_{Z_k}σ(X_k))ΔW_k]`,
/// and `Z = 0` from `T - τ` on. For the linear control the factor equals
/// `1 - Δ/u_k`, so `∇_η X - D_h X` reproduces `Z` exactly before `T - τ`.
pub fn z_path(
    spec: &ModelSpec,
    traj: &Trajectory<'_>,
    eta: &SegmentPath,
    u: &ControlFunction,
) -> Result<AuxPath> {
    let grid = *traj.grid();
    check_direction(spec, &grid, eta)?;
    u.check_grid(&grid)?;
    if !(u.theta_p() > 0.0) {
        return Err(Error::InvalidControl(format!(
            "theta_p = {} must be positive",
            u.theta_p()
        )));
    }
    let values = propagate(
        spec,
        traj,
        start_values(&grid, spec.dim, Some(eta)),
        None,
        Some(u),
    );
    Ok(AuxPath {
        role: AuxRole::Z,
        grid,
        dim: spec.dim,
        values,
    })
}

fn propagate(
    spec: &ModelSpec,
    traj: &Trajectory<'_>,
    mut values: Vec<f64>,
    forcing: Option<&IntegrandPath>,
    damping: Option<&ControlFunction>,
) -> Vec<f64> {
    let grid = traj.grid();
    let d = spec.dim;
    let m = grid.m;
    let dt = grid.step;
    let decay = crate::pathsim::decay_factors(spec, dt);
    let last = damping.map_or(grid.k, |u| u.kink().saturating_sub(1));
    let mut lin = vec![0.0; d];
    let mut noise_term = vec![0.0; d];
    let mut force = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for k in 0..last {
        let (head, tail) = values.split_at_mut((m + k + 1) * d);
        let seg = SegmentView::new(&head[k * d..], d, dt);
        let y = seg.at_zero();
        let sx = traj.sat_state(k);
        spec.drift
            .derivative_cached(traj.sat_segment(k), seg, &mut lin, &mut scratch);
        noise_term.iter_mut().for_each(|v| *v = 0.0);
        spec.diffusion
            .derivative_apply_add_cached(sx, y, traj.noise().increment(k), &mut noise_term);
        if let Some(h) = forcing {
            spec.diffusion.apply_cached(sx, h.at(k), &mut force);
        }
        let ratio = damping.map_or(1.0, |u| u.u(k + 1) / u.u(k));
        let next = &mut tail[..d];
        for i in 0..d {
            let mut drift = lin[i];
            if forcing.is_some() {
                drift += force[i];
            }
            next[i] = decay[i] * (ratio * y[i] + drift * dt + noise_term[i]);
        }
    }
    // The damped path stops one node short of T - τ; later nodes stay zero.
    values
}

/// Applies `σ(x)^{-1}`, with the constant inverse computed once.
enum SigmaInverse<'a> {
    Constant(Matrix),
    Diagonal { s0: &'a [f64], s1: &'a [f64] },
}

impl<'a> SigmaInverse<'a> {
    fn new(diff: &'a DiffusionSpec) -> Result<Self> {
        match diff {
            DiffusionSpec::Constant { s } => s
                .inverse()
                .map(SigmaInverse::Constant)
                .ok_or_else(|| Error::InvalidSpec("constant diffusion matrix is singular".into())),
            DiffusionSpec::DiagonalSaturating { s0, s1 } => Ok(SigmaInverse::Diagonal { s0, s1 }),
        }
    }

    /// `sat = tanh(x)`
    #[inline]
    fn apply(&self, sat: &[f64], v: &[f64], out: &mut [f64]) {
        match self {
            SigmaInverse::Constant(inv) => inv.mul_vec_into(v, out),
            SigmaInverse::Diagonal { s0, s1 } => {
                for i in 0..out.len() {
                    out[i] = v[i] / (s0[i] + s1[i] * sat[i]);
                }
            }
        }
    }
}

/// `ḣ(t_k) = σ^{-1}{∇_{Υ_{t_k}}F(X_{t_k}) - u̇(t_k)e^{t_kA}η(0)}`; the `u̇` term is
/// applied on the steps before `T - τ` only.
pub fn additive_hdot(
    spec: &ModelSpec,
    traj: &Trajectory<'_>,
    upsilon: &AuxPath,
    u: &ControlFunction,
    eta: &SegmentPath,
) -> Result<IntegrandPath> {
    if spec.noise_kind != NoiseKind::Additive {
        return Err(Error::Unsupported("additive integrand on a multiplicative model".into()));
    }
    let grid = *traj.grid();
    u.check_grid(&grid)?;
    check_direction(spec, &grid, eta)?;
    let forcing = AdditiveForcing::new(spec, &grid, eta, u)?;
    Ok(forcing.hdot(spec, traj, upsilon))
}

/// Path-independent part of the additive integrand: `σ^{-1}` and the
/// control term `u̇(t_k)e^{t_kA}η(0)` on the steps before `T - τ`.
pub(crate) struct AdditiveForcing {
    inverse: Matrix,
    control_term: Vec<f64>,
}

impl AdditiveForcing {
    pub(crate) fn new(
        spec: &ModelSpec,
        grid: &GridSpec,
        eta: &SegmentPath,
        u: &ControlFunction,
    ) -> Result<Self> {
        let s = spec
            .constant_sigma()
            .ok_or_else(|| Error::Unsupported("diffusion is state dependent".into()))?;
        let inverse = s
            .inverse()
            .ok_or_else(|| Error::InvalidSpec("constant diffusion matrix is singular".into()))?;
        let e0 = eta.at_zero();
        let mut control_term = Vec::with_capacity(u.kink() * spec.dim);
        for k in 0..u.kink() {
            let t = grid.time(k);
            for i in 0..spec.dim {
                control_term.push(u.udot(k) * (spec.eigenvalues[i] * t).exp() * e0[i]);
            }
        }
        Ok(Self {
            inverse,
            control_term,
        })
    }

    pub(crate) fn hdot(&self, spec: &ModelSpec, traj: &Trajectory<'_>, upsilon: &AuxPath) -> IntegrandPath {
        let grid = traj.grid();
        let d = spec.dim;
        let mut out = IntegrandPath::zeros(d, grid.step, grid.k);
        let mut v = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let kink = self.control_term.len() / d;
        for k in 0..grid.k {
            spec.drift
                .derivative_cached(traj.sat_segment(k), upsilon.segment(k), &mut v, &mut scratch);
            if k < kink {
                for (vi, c) in v.iter_mut().zip(&self.control_term[k * d..(k + 1) * d]) {
                    *vi -= c;
                }
            }
            self.inverse.mul_vec_into(&v, out.at_mut(k));
        }
        out
    }
}

/// `ḣ(t_k) = σ^{-1}(X_k) Z_k / u_k` before `T - τ` and `σ^{-1}(X_k)∇_{Z_{t_k}}F(X_{t_k})`
/// after. Returns the integrand and `max_k ‖Z_k‖/u_k`.
pub fn multiplicative_hdot(
    spec: &ModelSpec,
    traj: &Trajectory<'_>,
    z: &AuxPath,
    u: &ControlFunction,
) -> Result<(IntegrandPath, f64)> {
    let grid = *traj.grid();
    u.check_grid(&grid)?;
    let inv = SigmaInverse::new(&spec.diffusion)?;
    let d = spec.dim;
    let mut out = IntegrandPath::zeros(d, grid.step, grid.k);
    let mut v = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut max_ratio: f64 = 0.0;
    for k in 0..grid.k {
        if k < u.kink() {
            let uk = u.u(k);
            if !(uk > 0.0) {
                return Err(Error::InvalidControl(format!("u(t_{k}) = {uk} inside [0, T - tau)")));
            }
            let zk = z.state(k);
            for i in 0..d {
                v[i] = zk[i] / uk;
            }
            max_ratio = max_ratio.max(norm(zk) / uk);
        } else {
            spec.drift
                .derivative_cached(traj.sat_segment(k), z.segment(k), &mut v, &mut scratch);
        }
        inv.apply(traj.sat_state(k), &v, out.at_mut(k));
    }
    Ok((out, max_ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriftSpec;
    use crate::pathsim::{integrate_mild, make_grid, sample_noise, NoiseBundle};

    fn scalar(lambda: f64, b0: f64, b1: f64, diffusion: DiffusionSpec, kind: NoiseKind) -> ModelSpec {
        ModelSpec {
            dim: 1,
            eigenvalues: vec![lambda],
            delay: 1.0,
            drift: DriftSpec::LinearDelay {
                b0: Matrix::diag(&[b0]),
                b1: Matrix::diag(&[b1]),
            },
            diffusion,
            a4_alpha: 0.25,
            noise_kind: kind,
        }
    }

    fn additive(lambda: f64, b0: f64, b1: f64, s: f64) -> ModelSpec {
        scalar(
            lambda,
            b0,
            b1,
            DiffusionSpec::Constant {
                s: Matrix::diag(&[s]),
            },
            NoiseKind::Additive,
        )
    }

    fn multiplicative(b0: f64, b1: f64) -> ModelSpec {
        scalar(
            -1.0,
            b0,
            b1,
            DiffusionSpec::DiagonalSaturating {
                s0: vec![1.0],
                s1: vec![0.5],
            },
            NoiseKind::Multiplicative,
        )
    }

    #[test]
    fn closed_form_controls() {
        let grid = make_grid(1.0, 2.5, 20).unwrap();
        let add = control_function(ControlKind::AdditiveNormalized, &grid, 2.0).unwrap();
        assert_eq!(add.u(0), 1.0);
        assert_eq!(add.u(grid.kink()), 0.0);
        assert_eq!(add.udot(3), -1.0 / 1.5);
        for p in [1.01, 1.5, 2.0, 4.0, 10.0] {
            let mul = control_function(ControlKind::MultiplicativeLinear, &grid, p).unwrap();
            assert!((mul.theta_p() - 1.0).abs() < 1e-15);
            assert!((mul.u(0) - 1.5).abs() < 1e-14);
            assert!(mul.values()[grid.kink()..].iter().all(|&v| v == 0.0));
        }
        assert!(control_function(ControlKind::MultiplicativeLinear, &grid, 1.0).is_err());
        assert!(control_function(ControlKind::Table, &grid, 2.0).is_err());
    }

    #[test]
    fn quadratic_table_theta() {
        for (span, ok) in [(0.25, true), (0.5, true), (0.9, true), (1.0, false), (1.5, false)] {
            let grid = make_grid(1.0, 1.0 + span, 200).unwrap();
            // Independent oracle: minimize 2 + u'(t) over a fine grid on [0, T - τ).
            let oracle = (0..10_000)
                .map(|j| 2.0 - 2.0 * (span - span * j as f64 / 10_000.0))
                .fold(f64::INFINITY, f64::min);
            let u = ControlFunction::power_law(&grid, 2.0, Some(1.0), 2.0);
            assert_eq!(u.is_ok(), ok, "span {span}");
            if let Ok(u) = u {
                assert!((u.theta_p() - oracle).abs() < 1e-12);
                assert!((u.theta_p() - (2.0 - 2.0 * span)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn from_nodes_rejects_bad_tables() {
        let grid = make_grid(1.0, 2.0, 4).unwrap();
        let n = grid.k + 1;
        let mut u = vec![0.0; n];
        u[..4].copy_from_slice(&[1.0, 0.75, 0.5, 0.25]);
        let udot = vec![-1.0; n];
        assert!(ControlFunction::from_nodes(ControlKind::Table, &grid, u.clone(), udot.clone(), 2.0).is_ok());
        let mut late = u.clone();
        late[5] = 0.1;
        assert!(ControlFunction::from_nodes(ControlKind::Table, &grid, late, udot.clone(), 2.0).is_err());
        let mut early = u.clone();
        early[2] = 0.0;
        assert!(ControlFunction::from_nodes(ControlKind::Table, &grid, early, udot.clone(), 2.0).is_err());
        assert!(ControlFunction::from_nodes(ControlKind::Table, &grid, u[..4].to_vec(), udot, 2.0).is_err());
    }

    #[test]
    fn upsilon_closed_form() {
        let spec = additive(-1.0, 0.0, 0.5, 0.3);
        let grid = make_grid(1.0, 2.0, 100).unwrap();
        let u = control_function(ControlKind::AdditiveNormalized, &grid, 2.0).unwrap();
        let eta = SegmentPath::from_fn(1, 100, 0.01, |t| vec![1.0 + t]);
        let ups = upsilon_path(&spec, &eta, &u, &grid).unwrap();
        assert_eq!(ups.role(), AuxRole::Upsilon);
        assert!((ups.state(50)[0] - 0.5 * (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(ups.state(0), eta.at_zero());
        assert_eq!(ups.segment(0).data(), eta.values());
        assert!((grid.kink()..=grid.k).all(|k| ups.state(k)[0] == 0.0));

        let flat = SegmentPath::from_fn(1, 100, 0.01, |t| vec![t]);
        let ups = upsilon_path(&spec, &flat, &u, &grid).unwrap();
        assert!((1..=grid.k).all(|k| ups.state(k)[0] == 0.0));
    }

    #[test]
    fn tangent_and_malliavin_without_drift() {
        let spec = additive(-2.0, 0.0, 0.0, 0.4);
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let xi = SegmentPath::constant(&[0.3], 10, grid.step);
        let noise = sample_noise(&grid, 1, 7, 0);
        let traj = integrate_mild(&spec, &xi, &noise, &grid).unwrap();

        let eta = SegmentPath::from_fn(1, 10, grid.step, |t| vec![2.0 + t]);
        let beta = tangent_path(&spec, &traj, &eta).unwrap();
        for k in 0..=grid.k {
            let expect = (-2.0 * grid.time(k)).exp() * 2.0;
            assert!((beta.state(k)[0] - expect).abs() < 1e-14);
        }

        let hdot = IntegrandPath::from_fn(1, grid.step, grid.k, |k| vec![(k as f64).sin()]);
        let alpha = malliavin_path(&spec, &traj, &hdot).unwrap();
        // Discrete variation of constants.
        let decay = (-2.0 * grid.step).exp();
        for k in 0..=grid.k {
            let expect: f64 = (0..k)
                .map(|j| decay.powi((k - j) as i32) * 0.4 * hdot.at(j)[0] * grid.step)
                .sum();
            assert!((alpha.state(k)[0] - expect).abs() < 1e-14);
        }
        let zero = malliavin_path(&spec, &traj, &IntegrandPath::zeros(1, grid.step, grid.k)).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn z_vanishes_from_kink() {
        let spec = multiplicative(0.3, 0.5);
        let grid = make_grid(1.0, 2.0, 50).unwrap();
        let u = control_function(ControlKind::MultiplicativeLinear, &grid, 2.0).unwrap();
        let xi = SegmentPath::constant(&[0.5], 50, grid.step);
        let eta = SegmentPath::constant(&[1.0], 50, grid.step);
        for idx in 0..5 {
            let noise = sample_noise(&grid, 1, 3, idx);
            let traj = integrate_mild(&spec, &xi, &noise, &grid).unwrap();
            let z = z_path(&spec, &traj, &eta, &u).unwrap();
            assert!((grid.kink()..=grid.k).all(|k| z.state(k)[0] == 0.0));
            assert!(z.state(grid.kink() - 1)[0] != 0.0);
            let zero = z_path(&spec, &traj, &SegmentPath::zeros(1, 50, grid.step), &u).unwrap();
            assert!(zero.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn z_rejects_bad_theta() {
        let spec = multiplicative(0.0, 0.5);
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let u = control_function(ControlKind::AdditiveNormalized, &grid, 2.0).unwrap();
        let xi = SegmentPath::constant(&[0.5], 10, grid.step);
        let noise = sample_noise(&grid, 1, 3, 0);
        let traj = integrate_mild(&spec, &xi, &noise, &grid).unwrap();
        assert!(z_path(&spec, &traj, &xi, &u).is_ok());
        // theta = 1.2 + 0.2·(-10) < 0

        let steep = ControlFunction::power_law(&grid, 1.0, Some(10.0), 1.2);
        assert!(steep.is_err());
    }

    #[test]
    fn additive_hdot_without_drift() {
        let spec = additive(-1.0, 0.0, 0.0, 0.5);
        let grid = make_grid(1.0, 2.5, 20).unwrap();
        let u = control_function(ControlKind::AdditiveNormalized, &grid, 2.0).unwrap();
        let xi = SegmentPath::constant(&[0.1], 20, grid.step);
        let eta = SegmentPath::constant(&[3.0], 20, grid.step);
        let noise = sample_noise(&grid, 1, 11, 4);
        let traj = integrate_mild(&spec, &xi, &noise, &grid).unwrap();
        let ups = upsilon_path(&spec, &eta, &u, &grid).unwrap();
        let h = additive_hdot(&spec, &traj, &ups, &u, &eta).unwrap();
        for k in 0..grid.k {
            let expect = if k < grid.kink() {
                (1.0 / 1.5) * (-grid.time(k)).exp() * 3.0 / 0.5
            } else {
                0.0
            };
            assert!((h.at(k)[0] - expect).abs() < 1e-14, "k = {k}");
        }
        let zero_eta = SegmentPath::zeros(1, 20, grid.step);
        let ups = upsilon_path(&spec, &zero_eta, &u, &grid).unwrap();
        let h = additive_hdot(&spec, &traj, &ups, &u, &zero_eta).unwrap();
        assert_eq!(h.max_norm(), 0.0);
    }

    #[test]
    fn additive_hdot_bound() {
        let spec = ModelSpec {
            dim: 2,
            eigenvalues: vec![-1.0, -2.0],
            delay: 0.5,
            drift: DriftSpec::BoundedNonlinear {
                g0: Matrix::from_rows(vec![vec![0.5, -0.3], vec![0.2, 0.4]]).unwrap(),
                g1: Matrix::from_rows(vec![vec![0.0, 0.6], vec![-0.5, 0.1]]).unwrap(),
                linear: None,
                weights: None,
            },
            diffusion: DiffusionSpec::Constant {
                s: Matrix::from_rows(vec![vec![0.5, 0.1], vec![0.0, 0.4]]).unwrap(),
            },
            a4_alpha: 0.25,
            noise_kind: NoiseKind::Additive,
        };
        let grid = make_grid(0.5, 1.5, 10).unwrap();
        let u = control_function(ControlKind::AdditiveNormalized, &grid, 2.0).unwrap();
        let xi = SegmentPath::from_fn(2, 10, grid.step, |t| vec![t.cos(), t.sin()]);
        let eta = SegmentPath::from_fn(2, 10, grid.step, |t| vec![1.0 + t, -0.5]);
        let ups = upsilon_path(&spec, &eta, &u, &grid).unwrap();
        let inv = spec.constant_sigma().unwrap().inverse().unwrap().operator_norm();
        let lip = spec.drift.lipschitz();
        let e0 = norm(eta.at_zero());
        for idx in 0..20 {
            let noise = sample_noise(&grid, 2, 5, idx);
            let traj = integrate_mild(&spec, &xi, &noise, &grid).unwrap();
            let h = additive_hdot(&spec, &traj, &ups, &u, &eta).unwrap();
            for k in 0..grid.k {
                let bound = inv * (lip * ups.segment(k).sup_norm() + u.udot(k).abs() * e0);
                assert!(norm(h.at(k)) <= bound * (1.0 + 1e-12), "k = {k}");
            }
        }
    }

    #[test]
    fn multiplicative_hdot_after_kink() {
        let spec = multiplicative(0.3, 0.5);
        let grid = make_grid(1.0, 2.0, 20).unwrap();
        let u = control_function(ControlKind::MultiplicativeLinear, &grid, 2.0).unwrap();
        let xi = SegmentPath::constant(&[0.5], 20, grid.step);
        let eta = SegmentPath::from_fn(1, 20, grid.step, |t| vec![1.0 - t]);
        let noise = sample_noise(&grid, 1, 9, 2);
        let traj = integrate_mild(&spec, &xi, &noise, &grid).unwrap();
        let z = z_path(&spec, &traj, &eta, &u).unwrap();
        let (h, max_ratio) = multiplicative_hdot(&spec, &traj, &z, &u).unwrap();
        let sigma = |x: f64| 1.0 + 0.5 * x.tanh();
        let mut ratio: f64 = 0.0;
        for k in 0..grid.k {
            let x = traj.state(k)[0];
            let expect = if k < grid.kink() {
                ratio = ratio.max(z.state(k)[0].abs() / u.u(k));
                z.state(k)[0] / u.u(k) / sigma(x)
            } else {
                let n = grid.m + k;
                (0.3 * z.node(n)[0] + 0.5 * z.node(n - grid.m)[0]) / sigma(x)
            };
            assert!((h.at(k)[0] - expect).abs() < 1e-14, "k = {k}");
        }
        assert!((max_ratio - ratio).abs() < 1e-14);
        // At the last step before the kink u is the left node value Δ.
        assert!((u.u(grid.kink() - 1) - grid.step).abs() < 1e-15);
    }

    #[test]
    fn hdot_inputs_are_checked() {
        let spec = multiplicative(0.0, 0.5);
        let grid = make_grid(1.0, 2.0, 10).unwrap();
        let u = control_function(ControlKind::AdditiveNormalized, &grid, 2.0).unwrap();
        let eta = SegmentPath::constant(&[1.0], 10, grid.step);
        let noise = NoiseBundle::from_increments(1, grid.step, vec![0.0; grid.k]).unwrap();
        let traj = integrate_mild(&spec, &eta, &noise, &grid).unwrap();
        let ups = upsilon_path(&spec, &eta, &u, &grid).unwrap();
        assert!(additive_hdot(&spec, &traj, &ups, &u, &eta).is_err());
        let other = make_grid(1.0, 3.0, 10).unwrap();
        let wrong = control_function(ControlKind::MultiplicativeLinear, &other, 2.0).unwrap();
        let z = z_path(&spec, &traj, &eta, &control_function(ControlKind::MultiplicativeLinear, &grid, 2.0).unwrap()).unwrap();
        assert!(multiplicative_hdot(&spec, &traj, &z, &wrong).is_err());
    }
}
