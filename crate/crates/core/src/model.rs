//! Truncated model: diagonal generator, drift functional on segments,
//! diffusion coefficient, test functionals, and checkable surrogates of the
//! standing assumptions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::segment::SegmentView;

/// Saturating map applied componentwise; derivative bounded by 1.
#[inline]
pub fn sat(x: f64) -> f64 {
    x.tanh()
}

#[inline]
pub fn sat_prime(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Additive,
    Multiplicative,
}

/// Drift functional `F: C → H`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftSpec {
    /// `F(ξ) = B0 ξ(0) + B1 ξ(-τ)`
    LinearDelay { b0: Matrix, b1: Matrix },
    /// `F(ξ) = L ξ(0) + G0 sat(ξ(0)) + G1 sat(ξ(-τ)) + Σ_j w_j sat(ξ(θ_j))`
    ///
    /// `L` is optional and mostly produced by [`normalize_pseudocontractive`];
    /// `w` has one entry per segment node.
    BoundedNonlinear {
        g0: Matrix,
        g1: Matrix,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        linear: Option<Matrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
}

impl DriftSpec {
    /// Declared bound on `‖∇F‖` as an operator from `(C, ‖·‖_∞)` to `H`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            DriftSpec::LinearDelay { b0, b1 } => b0.operator_norm() + b1.operator_norm(),
            DriftSpec::BoundedNonlinear {
                g0,
                g1,
                linear,
                weights,
            } => {
                g0.operator_norm()
                    + g1.operator_norm()
                    + linear.as_ref().map_or(0.0, Matrix::operator_norm)
                    + weights
                        .as_ref()
                        .map_or(0.0, |w| w.iter().map(|x| x.abs()).sum())
            }
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, DriftSpec::LinearDelay { .. })
    }

    fn check(&self, dim: usize) -> Result<()> {
        let square = |m: &Matrix, what: &'static str| -> Result<()> {
            if m.rows() != dim || m.cols() != dim {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: dim,
                    found: if m.rows() != dim { m.rows() } else { m.cols() },
                });
            }
            if !m.is_finite() {
                return Err(Error::InvalidSpec(format!("{what} has non-finite entries")));
            }
            Ok(())
        };
        match self {
            DriftSpec::LinearDelay { b0, b1 } => {
                square(b0, "drift b0")?;
                square(b1, "drift b1")
            }
            DriftSpec::BoundedNonlinear {
                g0,
                g1,
                linear,
                weights,
            } => {
                square(g0, "drift g0")?;
                square(g1, "drift g1")?;
                if let Some(l) = linear {
                    square(l, "drift linear")?;
                }
                if let Some(w) = weights {
                    if w.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidSpec("non-finite distributed weight".into()));
                    }
                }
                Ok(())
            }
        }
    }

    /// Grid compatibility: distributed weights need exactly `m + 1` entries.
    pub fn check_grid(&self, m: usize) -> Result<()> {
        if let DriftSpec::BoundedNonlinear {
            weights: Some(w), ..
        } = self
        {
            if w.len() != m + 1 {
                return Err(Error::GridMismatch(format!(
                    "distributed weights have {} entries, segment grid has {}",
                    w.len(),
                    m + 1
                )));
            }
        }
        Ok(())
    }

    /// `out = F(seg)`. `scratch` must hold at least `dim` entries.
    pub fn eval_into(&self, seg: SegmentView<'_>, out: &mut [f64], scratch: &mut [f64]) {
        match self {
            DriftSpec::LinearDelay { b0, b1 } => {
                b0.mul_vec_into(seg.at_zero(), out);
                b1.mul_vec_add(seg.at_delay(), out);
            }
            DriftSpec::BoundedNonlinear {
                g0,
                g1,
                linear,
                weights,
            } => {
                let d = out.len();
                let s = &mut scratch[..d];
                for (si, xi) in s.iter_mut().zip(seg.at_zero()) {
                    *si = sat(*xi);
                }
                g0.mul_vec_into(s, out);
                for (si, xi) in s.iter_mut().zip(seg.at_delay()) {
                    *si = sat(*xi);
                }
                g1.mul_vec_add(s, out);
                if let Some(l) = linear {
                    l.mul_vec_add(seg.at_zero(), out);
                }
                if let Some(w) = weights {
                    for (j, wj) in w.iter().enumerate() {
                        if *wj != 0.0 {
                            for (o, x) in out.iter_mut().zip(seg.node(j)) {
                                *o += wj * sat(*x);
                            }
                        }
                    }
                }
            }
        }
    }

    /// As [`eval_into`](Self::eval_into) with `sat` holding `tanh` of every node of `seg`.
    #[inline]
    pub(crate) fn eval_cached(&self, seg: SegmentView<'_>, sat: SegmentView<'_>, out: &mut [f64]) {
        match self {
            DriftSpec::LinearDelay { b0, b1 } => {
                b0.mul_vec_into(seg.at_zero(), out);
                b1.mul_vec_add(seg.at_delay(), out);
            }
            DriftSpec::BoundedNonlinear {
                g0,
                g1,
                linear,
                weights,
            } => {
                g0.mul_vec_into(sat.at_zero(), out);
                g1.mul_vec_add(sat.at_delay(), out);
                if let Some(l) = linear {
                    l.mul_vec_add(seg.at_zero(), out);
                }
                if let Some(w) = weights {
                    for (j, wj) in w.iter().enumerate() {
                        if *wj != 0.0 {
                            for (o, s) in out.iter_mut().zip(sat.node(j)) {
                                *o += wj * s;
                            }
                        }
                    }
                }
            }
        }
    }

    /// As [`derivative_into`](Self::derivative_into) with `sat` holding `tanh` of the base segment.
    #[inline]
    pub(crate) fn derivative_cached(
        &self,
        sat: SegmentView<'_>,
        dir: SegmentView<'_>,
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        match self {
            DriftSpec::LinearDelay { b0, b1 } => {
                b0.mul_vec_into(dir.at_zero(), out);
                b1.mul_vec_add(dir.at_delay(), out);
            }
            DriftSpec::BoundedNonlinear {
                g0,
                g1,
                linear,
                weights,
            } => {
                let d = out.len();
                let s = &mut scratch[..d];
                for ((si, t), vi) in s.iter_mut().zip(sat.at_zero()).zip(dir.at_zero()) {
                    *si = (1.0 - t * t) * vi;
                }
                g0.mul_vec_into(s, out);
                for ((si, t), vi) in s.iter_mut().zip(sat.at_delay()).zip(dir.at_delay()) {
                    *si = (1.0 - t * t) * vi;
                }
                g1.mul_vec_add(s, out);
                if let Some(l) = linear {
                    l.mul_vec_add(dir.at_zero(), out);
                }
                if let Some(w) = weights {
                    for (j, wj) in w.iter().enumerate() {
                        if *wj != 0.0 {
                            for ((o, t), v) in out.iter_mut().zip(sat.node(j)).zip(dir.node(j)) {
                                *o += wj * (1.0 - t * t) * v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `out = ∇_dir F(seg)`. Linear in `dir`.
    pub fn derivative_into(
        &self,
        seg: SegmentView<'_>,
        dir: SegmentView<'_>,
        out: &mut [f64],
        scratch: &mut [f64],
    ) {
        match self {
            DriftSpec::LinearDelay { b0, b1 } => {
                b0.mul_vec_into(dir.at_zero(), out);
                b1.mul_vec_add(dir.at_delay(), out);
            }
            DriftSpec::BoundedNonlinear {
                g0,
                g1,
                linear,
                weights,
            } => {
                let d = out.len();
                let s = &mut scratch[..d];
                for ((si, xi), vi) in s.iter_mut().zip(seg.at_zero()).zip(dir.at_zero()) {
                    *si = sat_prime(*xi) * vi;
                }
                g0.mul_vec_into(s, out);
                for ((si, xi), vi) in s.iter_mut().zip(seg.at_delay()).zip(dir.at_delay()) {
                    *si = sat_prime(*xi) * vi;
                }
                g1.mul_vec_add(s, out);
                if let Some(l) = linear {
                    l.mul_vec_add(dir.at_zero(), out);
                }
                if let Some(w) = weights {
                    for (j, wj) in w.iter().enumerate() {
                        if *wj != 0.0 {
                            for ((o, x), v) in out.iter_mut().zip(seg.node(j)).zip(dir.node(j)) {
                                *o += wj * sat_prime(*x) * v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Diffusion coefficient `σ: H → L(H)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSpec {
    Constant { s: Matrix },
    /// `σ(x)_ii = s0_i + s1_i·sat(x_i)` with `|s1_i| < s0_i`.
    DiagonalSaturating { s0: Vec<f64>, s1: Vec<f64> },
}

impl DiffusionSpec {
    fn check(&self, dim: usize) -> Result<()> {
        match self {
            DiffusionSpec::Constant { s } => {
                if s.rows() != dim || s.cols() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "diffusion matrix",
                        expected: dim,
                        found: s.rows(),
                    });
                }
                if s.inverse().is_none() {
                    return Err(Error::InvalidSpec("constant diffusion matrix is singular".into()));
                }
                Ok(())
            }
            DiffusionSpec::DiagonalSaturating { s0, s1 } => {
                if s0.len() != dim || s1.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "diagonal diffusion",
                        expected: dim,
                        found: if s0.len() != dim { s0.len() } else { s1.len() },
                    });
                }
                for (i, (a, b)) in s0.iter().zip(s1).enumerate() {
                    if !(b.abs() < *a) || !a.is_finite() {
                        return Err(Error::InvalidSpec(format!(
                            "diagonal diffusion entry {i} needs |s1| < s0, got s0={a}, s1={b}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_state_independent(&self) -> bool {
        match self {
            DiffusionSpec::Constant { .. } => true,
            DiffusionSpec::DiagonalSaturating { s1, .. } => s1.iter().all(|x| *x == 0.0),
        }
    }

    /// Bound on `‖∇_v σ(x)‖_HS / ‖v‖` (Frobenius norm).
    pub fn lipschitz(&self) -> f64 {
        match self {
            DiffusionSpec::Constant { .. } => 0.0,
            DiffusionSpec::DiagonalSaturating { s1, .. } => {
                s1.iter().map(|x| x.abs()).fold(0.0, f64::max)
            }
        }
    }

    /// `sup_x ‖σ(x)^{-1}‖`
    pub fn inverse_bound(&self) -> f64 {
        match self {
            DiffusionSpec::Constant { s } => s.inverse().map_or(f64::INFINITY, |m| m.operator_norm()),
            DiffusionSpec::DiagonalSaturating { s0, s1 } => {
                let floor = s0
                    .iter()
                    .zip(s1)
                    .map(|(a, b)| a - b.abs())
                    .fold(f64::INFINITY, f64::min);
                1.0 / floor
            }
        }
    }

    pub fn sigma(&self, x: &[f64]) -> Matrix {
        match self {
            DiffusionSpec::Constant { s } => s.clone(),
            DiffusionSpec::DiagonalSaturating { s0, s1 } => Matrix::diag(
                &s0.iter()
                    .zip(s1)
                    .zip(x)
                    .map(|((a, b), xi)| a + b * sat(*xi))
                    .collect::<Vec<_>>(),
            ),
        }
    }

    pub fn sigma_inverse(&self, x: &[f64]) -> Matrix {
        match self {
            DiffusionSpec::Constant { s } => s.inverse().expect("validated invertible"),
            DiffusionSpec::DiagonalSaturating { s0, s1 } => Matrix::diag(
                &s0.iter()
                    .zip(s1)
                    .zip(x)
                    .map(|((a, b), xi)| 1.0 / (a + b * sat(*xi)))
                    .collect::<Vec<_>>(),
            ),
        }
    }

    /// `∇_v σ(x)`
    pub fn sigma_derivative(&self, x: &[f64], v: &[f64]) -> Matrix {
        match self {
            DiffusionSpec::Constant { s } => Matrix::zeros(s.rows(), s.cols()),
            DiffusionSpec::DiagonalSaturating { s1, .. } => Matrix::diag(
                &s1.iter()
                    .zip(x)
                    .zip(v)
                    .map(|((b, xi), vi)| b * sat_prime(*xi) * vi)
                    .collect::<Vec<_>>(),
            ),
        }
    }

    /// `out = σ(x)·w`
    #[inline]
    pub fn apply_into(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        match self {
            DiffusionSpec::Constant { s } => s.mul_vec_into(w, out),
            DiffusionSpec::DiagonalSaturating { s0, s1 } => {
                for i in 0..out.len() {
                    out[i] = (s0[i] + s1[i] * sat(x[i])) * w[i];
                }
            }
        }
    }

    /// `out = σ(x)·w` given `sat = tanh(x)`.
    #[inline]
    pub(crate) fn apply_cached(&self, sat: &[f64], w: &[f64], out: &mut [f64]) {
        match self {
            DiffusionSpec::Constant { s } => s.mul_vec_into(w, out),
            DiffusionSpec::DiagonalSaturating { s0, s1 } => {
                for i in 0..out.len() {
                    out[i] = (s0[i] + s1[i] * sat[i]) * w[i];
                }
            }
        }
    }

    /// `out += (∇_v σ(x))·w` given `sat = tanh(x)`.
    #[inline]
    pub(crate) fn derivative_apply_add_cached(&self, sat: &[f64], v: &[f64], w: &[f64], out: &mut [f64]) {
        if let DiffusionSpec::DiagonalSaturating { s1, .. } = self {
            for i in 0..out.len() {
                out[i] += s1[i] * (1.0 - sat[i] * sat[i]) * v[i] * w[i];
            }
        }
    }

    /// `out += (∇_v σ(x))·w`
    #[inline]
    pub fn derivative_apply_add(&self, x: &[f64], v: &[f64], w: &[f64], out: &mut [f64]) {
        if let DiffusionSpec::DiagonalSaturating { s1, .. } = self {
            for i in 0..out.len() {
                out[i] += s1[i] * sat_prime(x[i]) * v[i] * w[i];
            }
        }
    }
}

/// Test functional `f` on segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunctional {
    /// `f(ξ) = ⟨v, ξ(0)⟩`
    LinearEndpoint { v: Vec<f64> },
    /// `f(ξ) = tanh⟨v, ξ(0)⟩ + ½ sin⟨w, ξ(-τ/2)⟩`
    BoundedSmooth {
        v: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w: Option<Vec<f64>>,
    },
    /// `f(ξ) = scale·exp(amp·tanh⟨v, ξ(0)⟩)`, values in `(scale·e^{-|amp|}, scale·e^{|amp|})`.
    PositiveBounded { v: Vec<f64>, amp: f64, scale: f64 },
    /// `f(ξ) = 1{⟨v, ξ(0)⟩ > threshold}`; no gradient rule.
    Indicator { v: Vec<f64>, threshold: f64 },
}

impl TestFunctional {
    pub fn check(&self, dim: usize, m: usize) -> Result<()> {
        let check_len = |v: &Vec<f64>| -> Result<()> {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "test functional",
                    expected: dim,
                    found: v.len(),
                });
            }
            Ok(())
        };
        match self {
            TestFunctional::LinearEndpoint { v } | TestFunctional::Indicator { v, .. } => check_len(v),
            TestFunctional::BoundedSmooth { v, w } => {
                check_len(v)?;
                if let Some(w) = w {
                    check_len(w)?;
                    if m % 2 != 0 {
                        return Err(Error::GridMismatch(
                            "reading ξ(-τ/2) needs an even number of delay steps".into(),
                        ));
                    }
                }
                Ok(())
            }
            TestFunctional::PositiveBounded { v, scale, .. } => {
                check_len(v)?;
                if !(*scale > 0.0) {
                    return Err(Error::InvalidArgument("positive functional needs scale > 0".into()));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, seg: SegmentView<'_>) -> f64 {
        match self {
            TestFunctional::LinearEndpoint { v } => dot(v, seg.at_zero()),
            TestFunctional::BoundedSmooth { v, w } => {
                let mut val = dot(v, seg.at_zero()).tanh();
                if let Some(w) = w {
                    val += 0.5 * dot(w, seg.at_half_delay()).sin();
                }
                val
            }
            TestFunctional::PositiveBounded { v, amp, scale } => {
                scale * (amp * dot(v, seg.at_zero()).tanh()).exp()
            }
            TestFunctional::Indicator { v, threshold } => {
                if dot(v, seg.at_zero()) > *threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `∇_dir f(seg)`, when the functional is differentiable.
    pub fn gradient(&self, seg: SegmentView<'_>, dir: SegmentView<'_>) -> Option<f64> {
        match self {
            TestFunctional::LinearEndpoint { v } => Some(dot(v, dir.at_zero())),
            TestFunctional::BoundedSmooth { v, w } => {
                let t = dot(v, seg.at_zero()).tanh();
                let mut g = (1.0 - t * t) * dot(v, dir.at_zero());
                if let Some(w) = w {
                    g += 0.5 * dot(w, seg.at_half_delay()).cos() * dot(w, dir.at_half_delay());
                }
                Some(g)
            }
            TestFunctional::PositiveBounded { v, amp, scale } => {
                let t = dot(v, seg.at_zero()).tanh();
                let f = scale * (amp * t).exp();
                Some(f * amp * (1.0 - t * t) * dot(v, dir.at_zero()))
            }
            TestFunctional::Indicator { .. } => None,
        }
    }

    pub fn has_gradient(&self) -> bool {
        !matches!(self, TestFunctional::Indicator { .. })
    }

    /// Strictly positive lower and upper bounds, when the functional has them.
    pub fn positive_bounds(&self) -> Option<(f64, f64)> {
        match self {
            TestFunctional::PositiveBounded { amp, scale, .. } => {
                Some((scale * (-amp.abs()).exp(), scale * amp.abs().exp()))
            }
            _ => None,
        }
    }
}

/// The truncated model on `H ≅ R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    /// Eigenvalues of the diagonal generator `A`, units 1/time.
    pub eigenvalues: Vec<f64>,
    /// Delay `τ`, units of time.
    pub delay: f64,
    pub drift: DriftSpec,
    pub diffusion: DiffusionSpec,
    /// The exponent `α ∈ (0, 1/2)` of the stochastic-convolution integrability condition.
    pub a4_alpha: f64,
    pub noise_kind: NoiseKind,
}

impl ModelSpec {
    /// Whether any coefficient evaluates `tanh` of the state.
    pub(crate) fn saturates(&self) -> bool {
        matches!(self.drift, DriftSpec::BoundedNonlinear { .. })
            || matches!(self.diffusion, DiffusionSpec::DiagonalSaturating { .. })
    }

    /// Structural validation. Assumption checks live in [`validate_assumptions`].
    pub fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        if self.eigenvalues.len() != self.dim {
            return Err(Error::DimensionMismatch {
                what: "eigenvalues",
                expected: self.dim,
                found: self.eigenvalues.len(),
            });
        }
        if self.eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidSpec("non-finite eigenvalue".into()));
        }
        if !(self.delay > 0.0) || !self.delay.is_finite() {
            return Err(Error::InvalidSpec(format!("delay {} must be positive", self.delay)));
        }
        if !(self.a4_alpha > 0.0 && self.a4_alpha < 0.5) {
            return Err(Error::InvalidSpec(format!(
                "a4_alpha {} must lie in (0, 1/2)",
                self.a4_alpha
            )));
        }
        self.drift.check(self.dim)?;
        self.diffusion.check(self.dim)?;
        if self.noise_kind == NoiseKind::Additive && !self.diffusion.is_state_independent() {
            return Err(Error::InvalidSpec(
                "additive noise requires a state-independent diffusion".into(),
            ));
        }
        Ok(())
    }

    /// Constant diffusion matrix, for additive models.
    pub fn constant_sigma(&self) -> Option<Matrix> {
        if !self.diffusion.is_state_independent() {
            return None;
        }
        Some(self.diffusion.sigma(&vec![0.0; self.dim]))
    }

    /// The same model flagged as additive noise, if its diffusion is constant.
    pub fn as_additive(&self) -> Result<ModelSpec> {
        let s = self
            .constant_sigma()
            .ok_or_else(|| Error::Unsupported("diffusion is state dependent".into()))?;
        Ok(ModelSpec {
            diffusion: DiffusionSpec::Constant { s },
            noise_kind: NoiseKind::Additive,
            ..self.clone()
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// `∫_0^1 s^{-2α} ‖e^{sA} σ(0)‖²_HS ds`
    pub a4_integral: f64,
    pub drift_lipschitz: f64,
    pub sigma_lipschitz: f64,
    pub sigma_inverse_bound: f64,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

/// Checks the standing assumptions on the truncated model. Failed checks are
/// listed in the report; only a structurally invalid spec is an error.
pub fn validate_assumptions(spec: &ModelSpec) -> Result<AssumptionReport> {
    spec.check()?;
    let mut checks = Vec::new();

    let max_lambda = spec.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    checks.push(AssumptionCheck {
        name: "A1".into(),
        passed: max_lambda <= 0.0,
        detail: format!("max eigenvalue {max_lambda}"),
    });

    let lf = spec.drift.lipschitz();
    checks.push(AssumptionCheck {
        name: "A2".into(),
        passed: lf.is_finite(),
        detail: format!("drift derivative bound {lf}"),
    });

    let ls = spec.diffusion.lipschitz();
    let inv = spec.diffusion.inverse_bound();
    checks.push(AssumptionCheck {
        name: "A3".into(),
        passed: ls.is_finite() && inv.is_finite(),
        detail: format!("diffusion derivative bound {ls}, inverse bound {inv}"),
    });

    let a4 = a4_integral(spec);
    checks.push(AssumptionCheck {
        name: "A4".into(),
        passed: a4.is_finite(),
        detail: format!("alpha {}, integral {a4}", spec.a4_alpha),
    });

    Ok(AssumptionReport {
        checks,
        a4_integral: a4,
        drift_lipschitz: lf,
        sigma_lipschitz: ls,
        sigma_inverse_bound: inv,
    })
}

/// `∫_0^1 s^{-2α} ‖e^{sA}σ(0)‖²_HS ds`, evaluated after the substitution
/// `r = s^{1-2α}` which removes the endpoint singularity.
fn a4_integral(spec: &ModelSpec) -> f64 {
    let sigma0 = spec.diffusion.sigma(&vec![0.0; spec.dim]);
    let beta = 1.0 - 2.0 * spec.a4_alpha;
    spec.eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let row_sq: f64 = sigma0.row(i).iter().map(|x| x * x).sum();
            if row_sq == 0.0 {
                return 0.0;
            }
            let g = |r: f64| (2.0 * lambda * r.powf(1.0 / beta)).exp();
            row_sq * adaptive_simpson(&g, 0.0, 1.0, 1e-14, 50) / beta
        })
        .sum()
}

fn adaptive_simpson(g: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        g: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (g(lm), g(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(g, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(g, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fm, fb) = (g(a), g(0.5 * (a + b)), g(b));
    let whole = simpson(fa, fm, fb, a, b);
    rec(g, a, b, fa, fm, fb, whole, tol, depth)
}

/// Shifts a pseudo-contractive generator to a contractive one: `A - α₀` and
/// `F(ξ) + α₀ ξ(0)` with `α₀ = max λ_i`. Identity when already contractive.
pub fn normalize_pseudocontractive(spec: &ModelSpec) -> ModelSpec {
    let shift = spec.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(shift > 0.0) {
        return spec.clone();
    }
    let eigenvalues = spec.eigenvalues.iter().map(|l| l - shift).collect();
    let drift = match &spec.drift {
        DriftSpec::LinearDelay { b0, b1 } => DriftSpec::LinearDelay {
            b0: b0.add_scaled_identity(shift),
            b1: b1.clone(),
        },
        DriftSpec::BoundedNonlinear {
            g0,
            g1,
            linear,
            weights,
        } => DriftSpec::BoundedNonlinear {
            g0: g0.clone(),
            g1: g1.clone(),
            linear: Some(
                linear
                    .clone()
                    .unwrap_or_else(|| Matrix::zeros(spec.dim, spec.dim))
                    .add_scaled_identity(shift),
            ),
            weights: weights.clone(),
        },
    };
    ModelSpec {
        eigenvalues,
        drift,
        ..spec.clone()
    }
}

fn check_segments(drift: &DriftSpec, seg: SegmentView<'_>, dir: Option<SegmentView<'_>>) -> Result<()> {
    drift.check_grid(seg.m())?;
    if let Some(dir) = dir {
        if dir.dim() != seg.dim() || dir.m() != seg.m() {
            return Err(Error::GridMismatch(format!(
                "segment has {} nodes of dim {}, direction has {} of dim {}",
                seg.m() + 1,
                seg.dim(),
                dir.m() + 1,
                dir.dim()
            )));
        }
    }
    Ok(())
}

pub fn eval_drift(drift: &DriftSpec, seg: SegmentView<'_>) -> Result<Vec<f64>> {
    check_segments(drift, seg, None)?;
    let mut out = vec![0.0; seg.dim()];
    let mut scratch = vec![0.0; seg.dim()];
    drift.eval_into(seg, &mut out, &mut scratch);
    Ok(out)
}

pub fn eval_drift_derivative(
    drift: &DriftSpec,
    seg: SegmentView<'_>,
    dir: SegmentView<'_>,
) -> Result<Vec<f64>> {
    check_segments(drift, seg, Some(dir))?;
    let mut out = vec![0.0; seg.dim()];
    let mut scratch = vec![0.0; seg.dim()];
    drift.derivative_into(seg, dir, &mut out, &mut scratch);
    Ok(out)
}

pub fn eval_sigma(diff: &DiffusionSpec, x: &[f64]) -> Matrix {
    diff.sigma(x)
}

pub fn eval_sigma_inverse(diff: &DiffusionSpec, x: &[f64]) -> Matrix {
    diff.sigma_inverse(x)
}

pub fn eval_sigma_derivative(diff: &DiffusionSpec, x: &[f64], v: &[f64]) -> Matrix {
    diff.sigma_derivative(x, v)
}

/// `e^{tA} v`, componentwise for the diagonal generator.
pub fn semigroup_apply(spec: &ModelSpec, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if v.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            what: "semigroup argument",
            expected: spec.dim,
            found: v.len(),
        });
    }
    Ok(spec
        .eigenvalues
        .iter()
        .zip(v)
        .map(|(l, x)| (l * t).exp() * x)
        .collect())
}
