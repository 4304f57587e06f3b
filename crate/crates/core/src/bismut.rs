//! Itô weights and the Monte Carlo estimators of `P_T f` and `∇_η P_T f`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::mc::{run_paths, McConfig, Samples};
use crate::model::{ModelSpec, NoiseKind, TestFunctional};
use crate::pathsim::{integrate_mild, GridSpec, NoiseBundle, Trajectory};
use crate::segment::SegmentPath;
use crate::sensitivity::{
    multiplicative_hdot, upsilon_path, z_path, AdditiveForcing, AuxPath, ControlFunction,
    IntegrandPath,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "bismut-additive")]
    BismutAdditive,
    #[serde(rename = "bismut-multiplicative")]
    BismutMultiplicative,
    #[serde(rename = "fd")]
    FiniteDifference,
    #[serde(rename = "pathwise")]
    Pathwise,
    #[serde(rename = "analytic")]
    Analytic,
    #[serde(rename = "semigroup")]
    Semigroup,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::BismutAdditive => "bismut-additive",
            Method::BismutMultiplicative => "bismut-multiplicative",
            Method::FiniteDifference => "fd",
            Method::Pathwise => "pathwise",
            Method::Analytic => "analytic",
            Method::Semigroup => "semigroup",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// `max ‖ḣ(t_k)‖` over nodes and paths.
    pub max_integrand_norm: f64,
    /// `Ê[weight²]`
    pub weight_second_moment: f64,
    pub weight_mean: f64,
    pub weight_std_error: f64,
    pub failed_paths: usize,
    /// `max ‖Z(t_k)‖/u(t_k)` over nodes and paths, multiplicative runs only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_z_over_u: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl GradientEstimate {
    pub fn exact(value: f64, method: Method) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_paths: 0,
            method,
            diagnostics: Diagnostics::default(),
        }
    }

    /// `|a - b| / √(se_a² + se_b²)`; infinite when both errors vanish and
    /// the values differ.
    pub fn z_score(&self, other: &GradientEstimate) -> f64 {
        let diff = (self.value - other.value).abs();
        let se = self.std_error.hypot(other.std_error);
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }

    pub(crate) fn from_column(samples: &Samples, j: usize, method: Method) -> Self {
        Self {
            value: samples.mean(j),
            std_error: samples.std_error(j),
            n_paths: samples.n_paths(),
            method,
            diagnostics: Diagnostics {
                failed_paths: samples.failed(),
                ..Diagnostics::default()
            },
        }
    }
}

/// Left-point Itô sum `Σ_k ⟨g(t_k), ΔW_k⟩`.
pub fn ito_weight(g: &IntegrandPath, noise: &NoiseBundle) -> Result<f64> {
    if g.dim() != noise.dim() || g.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            what: "integrand steps",
            expected: noise.len(),
            found: g.len(),
        });
    }
    let mut s = 0.0;
    for k in 0..g.len() {
        s += dot(g.at(k), noise.increment(k));
    }
    Ok(s)
}

pub(crate) fn check_functional(spec: &ModelSpec, grid: &GridSpec, f: &TestFunctional) -> Result<()> {
    spec.check()?;
    f.check(spec.dim, grid.m)
}

/// `P̂_T f(ξ)`
pub fn estimate_semigroup(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    f: &TestFunctional,
    mc: &McConfig,
) -> Result<GradientEstimate> {
    check_functional(spec, grid, f)?;
    let samples = run_paths(mc, grid, spec.dim, 1, |_, noise| {
        let traj = integrate_mild(spec, xi, noise, grid)?;
        Ok(vec![f.eval(traj.terminal_segment())])
    })?;
    Ok(GradientEstimate::from_column(&samples, 0, Method::Semigroup))
}

/// What a Bismut run produces on one path.
pub(crate) struct WeightedPath<'n> {
    pub traj: Trajectory<'n>,
    pub hdot: IntegrandPath,
    pub weight: f64,
    pub max_z_over_u: Option<f64>,
}

/// Precomputed, path-independent parts of a Bismut estimator.
pub(crate) struct BismutSetup<'a> {
    pub spec: &'a ModelSpec,
    pub grid: &'a GridSpec,
    pub xi: &'a SegmentPath,
    pub eta: &'a SegmentPath,
    pub u: &'a ControlFunction,
    upsilon: Option<(AuxPath, AdditiveForcing)>,
}

impl<'a> BismutSetup<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        grid: &'a GridSpec,
        xi: &'a SegmentPath,
        eta: &'a SegmentPath,
        u: &'a ControlFunction,
    ) -> Result<Self> {
        spec.check()?;
        if eta.dim() != spec.dim || eta.m() != grid.m {
            return Err(Error::GridMismatch(format!(
                "direction has {} steps of dim {}, grid has {} steps of dim {}",
                eta.m(),
                eta.dim(),
                grid.m,
                spec.dim
            )));
        }
        let upsilon = match spec.noise_kind {
            NoiseKind::Additive => {
                if (u.u(0) - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidControl(format!(
                        "the additive formula needs u(0) = 1, got {}",
                        u.u(0)
                    )));
                }
                Some((
                    upsilon_path(spec, eta, u, grid)?,
                    AdditiveForcing::new(spec, grid, eta, u)?,
                ))
            }
            NoiseKind::Multiplicative => {
                if !(u.theta_p() > 0.0) {
                    return Err(Error::InvalidControl(format!(
                        "theta_p = {} must be positive",
                        u.theta_p()
                    )));
                }
                if !spec.diffusion.inverse_bound().is_finite() {
                    return Err(Error::Unsupported("unbounded diffusion inverse".into()));
                }
                None
            }
        };
        Ok(Self {
            spec,
            grid,
            xi,
            eta,
            u,
            upsilon,
        })
    }

    pub fn method(&self) -> Method {
        match self.spec.noise_kind {
            NoiseKind::Additive => Method::BismutAdditive,
            NoiseKind::Multiplicative => Method::BismutMultiplicative,
        }
    }

    /// Solution, integrand and weight on one noise realization, starting from `ξ`.
    pub fn path<'n>(&self, noise: &'n NoiseBundle) -> Result<WeightedPath<'n>> {
        self.path_from(self.xi, noise)
    }

    pub fn path_from<'n>(&self, xi: &SegmentPath, noise: &'n NoiseBundle) -> Result<WeightedPath<'n>> {
        let traj = integrate_mild(self.spec, xi, noise, self.grid)?;
        let (hdot, max_z_over_u) = self.integrand(&traj)?;
        let weight = ito_weight(&hdot, noise)?;
        Ok(WeightedPath {
            traj,
            hdot,
            weight,
            max_z_over_u,
        })
    }

    pub fn integrand(&self, traj: &Trajectory<'_>) -> Result<(IntegrandPath, Option<f64>)> {
        match &self.upsilon {
            Some((ups, forcing)) => Ok((forcing.hdot(self.spec, traj, ups), None)),
            None => {
                let z = z_path(self.spec, traj, self.eta, self.u)?;
                let (h, r) = multiplicative_hdot(self.spec, traj, &z, self.u)?;
                Ok((h, Some(r)))
            }
        }
    }

    pub fn upsilon(&self) -> Option<&AuxPath> {
        self.upsilon.as_ref().map(|(u, _)| u)
    }
}

fn estimate_gradient(setup: &BismutSetup<'_>, f: &TestFunctional, mc: &McConfig) -> Result<GradientEstimate> {
    check_functional(setup.spec, setup.grid, f)?;
    let samples = run_paths(mc, setup.grid, setup.spec.dim, 5, |_, noise| {
        let p = setup.path(noise)?;
        let fv = f.eval(p.traj.terminal_segment());
        Ok(vec![
            fv * p.weight,
            p.weight,
            p.weight * p.weight,
            p.hdot.max_norm(),
            p.max_z_over_u.unwrap_or(0.0),
        ])
    })?;
    Ok(GradientEstimate {
        value: samples.mean(0),
        std_error: samples.std_error(0),
        n_paths: samples.n_paths(),
        method: setup.method(),
        diagnostics: Diagnostics {
            max_integrand_norm: samples.max(3),
            weight_second_moment: samples.mean(2),
            weight_mean: samples.mean(1),
            weight_std_error: samples.std_error(1),
            failed_paths: samples.failed(),
            max_z_over_u: (setup.spec.noise_kind == NoiseKind::Multiplicative).then(|| samples.max(4)),
        },
    })
}

/// `∇_η P_T f(ξ) = E[f(X_T^ξ) ∫_0^T ⟨ḣ, dW⟩]` with the additive-noise integrand.
pub fn estimate_gradient_additive(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunctional,
    u: &ControlFunction,
    mc: &McConfig,
) -> Result<GradientEstimate> {
    if spec.noise_kind != NoiseKind::Additive {
        return Err(Error::Unsupported("model is not flagged additive".into()));
    }
    estimate_gradient(&BismutSetup::new(spec, grid, xi, eta, u)?, f, mc)
}

/// `∇_η P_T f(ξ) = E[f(X_T^ξ) ∫_0^T ⟨ḣ, dW⟩]` with the integrand built from `Z`.
pub fn estimate_gradient_multiplicative(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunctional,
    u: &ControlFunction,
    mc: &McConfig,
) -> Result<GradientEstimate> {
    if spec.noise_kind != NoiseKind::Multiplicative {
        return Err(Error::Unsupported("model is not flagged multiplicative".into()));
    }
    estimate_gradient(&BismutSetup::new(spec, grid, xi, eta, u)?, f, mc)
}

/// Dispatches on the model's noise kind.
pub fn estimate_gradient_bismut(
    spec: &ModelSpec,
    grid: &GridSpec,
    xi: &SegmentPath,
    eta: &SegmentPath,
    f: &TestFunctional,
    u: &ControlFunction,
    mc: &McConfig,
) -> Result<GradientEstimate> {
    estimate_gradient(&BismutSetup::new(spec, grid, xi, eta, u)?, f, mc)
}
