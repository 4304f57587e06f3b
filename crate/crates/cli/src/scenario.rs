//! Scenario configuration: a strict TOML schema and the bundled golden set.
//!
//! Units: `grid.T` and `model.delay` are in units of time, eigenvalues in
//! 1/time. `grid.m` is the number of steps per delay, so `Δ = τ/m`.

use serde::{Deserialize, Serialize};

use bismut_core::sensitivity::ControlKind;
use bismut_core::{
    control_function, make_grid, normalize_pseudocontractive, validate_assumptions,
    ControlFunction, GridSpec, McConfig, ModelSpec, NoiseKind, SegmentPath, SegmentSpec,
    TestFunctional,
};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Gradient,
    OracleCompare,
    Ibp,
    InequalitySweep,
    Convergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub experiment: Experiment,
    /// Replace a pseudo-contractive generator by its shifted contractive form.
    #[serde(default)]
    pub normalize: bool,
    pub model: ModelSpec,
    pub grid: GridConfig,
    pub control: ControlConfig,
    pub mc: McSection,
    pub functional: TestFunctional,
    pub initial: SegmentSpec,
    pub direction: SegmentSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ibp: Option<IbpConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsConfig>,
    #[serde(default)]
    pub check: CheckConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Steps per delay.
    pub m: usize,
    /// Horizon, units of time.
    #[serde(rename = "T")]
    pub horizon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub kind: ControlKind,
    /// Moment order of the multiplicative bound.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Table controls: `u = scale·((T-τ-t)^+)^exponent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    /// Table controls; omitted means `u(0) = 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

fn default_p() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "one")]
    pub noise_refinement: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Analytic,
    Pathwise,
    Fd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: Vec<OracleKind>,
    /// Finite-difference step; defaults to `1e-3·max(1, ‖ξ‖)/‖η‖`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbpConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
}

fn default_epsilon() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepConfig {
    GradientAdditive {
        /// Values of `T - τ`.
        spans: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_max: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paths: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        functional: Option<TestFunctional>,
    },
    GradientMultiplicative {
        spans: Vec<f64>,
        p: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_max: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paths: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        functional: Option<TestFunctional>,
    },
    Entropy {
        deltas: Vec<f64>,
        /// Configured constant on the `‖η‖²/δ` term; omitted means extract it.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<f64>,
        /// Repeat at twice the paths and compare the extracted constants.
        #[serde(default = "yes")]
        doubling: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paths: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        functional: Option<TestFunctional>,
    },
    Harnack {
        alpha: Vec<f64>,
        eta_scale: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c_max: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paths: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        functional: Option<TestFunctional>,
    },
    StrongFeller {
        epsilons: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        paths: Option<usize>,
        functional: TestFunctional,
    },
}

fn yes() -> bool {
    true
}

impl SweepConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SweepConfig::GradientAdditive { .. } => "gradient-additive",
            SweepConfig::GradientMultiplicative { .. } => "gradient-multiplicative",
            SweepConfig::Entropy { .. } => "entropy",
            SweepConfig::Harnack { .. } => "harnack",
            SweepConfig::StrongFeller { .. } => "strong-feller",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    /// Halvings of `Δ` after the base grid; `1` compares `Δ` with `Δ/2`.
    #[serde(default = "one")]
    pub halvings: usize,
    /// Levels of the strong self-convergence study; `0` skips it.
    #[serde(default)]
    pub self_levels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<ZConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<IdentityConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZConfig {
    pub paths: usize,
    #[serde(default = "default_moments")]
    pub p: Vec<f64>,
    /// Factor applied to `η` for the homogeneity check.
    #[serde(default = "default_scale")]
    pub eta_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

fn default_moments() -> Vec<f64> {
    vec![2.0, 4.0]
}

fn default_scale() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityConfig {
    /// Steps per delay of each level.
    pub m: Vec<usize>,
    pub paths: usize,
    /// Control used for the residual study; defaults to the scenario control.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlConfig>,
}

/// Tolerances used by `--check`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Multiple of the combined standard error.
    #[serde(default = "three")]
    pub se_multiple: f64,
    /// Constant `c` of the `c·√Δ` discretization allowance.
    #[serde(default = "unit")]
    pub sqrt_dt_constant: f64,
    #[serde(default = "three")]
    pub bounded_ratio: f64,
    #[serde(default = "default_slope")]
    pub min_slope: f64,
    /// Allowed relative change of `∫‖Z‖²/u²` under `Δ → Δ/2`.
    #[serde(default = "default_z_change")]
    pub z_integral_change: f64,
}

fn three() -> f64 {
    3.0
}

fn unit() -> f64 {
    1.0
}

fn default_slope() -> f64 {
    0.9
}

fn default_z_change() -> f64 {
    0.1
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            se_multiple: 3.0,
            sqrt_dt_constant: 1.0,
            bounded_ratio: 3.0,
            min_slope: 0.9,
            z_integral_change: 0.1,
        }
    }
}

/// Scenario materialized on its base grid.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub scenario: Scenario,
    pub spec: ModelSpec,
    pub grid: GridSpec,
}

impl ControlConfig {
    pub fn build(&self, grid: &GridSpec) -> bismut_core::Result<ControlFunction> {
        match self.kind {
            ControlKind::Table => ControlFunction::power_law(
                grid,
                self.exponent.unwrap_or(1.0),
                self.scale,
                self.p,
            ),
            kind => control_function(kind, grid, self.p),
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn mc(&self, threads: Option<usize>) -> McConfig {
        McConfig {
            n_paths: self.mc.paths,
            seed: self.mc.seed,
            antithetic: self.mc.antithetic,
            threads,
            noise_refinement: self.mc.noise_refinement,
        }
    }

    /// `ξ` and `η` sampled on `grid`.
    pub fn segments(&self, grid: &GridSpec) -> bismut_core::Result<(SegmentPath, SegmentPath)> {
        let d = self.model.dim;
        Ok((
            self.initial.sample(d, grid.m, grid.step)?,
            self.direction.sample(d, grid.m, grid.step)?,
        ))
    }

    /// Semantic checks beyond the schema. Errors name the offending key.
    pub fn prepare(&self) -> Result<Prepared, CliError> {
        let bad = |key: &str, msg: String| CliError::Validation(format!("key `{key}`: {msg}"));
        if self.id.trim().is_empty() {
            return Err(bad("id", "must not be empty".into()));
        }
        let spec = if self.normalize {
            normalize_pseudocontractive(&self.model)
        } else {
            self.model.clone()
        };
        let report = validate_assumptions(&spec).map_err(|e| bad("model", e.to_string()))?;
        if let Some(c) = report.failures().first() {
            return Err(bad("model", format!("assumption {} fails ({})", c.name, c.detail)));
        }
        let grid = make_grid(spec.delay, self.grid.horizon, self.grid.m)
            .map_err(|e| bad("grid", e.to_string()))?;
        spec.drift.check_grid(grid.m).map_err(|e| bad("model.drift", e.to_string()))?;
        if self.mc.paths == 0 {
            return Err(bad("mc.paths", "must be positive".into()));
        }
        if self.mc.noise_refinement == 0 {
            return Err(bad("mc.noise_refinement", "must be positive".into()));
        }
        self.functional
            .check(spec.dim, grid.m)
            .map_err(|e| bad("functional", e.to_string()))?;
        self.initial
            .sample(spec.dim, grid.m, grid.step)
            .map_err(|e| bad("initial", e.to_string()))?;
        self.direction
            .sample(spec.dim, grid.m, grid.step)
            .map_err(|e| bad("direction", e.to_string()))?;
        self.control.build(&grid).map_err(|e| bad("control", e.to_string()))?;
        match (spec.noise_kind, self.control.kind) {
            (NoiseKind::Additive, ControlKind::MultiplicativeLinear) => {
                return Err(bad("control.kind", "multiplicative control on an additive model".into()))
            }
            (NoiseKind::Multiplicative, ControlKind::AdditiveNormalized) => {
                return Err(bad("control.kind", "additive control on a multiplicative model".into()))
            }
            _ => {}
        }

        let needs = |present: bool, key: &str| {
            if present {
                Ok(())
            } else {
                Err(bad(key, format!("required by experiment {:?}", self.experiment)))
            }
        };
        match self.experiment {
            Experiment::Gradient => {}
            Experiment::OracleCompare => needs(self.oracle.is_some(), "oracle")?,
            Experiment::Ibp => needs(self.ibp.is_some(), "ibp")?,
            Experiment::InequalitySweep => needs(!self.sweep.is_empty(), "sweep")?,
            Experiment::Convergence => needs(self.convergence.is_some(), "convergence")?,
        }
        if let Some(o) = &self.oracle {
            if o.kind.is_empty() {
                return Err(bad("oracle.kind", "list at least one oracle".into()));
            }
            if o.epsilon.is_some_and(|e| !(e > 0.0)) {
                return Err(bad("oracle.epsilon", "must be positive".into()));
            }
            if o.kind.contains(&OracleKind::Analytic)
                && !(spec.drift.is_linear() && spec.diffusion.is_state_independent())
            {
                return Err(bad("oracle.kind", "analytic oracle needs a linear additive model".into()));
            }
        }
        if let Some(i) = &self.ibp {
            if !(i.epsilon > 0.0) {
                return Err(bad("ibp.epsilon", "must be positive".into()));
            }
        }
        for (j, s) in self.sweep.iter().enumerate() {
            let key = format!("sweep[{j}]");
            match s {
                SweepConfig::GradientAdditive { spans, .. } => {
                    if spec.noise_kind != NoiseKind::Additive {
                        return Err(bad(&key, "additive sweep on a multiplicative model".into()));
                    }
                    if spans.is_empty() || spans.iter().any(|s| !(*s > 0.0)) {
                        return Err(bad(&format!("{key}.spans"), "need positive values".into()));
                    }
                }
                SweepConfig::GradientMultiplicative { spans, p, .. } => {
                    if spec.noise_kind != NoiseKind::Multiplicative {
                        return Err(bad(&key, "multiplicative sweep on an additive model".into()));
                    }
                    if spans.is_empty() || spans.iter().any(|s| !(*s > 0.0)) {
                        return Err(bad(&format!("{key}.spans"), "need positive values".into()));
                    }
                    if p.is_empty() || p.iter().any(|p| !(*p > 1.0)) {
                        return Err(bad(&format!("{key}.p"), "moment orders must exceed 1".into()));
                    }
                }
                SweepConfig::Entropy { deltas, functional, .. } => {
                    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
                        return Err(bad(&format!("{key}.deltas"), "need positive values".into()));
                    }
                    if functional.as_ref().unwrap_or(&self.functional).positive_bounds().is_none() {
                        return Err(bad(&key, "entropy bound needs a positive functional".into()));
                    }
                }
                SweepConfig::Harnack { alpha, eta_scale, functional, .. } => {
                    if spec.noise_kind != NoiseKind::Additive {
                        return Err(bad(&key, "Harnack sweeps are for additive noise".into()));
                    }
                    if alpha.is_empty() || alpha.iter().any(|a| !(*a > 1.0)) {
                        return Err(bad(&format!("{key}.alpha"), "powers must exceed 1".into()));
                    }
                    if eta_scale.is_empty() {
                        return Err(bad(&format!("{key}.eta_scale"), "must not be empty".into()));
                    }
                    if functional.as_ref().unwrap_or(&self.functional).positive_bounds().is_none() {
                        return Err(bad(&key, "Harnack check needs a positive functional".into()));
                    }
                }
                SweepConfig::StrongFeller { epsilons, functional, .. } => {
                    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
                        return Err(bad(&format!("{key}.epsilons"), "need positive values".into()));
                    }
                    functional
                        .check(spec.dim, grid.m)
                        .map_err(|e| bad(&format!("{key}.functional"), e.to_string()))?;
                }
            }
        }
        if let Some(c) = &self.convergence {
            if c.halvings == 0 {
                return Err(bad("convergence.halvings", "must be positive".into()));
            }
            if c.self_levels == 1 {
                return Err(bad("convergence.self_levels", "use 0 or at least 2".into()));
            }
        }
        if let Some(d) = &self.diagnostics {
            if let Some(z) = &d.z {
                if spec.noise_kind != NoiseKind::Multiplicative {
                    return Err(bad("diagnostics.z", "Z exists only for multiplicative noise".into()));
                }
                if z.p.is_empty() || !(z.eta_scale > 0.0) {
                    return Err(bad("diagnostics.z", "need moment orders and a positive eta_scale".into()));
                }
            }
            if let Some(i) = &d.identity {
                if i.m.len() < 2 {
                    return Err(bad("diagnostics.identity.m", "need at least two levels".into()));
                }
            }
        }
        Ok(Prepared {
            scenario: self.clone(),
            spec,
            grid,
        })
    }
}

/// Bundled scenarios, in catalog order.
pub const GOLDEN: &[(&str, &str)] = &[
    ("add-linear-scalar", include_str!("../scenarios/add-linear-scalar.toml")),
    ("add-nonlinear-d4", include_str!("../scenarios/add-nonlinear-d4.toml")),
    ("mult-diagonal-d1", include_str!("../scenarios/mult-diagonal-d1.toml")),
    ("mult-diagonal-d4", include_str!("../scenarios/mult-diagonal-d4.toml")),
    ("harnack-sweep", include_str!("../scenarios/harnack-sweep.toml")),
    ("entropy-sweep", include_str!("../scenarios/entropy-sweep.toml")),
    ("convergence-grid", include_str!("../scenarios/convergence-grid.toml")),
];

pub fn list_golden() -> Vec<&'static str> {
    GOLDEN.iter().map(|(id, _)| *id).collect()
}

pub fn golden_text(id: &str) -> Option<&'static str> {
    GOLDEN.iter().find(|(g, _)| *g == id).map(|(_, t)| *t)
}

pub fn golden(id: &str) -> Result<Scenario, CliError> {
    let text = golden_text(id)
        .ok_or_else(|| CliError::Validation(format!("no golden scenario named `{id}`")))?;
    Scenario::from_toml(text)
}
