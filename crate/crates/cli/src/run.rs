//! Executes a prepared scenario and collects results, plot data and checks.

use std::collections::BTreeMap;

use serde::Serialize;

use bismut_core::diagnostics::{
    grid_convergence, loglog_slope, proof_identity_additive, proof_identity_multiplicative,
    strong_self_convergence, z_moments, z_over_u_integral, GridConvergence, MeanEstimate,
    MultiplicativeIdentity, SelfConvergence, ZMoments,
};
use bismut_core::{
    analytic_linear_gradient, check_entropy_bound, check_gradient_bound_additive,
    check_gradient_bound_multiplicative, check_harnack, default_fd_epsilon,
    estimate_gradient_bismut, fd_gradient, ibp_residual, make_grid, pathwise_gradient,
    strong_feller_smoke, validate_assumptions, AssumptionReport, GradientEstimate, GridSpec,
    IbpResidual, ImpliedConstantReport, McConfig, Method, NoiseKind, StrongFellerReport,
};

use crate::error::CliError;
use crate::scenario::{OracleKind, Prepared, Scenario, SweepConfig};

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleResult {
    pub estimate: GradientEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct IbpSection {
    pub delta_t: f64,
    pub epsilon: f64,
    pub result: IbpResidual,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SweepResult {
    Implied {
        report: ImpliedConstantReport,
        #[serde(skip_serializing_if = "Option::is_none")]
        doubled: Option<ImpliedConstantReport>,
    },
    StrongFeller {
        report: StrongFellerReport,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceSection {
    pub levels: Vec<GridConvergence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub self_convergence: Option<SelfConvergence>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ZSection {
    pub delta_t: f64,
    pub eta_scale: f64,
    pub moments: ZMoments,
    pub scaled_moments: ZMoments,
    pub integral: MeanEstimate,
    pub integral_refined: MeanEstimate,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum IdentityLevel {
    Additive { delta_t: f64, residual: MeanEstimate },
    Multiplicative { delta_t: f64, residual: MultiplicativeIdentity },
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentitySection {
    pub levels: Vec<IdentityLevel>,
    pub slope: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct DiagnosticsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<ZSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity: Option<IdentitySection>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub scenario: Scenario,
    pub seed: u64,
    pub delta_t: f64,
    pub assumptions: AssumptionReport,
    pub estimate: GradientEstimate,
    pub oracles: Vec<OracleResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ibp: Option<IbpSection>,
    pub sweeps: Vec<SweepResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSection>,
    pub checks: Vec<CheckOutcome>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// One line of `results.csv`.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub scenario_id: String,
    pub section: String,
    pub method: String,
    pub quantity: String,
    pub params: String,
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub delta_t: f64,
}

#[derive(Clone, Debug)]
pub struct PlotTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub rows: Vec<Row>,
    pub plots: Vec<PlotTable>,
}

struct Ctx<'a> {
    p: &'a Prepared,
    base_mc: McConfig,
    rows: Vec<Row>,
    plots: Vec<PlotTable>,
    checks: Vec<CheckOutcome>,
}

impl Ctx<'_> {
    fn mc(&self, paths: Option<usize>) -> McConfig {
        self.base_mc.with_paths(paths.unwrap_or(self.base_mc.n_paths))
    }

    fn grid(&self, m: Option<usize>) -> Result<GridSpec, CliError> {
        match m {
            Some(m) => Ok(make_grid(self.p.spec.delay, self.p.grid.horizon, m)?),
            None => Ok(self.p.grid),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &mut self,
        section: &str,
        method: &str,
        quantity: &str,
        params: String,
        value: f64,
        std_error: f64,
        n_paths: usize,
        delta_t: f64,
    ) {
        self.rows.push(Row {
            scenario_id: self.p.scenario.id.clone(),
            section: section.into(),
            method: method.into(),
            quantity: quantity.into(),
            params,
            value,
            std_error,
            n_paths,
            delta_t,
        });
    }

    fn estimate_row(&mut self, section: &str, e: &GradientEstimate, params: String, dt: f64) {
        self.row(section, e.method.as_str(), "gradient", params, e.value, e.std_error, e.n_paths, dt);
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, detail: String) {
        self.checks.push(CheckOutcome {
            name: name.into(),
            passed,
            detail,
        });
    }

    fn k(&self) -> f64 {
        self.p.scenario.check.se_multiple
    }
}

fn fmt_params(pairs: &BTreeMap<String, f64>) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn cell(x: f64) -> String {
    format!("{x}")
}

pub fn run_scenario(scenario: &Scenario, opts: RunOptions) -> Result<Outcome, CliError> {
    let prepared = scenario.prepare()?;
    run_prepared(&prepared, opts)
}

pub fn run_prepared(p: &Prepared, opts: RunOptions) -> Result<Outcome, CliError> {
    let sc = &p.scenario;
    let mut base_mc = sc.mc(opts.threads);
    if let Some(seed) = opts.seed {
        base_mc.seed = seed;
    }
    let mut ctx = Ctx {
        p,
        base_mc,
        rows: Vec::new(),
        plots: Vec::new(),
        checks: Vec::new(),
    };
    let spec = &p.spec;
    let grid = p.grid;
    let dt = grid.step;
    let assumptions = validate_assumptions(spec)?;
    let (xi, eta) = sc.segments(&grid)?;
    let u = sc.control.build(&grid)?;
    let f = &sc.functional;

    let estimate = estimate_gradient_bismut(spec, &grid, &xi, &eta, f, &u, &ctx.base_mc)?;
    ctx.estimate_row("estimate", &estimate, String::new(), dt);
    let d = &estimate.diagnostics;
    ctx.row("estimate", estimate.method.as_str(), "weight_mean", String::new(), d.weight_mean, d.weight_std_error, estimate.n_paths, dt);
    ctx.row("estimate", estimate.method.as_str(), "weight_second_moment", String::new(), d.weight_second_moment, 0.0, estimate.n_paths, dt);
    ctx.row("estimate", estimate.method.as_str(), "max_integrand_norm", String::new(), d.max_integrand_norm, 0.0, estimate.n_paths, dt);
    if let Some(z) = d.max_z_over_u {
        ctx.row("estimate", estimate.method.as_str(), "max_z_over_u", String::new(), z, 0.0, estimate.n_paths, dt);
    }
    let k = ctx.k();
    ctx.check(
        "weight-martingale",
        d.weight_mean.abs() <= k * d.weight_std_error,
        format!("mean {:.3e}, SE {:.3e}", d.weight_mean, d.weight_std_error),
    );

    let mut oracles = Vec::new();
    if let Some(cfg) = &sc.oracle {
        let eps = cfg.epsilon.unwrap_or_else(|| default_fd_epsilon(&xi, &eta));
        for kind in &cfg.kind {
            let (est, epsilon) = match kind {
                OracleKind::Analytic => (
                    GradientEstimate::exact(analytic_linear_gradient(spec, &grid, &eta, f)?, Method::Analytic),
                    None,
                ),
                OracleKind::Pathwise => (pathwise_gradient(spec, &grid, &xi, &eta, f, &ctx.base_mc)?, None),
                OracleKind::Fd => (fd_gradient(spec, &grid, &xi, &eta, f, eps, &ctx.base_mc)?, Some(eps)),
            };
            let params = epsilon.map(|e| format!("epsilon={e}")).unwrap_or_default();
            ctx.estimate_row("oracle", &est, params, dt);
            oracles.push(OracleResult { estimate: est, epsilon });
        }
        // Allowance of a pair: 2ε² per finite difference, Δ when the
        // deterministic reference is compared with a discrete scheme.
        let allowance = |o: &OracleResult| {
            o.epsilon.map_or(0.0, |e| 2.0 * e * e)
                + if o.estimate.method == Method::Analytic { dt } else { 0.0 }
        };
        let mut all: Vec<(GradientEstimate, f64)> = vec![(estimate.clone(), 0.0)];
        all.extend(oracles.iter().map(|o| (o.estimate.clone(), allowance(o))));
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let (a, b) = (&all[i], &all[j]);
                if a.0.method == Method::Analytic && b.0.method == Method::Analytic {
                    continue;
                }
                let diff = (a.0.value - b.0.value).abs();
                let se = a.0.std_error.hypot(b.0.std_error);
                let tol = k * se + a.1 + b.1;
                ctx.check(
                    format!("agree:{}:{}", a.0.method.as_str(), b.0.method.as_str()),
                    diff <= tol,
                    format!("|{:.6} - {:.6}| = {diff:.3e}, tolerance {tol:.3e}", a.0.value, b.0.value),
                );
            }
        }
    }

    let ibp = match &sc.ibp {
        Some(cfg) => {
            let g = ctx.grid(cfg.m)?;
            let (xi, eta) = sc.segments(&g)?;
            let u = sc.control.build(&g)?;
            let r = ibp_residual(spec, &g, &xi, &eta, f, &u, cfg.epsilon, &ctx.mc(cfg.paths))?;
            let params = format!("epsilon={}", cfg.epsilon);
            ctx.row("ibp", "ibp", "lhs", params.clone(), r.lhs, r.lhs_std_error, r.n_paths, g.step);
            ctx.row("ibp", "ibp", "rhs", params.clone(), r.rhs, r.rhs_std_error, r.n_paths, g.step);
            ctx.row("ibp", "ibp", "residual", params, r.residual, r.std_error, r.n_paths, g.step);
            let se = r.lhs_std_error.hypot(r.rhs_std_error);
            let mut tol = k * se + cfg.epsilon * cfg.epsilon;
            if spec.noise_kind == NoiseKind::Multiplicative {
                tol += sc.check.sqrt_dt_constant * eta.sup_norm() * g.step.sqrt();
            }
            ctx.check(
                "ibp-residual",
                r.residual <= tol,
                format!("residual {:.3e}, tolerance {tol:.3e}", r.residual),
            );
            Some(IbpSection {
                delta_t: g.step,
                epsilon: cfg.epsilon,
                result: r,
            })
        }
        None => None,
    };

    let mut sweeps = Vec::new();
    for (j, s) in sc.sweep.iter().enumerate() {
        sweeps.push(run_sweep(&mut ctx, j, s)?);
    }

    let convergence = match &sc.convergence {
        Some(cfg) => {
            let mc = ctx.mc(cfg.paths);
            let mut levels = Vec::new();
            let mut table = Vec::new();
            for l in 0..cfg.halvings {
                let g = grid.refine(1 << l)?;
                let gc = grid_convergence(&g, &mc, |g, mc| {
                    let (xi, eta) = sc.segments(g)?;
                    let u = sc.control.build(g)?;
                    estimate_gradient_bismut(spec, g, &xi, &eta, f, &u, mc)
                })?;
                let tol = k * gc.combined_se + sc.check.sqrt_dt_constant * g.step.sqrt();
                ctx.check(
                    format!("grid-convergence:{}", g.step),
                    gc.difference <= tol,
                    format!("|coarse - fine| = {:.3e}, tolerance {tol:.3e}", gc.difference),
                );
                for (e, step) in [(&gc.coarse, g.step), (&gc.fine, g.step / 2.0)] {
                    ctx.estimate_row("convergence", e, format!("level={l}"), step);
                    table.push(vec![l.to_string(), cell(step), cell(e.value), cell(e.std_error)]);
                }
                levels.push(gc);
            }
            ctx.plots.push(PlotTable {
                name: "convergence".into(),
                header: ["level", "delta_t", "value", "std_error"].map(String::from).to_vec(),
                rows: table,
            });
            let self_convergence = if cfg.self_levels >= 2 {
                let s = strong_self_convergence(spec, &grid, &xi, cfg.self_levels, &mc)?;
                let mut table = Vec::new();
                for (l, r) in s.rms_differences.iter().enumerate() {
                    ctx.row("convergence", "strong", "rms_difference", format!("level={l}"), *r, 0.0, mc.n_paths, s.steps[l]);
                    table.push(vec![cell(s.steps[l]), cell(*r)]);
                }
                ctx.plots.push(PlotTable {
                    name: "self_convergence".into(),
                    header: ["delta_t", "rms_difference"].map(String::from).to_vec(),
                    rows: table,
                });
                ctx.check(
                    "self-convergence",
                    s.ratios.iter().all(|r| *r < 1.0),
                    format!("ratios {:?}", s.ratios),
                );
                Some(s)
            } else {
                None
            };
            Some(ConvergenceSection {
                levels,
                self_convergence,
            })
        }
        None => None,
    };

    let diagnostics = match &sc.diagnostics {
        Some(cfg) => {
            let mut out = DiagnosticsSection::default();
            if let Some(z) = &cfg.z {
                out.z = Some(run_z(&mut ctx, z)?);
            }
            if let Some(id) = &cfg.identity {
                out.identity = Some(run_identity(&mut ctx, id)?);
            }
            Some(out)
        }
        None => None,
    };

    let Ctx {
        rows,
        plots,
        checks,
        base_mc,
        ..
    } = ctx;
    Ok(Outcome {
        report: Report {
            scenario: sc.clone(),
            seed: base_mc.seed,
            delta_t: dt,
            assumptions,
            estimate,
            oracles,
            ibp,
            sweeps,
            convergence,
            diagnostics,
            checks,
        },
        rows,
        plots,
    })
}

fn sweep_table(ctx: &mut Ctx<'_>, name: String, r: &ImpliedConstantReport) {
    let rows = r
        .points
        .iter()
        .map(|p| {
            vec![
                fmt_params(&p.params),
                cell(p.constant),
                cell(p.std_error),
                p.violation.to_string(),
            ]
        })
        .collect();
    ctx.plots.push(PlotTable {
        name,
        header: ["params", "constant", "std_error", "violation"].map(String::from).to_vec(),
        rows,
    });
}

fn implied_rows(ctx: &mut Ctx<'_>, r: &ImpliedConstantReport, n: usize, dt: f64) {
    for p in &r.points {
        ctx.row("sweep", &r.check, "constant", fmt_params(&p.params), p.constant, p.std_error, n, dt);
    }
    ctx.row("sweep", &r.check, "sup", String::new(), r.sup, 0.0, n, dt);
    ctx.row("sweep", &r.check, "median", String::new(), r.median, 0.0, n, dt);
    for (key, v) in &r.extra {
        ctx.row("sweep", &r.check, key, String::new(), *v, 0.0, n, dt);
    }
}

fn bounded(ctx: &Ctx<'_>, r: &ImpliedConstantReport) -> bool {
    r.sup <= ctx.p.scenario.check.bounded_ratio * r.median
}

fn run_sweep(ctx: &mut Ctx<'_>, j: usize, s: &SweepConfig) -> Result<SweepResult, CliError> {
    let sc = &ctx.p.scenario;
    let spec = &ctx.p.spec;
    let name = format!("{}:{j}", s.name());
    let plot_name = format!("sweep_{}_{j}", s.name().replace('-', "_"));
    let pick = |o: &Option<bismut_core::TestFunctional>| o.clone().unwrap_or_else(|| sc.functional.clone());
    let result = match s {
        SweepConfig::GradientAdditive { spans, c_max, m, paths, functional }
        | SweepConfig::GradientMultiplicative { spans, c_max, m, paths, functional, .. } => {
            let m = m.unwrap_or(ctx.p.grid.m);
            let step = spec.delay / m as f64;
            let xi = sc.initial.sample(spec.dim, m, step)?;
            let eta = sc.direction.sample(spec.dim, m, step)?;
            let f = pick(functional);
            let mc = ctx.mc(*paths);
            let r = match s {
                SweepConfig::GradientMultiplicative { p, .. } => {
                    check_gradient_bound_multiplicative(spec, m, &xi, &eta, &f, spans, p, &mc, *c_max)?
                }
                _ => check_gradient_bound_additive(spec, m, &xi, &eta, &f, spans, &mc, *c_max)?,
            };
            implied_rows(ctx, &r, mc.n_paths, step);
            sweep_table(ctx, plot_name, &r);
            let ok = r.passed() && bounded(ctx, &r);
            ctx.check(
                name,
                ok,
                format!("sup {:.4e}, median {:.4e}, violations {}", r.sup, r.median, r.violations),
            );
            SweepResult::Implied { report: r, doubled: None }
        }
        SweepConfig::Entropy { deltas, c, doubling, paths, functional } => {
            let grid = ctx.p.grid;
            let (xi, eta) = sc.segments(&grid)?;
            let u = sc.control.build(&grid)?;
            let f = pick(functional);
            let mc = ctx.mc(*paths);
            let r = check_entropy_bound(spec, &grid, &xi, &eta, &f, &u, deltas, &mc, *c)?;
            implied_rows(ctx, &r, mc.n_paths, grid.step);
            sweep_table(ctx, plot_name, &r);
            let c1 = r.extra["minimal_constant"];
            let mut ok = r.all_finite() && c1.is_finite() && r.extra["min_margin_in_se"] >= -ctx.k();
            let mut detail = format!("minimal constant {c1:.4e}");
            let doubled = if *doubling {
                let mc2 = mc.with_paths(2 * mc.n_paths);
                let r2 = check_entropy_bound(spec, &grid, &xi, &eta, &f, &u, deltas, &mc2, *c)?;
                let c2 = r2.extra["minimal_constant"];
                ctx.row("sweep", "entropy", "minimal_constant_doubled", String::new(), c2, 0.0, mc2.n_paths, grid.step);
                let ratio = sc.check.bounded_ratio;
                ok &= c2.is_finite() && c1 <= ratio * c2 && c2 <= ratio * c1;
                detail.push_str(&format!(", at 2N {c2:.4e}"));
                Some(r2)
            } else {
                None
            };
            ctx.check(name, ok, detail);
            SweepResult::Implied { report: r, doubled }
        }
        SweepConfig::Harnack { alpha, eta_scale, c_max, paths, functional } => {
            let grid = ctx.p.grid;
            let (xi, eta) = sc.segments(&grid)?;
            let f = pick(functional);
            let mc = ctx.mc(*paths);
            let r = check_harnack(spec, &grid, &xi, &eta, &f, alpha, eta_scale, &mc, *c_max)?;
            implied_rows(ctx, &r, mc.n_paths, grid.step);
            sweep_table(ctx, plot_name, &r);
            let ok = r.passed() && bounded(ctx, &r);
            ctx.check(
                name,
                ok,
                format!("sup {:.4e}, median {:.4e}, violations {}", r.sup, r.median, r.violations),
            );
            SweepResult::Implied { report: r, doubled: None }
        }
        SweepConfig::StrongFeller { epsilons, paths, functional } => {
            let grid = ctx.p.grid;
            let (xi, eta) = sc.segments(&grid)?;
            let mc = ctx.mc(*paths);
            let r = strong_feller_smoke(spec, &grid, &xi, &eta, functional, epsilons, &mc)?;
            let mut table = Vec::new();
            for pt in &r.points {
                ctx.row("sweep", "strong-feller", "difference", format!("epsilon={}", pt.epsilon), pt.difference, pt.std_error, mc.n_paths, grid.step);
                table.push(vec![cell(pt.epsilon), cell(pt.difference), cell(pt.std_error)]);
            }
            ctx.plots.push(PlotTable {
                name: plot_name,
                header: ["epsilon", "difference", "std_error"].map(String::from).to_vec(),
                rows: table,
            });
            ctx.check(name, r.vanishing, format!("{} points", r.points.len()));
            SweepResult::StrongFeller { report: r }
        }
    };
    Ok(result)
}

fn run_z(ctx: &mut Ctx<'_>, cfg: &crate::scenario::ZConfig) -> Result<ZSection, CliError> {
    let sc = &ctx.p.scenario;
    let spec = &ctx.p.spec;
    let grid = ctx.grid(cfg.m)?;
    let (xi, eta) = sc.segments(&grid)?;
    let u = sc.control.build(&grid)?;
    let mc = ctx.mc(Some(cfg.paths));
    let moments = z_moments(spec, &grid, &xi, &eta, &u, &cfg.p, &mc)?;
    let scaled_moments = z_moments(spec, &grid, &xi, &eta.scaled(cfg.eta_scale), &u, &cfg.p, &mc)?;
    ctx.check(
        "z-terminal",
        moments.max_after_kink == 0.0 && scaled_moments.max_after_kink == 0.0,
        format!("max |Z| from T - tau on: {}", moments.max_after_kink),
    );
    let mut worst: f64 = 0.0;
    for (j, &p) in cfg.p.iter().enumerate() {
        let expect = cfg.eta_scale.powf(p) * moments.max_moment[j];
        let got = scaled_moments.max_moment[j];
        worst = worst.max((got - expect).abs() / expect.abs().max(f64::MIN_POSITIVE));
        ctx.row("diagnostics", "z", "max_moment", format!("p={p}"), moments.max_moment[j], 0.0, moments.n_paths, grid.step);
        ctx.row("diagnostics", "z", "max_moment_scaled", format!("p={p};eta_scale={}", cfg.eta_scale), got, 0.0, moments.n_paths, grid.step);
    }
    ctx.check("z-homogeneity", worst <= 1e-12, format!("worst relative error {worst:.3e}"));

    let fine = grid.refine(2)?;
    let (xf, ef) = sc.segments(&fine)?;
    let uf = sc.control.build(&fine)?;
    let integral = z_over_u_integral(spec, &grid, &xi, &eta, &u, &mc.with_refinement(2))?;
    let integral_refined = z_over_u_integral(spec, &fine, &xf, &ef, &uf, &mc.with_refinement(1))?;
    for (e, step) in [(&integral, grid.step), (&integral_refined, fine.step)] {
        ctx.row("diagnostics", "z", "z_over_u_integral", String::new(), e.mean, e.std_error, e.n_paths, step);
    }
    let change = (integral_refined.mean - integral.mean).abs() / integral.mean.abs();
    ctx.check(
        "z-integral-stability",
        change <= sc.check.z_integral_change,
        format!("relative change {change:.4}"),
    );
    Ok(ZSection {
        delta_t: grid.step,
        eta_scale: cfg.eta_scale,
        moments,
        scaled_moments,
        integral,
        integral_refined,
    })
}

fn run_identity(ctx: &mut Ctx<'_>, cfg: &crate::scenario::IdentityConfig) -> Result<IdentitySection, CliError> {
    let sc = &ctx.p.scenario;
    let spec = &ctx.p.spec;
    let control = cfg.control.as_ref().unwrap_or(&sc.control);
    let finest = *cfg.m.iter().max().expect("validated non-empty");
    let mut levels = Vec::new();
    let mut steps = Vec::new();
    let mut values = Vec::new();
    let mut table = Vec::new();
    let k = ctx.k();
    for &m in &cfg.m {
        let g = ctx.grid(Some(m))?;
        let (xi, eta) = sc.segments(&g)?;
        let u = control.build(&g)?;
        let mc = ctx.mc(Some(cfg.paths)).with_refinement(finest / m);
        let (level, value, se) = match spec.noise_kind {
            NoiseKind::Additive => {
                let r = proof_identity_additive(spec, &g, &xi, &eta, &u, &mc)?;
                let (v, s) = (r.mean, r.std_error);
                (IdentityLevel::Additive { delta_t: g.step, residual: r }, v, s)
            }
            NoiseKind::Multiplicative => {
                let r = proof_identity_multiplicative(spec, &g, &xi, &eta, &u, &mc)?;
                let (v, s) = (r.terminal.mean, r.terminal.std_error);
                let tol = k * s + sc.check.sqrt_dt_constant * eta.sup_norm() * g.step.sqrt();
                ctx.check(
                    format!("identity-terminal:{}", g.step),
                    v <= tol,
                    format!("mean terminal residual {v:.3e}, tolerance {tol:.3e}"),
                );
                ctx.row("diagnostics", "identity", "sup_residual", String::new(), r.sup.mean, r.sup.std_error, r.sup.n_paths, g.step);
                (IdentityLevel::Multiplicative { delta_t: g.step, residual: r }, v, s)
            }
        };
        ctx.row("diagnostics", "identity", "residual", String::new(), value, se, mc.n_paths, g.step);
        table.push(vec![cell(g.step), cell(value), cell(se)]);
        steps.push(g.step);
        values.push(value);
        levels.push(level);
    }
    ctx.plots.push(PlotTable {
        name: "identity".into(),
        header: ["delta_t", "residual", "std_error"].map(String::from).to_vec(),
        rows: table,
    });
    let exact = values.iter().all(|v| *v < 1e-10);
    let slope = if exact { f64::NAN } else { loglog_slope(&steps, &values) };
    if spec.noise_kind == NoiseKind::Additive {
        let min = sc.check.min_slope;
        ctx.check(
            "identity-slope",
            exact || slope >= min,
            if exact {
                "residual vanishes to roundoff".to_string()
            } else {
                format!("slope {slope:.3}, required {min}")
            },
        );
    }
    Ok(IdentitySection { levels, slope })
}
