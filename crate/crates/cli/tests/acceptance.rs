//! End-to-end acceptance run over the bundled scenarios. Each criterion prints
//! one PASS/FAIL line to stderr (uncaptured) and the test fails if any does.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use bismut_cli::{golden, list_golden, run_scenario, Outcome, Report, RunOptions};
use bismut_core::diagnostics::grid_convergence;
use bismut_core::{combined_se, estimate_gradient_bismut, GradientEstimate, Method};

const K: f64 = 3.0;

struct Verdicts(Vec<(usize, String, bool, String)>);

impl Verdicts {
    fn record(&mut self, n: usize, name: &str, passed: bool, detail: String) {
        let line = format!(
            "criterion {n:>2} {} {name}: {detail}",
            if passed { "PASS" } else { "FAIL" }
        );
        let _ = writeln!(std::io::stderr().lock(), "{line}");
        self.0.push((n, name.into(), passed, detail));
    }
}

struct Run {
    outcome: Outcome,
    elapsed: Duration,
}

impl Run {
    fn report(&self) -> &Report {
        &self.outcome.report
    }
}

fn oracle<'a>(r: &'a Report, m: Method) -> &'a GradientEstimate {
    &r.oracles
        .iter()
        .find(|o| o.estimate.method == m)
        .unwrap_or_else(|| panic!("{} has no {} oracle", r.scenario.id, m.as_str()))
        .estimate
}

fn gap(a: &GradientEstimate, b: &GradientEstimate) -> (f64, f64) {
    ((a.value - b.value).abs(), combined_se(a.std_error, b.std_error))
}

fn checks_pass(r: &Report, prefix: &str) -> (bool, usize, String) {
    let hits: Vec<_> = r.checks.iter().filter(|c| c.name.starts_with(prefix)).collect();
    let ok = !hits.is_empty() && hits.iter().all(|c| c.passed);
    let detail = hits
        .iter()
        .map(|c| format!("[{} {}: {}]", c.name, if c.passed { "ok" } else { "FAILED" }, c.detail))
        .collect::<Vec<_>>()
        .join(" ");
    (ok, hits.len(), detail)
}

#[test]
fn acceptance() {
    let mut v = Verdicts(Vec::new());
    let single = RunOptions {
        seed: None,
        threads: Some(1),
    };

    let mut runs = BTreeMap::new();
    for id in list_golden() {
        let start = Instant::now();
        let outcome = run_scenario(&golden(id).unwrap(), single).unwrap_or_else(|e| panic!("{id}: {e}"));
        let elapsed = start.elapsed();
        let _ = writeln!(std::io::stderr().lock(), "ran {id} in {:.1}s", elapsed.as_secs_f64());
        runs.insert(id, Run { outcome, elapsed });
    }

    // 1
    {
        let run = &runs["add-linear-scalar"];
        let r = run.report();
        let (d, se) = gap(&r.estimate, oracle(r, Method::Analytic));
        let ok = d <= K * se
            && r.estimate.n_paths == 100_000
            && (r.delta_t - 1e-3).abs() < 1e-12
            && run.elapsed <= Duration::from_secs(120);
        v.record(
            1,
            "additive estimator vs analytic gradient",
            ok,
            format!(
                "|diff| {d:.3e} <= {:.3e}, N {}, {:.1}s single-threaded",
                K * se,
                r.estimate.n_paths,
                run.elapsed.as_secs_f64()
            ),
        );
    }

    // 2
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for id in list_golden() {
            let r = runs[id].report();
            let est = if r.estimate.n_paths >= 200_000 {
                r.estimate.clone()
            } else {
                let p = golden(id).unwrap().prepare().unwrap();
                let sc = &p.scenario;
                let (xi, eta) = sc.segments(&p.grid).unwrap();
                let u = sc.control.build(&p.grid).unwrap();
                let mut mc = sc.mc(Some(1));
                mc.n_paths = 200_000;
                estimate_gradient_bismut(&p.spec, &p.grid, &xi, &eta, &sc.functional, &u, &mc).unwrap()
            };
            let d = &est.diagnostics;
            let pass = est.n_paths == 200_000 && d.weight_mean.abs() <= K * d.weight_std_error;
            ok &= pass;
            parts.push(format!("{id} {:.2}SE", d.weight_mean.abs() / d.weight_std_error));
        }
        v.record(2, "weight martingale, N = 2e5", ok, parts.join(", "));
    }

    // 3
    {
        let r = runs["add-nonlinear-d4"].report();
        let all = [&r.estimate, oracle(r, Method::Pathwise), oracle(r, Method::FiniteDifference)];
        let mut ok = r.estimate.n_paths == 100_000;
        let mut parts = Vec::new();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                let (d, se) = gap(all[i], all[j]);
                ok &= d <= K * se;
                parts.push(format!(
                    "{}/{} {d:.2e} <= {:.2e}",
                    all[i].method.as_str(),
                    all[j].method.as_str(),
                    K * se
                ));
            }
        }
        v.record(3, "additive nonlinear cross-oracle", ok, parts.join(", "));
    }

    // 4
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for id in ["mult-diagonal-d1", "mult-diagonal-d4"] {
            let run = &runs[id];
            let r = run.report();
            let fd = r
                .oracles
                .iter()
                .find(|o| o.estimate.method == Method::FiniteDifference)
                .unwrap();
            let eps = fd.epsilon.unwrap();
            let (d, se) = gap(&r.estimate, &fd.estimate);
            let tol = K * se + 2.0 * eps * eps;
            ok &= d <= tol
                && (eps - 1e-3).abs() < 1e-15
                && r.estimate.n_paths == 200_000
                && (r.delta_t - 1e-3).abs() < 1e-12
                && run.elapsed <= Duration::from_secs(600);
            parts.push(format!("{id} {d:.2e} <= {tol:.2e} in {:.0}s", run.elapsed.as_secs_f64()));
        }
        v.record(4, "multiplicative estimator vs finite differences", ok, parts.join(", "));
    }

    // 5
    {
        let r = runs["mult-diagonal-d4"].report();
        let z = r.diagnostics.as_ref().and_then(|d| d.z.as_ref()).expect("z diagnostics");
        let mut ok = z.moments.n_paths >= 10_000;
        let mut parts = Vec::new();
        for name in ["z-terminal", "z-homogeneity", "z-integral-stability"] {
            let (pass, _, detail) = checks_pass(r, name);
            ok &= pass;
            parts.push(detail);
        }
        v.record(5, "Z terminal value, homogeneity and integral stability", ok, parts.join(" "));
    }

    // 6
    {
        let add = runs["add-nonlinear-d4"].report();
        let steps: Vec<f64> = add.scenario.diagnostics.as_ref().unwrap().identity.as_ref().unwrap().m
            .iter()
            .map(|m| add.scenario.model.delay / *m as f64)
            .collect();
        let (a_ok, _, a_detail) = checks_pass(add, "identity-slope");
        let (m_ok, n, m_detail) = checks_pass(runs["mult-diagonal-d4"].report(), "identity-terminal");
        v.record(
            6,
            "proof-identity residuals",
            a_ok && m_ok && steps == [1e-2, 5e-3, 2.5e-3] && n >= 2,
            format!("{a_detail} {m_detail}"),
        );
    }

    // 7
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for id in ["add-linear-scalar", "mult-diagonal-d1"] {
            let (pass, _, detail) = checks_pass(runs[id].report(), "ibp-residual");
            ok &= pass;
            parts.push(format!("{id} {detail}"));
        }
        v.record(7, "integration-by-parts residual", ok, parts.join(" "));
    }

    // 8
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for id in list_golden() {
            let p = golden(id).unwrap().prepare().unwrap();
            let sc = &p.scenario;
            let mut mc = sc.mc(Some(1));
            mc.n_paths = 20_000;
            let gc = grid_convergence(&p.grid, &mc, |g, mc| {
                let (xi, eta) = sc.segments(g)?;
                let u = sc.control.build(g)?;
                estimate_gradient_bismut(&p.spec, g, &xi, &eta, &sc.functional, &u, mc)
            })
            .unwrap();
            let tol = K * gc.combined_se + sc.check.sqrt_dt_constant * p.grid.step.sqrt();
            ok &= gc.difference <= tol;
            parts.push(format!("{id} {:.2e} <= {tol:.2e}", gc.difference));
        }
        v.record(8, "grid convergence, step vs half step", ok, parts.join(", "));
    }

    // 9
    {
        let mut ok = true;
        let mut parts = Vec::new();
        for (id, sweep) in [
            ("harnack-sweep", "gradient-additive"),
            ("entropy-sweep", "entropy"),
            ("harnack-sweep", "harnack"),
            ("mult-diagonal-d1", "gradient-multiplicative"),
        ] {
            let (pass, _, detail) = checks_pass(runs[id].report(), &format!("{sweep}:"));
            ok &= pass;
            parts.push(detail);
        }
        v.record(9, "inequality sweeps", ok, parts.join(" "));
    }

    // 10
    {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for (i, threads) in ["1", "4", "4", "8"].iter().enumerate() {
            let out = dir.path().join(format!("run{i}"));
            let status = Command::new(env!("CARGO_BIN_EXE_bismut"))
                .args(["run", "entropy-sweep", "--seed", "2024", "--threads", threads, "--out"])
                .arg(&out)
                .env_remove("BISMUT_OUT_DIR")
                .output()
                .unwrap()
                .status;
            assert!(status.success());
            bytes.push(std::fs::read(out.join("results.csv")).unwrap());
        }
        let ok = bytes.windows(2).all(|w| w[0] == w[1]) && !bytes[0].is_empty();
        v.record(
            10,
            "byte-identical results at 1, 4 and 8 workers",
            ok,
            format!("{} runs, {} bytes each", bytes.len(), bytes[0].len()),
        );
    }

    let failed: Vec<_> = v.0.iter().filter(|c| !c.2).map(|c| c.0).collect();
    assert_eq!(v.0.len(), 10);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
