use std::path::Path;
use std::process::{Command, Output};

use bismut_cli::scenario::{IdentityConfig, ZConfig};
use bismut_cli::{golden, list_golden, results_csv, run_scenario, RunOptions, Scenario};

fn bismut(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bismut"));
    cmd.args(args).env_remove("BISMUT_OUT_DIR");
    if let Some(dir) = out_env {
        cmd.env("BISMUT_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn small(id: &str) -> Scenario {
    let mut sc = golden(id).unwrap();
    sc.mc.paths = 2000;
    sc.grid.m = 20;
    sc.ibp = None;
    sc.sweep.clear();
    if let Some(d) = &mut sc.diagnostics {
        d.identity = Some(IdentityConfig {
            m: vec![10, 20],
            paths: 200,
            control: d.identity.as_ref().and_then(|i| i.control.clone()),
        });
        if d.z.is_some() {
            d.z = Some(ZConfig {
                paths: 200,
                p: vec![2.0, 4.0],
                eta_scale: 2.0,
                m: None,
            });
        }
    }
    sc
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn catalog_lists_every_golden_scenario() {
    let ids = list_golden();
    assert_eq!(
        ids,
        [
            "add-linear-scalar",
            "add-nonlinear-d4",
            "mult-diagonal-d1",
            "mult-diagonal-d4",
            "harnack-sweep",
            "entropy-sweep",
            "convergence-grid"
        ]
    );
    for id in ids {
        let sc = golden(id).unwrap();
        assert_eq!(sc.id, id);
        let p = sc.prepare().unwrap_or_else(|e| panic!("{id}: {e}"));
        let report = bismut_core::validate_assumptions(&p.spec).unwrap();
        assert!(report.all_passed(), "{id}");
        assert_eq!(Scenario::from_toml(&sc.to_toml()).unwrap(), sc);
    }
    let out = bismut(&["list"], None);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 7);
}

#[test]
fn show_prints_the_bundled_text() {
    let out = bismut(&["show", "entropy-sweep"], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("check = \"entropy\""));
    assert_eq!(bismut(&["show", "nope"], None).status.code(), Some(2));
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = golden(list_golden()[0]).unwrap().to_toml().replace("[grid]", "[grid]\ndt = 0.1");
    let path = write(dir.path(), "bad.toml", &text);
    let out = bismut(&["run", &path, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown field `dt`"), "{err}");
    assert!(err.contains("line"), "{err}");
    assert!(!dir.path().join("results.csv").exists());
}

#[test]
fn malformed_and_inconsistent_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "broken.toml", "id = \"x\"\n[grid\nm = 3\n");
    let out = bismut(&["run", &path], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let mut sc = golden("mult-diagonal-d1").unwrap();
    sc.control.kind = bismut_core::ControlKind::AdditiveNormalized;
    let path = write(dir.path(), "mixed.toml", &sc.to_toml());
    let out = bismut(&["run", &path], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("control.kind"));

    let mut sc = golden("add-linear-scalar").unwrap();
    sc.oracle = None;
    let err = sc.prepare().unwrap_err().to_string();
    assert!(err.contains("`oracle`"), "{err}");

    let mut sc = golden("add-linear-scalar").unwrap();
    sc.model.eigenvalues = vec![0.5];
    assert!(sc.prepare().unwrap_err().to_string().contains("A1"));
    sc.normalize = true;
    sc.prepare().unwrap();

    assert_eq!(bismut(&["run", "no-such-scenario"], None).status.code(), Some(2));
}

#[test]
fn run_writes_artifacts_and_checks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "small.toml", &small("add-nonlinear-d4").to_toml());
    let out_dir = dir.path().join("out");
    let out = bismut(&["run", &path, "--check", "--out", out_dir.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "scenario_id,section,method,quantity,params,value,std_error,n_paths,delta_t");
    assert!(csv.contains("add-nonlinear-d4,oracle,fd,gradient,epsilon=0.001"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scenario"]["id"], "add-nonlinear-d4");
    assert!(report["checks"].as_array().unwrap().len() >= 4);
    assert!(out_dir.join("plotdata/identity.csv").exists());
}

#[test]
fn failed_check_exits_3_only_with_flag() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = small("add-nonlinear-d4");
    sc.check.se_multiple = 0.0;
    sc.diagnostics = None;
    let path = write(dir.path(), "strict.toml", &sc.to_toml());
    let out_dir = dir.path().join("o");
    let o = out_dir.to_str().unwrap();
    assert_eq!(bismut(&["run", &path, "--check", "--out", o], None).status.code(), Some(3));
    assert_eq!(bismut(&["run", &path, "--out", o], None).status.code(), Some(0));
}

#[test]
fn out_dir_falls_back_to_env() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = golden("entropy-sweep").unwrap();
    sc.mc.paths = 2000;
    sc.grid.m = 20;
    let path = write(dir.path(), "s.toml", &sc.to_toml());
    let env_dir = dir.path().join("from-env");
    let out = bismut(&["run", &path], Some(&env_dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(env_dir.join("results.csv").exists());
    assert!(env_dir.join("plotdata/sweep_entropy_0.csv").exists());
}

#[test]
fn results_are_identical_across_workers_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "s.toml", &small("mult-diagonal-d4").to_toml());
    let mut bytes = Vec::new();
    for threads in ["1", "4", "4", "8"] {
        let o = dir.path().join(format!("t{threads}"));
        let out = bismut(&["run", &path, "--threads", threads, "--seed", "99", "--out", o.to_str().unwrap()], None);
        assert!(out.status.success());
        bytes.push(std::fs::read(o.join("results.csv")).unwrap());
    }
    assert!(bytes.windows(2).all(|w| w[0] == w[1]));

    let other = run_scenario(&small("mult-diagonal-d4"), RunOptions { seed: Some(100), threads: Some(2) }).unwrap();
    assert_ne!(results_csv(&other.rows).unwrap(), bytes[0]);
}

#[test]
fn seed_flag_overrides_config() {
    let sc = small("add-nonlinear-d4");
    let a = run_scenario(&sc, RunOptions { seed: Some(sc.mc.seed), threads: None }).unwrap();
    let b = run_scenario(&sc, RunOptions::default()).unwrap();
    assert_eq!(a.report.estimate, b.report.estimate);
    assert_eq!(a.report.seed, sc.mc.seed);
}
