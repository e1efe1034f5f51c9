use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfc_core::io::{read_field, write_scalar};
use mfc_core::variational::Certificate;
use mfc_core::TorusGrid;

const UNIFORM: &str = r#"
[model]
alpha = 0.5
beta = 2.0
q = 2.0
kappa = 1.0
c = "zero"
nu = 0.05

[grid]
d = 1
nx = 32
nt = 32
T = 1.0

[data]
m0 = "const(1)"
u_t = "zero"

[solver]
tol_gap = 1e-10
tol_feas = 1e-10
"#;

const NONUNIFORM: &str = r#"
[model]
alpha = 0.5
beta = 2.0
q = 2.0
kappa = 1.0
c = "cos2pi(0.5,-0.5)"
nu = 0.05

[grid]
nx = 16
nt = 16

[data]
m0 = "cos2pi(1,0.5)"
u_t = "sin2(0.2)"

[solver]
tol_gap = 1e-9
tol_feas = 1e-9
seed = 3
"#;

fn mfc(args: &[&str], env_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfc"));
    cmd.args(args).env_remove("MFC_OUTPUT_ROOT");
    if let Some(root) = env_root {
        cmd.env("MFC_OUTPUT_ROOT", root);
    }
    cmd.output().expect("running mfc")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn value<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.split_once(" = ").filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim()))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Runs `solve` and returns the run directory.
fn solve(config: &Path, out: &Path) -> PathBuf {
    let res = mfc(&["solve", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(res.status.success(), "solve failed:\n{}\n{}", stdout(&res), String::from_utf8_lossy(&res.stderr));
    PathBuf::from(value(&stdout(&res), "run"))
}

#[test]
fn audit_passes_on_the_uniform_case() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "uniform.toml", UNIFORM);
    let res = mfc(&["audit", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(0), "{}", stdout(&res));
    assert_eq!(value(&stdout(&res), "audit"), "pass");
}

#[test]
fn failed_audit_stops_before_solving() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &UNIFORM.replace("beta = 2.0", "beta = 1.5"));
    let out = tmp.path().join("runs");
    let res = mfc(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(value(&stdout(&res), "audit"), "fail");
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());

    let cfg = write_config(tmp.path(), "vacuum.toml", &UNIFORM.replace("const(1)", "cos2pi(1,1)"));
    let res = mfc(&["audit", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(1));
    assert!(stdout(&res).contains("m0 must be positive"));
}

#[test]
fn malformed_config_reports_line_and_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &UNIFORM.replace("nx = 32", "nx = \"many\""));
    let res = mfc(&["audit", "--config", cfg.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("line 12") && err.contains("nx"), "{err}");
}

#[test]
fn solve_writes_a_certified_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "uniform.toml", UNIFORM);
    let dir = solve(&cfg, &tmp.path().join("runs"));
    for f in ["config.toml", "m0.field", "u_t.field", "m.field", "z.field", "phi.field", "gamma.field", "report.txt", "gap_history.csv", "certificate.txt"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert_eq!(value(&report, "converged"), "true");
    assert_eq!(value(&report, "certified"), "true");
    let gap: f64 = value(&report, "relative_gap").parse().unwrap();
    assert!(gap.abs() <= 1e-8, "gap {gap}");
    let history = fs::read_to_string(dir.join("gap_history.csv")).unwrap();
    assert!(history.starts_with("iteration,primal,dual,gap,certified_gap"));
    assert!(history.lines().count() > 1);
}

#[test]
fn output_root_comes_from_the_environment_by_default() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "uniform.toml", UNIFORM);
    let root = tmp.path().join("env-root");
    let res = mfc(&["solve", "--config", cfg.to_str().unwrap(), "--max-iters", "5"], Some(&root));
    // five iterations cannot converge
    assert_eq!(res.status.code(), Some(1));
    let dir = PathBuf::from(value(&stdout(&res), "run"));
    assert!(dir.starts_with(&root));
    let echo = fs::read_to_string(dir.join("config.toml")).unwrap();
    assert!(echo.contains("max_iters = 5"), "{echo}");
}

#[test]
fn check_reproduces_the_stored_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "nonuniform.toml", NONUNIFORM);
    let dir = solve(&cfg, &tmp.path().join("runs"));
    let res = mfc(&["check", "--run", dir.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(0), "{}", stdout(&res));
    let text = stdout(&res);
    assert_eq!(value(&text, "stored_certificate"), "identical");
    let stored = Certificate::from_text(&fs::read_to_string(dir.join("certificate.txt")).unwrap()).unwrap();
    let fresh = Certificate::from_text(&text.replace("stored_certificate = identical\n", "")).unwrap();
    assert_eq!(stored, fresh);
    assert_eq!(stored.gap.to_bits(), fresh.gap.to_bits());
}

#[test]
fn check_rejects_a_corrupted_potential() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "uniform.toml", UNIFORM);
    let dir = solve(&cfg, &tmp.path().join("runs"));
    let grid = TorusGrid::new(1, 32, 32, 1.0).unwrap();
    let mut phi = read_field(&dir.join("phi.field")).unwrap().into_scalar(grid).unwrap();
    for j in 0..32 {
        for (s, v) in phi.slice_mut(j).iter_mut().enumerate() {
            *v += 0.2 * (2.0 * std::f64::consts::PI * s as f64 / 32.0).sin();
        }
    }
    write_scalar(&dir.join("phi.field"), &phi).unwrap();
    let res = mfc(&["check", "--run", dir.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(1));
    let text = stdout(&res);
    assert_eq!(value(&text, "pass.energy"), "false", "{text}");
    assert_eq!(value(&text, "stored_certificate"), "differs");
}

#[test]
fn echoed_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "nonuniform.toml", NONUNIFORM);
    let first = solve(&cfg, &tmp.path().join("a"));
    let second = solve(&first.join("config.toml"), &tmp.path().join("b"));
    assert_ne!(first, second);
    for f in ["config.toml", "m.field", "z.field", "phi.field", "gamma.field", "certificate.txt", "gap_history.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn simulate_cross_checks_the_feedback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "uniform.toml", UNIFORM);
    let dir = solve(&cfg, &tmp.path().join("runs"));
    let out = tmp.path().join("sims");
    let res = mfc(&["simulate", "--run", dir.to_str().unwrap(), "--particles", "20000", "--seed", "4", "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(0));
    let text = stdout(&res);
    let z: f64 = value(&text, "z_score").parse().unwrap();
    assert!(z.abs() <= 4.0, "{text}");
    assert_eq!(value(&text, "excluded"), "0");
    let sim_dir = PathBuf::from(value(&text, "run"));
    assert!(sim_dir.join("simulation.txt").is_file());
    // the solve directory is left untouched
    assert!(!dir.join("simulation.txt").exists());
}
