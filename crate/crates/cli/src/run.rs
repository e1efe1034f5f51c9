//! Orchestration of the four subcommands and the run-directory layout.
//!
//! A run directory holds `config.toml` (the effective configuration),
//! `m0.field`, `u_t.field`, `m.field`, `z.field`, `phi.field`,
//! `gamma.field`, `report.txt`, `gap_history.csv`, `certificate.txt` and,
//! when particles are enabled, `simulation.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mfc_core::io::{read_field, write_scalar, write_spatial, write_vector};
use mfc_core::mckv::{estimate_cost, simulate, CostDensity};
use mfc_core::model::{audit_assumptions, AuditReport, AuditSampling};
use mfc_core::solver::{feedback_velocity, solve_unaudited, Solution};
use mfc_core::transport::PrimalState;
use mfc_core::variational::{check_weak_solution, eval_b, Certificate};
use mfc_core::{SpaceTimeField, VectorField};

use crate::config::{check_sane, Problem, RunConfig};

pub const CONFIG_FILE: &str = "config.toml";

pub struct Audit {
    pub model: AuditReport,
    pub data: Vec<String>,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.model.passed && self.data.is_empty()
    }

    pub fn to_text(&self, problem: &Problem) -> String {
        let mut s = String::from("[model]\n");
        s.push_str(&self.model.to_text());
        s.push_str("[data]\n");
        let _ = writeln!(s, "m0_sampled_mass = {:?}", problem.m0_sampled_mass);
        let _ = writeln!(s, "m0_sampled_min = {:?}", problem.m0_sampled_min);
        for (i, issue) in self.data.iter().enumerate() {
            let _ = writeln!(s, "issue.{i} = {issue}");
        }
        let _ = writeln!(s, "audit = {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

pub fn run_audit(problem: &Problem) -> Audit {
    let sampling = AuditSampling { d: problem.grid.d(), ..AuditSampling::default() };
    Audit { model: audit_assumptions(&problem.model, &sampling), data: problem.data_issues() }
}

/// Output root: the `--out` flag, then `output.root`, then the environment
/// default, then `./runs`.
pub fn output_root(flag: Option<&Path>, cfg: &RunConfig, env: Option<&str>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output.root.as_ref().map(PathBuf::from))
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Creates a fresh `<root>/<UTC timestamp>-<kind>[-n]` directory; never
/// reuses an existing one.
pub fn fresh_run_dir(root: &Path, kind: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    for n in 0..1000 {
        let name = if n == 0 { format!("{stamp}-{kind}") } else { format!("{stamp}-{kind}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    bail!("could not allocate a run directory under {}", root.display())
}

pub struct SolveOutcome {
    pub dir: PathBuf,
    pub solution: Solution,
    pub simulation: Option<String>,
}

impl SolveOutcome {
    pub fn success(&self) -> bool {
        self.solution.report.converged && self.solution.report.certificate.passed()
    }
}

/// Solves an audited problem and writes a run directory under `root`.
pub fn run_solve(cfg: &RunConfig, problem: &Problem, root: &Path) -> Result<SolveOutcome> {
    check_sane(cfg)?;
    let opts = cfg.solver.options();
    let solution = solve_unaudited(&problem.model, &problem.grid, &problem.m0, &problem.u_t, &opts).context("solver")?;
    let dir = fresh_run_dir(root, "solve")?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    write_spatial(&dir.join("m0.field"), &problem.grid, &problem.m0)?;
    write_spatial(&dir.join("u_t.field"), &problem.grid, &problem.u_t)?;
    write_scalar(&dir.join("m.field"), &solution.primal.m)?;
    write_vector(&dir.join("z.field"), &solution.primal.z)?;
    write_scalar(&dir.join("phi.field"), &solution.dual.phi)?;
    write_scalar(&dir.join("gamma.field"), &solution.dual.gamma)?;
    let rep = &solution.report;
    let mut report = rep.to_text();
    let _ = writeln!(report, "certified = {}", rep.certificate.passed());
    fs::write(dir.join("report.txt"), report)?;
    fs::write(dir.join("gap_history.csv"), rep.history_csv())?;
    fs::write(dir.join("certificate.txt"), rep.certificate.to_text())?;
    let simulation = if cfg.mckv.enabled {
        let fields = RunFields { m: solution.primal.m.clone(), z: solution.primal.z.clone(), phi: solution.dual.phi.clone(), m0: problem.m0.clone(), u_t: problem.u_t.clone() };
        let text = run_simulate(cfg, problem, &fields, cfg.mckv.seed)?;
        fs::write(dir.join("simulation.txt"), &text)?;
        Some(text)
    } else {
        None
    };
    Ok(SolveOutcome { dir, solution, simulation })
}

/// Fields read back from a run directory.
pub struct RunFields {
    pub m: SpaceTimeField,
    pub z: VectorField,
    pub phi: SpaceTimeField,
    pub m0: Vec<f64>,
    pub u_t: Vec<f64>,
}

pub fn read_run(dir: &Path, problem: &Problem) -> Result<RunFields> {
    let grid = problem.grid;
    let load = |name: &str| read_field(&dir.join(name)).with_context(|| format!("reading {}", dir.join(name).display()));
    Ok(RunFields {
        m: load("m.field")?.into_scalar(grid).context("m.field")?,
        z: load("z.field")?.into_vector(grid).context("z.field")?,
        phi: load("phi.field")?.into_scalar(grid).context("phi.field")?,
        m0: load("m0.field")?.into_spatial(&grid).context("m0.field")?,
        u_t: load("u_t.field")?.into_spatial(&grid).context("u_t.field")?,
    })
}

pub fn run_check(cfg: &RunConfig, problem: &Problem, fields: &RunFields) -> Result<Certificate> {
    let tol = cfg.solver.tolerances();
    Ok(check_weak_solution(&problem.model, &fields.phi, &fields.m, Some(&fields.z), &fields.m0, &fields.u_t, &tol)?)
}

/// Particle cross-check of the feedback `H_p(x, m, Dφ)` against `ℬ(m, z)`.
pub fn run_simulate(cfg: &RunConfig, problem: &Problem, fields: &RunFields, seed: u64) -> Result<String> {
    let model = &problem.model;
    let v = feedback_velocity(model, &fields.m, &fields.phi)?;
    let count = cfg.mckv.particles;
    let ens = simulate(model, &v, &fields.m0, count, seed)?;
    let cost = estimate_cost(model, &ens, &v, &fields.u_t, CostDensity::Empirical)?;
    let state = PrimalState::new(fields.m.clone(), fields.z.clone())?;
    let b = eval_b(model, &state, &fields.m0, &fields.u_t, cfg.solver.tol_feas.max(1e-8))?.to_f64();
    let grid = problem.grid;
    let dens = ens.cell_densities();
    let worst_l1 = (0..grid.nt())
        .map(|k| grid.cell_volume() * dens.slice(k).iter().zip(fields.m.slice(k)).map(|(x, y)| (x - y).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(s, "particles = {count}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "cost_mean = {:e}", cost.mean);
    let _ = writeln!(s, "cost_std_error = {:e}", cost.std_error);
    let _ = writeln!(s, "used = {}", cost.used);
    let _ = writeln!(s, "excluded = {}", cost.excluded);
    let _ = writeln!(s, "primal_value = {b:e}");
    let _ = writeln!(s, "z_score = {:e}", (cost.mean - b) / cost.std_error);
    let _ = writeln!(s, "max_slice_density_l1 = {worst_l1:e}");
    Ok(s)
}
