//! `mfc`: batch front end for congestion mean-field-type control runs.
//!
//! Exit codes: 0 on success, 1 when an audit, convergence or certificate
//! check fails, 2 on usage, configuration or I/O errors.

mod config;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{Problem, RunConfig};
use run::{output_root, read_run, run_audit, run_check, run_simulate, run_solve, CONFIG_FILE};

#[derive(Parser)]
#[command(name = "mfc", version, about = "Audit, solve, certify and simulate congestion mean-field-type control problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model assumptions and the data of a config.
    Audit(Common),
    /// Audit, solve and certify; writes a new run directory.
    Solve(Common),
    /// Recompute the certificate from the fields of a run directory.
    Check(WithRun),
    /// Particle cross-check of a run's optimal feedback.
    Simulate(WithRun),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Parent directory for run directories; overrides `output.root` and
    /// the `MFC_OUTPUT_ROOT` environment variable.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol_gap: Option<f64>,
}

#[derive(Args)]
struct WithRun {
    /// Run directory written by `solve`.
    #[arg(long)]
    run: PathBuf,
    /// Configuration to use instead of the run's `config.toml`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parent directory for run directories; overrides `output.root` and
    /// the `MFC_OUTPUT_ROOT` environment variable.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Particle seed for `simulate`; defaults to `mckv.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Particle count for `simulate`; defaults to `mckv.particles`.
    #[arg(long)]
    particles: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.solver.seed = seed;
        }
        if let Some(n) = self.max_iters {
            cfg.solver.max_iters = n;
        }
        if let Some(t) = self.tol_gap {
            cfg.solver.tol_gap = t;
        }
        Ok(cfg)
    }
}

impl WithRun {
    fn load(&self) -> Result<RunConfig> {
        let path = self.config.clone().unwrap_or_else(|| self.run.join(CONFIG_FILE));
        let mut cfg = RunConfig::load(&path)?;
        if let Some(n) = self.particles {
            cfg.mckv.particles = n;
        }
        Ok(cfg)
    }
}

fn audited(cfg: &RunConfig) -> Result<Option<Problem>> {
    let problem = Problem::from_config(cfg)?;
    let audit = run_audit(&problem);
    if audit.passed() {
        Ok(Some(problem))
    } else {
        print!("{}", audit.to_text(&problem));
        Ok(None)
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Audit(args) => {
            let cfg = args.load()?;
            let problem = Problem::from_config(&cfg)?;
            let audit = run_audit(&problem);
            print!("{}", audit.to_text(&problem));
            Ok(audit.passed())
        }
        Command::Solve(args) => {
            let cfg = args.load()?;
            let Some(problem) = audited(&cfg)? else {
                eprintln!("audit failed; not solving");
                return Ok(false);
            };
            let root = output_root(args.out.as_deref(), &cfg, env_root().as_deref());
            let out = run_solve(&cfg, &problem, &root)?;
            print!("{}", out.solution.report.to_text());
            println!("certified = {}", out.solution.report.certificate.passed());
            if let Some(sim) = &out.simulation {
                print!("{sim}");
            }
            println!("run = {}", out.dir.display());
            Ok(out.success())
        }
        Command::Check(args) => {
            let cfg = args.load()?;
            let problem = Problem::from_config(&cfg)?;
            let fields = read_run(&args.run, &problem)?;
            let cert = run_check(&cfg, &problem, &fields)?;
            let text = cert.to_text();
            print!("{text}");
            let stored = std::fs::read_to_string(args.run.join("certificate.txt")).ok();
            let verdict = match stored {
                Some(s) if s == text => "identical",
                Some(_) => "differs",
                None => "absent",
            };
            println!("stored_certificate = {verdict}");
            Ok(cert.passed())
        }
        Command::Simulate(args) => {
            let cfg = args.load()?;
            let problem = Problem::from_config(&cfg)?;
            let fields = read_run(&args.run, &problem)?;
            let seed = args.seed.unwrap_or(cfg.mckv.seed);
            let text = run_simulate(&cfg, &problem, &fields, seed)?;
            let root = output_root(args.out.as_deref(), &cfg, env_root().as_deref());
            let dir = run::fresh_run_dir(&root, "simulate")?;
            write_simulation(&dir, &cfg, &args.run, &text)?;
            print!("{text}");
            println!("run = {}", dir.display());
            Ok(true)
        }
    }
}

fn env_root() -> Option<String> {
    std::env::var("MFC_OUTPUT_ROOT").ok()
}

fn write_simulation(dir: &Path, cfg: &RunConfig, source: &Path, text: &str) -> Result<()> {
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    let source = std::fs::canonicalize(source).unwrap_or_else(|_| source.to_path_buf());
    std::fs::write(dir.join("simulation.txt"), format!("source = {}\n{text}", source.display())).context("writing simulation.txt")
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
