//! Run configuration: a TOML file with `model`, `grid`, `data`, `solver`,
//! `mckv` and `output` tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mfc_core::solver::{Metric, SolverOptions};
use mfc_core::transport::normalize_mass;
use mfc_core::variational::Tolerances;
use mfc_core::{CongestionModel, SpatialFn, TorusGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub data: DataBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub mckv: MckvBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub alpha: f64,
    pub beta: f64,
    pub q: f64,
    pub kappa: f64,
    /// Spatial cost `c(x)` as a function spec, see [`SpatialFn::parse`].
    #[serde(default = "zero_spec")]
    pub c: String,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default = "one_dim")]
    pub d: usize,
    pub nx: usize,
    pub nt: usize,
    #[serde(rename = "T", default = "unit_horizon")]
    pub t_final: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataBlock {
    /// Initial density spec; sampled on the nodes and rescaled to unit mass.
    #[serde(default = "unit_spec")]
    pub m0: String,
    #[serde(default = "zero_spec")]
    pub u_t: String,
}

impl Default for DataBlock {
    fn default() -> Self {
        DataBlock { m0: unit_spec(), u_t: zero_spec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Elliptic,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub max_iters: usize,
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub metric: MetricName,
    pub check_every: usize,
    pub seed: u64,
    pub jitter: f64,
    pub theta: f64,
    pub step_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    pub norm_iters: usize,
    pub tol_hjb: f64,
    pub tol_fp: f64,
    pub tol_energy: f64,
    pub tol_flux: f64,
    pub tol_vacuum_gradient: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        let o = SolverOptions::default();
        let t = o.tolerances;
        SolverBlock {
            max_iters: o.max_iters,
            tol_gap: o.tol_gap,
            tol_feas: o.tol_feas,
            metric: MetricName::Elliptic,
            check_every: o.check_every,
            seed: o.seed,
            jitter: o.jitter,
            theta: o.theta,
            step_ratio: o.step_ratio,
            tau: o.tau,
            sigma: o.sigma,
            norm_iters: o.norm_iters,
            tol_hjb: t.hjb,
            tol_fp: t.feas,
            tol_energy: t.energy,
            tol_flux: t.flux,
            tol_vacuum_gradient: t.vacuum_gradient,
        }
    }
}

impl SolverBlock {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            hjb: self.tol_hjb,
            feas: self.tol_fp,
            energy: self.tol_energy,
            flux: self.tol_flux,
            vacuum_gradient: self.tol_vacuum_gradient,
        }
    }

    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            max_iters: self.max_iters,
            tol_gap: self.tol_gap,
            tol_feas: self.tol_feas,
            tau: self.tau,
            sigma: self.sigma,
            step_ratio: self.step_ratio,
            theta: self.theta,
            check_every: self.check_every,
            seed: self.seed,
            jitter: self.jitter,
            norm_iters: self.norm_iters,
            metric: match self.metric {
                MetricName::Elliptic => Metric::Elliptic,
                MetricName::Euclidean => Metric::Euclidean,
            },
            tolerances: self.tolerances(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MckvBlock {
    pub enabled: bool,
    pub particles: usize,
    pub seed: u64,
}

impl Default for MckvBlock {
    fn default() -> Self {
        MckvBlock { enabled: false, particles: 100_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Parent directory for run directories.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<String>,
}

fn zero_spec() -> String {
    "zero".into()
}

fn unit_spec() -> String {
    "const(1)".into()
}

fn one_dim() -> usize {
    1
}

fn unit_horizon() -> f64 {
    1.0
}

/// Makes `file:` specs absolute against `base` so the echoed config works
/// from any directory.
fn anchor_spec(spec: &str, base: &Path) -> String {
    match spec.trim().strip_prefix("file:") {
        Some(p) if !Path::new(p.trim()).is_absolute() => format!("file:{}", base.join(p.trim()).display()),
        _ => spec.to_string(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = RunConfig::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let base = std::fs::canonicalize(&base).unwrap_or(base);
        cfg.model.c = anchor_spec(&cfg.model.c, &base);
        cfg.data.m0 = anchor_spec(&cfg.data.m0, &base);
        cfg.data.u_t = anchor_spec(&cfg.data.u_t, &base);
        if let Some(root) = &cfg.output.root {
            if !Path::new(root).is_absolute() {
                cfg.output.root = Some(base.join(root).display().to_string());
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// The configuration resolved into solver inputs.
pub struct Problem {
    pub model: CongestionModel,
    pub grid: TorusGrid,
    pub m0: Vec<f64>,
    pub u_t: Vec<f64>,
    /// `h^d Σ m0` before rescaling.
    pub m0_sampled_mass: f64,
    pub m0_sampled_min: f64,
}

impl Problem {
    pub fn from_config(cfg: &RunConfig) -> Result<Problem> {
        let m = &cfg.model;
        let c = SpatialFn::parse(&m.c).with_context(|| format!("model.c = {:?}", m.c))?;
        let model = CongestionModel::new(m.alpha, m.beta, m.q, m.kappa, c, m.nu).context("model")?;
        let g = &cfg.grid;
        let grid = TorusGrid::new(g.d, g.nx, g.nt, g.t_final).context("grid")?;
        let m0_fn = SpatialFn::parse(&cfg.data.m0).with_context(|| format!("data.m0 = {:?}", cfg.data.m0))?;
        let u_fn = SpatialFn::parse(&cfg.data.u_t).with_context(|| format!("data.u_t = {:?}", cfg.data.u_t))?;
        let mut m0 = m0_fn.sample(&grid);
        let u_t = u_fn.sample(&grid);
        let m0_sampled_mass = grid.cell_volume() * m0.iter().sum::<f64>();
        let m0_sampled_min = m0.iter().cloned().fold(f64::INFINITY, f64::min);
        // rescaling is left to valid data; the audit reports the rest
        if m0_sampled_min > 0.0 && m0_sampled_mass.is_finite() {
            normalize_mass(&grid, &mut m0).context("data.m0")?;
        }
        Ok(Problem { model, grid, m0, u_t, m0_sampled_mass, m0_sampled_min })
    }

    /// Data conditions the solver needs: `m0 > 0` with positive finite mass
    /// and a finite terminal cost.
    pub fn data_issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.m0_sampled_min > 0.0) || !self.m0_sampled_min.is_finite() {
            out.push(format!("m0 must be positive on every node, minimum is {:?}", self.m0_sampled_min));
        }
        if !(self.m0_sampled_mass > 0.0 && self.m0_sampled_mass.is_finite()) {
            out.push(format!("m0 has mass {:?}", self.m0_sampled_mass));
        }
        if self.u_t.iter().any(|v| !v.is_finite()) {
            out.push("u_t takes non-finite values".into());
        }
        out
    }
}

pub fn check_sane(cfg: &RunConfig) -> Result<()> {
    if cfg.mckv.enabled && cfg.mckv.particles == 0 {
        bail!("mckv.particles must be positive when mckv.enabled = true");
    }
    Ok(())
}
