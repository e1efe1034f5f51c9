//! Primal-dual hybrid gradient iteration for the discrete saddle problem
//! `min_{m,z} max_φ  Σ L̃(m,z) + ⟨Λφ,(m,z)⟩ + ⟨φ(0), m0⟩`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MfcError, Result};
use crate::fourier::DualMetric;
use crate::grid::{apply_lambda, apply_lambda_adjoint, dot, SpaceTimeField, Staggering, TorusGrid, VectorField, Workspace};
use crate::model::{audit_assumptions, AuditSampling, CongestionModel};
use crate::pointwise::{eval_k_site, prox_ltilde_radial, ProxOptions, PsiOptions};
use crate::transport::{fp_residual, relative_fp_residual, restore_density, PrimalState};
use crate::variational::{cell_norm, check_weak_solution, running_ltilde, terminal_admissible, Certificate, DualState, Tolerances, EPS_DEG};

/// Metric of the dual proximal step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Plain PDHG: `φ ← φ + σ r`, terminal slice projected onto `φ(T) ≤ u_T`.
    /// Step sizes scale with `1/‖Λ‖`, so iteration counts grow with the grid.
    Euclidean,
    /// `φ ← φ + σ(Λ*Λ)⁻¹ r` with `φ(T) = u_T` held fixed; the operator has
    /// unit norm in this metric and iteration counts do not grow with the grid.
    Elliptic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Relative duality gap target.
    pub tol_gap: f64,
    /// Relative Fokker–Planck residual target for the running iterate.
    pub tol_feas: f64,
    /// Primal and dual steps; `None` picks `τσ‖Λ‖² < 1` automatically.
    pub tau: Option<f64>,
    pub sigma: Option<f64>,
    /// `τ/σ` when steps are chosen automatically.
    pub step_ratio: f64,
    pub theta: f64,
    pub check_every: usize,
    pub seed: u64,
    /// Relative amplitude of the seeded perturbation of the initial iterate.
    pub jitter: f64,
    pub norm_iters: usize,
    pub metric: Metric,
    pub tolerances: Tolerances,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 20_000,
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            tau: None,
            sigma: None,
            step_ratio: 1.0,
            theta: 1.0,
            check_every: 10,
            seed: 0,
            jitter: 1e-2,
            norm_iters: 30,
            metric: Metric::Elliptic,
            tolerances: Tolerances::default(),
        }
    }
}

/// One convergence check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapRecord {
    pub iteration: usize,
    /// `ℬ` at the running iterate (feasibility not enforced).
    pub primal: f64,
    /// `J(φ, Λφ)`.
    pub dual: f64,
    pub gap: f64,
    /// `ℬ` at the feasibility-restored iterate minus `J`; nonnegative.
    pub certified_gap: f64,
    pub fp_residual: f64,
    /// Total mass of each slice of the restored density, worst deviation
    /// from `h^d Σ m0`.
    pub mass_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<GapRecord>,
    pub certificate: Certificate,
    pub wall_time: f64,
    pub tau: f64,
    pub sigma: f64,
    /// `‖Λ‖` in the metric used (1 for the elliptic metric).
    pub norm_estimate: f64,
    pub metric: Metric,
    pub primal_value: f64,
    pub dual_value: f64,
    /// Certified relative gap of the returned pair.
    pub relative_gap: f64,
}

impl SolverReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "metric = {:?}", self.metric);
        let _ = writeln!(s, "tau = {:e}", self.tau);
        let _ = writeln!(s, "sigma = {:e}", self.sigma);
        let _ = writeln!(s, "norm_estimate = {:e}", self.norm_estimate);
        let _ = writeln!(s, "primal_value = {:e}", self.primal_value);
        let _ = writeln!(s, "dual_value = {:e}", self.dual_value);
        let _ = writeln!(s, "relative_gap = {:e}", self.relative_gap);
        let _ = writeln!(s, "wall_time_s = {:.3}", self.wall_time);
        s
    }

    /// `iteration,primal,dual,gap,certified_gap,fp_residual,mass_error`
    pub fn history_csv(&self) -> String {
        let mut s = String::from("iteration,primal,dual,gap,certified_gap,fp_residual,mass_error\n");
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.iteration, r.primal, r.dual, r.gap, r.certified_gap, r.fp_residual, r.mass_error
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub primal: PrimalState,
    pub dual: DualState,
    pub report: SolverReport,
}

/// Power-iteration estimate of `‖Λ‖` between the cell- and node-weighted
/// inner products, including the boundary slices.
pub fn estimate_operator_norm(grid: &TorusGrid, model: &CongestionModel, iters: usize, seed: u64) -> f64 {
    let (n, d, nt) = (grid.n_space(), grid.d(), grid.nt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n * (nt + 1)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (mut a, mut b) = (vec![0.0; n * nt], vec![0.0; n * nt * d]);
    let mut g = vec![0.0; n * (nt + 1)];
    let mut ws = Workspace::new(grid);
    let mut rayleigh = 0.0;
    for _ in 0..iters.max(1) {
        let vv = dot(&v, &v);
        if vv == 0.0 {
            return 0.0;
        }
        let scale = 1.0 / vv.sqrt();
        v.iter_mut().for_each(|x| *x *= scale);
        apply_lambda(grid, model.nu(), &v, &mut a, &mut b, &mut ws);
        apply_lambda_adjoint(grid, model.nu(), &a, &b, &mut g, &mut ws);
        // the normal operator is self-adjoint for the node pairing
        rayleigh = dot(&v, &g);
        std::mem::swap(&mut v, &mut g);
    }
    rayleigh.max(0.0).sqrt()
}

/// `z = m·H_p(x, m, Dφ)`.
pub fn recover_feedback(model: &CongestionModel, m: &SpaceTimeField, phi: &SpaceTimeField) -> Result<VectorField> {
    crate::variational::recovered_flux(model, m, phi)
}

/// Optimal velocity `H_p(x, m, Dφ)`, zero in vacuum cells.
pub fn feedback_velocity(model: &CongestionModel, m: &SpaceTimeField, phi: &SpaceTimeField) -> Result<VectorField> {
    let z = recover_feedback(model, m, phi)?;
    let d = z.grid().d();
    let mut v = z;
    for (i, mv) in m.values().iter().enumerate() {
        for c in 0..d {
            let e = &mut v.values_mut()[i * d + c];
            *e = if *mv >= EPS_DEG { *e / mv } else { 0.0 };
        }
    }
    Ok(v)
}

struct Evaluator<'a> {
    model: &'a CongestionModel,
    grid: TorusGrid,
    sites: Vec<crate::model::Site>,
    m0: &'a [f64],
    u_t: &'a [f64],
    tol_feas: f64,
    psi_warm: Vec<f64>,
}

impl Evaluator<'_> {
    /// `J(φ, a)` from a precomputed `Λφ`.
    fn dual_value(&mut self, phi: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
        let n = self.grid.n_space();
        let d = self.grid.d();
        let opts = PsiOptions::default();
        let mut acc = 0.0;
        for i in 0..a.len() {
            let (k, psi) = eval_k_site(&self.sites[i % n], a[i], cell_norm(b, i, d), &opts, Some(self.psi_warm[i]))?;
            self.psi_warm[i] = psi.mu;
            acc += k;
        }
        let init = dot(self.m0, &phi[..n]);
        Ok(self.grid.cell_volume() * (self.grid.dt() * acc + init))
    }

    fn primal_value(&self, state: &PrimalState) -> f64 {
        let vol = self.grid.cell_volume();
        let terminal = state.terminal_density(self.model.nu());
        if !terminal_admissible(&terminal, state.m.values(), self.tol_feas) {
            return f64::INFINITY;
        }
        (running_ltilde(self.model, state) * (vol * self.grid.dt()) + vol * dot(&terminal, self.u_t)).to_f64()
    }
}

fn check_inputs(grid: &TorusGrid, m0: &[f64], u_t: &[f64]) -> Result<()> {
    let n = grid.n_space();
    if m0.len() != n || u_t.len() != n {
        return Err(MfcError::GridMismatch(format!("m0/u_T need {n} values, got {}/{}", m0.len(), u_t.len())));
    }
    if m0.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(MfcError::Domain("m0 must be positive".into()));
    }
    let mass = grid.cell_volume() * m0.iter().sum::<f64>();
    if (mass - 1.0).abs() > 1e-10 {
        return Err(MfcError::Domain(format!("m0 has mass {mass}, expected 1")));
    }
    if u_t.iter().any(|v| !v.is_finite()) {
        return Err(MfcError::Domain("u_T must be finite".into()));
    }
    Ok(())
}

pub fn solve(model: &CongestionModel, grid: &TorusGrid, m0: &[f64], u_t: &[f64], opts: &SolverOptions) -> Result<Solution> {
    let audit = audit_assumptions(model, &AuditSampling { d: grid.d(), ..AuditSampling::default() });
    if !audit.passed {
        return Err(MfcError::AuditFailed(audit.to_text()));
    }
    solve_unaudited(model, grid, m0, u_t, opts)
}

/// [`solve`] without the assumption audit, for callers that audited already.
pub fn solve_unaudited(model: &CongestionModel, grid: &TorusGrid, m0: &[f64], u_t: &[f64], opts: &SolverOptions) -> Result<Solution> {
    check_inputs(grid, m0, u_t)?;
    if !(opts.theta >= 0.0 && opts.theta <= 1.0) || opts.check_every == 0 || !(opts.step_ratio > 0.0) {
        return Err(MfcError::InvalidArgument("theta must lie in [0,1], check_every and step_ratio must be positive".into()));
    }
    let start = Instant::now();
    let grid = *grid;
    let (n, d, nt) = (grid.n_space(), grid.d(), grid.nt());
    let cells = n * nt;
    let nu = model.nu();

    let norm_estimate = match opts.metric {
        Metric::Euclidean => estimate_operator_norm(&grid, model, opts.norm_iters, opts.seed),
        Metric::Elliptic => 1.0,
    };
    // power iteration approaches the norm from below
    let l = match opts.metric {
        Metric::Euclidean => 1.02 * norm_estimate,
        Metric::Elliptic => 1.0,
    };
    let tau = opts.tau.unwrap_or(0.99 * opts.step_ratio.sqrt() / l);
    let sigma = opts.sigma.unwrap_or(0.99 / (opts.step_ratio.sqrt() * l));
    if !(tau > 0.0 && sigma > 0.0) {
        return Err(MfcError::InvalidArgument(format!("non-positive steps tau={tau}, sigma={sigma}")));
    }

    // initial iterate: m0 replicated, zero flux, φ = u_T, plus seeded jitter
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut m: Vec<f64> = (0..cells).map(|i| m0[i % n] * (1.0 + opts.jitter * rng.random_range(-1.0..1.0))).collect();
    let mut z: Vec<f64> = (0..cells * d).map(|_| opts.jitter * rng.random_range(-1.0..1.0)).collect();
    let mut phi: Vec<f64> = (0..n * (nt + 1)).map(|i| u_t[i % n]).collect();
    for v in phi[..n * nt].iter_mut() {
        *v += opts.jitter * rng.random_range(-1.0..1.0);
    }

    let sites = model.sites(&grid);
    let prox_opts = ProxOptions::default();
    let mut ws = Workspace::new(&grid);
    let (mut a, mut b) = (vec![0.0; cells], vec![0.0; cells * d]);
    let (mut m_bar, mut z_bar) = (vec![0.0; cells], vec![0.0; cells * d]);
    let mut g = vec![0.0; n * (nt + 1)];
    let mut step = vec![0.0; n * (nt + 1)];
    let mut slack = vec![0.0; n];
    let mut metric = match opts.metric {
        Metric::Elliptic => Some(DualMetric::new(&grid, nu)),
        Metric::Euclidean => None,
    };
    let mut eval = Evaluator { model, grid, sites: sites.clone(), m0, u_t, psi_warm: vec![1.0; cells], tol_feas: opts.tol_feas };
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mass0 = grid.cell_volume() * m0.iter().sum::<f64>();

    for it in 1..=opts.max_iters {
        iterations = it;
        apply_lambda(&grid, nu, &phi, &mut a, &mut b, &mut ws);
        for i in 0..cells {
            let site = &sites[i % n];
            let m_hat = m[i] - tau * a[i];
            let zs = &mut z[i * d..(i + 1) * d];
            let bs = &b[i * d..(i + 1) * d];
            let mut r2 = 0.0;
            for c in 0..d {
                let v = zs[c] - tau * bs[c];
                z_bar[i * d + c] = v;
                r2 += v * v;
            }
            let r = r2.sqrt();
            let (mn, rho) = prox_ltilde_radial(site, m_hat, r, tau, &prox_opts)?;
            let scale = if r > 0.0 { rho / r } else { 0.0 };
            m_bar[i] = mn + opts.theta * (mn - m[i]);
            m[i] = mn;
            for c in 0..d {
                let zn = z_bar[i * d + c] * scale;
                z_bar[i * d + c] = zn + opts.theta * (zn - zs[c]);
                zs[c] = zn;
            }
        }
        apply_lambda_adjoint(&grid, nu, &m_bar, &z_bar, &mut g, &mut ws);
        for s in 0..n {
            g[s] += m0[s];
        }
        match metric.as_mut() {
            Some(mt) => {
                for s in 0..n {
                    slack[s] = u_t[s] - phi[n * nt + s];
                }
                mt.step(&g, sigma, &slack, &mut step);
                for (p, st) in phi.iter_mut().zip(&step) {
                    *p += st;
                }
            }
            None => {
                for (p, gv) in phi[..n * nt].iter_mut().zip(&g[..n * nt]) {
                    *p += sigma * gv;
                }
                for s in 0..n {
                    let j = n * nt + s;
                    phi[j] = (phi[j] + sigma * g[j]).min(u_t[s]);
                }
            }
        }

        if it % opts.check_every == 0 || it == opts.max_iters {
            let rec = check_progress(&mut eval, &m, &z, &phi, &mut a, &mut b, &mut ws, mass0, it)?;
            history.push(rec);
            let scale = rec.primal.abs().max(rec.dual.abs()).max(1e-300);
            if rec.primal.is_finite()
                && rec.dual.is_finite()
                && rec.certified_gap <= opts.tol_gap * scale && rec.gap.abs() <= opts.tol_gap * scale && rec.fp_residual <= opts.tol_feas {
                converged = true;
                break;
            }
        }
    }

    // returned primal: the restored (exactly feasible) density with the flux,
    // unless restoration leaves the domain
    let z_field = VectorField::from_values(grid, z)?;
    let m_field = SpaceTimeField::from_values(grid, Staggering::CellTime, m)?;
    let restored = restore_density(model, &z_field, m0)?;
    let mut primal = if restored.values().iter().all(|v| *v >= 0.0) {
        PrimalState::new(restored, z_field.clone())?
    } else {
        converged = false;
        PrimalState::new(m_field, z_field)?
    };
    snap_vacuum(&mut primal);
    let phi_field = SpaceTimeField::from_values(grid, Staggering::NodeTime, phi)?;
    let dual = DualState::saturated(model, phi_field)?;
    let certificate = check_weak_solution(model, &dual.phi, &primal.m, Some(&primal.z), m0, u_t, &opts.tolerances)?;
    let primal_value = eval.primal_value(&primal);
    apply_lambda(&grid, nu, dual.phi.values(), &mut a, &mut b, &mut ws);
    let dual_value = eval.dual_value(dual.phi.values(), &a, &b)?;
    let relative_gap = (primal_value - dual_value) / primal_value.abs().max(dual_value.abs()).max(1e-300);
    let report = SolverReport {
        iterations,
        converged,
        history,
        certificate,
        wall_time: start.elapsed().as_secs_f64(),
        tau,
        sigma,
        norm_estimate,
        metric: opts.metric,
        primal_value,
        dual_value,
        relative_gap,
    };
    Ok(Solution { primal, dual, report })
}

#[allow(clippy::too_many_arguments)]
fn check_progress(
    eval: &mut Evaluator,
    m: &[f64],
    z: &[f64],
    phi: &[f64],
    a: &mut [f64],
    b: &mut [f64],
    ws: &mut Workspace,
    mass0: f64,
    iteration: usize,
) -> Result<GapRecord> {
    let grid = eval.grid;
    let model = eval.model;
    apply_lambda(&grid, model.nu(), phi, a, b, ws);
    let dual = eval.dual_value(phi, a, b)?;
    let state = PrimalState::new(
        SpaceTimeField::from_values(grid, Staggering::CellTime, m.to_vec())?,
        VectorField::from_values(grid, z.to_vec())?,
    )?;
    let primal = eval.primal_value(&state);
    let fp = relative_fp_residual(&fp_residual(model, &state, eval.m0)?, &state.m);
    let restored = PrimalState::new(restore_density(model, &state.z, eval.m0)?, state.z)?;
    let certified = eval.primal_value(&restored) - dual;
    let mass_error = (0..grid.nt())
        .map(|k| (crate::transport::total_mass(&restored.m, k) - mass0).abs())
        .fold(0.0, f64::max);
    Ok(GapRecord { iteration, primal, dual, gap: primal - dual, certified_gap: certified, fp_residual: fp, mass_error })
}

fn snap_vacuum(state: &mut PrimalState) {
    let d = state.grid().d();
    let (m, z) = (&mut state.m, &mut state.z);
    for (i, mv) in m.values_mut().iter_mut().enumerate() {
        if *mv < EPS_DEG {
            *mv = 0.0;
            z.values_mut()[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
