//! The potential functional `𝒜`, the density-flux functional `ℬ`, the
//! relaxed dual `J`, the duality gap and the weak-solution certificate.

use std::fmt::Write as _;

use crate::error::{MfcError, Result};
use crate::extended::ExtReal;
use crate::grid::{lambda_op, SpaceTimeField, Staggering, VectorField};
use crate::model::{CongestionModel, Site};
use crate::pointwise::{eval_k_site, PsiOptions};
use crate::transport::{fp_residual, holder_diagnostic, relative_fp_residual, PrimalState};

/// Potential on time nodes and PDE slack on time cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub phi: SpaceTimeField,
    pub gamma: SpaceTimeField,
}

impl DualState {
    pub fn new(phi: SpaceTimeField, gamma: SpaceTimeField) -> Result<Self> {
        if phi.staggering() != Staggering::NodeTime || gamma.staggering() != Staggering::CellTime {
            return Err(MfcError::GridMismatch("dual state needs φ on nodes and γ on cells".into()));
        }
        if phi.grid() != gamma.grid() {
            return Err(MfcError::GridMismatch("φ and γ grids differ".into()));
        }
        Ok(DualState { phi, gamma })
    }

    /// `γ = ∂ₜφ + νΔφ`, the saturated slack.
    pub fn saturated(model: &CongestionModel, phi: SpaceTimeField) -> Result<Self> {
        let (a, _) = lambda_op(model.nu(), &phi)?;
        Self::new(phi, a)
    }
}

pub(crate) fn cell_norm(b: &[f64], i: usize, d: usize) -> f64 {
    if d == 1 {
        b[i].abs()
    } else {
        b[i * d..(i + 1) * d].iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_slice(phi: &SpaceTimeField, v: &[f64], what: &str) -> Result<()> {
    if v.len() != phi.grid().n_space() {
        return Err(MfcError::GridMismatch(format!("{what} has {} values, grid slice has {}", v.len(), phi.grid().n_space())));
    }
    Ok(())
}

/// `h^d dt Σ K(x, γ, p) + h^d Σ m0 φ(0)`.
fn k_functional(model: &CongestionModel, gamma: &[f64], b: &VectorField, phi: &SpaceTimeField, m0: &[f64]) -> Result<f64> {
    let grid = *phi.grid();
    let sites = model.sites(&grid);
    let (n, d) = (grid.n_space(), grid.d());
    let opts = PsiOptions::default();
    let mut acc = 0.0;
    for (i, g) in gamma.iter().enumerate() {
        let (k, _) = eval_k_site(&sites[i % n], *g, cell_norm(b.values(), i, d), &opts, None)?;
        acc += k;
    }
    let init: f64 = m0.iter().zip(phi.slice(0)).map(|(m, p)| m * p).sum();
    Ok(grid.cell_volume() * (grid.dt() * acc + init))
}

/// `𝒜(φ) = h^d dt Σ K(x, Λφ) + h^d Σ m0 φ(0,·)`, for `φ(T,·) = u_T`.
pub fn eval_a(model: &CongestionModel, phi: &SpaceTimeField, m0: &[f64]) -> Result<f64> {
    check_slice(phi, m0, "m0")?;
    let (a, b) = lambda_op(model.nu(), phi)?;
    k_functional(model, a.values(), &b, phi, m0)
}

/// `ℬ(m,z) = h^d dt Σ L̃(x,m,z) + h^d Σ m(T,·)u_T`; `+∞` unless every `L̃` is
/// finite, the relative Fokker–Planck residual is at most `tol_feas` and
/// the terminal density is nonnegative.
pub fn eval_b(model: &CongestionModel, state: &PrimalState, m0: &[f64], u_t: &[f64], tol_feas: f64) -> Result<ExtReal> {
    let grid = *state.grid();
    check_slice(&state.m, u_t, "u_T")?;
    let res = fp_residual(model, state, m0)?;
    if relative_fp_residual(&res, &state.m) > tol_feas {
        return Ok(ExtReal::PosInf);
    }
    let terminal = state.terminal_density(model.nu());
    if !terminal_admissible(&terminal, state.m.values(), tol_feas) {
        return Ok(ExtReal::PosInf);
    }
    Ok(running_ltilde(model, state) * grid.dt() * grid.cell_volume()
        + grid.cell_volume() * terminal.iter().zip(u_t).map(|(m, u)| m * u).sum::<f64>())
}

/// `m(T) ≥ 0` up to roundoff relative to the density scale; m(T) sits on
/// the bound wherever the terminal constraint is active.
pub(crate) fn terminal_admissible(terminal: &[f64], m: &[f64], tol: f64) -> bool {
    let floor = -tol * m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    terminal.iter().all(|v| *v >= floor)
}

/// `Σ L̃` over cells, unweighted.
pub(crate) fn running_ltilde(model: &CongestionModel, state: &PrimalState) -> ExtReal {
    let grid = *state.grid();
    let sites = model.sites(&grid);
    let (n, d) = (grid.n_space(), grid.d());
    state
        .m
        .values()
        .iter()
        .enumerate()
        .map(|(i, m)| if *m < 0.0 { ExtReal::PosInf } else { sites[i % n].ltilde(*m, cell_norm(state.z.values(), i, d)) })
        .sum()
}

/// `J(φ,γ) = h^d dt Σ K(x, γ, Dφ) + h^d Σ m0 φ(0,·)` on the relaxed set
/// `γ ≤ ∂ₜφ + νΔφ`, `φ(T,·) ≤ u_T`, checked to `tol`.
pub fn eval_j(model: &CongestionModel, dual: &DualState, m0: &[f64], u_t: &[f64], tol: f64) -> Result<f64> {
    let phi = &dual.phi;
    check_slice(phi, m0, "m0")?;
    check_slice(phi, u_t, "u_T")?;
    let (a, b) = lambda_op(model.nu(), phi)?;
    let worst_slack = a.values().iter().zip(dual.gamma.values()).map(|(a, g)| a - g).fold(f64::INFINITY, f64::min);
    if worst_slack < -tol {
        return Err(MfcError::InfeasibleDual(format!("γ exceeds ∂ₜφ + νΔφ by {}", -worst_slack)));
    }
    let nt = phi.grid().nt();
    let worst_terminal = phi.slice(nt).iter().zip(u_t).map(|(p, u)| p - u).fold(f64::NEG_INFINITY, f64::max);
    if worst_terminal > tol {
        return Err(MfcError::InfeasibleDual(format!("φ(T) exceeds u_T by {worst_terminal}")));
    }
    k_functional(model, dual.gamma.values(), &b, phi, m0)
}

/// `ℬ − J`; `+∞` for an infeasible primal.
pub fn duality_gap(
    model: &CongestionModel,
    dual: &DualState,
    state: &PrimalState,
    m0: &[f64],
    u_t: &[f64],
    tol_feas: f64,
) -> Result<ExtReal> {
    let b = eval_b(model, state, m0, u_t, tol_feas)?;
    let j = eval_j(model, dual, m0, u_t, tol_feas)?;
    Ok(match b {
        ExtReal::Finite(v) => ExtReal::Finite(v - j),
        ExtReal::PosInf => ExtReal::PosInf,
    })
}

/// Flux scale, relative to `‖m‖₁`, below which the flux-consistency ratio
/// is measured against `FLUX_FLOOR·‖m‖₁` instead of `‖z‖₁`.
pub const FLUX_FLOOR: f64 = 1e-8;

/// Threshold below which a density counts as vacuum.
pub const EPS_DEG: f64 = 1e-10;

/// `γ̄ = −H(x,m,Dφ) − mH_m(x,m,Dφ)` with `−ℓ(x,0)` in vacuum cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedGamma {
    pub gamma: SpaceTimeField,
    /// Vacuum cells where `|Dφ|` exceeds the tolerance.
    pub violations: Vec<usize>,
}

pub fn extract_gamma(model: &CongestionModel, phi: &SpaceTimeField, m: &SpaceTimeField, tol: f64) -> Result<ExtractedGamma> {
    let (_, b) = lambda_op(model.nu(), phi)?;
    if m.grid() != phi.grid() || m.staggering() != Staggering::CellTime {
        return Err(MfcError::GridMismatch("extract_gamma needs m on the cells of φ's grid".into()));
    }
    let grid = *phi.grid();
    let sites = model.sites(&grid);
    let (n, d) = (grid.n_space(), grid.d());
    let mut gamma = SpaceTimeField::zeros(grid, Staggering::CellTime);
    let mut violations = Vec::new();
    for (i, (g, mv)) in gamma.values_mut().iter_mut().zip(m.values()).enumerate() {
        let site = &sites[i % n];
        let p = cell_norm(b.values(), i, d);
        *g = if *mv < EPS_DEG {
            if p > tol {
                violations.push(i);
            }
            -site.c
        } else {
            -site.stationarity(*mv, p)
        };
    }
    Ok(ExtractedGamma { gamma, violations })
}

/// `z = m·H_p(x, m, Dφ)`, zero in vacuum cells.
pub fn recovered_flux(model: &CongestionModel, m: &SpaceTimeField, phi: &SpaceTimeField) -> Result<VectorField> {
    let (_, b) = lambda_op(model.nu(), phi)?;
    let grid = *phi.grid();
    let sites = model.sites(&grid);
    let (n, d) = (grid.n_space(), grid.d());
    let mut z = VectorField::zeros(grid);
    for (i, mv) in m.values().iter().enumerate() {
        if *mv < EPS_DEG {
            continue;
        }
        let k = sites[i % n].hp_coef(*mv, cell_norm(b.values(), i, d));
        for c in 0..d {
            z.values_mut()[i * d + c] = mv * k * b.values()[i * d + c];
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub hjb: f64,
    pub feas: f64,
    pub energy: f64,
    pub flux: f64,
    /// `|Dφ|` allowed in vacuum cells.
    pub vacuum_gradient: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { hjb: 1e-6, feas: 1e-6, energy: 1e-6, flux: 1e-3, vacuum_gradient: 1e-6 }
    }
}

/// Integrability sums of the weak-solution definition; finite on a grid,
/// reported for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrability {
    /// `∫∫ m^(−α)|Dφ|^β 1_{m>0}`
    pub inv_density_kinetic: f64,
    /// `∫∫ m^(1−α)|Dφ|^β`
    pub density_kinetic: f64,
    /// `∫∫ m L(x, m, H_p)`
    pub lagrangian: f64,
    /// Vacuum cells with `|Dφ|` above tolerance.
    pub vacuum_gradient_cells: usize,
}

impl Integrability {
    pub fn all_finite(&self) -> bool {
        self.inv_density_kinetic.is_finite() && self.density_kinetic.is_finite() && self.lagrangian.is_finite()
    }
}

/// Pass/fail report of the discrete weak-solution conditions for `(φ, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// `ℬ(m, z) − 𝒜(φ)` with the flux passed in (or the recovered one).
    pub gap: f64,
    /// Most negative cell value of `∂ₜφ + νΔφ + H + mH_m`.
    pub hjb_min_residual: f64,
    /// `max (φ(T) − u_T)`.
    pub terminal_excess: f64,
    /// Relative Fokker–Planck residual of `(m, m·H_p)`.
    pub fp_residual_norm: f64,
    /// Energy identity, relative to the sum of the absolute values of its terms.
    pub energy_identity_residual: f64,
    pub energy_identity_abs: f64,
    /// `‖z − m·H_p‖₁ / ‖z‖₁`; zero when no flux is given.
    pub flux_consistency: f64,
    pub integrability: Integrability,
    /// `max_{ξ,t} |∫ξφ(t)| / ‖ξ‖_Lip` over a trigonometric basis.
    pub bounded_pairing: f64,
    /// Largest slack `∂ₜφ + νΔφ − γ̄` over vacuum cells, where the singular
    /// part of the slack would concentrate.
    pub vacuum_slack_max: f64,
    pub vacuum_cells: usize,
    /// Weak-* Hölder quotient of `t ↦ m(t)` at `ζ = min(1/2, (1−α)/β)`;
    /// monitored, no threshold.
    pub holder_zeta: f64,
    pub holder_quotient: f64,
    pub pass_integrability: bool,
    pub pass_hjb: bool,
    pub pass_fp: bool,
    pub pass_energy: bool,
    pub pass_flux: bool,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.pass_integrability && self.pass_hjb && self.pass_fp && self.pass_energy && self.pass_flux
    }

    /// `key = value` lines; floats print in round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let it = &self.integrability;
        let rows: [(&str, String); 20] = [
            ("passed", self.passed().to_string()),
            ("gap", format!("{:e}", self.gap)),
            ("hjb_min_residual", format!("{:e}", self.hjb_min_residual)),
            ("terminal_excess", format!("{:e}", self.terminal_excess)),
            ("fp_residual_norm", format!("{:e}", self.fp_residual_norm)),
            ("energy_identity_residual", format!("{:e}", self.energy_identity_residual)),
            ("energy_identity_abs", format!("{:e}", self.energy_identity_abs)),
            ("flux_consistency", format!("{:e}", self.flux_consistency)),
            ("integrability.inv_density_kinetic", format!("{:e}", it.inv_density_kinetic)),
            ("integrability.density_kinetic", format!("{:e}", it.density_kinetic)),
            ("integrability.lagrangian", format!("{:e}", it.lagrangian)),
            ("integrability.vacuum_gradient_cells", it.vacuum_gradient_cells.to_string()),
            ("bounded_pairing", format!("{:e}", self.bounded_pairing)),
            ("vacuum_slack_max", format!("{:e}", self.vacuum_slack_max)),
            ("vacuum_cells", self.vacuum_cells.to_string()),
            ("holder_zeta", format!("{:e}", self.holder_zeta)),
            ("holder_quotient", format!("{:e}", self.holder_quotient)),
            ("pass.integrability", self.pass_integrability.to_string()),
            ("pass.hjb", self.pass_hjb.to_string()),
            ("pass.fp", self.pass_fp.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "pass.energy = {}", self.pass_energy);
        let _ = writeln!(s, "pass.flux = {}", self.pass_flux);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MfcError::Format(format!("certificate line {}: expected `key = value`", no + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| MfcError::Format(format!("certificate lacks `{k}`")));
        let f = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| MfcError::Format(format!("bad number for `{k}`"))) };
        let u = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| MfcError::Format(format!("bad count for `{k}`"))) };
        let b = |k: &str| -> Result<bool> { get(k)?.parse().map_err(|_| MfcError::Format(format!("bad flag for `{k}`"))) };
        Ok(Certificate {
            gap: f("gap")?,
            hjb_min_residual: f("hjb_min_residual")?,
            terminal_excess: f("terminal_excess")?,
            fp_residual_norm: f("fp_residual_norm")?,
            energy_identity_residual: f("energy_identity_residual")?,
            energy_identity_abs: f("energy_identity_abs")?,
            flux_consistency: f("flux_consistency")?,
            integrability: Integrability {
                inv_density_kinetic: f("integrability.inv_density_kinetic")?,
                density_kinetic: f("integrability.density_kinetic")?,
                lagrangian: f("integrability.lagrangian")?,
                vacuum_gradient_cells: u("integrability.vacuum_gradient_cells")?,
            },
            bounded_pairing: f("bounded_pairing")?,
            vacuum_slack_max: f("vacuum_slack_max")?,
            vacuum_cells: u("vacuum_cells")?,
            holder_zeta: f("holder_zeta")?,
            holder_quotient: f("holder_quotient")?,
            pass_integrability: b("pass.integrability")?,
            pass_hjb: b("pass.hjb")?,
            pass_fp: b("pass.fp")?,
            pass_energy: b("pass.energy")?,
            pass_flux: b("pass.flux")?,
        })
    }
}

/// `m L(x, m, H_p(x,m,p))`, closed form in `|p|`.
fn m_lagrangian_at_feedback(site: &Site, m: f64, p: f64) -> f64 {
    let xi = site.hp_coef(m, p).abs() * p;
    m * site.lagrangian(m, xi)
}

fn bounded_pairing(phi: &SpaceTimeField) -> f64 {
    let grid = *phi.grid();
    let (n, d, nx) = (grid.n_space(), grid.d(), grid.nx());
    let vol = grid.cell_volume();
    let mut best: f64 = 0.0;
    let mut xi = vec![0.0; n];
    for axis in 0..d {
        for k in 1..=nx {
            for use_sin in [false, true] {
                for (s, v) in xi.iter_mut().enumerate() {
                    let arg = 2.0 * std::f64::consts::PI * k as f64 * grid.node(s)[axis];
                    *v = if use_sin { arg.sin() } else { arg.cos() };
                }
                let sup = xi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if sup < 1e-12 {
                    continue;
                }
                let mut lip: f64 = 0.0;
                for s in 0..n {
                    lip = lip.max((xi[grid.neighbor(s, axis, true)] - xi[s]).abs() / grid.h());
                }
                for j in 0..phi.slices() {
                    let pair: f64 = xi.iter().zip(phi.slice(j)).map(|(a, b)| a * b).sum::<f64>() * vol;
                    best = best.max(pair.abs() / (sup + lip));
                }
            }
        }
    }
    best
}

/// Evaluates the discrete weak-solution conditions for `(φ, m)`. When the
/// solver's flux `z` is given it enters the gap and the flux clause;
/// otherwise the recovered flux `m·H_p` is used for both.
pub fn check_weak_solution(
    model: &CongestionModel,
    phi: &SpaceTimeField,
    m: &SpaceTimeField,
    z: Option<&VectorField>,
    m0: &[f64],
    u_t: &[f64],
    tol: &Tolerances,
) -> Result<Certificate> {
    check_slice(phi, m0, "m0")?;
    check_slice(phi, u_t, "u_T")?;
    if m.grid() != phi.grid() || m.staggering() != Staggering::CellTime {
        return Err(MfcError::GridMismatch("certificate needs m on the cells of φ's grid".into()));
    }
    let grid = *phi.grid();
    let (n, d, nt) = (grid.n_space(), grid.d(), grid.nt());
    let (hdt, vol) = (grid.cell_volume() * grid.dt(), grid.cell_volume());
    let sites = model.sites(&grid);
    let (a, b) = lambda_op(model.nu(), phi)?;
    let (alpha, beta) = (model.alpha(), model.beta());

    let mut hjb_min = f64::INFINITY;
    let mut a_scale: f64 = 1.0;
    let mut integ = Integrability { inv_density_kinetic: 0.0, density_kinetic: 0.0, lagrangian: 0.0, vacuum_gradient_cells: 0 };
    let mut energy_kin = 0.0;
    let mut energy_cong = 0.0;
    let mut vacuum_slack_max: f64 = 0.0;
    let mut vacuum_cells = 0;
    for (i, (av, mv)) in a.values().iter().zip(m.values()).enumerate() {
        let site = &sites[i % n];
        let p = cell_norm(b.values(), i, d);
        a_scale = a_scale.max(av.abs());
        if *mv < EPS_DEG {
            vacuum_cells += 1;
            if p > tol.vacuum_gradient {
                integ.vacuum_gradient_cells += 1;
            }
            let r = av + site.c;
            hjb_min = hjb_min.min(r);
            vacuum_slack_max = vacuum_slack_max.max(r);
            continue;
        }
        hjb_min = hjb_min.min(av + site.stationarity(*mv, p));
        let pb = p.powf(beta);
        integ.inv_density_kinetic += hdt * pb * mv.powf(-alpha);
        integ.density_kinetic += hdt * pb * mv.powf(1.0 - alpha);
        let ml = m_lagrangian_at_feedback(site, *mv, p);
        integ.lagrangian += hdt * ml;
        energy_kin += hdt * ml;
        energy_cong += hdt * mv * mv * site.hamiltonian_m(*mv, p);
    }
    let terminal_excess = phi.slice(nt).iter().zip(u_t).map(|(p, u)| p - u).fold(f64::NEG_INFINITY, f64::max);

    let z_rec = recovered_flux(model, m, phi)?;
    let rec_state = PrimalState::new(m.clone(), z_rec.clone())?;
    let fp_rel = relative_fp_residual(&fp_residual(model, &rec_state, m0)?, m);

    let terminal = rec_state.terminal_density(model.nu());
    let e_term: f64 = vol * terminal.iter().zip(u_t).map(|(m, u)| m * u).sum::<f64>();
    let e_init: f64 = vol * m0.iter().zip(phi.slice(0)).map(|(m, p)| m * p).sum::<f64>();
    let energy = energy_kin + energy_cong + e_term - e_init;
    let energy_scale = energy_kin.abs() + energy_cong.abs() + e_term.abs() + e_init.abs();
    let energy_rel = energy.abs() / energy_scale.max(f64::MIN_POSITIVE);

    let flux_consistency = match z {
        Some(zv) => {
            let diff: f64 = zv.values().iter().zip(z_rec.values()).map(|(a, b)| (a - b).abs()).sum();
            let norm: f64 = zv.values().iter().map(|v| v.abs()).sum();
            // floor keeps the ratio meaningful when the optimal flux vanishes
            let floor = FLUX_FLOOR * m.values().iter().map(|v| v.abs()).sum::<f64>();
            let denom = norm.max(floor);
            if denom > 0.0 {
                diff / denom
            } else {
                0.0
            }
        }
        None => 0.0,
    };
    let primal = PrimalState::new(m.clone(), z.cloned().unwrap_or(z_rec))?;
    let b_value = running_ltilde(model, &primal) * hdt + vol * primal.terminal_density(model.nu()).iter().zip(u_t).map(|(m, u)| m * u).sum::<f64>();
    let gap = b_value.to_f64() - k_functional(model, a.values(), &b, phi, m0)?;
    let holder_zeta = 0.5f64.min((1.0 - alpha) / beta);
    let holder = holder_diagnostic(m, holder_zeta)?;

    Ok(Certificate {
        gap,
        hjb_min_residual: hjb_min,
        terminal_excess,
        fp_residual_norm: fp_rel,
        energy_identity_residual: energy_rel,
        energy_identity_abs: energy.abs(),
        flux_consistency,
        integrability: integ,
        bounded_pairing: bounded_pairing(phi),
        vacuum_slack_max,
        vacuum_cells,
        holder_zeta,
        holder_quotient: holder.quotient,
        pass_integrability: integ.all_finite() && integ.vacuum_gradient_cells == 0,
        pass_hjb: hjb_min >= -tol.hjb * a_scale && terminal_excess <= tol.hjb * a_scale,
        pass_fp: fp_rel <= tol.feas,
        pass_energy: energy_rel <= tol.energy,
        pass_flux: flux_consistency <= tol.flux,
    })
}
