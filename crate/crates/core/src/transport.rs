//! The discrete Fokker–Planck set, mass bookkeeping, density restoration
//! and the weak-* Hölder diagnostic.

use crate::error::{MfcError, Result};
use crate::fourier::Helmholtz;
use crate::grid::{apply_lambda_adjoint, divergence_slice_into, laplacian_into, SpaceTimeField, Staggering, TorusGrid, VectorField, Workspace};
use crate::model::CongestionModel;

/// Density and flux on time cells.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalState {
    pub m: SpaceTimeField,
    pub z: VectorField,
}

impl PrimalState {
    pub fn new(m: SpaceTimeField, z: VectorField) -> Result<Self> {
        if m.staggering() != Staggering::CellTime {
            return Err(MfcError::GridMismatch("density must live on time cells".into()));
        }
        if m.grid() != z.grid() {
            return Err(MfcError::GridMismatch("density and flux grids differ".into()));
        }
        Ok(PrimalState { m, z })
    }

    /// `m0` repeated on every cell, zero flux.
    pub fn stationary(grid: TorusGrid, m0: &[f64]) -> Self {
        PrimalState { m: SpaceTimeField::replicate(grid, Staggering::CellTime, m0), z: VectorField::zeros(grid) }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.m.grid()
    }

    /// Velocity `w = z/m`, zero where `m = 0`.
    pub fn velocity(&self) -> VectorField {
        let grid = *self.grid();
        let d = grid.d();
        let mut w = VectorField::zeros(grid);
        for (i, m) in self.m.values().iter().enumerate() {
            if *m > 0.0 {
                for c in 0..d {
                    w.values_mut()[i * d + c] = self.z.values()[i * d + c] / m;
                }
            }
        }
        w
    }

    /// Terminal density, the last slice of `Λ*(m,z)`.
    pub fn terminal_density(&self, nu: f64) -> Vec<f64> {
        let grid = *self.grid();
        let n = grid.n_space();
        let mut g = vec![0.0; n * (grid.nt() + 1)];
        apply_lambda_adjoint(&grid, nu, self.m.values(), self.z.values(), &mut g, &mut Workspace::new(&grid));
        g.split_off(n * grid.nt())
    }
}

/// Residual of the discrete Fokker–Planck system.
#[derive(Debug, Clone, PartialEq)]
pub struct FpResidual {
    /// Node slices `1..nt`, one row per interior time node.
    pub interior: Vec<f64>,
    /// `m_0 − m0` in the implicit half-step form.
    pub initial: Vec<f64>,
}

impl FpResidual {
    pub fn l1(&self) -> f64 {
        self.interior.iter().chain(&self.initial).map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.interior.iter().chain(&self.initial).fold(0.0, |a, v| a.max(v.abs()))
    }
}

pub fn fp_residual(model: &CongestionModel, state: &PrimalState, m0: &[f64]) -> Result<FpResidual> {
    let grid = *state.grid();
    let n = grid.n_space();
    if m0.len() != n {
        return Err(MfcError::GridMismatch(format!("m0 has {} values, grid slice has {n}", m0.len())));
    }
    let nt = grid.nt();
    let mut g = vec![0.0; n * (nt + 1)];
    apply_lambda_adjoint(&grid, model.nu(), state.m.values(), state.z.values(), &mut g, &mut Workspace::new(&grid));
    let interior = g[n..n * nt].iter().map(|v| -v).collect();
    let initial = g[..n].iter().zip(m0).map(|(v, m)| -(v + m)).collect();
    Ok(FpResidual { interior, initial })
}

/// `‖residual‖₁ / ‖m‖₁`, both as plain sums.
pub fn relative_fp_residual(res: &FpResidual, m: &SpaceTimeField) -> f64 {
    let scale: f64 = m.values().iter().map(|v| v.abs()).sum();
    res.l1() / scale.max(f64::MIN_POSITIVE)
}

/// `h^d Σ_x m(k, x)`.
pub fn total_mass(m: &SpaceTimeField, k: usize) -> f64 {
    m.grid().cell_volume() * m.slice(k).iter().sum::<f64>()
}

/// Rescales a sampled density to unit discrete mass.
pub fn normalize_mass(grid: &TorusGrid, values: &mut [f64]) -> Result<()> {
    let mass = grid.cell_volume() * values.iter().sum::<f64>();
    if !(mass > 0.0) || values.iter().any(|v| !(*v > 0.0)) {
        return Err(MfcError::Domain("initial density must be positive".into()));
    }
    values.iter_mut().for_each(|v| *v /= mass);
    Ok(())
}

/// The unique density making `(m, z)` satisfy the discrete Fokker–Planck
/// system for the given flux: an implicit forward march in time.
pub fn restore_density(model: &CongestionModel, z: &VectorField, m0: &[f64]) -> Result<SpaceTimeField> {
    let grid = *z.grid();
    let (n, d, nt) = (grid.n_space(), grid.d(), grid.nt());
    if m0.len() != n {
        return Err(MfcError::GridMismatch(format!("m0 has {} values, grid slice has {n}", m0.len())));
    }
    let c = 0.5 * grid.dt() * model.nu();
    let half_dt = 0.5 * grid.dt();
    let mut solver = Helmholtz::new(&grid);
    let mut m = SpaceTimeField::zeros(grid, Staggering::CellTime);
    let (mut rhs, mut div, mut lap, mut out) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..nt {
        let zk = &z.values()[k * n * d..(k + 1) * n * d];
        divergence_slice_into(&grid, zk, &mut div);
        if k == 0 {
            for s in 0..n {
                rhs[s] = m0[s] - half_dt * div[s];
            }
        } else {
            let prev = m.slice(k - 1);
            laplacian_into(&grid, prev, &mut lap);
            let zp = &z.values()[(k - 1) * n * d..k * n * d];
            divergence_slice_into(&grid, zp, &mut out);
            for s in 0..n {
                rhs[s] = prev[s] + c * lap[s] - half_dt * (div[s] + out[s]);
            }
        }
        solver.solve(c, &rhs, &mut out);
        m.slice_mut(k).copy_from_slice(&out);
    }
    Ok(m)
}

/// Discrete heat flow from `m0`: the density of the zero-flux state.
pub fn heat_flow(model: &CongestionModel, grid: TorusGrid, m0: &[f64]) -> Result<SpaceTimeField> {
    restore_density(model, &VectorField::zeros(grid), m0)
}

/// Flat distance between two densities on one slice. Exact on the circle;
/// on the 2-torus a primal-dual estimate of the Beckmann problem, returned
/// as the value of a Lipschitz-feasible test function (a lower bound).
pub fn flat_distance(grid: &TorusGrid, a: &[f64], b: &[f64], max_iters: usize) -> f64 {
    let h = grid.h();
    let vol = grid.cell_volume();
    if grid.d() == 1 {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                acc += vol * (x - y);
                acc
            })
            .collect();
        let mut sorted = cdf.clone();
        sorted.sort_by(f64::total_cmp);
        let med = sorted[sorted.len() / 2];
        cdf.iter_mut().map(|f| h * (*f - med).abs()).sum()
    } else {
        beckmann(grid, a, b, max_iters)
    }
}

fn beckmann(grid: &TorusGrid, a: &[f64], b: &[f64], max_iters: usize) -> f64 {
    let n = grid.n_space();
    let d = grid.d();
    let h = grid.h();
    let rho: Vec<f64> = a.iter().zip(b).map(|(x, y)| grid.cell_volume() * (x - y)).collect();
    // min h‖f‖₁ s.t. div f = ρ, dual max ⟨ξ,ρ⟩ s.t. |ξ(x+e) − ξ(x)| ≤ h
    let step = 0.99 / (4.0 * d as f64).sqrt();
    let (mut f, mut xi, mut xi_bar) = (vec![0.0; n * d], vec![0.0; n], vec![0.0; n]);
    let mut divf = vec![0.0; n];
    for _ in 0..max_iters {
        // f ← shrink(f − τ ∇ξ̄), ∇ the forward difference (= −divᵀ)
        for s in 0..n {
            for axis in 0..d {
                let e = s * d + axis;
                let v = f[e] - step * (xi_bar[grid.neighbor(s, axis, true)] - xi_bar[s]);
                f[e] = v.signum() * (v.abs() - step * h).max(0.0);
            }
        }
        for s in 0..n {
            let mut acc = 0.0;
            for axis in 0..d {
                acc += f[s * d + axis] - f[grid.neighbor(s, axis, false) * d + axis];
            }
            divf[s] = acc;
        }
        for s in 0..n {
            let old = xi[s];
            xi[s] += step * (rho[s] - divf[s]);
            xi_bar[s] = 2.0 * xi[s] - old;
        }
    }
    // scale the dual iterate into the Lipschitz ball
    let mut lip: f64 = 0.0;
    for s in 0..n {
        for axis in 0..d {
            lip = lip.max((xi[grid.neighbor(s, axis, true)] - xi[s]).abs() / h);
        }
    }
    let scale = if lip > 1.0 { 1.0 / lip } else { 1.0 };
    let value: f64 = xi.iter().zip(&rho).map(|(x, r)| x * r).sum::<f64>() * scale;
    value.abs()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderReport {
    pub zeta: f64,
    pub quotient: f64,
    /// Cell-center times attaining the quotient.
    pub pair: (f64, f64),
}

/// `max_{s<t} d(m(s), m(t)) / |t − s|^ζ` over cell-center times.
pub fn holder_diagnostic(m: &SpaceTimeField, zeta: f64) -> Result<HolderReport> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(MfcError::InvalidArgument(format!("Hölder exponent {zeta} outside (0, 1]")));
    }
    if m.staggering() != Staggering::CellTime {
        return Err(MfcError::GridMismatch("Hölder diagnostic expects a cell field".into()));
    }
    let grid = *m.grid();
    let mut best = HolderReport { zeta, quotient: 0.0, pair: (grid.cell_time(0), grid.cell_time(0)) };
    let iters = if grid.d() == 1 { 0 } else { 500 };
    for k in 0..grid.nt() {
        for l in k + 1..grid.nt() {
            let (s, t) = (grid.cell_time(k), grid.cell_time(l));
            let q = flat_distance(&grid, m.slice(k), m.slice(l), iters) / (t - s).powf(zeta);
            if q > best.quotient {
                best = HolderReport { zeta, quotient: q, pair: (s, t) };
            }
        }
    }
    Ok(best)
}
