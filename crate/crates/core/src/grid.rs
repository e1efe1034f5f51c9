//! Periodic space–time grids, scalar and vector fields, and the linear
//! operator `Λφ = (∂ₜφ + νΔφ, Dφ)` with its exact discrete adjoint.
//!
//! Time staggering: potentials live on the `nt + 1` time nodes, densities,
//! fluxes and slacks on the `nt` time cells. Spatial derivatives of a node
//! field are taken on the average of the two nodes bounding a cell.
//!
//! Pairings: cell fields pair with weight `h^d·dt`, node fields with `h^d`.
//! With these weights [`lambda_adjoint`] satisfies
//! `⟨Λφ, (m,z)⟩ = ⟨φ, Λ*(m,z)⟩` to round-off.

use crate::error::{MfcError, Result};

/// A periodic grid on `[0,T] × 𝕋^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusGrid {
    d: usize,
    nx: usize,
    nt: usize,
    t_final: f64,
}

impl TorusGrid {
    pub fn new(d: usize, nx: usize, nt: usize, t_final: f64) -> Result<Self> {
        if !(d == 1 || d == 2) {
            return Err(MfcError::InvalidGrid(format!("dimension {d} not supported (1 or 2)")));
        }
        if nx < 4 {
            return Err(MfcError::InvalidGrid(format!("nx = {nx} < 4")));
        }
        if nt < 2 {
            return Err(MfcError::InvalidGrid(format!("nt = {nt} < 2")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(MfcError::InvalidGrid(format!("horizon T = {t_final} must be positive")));
        }
        Ok(TorusGrid { d, nx, nt, t_final })
    }

    pub fn d(&self) -> usize {
        self.d
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn t_final(&self) -> f64 {
        self.t_final
    }
    pub fn h(&self) -> f64 {
        1.0 / self.nx as f64
    }
    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }
    /// `h^d`, the spatial quadrature weight.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.d as i32)
    }
    /// Number of spatial nodes, `nx^d`.
    pub fn n_space(&self) -> usize {
        self.nx.pow(self.d as u32)
    }

    /// Coordinates of spatial node `s`; the first coordinate varies fastest.
    pub fn node(&self, s: usize) -> Vec<f64> {
        let h = self.h();
        let mut rest = s;
        (0..self.d)
            .map(|_| {
                let i = rest % self.nx;
                rest /= self.nx;
                i as f64 * h
            })
            .collect()
    }

    /// Time of node `j`.
    pub fn node_time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    /// Midpoint time of cell `k`.
    pub fn cell_time(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    /// Periodic neighbour of `s` one step along `axis` (`forward` or back).
    #[inline]
    pub fn neighbor(&self, s: usize, axis: usize, forward: bool) -> usize {
        let stride = self.nx.pow(axis as u32);
        let coord = (s / stride) % self.nx;
        if forward {
            if coord + 1 == self.nx {
                s - (self.nx - 1) * stride
            } else {
                s + stride
            }
        } else if coord == 0 {
            s + (self.nx - 1) * stride
        } else {
            s - stride
        }
    }

    fn check(&self, other: &TorusGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(MfcError::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Where along the time axis a scalar field is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Staggering {
    /// `nt + 1` slices at the time nodes (potentials).
    NodeTime,
    /// `nt` slices on the time cells (densities, slacks).
    CellTime,
    /// A single spatial slice (initial density, terminal cost).
    Spatial,
}

impl Staggering {
    pub fn slices(self, grid: &TorusGrid) -> usize {
        match self {
            Staggering::NodeTime => grid.nt + 1,
            Staggering::CellTime => grid.nt,
            Staggering::Spatial => 1,
        }
    }
}

/// Scalar samples on a space–time grid, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: TorusGrid,
    staggering: Staggering,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: TorusGrid, staggering: Staggering) -> Self {
        let len = staggering.slices(&grid) * grid.n_space();
        SpaceTimeField { grid, staggering, values: vec![0.0; len] }
    }

    pub fn from_values(grid: TorusGrid, staggering: Staggering, values: Vec<f64>) -> Result<Self> {
        let len = staggering.slices(&grid) * grid.n_space();
        if values.len() != len {
            return Err(MfcError::GridMismatch(format!("expected {len} values, got {}", values.len())));
        }
        Ok(SpaceTimeField { grid, staggering, values })
    }

    /// Fills the field from `f(t, x)`, with `t` the node or cell-midpoint time.
    pub fn from_fn(grid: TorusGrid, staggering: Staggering, f: impl Fn(f64, &[f64]) -> f64) -> Self {
        let n = grid.n_space();
        let mut out = Self::zeros(grid, staggering);
        for k in 0..staggering.slices(&grid) {
            let t = match staggering {
                Staggering::NodeTime => grid.node_time(k),
                Staggering::CellTime => grid.cell_time(k),
                Staggering::Spatial => 0.0,
            };
            for s in 0..n {
                out.values[k * n + s] = f(t, &grid.node(s));
            }
        }
        out
    }

    /// Repeats a spatial slice across every time slice of `staggering`.
    pub fn replicate(grid: TorusGrid, staggering: Staggering, slice: &[f64]) -> Self {
        let values = (0..staggering.slices(&grid)).flat_map(|_| slice.iter().copied()).collect();
        SpaceTimeField { grid, staggering, values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    pub fn staggering(&self) -> Staggering {
        self.staggering
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn slices(&self) -> usize {
        self.staggering.slices(&self.grid)
    }
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.n_space();
        &self.values[k * n..(k + 1) * n]
    }
    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.n_space();
        &mut self.values[k * n..(k + 1) * n]
    }

    fn expect(&self, staggering: Staggering, what: &str) -> Result<()> {
        if self.staggering == staggering {
            Ok(())
        } else {
            Err(MfcError::GridMismatch(format!("{what}: expected {staggering:?} field, got {:?}", self.staggering)))
        }
    }
}

/// d-vector samples on the time cells, laid out `(cell, node, component)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: TorusGrid) -> Self {
        VectorField { grid, values: vec![0.0; grid.nt * grid.n_space() * grid.d] }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        let len = grid.nt * grid.n_space() * grid.d;
        if values.len() != len {
            return Err(MfcError::GridMismatch(format!("expected {len} vector values, got {}", values.len())));
        }
        Ok(VectorField { grid, values })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    /// Vector at time cell `k`, spatial node `s`.
    pub fn at(&self, k: usize, s: usize) -> &[f64] {
        let d = self.grid.d;
        let i = (k * self.grid.n_space() + s) * d;
        &self.values[i..i + d]
    }
    pub fn at_mut(&mut self, k: usize, s: usize) -> &mut [f64] {
        let d = self.grid.d;
        let i = (k * self.grid.n_space() + s) * d;
        &mut self.values[i..i + d]
    }
}

/// `Σ_x f g · h^d·dt` over cell fields.
pub fn pair_cells(grid: &TorusGrid, f: &[f64], g: &[f64]) -> f64 {
    dot(f, g) * grid.cell_volume() * grid.dt()
}

/// `Σ_x f g · h^d` over node fields.
pub fn pair_nodes(grid: &TorusGrid, f: &[f64], g: &[f64]) -> f64 {
    dot(f, g) * grid.cell_volume()
}

pub(crate) fn dot(f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).map(|(a, b)| a * b).sum()
}

/// `(2d+1)`-point periodic Laplacian of one spatial slice, written to `out`.
pub fn laplacian_into(grid: &TorusGrid, u: &[f64], out: &mut [f64]) {
    let inv_h2 = (grid.nx * grid.nx) as f64;
    let n = grid.n_space();
    if grid.d == 1 {
        for s in 0..n {
            let l = if s == 0 { u[n - 1] } else { u[s - 1] };
            let r = if s + 1 == n { u[0] } else { u[s + 1] };
            out[s] = (l - 2.0 * u[s] + r) * inv_h2;
        }
    } else {
        for s in 0..n {
            let mut acc = -2.0 * grid.d as f64 * u[s];
            for axis in 0..grid.d {
                acc += u[grid.neighbor(s, axis, true)] + u[grid.neighbor(s, axis, false)];
            }
            out[s] = acc * inv_h2;
        }
    }
}

pub fn laplacian(grid: &TorusGrid, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len()];
    laplacian_into(grid, u, &mut out);
    out
}

/// Centered periodic gradient of one slice, interleaved `(node, component)`.
pub fn gradient_slice_into(grid: &TorusGrid, u: &[f64], out: &mut [f64]) {
    let inv_2h = 0.5 * grid.nx as f64;
    let n = grid.n_space();
    let d = grid.d;
    if d == 1 {
        for s in 0..n {
            let l = if s == 0 { u[n - 1] } else { u[s - 1] };
            let r = if s + 1 == n { u[0] } else { u[s + 1] };
            out[s] = (r - l) * inv_2h;
        }
    } else {
        for s in 0..n {
            for axis in 0..d {
                out[s * d + axis] = (u[grid.neighbor(s, axis, true)] - u[grid.neighbor(s, axis, false)]) * inv_2h;
            }
        }
    }
}

/// Centered divergence of an interleaved vector slice; equals `−Dᵀ`.
pub fn divergence_slice_into(grid: &TorusGrid, v: &[f64], out: &mut [f64]) {
    let inv_2h = 0.5 * grid.nx as f64;
    let n = grid.n_space();
    let d = grid.d;
    if d == 1 {
        for s in 0..n {
            let l = if s == 0 { v[n - 1] } else { v[s - 1] };
            let r = if s + 1 == n { v[0] } else { v[s + 1] };
            out[s] = (r - l) * inv_2h;
        }
    } else {
        for s in 0..n {
            let mut acc = 0.0;
            for axis in 0..d {
                acc += v[grid.neighbor(s, axis, true) * d + axis] - v[grid.neighbor(s, axis, false) * d + axis];
            }
            out[s] = acc * inv_2h;
        }
    }
}

/// Spatial gradient of the time-averaged potential, one vector per cell.
pub fn gradient(phi: &SpaceTimeField) -> Result<VectorField> {
    phi.expect(Staggering::NodeTime, "gradient")?;
    let grid = phi.grid;
    let n = grid.n_space();
    let mut out = VectorField::zeros(grid);
    let mut avg = vec![0.0; n];
    for k in 0..grid.nt {
        average(phi.slice(k), phi.slice(k + 1), &mut avg);
        gradient_slice_into(&grid, &avg, &mut out.values[k * n * grid.d..(k + 1) * n * grid.d]);
    }
    Ok(out)
}

/// Forward time difference `(φ_{k+1} − φ_k)/dt`, a cell field.
pub fn time_derivative(phi: &SpaceTimeField) -> Result<SpaceTimeField> {
    phi.expect(Staggering::NodeTime, "time_derivative")?;
    let grid = phi.grid;
    let inv_dt = 1.0 / grid.dt();
    let mut out = SpaceTimeField::zeros(grid, Staggering::CellTime);
    for k in 0..grid.nt {
        let (a, b) = (phi.slice(k), phi.slice(k + 1));
        for (o, (x, y)) in out.slice_mut(k).iter_mut().zip(a.iter().zip(b)) {
            *o = (y - x) * inv_dt;
        }
    }
    Ok(out)
}

fn average(a: &[f64], b: &[f64], out: &mut [f64]) {
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
        *o = 0.5 * (x + y);
    }
}

/// Reusable buffers for allocation-free operator application.
#[derive(Debug, Clone)]
pub struct Workspace {
    avg: Vec<f64>,
    lap: Vec<f64>,
    div: Vec<f64>,
}

impl Workspace {
    pub fn new(grid: &TorusGrid) -> Self {
        let n = grid.n_space();
        Workspace { avg: vec![0.0; n], lap: vec![0.0; n], div: vec![0.0; n] }
    }
}

/// `Λφ` on raw buffers: `a` is a cell field, `b` an interleaved vector field.
pub fn apply_lambda(grid: &TorusGrid, nu: f64, phi: &[f64], a: &mut [f64], b: &mut [f64], ws: &mut Workspace) {
    let n = grid.n_space();
    let d = grid.d;
    let inv_dt = 1.0 / grid.dt();
    for k in 0..grid.nt {
        let lo = &phi[k * n..(k + 1) * n];
        let hi = &phi[(k + 1) * n..(k + 2) * n];
        average(lo, hi, &mut ws.avg);
        laplacian_into(grid, &ws.avg, &mut ws.lap);
        let ak = &mut a[k * n..(k + 1) * n];
        for s in 0..n {
            ak[s] = (hi[s] - lo[s]) * inv_dt + nu * ws.lap[s];
        }
        gradient_slice_into(grid, &ws.avg, &mut b[k * n * d..(k + 1) * n * d]);
    }
}

/// `Λ*(m,z)` on raw buffers, written as a node field `g` of `nt + 1` slices:
///
/// `g_j = (m_{j−1} − m_j) + dt/2·(νΔ(m_{j−1} + m_j) − div(z_{j−1} + z_j))`
///
/// with `m_{−1} = m_{nt} = 0` (and the same for `z`). Interior slices vanish
/// exactly on the discrete Fokker–Planck set, `g_0 = −m0` encodes the
/// initial condition and `g_nt` is the terminal density.
pub fn apply_lambda_adjoint(grid: &TorusGrid, nu: f64, m: &[f64], z: &[f64], g: &mut [f64], ws: &mut Workspace) {
    let n = grid.n_space();
    let d = grid.d;
    let half_dt = 0.5 * grid.dt();
    g.iter_mut().for_each(|v| *v = 0.0);
    // Each cell k contributes to nodes k (sign −) and k + 1 (sign +) for the
    // time difference, and half its diffusion/transport to both.
    for k in 0..grid.nt {
        let mk = &m[k * n..(k + 1) * n];
        let zk = &z[k * n * d..(k + 1) * n * d];
        laplacian_into(grid, mk, &mut ws.lap);
        divergence_slice_into(grid, zk, &mut ws.div);
        for s in 0..n {
            let spread = half_dt * (nu * ws.lap[s] - ws.div[s]);
            g[k * n + s] += -mk[s] + spread;
            g[(k + 1) * n + s] += mk[s] + spread;
        }
    }
}

/// Output of [`lambda_adjoint`]: the interior body and the two boundary
/// slices of `Λ*(m,z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointImage {
    /// Node field, zero on the boundary slices `0` and `nt`.
    pub body: SpaceTimeField,
    /// Slice at `t = 0`; equals `−m0` on the Fokker–Planck set.
    pub t0_slice: Vec<f64>,
    /// Slice at `t = T`: the terminal density.
    pub t_final_slice: Vec<f64>,
}

impl AdjointImage {
    /// Reassembles the full node field.
    pub fn to_node_field(&self) -> SpaceTimeField {
        let mut out = self.body.clone();
        out.slice_mut(0).copy_from_slice(&self.t0_slice);
        let nt = out.grid.nt;
        out.slice_mut(nt).copy_from_slice(&self.t_final_slice);
        out
    }
}

/// `(a, b) = Λφ` with `a = ∂ₜφ + νΔφ̄` and `b = Dφ̄`, `φ̄` the cell average.
pub fn lambda_op(nu: f64, phi: &SpaceTimeField) -> Result<(SpaceTimeField, VectorField)> {
    phi.expect(Staggering::NodeTime, "lambda_op")?;
    let grid = phi.grid;
    let mut a = SpaceTimeField::zeros(grid, Staggering::CellTime);
    let mut b = VectorField::zeros(grid);
    apply_lambda(&grid, nu, &phi.values, &mut a.values, &mut b.values, &mut Workspace::new(&grid));
    Ok((a, b))
}

pub fn lambda_adjoint(nu: f64, m: &SpaceTimeField, z: &VectorField) -> Result<AdjointImage> {
    m.expect(Staggering::CellTime, "lambda_adjoint")?;
    m.grid.check(&z.grid)?;
    let grid = m.grid;
    let n = grid.n_space();
    let mut full = SpaceTimeField::zeros(grid, Staggering::NodeTime);
    apply_lambda_adjoint(&grid, nu, &m.values, &z.values, &mut full.values, &mut Workspace::new(&grid));
    let t0_slice = full.slice(0).to_vec();
    let t_final_slice = full.slice(grid.nt).to_vec();
    full.values[..n].iter_mut().for_each(|v| *v = 0.0);
    full.values[grid.nt * n..].iter_mut().for_each(|v| *v = 0.0);
    Ok(AdjointImage { body: full, t0_slice, t_final_slice })
}
