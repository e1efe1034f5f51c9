//! Particle simulation of the controlled diffusion under a fixed feedback,
//! with histogram densities and a Monte-Carlo estimate of the control cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{MfcError, Result};
use crate::grid::{SpaceTimeField, Staggering, TorusGrid, VectorField};
use crate::model::CongestionModel;

pub const MIN_PARTICLES: usize = 100;

/// Particle positions in `[0,1)^d` at every time node.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    grid: TorusGrid,
    count: usize,
    seed: u64,
    /// `(time node, particle, component)`
    positions: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    pub fn count(&self) -> usize {
        self.count
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn time_steps(&self) -> usize {
        self.grid.nt()
    }

    /// Position of particle `i` at time node `k`.
    pub fn position(&self, k: usize, i: usize) -> &[f64] {
        let d = self.grid.d();
        let at = (k * self.count + i) * d;
        &self.positions[at..at + d]
    }

    /// Histogram index of the cell centered at the nearest grid node.
    fn bin(&self, k: usize, i: usize) -> usize {
        bin_of(&self.grid, self.position(k, i))
    }

    /// Particle counts per bin at time node `k`.
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.grid.n_space()];
        for i in 0..self.count {
            c[self.bin(k, i)] += 1;
        }
        c
    }

    /// Empirical densities at every time node (a node-time field).
    pub fn densities(&self) -> SpaceTimeField {
        let grid = self.grid;
        let mut out = SpaceTimeField::zeros(grid, Staggering::NodeTime);
        let w = 1.0 / (self.count as f64 * grid.cell_volume());
        for k in 0..=grid.nt() {
            for (o, c) in out.slice_mut(k).iter_mut().zip(self.counts(k)) {
                *o = c as f64 * w;
            }
        }
        out
    }

    /// Node-time densities averaged onto time cells, for comparison with a
    /// solver density.
    pub fn cell_densities(&self) -> SpaceTimeField {
        let nodes = self.densities();
        let grid = self.grid;
        let mut out = SpaceTimeField::zeros(grid, Staggering::CellTime);
        for k in 0..grid.nt() {
            let (lo, hi) = (nodes.slice(k), nodes.slice(k + 1));
            for (s, o) in out.slice_mut(k).iter_mut().enumerate() {
                *o = 0.5 * (lo[s] + hi[s]);
            }
        }
        out
    }
}

fn bin_of(grid: &TorusGrid, x: &[f64]) -> usize {
    let nx = grid.nx();
    let mut idx = 0;
    let mut stride = 1;
    for &c in x {
        let j = (c * nx as f64).round() as usize % nx;
        idx += j * stride;
        stride *= nx;
    }
    idx
}

fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    // x.floor() can round y up to exactly 1
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Multilinear periodic interpolation of the vector field `v` on time cell `k`.
fn interpolate(grid: &TorusGrid, v: &[f64], k: usize, x: &[f64], out: &mut [f64]) {
    let (nx, d, n) = (grid.nx(), grid.d(), grid.n_space());
    let base = &v[k * n * d..(k + 1) * n * d];
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut lo = [0usize; 2];
    let mut frac = [0.0; 2];
    for a in 0..d {
        let u = x[a] * nx as f64;
        let f = u.floor();
        lo[a] = (f as usize) % nx;
        frac[a] = u - f;
    }
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut s = 0;
        let mut stride = 1;
        for a in 0..d {
            let up = (corner >> a) & 1 == 1;
            w *= if up { frac[a] } else { 1.0 - frac[a] };
            s += ((lo[a] + up as usize) % nx) * stride;
            stride *= nx;
        }
        for c in 0..d {
            out[c] += w * base[s * d + c];
        }
    }
}

/// Scalar version for spatial node fields (terminal cost).
fn interpolate_scalar(grid: &TorusGrid, u: &[f64], x: &[f64]) -> f64 {
    let nx = grid.nx();
    let d = grid.d();
    let mut lo = [0usize; 2];
    let mut frac = [0.0; 2];
    for a in 0..d {
        let t = x[a] * nx as f64;
        let f = t.floor();
        lo[a] = (f as usize) % nx;
        frac[a] = t - f;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut s = 0;
        let mut stride = 1;
        for a in 0..d {
            let up = (corner >> a) & 1 == 1;
            w *= if up { frac[a] } else { 1.0 - frac[a] };
            s += ((lo[a] + up as usize) % nx) * stride;
            stride *= nx;
        }
        acc += w * u[s];
    }
    acc
}

fn particle_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Initial positions drawn from `m0`, read as piecewise constant on the
/// histogram cells: inverse CDF on the circle, rejection on the 2-torus.
/// Draws come from stream `id` of the seed, before any Brownian increment.
fn sample_initial(grid: &TorusGrid, m0: &[f64], cdf: &[f64], m_max: f64, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let nx = grid.nx();
    let h = grid.h();
    if grid.d() == 1 {
        let u: f64 = rng.random();
        let s = cdf.partition_point(|c| *c <= u).min(nx - 1);
        let below = if s == 0 { 0.0 } else { cdf[s - 1] };
        let within = ((u - below) / (cdf[s] - below)).clamp(0.0, 1.0);
        out[0] = wrap((s as f64 - 0.5 + within) * h);
    } else {
        loop {
            for o in out.iter_mut() {
                *o = rng.random();
            }
            let accept: f64 = rng.random();
            if accept * m_max < m0[bin_of(grid, out)] {
                break;
            }
        }
    }
}

/// Euler–Maruyama paths `X ← wrap(X + v(t_k, X)dt + √(2ν dt) G)` from `m0`.
pub fn simulate(model: &CongestionModel, v: &VectorField, m0: &[f64], count: usize, seed: u64) -> Result<ParticleEnsemble> {
    let grid = *v.grid();
    let n = grid.n_space();
    if count < MIN_PARTICLES {
        return Err(MfcError::InvalidArgument(format!("{count} particles is too few for density statistics (minimum {MIN_PARTICLES})")));
    }
    if m0.len() != n || m0.iter().any(|v| !(*v >= 0.0)) {
        return Err(MfcError::Domain("m0 must be a nonnegative spatial field on the grid".into()));
    }
    let total: f64 = m0.iter().sum();
    let mut acc = 0.0;
    let cdf: Vec<f64> = m0
        .iter()
        .map(|v| {
            acc += v / total;
            acc
        })
        .collect();
    let m_max = m0.iter().cloned().fold(0.0, f64::max);
    let d = grid.d();
    let mut initial = vec![0.0; count * d];
    let mut rngs: Vec<ChaCha8Rng> = (0..count).map(|i| particle_rng(seed, i)).collect();
    for (i, rng) in rngs.iter_mut().enumerate() {
        sample_initial(&grid, m0, &cdf, m_max, rng, &mut initial[i * d..(i + 1) * d]);
    }
    Ok(run_paths(model, v, initial, rngs, seed))
}

/// [`simulate`] from given initial positions; particle `i` draws its
/// increments from stream `i` of `seed`.
pub fn simulate_from(model: &CongestionModel, v: &VectorField, initial: &[f64], seed: u64) -> Result<ParticleEnsemble> {
    let d = v.grid().d();
    if initial.len() % d != 0 || initial.len() / d < MIN_PARTICLES {
        return Err(MfcError::InvalidArgument("need at least 100 whole initial positions".into()));
    }
    let count = initial.len() / d;
    let rngs = (0..count).map(|i| particle_rng(seed, i)).collect();
    Ok(run_paths(model, v, initial.iter().map(|x| wrap(*x)).collect(), rngs, seed))
}

fn run_paths(model: &CongestionModel, v: &VectorField, initial: Vec<f64>, mut rngs: Vec<ChaCha8Rng>, seed: u64) -> ParticleEnsemble {
    let grid = *v.grid();
    let (d, nt) = (grid.d(), grid.nt());
    let count = rngs.len();
    let dt = grid.dt();
    let noise = (2.0 * model.nu() * dt).sqrt();
    let mut positions = Vec::with_capacity((nt + 1) * count * d);
    positions.extend_from_slice(&initial);
    let mut drift = vec![0.0; d];
    for k in 0..nt {
        for (i, rng) in rngs.iter_mut().enumerate() {
            let at = (k * count + i) * d;
            let x: Vec<f64> = positions[at..at + d].to_vec();
            interpolate(&grid, v.values(), k, &x, &mut drift);
            for c in 0..d {
                let g: f64 = rng.sample(StandardNormal);
                positions.push(wrap(x[c] + drift[c] * dt + noise * g));
            }
        }
    }
    ParticleEnsemble { grid, count, seed, positions }
}

/// Density used inside the running cost.
#[derive(Debug, Clone, Copy)]
pub enum CostDensity<'a> {
    /// Leave-one-out histogram of the ensemble itself.
    Empirical,
    /// A given node-time density, e.g. the solver's, read at the particle's cell.
    Given(&'a SpaceTimeField),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Particles contributing to the mean.
    pub used: usize,
    /// Particles excluded for meeting vacuum with a nonzero control.
    pub excluded: usize,
}

/// Monte-Carlo average over particles of
/// `Σ_k L(X_k, m̂(t_k, X_k), v(t_k, X_k)) dt + u_T(X_T)`.
pub fn estimate_cost(
    model: &CongestionModel,
    ensemble: &ParticleEnsemble,
    v: &VectorField,
    u_t: &[f64],
    density: CostDensity,
) -> Result<CostEstimate> {
    let grid = ensemble.grid;
    if v.grid() != &grid {
        return Err(MfcError::GridMismatch("feedback and ensemble grids differ".into()));
    }
    if u_t.len() != grid.n_space() {
        return Err(MfcError::GridMismatch("u_T must be a spatial field on the grid".into()));
    }
    if let CostDensity::Given(m) = density {
        if m.grid() != &grid || m.staggering() != Staggering::NodeTime {
            return Err(MfcError::GridMismatch("cost density must be a node-time field on the ensemble grid".into()));
        }
    }
    let (d, nt, np) = (grid.d(), grid.nt(), ensemble.count);
    let dt = grid.dt();
    let sites = model.sites(&grid);
    let loo_scale = 1.0 / ((np - 1) as f64 * grid.cell_volume());
    let counts: Vec<Vec<usize>> = match density {
        CostDensity::Empirical => (0..nt).map(|k| ensemble.counts(k)).collect(),
        CostDensity::Given(_) => Vec::new(),
    };
    let mut per = Vec::with_capacity(np);
    let mut excluded = 0;
    let mut vel = vec![0.0; d];
    'particles: for i in 0..np {
        let mut cost = 0.0;
        for k in 0..nt {
            let x = ensemble.position(k, i);
            let b = bin_of(&grid, x);
            let m_hat = match density {
                CostDensity::Empirical => (counts[k][b] - 1) as f64 * loo_scale,
                CostDensity::Given(m) => m.slice(k)[b],
            };
            interpolate(&grid, v.values(), k, x, &mut vel);
            let speed = vel.iter().map(|c| c * c).sum::<f64>().sqrt();
            if m_hat <= 0.0 && speed > 0.0 {
                excluded += 1;
                continue 'particles;
            }
            // site of the particle's cell; c is sampled on nodes
            cost += sites[b].lagrangian(m_hat.max(0.0), speed) * dt;
        }
        cost += interpolate_scalar(&grid, u_t, ensemble.position(nt, i));
        per.push(cost);
    }
    let used = per.len();
    if used < 2 {
        return Err(MfcError::Numerical("fewer than two particles left for the cost estimate".into()));
    }
    let mean = per.iter().sum::<f64>() / used as f64;
    let var = per.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (used - 1) as f64;
    Ok(CostEstimate { mean, std_error: (var / used as f64).sqrt(), used, excluded })
}
