//! FFT diagonalization of the periodic difference operators, used for the
//! implicit diffusion solves and the space-time dual metric.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::TorusGrid;

pub struct Spectral {
    grid: TorusGrid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Eigenvalues of `−Δ` per mode.
    neg_lap: Vec<f64>,
    /// `|symbol of D|²` per mode.
    grad_sq: Vec<f64>,
    column: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: &TorusGrid) -> Self {
        let nx = grid.nx();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(nx);
        let inv = planner.plan_fft_inverse(nx);
        let h = grid.h();
        let lap1: Vec<f64> = (0..nx).map(|k| (2.0 * (std::f64::consts::PI * k as f64 / nx as f64).sin() / h).powi(2)).collect();
        let grad1: Vec<f64> = (0..nx).map(|k| ((2.0 * std::f64::consts::PI * k as f64 / nx as f64).sin() / h).powi(2)).collect();
        let n = grid.n_space();
        let (mut neg_lap, mut grad_sq) = (vec![0.0; n], vec![0.0; n]);
        for s in 0..n {
            let mut rest = s;
            for _ in 0..grid.d() {
                let k = rest % nx;
                rest /= nx;
                neg_lap[s] += lap1[k];
                grad_sq[s] += grad1[k];
            }
        }
        Spectral { grid: *grid, fwd, inv, neg_lap, grad_sq, column: vec![Complex64::default(); nx] }
    }

    pub fn neg_lap(&self) -> &[f64] {
        &self.neg_lap
    }

    pub fn grad_sq(&self) -> &[f64] {
        &self.grad_sq
    }

    fn transform(&mut self, buf: &mut [Complex64], forward: bool) {
        let nx = self.grid.nx();
        let plan = if forward { &self.fwd } else { &self.inv };
        plan.process(buf);
        if self.grid.d() == 2 {
            for i in 0..nx {
                for j in 0..nx {
                    self.column[j] = buf[i + j * nx];
                }
                plan.process(&mut self.column);
                for j in 0..nx {
                    buf[i + j * nx] = self.column[j];
                }
            }
        }
    }

    pub fn forward(&mut self, u: &[f64], out: &mut [Complex64]) {
        for (o, v) in out.iter_mut().zip(u) {
            *o = Complex64::new(*v, 0.0);
        }
        self.transform(out, true);
    }

    /// Inverse transform, normalized, keeping the real part.
    pub fn inverse(&mut self, buf: &mut [Complex64], out: &mut [f64]) {
        self.transform(buf, false);
        let scale = 1.0 / self.grid.n_space() as f64;
        for (o, v) in out.iter_mut().zip(buf.iter()) {
            *o = v.re * scale;
        }
    }
}

/// Solver for `(I − cΔ)u = f` on one slice.
pub struct Helmholtz {
    spectral: Spectral,
    buf: Vec<Complex64>,
}

impl Helmholtz {
    pub fn new(grid: &TorusGrid) -> Self {
        Helmholtz { spectral: Spectral::new(grid), buf: vec![Complex64::default(); grid.n_space()] }
    }

    pub fn solve(&mut self, c: f64, rhs: &[f64], out: &mut [f64]) {
        self.spectral.forward(rhs, &mut self.buf);
        for (v, l) in self.buf.iter_mut().zip(&self.spectral.neg_lap) {
            *v /= 1.0 + c * l;
        }
        self.spectral.inverse(&mut self.buf, out);
    }
}

const TERMINAL_REG: f64 = 1e-3;

/// The dual metric `Λ*Λ` on node fields. [`DualMetric::solve`] inverts the
/// block of slices `0..nt` with the last slice held fixed;
/// [`DualMetric::step`] computes the proximal dual step over all slices
/// under the terminal bound. Each Fourier mode gives a symmetric
/// tridiagonal system in time.
pub struct DualMetric {
    spectral: Spectral,
    nt: usize,
    diag: Vec<f64>,
    /// `off[s·nt + j]` couples nodes `j` and `j + 1`; `j = nt − 1` is the
    /// coupling to the terminal slice.
    off: Vec<f64>,
    /// Column `nt − 1` of the inverse free block, per mode.
    last_col: Vec<f64>,
    /// Schur complement of the free block plus `terminal_reg`, per mode.
    schur: Vec<f64>,
    terminal_reg: f64,
    buf: Vec<Complex64>,
    work: Vec<Complex64>,
    term: Vec<Complex64>,
    cprime: Vec<f64>,
}

/// Outcome of the terminal-bound subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    /// Terminal nodes held at the bound.
    pub active: usize,
    pub active_set_iters: usize,
}

impl DualMetric {
    pub fn new(grid: &TorusGrid, nu: f64) -> Self {
        let spectral = Spectral::new(grid);
        let nt = grid.nt();
        let n = grid.n_space();
        let dt = grid.dt();
        let mut diag = vec![0.0; n * nt];
        let mut off = vec![0.0; n * nt];
        let mut terminal = vec![0.0; n];
        for s in 0..n {
            let (l, g) = (spectral.neg_lap[s], spectral.grad_sq[s]);
            let p = 1.0 / dt - 0.5 * nu * l;
            let q = 1.0 / dt + 0.5 * nu * l;
            for j in 0..nt {
                // cell j couples nodes j and j + 1
                diag[s * nt + j] = dt * (q * q + 0.25 * g + if j >= 1 { p * p + 0.25 * g } else { 0.0 });
                off[s * nt + j] = dt * (-p * q + 0.25 * g);
            }
            terminal[s] = dt * (p * p + 0.25 * g);
        }
        let mut me = DualMetric {
            spectral,
            nt,
            diag,
            off,
            last_col: vec![0.0; n * nt],
            schur: vec![0.0; n],
            terminal_reg: 0.0,
            buf: vec![Complex64::default(); n * nt],
            work: vec![Complex64::default(); n],
            term: vec![Complex64::default(); n],
            cprime: vec![0.0; nt],
        };
        let mut col = vec![Complex64::default(); nt];
        for s in 0..n {
            col.iter_mut().for_each(|c| *c = Complex64::default());
            col[nt - 1] = Complex64::new(1.0, 0.0);
            me.thomas(s, &mut col);
            for j in 0..nt {
                me.last_col[s * nt + j] = col[j].re;
            }
            let c = me.off[s * nt + nt - 1];
            me.schur[s] = (terminal[s] - c * c * col[nt - 1].re).max(0.0);
        }
        // Λ vanishes on constants and on checkerboard modes, so the terminal
        // block gets a small Euclidean term to stay definite
        let eps = TERMINAL_REG * me.schur.iter().sum::<f64>() / n as f64;
        me.schur.iter_mut().for_each(|v| *v += eps);
        me.terminal_reg = eps;
        me
    }

    /// The Euclidean weight `ε` added on the terminal slice.
    pub fn terminal_reg(&self) -> f64 {
        self.terminal_reg
    }

    fn thomas(&mut self, s: usize, x: &mut [Complex64]) {
        let nt = self.nt;
        let d = &self.diag[s * nt..(s + 1) * nt];
        let o = &self.off[s * nt..(s + 1) * nt];
        let mut denom = d[0];
        self.cprime[0] = if nt > 1 { o[0] / denom } else { 0.0 };
        x[0] /= denom;
        for j in 1..nt {
            denom = d[j] - o[j - 1] * self.cprime[j - 1];
            self.cprime[j] = if j + 1 < nt { o[j] / denom } else { 0.0 };
            x[j] = (x[j] - x[j - 1] * o[j - 1]) / denom;
        }
        for j in (0..nt - 1).rev() {
            let next = x[j + 1];
            x[j] -= next * self.cprime[j];
        }
    }

    fn forward_slices(&mut self, rhs: &[f64]) {
        let n = self.spectral.grid.n_space();
        let nt = self.nt;
        for j in 0..nt {
            self.spectral.forward(&rhs[j * n..(j + 1) * n], &mut self.work);
            for s in 0..n {
                self.buf[s * nt + j] = self.work[s];
            }
        }
    }

    fn inverse_slices(&mut self, out: &mut [f64]) {
        let n = self.spectral.grid.n_space();
        let nt = self.nt;
        for j in 0..nt {
            for s in 0..n {
                self.work[s] = self.buf[s * nt + j];
            }
            self.spectral.inverse(&mut self.work, &mut out[j * n..(j + 1) * n]);
        }
    }

    /// Solves `Λ*Λ u = rhs` for `u` on slices `0..nt` (row-major by slice),
    /// the terminal slice of `u` being zero.
    pub fn solve(&mut self, rhs: &[f64], out: &mut [f64]) {
        let n = self.spectral.grid.n_space();
        let nt = self.nt;
        self.forward_slices(rhs);
        let mut x = std::mem::take(&mut self.buf);
        for s in 0..n {
            self.thomas(s, &mut x[s * nt..(s + 1) * nt]);
        }
        self.buf = x;
        self.inverse_slices(out);
    }

    /// Applies the Schur complement `S/σ` to a terminal slice.
    fn apply_schur(&mut self, x: &[f64], sigma: f64, out: &mut [f64]) {
        self.spectral.forward(x, &mut self.term);
        for (v, sc) in self.term.iter_mut().zip(&self.schur) {
            *v *= sc / sigma;
        }
        self.spectral.inverse(&mut self.term, out);
    }

    /// `δ = argmax ⟨δ, r⟩ − (‖Λδ‖² + ε‖δ(T)‖²)/(2σ)` over node fields
    /// subject to `δ(T) ≤ slack` (`slack = u_T − φ(T) ≥ 0`), written to `out`.
    pub fn step(&mut self, r: &[f64], sigma: f64, slack: &[f64], out: &mut [f64]) -> StepInfo {
        let n = self.spectral.grid.n_space();
        let nt = self.nt;
        // free block: w = M_ff⁻¹ r_f
        self.forward_slices(&r[..n * nt]);
        let mut w = std::mem::take(&mut self.buf);
        for s in 0..n {
            self.thomas(s, &mut w[s * nt..(s + 1) * nt]);
        }
        // reduced terminal right-hand side r_T − M_Tf w
        let mut rt = vec![Complex64::default(); n];
        self.spectral.forward(&r[n * nt..], &mut rt);
        for s in 0..n {
            rt[s] -= w[s * nt + nt - 1] * self.off[s * nt + nt - 1];
        }
        let mut b = vec![0.0; n];
        self.spectral.inverse(&mut rt, &mut b);
        let (delta_t, info) = self.terminal_qp(&b, sigma, slack);

        // δ_f = σ w − M_ff⁻¹ M_fT δ_T
        let mut dt_hat = vec![Complex64::default(); n];
        self.spectral.forward(&delta_t, &mut dt_hat);
        for s in 0..n {
            let c = self.off[s * nt + nt - 1];
            for j in 0..nt {
                w[s * nt + j] = w[s * nt + j] * sigma - dt_hat[s] * (c * self.last_col[s * nt + j]);
            }
        }
        self.buf = w;
        self.inverse_slices(&mut out[..n * nt]);
        out[n * nt..].copy_from_slice(&delta_t);
        info
    }

    /// `max ⟨x, b⟩ − xᵀSx/(2σ)` subject to `x ≤ slack`, by a primal-dual
    /// active-set iteration with conjugate gradients on the inactive set.
    /// Starts from the all-active guess, which is exact whenever every
    /// terminal multiplier is positive.
    fn terminal_qp(&mut self, b: &[f64], sigma: f64, slack: &[f64]) -> (Vec<f64>, StepInfo) {
        let n = b.len();
        let c = self.schur.iter().sum::<f64>() / (n as f64 * sigma);
        let c = if c > 0.0 { c } else { 1.0 };
        let mut active = vec![true; n];
        let mut x = slack.to_vec();
        let mut qx = vec![0.0; n];
        let mut iters = 0;
        for _ in 0..100 {
            iters += 1;
            let inactive: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
            x.iter_mut().zip(slack).zip(&active).for_each(|((xi, s), a)| {
                if *a {
                    *xi = *s
                }
            });
            if !inactive.is_empty() {
                self.cg_inactive(b, sigma, &inactive, &mut x);
            }
            self.apply_schur(&x, sigma, &mut qx);
            let mut next = vec![false; n];
            for i in 0..n {
                let lam = if active[i] { b[i] - qx[i] } else { 0.0 };
                let score = lam + c * (x[i] - slack[i]);
                next[i] = score > 0.0;
            }
            if next == active {
                break;
            }
            active = next;
        }
        for (xi, s) in x.iter_mut().zip(slack) {
            *xi = xi.min(*s);
        }
        let count = active.iter().filter(|a| **a).count();
        (x, StepInfo { active: count, active_set_iters: iters })
    }

    /// Conjugate gradients for `(S/σ)_II x_I = b_I − (S/σ)_IA x_A`.
    fn cg_inactive(&mut self, b: &[f64], sigma: f64, inactive: &[usize], x: &mut [f64]) {
        let n = b.len();
        let mut full = vec![0.0; n];
        let mut q = vec![0.0; n];
        // residual r = b − Q x restricted to I, with x_A fixed
        self.apply_schur(x, sigma, &mut q);
        let mut r: Vec<f64> = inactive.iter().map(|&i| b[i] - q[i]).collect();
        let mut p = r.clone();
        let mut rr: f64 = r.iter().map(|v| v * v).sum();
        let bnorm: f64 = inactive.iter().map(|&i| b[i] * b[i]).sum::<f64>().sqrt().max(1e-300);
        for _ in 0..(10 * n).max(50) {
            if rr.sqrt() <= 1e-14 * bnorm {
                break;
            }
            full.iter_mut().for_each(|v| *v = 0.0);
            for (k, &i) in inactive.iter().enumerate() {
                full[i] = p[k];
            }
            self.apply_schur(&full, sigma, &mut q);
            let pq: f64 = inactive.iter().enumerate().map(|(k, &i)| p[k] * q[i]).sum();
            if !(pq > 0.0) {
                break;
            }
            let alpha = rr / pq;
            for (k, &i) in inactive.iter().enumerate() {
                x[i] += alpha * p[k];
                r[k] -= alpha * q[i];
            }
            let rr_new: f64 = r.iter().map(|v| v * v).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for k in 0..p.len() {
                p[k] = r[k] + beta * p[k];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{apply_lambda, apply_lambda_adjoint, laplacian, Workspace};

    #[test]
    fn helmholtz_inverts_operator() {
        for d in [1, 2] {
            let grid = TorusGrid::new(d, 8, 4, 1.0).unwrap();
            let n = grid.n_space();
            let f: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
            let mut u = vec![0.0; n];
            Helmholtz::new(&grid).solve(0.3, &f, &mut u);
            let lap = laplacian(&grid, &u);
            for i in 0..n {
                assert!((u[i] - 0.3 * lap[i] - f[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dual_metric_inverts_normal_operator() {
        for d in [1, 2] {
            let grid = TorusGrid::new(d, 8, 5, 0.7).unwrap();
            let (n, nt, nu) = (grid.n_space(), grid.nt(), 0.13);
            let rhs: Vec<f64> = (0..n * nt).map(|i| ((i * 104729) % 17) as f64 / 17.0 - 0.5).collect();
            let mut u = vec![0.0; n * nt];
            DualMetric::new(&grid, nu).solve(&rhs, &mut u);
            u.extend(std::iter::repeat(0.0).take(n));
            let mut ws = Workspace::new(&grid);
            let (mut a, mut b) = (vec![0.0; n * nt], vec![0.0; n * nt * d]);
            apply_lambda(&grid, nu, &u, &mut a, &mut b, &mut ws);
            let mut g = vec![0.0; n * (nt + 1)];
            apply_lambda_adjoint(&grid, nu, &a, &b, &mut g, &mut ws);
            for i in 0..n * nt {
                assert!((g[i] - rhs[i]).abs() < 1e-10, "{d} {i}: {} vs {}", g[i], rhs[i]);
            }
        }
    }

    #[test]
    fn dual_step_satisfies_terminal_kkt() {
        for d in [1, 2] {
            let grid = TorusGrid::new(d, 8, 5, 0.7).unwrap();
            let (n, nt, nu, sigma) = (grid.n_space(), grid.nt(), 0.13, 0.9);
            let r: Vec<f64> = (0..n * (nt + 1)).map(|i| ((i * 104729) % 17) as f64 / 17.0 - 0.5).collect();
            let slack: Vec<f64> = (0..n).map(|i| if i % 3 == 0 { 0.0 } else { 0.05 * i as f64 }).collect();
            let mut delta = vec![0.0; n * (nt + 1)];
            let mut dm = DualMetric::new(&grid, nu);
            dm.step(&r, sigma, &slack, &mut delta);
            let eps = dm.terminal_reg();
            let mut ws = Workspace::new(&grid);
            let (mut a, mut b) = (vec![0.0; n * nt], vec![0.0; n * nt * d]);
            apply_lambda(&grid, nu, &delta, &mut a, &mut b, &mut ws);
            let mut g = vec![0.0; n * (nt + 1)];
            apply_lambda_adjoint(&grid, nu, &a, &b, &mut g, &mut ws);
            // gradient r − Mδ/σ: zero on free nodes, a nonnegative multiplier at the bound
            for i in 0..n * nt {
                assert!((r[i] - g[i] / sigma).abs() < 1e-9, "{d} {i}");
            }
            for s in 0..n {
                let lam = r[n * nt + s] - (g[n * nt + s] + eps * delta[n * nt + s]) / sigma;
                let gap = slack[s] - delta[n * nt + s];
                assert!(gap >= -1e-12);
                assert!(lam >= -1e-9, "{d} {s}: {lam}");
                assert!((lam * gap).abs() < 1e-9, "{d} {s}: {lam} {gap}");
            }
        }
    }
}
