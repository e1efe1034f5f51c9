//! Scalar convex-analysis kernel: the minimizer `ψ(x,γ,p)` of
//! `μ ↦ μγ + μH(x,μ,p)` over `μ ≥ 0`, its value `K(x,γ,p)`, the proximal
//! map of `L̃`, and a brute-force conjugate of `K` used as an oracle.

use crate::error::{MfcError, Result};
use crate::model::{norm, pow, CongestionModel, Site};

/// Which part of the definition of `ψ` produced the answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsiBranch {
    /// Positive root of `γ + H + μH_m` with `p ≠ 0`.
    InteriorRoot,
    /// `ψ = 0`: the stationarity map is nonnegative already at `μ → 0⁺`.
    BoundaryZero,
    /// Positive root of `γ + (μℓ)'` with `p = 0`.
    PZeroRoot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiResult {
    pub mu: f64,
    /// `γ + H(μ) + μH_m(μ)` at the returned μ (its `μ → 0⁺` limit on the
    /// boundary branch).
    pub residual: f64,
    pub branch: PsiBranch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiOptions {
    /// Absolute tolerance on the stationarity residual.
    pub tol: f64,
    /// Bracket expansion cap; exceeding it means the cost grows too slowly.
    pub mu_max: f64,
    /// Newton steps before falling back to pure bisection.
    pub newton_steps: usize,
}

impl Default for PsiOptions {
    fn default() -> Self {
        PsiOptions { tol: 1e-12, mu_max: 1e15, newton_steps: 50 }
    }
}

/// Smallest bracket endpoint tried before declaring the root numerically zero.
const MU_FLOOR: f64 = 1e-300;

/// ψ, frozen-site version on `|p|`, with an optional warm start.
pub fn solve_psi_site(site: &Site, gamma: f64, p_norm: f64, opts: &PsiOptions, warm: Option<f64>) -> Result<PsiResult> {
    if !gamma.is_finite() || !p_norm.is_finite() {
        return Err(MfcError::Domain(format!("solve_psi needs finite input, got gamma={gamma}, |p|={p_norm}")));
    }
    let s = pow(p_norm, site.beta);
    let alpha = site.alpha;
    let residual = |mu: f64| gamma + site.stationarity(mu, p_norm);
    let slope = |mu: f64| site.mell_d2(mu) + alpha * (1.0 - alpha) * s * pow(mu, -alpha - 1.0);

    // Value of the stationarity map at μ → 0⁺; −∞ when the congestion term blows up.
    let at_zero = if p_norm == 0.0 {
        gamma + site.c
    } else if alpha == 0.0 {
        gamma + site.c - s
    } else {
        f64::NEG_INFINITY
    };
    if at_zero >= 0.0 {
        return Ok(PsiResult { mu: 0.0, residual: at_zero, branch: PsiBranch::BoundaryZero });
    }
    let branch = if p_norm == 0.0 { PsiBranch::PZeroRoot } else { PsiBranch::InteriorRoot };

    // Bracket: expand upward by doubling, then downward by halving.
    let start = warm.filter(|w| *w > 0.0 && w.is_finite()).unwrap_or(1.0).max(1.0);
    let mut hi = start;
    let mut lo = 0.0;
    let mut f_hi = residual(hi);
    while f_hi <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > opts.mu_max {
            return Err(MfcError::Unbounded { mu_max: opts.mu_max, gamma, p_norm });
        }
        f_hi = residual(hi);
    }
    if lo == 0.0 {
        lo = hi;
        loop {
            lo *= 0.5;
            let f = residual(lo);
            if f < 0.0 {
                break;
            }
            hi = lo;
            if lo < MU_FLOOR {
                return Ok(PsiResult { mu: lo, residual: f, branch });
            }
        }
    }

    let mut mu = match warm {
        Some(w) if w > lo && w < hi => w,
        _ => {
            if hi / lo > 4.0 {
                (lo * hi).sqrt()
            } else {
                0.5 * (lo + hi)
            }
        }
    };
    for iter in 0..(opts.newton_steps + 2000) {
        let f = residual(mu);
        if f.abs() <= opts.tol {
            return Ok(PsiResult { mu, residual: f, branch });
        }
        if f < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let mut next = if iter < opts.newton_steps { mu - f / slope(mu) } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        }
        if next == mu || hi - lo <= 4.0 * f64::EPSILON * hi {
            // bracket collapsed to adjacent floats: best achievable residual
            let f_next = residual(next);
            let (mu, f) = if f_next.abs() < f.abs() { (next, f_next) } else { (mu, f) };
            return Ok(PsiResult { mu, residual: f, branch });
        }
        mu = next;
    }
    Err(MfcError::Numerical(format!("solve_psi did not converge (gamma={gamma}, |p|={p_norm}, mu={mu})")))
}

/// ψ at the torus point `x`.
pub fn solve_psi(model: &CongestionModel, x: &[f64], gamma: f64, p: &[f64], tol_psi: f64) -> Result<PsiResult> {
    let opts = PsiOptions { tol: tol_psi, ..PsiOptions::default() };
    solve_psi_site(&model.site(x), gamma, norm(p), &opts, None)
}

/// `K = ψγ + ψH(ψ,p)`, with `μH = 0` at `μ = 0`. Also returns ψ.
pub fn eval_k_site(site: &Site, gamma: f64, p_norm: f64, opts: &PsiOptions, warm: Option<f64>) -> Result<(f64, PsiResult)> {
    let psi = solve_psi_site(site, gamma, p_norm, opts, warm)?;
    let mu = psi.mu;
    let k = if mu > 0.0 { mu * (gamma + site.hamiltonian(mu, p_norm)) } else { 0.0 };
    Ok((k.min(0.0), psi))
}

pub fn eval_k(model: &CongestionModel, x: &[f64], gamma: f64, p: &[f64]) -> Result<f64> {
    eval_k_site(&model.site(x), gamma, norm(p), &PsiOptions::default(), None).map(|(k, _)| k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxOptions {
    /// Relative tolerance on the Newton step for the density.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProxOptions {
    fn default() -> Self {
        ProxOptions { tol: 1e-15, max_iters: 200 }
    }
}

/// Radial prox: minimizes over `m ≥ 0, ρ ≥ 0`
/// `((m − m̂)² + (ρ − r)²)/(2σ) + A ρ^β* m^e + mℓ(m)`, `e = (α−1)/(β−1)`,
/// which is `L̃` restricted to fluxes collinear with `ẑ`, `r = |ẑ|`.
/// Returns `(m, ρ)`.
pub fn prox_ltilde_radial(site: &Site, m_hat: f64, r: f64, sigma: f64, opts: &ProxOptions) -> Result<(f64, f64)> {
    if !(sigma > 0.0) {
        return Err(MfcError::InvalidArgument(format!("prox step sigma = {sigma} must be positive")));
    }
    let a = site.lag_coef;
    let e = site.ltilde_m_exp();
    let bs = site.beta_star;
    let inv_s = 1.0 / sigma;

    // optimal ρ for a given m > 0
    let rho_of = |m: f64| -> f64 {
        if r == 0.0 {
            return 0.0;
        }
        let w = sigma * a * bs * pow(m, e);
        if bs == 2.0 {
            return r / (1.0 + w);
        }
        // ρ − r + w ρ^(β*−1) = 0 on [0, r]; convex increasing, Newton from r
        let mut rho = r;
        for _ in 0..100 {
            let h = rho - r + w * pow(rho, bs - 1.0);
            let dh = 1.0 + w * (bs - 1.0) * pow(rho, bs - 2.0);
            let next = rho - h / dh;
            let next = if next <= 0.0 { 0.5 * rho } else { next };
            if (next - rho).abs() <= 1e-16 * rho {
                return next;
            }
            rho = next;
        }
        rho
    };
    let grad = |m: f64, rho: f64| (m - m_hat) * inv_s + a * e * pow(rho, bs) * pow(m, e - 1.0) + site.mell_d1(m);
    let curv = |m: f64, rho: f64| {
        let f_mm = inv_s + a * e * (e - 1.0) * pow(rho, bs) * pow(m, e - 2.0) + site.mell_d2(m);
        if rho == 0.0 {
            return f_mm;
        }
        let f_mr = a * e * bs * pow(rho, bs - 1.0) * pow(m, e - 1.0);
        let f_rr = inv_s + a * bs * (bs - 1.0) * pow(rho, bs - 2.0) * pow(m, e);
        f_mm - f_mr * f_mr / f_rr
    };
    let objective = |m: f64, rho: f64| {
        let quad = 0.5 * inv_s * ((m - m_hat).powi(2) + (rho - r).powi(2));
        if m > 0.0 {
            quad + a * pow(rho, bs) * pow(m, e) + m * site.ell(m)
        } else {
            quad
        }
    };

    // slope of the reduced objective at m → 0⁺
    let slope_at_zero = if r == 0.0 {
        -m_hat * inv_s + site.c
    } else if site.alpha == 0.0 {
        -m_hat * inv_s + a * e * (r / (sigma * a * bs)).powf(bs / (bs - 1.0)) + site.c
    } else {
        f64::NEG_INFINITY
    };
    if slope_at_zero >= 0.0 {
        return Ok((0.0, 0.0));
    }

    // bracket the root of the reduced gradient
    let mut hi = m_hat.max(1e-3);
    let mut lo = 0.0;
    while grad(hi, rho_of(hi)) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(MfcError::Numerical(format!("prox bracket diverged (m_hat={m_hat}, r={r}, sigma={sigma})")));
        }
    }
    if lo == 0.0 {
        lo = hi;
        loop {
            lo *= 0.5;
            if grad(lo, rho_of(lo)) < 0.0 {
                break;
            }
            hi = lo;
            if lo < MU_FLOOR {
                return Ok((0.0, 0.0));
            }
        }
    }

    let mut m = if m_hat > lo && m_hat < hi { m_hat } else if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let rho = rho_of(m);
        let g = grad(m, rho);
        if g == 0.0 {
            converged = true;
            break;
        }
        if g < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
        let mut next = m - g / curv(m, rho);
        if !(next > lo && next < hi) {
            next = if hi / lo > 4.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        }
        let step = (next - m).abs();
        m = next;
        if step <= opts.tol * m || hi - lo <= 4.0 * f64::EPSILON * hi {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MfcError::Numerical(format!(
            "prox_ltilde did not converge: m_hat={m_hat}, r={r}, sigma={sigma}, bracket=[{lo:e}, {hi:e}]"
        )));
    }
    let rho = rho_of(m);
    // the origin is the closure point of L̃; prefer it on ties
    if objective(0.0, 0.0) <= objective(m, rho) {
        return Ok((0.0, 0.0));
    }
    Ok((m, rho))
}

/// Proximal map of `σL̃(x,·,·)`: the minimizer over `m ≥ 0, z` of
/// `((m − m̂)² + |z − ẑ|²)/(2σ) + L̃(x,m,z)`.
pub fn prox_ltilde(model: &CongestionModel, x: &[f64], m_hat: f64, z_hat: &[f64], sigma: f64) -> Result<(f64, Vec<f64>)> {
    let r = norm(z_hat);
    let (m, rho) = prox_ltilde_radial(&model.site(x), m_hat, r, sigma, &ProxOptions::default())?;
    let scale = if r > 0.0 { rho / r } else { 0.0 };
    Ok((m, z_hat.iter().map(|v| v * scale).collect()))
}

/// Axis-aligned box in `(γ, p)` for the brute-force conjugate.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub gamma: (f64, f64),
    /// One interval per component of `p`.
    pub p: Vec<(f64, f64)>,
}

fn lin(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if n == 1 {
        0.5 * (lo + hi)
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// `max` over an `n`-point-per-axis grid of `−μγ − z·p + K(x,γ,p)`: a lower
/// bound for `L̃(x,μ,z)` that converges as the grid refines.
pub fn conjugate_ltilde_bruteforce(model: &CongestionModel, x: &[f64], mu: f64, z: &[f64], bx: &SearchBox, n: usize) -> Result<f64> {
    if mu < 0.0 {
        return Err(MfcError::Domain(format!("conjugate needs mu >= 0, got {mu}")));
    }
    if bx.p.len() != z.len() {
        return Err(MfcError::InvalidArgument("search box dimension differs from z".into()));
    }
    let site = model.site(x);
    let opts = PsiOptions::default();
    let d = z.len();
    let np = n.pow(d as u32);
    let mut best = f64::NEG_INFINITY;
    let mut p = vec![0.0; d];
    for ip in 0..np {
        let mut rest = ip;
        for (c, pc) in p.iter_mut().enumerate() {
            *pc = lin(bx.p[c].0, bx.p[c].1, rest % n, n);
            rest /= n;
        }
        let pn = norm(&p);
        let zp: f64 = z.iter().zip(&p).map(|(a, b)| a * b).sum();
        for ig in 0..n {
            let gamma = lin(bx.gamma.0, bx.gamma.1, ig, n);
            let (k, _) = eval_k_site(&site, gamma, pn, &opts, None)?;
            best = best.max(-mu * gamma - zp + k);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::SpatialFn;
    use approx::assert_relative_eq;

    fn model(alpha: f64) -> CongestionModel {
        CongestionModel::new(alpha, 2.0, 2.0, 1.0, SpatialFn::Zero, 0.05).unwrap()
    }

    /// Bisection on the stationarity map, independent of the Newton path.
    fn bisect_root(f: impl Fn(f64) -> f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1e3f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn psi_boundary_branch() {
        let r = solve_psi(&model(0.5), &[0.2], 1.0, &[0.0], 1e-12).unwrap();
        assert_eq!(r.mu, 0.0);
        assert_eq!(r.branch, PsiBranch::BoundaryZero);
        // γ = −ℓ(x,0) exactly: ψ = 0 by convention
        let r = solve_psi(&model(0.5), &[0.2], 0.0, &[0.0], 1e-12).unwrap();
        assert_eq!(r.branch, PsiBranch::BoundaryZero);
    }

    #[test]
    fn psi_examples_match_bisection() {
        let m = model(0.0);
        let r = solve_psi(&m, &[0.0], 0.0, &[1.0], 1e-12).unwrap();
        let oracle = bisect_root(|mu| 0.0 - 1.0 + 2.0 * mu);
        assert_eq!(r.branch, PsiBranch::InteriorRoot);
        assert_relative_eq!(r.mu, oracle, epsilon = 1e-12);
        assert_relative_eq!(r.mu, 0.5, epsilon = 1e-12);

        let r = solve_psi(&model(0.5), &[0.0], -1.0, &[0.0], 1e-12).unwrap();
        assert_eq!(r.branch, PsiBranch::PZeroRoot);
        assert_relative_eq!(r.mu, bisect_root(|mu| -1.0 + 2.0 * mu), epsilon = 1e-12);
    }

    #[test]
    fn k_examples_match_grid_minimum() {
        let grid_min = |f: &dyn Fn(f64) -> f64| (0..=200_000).map(|i| f(i as f64 * 1e-5)).fold(f64::INFINITY, f64::min);
        let m = model(0.0);
        let k = eval_k(&m, &[0.0], 0.0, &[1.0]).unwrap();
        let oracle = grid_min(&|mu| mu * (0.0 - 1.0 + mu));
        assert_relative_eq!(k, oracle, epsilon = 1e-9);
        assert_relative_eq!(k, -0.25, epsilon = 1e-12);
        let k = eval_k(&m, &[0.0], -1.0, &[0.0]).unwrap();
        assert_relative_eq!(k, grid_min(&|mu| mu * (-1.0 + mu)), epsilon = 1e-9);
        assert_relative_eq!(k, -0.25, epsilon = 1e-12);
        assert_eq!(eval_k(&m, &[0.0], 2.0, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn alpha_zero_can_vanish_with_nonzero_momentum() {
        // γ + ℓ(0) − |p|^β ≥ 0 keeps the minimizer at the boundary
        let r = solve_psi(&model(0.0), &[0.0], 2.0, &[1.0], 1e-12).unwrap();
        assert_eq!(r.branch, PsiBranch::BoundaryZero);
        assert_eq!(r.mu, 0.0);
    }

    #[test]
    fn unbounded_model_is_reported() {
        let opts = PsiOptions { mu_max: 10.0, ..PsiOptions::default() };
        let site = model(0.5).site(&[0.0]);
        let err = solve_psi_site(&site, -1e3, 0.0, &opts, None).unwrap_err();
        assert!(matches!(err, MfcError::Unbounded { .. }));
    }

    #[test]
    fn warm_start_gives_same_root() {
        let site = CongestionModel::new(0.5, 1.5, 3.0, 2.0, SpatialFn::Const(0.3), 0.1).unwrap().site(&[0.0]);
        let opts = PsiOptions::default();
        let cold = solve_psi_site(&site, -0.7, 1.3, &opts, None).unwrap();
        let warm = solve_psi_site(&site, -0.7, 1.3, &opts, Some(cold.mu * 1.1)).unwrap();
        assert!(cold.residual.abs() <= 1e-12 && warm.residual.abs() <= 1e-12);
        assert_relative_eq!(cold.mu, warm.mu, max_relative = 1e-10);
    }

    #[test]
    fn prox_at_origin_and_vanishing_step() {
        let m = model(0.5);
        let (mm, z) = prox_ltilde(&m, &[0.0], -0.3, &[0.0], 0.7).unwrap();
        assert_eq!((mm, z[0]), (0.0, 0.0));
        let sigma = 1e-8;
        let (mm, z) = prox_ltilde(&m, &[0.0], 0.8, &[0.4], sigma).unwrap();
        assert!((mm - 0.8).abs() < 1e-4 && (z[0] - 0.4).abs() < 1e-4);
        assert!(prox_ltilde(&m, &[0.0], 0.8, &[0.4], 0.0).is_err());
    }

    #[test]
    fn prox_beats_perturbed_points() {
        let models = [
            model(0.5),
            model(0.0),
            CongestionModel::new(0.3, 1.5, 3.0, 0.8, SpatialFn::Const(0.2), 0.1).unwrap(),
        ];
        let cases = [(1.0, 0.5, 0.3), (0.2, -1.5, 1.0), (2.0, 3.0, 0.05), (0.01, 0.01, 2.0), (-0.5, 0.8, 0.4)];
        for md in &models {
            for &(mh, zh, sigma) in &cases {
                let (mm, z) = prox_ltilde(md, &[0.0], mh, &[zh], sigma).unwrap();
                let obj = |m: f64, z: f64| {
                    let lt = md.ltilde(&[0.0], m, &[z]).unwrap().to_f64();
                    ((m - mh).powi(2) + (z - zh).powi(2)) / (2.0 * sigma) + lt
                };
                let best = obj(mm, z[0]);
                for i in 0..1000 {
                    let t = i as f64 * 0.7853981;
                    let rad = 1e-3 * (1.0 + (i % 10) as f64);
                    let (pm, pz) = ((mm + rad * t.cos()).max(0.0), z[0] + rad * t.sin());
                    assert!(best <= obj(pm, pz) + 1e-13, "m_hat={mh} z_hat={zh}: {best} > {}", obj(pm, pz));
                }
            }
        }
    }

    #[test]
    fn conjugate_of_origin_is_zero_and_monotone() {
        let m = model(0.0);
        let bx = SearchBox { gamma: (-1.0, 1.0), p: vec![(-1.0, 1.0)] };
        assert_eq!(conjugate_ltilde_bruteforce(&m, &[0.0], 0.0, &[0.0], &bx, 21).unwrap(), 0.0);
        let bx = SearchBox { gamma: (-6.0, 2.0), p: vec![(-4.0, 4.0)] };
        let mut prev = f64::NEG_INFINITY;
        for n in [11usize, 21, 41, 81] {
            let v = conjugate_ltilde_bruteforce(&m, &[0.0], 1.0, &[2.0], &bx, n).unwrap();
            assert!(v >= prev - 1e-15 && v <= 2.0 + 1e-12);
            prev = v;
        }
        assert!((prev - 2.0).abs() < 0.05, "{prev}");
    }
}
