//! The congestion Hamiltonian family and its standing-assumption auditor.
//!
//! `H(x,m,p) = −|p|^β / m^α + ℓ(x,m)` with the running cost
//! `ℓ(x,m) = c(x) + κ·m^(q−1)`. The Lagrangian `L`, the perspective `L̃`
//! and all first derivatives are provided in closed form. [`Site`] freezes
//! the model at one point of the torus so inner loops skip re-evaluating
//! `c(x)`.

use crate::error::{MfcError, Result};
use crate::extended::ExtReal;
use crate::grid::TorusGrid;
use crate::spatial::SpatialFn;

/// Parameters of the Hamiltonian, the cost and the diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct CongestionModel {
    alpha: f64,
    beta: f64,
    beta_star: f64,
    q: f64,
    q_star: f64,
    kappa: f64,
    c: SpatialFn,
    nu: f64,
}

impl CongestionModel {
    /// Builds a model. `α ∈ [0,1)`, `β ∈ (1,2]`, `q > 1`, `κ > 0` and `ν ≥ 0`
    /// are enforced here; the growth, sign and compatibility conditions
    /// (including `β ≥ q*` and `ν > 0`) are left to [`audit_assumptions`].
    pub fn new(alpha: f64, beta: f64, q: f64, kappa: f64, c: SpatialFn, nu: f64) -> Result<Self> {
        let all_finite = [alpha, beta, q, kappa, nu].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(MfcError::InvalidModel("parameters must be finite".into()));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(MfcError::InvalidModel(format!("alpha = {alpha} outside [0, 1)")));
        }
        if !(beta > 1.0 && beta <= 2.0) {
            return Err(MfcError::InvalidModel(format!("beta = {beta} outside (1, 2]")));
        }
        if q <= 1.0 {
            return Err(MfcError::InvalidModel(format!("q = {q} must exceed 1")));
        }
        if kappa <= 0.0 {
            return Err(MfcError::InvalidModel(format!("kappa = {kappa} must be positive")));
        }
        if nu < 0.0 {
            return Err(MfcError::InvalidModel(format!("nu = {nu} must be nonnegative")));
        }
        Ok(CongestionModel {
            alpha,
            beta,
            beta_star: beta / (beta - 1.0),
            q,
            q_star: q / (q - 1.0),
            kappa,
            c,
            nu,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn beta_star(&self) -> f64 {
        self.beta_star
    }
    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn q_star(&self) -> f64 {
        self.q_star
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn c(&self) -> &SpatialFn {
        &self.c
    }

    /// Same model with a different diffusion coefficient.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        Self::new(self.alpha, self.beta, self.q, self.kappa, self.c.clone(), nu)
    }

    /// Same model with `κ` and `c` multiplied by `s > 0`.
    pub fn scaled_cost(&self, s: f64) -> Result<Self> {
        let c = match &self.c {
            SpatialFn::Zero => SpatialFn::Zero,
            SpatialFn::Const(v) => SpatialFn::Const(v * s),
            SpatialFn::Cos2Pi { a, b, k } => SpatialFn::Cos2Pi { a: a * s, b: b * s, k: *k },
            SpatialFn::Sin2 { a, k } => SpatialFn::Sin2 { a: a * s, k: *k },
            SpatialFn::Tabulated { d, nx, values } => {
                SpatialFn::Tabulated { d: *d, nx: *nx, values: values.iter().map(|v| v * s).collect() }
            }
        };
        Self::new(self.alpha, self.beta, self.q, self.kappa * s, c, self.nu)
    }

    /// Freezes the model at the torus point `x`.
    pub fn site(&self, x: &[f64]) -> Site {
        self.site_with_c(self.c.eval(x))
    }

    /// One [`Site`] per spatial node of the grid.
    pub fn sites(&self, grid: &TorusGrid) -> Vec<Site> {
        (0..grid.n_space()).map(|s| self.site(&grid.node(s))).collect()
    }

    /// Freezes the model at a point whose spatial cost value `c(x)` is known.
    pub fn site_with_c(&self, c: f64) -> Site {
        let beta_star = self.beta_star;
        Site {
            alpha: self.alpha,
            beta: self.beta,
            beta_star,
            q: self.q,
            kappa: self.kappa,
            c,
            lag_coef: (self.beta - 1.0) * self.beta.powf(-beta_star),
        }
    }

    pub fn running_cost(&self, x: &[f64], m: f64) -> Result<f64> {
        if !(m >= 0.0) {
            return Err(MfcError::Domain(format!("running cost needs m >= 0, got {m}")));
        }
        Ok(self.site(x).ell(m))
    }

    pub fn hamiltonian(&self, x: &[f64], m: f64, p: &[f64]) -> Result<f64> {
        positive(m, "hamiltonian")?;
        Ok(self.site(x).hamiltonian(m, norm(p)))
    }

    pub fn lagrangian(&self, x: &[f64], m: f64, xi: &[f64]) -> Result<f64> {
        positive(m, "lagrangian")?;
        Ok(self.site(x).lagrangian(m, norm(xi)))
    }

    /// `∂H/∂p`, taken as zero at `p = 0`.
    pub fn hamiltonian_p(&self, x: &[f64], m: f64, p: &[f64]) -> Result<Vec<f64>> {
        positive(m, "hamiltonian_p")?;
        let k = self.site(x).hp_coef(m, norm(p));
        Ok(p.iter().map(|pi| k * pi).collect())
    }

    pub fn hamiltonian_m(&self, x: &[f64], m: f64, p: &[f64]) -> Result<f64> {
        positive(m, "hamiltonian_m")?;
        Ok(self.site(x).hamiltonian_m(m, norm(p)))
    }

    /// The perspective `L̃(x,m,z)`: `m·L(x,m,z/m)` for `m > 0`, `0` at the
    /// origin and `+∞` for `m = 0, z ≠ 0`.
    pub fn ltilde(&self, x: &[f64], m: f64, z: &[f64]) -> Result<ExtReal> {
        if !(m >= 0.0) {
            return Err(MfcError::Domain(format!("ltilde needs m >= 0, got {m}")));
        }
        Ok(self.site(x).ltilde(m, norm(z)))
    }
}

fn positive(m: f64, what: &str) -> Result<()> {
    if m > 0.0 {
        Ok(())
    } else {
        Err(MfcError::Domain(format!("{what} needs m > 0, got {m}")))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `x^e` with exact shortcuts for the exponents that dominate in practice.
#[inline]
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else if e == 2.0 {
        x * x
    } else if e == 0.5 {
        x.sqrt()
    } else if e == 0.0 {
        1.0
    } else if e == -0.5 {
        1.0 / x.sqrt()
    } else if e == -1.0 {
        1.0 / x
    } else {
        x.powf(e)
    }
}

/// The model frozen at one torus point; every method works on norms of the
/// vector arguments since the family is radial in `p`, `ξ` and `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub alpha: f64,
    pub beta: f64,
    pub beta_star: f64,
    pub q: f64,
    pub kappa: f64,
    /// x-dependent part of the running cost, `c(x)`.
    pub c: f64,
    /// `(β−1)·β^(−β*)`
    pub lag_coef: f64,
}

impl Site {
    #[inline]
    pub fn ell(&self, m: f64) -> f64 {
        self.c + self.kappa * pow(m, self.q - 1.0)
    }

    #[inline]
    pub fn ell_m(&self, m: f64) -> f64 {
        self.kappa * (self.q - 1.0) * pow(m, self.q - 2.0)
    }

    /// `d/dm (m·ℓ) = ℓ + m·ℓ_m`
    #[inline]
    pub fn mell_d1(&self, m: f64) -> f64 {
        self.c + self.kappa * self.q * pow(m, self.q - 1.0)
    }

    /// `d²/dm² (m·ℓ)`
    #[inline]
    pub fn mell_d2(&self, m: f64) -> f64 {
        self.kappa * self.q * (self.q - 1.0) * pow(m, self.q - 2.0)
    }

    #[inline]
    pub fn hamiltonian(&self, m: f64, p_norm: f64) -> f64 {
        -pow(p_norm, self.beta) * pow(m, -self.alpha) + self.ell(m)
    }

    /// Scalar `k` with `H_p = k·p`.
    #[inline]
    pub fn hp_coef(&self, m: f64, p_norm: f64) -> f64 {
        if p_norm == 0.0 {
            0.0
        } else {
            -self.beta * pow(p_norm, self.beta - 2.0) * pow(m, -self.alpha)
        }
    }

    #[inline]
    pub fn hamiltonian_m(&self, m: f64, p_norm: f64) -> f64 {
        self.alpha * pow(p_norm, self.beta) * pow(m, -self.alpha - 1.0) + self.ell_m(m)
    }

    /// `H + m·H_m = (m ℓ)' − (1−α)|p|^β m^(−α)`.
    #[inline]
    pub fn stationarity(&self, m: f64, p_norm: f64) -> f64 {
        self.mell_d1(m) - (1.0 - self.alpha) * pow(p_norm, self.beta) * pow(m, -self.alpha)
    }

    #[inline]
    pub fn lagrangian(&self, m: f64, xi_norm: f64) -> f64 {
        self.lag_coef * pow(m, self.alpha / (self.beta - 1.0)) * pow(xi_norm, self.beta_star) + self.ell(m)
    }

    /// Exponent of `m` in the kinetic part of `L̃`: `(α−1)/(β−1) ≤ 0`.
    #[inline]
    pub fn ltilde_m_exp(&self) -> f64 {
        (self.alpha - 1.0) / (self.beta - 1.0)
    }

    #[inline]
    pub fn ltilde(&self, m: f64, z_norm: f64) -> ExtReal {
        if m > 0.0 {
            ExtReal::Finite(
                self.lag_coef * pow(z_norm, self.beta_star) * pow(m, self.ltilde_m_exp()) + m * self.ell(m),
            )
        } else if z_norm == 0.0 {
            ExtReal::ZERO
        } else {
            ExtReal::PosInf
        }
    }
}

/// A running cost `ℓ(x, m)` the auditor can interrogate. Implemented by
/// [`CongestionModel`]; tabulated or user-defined costs implement it too.
pub trait CostFunction {
    fn ell(&self, x: &[f64], m: f64) -> f64;
    fn ell_m(&self, x: &[f64], m: f64) -> f64;
    /// Growth exponent `q` in the two-sided bounds.
    fn growth(&self) -> f64;
}

impl CostFunction for CongestionModel {
    fn ell(&self, x: &[f64], m: f64) -> f64 {
        self.site(x).ell(m)
    }
    fn ell_m(&self, x: &[f64], m: f64) -> f64 {
        self.site(x).ell_m(m)
    }
    fn growth(&self) -> f64 {
        self.q
    }
}

/// Sampling plan for [`audit_assumptions`].
#[derive(Debug, Clone)]
pub struct AuditSampling {
    pub d: usize,
    /// Points per axis of the x-sample grid.
    pub n_x: usize,
    /// Log-spaced density samples in `[m_min, m_max]` (plus `m = 0`).
    pub n_m: usize,
    pub m_min: f64,
    pub m_max: f64,
    /// Fitted constants above this are reported as growth violations.
    pub constant_cap: f64,
}

impl Default for AuditSampling {
    fn default() -> Self {
        AuditSampling { d: 1, n_x: 64, n_m: 97, m_min: 1e-6, m_max: 1e6, constant_cap: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub assumption: &'static str,
    /// Sample location: the x coordinates followed by m, when applicable.
    pub point: Vec<f64>,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FittedConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub constants: FittedConstants,
}

impl AuditReport {
    /// Key-value rendering for run summaries.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("passed = {}\n", self.passed));
        s.push_str(&format!("c1 = {:?}\nc2 = {:?}\nc3 = {:?}\n", self.constants.c1, self.constants.c2, self.constants.c3));
        s.push_str(&format!("violations = {}\n", self.violations.len()));
        for (i, v) in self.violations.iter().enumerate() {
            s.push_str(&format!(
                "violation.{i} = {} at {:?}: measured {:?}, bound {:?}\n",
                v.assumption, v.point, v.measured, v.bound
            ));
        }
        s
    }
}

/// Smallest `C > 0` with `m^(q−1)/C − C ≤ v ≤ C·m^(q−1) + C` for all samples
/// `(m^(q−1), v)`.
fn fit_two_sided(samples: impl Iterator<Item = (f64, f64)>) -> f64 {
    samples.fold(f64::MIN_POSITIVE, |acc, (mq, v)| {
        let upper = v / (mq + 1.0);
        let lower = 0.5 * (-v + (v * v + 4.0 * mq).sqrt());
        acc.max(upper).max(lower)
    })
}

fn torus_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = (a - b).abs();
            let d = d.min(1.0 - d);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

fn sample_points(d: usize, n: usize) -> Vec<Vec<f64>> {
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let i = idx % n;
                    idx /= n;
                    i as f64 / n as f64
                })
                .collect()
        })
        .collect()
}

/// Checks the standing assumptions on `model` numerically: parameter ranges,
/// nonnegativity and strict convexity of the cost, `β ≥ q*`, `ν > 0`, and
/// fits the constants of the two-sided growth bounds and the x-Lipschitz
/// bound on the sample set.
pub fn audit_assumptions(model: &CongestionModel, sampling: &AuditSampling) -> AuditReport {
    let mut violations = Vec::new();
    let (alpha, beta) = (model.alpha(), model.beta());
    if !(0.0..1.0).contains(&alpha) {
        violations.push(Violation { assumption: "H1:alpha", point: vec![], measured: alpha, bound: 1.0 });
    }
    if !(beta > 1.0 && beta <= 2.0) {
        violations.push(Violation { assumption: "H1:beta", point: vec![], measured: beta, bound: 2.0 });
    }
    if beta < model.q_star() - 1e-12 {
        violations.push(Violation { assumption: "H3:beta>=q*", point: vec![], measured: beta, bound: model.q_star() });
    }
    if !(model.nu() > 0.0) {
        violations.push(Violation { assumption: "H5:nu>0", point: vec![], measured: model.nu(), bound: 0.0 });
    }
    let constants = audit_cost(model, sampling, &mut violations);
    AuditReport { passed: violations.is_empty(), violations, constants }
}

/// Cost-only part of the audit, usable for any [`CostFunction`].
pub fn audit_cost<C: CostFunction + ?Sized>(
    cost: &C,
    sampling: &AuditSampling,
    violations: &mut Vec<Violation>,
) -> FittedConstants {
    let q = cost.growth();
    let xs = sample_points(sampling.d, sampling.n_x.max(2));
    let mut ms = vec![0.0];
    let n_m = sampling.n_m.max(2);
    let (lo, hi) = (sampling.m_min.ln(), sampling.m_max.ln());
    ms.extend((0..n_m).map(|i| (lo + (hi - lo) * i as f64 / (n_m - 1) as f64).exp()));

    let mut c1 = f64::MIN_POSITIVE;
    let mut c2 = f64::MIN_POSITIVE;
    for x in &xs {
        for &m in &ms {
            let ell = cost.ell(x, m);
            let at = || {
                let mut p = x.clone();
                p.push(m);
                p
            };
            if !(ell >= 0.0) {
                violations.push(Violation { assumption: "H2:ell>=0", point: at(), measured: ell, bound: 0.0 });
            }
            let mq = m.powf(q - 1.0);
            c1 = c1.max(fit_two_sided(std::iter::once((mq, ell))));
            if m > 0.0 {
                let g = m * cost.ell_m(x, m);
                c2 = c2.max(fit_two_sided(std::iter::once((mq, g))));
            }
        }
        // strict convexity of m ↦ m ℓ(x, m) on consecutive sample triples
        let f = |m: f64| m * cost.ell(x, m);
        for w in ms[1..].windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            let slope_left = (f(b) - f(a)) / (b - a);
            let slope_right = (f(c) - f(b)) / (c - b);
            let scale = slope_left.abs().max(slope_right.abs()).max(1e-300);
            if !(slope_right - slope_left > 1e-12 * scale) {
                let mut p = x.clone();
                p.push(b);
                violations.push(Violation {
                    assumption: "H2:strict-convexity",
                    point: p,
                    measured: slope_right - slope_left,
                    bound: 0.0,
                });
            }
        }
    }

    // x-Lipschitz quotient over axis-neighbour pairs of the sample grid
    let n = sampling.n_x.max(2);
    let mut c3 = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        for axis in 0..sampling.d {
            let stride = n.pow(axis as u32);
            let coord = (i / stride) % n;
            let j = if coord + 1 < n { i + stride } else { i - (n - 1) * stride };
            let y = &xs[j];
            let dist = torus_dist(x, y);
            for &m in &ms {
                let quotient = (cost.ell(x, m) - cost.ell(y, m)).abs() / ((1.0 + m.powf(q - 1.0)) * dist);
                c3 = c3.max(quotient);
            }
        }
    }

    for (name, value) in [("H2:eq8-C1", c1), ("H2:eq9-C2", c2), ("H2:eq11-C3", c3)] {
        if !value.is_finite() || value > sampling.constant_cap {
            violations.push(Violation { assumption: name, point: vec![], measured: value, bound: sampling.constant_cap });
        }
    }
    FittedConstants { c1, c2, c3 }
}
