use mfc_core::pointwise::{eval_k, prox_ltilde, solve_psi, PsiBranch};
use mfc_core::{CongestionModel, SpatialFn};
use proptest::prelude::*;

const TOL: f64 = 1e-12;

/// (α, β, q) with q* ≤ β.
const CONFIGS: [(f64, f64, f64); 6] = [(0.0, 2.0, 2.0), (0.0, 1.5, 3.0), (0.0, 2.0, 3.0), (0.5, 2.0, 2.0), (0.5, 1.5, 3.0), (0.5, 2.0, 3.0)];

fn model(cfg: usize, kappa: f64) -> CongestionModel {
    let (a, b, q) = CONFIGS[cfg];
    CongestionModel::new(a, b, q, kappa, SpatialFn::Cos2Pi { a: 0.5, b: -0.5, k: 1 }, 0.1).unwrap()
}

fn objective(model: &CongestionModel, x: f64, gamma: f64, p: &[f64], mu: f64) -> f64 {
    mu * (gamma + model.hamiltonian(&[x], mu, p).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn psi_minimizes_on_a_grid(cfg in 0usize..6, kappa in 0.3f64..3.0, x in 0.0f64..1.0, gamma in -4.0f64..2.0, p in -3.0f64..3.0) {
        let model = model(cfg, kappa);
        let k = eval_k(&model, &[x], gamma, &[p]).unwrap();
        let psi = solve_psi(&model, &[x], gamma, &[p], TOL).unwrap();
        let top = 4.0 * psi.mu.max(1.0);
        // μ = 0 contributes 0
        let mut best = 0.0f64;
        let uniform = (1..=4000).map(|i| top * i as f64 / 4000.0);
        let geometric = (0..400).map(|i| top * 10f64.powf(-14.0 * i as f64 / 400.0));
        for mu in uniform.chain(geometric) {
            let v = objective(&model, x, gamma, &[p], mu);
            prop_assert!(v >= k - 1e-10 * (1.0 + k.abs()), "μ={mu}: {v} < K={k}");
            best = best.min(v);
        }
        prop_assert!(best - k <= 1e-4 * (1.0 + k.abs()), "{best} vs {k}");
        let at_psi = if psi.mu > 0.0 { objective(&model, x, gamma, &[p], psi.mu) } else { 0.0 };
        prop_assert!((at_psi - k).abs() <= 1e-12 * (1.0 + k.abs()));
    }

    #[test]
    fn k_is_nonpositive(cfg in 0usize..6, kappa in 0.3f64..3.0, x in 0.0f64..1.0, gamma in -10.0f64..10.0, p in -10.0f64..10.0) {
        prop_assert!(eval_k(&model(cfg, kappa), &[x], gamma, &[p]).unwrap() <= 0.0);
    }

    #[test]
    fn k_is_midpoint_concave(
        cfg in 0usize..6, kappa in 0.3f64..3.0, x in 0.0f64..1.0,
        g1 in -4.0f64..2.0, g2 in -4.0f64..2.0,
        p1 in -3.0f64..3.0, p2 in -3.0f64..3.0, q1 in -3.0f64..3.0, q2 in -3.0f64..3.0,
    ) {
        let model = model(cfg, kappa);
        let k = |g: f64, p: [f64; 2]| eval_k(&model, &[x, x], g, &p).unwrap();
        let mid = k(0.5 * (g1 + g2), [0.5 * (p1 + p2), 0.5 * (q1 + q2)]);
        let avg = 0.5 * (k(g1, [p1, q1]) + k(g2, [p2, q2]));
        prop_assert!(mid - avg >= -1e-10 * (1.0 + avg.abs()), "{mid} < {avg}");
    }

    #[test]
    fn psi_vanishes_only_without_momentum(cfg in 3usize..6, kappa in 0.3f64..3.0, x in 0.0f64..1.0, gamma in -4.0f64..4.0, p in prop_oneof![Just(0.0), -2.0f64..2.0]) {
        let model = model(cfg, kappa);
        let psi = solve_psi(&model, &[x], gamma, &[p], TOL).unwrap();
        if psi.mu == 0.0 {
            prop_assert_eq!(p, 0.0);
            prop_assert!(gamma + model.running_cost(&[x], 0.0).unwrap() >= 0.0);
            prop_assert_eq!(psi.branch, PsiBranch::BoundaryZero);
        }
    }

    #[test]
    fn prox_is_firmly_nonexpansive(
        cfg in 0usize..6, kappa in 0.3f64..3.0, x in 0.0f64..1.0, sigma in 0.01f64..5.0,
        ma in -2.0f64..4.0, mb in -2.0f64..4.0,
        za in -4.0f64..4.0, zb in -4.0f64..4.0, wa in -4.0f64..4.0, wb in -4.0f64..4.0,
    ) {
        let model = model(cfg, kappa);
        let (pa, va) = prox_ltilde(&model, &[x, x], ma, &[za, wa], sigma).unwrap();
        let (pb, vb) = prox_ltilde(&model, &[x, x], mb, &[zb, wb], sigma).unwrap();
        let d_out = [pa - pb, va[0] - vb[0], va[1] - vb[1]];
        let d_in = [ma - mb, za - zb, wa - wb];
        let sq: f64 = d_out.iter().map(|v| v * v).sum();
        let inner: f64 = d_out.iter().zip(&d_in).map(|(a, b)| a * b).sum();
        let din: f64 = d_in.iter().map(|v| v * v).sum();
        prop_assert!(sq <= inner + 1e-9 * (1.0 + din), "{sq} > {inner}");
        prop_assert!(sq.sqrt() <= din.sqrt() + 1e-9);
    }
}

#[test]
fn psi_is_continuous_as_momentum_vanishes() {
    for cfg in 0..CONFIGS.len() {
        let (alpha, beta, q) = CONFIGS[cfg];
        let kappa = 1.0;
        let model = model(cfg, kappa);
        let x = 0.3;
        let c0 = model.running_cost(&[x], 0.0).unwrap();
        for (regime, gamma) in [(-1, -c0 - 1.0), (1, -c0 + 1.0), (0, -c0)] {
            let limit = solve_psi(&model, &[x], gamma, &[0.0], TOL).unwrap().mu;
            let mut prev = f64::INFINITY;
            for k in 1..=6 {
                let p = 10f64.powi(-k);
                let mu = solve_psi(&model, &[x], gamma, &[p], TOL).unwrap().mu;
                let err = (mu - limit).abs();
                assert!(err <= prev + 1e-15, "{:?} γ={gamma}: not shrinking at |p|={p}", CONFIGS[cfg]);
                prev = err;
                if regime == 0 && k <= 3 {
                    // γ + ℓ(x,0) = 0: qκμ^(q−1+α) = (1−α)|p|^β, up to the residual tolerance
                    let exact = ((1.0 - alpha) * p.powf(beta) / (q * kappa)).powf(1.0 / (q - 1.0 + alpha));
                    assert!((mu - exact).abs() <= 1e-3 * exact + TOL, "{:?}: {mu} vs {exact}", CONFIGS[cfg]);
                }
            }
            if regime != 0 {
                assert!(prev <= 1e-4, "{:?} γ={gamma}: |ψ(p) − ψ(0)| = {prev} at |p| = 1e-6", CONFIGS[cfg]);
            }
        }
    }
}
