use mfc_core::mckv::{estimate_cost, simulate, simulate_from, CostDensity};
use mfc_core::transport::normalize_mass;
use mfc_core::{CongestionModel, SpatialFn, TorusGrid, VectorField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const NU: f64 = 0.05;
const DRIFT: f64 = 0.5;

fn model() -> CongestionModel {
    CongestionModel::new(0.5, 2.0, 2.0, 1.0, SpatialFn::Zero, NU).unwrap()
}

fn constant_drift(grid: TorusGrid, v: f64) -> VectorField {
    VectorField::from_values(grid, vec![v; grid.n_space() * grid.nt()]).unwrap()
}

/// Draws from the continuum density `1 + 0.5 cos 2πx` by rejection.
fn initial_positions(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x: f64 = rng.random();
        if rng.random::<f64>() * 1.5 <= 1.0 + 0.5 * (2.0 * PI * x).cos() {
            out.push(x);
        }
    }
    out
}

/// Per-slice L¹ error against the exact law, whose bin averages are
/// `1 + 0.5·e^(−4π²νt)·cos 2π(x − vt)·sin(πh)/(πh)`.
fn mean_l1_error(grid: &TorusGrid, count: usize, seed: u64) -> f64 {
    let v = constant_drift(*grid, DRIFT);
    let ens = simulate_from(&model(), &v, &initial_positions(count, seed), seed).unwrap();
    let dens = ens.densities();
    let h = grid.h();
    let sinc = (PI * h).sin() / (PI * h);
    let mut total = 0.0;
    for j in 0..=grid.nt() {
        let t = grid.node_time(j);
        let decay = (-4.0 * PI * PI * NU * t).exp();
        total += (0..grid.n_space())
            .map(|s| {
                let x = grid.node(s)[0];
                let exact = 1.0 + 0.5 * decay * (2.0 * PI * (x - DRIFT * t)).cos() * sinc;
                h * (dens.slice(j)[s] - exact).abs()
            })
            .sum::<f64>();
    }
    total / (grid.nt() + 1) as f64
}

#[test]
fn density_error_decays_like_inverse_root_count() {
    let grid = TorusGrid::new(1, 16, 16, 1.0).unwrap();
    let ladder = [1_000usize, 10_000, 100_000];
    let errs: Vec<f64> = ladder.iter().map(|&n| (0..4).map(|s| mean_l1_error(&grid, n, 100 + s)).sum::<f64>() / 4.0).collect();
    // least-squares slope of log error against log count
    let xs: Vec<f64> = ladder.iter().map(|n| (*n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((-0.7..=-0.3).contains(&slope), "slope {slope}, errors {errs:?}");
}

#[test]
fn standard_error_scales_with_inverse_root_count() {
    let grid = TorusGrid::new(1, 16, 16, 1.0).unwrap();
    let mut m0: Vec<f64> = (0..16).map(|s| 1.0 + 0.5 * (2.0 * PI * s as f64 / 16.0).cos()).collect();
    normalize_mass(&grid, &mut m0).unwrap();
    let u_t: Vec<f64> = (0..16).map(|s| (2.0 * PI * s as f64 / 16.0).sin()).collect();
    let v = constant_drift(grid, DRIFT);
    let se = |n: usize| {
        let ens = simulate(&model(), &v, &m0, n, 7).unwrap();
        estimate_cost(&model(), &ens, &v, &u_t, CostDensity::Empirical).unwrap().std_error
    };
    let (base, twice, four) = (se(10_000), se(20_000), se(40_000));
    let r2 = twice / base;
    let r4 = four / base;
    assert!((r2 / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() <= 0.3, "doubling ratio {r2}");
    assert!((r4 / 0.5 - 1.0).abs() <= 0.3, "quadrupling ratio {r4}");
}

#[test]
fn translating_the_data_translates_the_statistics() {
    let nx = 16;
    let grid = TorusGrid::new(1, nx, 8, 1.0).unwrap();
    let h = grid.h();
    let model = model();
    let profile = |x: f64| 0.4 * (2.0 * PI * x).sin() + 0.1 * (4.0 * PI * x).cos();
    let field = |shift: usize| -> VectorField {
        let mut v = VectorField::zeros(grid);
        for k in 0..grid.nt() {
            for s in 0..nx {
                v.at_mut(k, (s + shift) % nx)[0] = profile(grid.node(s)[0]) * (1.0 + 0.1 * k as f64);
            }
        }
        v
    };
    let u_t0: Vec<f64> = (0..nx).map(|s| (2.0 * PI * grid.node(s)[0]).cos()).collect();
    let u_t1: Vec<f64> = (0..nx).map(|s| u_t0[(s + nx - 1) % nx]).collect();
    // initial points at bin centres plus small offsets keep the shifted copies off the bin edges
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start: Vec<f64> = (0..4000).map(|i| ((i % nx) as f64 + rng.random_range(-0.3..0.3)) * h).collect();
    let shifted: Vec<f64> = start.iter().map(|x| x + h).collect();
    let (v0, v1) = (field(0), field(1));
    let a = simulate_from(&model, &v0, &start, 9).unwrap();
    let b = simulate_from(&model, &v1, &shifted, 9).unwrap();
    let mut moved = 0usize;
    for k in 0..=grid.nt() {
        let (ca, cb) = (a.counts(k), b.counts(k));
        for s in 0..nx {
            moved += ca[s].abs_diff(cb[(s + 1) % nx]);
        }
    }
    assert_eq!(moved, 0, "bin counts differ");
    let ca = estimate_cost(&model, &a, &v0, &u_t0, CostDensity::Empirical).unwrap();
    let cb = estimate_cost(&model, &b, &v1, &u_t1, CostDensity::Empirical).unwrap();
    assert!((ca.mean - cb.mean).abs() <= 1e-12 * ca.mean.abs().max(1.0), "{} vs {}", ca.mean, cb.mean);
    assert!((ca.std_error - cb.std_error).abs() <= 1e-10 * ca.std_error);
}
