use mfc_core::grid::{apply_lambda, apply_lambda_adjoint, pair_cells, pair_nodes, Workspace};
use mfc_core::TorusGrid;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lambda(grid: &TorusGrid, nu: f64, phi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cells = grid.n_space() * grid.nt();
    let (mut a, mut b) = (vec![0.0; cells], vec![0.0; cells * grid.d()]);
    apply_lambda(grid, nu, phi, &mut a, &mut b, &mut Workspace::new(grid));
    (a, b)
}

fn adjoint(grid: &TorusGrid, nu: f64, m: &[f64], z: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; grid.n_space() * (grid.nt() + 1)];
    apply_lambda_adjoint(grid, nu, m, z, &mut g, &mut Workspace::new(grid));
    g
}

fn grids() -> impl Strategy<Value = TorusGrid> {
    (1usize..=2, 4usize..12, 2usize..8, 0.2f64..3.0).prop_map(|(d, nx, nt, t)| TorusGrid::new(d, nx, nt, t).unwrap())
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_pairing_matches(grid in grids(), nu in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nt, d) = (grid.n_space(), grid.nt(), grid.d());
        let phi = random(&mut rng, n * (nt + 1));
        let m = random(&mut rng, n * nt);
        let z = random(&mut rng, n * nt * d);
        let (a, b) = lambda(&grid, nu, &phi);
        let lhs = pair_cells(&grid, &a, &m) + pair_cells(&grid, &b, &z);
        let rhs = pair_nodes(&grid, &phi, &adjoint(&grid, nu, &m, &z));
        prop_assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(rhs.abs()).max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn operators_are_linear(grid in grids(), nu in 0.0f64..1.0, s in -3.0f64..3.0, t in -3.0f64..3.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nt, d) = (grid.n_space(), grid.nt(), grid.d());
        let (p1, p2) = (random(&mut rng, n * (nt + 1)), random(&mut rng, n * (nt + 1)));
        let combo: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| s * x + t * y).collect();
        let ((a1, b1), (a2, b2), (a, b)) = (lambda(&grid, nu, &p1), lambda(&grid, nu, &p2), lambda(&grid, nu, &combo));
        let scale = 1.0 + (grid.nx() * grid.nx()) as f64 + 1.0 / grid.dt();
        for i in 0..a.len() {
            prop_assert!((a[i] - s * a1[i] - t * a2[i]).abs() <= 1e-13 * scale);
        }
        for i in 0..b.len() {
            prop_assert!((b[i] - s * b1[i] - t * b2[i]).abs() <= 1e-13 * scale);
        }
        let (m1, m2) = (random(&mut rng, n * nt), random(&mut rng, n * nt));
        let (z1, z2) = (random(&mut rng, n * nt * d), random(&mut rng, n * nt * d));
        let mc: Vec<f64> = m1.iter().zip(&m2).map(|(x, y)| s * x + t * y).collect();
        let zc: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| s * x + t * y).collect();
        let (g1, g2, g) = (adjoint(&grid, nu, &m1, &z1), adjoint(&grid, nu, &m2, &z2), adjoint(&grid, nu, &mc, &zc));
        for i in 0..g.len() {
            prop_assert!((g[i] - s * g1[i] - t * g2[i]).abs() <= 1e-13 * scale);
        }
    }

    #[test]
    fn adjoint_commutes_with_shifts(grid in grids(), nu in 0.0f64..1.0, axis in 0usize..2, seed in any::<u64>()) {
        let axis = axis % grid.d();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nt, d) = (grid.n_space(), grid.nt(), grid.d());
        let shift = |v: &[f64], comps: usize| -> Vec<f64> {
            let mut out = vec![0.0; v.len()];
            for (k, chunk) in v.chunks(n * comps).enumerate() {
                for s in 0..n {
                    let t = grid.neighbor(s, axis, true);
                    out[k * n * comps + t * comps..][..comps].copy_from_slice(&chunk[s * comps..][..comps]);
                }
            }
            out
        };
        let m = random(&mut rng, n * nt);
        let z = random(&mut rng, n * nt * d);
        prop_assert_eq!(shift(&adjoint(&grid, nu, &m, &z), 1), adjoint(&grid, nu, &shift(&m, 1), &shift(&z, d)));
    }
}

/// `Λ` written out entry by entry from its stencils (d = 1).
fn assembled_lambda(nx: usize, nt: usize, t: f64, nu: f64) -> DMatrix<f64> {
    let (h, dt) = (1.0 / nx as f64, t / nt as f64);
    let node = |j: usize, s: usize| j * nx + s;
    let mut mat = DMatrix::zeros(2 * nx * nt, nx * (nt + 1));
    for k in 0..nt {
        for s in 0..nx {
            let (l, r) = ((s + nx - 1) % nx, (s + 1) % nx);
            let row_a = k * nx + s;
            let row_b = nx * nt + k * nx + s;
            for j in [k, k + 1] {
                let sign = if j == k { -1.0 } else { 1.0 };
                mat[(row_a, node(j, s))] += sign / dt - nu / (h * h);
                mat[(row_a, node(j, l))] += 0.5 * nu / (h * h);
                mat[(row_a, node(j, r))] += 0.5 * nu / (h * h);
                mat[(row_b, node(j, r))] += 0.25 / h;
                mat[(row_b, node(j, l))] -= 0.25 / h;
            }
        }
    }
    mat
}

#[test]
fn delta_density_matches_matrix_transpose() {
    let (nx, nt, t, nu) = (8, 4, 1.0, 0.3);
    let grid = TorusGrid::new(1, nx, nt, t).unwrap();
    let mat = assembled_lambda(nx, nt, t, nu);
    let cells = nx * nt;
    for row in 0..2 * cells {
        let mut y = vec![0.0; 2 * cells];
        y[row] = 1.0;
        let g = adjoint(&grid, nu, &y[..cells], &y[cells..]);
        // ⟨Λφ, y⟩ with weight h·dt against ⟨φ, g⟩ with weight h gives g = dt·Λᵀy
        let col = mat.row(row).transpose() * grid.dt();
        for i in 0..g.len() {
            assert!((g[i] - col[i]).abs() < 1e-12, "row {row} node {i}: {} vs {}", g[i], col[i]);
        }
    }
    // and the forward operator agrees with the same matrix
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phi = random(&mut rng, nx * (nt + 1));
    let (a, b) = lambda(&grid, nu, &phi);
    let prod = &mat * nalgebra::DVector::from_vec(phi);
    for i in 0..cells {
        assert!((prod[i] - a[i]).abs() < 1e-11);
        assert!((prod[cells + i] - b[i]).abs() < 1e-11);
    }
}
