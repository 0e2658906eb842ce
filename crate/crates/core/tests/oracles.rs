//! Library results against independent reference computations written out
//! here from first principles (brute-force sums, dense algebra, quadrature).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sav_spde::check::random_instance;
use sav_spde::fem::{
    assemble_lumped_mass, assemble_stiffness, discrete_laplacian, nodal_interpolate, FemOperators,
    FieldVector,
};
use sav_spde::linalg::{cg_solve, SolverOptions};
use sav_spde::mc::compute_eoc;
use sav_spde::mesh::{prolong, TorusMesh};
use sav_spde::noise::{default_modes, eigenfunction, eigenfunction_1d, NoiseBasis, NoiseModel, NoisePath};
use sav_spde::potential::{energy_eh, PotentialParams, RhoKind};
use sav_spde::sav::{
    compute_coefficients, dense_oracle_step, ellipse_signed_distance, run_path, sav_step,
    InitialCondition, PathConfig, SavState,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_field(mesh: &TorusMesh, r: &mut ChaCha8Rng, lo: f64, hi: f64) -> FieldVector {
    let v = (0..mesh.node_count()).map(|_| r.random_range(lo..hi)).collect();
    FieldVector::new(mesh, v)
}

/// Value of the coarse P1 function at `p` found by scanning every cell for
/// non-negative barycentric coordinates (periodic shifts included).
fn barycentric_eval(field: &FieldVector, mesh: &TorusMesh, p: [f64; 2]) -> f64 {
    for c in 0..mesh.cell_count() {
        let v = mesh.cell_coords(c);
        let nodes = mesh.cell_nodes(c);
        for sx in [0.0, 1.0] {
            for sy in [0.0, 1.0] {
                let q = [p[0] + sx, p[1] + sy];
                if mesh.dim() == 1 {
                    if sy > 0.0 {
                        continue;
                    }
                    let t = (q[0] - v[0][0]) / (v[1][0] - v[0][0]);
                    if (-1e-12..=1.0 + 1e-12).contains(&t) {
                        return (1.0 - t) * field.values()[nodes[0]] + t * field.values()[nodes[1]];
                    }
                } else {
                    let (x1, y1) = (v[1][0] - v[0][0], v[1][1] - v[0][1]);
                    let (x2, y2) = (v[2][0] - v[0][0], v[2][1] - v[0][1]);
                    let det = x1 * y2 - x2 * y1;
                    let (dx, dy) = (q[0] - v[0][0], q[1] - v[0][1]);
                    let l1 = (dx * y2 - x2 * dy) / det;
                    let l2 = (x1 * dy - dx * y1) / det;
                    let l0 = 1.0 - l1 - l2;
                    if l0 >= -1e-12 && l1 >= -1e-12 && l2 >= -1e-12 {
                        let f = field.values();
                        return l0 * f[nodes[0]] + l1 * f[nodes[1]] + l2 * f[nodes[2]];
                    }
                }
            }
        }
    }
    panic!("point {p:?} not located");
}

#[test]
fn prolongation_matches_barycentric_evaluation() {
    let mut r = rng(1);
    for dim in [1, 2] {
        let coarse = TorusMesh::new(dim, 2).unwrap();
        let fine = TorusMesh::new(dim, 4).unwrap();
        let f = random_field(&coarse, &mut r, -1.0, 1.0);
        let pf = prolong(&f, &coarse, &fine).unwrap();
        for i in 0..fine.node_count() {
            let want = barycentric_eval(&f, &coarse, fine.node_coords(i));
            assert!((pf.values()[i] - want).abs() < 1e-13, "dim {dim} node {i}");
        }
    }
}

/// Consistent P1 mass matrix from the closed form `|K|/((d+1)(d+2)) (1 + δ_ij)`.
fn consistent_mass(mesh: &TorusMesh) -> DMatrix<f64> {
    let n = mesh.node_count();
    let k = mesh.vertices_per_cell();
    let mut m = DMatrix::zeros(n, n);
    for c in 0..mesh.cell_count() {
        let w = mesh.cell_volume(c) / (k * (k + 1)) as f64;
        for &a in mesh.cell_nodes(c) {
            for &b in mesh.cell_nodes(c) {
                m[(a, b)] += if a == b { 2.0 * w } else { w };
            }
        }
    }
    m
}

#[test]
fn lumped_and_consistent_norms_are_equivalent() {
    let mut r = rng(2);
    for dim in [1, 2] {
        let mesh = TorusMesh::new(dim, 3).unwrap();
        let lumped = assemble_lumped_mass(&mesh);
        let cm = consistent_mass(&mesh);
        for _ in 0..20 {
            let u = random_field(&mesh, &mut r, -1.0, 1.0);
            let uv = DVector::from_column_slice(u.values());
            let consistent = (uv.transpose() * &cm * &uv)[(0, 0)];
            let lump: f64 = u.values().iter().zip(lumped.diag()).map(|(x, m)| m * x * x).sum();
            let ratio = lump / consistent;
            assert!((0.25..=4.0).contains(&ratio), "ratio {ratio}");
            assert!(ratio >= 1.0 - 1e-12);
        }
    }
}

/// `∫∇u·∇v` summed cell by cell with gradients from the vertex coordinates.
fn gradient_pairing(mesh: &TorusMesh, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for c in 0..mesh.cell_count() {
        let p = mesh.cell_coords(c);
        let n = mesh.cell_nodes(c);
        let grad = |f: &[f64]| -> [f64; 2] {
            if mesh.dim() == 1 {
                [(f[n[1]] - f[n[0]]) / (p[1][0] - p[0][0]), 0.0]
            } else {
                // solve J^T g = (f1 - f0, f2 - f0)
                let (a, b) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
                let (c2, d) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
                let (r1, r2) = (f[n[1]] - f[n[0]], f[n[2]] - f[n[0]]);
                let det = a * d - b * c2;
                [(r1 * d - b * r2) / det, (a * r2 - c2 * r1) / det]
            }
        };
        let (gu, gv) = (grad(u), grad(v));
        acc += mesh.cell_volume(c) * (gu[0] * gv[0] + gu[1] * gv[1]);
    }
    acc
}

#[test]
fn stiffness_is_the_gradient_pairing_and_laplacian_integrates_by_parts() {
    let mut r = rng(3);
    for dim in [1, 2] {
        let mesh = TorusMesh::new(dim, 3).unwrap();
        let mass = assemble_lumped_mass(&mesh);
        let stiff = assemble_stiffness(&mesh);
        for _ in 0..10 {
            let u = random_field(&mesh, &mut r, -1.0, 1.0);
            let v = random_field(&mesh, &mut r, -1.0, 1.0);
            let ku: f64 = stiff.apply(u.values()).iter().zip(v.values()).map(|(a, b)| a * b).sum();
            let direct = gradient_pairing(&mesh, u.values(), v.values());
            assert!((ku - direct).abs() < 1e-12 * (1.0 + direct.abs()));
            // (−Δ_h u, v)_h = (∇u, ∇v)
            let lap = discrete_laplacian(&u, &mass, &stiff).unwrap();
            let lhs: f64 = lap
                .values()
                .iter()
                .zip(v.values())
                .zip(mass.diag())
                .map(|((l, b), m)| -l * b * m)
                .sum();
            assert!((lhs - direct).abs() < 1e-12 * (1.0 + direct.abs()));
        }
    }
}

#[test]
fn eigenfunctions_are_orthonormal_under_trapezoid_quadrature() {
    let n = 1 << 12;
    for k in -3..=3 {
        for l in -3..=3 {
            let s: f64 = (0..n)
                .map(|i| {
                    let x = i as f64 / n as f64;
                    eigenfunction_1d(k, x) * eigenfunction_1d(l, x)
                })
                .sum::<f64>()
                / n as f64;
            let want = if k == l { 1.0 } else { 0.0 };
            assert!((s - want).abs() < 1e-6, "({k},{l}) -> {s}");
        }
    }
}

#[test]
fn noise_field_is_the_double_sum() {
    let mesh = TorusMesh::new(2, 3).unwrap();
    let model = NoiseModel::default_for(2, 99);
    let path = model.generate_increments(4, 12, 1e-3);
    let field = model.noise_field(&path, 3..9, &mesh).unwrap();
    let modes = default_modes(2);
    for i in 0..mesh.node_count() {
        let x = mesh.node_coords(i);
        let mut want = 0.0;
        for (rank, m) in modes.iter().enumerate() {
            let total: f64 = (3..9).map(|s| path.increment(rank, s)).sum();
            want += m.amplitude * eigenfunction(m.index, x) * total;
        }
        assert!((field.values()[i] - want).abs() < 1e-13);
    }
}

#[test]
fn coarsening_groups_consecutive_increments() {
    let model = NoiseModel::default_for(1, 5);
    let path = model.generate_increments(2, 48, 1e-4);
    for factor in [1, 2, 3, 4, 6, 16, 48] {
        let c = path.coarsen(factor).unwrap();
        assert_eq!(c.n_steps(), 48 / factor);
        assert!((c.tau() - 1e-4 * factor as f64).abs() < 1e-18);
        for mode in 0..7 {
            for s in 0..c.n_steps() {
                let mut want = 0.0;
                for j in 0..factor {
                    want += path.increment(mode, s * factor + j);
                }
                assert_eq!(c.increment(mode, s), want);
            }
        }
    }
    assert!(path.coarsen(5).is_err());
}

#[test]
fn increments_are_reproducible_and_sample_dependent() {
    let model = NoiseModel::default_for(2, 42);
    let a = model.generate_increments(7, 10, 1e-3);
    assert_eq!(a, model.generate_increments(7, 10, 1e-3));
    assert_ne!(a, model.generate_increments(8, 10, 1e-3));
    assert_ne!(a, model.clone().with_seed(43).generate_increments(7, 10, 1e-3));
    // a shorter path is a prefix of a longer one
    let long = model.generate_increments(7, 20, 1e-3);
    for s in 0..10 {
        assert_eq!(a.step(s), long.step(s));
    }
}

#[test]
fn coefficients_match_the_formulas() {
    let mut r = rng(6);
    for dim in [1, 2] {
        let ops = FemOperators::new(TorusMesh::new(dim, 3).unwrap());
        let p = PotentialParams::new(1e-5, 0.3).with_rho(RhoKind::Smooth);
        let phi = random_field(&ops.mesh, &mut r, -1.2, 1.2);
        let n_vec = random_field(&ops.mesh, &mut r, -0.1, 0.1);
        let c = compute_coefficients(&phi, &n_vec, &ops.mass, &p).unwrap();
        let m = ops.mass.diag();
        let eps = p.epsilon;
        let fp = |s: f64| (s * s * s - s) / eps;
        let fpp = |s: f64| (3.0 * s * s - 1.0) / eps;
        let f = |s: f64| (0.25 * (s * s - 1.0).powi(2) + 1e-5) / eps;
        let u = phi.values();
        let w = n_vec.values();
        let e: f64 = (0..u.len()).map(|j| m[j] * f(u[j])).sum();
        let a: f64 = (0..u.len()).map(|j| m[j] * fp(u[j]) * w[j]).sum();
        assert!((c.energy - e).abs() < 1e-13 * e);
        assert!((c.a - a).abs() < 1e-13 * (1.0 + a.abs()));
        for j in 0..u.len() {
            let xi = -a / (4.0 * e.powf(1.5)) * fp(u[j]) + fpp(u[j]) * w[j] / (2.0 * e.sqrt());
            let cj = m[j] * (fp(u[j]) / e.sqrt() + xi);
            assert!((c.xi[j] - xi).abs() < 1e-12 * (1.0 + xi.abs()));
            assert!((c.c[j] - cj).abs() < 1e-12 * (1.0 + cj.abs()));
        }
    }
}

#[test]
fn cg_matches_dense_lu_for_the_step_matrix() {
    let mut r = rng(7);
    let mesh = TorusMesh::new(1, 4).unwrap();
    let mass = assemble_lumped_mass(&mesh);
    let stiff = assemble_stiffness(&mesh);
    let (tau, eps) = (1e-2, 0.05);
    let a = mass.as_matrix().linear_combination(1.0, stiff.matrix(), tau * eps);
    let dense = DMatrix::from_fn(16, 16, |i, j| mass.diag()[i] * f64::from(i == j) + tau * eps * stiff.matrix().get(i, j));
    let b: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
    let want = dense.lu().solve(&DVector::from_column_slice(&b)).unwrap();
    let mut x = vec![0.0; 16];
    cg_solve(&a, &b, &mut x, &SolverOptions::default()).unwrap();
    for i in 0..16 {
        assert!((x[i] - want[i]).abs() < 1e-9 * (1.0 + want[i].abs()));
    }
}

#[test]
fn cg_step_matches_dense_step_at_default_tolerance() {
    let mut r = rng(8);
    let ops = FemOperators::new(TorusMesh::new(1, 4).unwrap());
    let p = PotentialParams::new(1e-5, 0.1);
    for _ in 0..10 {
        let (state, coeffs) = random_instance(&ops, &p, &mut r);
        let cg = sav_step(&state, &coeffs, &ops.mass, &ops.stiff, 1e-3, &p, &SolverOptions::default()).unwrap();
        let dense = dense_oracle_step(&state, &coeffs, &ops.mass, &ops.stiff, 1e-3, &p).unwrap();
        for (x, y) in cg.phi.values().iter().zip(dense.phi.values()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((cg.r - dense.r).abs() < 1e-9 * dense.r.abs());
    }
}

#[test]
fn step_satisfies_both_scheme_equations() {
    // Residuals of the φ and r equations evaluated directly with the stencil.
    let mut r = rng(9);
    let ops = FemOperators::new(TorusMesh::new(2, 3).unwrap());
    let p = PotentialParams::new(1e-5, 0.2);
    let tau = 5e-3;
    let (state, coeffs) = random_instance(&ops, &p, &mut r);
    let opts = SolverOptions {
        rel_tolerance: 1e-14,
        ..SolverOptions::default()
    };
    let next = sav_step(&state, &coeffs, &ops.mass, &ops.stiff, tau, &p, &opts).unwrap();
    let m = ops.mass.diag();
    let k_phi = ops.stiff.apply(next.phi.values());
    for j in 0..m.len() {
        let res = m[j] * (next.phi.values()[j] - state.phi.values()[j] - coeffs.n_vec.values()[j])
            + tau * (p.epsilon * k_phi[j] + next.r * coeffs.c[j]);
        assert!(res.abs() < 1e-12, "node {j}: {res}");
    }
    let d = coeffs.r_update_vector();
    let dr: f64 = (0..m.len())
        .map(|j| d[j] * (next.phi.values()[j] - state.phi.values()[j]))
        .sum();
    assert!((next.r - state.r - dr).abs() < 1e-12);
}

#[test]
fn one_step_tracking_error_is_the_taylor_remainder() {
    let mut r = rng(10);
    for dim in [1, 2] {
        let ops = FemOperators::new(TorusMesh::new(dim, 3).unwrap());
        let p = PotentialParams::new(1e-5, 0.5);
        let phi0 = random_field(&ops.mesh, &mut r, -1.0, 1.0);
        let noise = random_field(&ops.mesh, &mut r, -0.02, 0.02);
        let state = SavState::initial(phi0.clone(), &ops.mass, &p);
        let coeffs = compute_coefficients(&phi0, &noise, &ops.mass, &p).unwrap();
        let opts = SolverOptions {
            rel_tolerance: 1e-14,
            ..SolverOptions::default()
        };
        let next = sav_step(&state, &coeffs, &ops.mass, &ops.stiff, 1e-3, &p, &opts).unwrap();

        let m = ops.mass.diag();
        let eps = p.epsilon;
        let u0 = phi0.values();
        let dphi: Vec<f64> = next.phi.values().iter().zip(u0).map(|(a, b)| a - b).collect();
        let sqrt_e = |s: f64| -> f64 {
            let v: Vec<f64> = u0.iter().zip(&dphi).map(|(a, d)| a + s * d).collect();
            energy_eh(&FieldVector::new(&ops.mesh, v), &ops.mass, &p).sqrt()
        };
        let e0 = sqrt_e(0.0).powi(2);
        let f1: Vec<f64> = u0.iter().map(|s| (s * s * s - s) / eps).collect();
        let f2: Vec<f64> = u0.iter().map(|s| (3.0 * s * s - 1.0) / eps).collect();
        let sum = |g: &dyn Fn(usize) -> f64| (0..m.len()).map(|j| m[j] * g(j)).sum::<f64>();
        let b = sum(&|j| f1[j] * dphi[j]);
        let a = sum(&|j| f1[j] * noise.values()[j]);
        let q = sum(&|j| f2[j] * dphi[j] * dphi[j]);
        // g(s) = √E(φ⁰ + sΔφ): g'(0) and g''(0) in closed form
        let g1 = b / (2.0 * e0.sqrt());
        let g2 = q / (2.0 * e0.sqrt()) - b * b / (4.0 * e0.powf(1.5));
        let rem3 = sqrt_e(1.0) - sqrt_e(0.0) - g1 - 0.5 * g2;
        let cross = sum(&|j| f2[j] * dphi[j] * (noise.values()[j] - dphi[j]));
        let predicted = -rem3 + b * (b - a) / (8.0 * e0.powf(1.5)) + cross / (4.0 * e0.sqrt());

        let actual = next.r - sqrt_e(1.0);
        assert!(
            (actual - predicted).abs() < 1e-11 * (1.0 + actual.abs()),
            "dim {dim}: {actual:e} vs {predicted:e}"
        );
    }
}

#[test]
fn zero_noise_tracking_error_stays_tiny_near_equilibrium() {
    let ops = FemOperators::new(TorusMesh::new(1, 7).unwrap());
    let p = PotentialParams::new(1e-5, 0.05);
    let ic = InitialCondition::TanhEllipse {
        center: [0.5, 0.5],
        semi_axes: [0.25, 0.25],
    };
    let init = SavState::initial(ic.interpolate(&ops.mesh, p.epsilon), &ops.mass, &p);
    let basis = NoiseBasis::new(&NoiseModel::silent(1), &ops.mesh).unwrap();
    let cfg = PathConfig {
        tau: 1e-3,
        n_steps: 100,
        record_every: 100,
        solver: SolverOptions::default(),
    };
    let traj = run_path(&cfg, &ops, &p, &NoisePath::silent(100, 1e-3), &basis, init).unwrap();
    assert!(traj.max_tracking_error() <= 1e-6, "{:e}", traj.max_tracking_error());
}

#[test]
fn ellipse_distance_matches_boundary_sampling() {
    let axes = [0.3, 0.18];
    let n = 200_000;
    let boundary: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            [axes[0] * t.cos(), axes[1] * t.sin()]
        })
        .collect();
    let mut r = rng(11);
    for _ in 0..200 {
        let p = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
        let brute = boundary
            .iter()
            .map(|b| ((p[0] - b[0]).powi(2) + (p[1] - b[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        let inside = (p[0] / axes[0]).powi(2) + (p[1] / axes[1]).powi(2) < 1.0;
        let want = if inside { brute } else { -brute };
        let got = ellipse_signed_distance(p, axes);
        assert!((got - want).abs() < 1e-5, "{p:?}: {got} vs {want}");
    }
}

#[test]
fn rho_respects_its_lipschitz_constant() {
    for kind in [RhoKind::Indicator, RhoKind::Smooth] {
        let p = PotentialParams::new(1e-5, 0.02).with_rho(kind);
        let lip = p.rho_lipschitz();
        let xs: Vec<f64> = (0..4001).map(|i| -2.0 + i as f64 * 1e-3).collect();
        let worst = xs
            .windows(2)
            .map(|w| (p.rho(w[1]) - p.rho(w[0])).abs() / (w[1] - w[0]))
            .fold(0.0, f64::max);
        assert!(worst <= lip * (1.0 + 1e-9));
        assert!(worst >= 0.99 * lip);
    }
}

#[test]
fn nodal_interpolation_samples_at_nodes() {
    let mesh = TorusMesh::new(2, 3).unwrap();
    let f = nodal_interpolate(|p| p[0] + 10.0 * p[1], &mesh);
    for i in 0..mesh.node_count() {
        let x = mesh.node_coords(i);
        assert_eq!(f.values()[i], x[0] + 10.0 * x[1]);
    }
}

#[test]
fn eoc_is_log2_of_successive_ratios() {
    let e = [0.08, 0.17, 0.28, 0.36];
    let got = compute_eoc(&e);
    for i in 0..3 {
        let want = (e[i + 1] / e[i]).ln() / 2f64.ln();
        assert!((got[i] - want).abs() < 1e-14);
    }
    // the Table-style orders for these four errors
    let rounded: Vec<f64> = got.iter().map(|v| (v * 100.0).round() / 100.0).collect();
    assert_eq!(rounded, vec![1.09, 0.72, 0.36]);
}
