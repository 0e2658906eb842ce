//! Small-instance self checks: the CG step against the dense solve plus a
//! handful of structural invariants. Each check is cheap (well under a
//! second in release builds) and reports a single pass/fail row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fem::{assemble_lumped_mass, assemble_stiffness, FemOperators, FieldVector};
use crate::linalg::{norm2, SolverOptions};
use crate::mesh::{prolong, TorusMesh};
use crate::noise::{eigenfunction, NoiseBasis, NoiseModel, NoisePath};
use crate::potential::{energy_total, PotentialParams};
use crate::sav::{
    compute_coefficients, dense_oracle_step, run_path, sav_step, InitialCondition, PathConfig,
    SavState, StepCoefficients,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value next to its bound.
    pub detail: String,
}

/// A random step problem: `φ ∈ [-1.2, 1.2]`, noise entries in `[-0.05, 0.05]`
/// and `r` within 50% of `√E_h(φ)`.
pub fn random_instance(
    ops: &FemOperators,
    params: &PotentialParams,
    rng: &mut impl Rng,
) -> (SavState, StepCoefficients) {
    let n = ops.mesh.node_count();
    let phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.2..1.2)).collect();
    let noise: Vec<f64> = (0..n).map(|_| rng.random_range(-0.05..0.05)).collect();
    let phi = FieldVector::new(&ops.mesh, phi);
    let mut state = SavState::initial(phi, &ops.mass, params);
    state.r *= rng.random_range(0.5..1.5);
    let n_vec = FieldVector::new(&ops.mesh, noise);
    let coeffs = compute_coefficients(&state.phi, &n_vec, &ops.mass, params)
        .expect("random instances are finite");
    (state, coeffs)
}

fn row(name: &'static str, worst: f64, bound: f64) -> CheckRow {
    CheckRow {
        name,
        passed: worst <= bound,
        detail: format!("{worst:.3e} <= {bound:.0e}"),
    }
}

/// Largest relative deviation of the CG step from the dense solve, in φ
/// (2-norm) and in r, over `count` random instances.
pub fn oracle_deviation(dim: usize, level: u32, count: usize, seed: u64) -> crate::Result<f64> {
    let ops = FemOperators::new(TorusMesh::new(dim, level)?);
    let params = PotentialParams::new(1e-5, 0.5);
    let solver = SolverOptions {
        rel_tolerance: 1e-14,
        max_iterations: Some(10 * ops.mesh.node_count()),
        ..SolverOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (state, coeffs) = random_instance(&ops, &params, &mut rng);
        let tau = rng.random_range(1e-4..1e-2);
        let cg = sav_step(&state, &coeffs, &ops.mass, &ops.stiff, tau, &params, &solver)?;
        let dense = dense_oracle_step(&state, &coeffs, &ops.mass, &ops.stiff, tau, &params)?;
        let diff = cg.phi.sub(&dense.phi)?;
        worst = worst.max(norm2(diff.values()) / norm2(dense.phi.values()));
        worst = worst.max((cg.r - dense.r).abs() / dense.r.abs().max(1e-300));
    }
    Ok(worst)
}

/// Largest relative defect of `d = c/2` over `count` random instances.
pub fn reduction_defect(count: usize, seed: u64) -> crate::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let ops = FemOperators::new(TorusMesh::new(1 + i % 2, 3)?);
        let params = PotentialParams::new(1e-5, rng.random_range(0.01..1.0));
        let (_, coeffs) = random_instance(&ops, &params, &mut rng);
        let d = coeffs.r_update_vector();
        let scale = norm2(&coeffs.c);
        for (dj, cj) in d.iter().zip(&coeffs.c) {
            worst = worst.max((dj - 0.5 * cj).abs() / scale);
        }
    }
    Ok(worst)
}

/// Largest increase of `E_SAV` between consecutive steps of a zero-noise run.
pub fn energy_increase(dim: usize, level: u32, tau: f64, steps: usize, epsilon: f64) -> crate::Result<f64> {
    let ops = FemOperators::new(TorusMesh::new(dim, level)?);
    let params = PotentialParams::new(1e-5, epsilon);
    let model = NoiseModel::silent(dim);
    let basis = NoiseBasis::new(&model, &ops.mesh)?;
    let phi0 = InitialCondition::droplet().interpolate(&ops.mesh, epsilon);
    let init = SavState::initial(phi0, &ops.mass, &params);
    let cfg = PathConfig {
        tau,
        n_steps: steps,
        record_every: steps,
        solver: SolverOptions::default(),
    };
    let traj = run_path(&cfg, &ops, &params, &NoisePath::silent(steps, tau), &basis, init)?;
    Ok(traj
        .diagnostics
        .windows(2)
        .map(|w| w[1].e_sav - w[0].e_sav)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Largest nodal drift from `value` over a zero-noise run started at the constant.
pub fn fixed_point_drift(dim: usize, level: u32, value: f64, steps: usize) -> crate::Result<f64> {
    let ops = FemOperators::new(TorusMesh::new(dim, level)?);
    let params = PotentialParams::new(1e-5, 0.02);
    let basis = NoiseBasis::new(&NoiseModel::silent(dim), &ops.mesh)?;
    let init = SavState::initial(FieldVector::constant(&ops.mesh, value), &ops.mass, &params);
    let r0 = init.r;
    let cfg = PathConfig {
        tau: 1e-3,
        n_steps: steps,
        record_every: 1,
        solver: SolverOptions::default(),
    };
    let traj = run_path(&cfg, &ops, &params, &NoisePath::silent(steps, 1e-3), &basis, init)?;
    let mut worst: f64 = 0.0;
    for s in &traj.snapshots {
        worst = worst.max(s.phi.values().iter().fold(0.0, |m, v| m.max((v - value).abs())));
        worst = worst.max((s.r - r0).abs());
    }
    Ok(worst)
}

fn telescoping_defect() -> crate::Result<f64> {
    let model = NoiseModel::default_for(1, 7);
    let path = model.generate_increments(3, 64, 1e-3);
    let coarse = path.coarsen(8)?;
    let a = path.totals();
    let b = coarse.totals();
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

fn stiffness_defects() -> crate::Result<f64> {
    let mut worst: f64 = 0.0;
    for dim in [1, 2] {
        let mesh = TorusMesh::new(dim, 3)?;
        let k = assemble_stiffness(&mesh);
        worst = worst.max(k.matrix().symmetry_defect());
        let ones = vec![1.0; mesh.node_count()];
        worst = worst.max(k.apply(&ones).iter().fold(0.0, |m, v| m.max(v.abs())));
        let total: f64 = assemble_lumped_mass(&mesh).diag().iter().sum();
        worst = worst.max((total - 1.0).abs());
    }
    Ok(worst)
}

fn prolongation_defect() -> crate::Result<f64> {
    let mut worst: f64 = 0.0;
    for dim in [1, 2] {
        let coarse = TorusMesh::new(dim, 2)?;
        let fine = TorusMesh::new(dim, 4)?;
        let f = |p: [f64; 2]| eigenfunction(crate::noise::ModeIndex::D1(1), p);
        let c = crate::fem::nodal_interpolate(f, &coarse);
        let pf = prolong(&c, &coarse, &fine)?;
        for node in 0..coarse.node_count() {
            let (i, j) = coarse.grid_index(node);
            let fine_node = fine.node_from_grid(4 * i, 4 * j);
            worst = worst.max((pf.values()[fine_node] - c.values()[node]).abs());
        }
    }
    Ok(worst)
}

/// Runs the whole suite.
pub fn run_checks() -> crate::Result<Vec<CheckRow>> {
    let mut rows = vec![
        row("oracle_1d_level3", oracle_deviation(1, 3, 50, 11)?, 1e-10),
        row("oracle_2d_level3", oracle_deviation(2, 3, 10, 12)?, 1e-10),
        row("reduction_identity", reduction_defect(100, 13)?, 1e-14),
        row("energy_decay_2d", energy_increase(2, 3, 1e-3, 50, 0.1)?, 1e-12),
        row("fixed_point_plus", fixed_point_drift(2, 3, 1.0, 100)?, 1e-10),
        row("fixed_point_minus", fixed_point_drift(1, 4, -1.0, 100)?, 1e-10),
        row("noise_telescoping", telescoping_defect()?, 1e-12),
        row("stiffness_structure", stiffness_defects()?, 1e-12),
        row("prolongation_nodes", prolongation_defect()?, 1e-15),
    ];
    let ops = FemOperators::new(TorusMesh::new(2, 3)?);
    let params = PotentialParams::default();
    let phi = FieldVector::constant(&ops.mesh, 1.0);
    let e = energy_total(&phi, 0.0, &ops.stiff, &params);
    rows.push(row("constant_gradient_energy", e.abs(), 1e-15));
    Ok(rows)
}
