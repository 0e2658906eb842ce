use proptest::prelude::*;

use sav_spde::config::{parse_str, RunConfig};
use sav_spde::fem::{assemble_lumped_mass, assemble_stiffness, FemOperators, FieldVector};
use sav_spde::linalg::{cg_solve, norm2, SolverOptions};
use sav_spde::mc::{compute_eoc, compute_eoc_scaled};
use sav_spde::mesh::{prolong, TorusMesh};
use sav_spde::noise::NoiseModel;
use sav_spde::potential::{energy_total, PotentialParams, RhoKind};
use sav_spde::sav::{compute_coefficients, sav_step, InitialCondition, SavState};

fn field(dim: usize, level: u32) -> impl Strategy<Value = (TorusMesh, Vec<f64>)> {
    let mesh = TorusMesh::new(dim, level).unwrap();
    let n = mesh.node_count();
    proptest::collection::vec(-1.5f64..1.5, n).prop_map(move |v| (mesh.clone(), v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stiffness_is_psd_with_constant_kernel((mesh, u) in prop_oneof![field(1, 4), field(2, 3)]) {
        let k = assemble_stiffness(&mesh);
        prop_assert!(k.matrix().bilinear(&u, &u) >= -1e-12);
        let shifted: Vec<f64> = u.iter().map(|x| x + 3.0).collect();
        let a = k.matrix().bilinear(&u, &u);
        let b = k.matrix().bilinear(&shifted, &shifted);
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
    }

    #[test]
    fn prolongation_is_linear_and_keeps_nodes(
        (mesh, u) in prop_oneof![field(1, 3), field(2, 2)],
        alpha in -2.0f64..2.0,
        extra in 1u32..3,
    ) {
        let fine = TorusMesh::new(mesh.dim(), mesh.level() + extra).unwrap();
        let f = FieldVector::new(&mesh, u.clone());
        let g = FieldVector::new(&mesh, u.iter().map(|x| alpha * x + 1.0).collect());
        let pf = prolong(&f, &mesh, &fine).unwrap();
        let pg = prolong(&g, &mesh, &fine).unwrap();
        for (a, b) in pf.values().iter().zip(pg.values()) {
            prop_assert!((alpha * a + 1.0 - b).abs() < 1e-12);
        }
        let stride = 1usize << extra;
        for (node, &value) in u.iter().enumerate() {
            let (i, j) = mesh.grid_index(node);
            prop_assert_eq!(pf.values()[fine.node_from_grid(stride * i, stride * j)], value);
        }
    }

    #[test]
    fn cg_solves_the_step_matrix(
        (mesh, b) in prop_oneof![field(1, 5), field(2, 3)],
        tau in 1e-5f64..1e-1,
        eps in 1e-2f64..1.0,
    ) {
        let mass = assemble_lumped_mass(&mesh);
        let stiff = assemble_stiffness(&mesh);
        let a = mass.as_matrix().linear_combination(1.0, stiff.matrix(), tau * eps);
        let mut x = vec![0.0; b.len()];
        let opts = SolverOptions { max_iterations: Some(10 * b.len()), ..SolverOptions::default() };
        cg_solve(&a, &b, &mut x, &opts).unwrap();
        let ax = a.mul_vec(&x);
        let res: Vec<f64> = ax.iter().zip(&b).map(|(p, q)| p - q).collect();
        prop_assert!(norm2(&res) <= 1e-9 * norm2(&b));
    }

    #[test]
    fn update_vector_is_half_of_phi_coefficient(
        (mesh, u) in prop_oneof![field(1, 4), field(2, 3)],
        scale in 0.0f64..0.2,
        eps in 0.01f64..1.0,
        smooth in any::<bool>(),
    ) {
        let ops = FemOperators::new(mesh);
        let rho = if smooth { RhoKind::Smooth } else { RhoKind::Indicator };
        let p = PotentialParams::new(1e-5, eps).with_rho(rho);
        let phi = FieldVector::new(&ops.mesh, u.clone());
        let n = FieldVector::new(&ops.mesh, u.iter().rev().map(|x| scale * x).collect());
        let c = compute_coefficients(&phi, &n, &ops.mass, &p).unwrap();
        let d = c.r_update_vector();
        let norm = norm2(&c.c);
        for (dj, cj) in d.iter().zip(&c.c) {
            prop_assert!((dj - 0.5 * cj).abs() <= 1e-14 * norm);
        }
    }

    #[test]
    fn zero_noise_step_never_raises_the_modified_energy(
        (mesh, u) in prop_oneof![field(1, 4), field(2, 3)],
        tau in 1e-4f64..1.0,
        eps in 0.02f64..1.0,
        r_scale in 0.2f64..2.0,
    ) {
        let ops = FemOperators::new(mesh);
        let p = PotentialParams::new(1e-5, eps);
        let mut state = SavState::initial(FieldVector::new(&ops.mesh, u), &ops.mass, &p);
        state.r *= r_scale;
        let zero = FieldVector::zeros(&ops.mesh);
        let coeffs = compute_coefficients(&state.phi, &zero, &ops.mass, &p).unwrap();
        let opts = SolverOptions { rel_tolerance: 1e-13, max_iterations: Some(2000), ..SolverOptions::default() };
        let next = sav_step(&state, &coeffs, &ops.mass, &ops.stiff, tau, &p, &opts).unwrap();
        let before = energy_total(&state.phi, state.r, &ops.stiff, &p);
        let after = energy_total(&next.phi, next.r, &ops.stiff, &p);
        prop_assert!(after <= before + 1e-10 * before, "{} > {}", after, before);
    }

    #[test]
    fn coarsening_preserves_totals(seed in any::<u64>(), sample in 0u64..1000, factor in prop::sample::select(vec![1usize, 2, 3, 4, 6, 12])) {
        let model = NoiseModel::default_for(1, seed);
        let path = model.generate_increments(sample, 24, 1e-3);
        let coarse = path.coarsen(factor).unwrap();
        for (a, b) in path.totals().iter().zip(coarse.totals()) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn eoc_recovers_power_laws(p in -1.0f64..3.0, c in 1e-3f64..10.0, ratio in 1.5f64..8.0) {
        let taus: Vec<f64> = (0..4).map(|k| ratio.powi(k)).collect();
        let errs: Vec<f64> = taus.iter().map(|t| c * t.powf(p)).collect();
        for v in compute_eoc_scaled(&errs, &taus) {
            prop_assert!((v - p).abs() < 1e-10);
        }
        let dyadic: Vec<f64> = (0..4).map(|k| c * 2f64.powf(p * k as f64)).collect();
        for v in compute_eoc(&dyadic) {
            prop_assert!((v - p).abs() < 1e-10);
        }
    }

    #[test]
    fn config_round_trips(
        gamma in 1e-8f64..1.0,
        eps in 1e-3f64..1.0,
        dim in 1usize..=2,
        level in 1u32..10,
        k in 1usize..500,
        seed in any::<u64>(),
        samples in 1u64..10_000,
        init in 0usize..3,
        a in -2.0f64..2.0,
        none in any::<bool>(),
    ) {
        let mut cfg = RunConfig { dim, level, master_seed: seed, ..RunConfig::default() };
        cfg.potential.gamma = gamma;
        cfg.potential.epsilon = eps;
        cfg.tau = cfg.final_time / k as f64;
        cfg.experiment.samples = samples;
        cfg.initial = match init {
            0 => InitialCondition::Constant(a),
            1 => InitialCondition::Cosine { amplitude: a, wavenumber: k as i32 },
            _ => InitialCondition::TanhEllipse { center: [a, 0.5], semi_axes: [0.2, a.abs() + 0.01] },
        };
        if none {
            cfg.modes = sav_spde::config::ModeTable::None;
        }
        let text = cfg.emit();
        let back = parse_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.emit(), text);
    }
}
