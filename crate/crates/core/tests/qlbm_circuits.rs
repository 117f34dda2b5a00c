use num_complex::Complex64 as C64;
use qlbm_core::circuit::{validate, Ancilla, Circuit, RegisterLayout};
use qlbm_core::classical_lbm::{
    apply_boundary, BoundarySpec, EdgeCondition, ObjectMask, Rect, SolverState, tau1_step,
};
use qlbm_core::lattice::{
    equilibrium, moments, standard_config, FieldState, LatticeName, ModelKind, PhysicsModel,
};
use qlbm_core::qlbm::*;
use qlbm_core::simulator::{init_amplitudes, init_basis, run, RunMode};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn all_models(tau: f64) -> Vec<(PhysicsModel, CollisionMode)> {
    let m = |k| PhysicsModel::new(k, tau).unwrap();
    vec![
        (m(ModelKind::LowMachAthermal), CollisionMode::NonlinearExtended),
        (m(ModelKind::IncompressibleAthermal { rho0: 1.0 }), CollisionMode::NonlinearExtended),
        (m(ModelKind::LinearAcoustics { rho0: 1.0, u0: vec![0.05, -0.02] }), CollisionMode::Linear),
        (m(ModelKind::ShallowWater { g: 0.5 }), CollisionMode::Linear),
        (m(ModelKind::LinearShallowWater { g: 0.5, h0: 1.0, u0: vec![0.01, 0.03] }), CollisionMode::Linear),
    ]
}

/// a_c = 0 block of the collision gates over all 16 inputs.
fn embedded_block(emb: &CollisionEmbedding) -> Vec<Vec<C64>> {
    let layout = RegisterLayout::new(0, 0, 4, false, &[Ancilla::Collision]).unwrap();
    let gates = svd_embed(emb, &layout).unwrap();
    let mut cols = Vec::new();
    for v in 0..16 {
        let mut psi = init_basis(5, v).unwrap();
        for g in &gates {
            psi.apply(g);
        }
        cols.push(psi.amps[..16].to_vec());
    }
    cols
}

#[test]
fn embedding_block_equals_normalized_c() {
    for tau in [1.0, 0.8] {
        for (model, mode) in all_models(tau) {
            for name in [LatticeName::D2Q9, LatticeName::D2Q17] {
                let emb = build_collision_matrix(&model, &standard_config(name), mode).unwrap();
                let cols = embedded_block(&emb);
                for r in 0..16 {
                    for c in 0..16 {
                        let want = emb.c[(r, c)] / emb.s_c;
                        let err = (cols[c][r] - C64::new(want, 0.0)).norm();
                        assert!(err < 1e-12, "{:?} {name} tau={tau} ({r},{c}) err {err}", model.kind);
                    }
                }
                assert!((emb.reconstruct() - &emb.c / emb.s_c).amax() < 1e-12);
                for (z1, z2) in emb.sigma1.iter().zip(&emb.sigma2) {
                    assert!((z1.norm() - 1.0).abs() < 1e-12);
                    assert!(((z1 + z2).re / 2.0 - z1.re).abs() < 1e-15);
                }
                assert!(emb.sigma.windows(2).all(|w| w[0] >= w[1]));
            }
        }
    }
}

#[test]
fn identity_embedding_is_identity() {
    let emb = CollisionEmbedding::from_matrix(nalgebra::DMatrix::identity(16, 16)).unwrap();
    assert!(emb.sigma.iter().all(|s| (s - 1.0).abs() < 1e-15));
    let cols = embedded_block(&emb);
    for r in 0..16 {
        for c in 0..16 {
            let want = if r == c { 1.0 } else { 0.0 };
            assert!((cols[c][r].norm() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn acoustics_row_for_east_velocity() {
    let model = PhysicsModel::acoustics(1.0);
    let emb = build_collision_matrix(&model, &standard_config(LatticeName::D2Q9), CollisionMode::Linear).unwrap();
    let row: Vec<f64> = (0..3).map(|j| emb.c[(COLLISION_SLOT[1], j)]).collect();
    for (a, b) in row.iter().zip([1.0 / 9.0, 3.0 / 9.0, 0.0]) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn nonlinear_extended_matches_equilibrium() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let config = standard_config(LatticeName::D2Q9);
    for kind in [ModelKind::LowMachAthermal, ModelKind::IncompressibleAthermal { rho0: 1.0 }] {
        let model = PhysicsModel::new(kind, 1.0).unwrap();
        let emb = build_collision_matrix(&model, &config, CollisionMode::NonlinearExtended).unwrap();
        for _ in 0..1000 {
            let rho: f64 = rng.random_range(0.8..1.2);
            let u = [rng.random_range(-0.07..0.07), rng.random_range(-0.07..0.07)];
            let m = [rho * u[0], rho * u[1]];
            let ext = qlbm_core::lattice::extended_inputs(&model, rho, m).unwrap();
            let feq = equilibrium(&model, &config, &[rho, m[0], m[1]]).unwrap();
            for (a, f) in feq.iter().enumerate() {
                let got: f64 = (0..6).map(|j| emb.c[(COLLISION_SLOT[a], j)] * ext[j]).sum();
                assert!((got - f).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mode_mismatch_rejected() {
    let r = build_collision_matrix(
        &PhysicsModel::acoustics(1.0),
        &standard_config(LatticeName::D2Q9),
        CollisionMode::NonlinearExtended,
    );
    assert!(matches!(r, Err(qlbm_core::QlbmError::ModelMode { .. })));
}

fn slot_velocity(slot: usize) -> Option<[i64; 2]> {
    let cfg = standard_config(LatticeName::D2Q9);
    COLLISION_SLOT
        .iter()
        .position(|&s| s == slot)
        .map(|a| [cfg.velocities[a][0] as i64, cfg.velocities[a][1] as i64])
}

#[test]
fn propagation_permutes_basis_states() {
    let n = 8usize;
    let layout = RegisterLayout::new(3, 3, 4, true, &[]).unwrap();
    let gates = build_propagation(&layout).unwrap();
    let data_bits = 6 + 4 + 1;
    let mut seen = vec![false; 1 << data_bits];
    for idx in 0..(1usize << data_bits) {
        let mut psi = init_basis(layout.n, idx).unwrap();
        for g in &gates {
            psi.apply(g);
        }
        let (out, p) = psi
            .amps
            .iter()
            .enumerate()
            .map(|(i, z)| (i, z.norm_sqr()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        assert!((p - 1.0).abs() < 1e-10, "not a basis state for input {idx}");
        assert!(!seen[out]);
        seen[out] = true;
        let site = idx & 63;
        let slot = (idx >> 6) & 15;
        // Slots 14 and 15 are scratch space, empty after collision.
        if slot >= 14 {
            continue;
        }
        let level = idx >> 10;
        let (x, y) = ((site % n) as i64, (site / n) as i64);
        let hop = if level == 1 { 2 } else { 1 };
        let c = slot_velocity(slot).filter(|_| slot < 8).unwrap_or([0, 0]);
        let ex = (x + hop * c[0]).rem_euclid(n as i64) as usize;
        let ey = (y + hop * c[1]).rem_euclid(n as i64) as usize;
        assert_eq!(out, ex + n * ey + (slot << 6) + (level << 10), "input {idx}");
    }
}

#[test]
fn integration_yields_quarter_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = standard_config(LatticeName::D2Q9);
    let model = PhysicsModel::acoustics(1.0);
    let layout = RegisterLayout::new(1, 1, 4, false, &[Ancilla::Integration]).unwrap();
    let mut bits = 0;
    let mut c = Circuit::new(layout.clone());
    c.push_block("integration", build_integration(&layout, &mut bits).unwrap());
    for _ in 0..50 {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << layout.n];
        let mut fs = Vec::new();
        for site in 0..4 {
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let f = equilibrium(&model, &config, &v).unwrap();
            for (a, x) in f.iter().enumerate() {
                amps[site | (COLLISION_SLOT[a] << 2)] = C64::new(*x, 0.0);
            }
            fs.push(f);
        }
        let (psi, norm) = init_amplitudes(amps).unwrap();
        let out = run(&c, &psi, RunMode::PostSelectZero).unwrap();
        let scale = norm * out.p_keep.sqrt() * 4.0;
        for (site, f) in fs.iter().enumerate() {
            let (rho, u) = moments(f, &config).unwrap();
            for (slot, want) in [(0, rho), (1, u[0]), (2, u[1])] {
                let got = out.state.amps[site | (slot << 2)].re * scale;
                assert!((got - want).abs() < 1e-10);
            }
        }
    }
}

fn random_fields(nx: usize, ny: usize, levels: usize, seed: u64) -> FieldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = FieldState::zeros(nx, ny, 3, levels).unwrap();
    for grid in f.levels.iter_mut().flatten() {
        for x in grid.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
    f
}

/// Runs only the boundary part on encoded fields.
fn boundary_only(bc: &BoundarySpec, f: &FieldState) -> FieldState {
    let layout = RegisterLayout::new(3, 3, 4, false, &[Ancilla::Boundary]).unwrap();
    let map = EncodingMap::new(layout.clone(), 8, 8, 3).unwrap();
    let mut bits = 0;
    let (gates, factor) = build_boundary(bc, &layout, &mut bits).unwrap();
    let mut c = Circuit::new(layout);
    c.push_block("boundary", gates);
    let (psi, mut ledger) = encode_fields(f, &map).unwrap();
    let out = run(&c, &psi, RunMode::PostSelectZero).unwrap();
    ledger.push("boundary", factor).unwrap();
    ledger.push("post-selection", 1.0 / out.p_keep.sqrt()).unwrap();
    decode_fields(&out.state, &map.with_ledger(ledger)).unwrap().0
}

#[test]
fn zero_gradient_copies_inner_layer() {
    let zg = EdgeCondition::ZeroGradient;
    let bc = BoundarySpec::new(zg.clone(), zg.clone(), zg.clone(), zg).unwrap();
    let f = random_fields(8, 8, 1, 3);
    let out = boundary_only(&bc, &f);
    for y in 0..8 {
        for v in 0..3 {
            assert!((out.get(0, v, 0, y) - out.get(0, v, 1, y)).abs() < 1e-12);
            assert!((out.get(0, v, 7, y) - out.get(0, v, 6, y)).abs() < 1e-12);
        }
    }
    assert!(out.max_abs_diff(&apply_boundary(&f, &bc)) < 1e-9);
}

#[test]
fn boundary_matches_classical_for_each_combination() {
    use EdgeCondition::*;
    let conds = [Periodic, DirichletZero, ZeroGradient];
    let mut seed = 0;
    for x in &conds {
        for y in &conds {
            for partial in [false, true] {
                let mut bc = BoundarySpec::new(x.clone(), x.clone(), y.clone(), y.clone()).unwrap();
                if partial {
                    bc.applies = vec![true, false, true];
                }
                seed += 1;
                let f = random_fields(8, 8, 1, seed);
                let d = boundary_only(&bc, &f).max_abs_diff(&apply_boundary(&f, &bc));
                assert!(d < 1e-9, "{x:?} {y:?} partial={partial}: {d}");
            }
        }
    }
}

#[test]
fn tau1_emits_no_rescaling() {
    let config = standard_config(LatticeName::D2Q9);
    let plan = build_step(
        &PhysicsModel::acoustics(1.0),
        &config,
        &BoundarySpec::periodic(),
        &ObjectMask::default(),
        8,
        8,
        CollisionMode::Linear,
    )
    .unwrap();
    assert!(plan.part("combine").is_none());
    assert!(!plan.step_ledger.entries.iter().any(|e| e.label == "time-level combination"));
    let labels: Vec<&str> = plan.circuit.blocks.iter().map(|b| b.label.as_str()).collect();
    assert_eq!(labels, ["collision", "propagation", "integration", "boundary", "object"]);
    let report = validate(&plan.circuit);
    assert!(report.ok(), "{:?}", report.diagnostics);
    for l in labels {
        assert!(report.block(l).is_some());
    }
}

#[test]
fn object_block_discards_masked_amplitude() {
    let layout = RegisterLayout::new(3, 3, 4, false, &[Ancilla::Boundary]).unwrap();
    let map = EncodingMap::new(layout.clone(), 8, 8, 3).unwrap();
    let mask = ObjectMask::new(vec![Rect { x0: 3, y0: 3, x1: 5, y1: 5 }], 8, 8).unwrap();
    let mut bits = 0;
    let mut c = Circuit::new(layout.clone());
    c.push_block("object", build_object(&mask, 8, 8, &layout, &mut bits).unwrap());
    let f = random_fields(8, 8, 1, 17);
    let (psi, _) = encode_fields(&f, &map).unwrap();
    let cells = mask.cells(8, 8);
    let want: f64 = (0..3)
        .flat_map(|v| cells.iter().map(move |&i| (v, i)))
        .map(|(v, i)| psi.amps[map.index(i, 0, v)].norm_sqr())
        .sum();
    let out = run(&c, &psi, RunMode::PostSelectZero).unwrap();
    assert!((1.0 - out.p_keep - want).abs() < 1e-12);
    for &i in &cells {
        for v in 0..3 {
            assert_eq!(out.state.amps[map.index(i, 0, v)].norm(), 0.0);
        }
    }
    assert!(build_object(&ObjectMask::default(), 8, 8, &layout, &mut bits).unwrap().is_empty());
}

#[test]
fn discarded_probability_accounts_for_p_keep() {
    let bc = BoundarySpec::new(
        EdgeCondition::ZeroGradient,
        EdgeCondition::ZeroGradient,
        EdgeCondition::DirichletZero,
        EdgeCondition::DirichletZero,
    )
    .unwrap();
    let mask = ObjectMask::new(vec![Rect { x0: 3, y0: 3, x1: 5, y1: 5 }], 8, 8).unwrap();
    let plan = build_step(
        &PhysicsModel::acoustics(0.8),
        &standard_config(LatticeName::D2Q9),
        &bc,
        &mask,
        8,
        8,
        CollisionMode::Linear,
    )
    .unwrap();
    let out = quantum_step(&plan, &random_fields(8, 8, 2, 4)).unwrap();
    let total: f64 = out.run.discarded_by_block().iter().map(|(_, p)| p).sum();
    assert!((total - (1.0 - out.p_keep)).abs() < 1e-12);
}

#[test]
fn d2q17_at_unit_tau_matches_d2q9() {
    let model = PhysicsModel::acoustics(1.0);
    let bc = BoundarySpec::new(
        EdgeCondition::ZeroGradient,
        EdgeCondition::ZeroGradient,
        EdgeCondition::Periodic,
        EdgeCondition::Periodic,
    )
    .unwrap();
    let mask = ObjectMask::default();
    let one = build_step(&model, &standard_config(LatticeName::D2Q9), &bc, &mask, 8, 8, CollisionMode::Linear).unwrap();
    let two = build_step(&model, &standard_config(LatticeName::D2Q17), &bc, &mask, 8, 8, CollisionMode::Linear).unwrap();
    assert!(two.two_levels() && !one.two_levels());
    let f = random_fields(8, 8, 2, 8);
    let a = quantum_step(&one, &f.current()).unwrap().fields;
    let b = quantum_step(&two, &f).unwrap().fields;
    assert!(a.max_abs_diff(&b.current()) < 1e-12);
    assert!(b.levels[1] == f.levels[0] || FieldState { nx: 8, ny: 8, levels: vec![b.levels[1].clone()] }.max_abs_diff(&f.current()) < 1e-12);
}

#[test]
fn encode_decode_round_trip() {
    let layout = RegisterLayout::new(3, 3, 4, true, &[Ancilla::Collision]).unwrap();
    let map = EncodingMap::new(layout, 8, 8, 3).unwrap();
    let f = random_fields(8, 8, 2, 21);
    let (psi, ledger) = encode_fields(&f, &map).unwrap();
    let (g, resid) = decode_fields(&psi, &map.with_ledger(ledger.clone())).unwrap();
    assert!(f.max_abs_diff(&g) < 1e-12);
    assert!(resid.abs() < 1e-15);
    assert!((1.0 / ledger.product() - f.norm()).abs() < 1e-12);
    let zero = FieldState::zeros(8, 8, 3, 2).unwrap();
    assert!(matches!(encode_fields(&zero, &map), Err(qlbm_core::QlbmError::ZeroVector)));
}

#[test]
fn uniform_inlet_state_norm() {
    // u_x = 0.02 on every site and unit density fluctuation-free: only V1x is non-zero.
    let layout = RegisterLayout::new(3, 3, 4, false, &[]).unwrap();
    let map = EncodingMap::new(layout, 8, 8, 3).unwrap();
    let mut f = FieldState::zeros(8, 8, 3, 1).unwrap();
    f.var_mut(1).iter_mut().for_each(|x| *x = 0.02);
    let (_, ledger) = encode_fields(&f, &map).unwrap();
    assert!((1.0 / ledger.product() - 0.02 * 8.0).abs() < 1e-15);
}

#[test]
fn hybrid_step_equals_tau1_on_airfoil_start() {
    let model = PhysicsModel::new(ModelKind::IncompressibleAthermal { rho0: 1.0 }, 1.0).unwrap();
    let config = standard_config(LatticeName::D2Q9);
    let bc = BoundarySpec::new(
        EdgeCondition::ZeroGradient,
        EdgeCondition::ZeroGradient,
        EdgeCondition::DirichletZero,
        EdgeCondition::DirichletZero,
    )
    .unwrap();
    let mask = ObjectMask::new(vec![Rect { x0: 3, y0: 3, x1: 5, y1: 5 }], 8, 8).unwrap();
    let plan = build_step(&model, &config, &bc, &mask, 8, 8, CollisionMode::NonlinearExtended).unwrap();
    let mut f = FieldState::zeros(8, 8, 3, 1).unwrap();
    f.var_mut(0).iter_mut().for_each(|x| *x = 1.0);
    f.var_mut(1).iter_mut().for_each(|x| *x = 0.02);
    let q = quantum_step(&plan, &f).unwrap();
    let c = tau1_step(&SolverState::new(f), &model, &config, &bc, &mask).unwrap();
    assert!(q.fields.max_abs_diff(&c.fields) < 1e-9);
}
