use qlbm_core::classical_lbm::{osslbm_step, tau1_step, BoundarySpec, EdgeCondition, ObjectMask, Rect, SolverState};
use qlbm_core::lattice::{standard_config, FieldState, LatticeName, PhysicsModel};
use qlbm_core::qlbm::{build_step, quantum_step, CollisionMode};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_fields(nx: usize, ny: usize, levels: usize, rng: &mut ChaCha8Rng) -> FieldState {
    let mut f = FieldState::zeros(nx, ny, 3, levels).unwrap();
    for l in 0..levels {
        for v in 0..3 {
            for x in f.levels[l][v].iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
    }
    f
}

fn mixed() -> BoundarySpec {
    BoundarySpec::new(
        EdgeCondition::ZeroGradient,
        EdgeCondition::DirichletZero,
        EdgeCondition::DirichletZero,
        EdgeCondition::ZeroGradient,
    )
    .unwrap()
}

fn check(n: usize, tau: f64, bc: BoundarySpec, masked: bool, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = PhysicsModel::acoustics(tau);
    let config = standard_config(LatticeName::D2Q9);
    let mask = if masked {
        ObjectMask::new(vec![Rect { x0: 3, y0: 3, x1: 5, y1: 5 }], n, n).unwrap()
    } else {
        ObjectMask::default()
    };
    let plan = build_step(&model, &config, &bc, &mask, n, n, CollisionMode::Linear).unwrap();
    let levels = plan.map.levels;
    let f = random_fields(n, n, levels, &mut rng);
    let st = SolverState::new(f.clone());
    let cl = if levels == 2 {
        osslbm_step(&st, &model, &config, &bc, &mask).unwrap()
    } else {
        tau1_step(&st, &model, &config, &bc, &mask).unwrap()
    };
    let q = quantum_step(&plan, &f).unwrap();
    q.fields.max_abs_diff(&cl.fields)
}

#[test]
fn periodic_tau1() {
    let d = check(8, 1.0, BoundarySpec::periodic(), false, 1);
    assert!(d < 1e-9, "{d}");
}

#[test]
fn periodic_two_level() {
    let d = check(8, 0.8, BoundarySpec::periodic(), false, 2);
    assert!(d < 1e-9, "{d}");
}

#[test]
fn mixed_tau1_masked() {
    let d = check(8, 1.0, mixed(), true, 3);
    assert!(d < 1e-9, "{d}");
}

#[test]
fn mixed_two_level_masked() {
    let d = check(8, 0.8, mixed(), true, 4);
    assert!(d < 1e-9, "{d}");
}

#[test]
fn mixed_two_level_above_one() {
    let d = check(8, 1.4, mixed(), false, 5);
    assert!(d < 1e-9, "{d}");
}

