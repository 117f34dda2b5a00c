use num_complex::Complex64 as C64;
use qlbm_core::circuit::Gate;
use qlbm_core::classical_lbm::{BoundarySpec, EdgeCondition, ObjectMask, Rect};
use qlbm_core::lattice::{
    equilibrium, moments, standard_config, FieldState, LatticeName, ModelKind, PhysicsModel, CS2,
};
use qlbm_core::qlbm::{build_step, quantum_step, CollisionMode};
use qlbm_core::simulator::{init_amplitudes, rng_from_seed, run, RunMode};
use rand::RngExt;

const SAMPLES: usize = 1000;

/// Second-moment tensor Σ c_i c_j F_α.
fn second_moment(f: &[f64]) -> [[f64; 2]; 2] {
    let cfg = standard_config(LatticeName::D2Q9);
    let mut p = [[0.0; 2]; 2];
    for (k, a) in cfg.level1().enumerate() {
        let c = &cfg.velocities[a];
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] += (c[i] * c[j]) as f64 * f[k];
            }
        }
    }
    p
}

/// Checks mass, momentum and momentum-flux moments of F over random inputs.
/// `flux(v0, m)` is the model's independent momentum-flux oracle.
fn check_model(kind: ModelKind, v0_range: (f64, f64), flux: impl Fn(f64, [f64; 2]) -> [[f64; 2]; 2]) {
    let model = PhysicsModel::new(kind, 0.8).unwrap();
    let cfg = standard_config(LatticeName::D2Q9);
    let mut rng = rng_from_seed(2024);
    for _ in 0..SAMPLES {
        let v0 = rng.random_range(v0_range.0..v0_range.1);
        let m = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
        let f = equilibrium(&model, &cfg, &[v0, m[0], m[1]]).unwrap();
        let (r0, r1) = moments(&f, &cfg).unwrap();
        assert!((r0 - v0).abs() <= 1e-10, "{}: mass", model.kind.label());
        for j in 0..2 {
            assert!((r1[j] - m[j]).abs() <= 1e-10, "{}: momentum", model.kind.label());
        }
        let p = second_moment(&f);
        let want = flux(v0, m);
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (p[i][j] - want[i][j]).abs() <= 1e-10,
                    "{}: flux[{i}][{j}] {} vs {}",
                    model.kind.label(),
                    p[i][j],
                    want[i][j]
                );
            }
        }
    }
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

fn tensor(f: impl Fn(usize, usize) -> f64) -> [[f64; 2]; 2] {
    [[f(0, 0), f(0, 1)], [f(1, 0), f(1, 1)]]
}

#[test]
fn low_mach_moments() {
    check_model(ModelKind::LowMachAthermal, (0.5, 1.5), |rho, m| {
        tensor(|i, j| CS2 * rho * delta(i, j) + m[i] * m[j] / rho)
    });
}

#[test]
fn incompressible_moments() {
    let rho0 = 1.2;
    check_model(ModelKind::IncompressibleAthermal { rho0 }, (-0.5, 0.5), |rho, m| {
        tensor(|i, j| CS2 * rho * delta(i, j) + m[i] * m[j] / rho0)
    });
}

#[test]
fn linear_acoustics_moments() {
    // Linearisation of c_s²ρδ + ρuu around (ρ0, ρ0 u0).
    let u0 = [0.05, -0.03];
    check_model(
        ModelKind::LinearAcoustics { rho0: 1.0, u0: u0.to_vec() },
        (-0.5, 0.5),
        |r, m| tensor(|i, j| CS2 * r * delta(i, j) + u0[i] * m[j] + m[i] * u0[j] - r * u0[i] * u0[j]),
    );
}

#[test]
fn shallow_water_moments() {
    let g = 0.4;
    check_model(ModelKind::ShallowWater { g }, (0.5, 1.5), |h, m| {
        tensor(|i, j| 0.5 * g * h * h * delta(i, j) + m[i] * m[j] / h)
    });
}

#[test]
fn linear_shallow_water_moments() {
    let (g, h0, u0) = (0.4, 1.0, [0.02, 0.04]);
    check_model(
        ModelKind::LinearShallowWater { g, h0, u0: u0.to_vec() },
        (-0.5, 0.5),
        |h, m| tensor(|i, j| g * h0 * h * delta(i, j) + u0[i] * m[j] + m[i] * u0[j] - h * u0[i] * u0[j]),
    );
}

fn mixed_plan(tau: f64, lattice: LatticeName) -> qlbm_core::qlbm::StepCircuitPlan {
    let bc = BoundarySpec::new(
        EdgeCondition::ZeroGradient,
        EdgeCondition::DirichletZero,
        EdgeCondition::DirichletZero,
        EdgeCondition::ZeroGradient,
    )
    .unwrap();
    let mask = ObjectMask::new(vec![Rect { x0: 3, y0: 3, x1: 5, y1: 5 }], 8, 8).unwrap();
    build_step(
        &PhysicsModel::acoustics(tau),
        &standard_config(lattice),
        &bc,
        &mask,
        8,
        8,
        CollisionMode::Linear,
    )
    .unwrap()
}

fn unitary_only(gates: &[Gate]) -> Vec<Gate> {
    gates
        .iter()
        .filter(|g| !matches!(g, Gate::Measure { .. } | Gate::Conditional { .. }))
        .cloned()
        .collect()
}

#[test]
fn measurement_free_parts_preserve_norm() {
    let mut rng = rng_from_seed(7);
    for (tau, lattice) in [(1.0, LatticeName::D2Q9), (0.8, LatticeName::D2Q17)] {
        let plan = mixed_plan(tau, lattice);
        let n = plan.layout().n;
        for (label, gates) in &plan.parts {
            let gates = unitary_only(gates);
            for _ in 0..3 {
                let amps: Vec<C64> = (0..1usize << n)
                    .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                    .collect();
                let (mut psi, _) = init_amplitudes(amps).unwrap();
                for g in &gates {
                    psi.apply(g);
                }
                let dev = (psi.norm_sqr() - 1.0).abs();
                assert!(dev <= 1e-12, "{label}: norm drift {dev:e}");
            }
        }
    }
}

fn random_fields(levels: usize, seed: u64) -> FieldState {
    let mut rng = rng_from_seed(seed);
    let mut f = FieldState::zeros(8, 8, 3, levels).unwrap();
    for level in f.levels.iter_mut() {
        for grid in level.iter_mut() {
            grid.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
    }
    f
}

#[test]
fn step_and_sampling_are_deterministic() {
    let plan = mixed_plan(0.8, LatticeName::D2Q17);
    let f = random_fields(2, 11);
    let a = quantum_step(&plan, &f).unwrap();
    let b = quantum_step(&plan, &f).unwrap();
    let bits = |s: &FieldState| -> Vec<u64> {
        s.levels.iter().flatten().flatten().map(|x| x.to_bits()).collect()
    };
    assert_eq!(bits(&a.fields), bits(&b.fields));

    let (psi, _) = qlbm_core::qlbm::encode_fields(&f, &plan.map).unwrap();
    let out = run(&plan.circuit, &psi, RunMode::PostSelectZero).unwrap();
    let c1 = out.state.sample(4096, 99);
    let c2 = out.state.sample(4096, 99);
    assert_eq!(c1.counts, c2.counts);
    assert_ne!(c1.counts, out.state.sample(4096, 100).counts);
}
