//! Fixtures shared by the benchmarks.

use num_complex::Complex64 as C64;
use qlbm_core::classical_lbm::{BoundarySpec, ObjectMask};
use qlbm_core::lattice::{standard_config, FieldState, LatticeName, PhysicsModel};
use qlbm_core::qlbm::{build_step, CollisionMode, StepCircuitPlan};
use qlbm_core::simulator::{init_amplitudes, rng_from_seed, Statevector};
use rand::RngExt;

/// Normalized random complex state on `n` qubits.
pub fn random_state(n: usize, seed: u64) -> Statevector {
    let mut rng = rng_from_seed(seed);
    let amps = (0..1usize << n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    init_amplitudes(amps).expect("nonzero").0
}

/// Periodic linear-acoustics step on an `n`×`n` grid.
pub fn acoustics_plan(n: usize, tau: f64, lattice: LatticeName) -> StepCircuitPlan {
    build_step(
        &PhysicsModel::acoustics(tau),
        &standard_config(lattice),
        &BoundarySpec::periodic(),
        &ObjectMask::default(),
        n,
        n,
        CollisionMode::Linear,
    )
    .expect("valid plan")
}

pub fn random_fields(n: usize, levels: usize, seed: u64) -> FieldState {
    let mut rng = rng_from_seed(seed);
    let mut f = FieldState::zeros(n, n, 3, levels).expect("power-of-two grid");
    for level in f.levels.iter_mut() {
        for grid in level.iter_mut() {
            grid.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
    }
    f
}
