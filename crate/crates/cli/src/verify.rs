//! Quantum-versus-classical single-step comparisons on random fields.

use crate::config::ExperimentConfig;
use crate::output::{num, OutputRecord, Table};
use anyhow::Result;
use qlbm_core::classical_lbm::{
    osslbm_step, tau1_step, BoundarySpec, EdgeCondition, ObjectMask, Rect, SolverState,
};
use qlbm_core::circuit::Gate;
use qlbm_core::lattice::{standard_config, FieldState, LatticeName, PhysicsModel};
use qlbm_core::qlbm::{build_step, quantum_step, CollisionMode, StepCircuitPlan};
use qlbm_core::simulator::rng_from_seed;
use rand::RngExt;

/// Zero-gradient left and top, zero Dirichlet right and bottom.
pub fn mixed_boundary() -> BoundarySpec {
    BoundarySpec::new(
        EdgeCondition::ZeroGradient,
        EdgeCondition::DirichletZero,
        EdgeCondition::DirichletZero,
        EdgeCondition::ZeroGradient,
    )
    .expect("valid edges")
}

/// Centred 2×2 object.
pub fn small_object(n: usize) -> ObjectMask {
    let c = n / 2 - 1;
    ObjectMask::new(vec![Rect { x0: c, y0: c, x1: c + 2, y1: c + 2 }], n, n).expect("fits")
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

/// Max-abs difference between one quantum step and the classical step.
pub fn compare_step(plan: &StepCircuitPlan, fields: &FieldState) -> Result<f64> {
    let q = quantum_step(plan, fields)?;
    let state = SolverState::new(fields.clone());
    let c = if plan.two_levels() {
        osslbm_step(&state, &plan.model, &plan.config, &plan.bc, &plan.mask)?
    } else {
        tau1_step(&state, &plan.model, &plan.config, &plan.bc, &plan.mask)?
    };
    Ok(q.fields.max_abs_diff(&c.fields))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyCase {
    pub n: usize,
    pub tau: f64,
    pub mixed: bool,
    pub masked: bool,
}

impl VerifyCase {
    pub fn plan(&self, lattice: LatticeName) -> Result<StepCircuitPlan> {
        let bc = if self.mixed { mixed_boundary() } else { BoundarySpec::periodic() };
        let mask = if self.masked { small_object(self.n) } else { ObjectMask::default() };
        Ok(build_step(
            &PhysicsModel::acoustics(self.tau),
            &standard_config(lattice),
            &bc,
            &mask,
            self.n,
            self.n,
            CollisionMode::Linear,
        )?)
    }
}

/// The acceptance grid: {8, 16} × τ ∈ {1, 0.8} × {periodic, mixed} × {no object, 2×2}.
pub fn verify_cases() -> Vec<VerifyCase> {
    let mut out = Vec::new();
    for n in [8, 16] {
        for tau in [1.0, 0.8] {
            for mixed in [false, true] {
                for masked in [false, true] {
                    out.push(VerifyCase { n, tau, mixed, masked });
                }
            }
        }
    }
    out
}

pub fn verify_equivalence(cfg: &ExperimentConfig) -> Result<OutputRecord> {
    let samples = cfg.readout.repetitions.max(1);
    let mut table = Table::new("verify");
    let mut worst = 0.0f64;
    for (ci, case) in verify_cases().into_iter().enumerate() {
        let plan = case.plan(LatticeName::D2Q9)?;
        let mut dev = 0.0f64;
        for s in 0..samples {
            let seed = cfg.seed.wrapping_mul(7919).wrapping_add((ci * 100_000 + s) as u64);
            let f = random_fields(case.n, plan.map.levels, seed);
            dev = dev.max(compare_step(&plan, &f)?);
        }
        worst = worst.max(dev);
        table.push(vec![
            format!("{}x{}", case.n, case.n),
            case.tau.to_string(),
            if case.mixed { "mixed" } else { "periodic" }.into(),
            if case.masked { "2x2" } else { "none" }.into(),
            samples.to_string(),
            num(dev),
        ]);
    }
    // τ = 1: the two-level plan must reproduce the one-level plan.
    let case = VerifyCase { n: 8, tau: 1.0, mixed: true, masked: true };
    let one = case.plan(LatticeName::D2Q9)?;
    let two = case.plan(LatticeName::D2Q17)?;
    let f = random_fields(8, 1, cfg.seed);
    let mut f2 = f.clone();
    f2.levels.push(random_fields(8, 1, cfg.seed ^ 1).levels.remove(0));
    let a = quantum_step(&one, &f)?.fields;
    let b = quantum_step(&two, &f2)?.fields;
    let level_dev = a.max_abs_diff(&b.current());

    let mut rec = OutputRecord::default();
    rec.note("max_abs_deviation", num(worst));
    rec.note("two_level_vs_one_level", num(level_dev));
    rec.tables.push(table);
    Ok(rec)
}

/// Test fixture: shifts the first controlled phase of the streaming ladder
/// by `delta`. Returns false when the plan has no such gate.
pub fn corrupt_phase_ladder(plan: &mut StepCircuitPlan, delta: f64) -> bool {
    let Some(block) = plan.circuit.blocks.iter().find(|b| b.label == "propagation") else {
        return false;
    };
    let (start, end) = (block.start, block.end);
    for g in &mut plan.circuit.gates[start..end] {
        if let Gate::CP { theta, .. } = g {
            *theta += delta;
            return true;
        }
    }
    false
}
