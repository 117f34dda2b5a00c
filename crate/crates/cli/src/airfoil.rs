//! Hybrid nonlinear loop for flow past a square object on an 8×8 channel.

use crate::config::{ExperimentConfig, ReadoutMode};
use crate::output::{num, OutputRecord, Table};
use anyhow::{bail, Result};
use qlbm_core::classical_lbm::{
    apply_boundary, apply_mask, mse, steady_state, BoundarySpec, EdgeCondition, ObjectMask, Rect,
    SolverState,
};
use qlbm_core::lattice::{standard_config, FieldState, LatticeConfig, LatticeName, ModelKind, PhysicsModel};
use qlbm_core::qlbm::{
    build_step, circuit_inputs, decode_fields, encode_fields, CollisionMode, StepCircuitPlan,
};
use qlbm_core::readout::{
    chebyshev_basis, fit, postselected_sampler, rect_grid_transform, sign_restore_symmetric,
    FitOptions, SymmetryAxis, TomographyBasis, TomographyProblem,
};
use qlbm_core::simulator::{run, RunMode};
use qlbm_core::QlbmError;

/// Problem definition shared by every mode.
#[derive(Clone, Debug)]
pub struct AirfoilSetup {
    pub model: PhysicsModel,
    pub config: LatticeConfig,
    pub bc: BoundarySpec,
    pub mask: ObjectMask,
    pub plan: StepCircuitPlan,
    pub nx: usize,
    pub ny: usize,
    pub inlet: [f64; 2],
    /// Cells whose values are not fixed by the edges or the object.
    pub active: Vec<bool>,
    pub axis: SymmetryAxis,
    pub basis: TomographyBasis,
}

impl AirfoilSetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let (nx, ny) = (cfg.grid.nx, cfg.grid.ny);
        if nx < 8 || ny < 8 {
            bail!("the airfoil channel needs at least an 8x8 grid");
        }
        let model = PhysicsModel::new(ModelKind::IncompressibleAthermal { rho0: cfg.model.rho0 }, cfg.model.tau)?;
        let config = standard_config(lattice_name(&cfg.model.lattice)?);
        let inlet = cfg.model.inlet_u;
        let bc = BoundarySpec::new(
            EdgeCondition::Inlet { u: inlet },
            EdgeCondition::ZeroGradient,
            EdgeCondition::DirichletZero,
            EdgeCondition::DirichletZero,
        )?;
        // 2×2 object a quarter of the way in, straddling the midline.
        let (x0, y0) = (nx / 4, ny / 2 - 1);
        let mask = ObjectMask::new(vec![Rect { x0, y0, x1: x0 + 2, y1: y0 + 2 }], nx, ny)?;
        let plan = build_step(&model, &config, &bc, &mask, nx, ny, CollisionMode::NonlinearExtended)?;
        let active: Vec<bool> = (0..nx * ny)
            .map(|i| {
                let (x, y) = (i % nx, i / nx);
                y > 0 && y + 1 < ny && !mask.masked(x, y)
            })
            .collect();
        let t = rect_grid_transform(1.0, 1.0)?.centered_at(x0 as f64 + 0.5, y0 as f64 + 0.5);
        let [dx, dy] = cfg.readout.tomography_degrees;
        let full = chebyshev_basis(nx, ny, (dx, dy), Some(&t));
        let basis = TomographyBasis::from_values(
            full.values
                .iter()
                .map(|g| g.iter().zip(&active).map(|(v, &a)| if a { *v } else { 0.0 }).collect())
                .collect(),
        );
        Ok(Self {
            model,
            config,
            bc,
            mask,
            plan,
            nx,
            ny,
            inlet,
            active,
            axis: SymmetryAxis {
                y_axis: (ny as f64 - 1.0) / 2.0,
                antisymmetric: vec![false, false, true],
            },
            basis,
        })
    }

    /// Uniform inlet velocity everywhere, zero density fluctuation.
    pub fn initial_state(&self) -> FieldState {
        let mut f = FieldState::zeros(self.nx, self.ny, 3, 1).expect("power-of-two grid");
        f.var_mut(1).iter_mut().for_each(|x| *x = self.inlet[0]);
        f.var_mut(2).iter_mut().for_each(|x| *x = self.inlet[1]);
        self.reset(&f)
    }

    /// Inlet, edge and object conditions applied classically.
    pub fn reset(&self, f: &FieldState) -> FieldState {
        apply_mask(&apply_boundary(f, &self.bc), &self.mask)
    }

    pub fn steady_state(&self) -> Result<FieldState> {
        let s = steady_state(
            &SolverState::new(self.initial_state()),
            &self.model,
            &self.config,
            &self.bc,
            &self.mask,
            1e-26,
            100_000,
        )?;
        Ok(s.fields)
    }
}

pub fn lattice_name(s: &str) -> Result<LatticeName> {
    match s {
        "D2Q9" => Ok(LatticeName::D2Q9),
        "D2Q17" => Ok(LatticeName::D2Q17),
        other => Err(QlbmError::UnknownLattice(other.to_string()).into()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub p_keep: f64,
    /// Kept shots per field (empty in statevector mode).
    pub field_shots: Vec<u64>,
}

/// One pass of the hybrid loop: nonlinear terms, circuit, readout, reset.
pub fn hybrid_airfoil_step(
    setup: &AirfoilSetup,
    fields: &FieldState,
    mode: ReadoutMode,
    shots: u64,
    seed: u64,
    fit_opts: &FitOptions,
) -> Result<(FieldState, StepDiagnostics)> {
    let plan = &setup.plan;
    // The step is linear in the amplitudes, so all-zero fields map to
    // themselves; there is no state to prepare.
    if fields.norm() == 0.0 {
        let f = setup.reset(fields);
        let field_shots = if mode == ReadoutMode::Statevector { Vec::new() } else { vec![0; 3] };
        return Ok((f, StepDiagnostics { p_keep: 1.0, field_shots }));
    }
    let input = circuit_inputs(plan, fields)?;
    let (psi, mut ledger) = encode_fields(&input, &plan.map)?;
    let out = run(&plan.circuit, &psi, RunMode::PostSelectZero)?;
    ledger.extend(&plan.step_ledger);
    let raw = match mode {
        ReadoutMode::Statevector => {
            let mut l = ledger.clone();
            l.push("post-selection", 1.0 / out.p_keep.sqrt())?;
            let (f, _) = decode_fields(&out.state, &plan.map.reading(3).with_ledger(l))?;
            (f, Vec::new())
        }
        ReadoutMode::Shots | ReadoutMode::ShotsTomography => {
            let discard = 1usize << plan.layout().ancillas[0].1;
            let counts = postselected_sampler(&out.state, out.p_keep, discard).sample(shots, seed);
            if counts.get(discard) == counts.total {
                return Err(QlbmError::NoKeptShots.into());
            }
            let map = &plan.map;
            let sites = map.sites();
            let mut hist = vec![vec![0u64; sites]; 3];
            for (&i, &c) in &counts.counts {
                if i & !map.data_mask() != 0 {
                    continue;
                }
                let (site, level, slot) = map.locate(i);
                if level == 0 && slot < 3 {
                    hist[slot][site] += c;
                }
            }
            // |F_v(x)|² = P(x, v, ancillas 0) / Π², Π the pre-selection ledger.
            let scale = 1.0 / ledger.product();
            let mut f = FieldState::zeros(setup.nx, setup.ny, 3, 1)?;
            let mut kept = Vec::new();
            for (v, h) in hist.iter().enumerate() {
                let n_v: u64 = h.iter().sum();
                kept.push(n_v);
                if n_v == 0 {
                    continue;
                }
                let norm = (n_v as f64 / shots as f64).sqrt() * scale;
                let shape: Vec<f64> = if mode == ReadoutMode::Shots {
                    h.iter().map(|&c| (c as f64 / n_v as f64).sqrt()).collect()
                } else {
                    let problem = TomographyProblem::from_counts(h, &[])?;
                    let r = fit(&problem, &setup.basis, fit_opts)?;
                    setup.basis.eval(&r.coefficients).iter().map(|x| x.abs()).collect()
                };
                for (x, s) in f.levels[0][v].iter_mut().zip(shape) {
                    *x = norm * s;
                }
            }
            (sign_restore_symmetric(&f, &setup.axis), kept)
        }
    };
    Ok((
        setup.reset(&raw.0),
        StepDiagnostics {
            p_keep: out.p_keep,
            field_shots: raw.1,
        },
    ))
}

/// Per-step MSE to the classical steady state, p_keep trace and field dumps.
pub fn run_airfoil(cfg: &ExperimentConfig) -> Result<OutputRecord> {
    let setup = AirfoilSetup::new(cfg)?;
    let target = setup.steady_state()?;
    let modes: Vec<ReadoutMode> = match cfg.readout.mode {
        ReadoutMode::Statevector => vec![ReadoutMode::Statevector],
        m => vec![ReadoutMode::Statevector, m],
    };
    let mut trace = Table::new("airfoil_trace");
    let mut dump = Table::new("airfoil_fields");
    let mut rec = OutputRecord::default();
    let opts = FitOptions {
        seed: cfg.seed,
        ..FitOptions::default()
    };
    let dump_fields = |dump: &mut Table, step: usize, mode: ReadoutMode, f: &FieldState| {
        let lv = &f.levels[0];
        for i in 0..setup.nx * setup.ny {
            dump.push(vec![
                step.to_string(),
                mode.tag().into(),
                (i % setup.nx).to_string(),
                (i / setup.nx).to_string(),
                num(lv[0][i]),
                num(lv[1][i]),
                num(lv[2][i]),
            ]);
        }
    };
    for mode in modes {
        let mut f = setup.initial_state();
        trace.push(vec!["0".into(), mode.tag().into(), num(mse(&f, &target)), num(1.0), "0".into()]);
        dump_fields(&mut dump, 0, mode, &f);
        for step in 1..=cfg.steps {
            let seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(step as u64);
            let (next, d) = hybrid_airfoil_step(&setup, &f, mode, cfg.readout.shots, seed, &opts)?;
            f = next;
            let kept: u64 = d.field_shots.iter().sum();
            trace.push(vec![
                step.to_string(),
                mode.tag().into(),
                num(mse(&f, &target)),
                num(d.p_keep),
                kept.to_string(),
            ]);
            dump_fields(&mut dump, step, mode, &f);
        }
    }
    rec.note("qubits", setup.plan.layout().n);
    rec.tables.push(trace);
    rec.tables.push(dump);
    Ok(rec)
}
