//! Gaussian pulse experiments: accuracy against the analytic solution and
//! acoustic-energy readout.

use crate::airfoil::lattice_name;
use crate::config::ExperimentConfig;
use crate::output::{num, OutputRecord, Table};
use anyhow::{bail, Result};
use qlbm_core::classical_lbm::{
    gaussian_pulse_analytic, tau1_step, BoundarySpec, ObjectMask, PulseGrid, SolverState,
};
use qlbm_core::lattice::{standard_config, FieldState, PhysicsModel, CS2};
use qlbm_core::qlbm::{
    build_step, decode_fields, encode_fields, CollisionMode, EncodingMap, NormLedger, StepCircuitPlan,
};
use qlbm_core::readout::{
    acoustic_energy, energy_expectation, estimate_energy, postselected_sampler, shots_for_accuracy,
    EnergyObservable,
};
use qlbm_core::simulator::{run, RunMode, Statevector};
use rayon::prelude::*;

/// Lattice and time scaling of a pulse run.
#[derive(Clone, Debug)]
pub struct PulseSetup {
    pub n: usize,
    pub dx: f64,
    pub dt: f64,
    /// Sound speed seen by the analytic solution, c_s·dx/dt.
    pub c: f64,
    pub beta: f64,
    pub plan: StepCircuitPlan,
}

impl PulseSetup {
    pub fn new(cfg: &ExperimentConfig, steps_for_window: Option<usize>) -> Result<Self> {
        let n = cfg.grid.nx;
        if cfg.grid.ny != n {
            bail!("pulse experiments need a square grid");
        }
        let model = PhysicsModel::acoustics(cfg.model.tau);
        let config = standard_config(lattice_name(&cfg.model.lattice)?);
        let bc = BoundarySpec::periodic();
        let plan = build_step(&model, &config, &bc, &ObjectMask::default(), n, n, CollisionMode::Linear)?;
        let dx = cfg.model.domain / n as f64;
        let nominal = CS2.sqrt() * dx / cfg.model.sound_speed;
        let dt = match steps_for_window {
            Some(s) => cfg.t_end / s as f64,
            None => nominal,
        };
        Ok(Self {
            n,
            dx,
            dt,
            c: CS2.sqrt() * dx / dt,
            beta: cfg.model.beta,
            plan,
        })
    }

    /// Pulse released from rest at cell `center`, pressure p = c_s²ρ.
    ///
    /// The earlier level mirrors one step forward, (ρ¹, −u¹), so the run is
    /// time-symmetric about t = 0; repeating V⁰ would centre it on t = −Δt/2.
    pub fn initial_state(&self, center: (f64, f64)) -> Result<FieldState> {
        let n = self.n;
        let grid = PulseGrid {
            cx: center.0,
            cy: center.1,
            ..PulseGrid::centered(n, n, self.dx)
        };
        let p0 = gaussian_pulse_analytic(self.beta, 0.0, &grid, self.c)?;
        let mut now = FieldState::zeros(n, n, 3, 1)?;
        for (r, p) in now.var_mut(0).iter_mut().zip(&p0) {
            *r = p / CS2;
        }
        if !self.plan.two_levels() {
            return Ok(now);
        }
        let cfg = &self.plan.config;
        let one = tau1_step(
            &SolverState::new(now.clone()),
            &PhysicsModel::acoustics(1.0),
            cfg,
            &BoundarySpec::periodic(),
            &ObjectMask::default(),
        )?;
        let mut prev = one.fields.levels[0].clone();
        prev[1].iter_mut().for_each(|x| *x = -*x);
        prev[2].iter_mut().for_each(|x| *x = -*x);
        now.levels.push(prev);
        Ok(now)
    }

    pub fn analytic(&self, t: f64, center: (f64, f64)) -> Result<Vec<f64>> {
        let grid = PulseGrid {
            cx: center.0,
            cy: center.1,
            ..PulseGrid::centered(self.n, self.n, self.dx)
        };
        Ok(gaussian_pulse_analytic(self.beta, t, &grid, self.c)?)
    }
}

/// Quantum state after each step plus what decoding needs.
pub struct Evolution<'a> {
    plan: &'a StepCircuitPlan,
    pub state: Statevector,
    /// Ledger including the latest post-selection.
    pub ledger: NormLedger,
    pub p_keep: f64,
}

impl<'a> Evolution<'a> {
    pub fn start(plan: &'a StepCircuitPlan, fields: &FieldState) -> Result<Self> {
        let (state, ledger) = encode_fields(fields, &plan.map)?;
        Ok(Self {
            plan,
            state,
            ledger,
            p_keep: 1.0,
        })
    }

    /// Runs the step circuit on the current state; no classical round trip.
    pub fn step(&mut self) -> Result<()> {
        let out = run(&self.plan.circuit, &self.state, RunMode::PostSelectZero)?;
        self.ledger.extend(&self.plan.step_ledger);
        self.ledger.push("post-selection", 1.0 / out.p_keep.sqrt())?;
        self.state = out.state;
        self.p_keep = out.p_keep;
        Ok(())
    }

    pub fn map(&self) -> EncodingMap {
        self.plan.map.with_ledger(self.ledger.clone())
    }

    pub fn decode(&self) -> Result<FieldState> {
        Ok(decode_fields(&self.state, &self.map())?.0)
    }
}

fn rel_l2(num_: &[f64], exact: &[f64]) -> f64 {
    let d: f64 = num_.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    let e: f64 = exact.iter().map(|b| b * b).sum();
    (d / e).sqrt()
}

/// Steps covering [0, t_end] in whole snapshot intervals.
pub fn window_steps(cfg: &ExperimentConfig) -> (usize, usize) {
    let k = cfg.snapshots.max(1);
    if cfg.steps > 0 {
        return (cfg.steps, (cfg.steps / k).max(1));
    }
    let dx = cfg.model.domain / cfg.grid.nx as f64;
    let nominal = CS2.sqrt() * dx / cfg.model.sound_speed;
    let per = ((cfg.t_end / nominal) / k as f64).round().max(1.0) as usize;
    (per * k, per)
}

/// Relative L2 error of the pressure per snapshot and centreline profiles.
pub fn run_acoustics_pulse(cfg: &ExperimentConfig) -> Result<OutputRecord> {
    let (steps, per) = window_steps(cfg);
    let setup = PulseSetup::new(cfg, (cfg.steps == 0).then_some(steps))?;
    let n = setup.n;
    let center = ((n / 2) as f64, (n / 2) as f64);
    let f0 = setup.initial_state(center)?;
    let mut evo = Evolution::start(&setup.plan, &f0)?;
    let mut errors = Table::new("pulse_error");
    let mut profile = Table::new("pulse_profile");
    let mut snapshot = |step: usize, f: &FieldState| -> Result<f64> {
        let t = step as f64 * setup.dt;
        let exact = setup.analytic(t, center)?;
        let p: Vec<f64> = f.var(0).iter().map(|r| CS2 * r).collect();
        let e = rel_l2(&p, &exact);
        errors.push(vec![step.to_string(), num(t), num(e)]);
        let row = n / 2;
        for x in 0..n {
            let i = x + n * row;
            profile.push(vec![step.to_string(), num(t), num((x as f64 - center.0) * setup.dx), num(p[i]), num(exact[i])]);
        }
        Ok(e)
    };
    snapshot(0, &evo.decode()?)?;
    let mut errs = Vec::new();
    for s in 1..=steps {
        evo.step()?;
        if s % per == 0 {
            errs.push(snapshot(s, &evo.decode()?)?);
        }
    }
    let mut rec = OutputRecord::default();
    let mean = errs.iter().sum::<f64>() / errs.len().max(1) as f64;
    rec.note("mean_rel_l2_error", num(mean));
    rec.note("snapshots", errs.len());
    rec.note("steps", steps);
    rec.note("dt", num(setup.dt));
    rec.note("qubits", setup.plan.layout().n);
    rec.tables.push(errors);
    rec.tables.push(profile);
    Ok(rec)
}

/// Per-(step, level, seed) shot seed derived from the master seed.
fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(master ^ 0x9e37_79b9_7f4a_7c15, |h, &p| h.wrapping_mul(0x100_0000_01b3).wrapping_add(p))
}

fn quadrant_cells(n: usize) -> Vec<usize> {
    (0..n * n).filter(|i| i % n < n / 2 && i / n < n / 2).collect()
}

/// Normalized quadrant energy: exact, and sampled at each shot level.
pub fn run_energy_dissipation(cfg: &ExperimentConfig) -> Result<OutputRecord> {
    let setup = PulseSetup::new(cfg, None)?;
    let n = setup.n;
    let c_phys = cfg.c_phys();
    let cells = quadrant_cells(n);
    let f0 = setup.initial_state(((n / 4) as f64, (n / 4) as f64))?;
    let mut evo = Evolution::start(&setup.plan, &f0)?;
    let discard = 1usize << setup.plan.layout().ancillas[0].1;
    let levels = &cfg.readout.shot_levels;
    let seeds = cfg.readout.seeds.max(1) as u64;

    let mut curve = Table::new("energy_curve");
    let mut exact = Vec::new();
    // sampled[level][seed][step]
    let mut sampled = vec![vec![Vec::new(); seeds as usize]; levels.len()];
    let mut e0 = None;
    let mut total = Vec::new();
    for step in 0..=cfg.steps {
        if step > 0 {
            evo.step()?;
        }
        let map = evo.map();
        let f = decode_fields(&evo.state, &map)?.0;
        let e = acoustic_energy(&f.current(), c_phys, Some(&cells));
        let e0v = *e0.get_or_insert(e);
        exact.push(e / e0v);
        total.push(acoustic_energy(&f.current(), c_phys, None) / e0v);
        let obs = EnergyObservable::new(&map, c_phys, Some(&cells));
        let scale = map.ledger.product().powi(2);
        let sampler = postselected_sampler(&evo.state, evo.p_keep, discard);
        for (li, &shots) in levels.iter().enumerate() {
            let ests: Vec<_> = (0..seeds)
                .into_par_iter()
                .map(|s| {
                    let seed = derive_seed(cfg.seed, &[step as u64, li as u64, s]);
                    estimate_energy(&sampler.sample(shots, seed), &obs).map(|est| (seed, est))
                })
                .collect::<Result<_, _>>()?;
            for (s, (seed, est)) in ests.into_iter().enumerate() {
                // Mean over kept shots estimates ⟨O⟩ of the post-selected state.
                let val = est.mean / est.kept_ratio / scale / e0v;
                sampled[li][s].push(val);
                curve.push(vec![
                    step.to_string(),
                    num(e / e0v),
                    shots.to_string(),
                    seed.to_string(),
                    num(val),
                    num(est.kept_ratio),
                ]);
            }
        }
    }
    let mut rms = Table::new("energy_rms");
    let mut rec = OutputRecord::default();
    for (li, &shots) in levels.iter().enumerate() {
        let r = sampled[li]
            .iter()
            .map(|c| {
                let m: f64 = c.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / c.len() as f64;
                m.sqrt()
            })
            .sum::<f64>()
            / seeds as f64;
        rms.push(vec![shots.to_string(), num(r)]);
    }
    let onset = outflow_onset(&exact, &total);
    let max_rise = exact
        .windows(2)
        .skip(onset)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    rec.note("outflow_step", onset);
    rec.note("max_rise_after_outflow", num(max_rise));
    rec.note("final_normalized_energy", num(*exact.last().unwrap_or(&1.0)));
    rec.tables.push(curve);
    rec.tables.push(rms);
    Ok(rec)
}

/// First step at which energy outside the quadrant exceeds 1e-6 of the total.
pub fn outflow_onset(quadrant: &[f64], total: &[f64]) -> usize {
    quadrant
        .iter()
        .zip(total)
        .position(|(q, t)| t - q > 1e-6 * t)
        .unwrap_or(quadrant.len())
}

/// Repeated fixed-shot energy estimates on one evolved state.
pub fn run_energy_histogram(cfg: &ExperimentConfig) -> Result<OutputRecord> {
    let setup = PulseSetup::new(cfg, None)?;
    let n = setup.n;
    let c_phys = cfg.c_phys();
    let f0 = setup.initial_state(((n / 2) as f64, (n / 2) as f64))?;
    let mut evo = Evolution::start(&setup.plan, &f0)?;
    for _ in 0..cfg.steps {
        evo.step()?;
    }
    let map = evo.map();
    let obs = EnergyObservable::new(&map, c_phys, None);
    let (post, var_post) = energy_expectation(&evo.state, &obs);
    // The estimator averages over all shots, discarded ones counting 0.
    let p = evo.p_keep;
    let exact = p * post;
    let second = p * (var_post + post * post);
    let variance = second - exact * exact;
    let discard = 1usize << setup.plan.layout().ancillas[0].1;
    let sampler = postselected_sampler(&evo.state, p, discard);
    let shots = cfg.readout.shots;
    let reps = cfg.readout.repetitions.max(1);
    let ests: Vec<_> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, &[r]);
            estimate_energy(&sampler.sample(shots, seed), &obs).map(|e| (seed, e))
        })
        .collect::<Result<_, _>>()?;
    let mut samples = Table::new("energy_samples");
    for (r, (seed, e)) in ests.iter().enumerate() {
        samples.push(vec![r.to_string(), seed.to_string(), num(e.mean), num(e.stderr), num(e.kept_ratio)]);
    }
    let vals: Vec<f64> = ests.iter().map(|(_, e)| e.mean).collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let sd = if reps > 1 {
        (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mean_stderr = ests.iter().map(|(_, e)| e.stderr).sum::<f64>() / reps as f64;
    let mut hist = Table::new("energy_histogram");
    let bins = cfg.readout.histogram_bins.max(1);
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0u64; bins];
    for v in &vals {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        hist.push(vec![num(lo + b as f64 * width), num(lo + (b + 1) as f64 * width), c.to_string()]);
    }
    let mut summary = Table::new("energy_summary");
    summary.push(vec![
        num(exact),
        num(variance),
        shots.to_string(),
        reps.to_string(),
        num(mean),
        num(sd / (reps as f64).sqrt()),
        num(mean_stderr),
    ]);
    let mut rec = OutputRecord::default();
    rec.note("exact", num(exact));
    rec.note("variance", num(variance));
    rec.note("sample_sd", num(sd));
    rec.note("p_keep", num(p));
    rec.note("shots_for_1pct", shots_for_accuracy(0.01, Some(variance), exact)?);
    rec.tables.push(samples);
    rec.tables.push(hist);
    rec.tables.push(summary);
    Ok(rec)
}
