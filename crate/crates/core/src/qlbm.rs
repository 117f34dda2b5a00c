//! Circuits for one OSSLBM/Tau1 step and the field ↔ statevector encoding.
//!
//! Substate register `s` (4 qubits) after collision holds
//! (f1, f5, f2, f6, f3, f7, f4, f8, ·, ·, ·, ·, f0, ·, ·, ·); inputs and the
//! integrated moments live in slots 0.. . In two-level schemes the qubit `s_d`
//! selects the time level and slots 8..10 carry a scaled copy of the level-1
//! input that becomes the next level 2.

use crate::circuit::{
    ctl, nctl, pattern, phase_ladder, transposition, Ancilla, Circuit, Control, Gate,
    RegisterLayout,
};
use crate::classical_lbm::{BoundarySpec, Edge, EdgeCondition, ObjectMask};
use crate::error::{invalid, QlbmError, QlbmResult};
use crate::lattice::{coefficient_rows, extended_inputs, FieldState, LatticeConfig, ModelKind, PhysicsModel};
use crate::simulator::{init_amplitudes, run, RunMode, RunOutcome, Statevector};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const S_BITS: usize = 4;
pub const SLOTS: usize = 1 << S_BITS;

/// Post-collision slot of each D2Q9 velocity f0..f8.
pub const COLLISION_SLOT: [usize; 9] = [12, 0, 2, 4, 6, 1, 3, 5, 7];

/// Slots of the level-1 copy written by the collision in two-level schemes.
pub const COPY_SLOTS: [usize; 3] = [8, 9, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollisionMode {
    /// Inputs (V0, V1x, V1y).
    Linear,
    /// Six-term inputs with quadratic velocity products.
    NonlinearExtended,
}

impl CollisionMode {
    pub fn label(self) -> &'static str {
        match self {
            CollisionMode::Linear => "linear",
            CollisionMode::NonlinearExtended => "nonlinear-extended",
        }
    }

    pub fn input_width(self) -> usize {
        match self {
            CollisionMode::Linear => 3,
            CollisionMode::NonlinearExtended => 6,
        }
    }
}

/// True if the step carries two time levels (D2Q17, or any τ ≠ 1).
pub fn uses_two_levels(model: &PhysicsModel, config: &LatticeConfig) -> bool {
    config.two_levels() || model.tau != 1.0
}

/// (c1, c2, n, m) with n = √(c1² + c2²) and m = max(n, 1).
pub fn combine_factors(tau: f64) -> QlbmResult<(f64, f64, f64, f64)> {
    if !(tau > 0.5 && tau < 2.0) {
        return Err(invalid("tau", format!("{tau} not in (0.5, 2)")));
    }
    let c1 = (3.0 - 2.0 * tau) / (2.0 - tau);
    let c2 = (tau - 1.0) / (2.0 - tau);
    let n = (c1 * c1 + c2 * c2).sqrt();
    Ok((c1, c2, n, n.max(1.0)))
}

/// One positive amplitude factor: amplitude = field × Π factors.
#[derive(Clone, Debug, PartialEq)]
pub struct LedgerEntry {
    pub label: String,
    pub factor: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormLedger {
    pub entries: Vec<LedgerEntry>,
}

impl NormLedger {
    pub fn push(&mut self, label: &str, factor: f64) -> QlbmResult<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(invalid("ledger", format!("{label}: factor {factor} not positive")));
        }
        self.entries.push(LedgerEntry {
            label: label.to_string(),
            factor,
        });
        Ok(())
    }

    pub fn extend(&mut self, other: &NormLedger) {
        self.entries.extend(other.entries.iter().cloned());
    }

    pub fn product(&self) -> f64 {
        self.entries.iter().map(|e| e.factor).product()
    }
}

/// Placement of field variables in the register plus the accumulated ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingMap {
    pub layout: RegisterLayout,
    pub nx: usize,
    pub ny: usize,
    /// Slot of variable `v`.
    pub slots: Vec<usize>,
    pub levels: usize,
    pub ledger: NormLedger,
}

impl EncodingMap {
    pub fn new(layout: RegisterLayout, nx: usize, ny: usize, nvars: usize) -> QlbmResult<Self> {
        if 1usize << layout.q1.len() != nx || 1usize << layout.q2.len() != ny {
            return Err(QlbmError::Shape(format!("{nx}x{ny} grid does not match layout")));
        }
        if layout.s.len() != S_BITS || nvars > 8 {
            return Err(QlbmError::Shape("substate register too small".into()));
        }
        if layout.s[0] != layout.lattice_bits() || layout.s_d.is_some_and(|d| d != layout.s[3] + 1)
        {
            return Err(QlbmError::Shape("registers must be contiguous".into()));
        }
        Ok(Self {
            levels: if layout.s_d.is_some() { 2 } else { 1 },
            layout,
            nx,
            ny,
            slots: (0..nvars).collect(),
            ledger: NormLedger::default(),
        })
    }

    pub fn sites(&self) -> usize {
        self.nx * self.ny
    }

    /// Basis index of (site, level, slot) with all ancillas 0.
    pub fn index(&self, site: usize, level: usize, slot: usize) -> usize {
        site | (slot << self.layout.s[0]) | (level << (self.layout.s[0] + S_BITS))
    }

    /// Bits covering lattice, substate and level registers.
    pub fn data_mask(&self) -> usize {
        let bits = self.layout.s[0] + S_BITS + usize::from(self.levels == 2);
        (1usize << bits) - 1
    }

    /// (site, level, slot) of a basis index, ignoring ancillas.
    pub fn locate(&self, index: usize) -> (usize, usize, usize) {
        let site = index & (self.sites() - 1);
        let slot = (index >> self.layout.s[0]) & (SLOTS - 1);
        let level = if self.levels == 2 {
            (index >> (self.layout.s[0] + S_BITS)) & 1
        } else {
            0
        };
        (site, level, slot)
    }

    /// Same map reading the first `n` slots.
    pub fn reading(&self, n: usize) -> Self {
        let mut m = self.clone();
        m.slots.truncate(n);
        m
    }

    pub fn with_ledger(&self, ledger: NormLedger) -> Self {
        let mut m = self.clone();
        m.ledger = ledger;
        m
    }
}

/// Loads `fields` into amplitudes; the ledger gains the encoding norm.
pub fn encode_fields(fields: &FieldState, map: &EncodingMap) -> QlbmResult<(Statevector, NormLedger)> {
    if fields.nx != map.nx || fields.ny != map.ny {
        return Err(QlbmError::Shape("grid differs from map".into()));
    }
    if fields.nvars() != map.slots.len() {
        return Err(QlbmError::Arity {
            expected: map.slots.len(),
            got: fields.nvars(),
        });
    }
    if fields.nlevels() != map.levels {
        return Err(QlbmError::Shape(format!(
            "{} levels, map expects {}",
            fields.nlevels(),
            map.levels
        )));
    }
    let mut amps = vec![C64::new(0.0, 0.0); 1 << map.layout.n];
    for (l, level) in fields.levels.iter().enumerate() {
        for (v, grid) in level.iter().enumerate() {
            for (site, &x) in grid.iter().enumerate() {
                amps[map.index(site, l, map.slots[v])] = C64::new(x, 0.0);
            }
        }
    }
    let (psi, norm) = init_amplitudes(amps)?;
    let mut ledger = map.ledger.clone();
    ledger.push("encoding norm", 1.0 / norm)?;
    Ok((psi, ledger))
}

/// Reads the mapped slots with ancillas 0 and divides out the ledger.
///
/// Returns the fields and the probability outside the read amplitudes.
pub fn decode_fields(psi: &Statevector, map: &EncodingMap) -> QlbmResult<(FieldState, f64)> {
    if psi.n != map.layout.n {
        return Err(QlbmError::LayoutMismatch);
    }
    let total = psi.norm_sqr();
    if total <= 0.0 {
        return Err(QlbmError::ZeroProbability { index: 0 });
    }
    let scale = 1.0 / map.ledger.product();
    let mut out = FieldState::zeros(map.nx, map.ny, map.slots.len(), map.levels)?;
    let mut read = 0.0;
    for l in 0..map.levels {
        for (v, &slot) in map.slots.iter().enumerate() {
            for site in 0..map.sites() {
                let z = psi.amps[map.index(site, l, slot)];
                read += z.norm_sqr();
                out.levels[l][v][site] = z.re * scale;
            }
        }
    }
    Ok((out, ((total - read) / total).max(0.0)))
}

/// Collision matrix and its SVD-based embedding data.
#[derive(Clone, Debug)]
pub struct CollisionEmbedding {
    pub c: DMatrix<f64>,
    pub s_c: f64,
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v_t: DMatrix<f64>,
    pub sigma1: Vec<C64>,
    pub sigma2: Vec<C64>,
}

impl CollisionEmbedding {
    pub fn from_matrix(c: DMatrix<f64>) -> QlbmResult<Self> {
        if c.nrows() != SLOTS || c.ncols() != SLOTS {
            return Err(QlbmError::Shape(format!("collision matrix {}x{}", c.nrows(), c.ncols())));
        }
        let (u, sigma, v_t) = jacobi_svd(&c)?;
        let s_c = sigma[0];
        if s_c <= 0.0 {
            return Err(QlbmError::ZeroVector);
        }
        let sigma1: Vec<C64> = sigma
            .iter()
            .map(|s| {
                let r = (s / s_c).min(1.0);
                C64::new(r, (1.0 - r * r).max(0.0).sqrt())
            })
            .collect();
        let sigma2 = sigma1.iter().map(|z| z.conj()).collect();
        Ok(Self {
            c,
            s_c,
            u,
            sigma,
            v_t,
            sigma1,
            sigma2,
        })
    }

    /// U·diag(σ/s_C)·V†.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            SLOTS,
            self.sigma.iter().map(|s| s / self.s_c),
        ));
        &self.u * d * &self.v_t
    }
}

/// One-sided Jacobi SVD with singular values sorted descending.
///
/// Used instead of the bidiagonal solver for its smaller reconstruction error
/// on these rank-deficient matrices.
fn jacobi_svd(c: &DMatrix<f64>) -> QlbmResult<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let n = c.ncols();
    let mut a = c.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let mut converged = false;
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for m in [&mut a, &mut v] {
                    for r in 0..m.nrows() {
                        let (x, y) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = cs * x - sn * y;
                        m[(r, q)] = sn * x + cs * y;
                    }
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(QlbmError::NoConvergence("Jacobi SVD".into()));
    }
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let tol = norms[order[0]] * 1e-14;
    let rows = c.nrows();
    let mut u = DMatrix::<f64>::zeros(rows, n);
    let mut v_t = DMatrix::<f64>::zeros(n, n);
    let mut sigma = vec![0.0; n];
    let mut filled = 0;
    for (k, &j) in order.iter().enumerate() {
        v_t.set_row(k, &v.column(j).transpose());
        if norms[j] > tol {
            sigma[k] = norms[j];
            u.set_column(k, &(a.column(j) / norms[j]));
            filled = k + 1;
        }
    }
    // Complete U with an orthonormal basis of the left null space.
    let mut k = filled;
    for e in 0..rows {
        if k == n {
            break;
        }
        let mut w = nalgebra::DVector::<f64>::zeros(rows);
        w[e] = 1.0;
        for _ in 0..2 {
            for i in 0..k {
                let d = u.column(i).dot(&w);
                w -= u.column(i) * d;
            }
        }
        let nw = w.norm();
        if nw > 0.5 {
            u.set_column(k, &(w / nw));
            k += 1;
        }
    }
    Ok((u, sigma, v_t))
}

/// Builds C for `model` in `mode`, normalizes it by σ_max and factors it.
pub fn build_collision_matrix(
    model: &PhysicsModel,
    config: &LatticeConfig,
    mode: CollisionMode,
) -> QlbmResult<CollisionEmbedding> {
    let base = config.base();
    if base.dim != 2 || base.m1() != 9 {
        return Err(invalid("config", "collision circuits are built for D2Q9-based lattices"));
    }
    let nonlinear_model = matches!(
        model.kind,
        ModelKind::LowMachAthermal | ModelKind::IncompressibleAthermal { .. }
    );
    if mode == CollisionMode::NonlinearExtended && !nonlinear_model {
        return Err(QlbmError::ModelMode {
            model: model.kind.label(),
            mode: mode.label(),
        });
    }
    let model = match mode {
        CollisionMode::Linear => linearized(model),
        CollisionMode::NonlinearExtended => model.clone(),
    };
    let rows = coefficient_rows(&model, config)?;
    let mut c = DMatrix::zeros(SLOTS, SLOTS);
    for (a, row) in rows.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            c[(COLLISION_SLOT[a], j)] = w;
        }
    }
    if uses_two_levels(&model, config) {
        let (_, _, _, m) = combine_factors(model.tau)?;
        for (j, &slot) in COPY_SLOTS.iter().enumerate() {
            c[(slot, j)] = 1.0 / (4.0 * m);
        }
    }
    CollisionEmbedding::from_matrix(c)
}

/// Linear model used in linear mode: nonlinear models are linearized about
/// rest (unit density or depth, zero velocity).
pub fn linearized(model: &PhysicsModel) -> PhysicsModel {
    let kind = match &model.kind {
        ModelKind::LowMachAthermal => ModelKind::LinearAcoustics {
            rho0: 1.0,
            u0: vec![0.0, 0.0],
        },
        ModelKind::IncompressibleAthermal { rho0 } => ModelKind::LinearAcoustics {
            rho0: *rho0,
            u0: vec![0.0, 0.0],
        },
        ModelKind::ShallowWater { g } => ModelKind::LinearShallowWater {
            g: *g,
            h0: 1.0,
            u0: vec![0.0, 0.0],
        },
        k => k.clone(),
    };
    PhysicsModel {
        kind,
        tau: model.tau,
    }
}

fn dense(m: &DMatrix<f64>) -> Vec<C64> {
    (0..m.nrows())
        .flat_map(|r| (0..m.ncols()).map(move |c| C64::new(m[(r, c)], 0.0)))
        .collect()
}

fn diagonal(d: &[C64]) -> Vec<C64> {
    let n = d.len();
    let mut out = vec![C64::new(0.0, 0.0); n * n];
    for (k, z) in d.iter().enumerate() {
        out[k * n + k] = *z;
    }
    out
}

fn need(layout: &RegisterLayout, role: Ancilla) -> QlbmResult<usize> {
    layout
        .ancilla(role)
        .ok_or_else(|| invalid("layout", format!("missing ancilla {}", role.label())))
}

/// Unitary gates whose a_c = 0 block is C/s_C (no measurement).
pub fn svd_embed(emb: &CollisionEmbedding, layout: &RegisterLayout) -> QlbmResult<Vec<Gate>> {
    let ac = need(layout, Ancilla::Collision)?;
    let s = layout.s.clone();
    Ok(vec![
        Gate::Unitary {
            targets: s.clone(),
            controls: vec![],
            matrix: dense(&emb.v_t),
        },
        Gate::H(ac),
        Gate::Unitary {
            targets: s.clone(),
            controls: vec![nctl(ac)],
            matrix: diagonal(&emb.sigma1),
        },
        Gate::Unitary {
            targets: s.clone(),
            controls: vec![ctl(ac)],
            matrix: diagonal(&emb.sigma2),
        },
        Gate::H(ac),
        Gate::Unitary {
            targets: s,
            controls: vec![],
            matrix: dense(&emb.u),
        },
    ])
}

fn s_regs(layout: &RegisterLayout) -> QlbmResult<(usize, usize, usize, usize)> {
    if layout.s.len() != S_BITS {
        return Err(QlbmError::Shape("substate register must have 4 qubits".into()));
    }
    Ok((layout.s[0], layout.s[1], layout.s[2], layout.s[3]))
}

/// Streaming by QFT phase ladders; level 2 (s_d = 1) moves two cells.
pub fn build_propagation(layout: &RegisterLayout) -> QlbmResult<Vec<Gate>> {
    let (s0, _, _, s3) = s_regs(layout)?;
    let s = layout.s.clone();
    let mut g = Vec::new();
    let ladders = |reg: &[usize], g: &mut Vec<Gate>| {
        for (shift, pol) in [(1i64, false), (-1, true)] {
            let base = [nctl(s3), Control { qubit: s0, on: pol }];
            g.extend(phase_ladder(reg, shift, &base));
            if let Some(sd) = layout.s_d {
                let mut c = base.to_vec();
                c.push(ctl(sd));
                g.extend(phase_ladder(reg, shift, &c));
            }
        }
    };
    // X1: f1, f5 leave the shift group.
    g.extend(transposition(&s, 0, 14, &[]));
    g.extend(transposition(&s, 1, 15, &[]));
    g.push(Gate::QFT(layout.q1.clone()));
    g.push(Gate::QFT(layout.q2.clone()));
    ladders(&layout.q2, &mut g);
    // X2: f1, f5 back; f3, f7 out; f8 to the + slot.
    g.extend(transposition(&s, 0, 14, &[]));
    g.extend(transposition(&s, 1, 15, &[]));
    g.extend(transposition(&s, 4, 14, &[]));
    g.extend(transposition(&s, 5, 15, &[]));
    g.extend(transposition(&s, 6, 7, &[]));
    ladders(&layout.q1, &mut g);
    g.push(Gate::IQFT(layout.q1.clone()));
    g.push(Gate::IQFT(layout.q2.clone()));
    // X3
    g.extend(transposition(&s, 6, 7, &[]));
    g.extend(transposition(&s, 4, 14, &[]));
    g.extend(transposition(&s, 5, 15, &[]));
    Ok(g)
}

/// Sums streamed distributions into (ρ, u1, u2)/4 at slots 0, 1, 2.
pub fn build_integration(layout: &RegisterLayout, bits: &mut usize) -> QlbmResult<Vec<Gate>> {
    let (s0, s1, s2, s3) = s_regs(layout)?;
    let ai = need(layout, Ancilla::Integration)?;
    let s = layout.s.clone();
    let quarter_turn = PI / 2.0;
    let mut g = vec![
        Gate::CH {
            controls: vec![nctl(s3)],
            t: s0,
        },
        Gate::CH {
            controls: vec![ctl(s0), ctl(s1), nctl(s3)],
            t: s2,
        },
        Gate::CH {
            controls: vec![nctl(s0), nctl(s3)],
            t: s2,
        },
        Gate::MCX {
            controls: vec![nctl(s0), ctl(s2), nctl(s3)],
            t: ai,
        },
        Gate::CRY {
            controls: vec![ctl(s0), nctl(s1), nctl(s3)],
            t: ai,
            theta: quarter_turn,
        },
        Gate::CRY {
            controls: pattern(&s, 12),
            t: ai,
            theta: 2.0 * (1.0 / (2.0 * 2f64.sqrt())).acos(),
        },
        Gate::MCX {
            controls: vec![ctl(s0), ctl(s1), nctl(s3)],
            t: s2,
        },
        Gate::CH {
            controls: vec![ctl(s0), nctl(s3)],
            t: s1,
        },
        Gate::CH {
            controls: vec![nctl(s0), nctl(s2), nctl(s3)],
            t: s1,
        },
        Gate::MCX {
            controls: vec![nctl(s0), nctl(s1), ctl(s2)],
            t: s3,
        },
        Gate::CH {
            controls: vec![nctl(s0), nctl(s1), nctl(s3)],
            t: s2,
        },
        measure(ai, bits),
        Gate::CRY {
            controls: vec![ctl(s0), nctl(s1), nctl(s3)],
            t: ai,
            theta: quarter_turn,
        },
        Gate::MCX {
            controls: vec![ctl(s1), nctl(s2), nctl(s3)],
            t: ai,
        },
        Gate::MCX {
            controls: pattern(&s, 4),
            t: ai,
        },
        Gate::MCX {
            controls: pattern(&s, 7),
            t: ai,
        },
    ];
    g.extend(transposition(&s[..3], 5, 2, &[nctl(s3)]));
    g.push(measure(ai, bits));
    Ok(g)
}

fn measure(qubit: usize, bits: &mut usize) -> Gate {
    *bits += 1;
    Gate::Measure {
        qubit,
        bit: *bits - 1,
    }
}

fn flag_qubit(layout: &RegisterLayout) -> QlbmResult<usize> {
    layout
        .ancilla(Ancilla::Boundary)
        .or_else(|| layout.ancilla(Ancilla::Integration))
        .ok_or_else(|| invalid("layout", "no flag ancilla"))
}

fn ones(k: usize) -> usize {
    (1usize << k) - 1
}

/// Region flags for cells within two cells of bounded edges.
fn region_gates(bc: &BoundarySpec, layout: &RegisterLayout) -> QlbmResult<Vec<Gate>> {
    let mut g = Vec::new();
    for (bounded, reg, role) in [
        (bc.x_bounded(), &layout.q1, Ancilla::RegionX),
        (bc.y_bounded(), &layout.q2, Ancilla::RegionY),
    ] {
        if !bounded {
            continue;
        }
        let a = need(layout, role)?;
        if reg.len() < 2 {
            return Err(invalid("grid", "bounded dimensions need at least 4 cells"));
        }
        let hi = &reg[1..];
        g.push(Gate::MCX {
            controls: pattern(hi, 0),
            t: a,
        });
        g.push(Gate::MCX {
            controls: pattern(hi, ones(hi.len())),
            t: a,
        });
    }
    Ok(g)
}

/// Time-level combination c1·A + c2·B, level-2 cleanup and the copy shift.
///
/// Returns the gates and the amplitude factor 1/m.
pub fn build_combine(
    tau: f64,
    bc: &BoundarySpec,
    layout: &RegisterLayout,
    bits: &mut usize,
) -> QlbmResult<(Vec<Gate>, f64)> {
    let (_, _, s2, s3) = s_regs(layout)?;
    let sd = layout
        .s_d
        .ok_or_else(|| invalid("layout", "combination needs the time-level qubit"))?;
    let flag = flag_qubit(layout)?;
    let (c1, c2, n, m) = combine_factors(tau)?;
    let moments = [nctl(s2), nctl(s3)];
    let mixing = c2 != 0.0;
    let mut interior: Vec<Control> = Vec::new();
    let mut g = Vec::new();
    let region = if mixing { region_gates(bc, layout)? } else { Vec::new() };
    if mixing {
        g.extend(region.iter().cloned());
        if bc.x_bounded() {
            interior.push(nctl(need(layout, Ancilla::RegionX)?));
        }
        if bc.y_bounded() {
            interior.push(nctl(need(layout, Ancilla::RegionY)?));
        }
        let mut c = interior.clone();
        c.extend(moments);
        g.push(Gate::CRY {
            controls: c,
            t: sd,
            theta: 2.0 * (-c2).atan2(c1),
        });
    }
    g.push(Gate::MCX {
        controls: vec![ctl(sd), nctl(s2)],
        t: flag,
    });
    g.push(measure(flag, bits));
    let level1: Vec<Control> = [nctl(sd)].into_iter().chain(moments).collect();
    let with_interior = |extra: &[Control]| -> Vec<Control> {
        interior.iter().chain(extra).copied().collect()
    };
    let mut scaled = false;
    if mixing && n < 1.0 {
        g.push(Gate::CRY {
            controls: with_interior(&level1),
            t: flag,
            theta: 2.0 * n.acos(),
        });
        scaled = true;
    } else if mixing && n > 1.0 && !interior.is_empty() {
        let th = 2.0 * (1.0 / n).acos();
        g.push(Gate::CRY {
            controls: level1.clone(),
            t: flag,
            theta: th,
        });
        g.push(Gate::CRY {
            controls: with_interior(&level1),
            t: flag,
            theta: -th,
        });
        scaled = true;
    }
    if scaled {
        g.push(measure(flag, bits));
    }
    // (s_d=0, 8+v) ↔ (s_d=1, v): the copy becomes the next level 2.
    g.extend(transposition(&[s3, sd], 0b01, 0b10, &[nctl(s2)]));
    g.extend(region);
    Ok((g, 1.0 / m))
}

fn outer_value(e: Edge, k: usize) -> usize {
    match e {
        Edge::Left | Edge::Bottom => 0,
        Edge::Right | Edge::Top => ones(k),
    }
}

/// Edge conditions on level-1 moments: DirichletZero and ZeroGradient.
/// Inlet edges are left to the classical side.
///
/// Returns the gates and the amplitude factor (1/√2 per pass with a
/// zero-gradient edge).
pub fn build_boundary(
    bc: &BoundarySpec,
    layout: &RegisterLayout,
    bits: &mut usize,
) -> QlbmResult<(Vec<Gate>, f64)> {
    bc.validate()?;
    let (_, _, s2, s3) = s_regs(layout)?;
    let mut g = Vec::new();
    let mut factor = 1.0;
    let level: Vec<Control> = layout.s_d.map(nctl).into_iter().collect();
    let slot_sets: Vec<Vec<Control>> = if (0..3).all(|v| bc.applies_to(v)) {
        vec![vec![nctl(s2), nctl(s3)]]
    } else {
        (0..3)
            .filter(|&v| bc.applies_to(v))
            .map(|v| pattern(&layout.s, v))
            .collect()
    };
    let passes = [
        (&layout.q1, [Edge::Left, Edge::Right]),
        (&layout.q2, [Edge::Bottom, Edge::Top]),
    ];
    for (reg, edges) in passes {
        let active: Vec<Edge> = edges
            .into_iter()
            .filter(|&e| {
                matches!(
                    bc.edge(e),
                    EdgeCondition::DirichletZero | EdgeCondition::ZeroGradient
                )
            })
            .collect();
        if active.is_empty() {
            continue;
        }
        if reg.len() < 2 {
            return Err(invalid("grid", "bounded dimensions need at least 4 cells"));
        }
        let flag = flag_qubit(layout)?;
        let k = reg.len();
        let sel = |extra: &[Control], ss: &[Control]| -> Vec<Control> {
            extra.iter().chain(&level).chain(ss).copied().collect()
        };
        for &e in &active {
            for ss in &slot_sets {
                g.push(Gate::MCX {
                    controls: sel(&pattern(reg, outer_value(e, k)), ss),
                    t: flag,
                });
            }
        }
        g.push(measure(flag, bits));
        let zg: Vec<Edge> = active
            .iter()
            .copied()
            .filter(|&e| matches!(bc.edge(e), EdgeCondition::ZeroGradient))
            .collect();
        if zg.is_empty() {
            continue;
        }
        let pair = |e: Edge| pattern(&reg[1..], outer_value(e, k - 1));
        for &e in &zg {
            let theta = if outer_value(e, k) == 0 { -PI / 2.0 } else { PI / 2.0 };
            for ss in &slot_sets {
                g.push(Gate::CRY {
                    controls: sel(&pair(e), ss),
                    t: reg[0],
                    theta,
                });
            }
        }
        // Everything outside the split pairs takes the same 1/√2.
        g.push(Gate::RY(flag, PI / 2.0));
        for &e in &zg {
            for ss in &slot_sets {
                g.push(Gate::CRY {
                    controls: sel(&pair(e), ss),
                    t: flag,
                    theta: -PI / 2.0,
                });
            }
        }
        g.push(measure(flag, bits));
        factor *= FRAC_1_SQRT_2;
    }
    Ok((g, factor))
}

/// Merges site-index cubes (value, care mask) differing in one cared bit.
fn merge_cubes(cells: &[usize], width: usize) -> Vec<(usize, usize)> {
    let full = ones(width);
    let mut cubes: Vec<(usize, usize)> = cells.iter().map(|&c| (c, full)).collect();
    loop {
        let mut merged = false;
        'outer: for i in 0..cubes.len() {
            for j in i + 1..cubes.len() {
                let (a, b) = (cubes[i], cubes[j]);
                let diff = (a.0 ^ b.0) & a.1;
                if a.1 == b.1 && diff.count_ones() == 1 {
                    cubes[i] = (a.0 & !diff, a.1 & !diff);
                    cubes.swap_remove(j);
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            return cubes;
        }
    }
}

/// Flags every amplitude on masked cells.
pub fn build_object(
    mask: &ObjectMask,
    nx: usize,
    ny: usize,
    layout: &RegisterLayout,
    bits: &mut usize,
) -> QlbmResult<Vec<Gate>> {
    if mask.is_empty() {
        return Ok(Vec::new());
    }
    let flag = flag_qubit(layout)?;
    let lattice: Vec<usize> = layout.q1.iter().chain(&layout.q2).copied().collect();
    let mut g: Vec<Gate> = merge_cubes(&mask.cells(nx, ny), lattice.len())
        .into_iter()
        .map(|(value, care)| Gate::MCX {
            controls: lattice
                .iter()
                .enumerate()
                .filter(|(j, _)| (care >> j) & 1 == 1)
                .map(|(j, &q)| Control {
                    qubit: q,
                    on: (value >> j) & 1 == 1,
                })
                .collect(),
            t: flag,
        })
        .collect();
    g.push(measure(flag, bits));
    Ok(g)
}

/// Full single-step circuit with its labeled parts and ledger factors.
#[derive(Clone, Debug)]
pub struct StepCircuitPlan {
    pub model: PhysicsModel,
    pub config: LatticeConfig,
    pub bc: BoundarySpec,
    pub mask: ObjectMask,
    pub mode: CollisionMode,
    pub map: EncodingMap,
    pub embedding: CollisionEmbedding,
    /// Labeled sub-circuits in execution order.
    pub parts: Vec<(String, Vec<Gate>)>,
    pub circuit: Circuit,
    /// Amplitude factors applied by one step.
    pub step_ledger: NormLedger,
    /// Expected survival probability, when known.
    pub expected_p_keep: Option<f64>,
}

impl StepCircuitPlan {
    pub fn layout(&self) -> &RegisterLayout {
        &self.circuit.layout
    }

    /// The labeled part as a standalone circuit.
    pub fn part(&self, label: &str) -> Option<Circuit> {
        self.parts.iter().find(|(l, _)| l == label).map(|(l, gates)| {
            let mut c = Circuit::new(self.circuit.layout.clone());
            c.push_block(l, gates.clone());
            c
        })
    }

    pub fn two_levels(&self) -> bool {
        self.map.levels == 2
    }

    pub fn step_factor(&self) -> f64 {
        self.step_ledger.product()
    }
}

fn bounded_edges(bc: &BoundarySpec) -> bool {
    Edge::ORDER.iter().any(|&e| {
        matches!(
            bc.edge(e),
            EdgeCondition::DirichletZero | EdgeCondition::ZeroGradient
        )
    })
}

/// Layout for a step on an `nx`×`ny` grid.
pub fn step_layout(
    model: &PhysicsModel,
    config: &LatticeConfig,
    bc: &BoundarySpec,
    mask: &ObjectMask,
    nx: usize,
    ny: usize,
) -> QlbmResult<RegisterLayout> {
    if !nx.is_power_of_two() || !ny.is_power_of_two() || nx < 2 || ny < 2 {
        return Err(QlbmError::Shape(format!("{nx}x{ny} is not a power-of-two grid")));
    }
    let two = uses_two_levels(model, config);
    let mut anc = vec![Ancilla::Collision, Ancilla::Integration];
    if bounded_edges(bc) || !mask.is_empty() {
        anc.push(Ancilla::Boundary);
    }
    if two && model.tau != 1.0 {
        if bc.x_bounded() {
            anc.push(Ancilla::RegionX);
        }
        if bc.y_bounded() {
            anc.push(Ancilla::RegionY);
        }
    }
    RegisterLayout::new(
        nx.trailing_zeros() as usize,
        ny.trailing_zeros() as usize,
        S_BITS,
        two,
        &anc,
    )
}

/// Assembles collision → propagation → integration → combine → boundary → object.
pub fn build_step(
    model: &PhysicsModel,
    config: &LatticeConfig,
    bc: &BoundarySpec,
    mask: &ObjectMask,
    nx: usize,
    ny: usize,
    mode: CollisionMode,
) -> QlbmResult<StepCircuitPlan> {
    bc.validate()?;
    let layout = step_layout(model, config, bc, mask, nx, ny)?;
    let map = EncodingMap::new(layout.clone(), nx, ny, mode.input_width())?;
    let embedding = build_collision_matrix(model, config, mode)?;
    let mut bits = 0usize;
    let mut ledger = NormLedger::default();
    let mut parts = Vec::new();

    let mut collision = svd_embed(&embedding, &layout)?;
    collision.push(measure(need(&layout, Ancilla::Collision)?, &mut bits));
    ledger.push("collision 1/s_C", 1.0 / embedding.s_c)?;
    parts.push(("collision".to_string(), collision));
    parts.push(("propagation".to_string(), build_propagation(&layout)?));
    parts.push(("integration".to_string(), build_integration(&layout, &mut bits)?));
    ledger.push("integration", 0.25)?;
    if layout.s_d.is_some() {
        let (g, f) = build_combine(model.tau, bc, &layout, &mut bits)?;
        parts.push(("combine".to_string(), g));
        ledger.push("time-level combination", f)?;
    }
    let (g, f) = build_boundary(bc, &layout, &mut bits)?;
    parts.push(("boundary".to_string(), g));
    ledger.push("boundary", f)?;
    parts.push((
        "object".to_string(),
        build_object(mask, nx, ny, &layout, &mut bits)?,
    ));

    let mut circuit = Circuit::new(layout);
    for (label, gates) in &parts {
        circuit.push_block(label, gates.clone());
    }
    Ok(StepCircuitPlan {
        model: model.clone(),
        config: config.clone(),
        bc: bc.clone(),
        mask: mask.clone(),
        mode,
        map,
        embedding,
        parts,
        circuit,
        step_ledger: ledger,
        expected_p_keep: None,
    })
}

/// Circuit inputs for `fields` (3 moments per level) in `plan`'s mode.
pub fn circuit_inputs(plan: &StepCircuitPlan, fields: &FieldState) -> QlbmResult<FieldState> {
    if fields.nvars() != 3 {
        return Err(QlbmError::Arity {
            expected: 3,
            got: fields.nvars(),
        });
    }
    match plan.mode {
        CollisionMode::Linear => Ok(fields.clone()),
        CollisionMode::NonlinearExtended => {
            let mut out = FieldState::zeros(fields.nx, fields.ny, 6, fields.nlevels())?;
            for l in 0..fields.nlevels() {
                for i in 0..fields.sites() {
                    let lv = &fields.levels[l];
                    let e = extended_inputs(&plan.model, lv[0][i], [lv[1][i], lv[2][i]])?;
                    for (v, x) in e.into_iter().enumerate() {
                        out.levels[l][v][i] = x;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Result of running one quantum step on classical fields.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub fields: FieldState,
    pub p_keep: f64,
    pub residual: f64,
    pub run: RunOutcome,
    /// Ledger of the decoded output.
    pub ledger: NormLedger,
}

/// Encodes `fields`, runs the step circuit with post-selection and decodes.
pub fn quantum_step(plan: &StepCircuitPlan, fields: &FieldState) -> QlbmResult<StepOutcome> {
    let input = circuit_inputs(plan, fields)?;
    let (psi, mut ledger) = encode_fields(&input, &plan.map)?;
    let out = run(&plan.circuit, &psi, RunMode::PostSelectZero)?;
    ledger.extend(&plan.step_ledger);
    ledger.push("post-selection", 1.0 / out.p_keep.sqrt())?;
    let map = plan.map.reading(3).with_ledger(ledger.clone());
    let (dec, residual) = decode_fields(&out.state, &map)?;
    Ok(StepOutcome {
        fields: dec,
        p_keep: out.p_keep,
        residual,
        run: out,
        ledger,
    })
}
