//! Gate-level circuit representation with labeled blocks, mid-circuit
//! measurement and classically conditioned sub-circuits.
//!
//! Qubit 0 of every register is its least significant bit.

use crate::error::{QlbmError, QlbmResult};
use num_complex::Complex64 as C64;
use std::f64::consts::PI;
use std::fmt::{self, Write as _};

/// Control qubit with polarity; `on == false` means conditioned on |0⟩.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Control {
    pub qubit: usize,
    pub on: bool,
}

/// Positive control.
pub fn ctl(qubit: usize) -> Control {
    Control { qubit, on: true }
}

/// Negative control.
pub fn nctl(qubit: usize) -> Control {
    Control { qubit, on: false }
}

/// Controls selecting `value` on `qubits` (bit j of `value` for `qubits[j]`).
pub fn pattern(qubits: &[usize], value: usize) -> Vec<Control> {
    qubits
        .iter()
        .enumerate()
        .map(|(j, &q)| Control {
            qubit: q,
            on: (value >> j) & 1 == 1,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    H(usize),
    X(usize),
    /// diag(1, e^{iθ}).
    P(usize, f64),
    /// exp(−iθY/2).
    RY(usize, f64),
    CX { c: usize, t: usize },
    MCX { controls: Vec<Control>, t: usize },
    CP { controls: Vec<Control>, t: usize, theta: f64 },
    CH { controls: Vec<Control>, t: usize },
    CRY { controls: Vec<Control>, t: usize, theta: f64 },
    /// Row-major 2^k × 2^k matrix on `targets`, targets[0] least significant.
    Unitary {
        targets: Vec<usize>,
        controls: Vec<Control>,
        matrix: Vec<C64>,
    },
    QFT(Vec<usize>),
    IQFT(Vec<usize>),
    Measure { qubit: usize, bit: usize },
    /// Runs `body` iff classical bit `bit` is 0.
    Conditional { bit: usize, body: Vec<Gate> },
}

impl Gate {
    /// All qubits the gate acts on, controls first.
    pub fn qubits(&self) -> Vec<usize> {
        let cq = |cs: &[Control]| cs.iter().map(|c| c.qubit).collect::<Vec<_>>();
        match self {
            Gate::H(t) | Gate::X(t) | Gate::P(t, _) | Gate::RY(t, _) => vec![*t],
            Gate::CX { c, t } => vec![*c, *t],
            Gate::MCX { controls, t }
            | Gate::CP { controls, t, .. }
            | Gate::CH { controls, t }
            | Gate::CRY { controls, t, .. } => {
                let mut q = cq(controls);
                q.push(*t);
                q
            }
            Gate::Unitary {
                targets, controls, ..
            } => {
                let mut q = cq(controls);
                q.extend(targets);
                q
            }
            Gate::QFT(t) | Gate::IQFT(t) => t.clone(),
            Gate::Measure { qubit, .. } => vec![*qubit],
            Gate::Conditional { body, .. } => {
                let mut q: Vec<usize> = body.iter().flat_map(|g| g.qubits()).collect();
                q.sort_unstable();
                q.dedup();
                q
            }
        }
    }

    /// Adjoint gate; `None` for measurements and conditionals.
    pub fn adjoint(&self) -> Option<Gate> {
        Some(match self {
            Gate::P(t, th) => Gate::P(*t, -th),
            Gate::RY(t, th) => Gate::RY(*t, -th),
            Gate::CP { controls, t, theta } => Gate::CP {
                controls: controls.clone(),
                t: *t,
                theta: -theta,
            },
            Gate::CRY { controls, t, theta } => Gate::CRY {
                controls: controls.clone(),
                t: *t,
                theta: -theta,
            },
            Gate::Unitary {
                targets,
                controls,
                matrix,
            } => {
                let d = 1usize << targets.len();
                let mut m = vec![C64::new(0.0, 0.0); d * d];
                for r in 0..d {
                    for c in 0..d {
                        m[c * d + r] = matrix[r * d + c].conj();
                    }
                }
                Gate::Unitary {
                    targets: targets.clone(),
                    controls: controls.clone(),
                    matrix: m,
                }
            }
            Gate::QFT(t) => Gate::IQFT(t.clone()),
            Gate::IQFT(t) => Gate::QFT(t.clone()),
            Gate::Measure { .. } | Gate::Conditional { .. } => return None,
            g => g.clone(),
        })
    }

    fn mnemonic(&self) -> &'static str {
        match self {
            Gate::H(_) => "H",
            Gate::X(_) => "X",
            Gate::P(..) => "P",
            Gate::RY(..) => "RY",
            Gate::CX { .. } => "CX",
            Gate::MCX { .. } => "MCX",
            Gate::CP { .. } => "CP",
            Gate::CH { .. } => "CH",
            Gate::CRY { .. } => "CRY",
            Gate::Unitary { .. } => "U",
            Gate::QFT(_) => "QFT",
            Gate::IQFT(_) => "IQFT",
            Gate::Measure { .. } => "MEASURE",
            Gate::Conditional { .. } => "IF",
        }
    }
}

/// Role of a computational ancilla.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ancilla {
    /// a_c, selects the LCU branch of the collision embedding.
    Collision,
    /// a_i, receives integration garbage.
    Integration,
    /// a_b, residual flag for boundary and object blocks.
    Boundary,
    /// Marks cells within two cells of a bounded x edge.
    RegionX,
    /// Marks cells within two cells of a bounded y edge.
    RegionY,
    /// a_s, step flag for conditioned chaining.
    Step,
}

impl Ancilla {
    pub fn label(self) -> &'static str {
        match self {
            Ancilla::Collision => "a_c",
            Ancilla::Integration => "a_i",
            Ancilla::Boundary => "a_b",
            Ancilla::RegionX => "a_x",
            Ancilla::RegionY => "a_y",
            Ancilla::Step => "a_s",
        }
    }
}

/// Qubit assignment, ordered [q1, q2, s, s_d, ancillas].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterLayout {
    pub q1: Vec<usize>,
    pub q2: Vec<usize>,
    pub s: Vec<usize>,
    pub s_d: Option<usize>,
    pub ancillas: Vec<(Ancilla, usize)>,
    pub n: usize,
}

impl RegisterLayout {
    pub fn new(
        x_bits: usize,
        y_bits: usize,
        s_bits: usize,
        two_levels: bool,
        ancillas: &[Ancilla],
    ) -> QlbmResult<Self> {
        let mut next = 0;
        let mut take = |k: usize| {
            let r: Vec<usize> = (next..next + k).collect();
            next += k;
            r
        };
        let q1 = take(x_bits);
        let q2 = take(y_bits);
        let s = take(s_bits);
        let s_d = if two_levels { Some(take(1)[0]) } else { None };
        let ancillas = ancillas.iter().map(|&a| (a, take(1)[0])).collect();
        let n = next;
        if n > 30 {
            return Err(QlbmError::TooManyQubits(n));
        }
        Ok(Self {
            q1,
            q2,
            s,
            s_d,
            ancillas,
            n,
        })
    }

    /// Layout without named registers.
    pub fn plain(n: usize) -> Self {
        Self {
            q1: Vec::new(),
            q2: Vec::new(),
            s: Vec::new(),
            s_d: None,
            ancillas: Vec::new(),
            n,
        }
    }

    pub fn ancilla(&self, role: Ancilla) -> Option<usize> {
        self.ancillas.iter().find(|(r, _)| *r == role).map(|(_, q)| *q)
    }

    /// Ancilla qubits as a list.
    pub fn ancilla_qubits(&self) -> Vec<usize> {
        self.ancillas.iter().map(|(_, q)| *q).collect()
    }

    /// Number of lattice qubits.
    pub fn lattice_bits(&self) -> usize {
        self.q1.len() + self.q2.len()
    }
}

/// Contiguous labeled gate range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    pub layout: RegisterLayout,
    pub gates: Vec<Gate>,
    pub blocks: Vec<Block>,
    pub n_bits: usize,
}

impl Circuit {
    pub fn new(layout: RegisterLayout) -> Self {
        Self {
            layout,
            gates: Vec::new(),
            blocks: Vec::new(),
            n_bits: 0,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.layout.n
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn append(&mut self, gate: Gate) -> &mut Self {
        self.track_bits(&gate);
        self.gates.push(gate);
        self
    }

    pub fn extend(&mut self, gates: impl IntoIterator<Item = Gate>) -> &mut Self {
        for g in gates {
            self.append(g);
        }
        self
    }

    /// Appends `gates` as one labeled block.
    pub fn push_block(&mut self, label: &str, gates: Vec<Gate>) -> &mut Self {
        let start = self.gates.len();
        self.extend(gates);
        self.blocks.push(Block {
            label: label.to_string(),
            start,
            end: self.gates.len(),
        });
        self
    }

    /// Next unused classical bit index.
    pub fn fresh_bit(&mut self) -> usize {
        self.n_bits += 1;
        self.n_bits - 1
    }

    fn track_bits(&mut self, g: &Gate) {
        match g {
            Gate::Measure { bit, .. } => self.n_bits = self.n_bits.max(bit + 1),
            Gate::Conditional { bit, body } => {
                self.n_bits = self.n_bits.max(bit + 1);
                for b in body {
                    self.track_bits(b);
                }
            }
            _ => {}
        }
    }

    pub fn has_measurements(&self) -> bool {
        self.gates
            .iter()
            .any(|g| matches!(g, Gate::Measure { .. } | Gate::Conditional { .. }))
    }

    /// Block label covering gate `i`, if any.
    pub fn block_of(&self, i: usize) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| b.start <= i && i < b.end)
            .map(|b| b.label.as_str())
    }
}

/// Concatenates two circuits over the same layout; blocks of `b` are shifted.
pub fn compose(a: &Circuit, b: &Circuit) -> QlbmResult<Circuit> {
    if a.layout != b.layout {
        return Err(QlbmError::LayoutMismatch);
    }
    let mut out = a.clone();
    let off = out.gates.len();
    out.extend(b.gates.iter().cloned());
    out.blocks.extend(b.blocks.iter().map(|bl| Block {
        label: bl.label.clone(),
        start: bl.start + off,
        end: bl.end + off,
    }));
    Ok(out)
}

/// Reversed circuit of adjoint gates.
pub fn inverse(c: &Circuit) -> QlbmResult<Circuit> {
    let mut out = Circuit::new(c.layout.clone());
    for g in c.gates.iter().rev() {
        out.append(g.adjoint().ok_or(QlbmError::NotInvertible)?);
    }
    let n = c.gates.len();
    out.blocks = c
        .blocks
        .iter()
        .rev()
        .map(|b| Block {
            label: b.label.clone(),
            start: n - b.end,
            end: n - b.start,
        })
        .collect();
    Ok(out)
}

/// QFT network without final swaps: the output frequency bit j lands on
/// `targets[k-1-j]`.
pub fn qft_block(targets: &[usize]) -> Vec<Gate> {
    let mut out = Vec::new();
    for j in (0..targets.len()).rev() {
        out.push(Gate::H(targets[j]));
        for m in (0..j).rev() {
            out.push(Gate::CP {
                controls: vec![ctl(targets[m])],
                t: targets[j],
                theta: PI / (1u64 << (j - m)) as f64,
            });
        }
    }
    out
}

pub fn iqft_block(targets: &[usize]) -> Vec<Gate> {
    qft_block(targets)
        .iter()
        .rev()
        .map(|g| g.adjoint().expect("unitary"))
        .collect()
}

/// Phase ladder multiplying frequency |y⟩ by exp(2πi·shift·y/2^k) in the
/// bit order produced by [`qft_block`]; under `controls`.
pub fn phase_ladder(targets: &[usize], shift: i64, controls: &[Control]) -> Vec<Gate> {
    let k = targets.len();
    let n = (1u64 << k) as f64;
    let mut out = Vec::new();
    for j in 0..k {
        let theta = 2.0 * PI * (shift as f64) * (1u64 << j) as f64 / n;
        let theta = theta.rem_euclid(2.0 * PI);
        if theta.abs() < 1e-15 {
            continue;
        }
        let t = targets[k - 1 - j];
        if controls.is_empty() {
            out.push(Gate::P(t, theta));
        } else {
            out.push(Gate::CP {
                controls: controls.to_vec(),
                t,
                theta,
            });
        }
    }
    out
}

/// Multi-controlled X sequence swapping basis values `a` and `b` of `reg`
/// (bit j of a value on `reg[j]`), under extra `controls`. All other basis
/// states are left untouched.
pub fn transposition(reg: &[usize], a: usize, b: usize, controls: &[Control]) -> Vec<Gate> {
    if a == b {
        return Vec::new();
    }
    // Gray path a = g0 → … → gm = b flipping one differing bit at a time.
    let diff: Vec<usize> = (0..reg.len()).filter(|j| ((a ^ b) >> j) & 1 == 1).collect();
    let mut path = vec![a];
    let mut cur = a;
    for &j in &diff {
        cur ^= 1 << j;
        path.push(cur);
    }
    let adjacent = |u: usize, v: usize| -> Gate {
        let j = (u ^ v).trailing_zeros() as usize;
        let mut cs: Vec<Control> = (0..reg.len())
            .filter(|&i| i != j)
            .map(|i| Control {
                qubit: reg[i],
                on: (u >> i) & 1 == 1,
            })
            .collect();
        cs.extend_from_slice(controls);
        Gate::MCX {
            controls: cs,
            t: reg[j],
        }
    };
    let m = path.len() - 1;
    let mut out = Vec::new();
    for i in 0..m {
        out.push(adjacent(path[i], path[i + 1]));
    }
    for i in (0..m - 1).rev() {
        out.push(adjacent(path[i], path[i + 1]));
    }
    out
}

fn mcx_cost(k: usize) -> usize {
    match k {
        0 => 0,
        1 => 1,
        2 => 6,
        k => 8 * k - 10,
    }
}

fn cu_cost(k: usize) -> usize {
    match k {
        0 => 0,
        1 => 2,
        k => 2 * mcx_cost(k),
    }
}

fn dense_cost(n: usize) -> usize {
    if n <= 1 {
        return 0;
    }
    // Quantum Shannon decomposition estimate.
    let f = 23.0 / 48.0 * 4f64.powi(n as i32) - 1.5 * 2f64.powi(n as i32) + 4.0 / 3.0;
    f.ceil() as usize
}

/// Two-qubit (CX-equivalent) cost in an all-to-all model.
pub fn two_qubit_cost(g: &Gate) -> usize {
    match g {
        Gate::H(_) | Gate::X(_) | Gate::P(..) | Gate::RY(..) | Gate::Measure { .. } => 0,
        Gate::CX { .. } => 1,
        Gate::MCX { controls, .. } => mcx_cost(controls.len()),
        Gate::CP { controls, .. } | Gate::CH { controls, .. } | Gate::CRY { controls, .. } => {
            cu_cost(controls.len())
        }
        Gate::Unitary {
            targets, controls, ..
        } => dense_cost(targets.len() + controls.len()),
        Gate::QFT(t) | Gate::IQFT(t) => 2 * t.len() * t.len().saturating_sub(1) / 2,
        Gate::Conditional { body, .. } => body.iter().map(two_qubit_cost).sum(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockCount {
    pub label: String,
    pub gates: usize,
    pub two_qubit: usize,
}

/// Result of [`validate`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub diagnostics: Vec<String>,
    pub total_gates: usize,
    pub blocks: Vec<BlockCount>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.diagnostics.is_empty()
    }

    pub fn block(&self, label: &str) -> Option<&BlockCount> {
        self.blocks.iter().find(|b| b.label == label)
    }
}

fn check_gate(g: &Gate, n: usize, idx: usize, diags: &mut Vec<String>) {
    let qs = g.qubits();
    for &q in &qs {
        if q >= n {
            diags.push(format!("gate {idx} ({}): qubit {q} out of range", g.mnemonic()));
        }
    }
    let mut sorted = qs.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != qs.len() && !matches!(g, Gate::Conditional { .. }) {
        diags.push(format!(
            "gate {idx} ({}): control and target qubits overlap",
            g.mnemonic()
        ));
    }
    match g {
        Gate::Unitary {
            targets, matrix, ..
        } => {
            if targets.len() > 5 {
                diags.push(format!("gate {idx} (U): more than 5 targets"));
            }
            let d = 1usize << targets.len();
            if matrix.len() != d * d {
                diags.push(format!("gate {idx} (U): matrix is not {d}x{d}"));
            } else {
                let mut dev: f64 = 0.0;
                for r in 0..d {
                    for c in 0..d {
                        let mut acc = C64::new(0.0, 0.0);
                        for k in 0..d {
                            acc += matrix[k * d + r].conj() * matrix[k * d + c];
                        }
                        let want = if r == c { 1.0 } else { 0.0 };
                        dev = dev.max((acc - want).norm());
                    }
                }
                if dev > 1e-12 {
                    diags.push(format!("gate {idx} (U): not unitary, deviation {dev:e}"));
                }
            }
        }
        Gate::QFT(t) | Gate::IQFT(t) if t.is_empty() => {
            diags.push(format!("gate {idx}: QFT without targets"));
        }
        Gate::Conditional { body, .. } => {
            for (j, b) in body.iter().enumerate() {
                check_gate(b, n, idx * 1000 + j, diags);
            }
        }
        _ => {}
    }
}

/// Checks index ranges, control/target overlap and unitarity; counts gates per block.
pub fn validate(c: &Circuit) -> ValidationReport {
    let mut diagnostics = Vec::new();
    for (i, g) in c.gates.iter().enumerate() {
        check_gate(g, c.layout.n, i, &mut diagnostics);
    }
    let blocks = c
        .blocks
        .iter()
        .map(|b| {
            let gates = &c.gates[b.start..b.end];
            BlockCount {
                label: b.label.clone(),
                gates: gates.len(),
                two_qubit: gates.iter().map(two_qubit_cost).sum(),
            }
        })
        .collect();
    ValidationReport {
        diagnostics,
        total_gates: c.gates.len(),
        blocks,
    }
}

fn fmt_controls(cs: &[Control]) -> String {
    let items: Vec<String> = cs
        .iter()
        .map(|c| {
            if c.on {
                c.qubit.to_string()
            } else {
                format!("~{}", c.qubit)
            }
        })
        .collect();
    format!("[{}]", items.join(","))
}

fn fmt_list(qs: &[usize]) -> String {
    let items: Vec<String> = qs.iter().map(|q| q.to_string()).collect();
    format!("[{}]", items.join(","))
}

fn dump_gate(g: &Gate, indent: &str, out: &mut String) {
    let m = g.mnemonic();
    let line = match g {
        Gate::H(t) | Gate::X(t) => format!("{m} {t}"),
        Gate::P(t, th) | Gate::RY(t, th) => format!("{m} {t} {th:.12}"),
        Gate::CX { c, t } => format!("{m} {t} [{c}]"),
        Gate::MCX { controls, t } | Gate::CH { controls, t } => {
            format!("{m} {t} {}", fmt_controls(controls))
        }
        Gate::CP { controls, t, theta } | Gate::CRY { controls, t, theta } => {
            format!("{m} {t} {} {theta:.12}", fmt_controls(controls))
        }
        Gate::Unitary {
            targets,
            controls,
            matrix,
        } => {
            let entries: Vec<String> = matrix
                .iter()
                .map(|z| format!("{:.12}{:+.12}i", z.re, z.im))
                .collect();
            format!(
                "{m} {} {} {}",
                fmt_list(targets),
                fmt_controls(controls),
                entries.join(" ")
            )
        }
        Gate::QFT(t) | Gate::IQFT(t) => format!("{m} {}", fmt_list(t)),
        Gate::Measure { qubit, bit } => format!("{m} {qubit} c{bit}"),
        Gate::Conditional { bit, body } => {
            let _ = writeln!(out, "{indent}{m} c{bit}==0 {{");
            let inner = format!("{indent}  ");
            for b in body {
                dump_gate(b, &inner, out);
            }
            let _ = writeln!(out, "{indent}}}");
            return;
        }
    };
    let _ = writeln!(out, "{indent}{line}");
}

/// Text form, one gate per line, block labels as `# label` lines.
pub fn dump(c: &Circuit) -> String {
    let mut out = String::new();
    for (i, g) in c.gates.iter().enumerate() {
        for b in c.blocks.iter().filter(|b| b.start == i && b.end > b.start) {
            let _ = writeln!(out, "# {}", b.label);
        }
        dump_gate(g, "", &mut out);
    }
    out
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&dump(self))
    }
}
