//! Dense statevector execution with post-selection and seeded sampling.

use crate::circuit::{qft_block, Circuit, Control, Gate};
use crate::error::{invalid, QlbmError, QlbmResult};
use num_complex::Complex64 as C64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Generator used for every sampled quantity; recorded in run manifests.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.10)";

/// Seeded generator for `seed`.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const PAR_MIN: usize = 1 << 14;
const CHUNK: usize = 1 << 12;

#[cfg(debug_assertions)]
pub mod instrument {
    //! Amplitude-touch counter for kernel cost checks.
    use std::sync::atomic::{AtomicU64, Ordering};

    static TOUCHES: AtomicU64 = AtomicU64::new(0);

    pub fn add(n: usize) {
        TOUCHES.fetch_add(n as u64, Ordering::Relaxed);
    }

    /// Returns and clears the counter.
    pub fn take() -> u64 {
        TOUCHES.swap(0, Ordering::Relaxed)
    }
}

#[inline]
fn count_touches(_n: usize) {
    #[cfg(debug_assertions)]
    instrument::add(_n);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    pub n: usize,
    pub amps: Vec<C64>,
}

/// |index⟩ on `n` qubits.
pub fn init_basis(n: usize, index: usize) -> QlbmResult<Statevector> {
    if index >= 1 << n {
        return Err(invalid("index", format!("{index} out of range for {n} qubits")));
    }
    let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
    amps[index] = C64::new(1.0, 0.0);
    Ok(Statevector { n, amps })
}

/// Normalized state from raw amplitudes, plus the original norm.
pub fn init_amplitudes(values: Vec<C64>) -> QlbmResult<(Statevector, f64)> {
    let len = values.len();
    if !len.is_power_of_two() {
        return Err(QlbmError::Shape(format!("{len} amplitudes is not a power of two")));
    }
    let norm = values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(QlbmError::ZeroVector);
    }
    let amps = values.into_iter().map(|z| z / norm).collect();
    Ok((
        Statevector {
            n: len.trailing_zeros() as usize,
            amps,
        },
        norm,
    ))
}

impl Statevector {
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Applies one gate; measurements and conditionals are handled by [`run`].
    pub fn apply(&mut self, g: &Gate) {
        match g {
            Gate::H(t) => self.apply_1q(*t, &[], h_matrix()),
            Gate::X(t) => self.apply_1q(*t, &[], x_matrix()),
            Gate::P(t, th) => self.apply_phase(*t, &[], *th),
            Gate::RY(t, th) => self.apply_1q(*t, &[], ry_matrix(*th)),
            Gate::CX { c, t } => self.apply_1q(*t, &[crate::circuit::ctl(*c)], x_matrix()),
            Gate::MCX { controls, t } => self.apply_1q(*t, controls, x_matrix()),
            Gate::CP { controls, t, theta } => self.apply_phase(*t, controls, *theta),
            Gate::CH { controls, t } => self.apply_1q(*t, controls, h_matrix()),
            Gate::CRY { controls, t, theta } => self.apply_1q(*t, controls, ry_matrix(*theta)),
            Gate::Unitary {
                targets,
                controls,
                matrix,
            } => {
                if targets.len() == 1 {
                    let m = [[matrix[0], matrix[1]], [matrix[2], matrix[3]]];
                    self.apply_1q(targets[0], controls, m)
                } else {
                    self.apply_dense(targets, controls, matrix)
                }
            }
            Gate::QFT(t) => {
                for g in qft_block(t) {
                    self.apply(&g);
                }
            }
            Gate::IQFT(t) => {
                for g in crate::circuit::iqft_block(t) {
                    self.apply(&g);
                }
            }
            Gate::Measure { .. } | Gate::Conditional { .. } => {
                panic!("measurement gates are executed by run()")
            }
        }
    }

    fn apply_1q(&mut self, t: usize, controls: &[Control], m: [[C64; 2]; 2]) {
        let (cmask, cval) = control_mask(controls);
        for_pairs(&mut self.amps, t, move |i, a, b| {
            if i & cmask == cval {
                let (x, y) = (*a, *b);
                *a = m[0][0] * x + m[0][1] * y;
                *b = m[1][0] * x + m[1][1] * y;
            }
        });
    }

    fn apply_phase(&mut self, t: usize, controls: &[Control], theta: f64) {
        let (cmask, cval) = control_mask(controls);
        let ph = C64::from_polar(1.0, theta);
        for_pairs(&mut self.amps, t, move |i, _a, b| {
            if i & cmask == cval {
                *b *= ph;
            }
        });
    }

    fn apply_dense(&mut self, targets: &[usize], controls: &[Control], m: &[C64]) {
        let k = targets.len();
        let d = 1usize << k;
        let (cmask, cval) = control_mask(controls);
        let tmask: usize = targets.iter().map(|&t| 1usize << t).sum();
        let offsets: Vec<usize> = (0..d)
            .map(|v| {
                targets
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| (v >> j) & 1 == 1)
                    .map(|(_, &t)| 1usize << t)
                    .sum()
            })
            .collect();
        let top = targets.iter().copied().max().unwrap_or(0);
        let span = (1usize << (top + 1)).min(self.amps.len());
        let work = |base: usize, chunk: &mut [C64]| {
            let mut buf = vec![C64::new(0.0, 0.0); d];
            for local in 0..chunk.len() {
                let i = base + local;
                if i & tmask != 0 || i & cmask != cval {
                    continue;
                }
                for v in 0..d {
                    buf[v] = chunk[local + offsets[v]];
                }
                for r in 0..d {
                    let mut acc = C64::new(0.0, 0.0);
                    for c in 0..d {
                        acc += m[r * d + c] * buf[c];
                    }
                    chunk[local + offsets[r]] = acc;
                }
            }
        };
        count_touches(self.amps.len());
        if self.amps.len() >= PAR_MIN && span < self.amps.len() {
            self.amps
                .par_chunks_mut(span)
                .enumerate()
                .for_each(|(ci, chunk)| work(ci * span, chunk));
        } else {
            for (ci, chunk) in self.amps.chunks_mut(span).enumerate() {
                work(ci * span, chunk);
            }
        }
    }

    /// Probability that `qubits` read `value` (bit j of `value` on `qubits[j]`).
    pub fn marginal_probability(&self, qubits: &[usize], value: usize) -> f64 {
        let (mask, val) = control_mask(&crate::circuit::pattern(qubits, value));
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask == val)
            .map(|(_, z)| z.norm_sqr())
            .sum()
    }

    /// Projects onto `qubits == value` and renormalizes.
    pub fn postselect(&self, qubits: &[usize], value: usize) -> QlbmResult<(Statevector, f64)> {
        let (mask, val) = control_mask(&crate::circuit::pattern(qubits, value));
        let mut amps = self.amps.clone();
        let mut p = 0.0;
        for (i, z) in amps.iter_mut().enumerate() {
            if i & mask == val {
                p += z.norm_sqr();
            } else {
                *z = C64::new(0.0, 0.0);
            }
        }
        if p <= 0.0 {
            return Err(QlbmError::ZeroProbability { index: 0 });
        }
        let s = 1.0 / p.sqrt();
        amps.iter_mut().for_each(|z| *z *= s);
        Ok((Statevector { n: self.n, amps }, p))
    }

    /// Σ_i weight(i)·|ψ_i|².
    pub fn expect_diagonal(&self, weight: impl Fn(usize) -> f64) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(i, z)| weight(i) * z.norm_sqr())
            .sum()
    }

    /// Born-rule samples of the full register.
    pub fn sample(&self, shots: u64, seed: u64) -> ShotCounts {
        Sampler::new(self).sample(shots, seed)
    }
}

fn control_mask(controls: &[Control]) -> (usize, usize) {
    let mut mask = 0;
    let mut val = 0;
    for c in controls {
        mask |= 1 << c.qubit;
        if c.on {
            val |= 1 << c.qubit;
        }
    }
    (mask, val)
}

fn h_matrix() -> [[C64; 2]; 2] {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [[s, s], [s, -s]]
}

fn x_matrix() -> [[C64; 2]; 2] {
    let o = C64::new(0.0, 0.0);
    let l = C64::new(1.0, 0.0);
    [[o, l], [l, o]]
}

fn ry_matrix(theta: f64) -> [[C64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    [
        [C64::new(c, 0.0), C64::new(-s, 0.0)],
        [C64::new(s, 0.0), C64::new(c, 0.0)],
    ]
}

/// Calls `f(i, ψ_i, ψ_{i|2^t})` for every index `i` with bit `t` clear.
fn for_pairs<F>(amps: &mut [C64], t: usize, f: F)
where
    F: Fn(usize, &mut C64, &mut C64) + Sync + Send,
{
    let tb = 1usize << t;
    let block = 2 * tb;
    count_touches(amps.len());
    let serial = |base: usize, chunk: &mut [C64]| {
        for b in (0..chunk.len()).step_by(block) {
            let (lo, hi) = chunk[b..b + block].split_at_mut(tb);
            for j in 0..tb {
                f(base + b + j, &mut lo[j], &mut hi[j]);
            }
        }
    };
    if amps.len() < PAR_MIN {
        serial(0, amps);
    } else if block <= CHUNK {
        amps.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(ci, chunk)| serial(ci * CHUNK, chunk));
    } else {
        amps.par_chunks_mut(block).enumerate().for_each(|(bi, blk)| {
            let (lo, hi) = blk.split_at_mut(tb);
            lo.par_chunks_mut(CHUNK)
                .zip(hi.par_chunks_mut(CHUNK))
                .enumerate()
                .for_each(|(k, (l, h))| {
                    let base = bi * block + k * CHUNK;
                    for j in 0..l.len() {
                        f(base + j, &mut l[j], &mut h[j]);
                    }
                });
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    PostSelectZero,
    Sample { seed: u64 },
}

/// Record of one executed measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    /// Position among executed measurements.
    pub index: usize,
    pub qubit: usize,
    pub outcome: u8,
    /// Conditional probability of the observed outcome.
    pub probability: f64,
    /// Block label of the measurement in the top-level circuit.
    pub block: Option<String>,
    /// p_keep just before this measurement.
    pub p_before: f64,
}

impl Branch {
    /// Absolute probability discarded by this measurement in PostSelectZero mode.
    pub fn discarded(&self) -> f64 {
        self.p_before * (1.0 - self.probability)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub state: Statevector,
    pub p_keep: f64,
    pub bits: Vec<u8>,
    pub branches: Vec<Branch>,
}

impl RunOutcome {
    /// Discarded probability per block label, in first-seen order.
    pub fn discarded_by_block(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for b in &self.branches {
            let label = b.block.clone().unwrap_or_default();
            match out.iter_mut().find(|(l, _)| *l == label) {
                Some(e) => e.1 += b.discarded(),
                None => out.push((label, b.discarded())),
            }
        }
        out
    }
}

struct Exec<'a> {
    state: Statevector,
    p_keep: f64,
    bits: Vec<u8>,
    branches: Vec<Branch>,
    mode: RunMode,
    rng: Option<ChaCha8Rng>,
    circuit: &'a Circuit,
}

impl Exec<'_> {
    fn run_gates(&mut self, gates: &[Gate], top: Option<usize>) -> QlbmResult<()> {
        for (i, g) in gates.iter().enumerate() {
            let pos = top.unwrap_or(i);
            match g {
                Gate::Measure { qubit, bit } => self.measure(*qubit, *bit, pos)?,
                Gate::Conditional { bit, body } => {
                    if self.bits.get(*bit).copied().unwrap_or(0) == 0 {
                        self.run_gates(body, Some(pos))?;
                    }
                }
                g => self.state.apply(g),
            }
        }
        Ok(())
    }

    fn measure(&mut self, qubit: usize, bit: usize, pos: usize) -> QlbmResult<()> {
        let p0 = self.state.marginal_probability(&[qubit], 0);
        let index = self.branches.len();
        let outcome = match self.mode {
            RunMode::PostSelectZero => 0u8,
            RunMode::Sample { .. } => {
                let u: f64 = self.rng.as_mut().expect("sample mode rng").random();
                u8::from(u >= p0)
            }
        };
        let p = if outcome == 0 { p0 } else { 1.0 - p0 };
        if p <= 0.0 {
            return Err(QlbmError::ZeroProbability { index });
        }
        let tb = 1usize << qubit;
        let s = 1.0 / p.sqrt();
        let keep = if outcome == 0 { 0 } else { tb };
        for (i, z) in self.state.amps.iter_mut().enumerate() {
            if i & tb == keep {
                *z *= s;
            } else {
                *z = C64::new(0.0, 0.0);
            }
        }
        // Reset to |0⟩ after a 1 outcome so ancillas can be reused.
        if outcome == 1 {
            self.state.apply(&Gate::X(qubit));
        }
        self.branches.push(Branch {
            index,
            qubit,
            outcome,
            probability: p,
            block: self.circuit.block_of(pos).map(str::to_string),
            p_before: self.p_keep,
        });
        self.p_keep *= p;
        if self.bits.len() <= bit {
            self.bits.resize(bit + 1, 0);
        }
        self.bits[bit] = outcome;
        Ok(())
    }
}

/// Executes `circuit` on `psi0`.
///
/// Measured qubits are left in |0⟩ in both modes.
pub fn run(circuit: &Circuit, psi0: &Statevector, mode: RunMode) -> QlbmResult<RunOutcome> {
    if psi0.n != circuit.n_qubits() {
        return Err(QlbmError::LayoutMismatch);
    }
    let rng = match mode {
        RunMode::Sample { seed } => Some(rng_from_seed(seed)),
        RunMode::PostSelectZero => None,
    };
    let mut ex = Exec {
        state: psi0.clone(),
        p_keep: 1.0,
        bits: vec![0; circuit.n_bits],
        branches: Vec::new(),
        mode,
        rng,
        circuit,
    };
    ex.run_gates(&circuit.gates, None)?;
    Ok(RunOutcome {
        state: ex.state,
        p_keep: ex.p_keep,
        bits: ex.bits,
        branches: ex.branches,
    })
}

/// Basis-index histogram of sampled shots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotCounts {
    pub n_qubits: usize,
    pub counts: BTreeMap<usize, u64>,
    pub total: u64,
    pub seed: u64,
}

impl ShotCounts {
    pub fn get(&self, index: usize) -> u64 {
        self.counts.get(&index).copied().unwrap_or(0)
    }

    /// Bitstring of `index`, most significant qubit first.
    pub fn bitstring(&self, index: usize) -> String {
        (0..self.n_qubits)
            .rev()
            .map(|q| if (index >> q) & 1 == 1 { '1' } else { '0' })
            .collect()
    }
}

/// Cumulative distribution of a state, reusable across seeds.
#[derive(Clone, Debug)]
pub struct Sampler {
    n: usize,
    cdf: Vec<f64>,
}

impl Sampler {
    pub fn new(psi: &Statevector) -> Self {
        Self::from_probabilities(psi.n, &psi.probabilities())
    }

    pub fn from_probabilities(n: usize, probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { n, cdf }
    }

    /// Draws `shots` outcomes with a generator seeded by `seed`.
    pub fn sample(&self, shots: u64, seed: u64) -> ShotCounts {
        let mut rng = rng_from_seed(seed);
        let total = *self.cdf.last().unwrap_or(&0.0);
        let mut counts = BTreeMap::new();
        for _ in 0..shots {
            let u: f64 = rng.random::<f64>() * total;
            let mut i = self.cdf.partition_point(|&c| c <= u);
            if i >= self.cdf.len() {
                i = self.cdf.len() - 1;
            }
            // Skip zero-probability entries that share the same cumulative value.
            *counts.entry(i).or_insert(0) += 1;
        }
        ShotCounts {
            n_qubits: self.n,
            counts,
            total: shots,
            seed,
        }
    }
}
