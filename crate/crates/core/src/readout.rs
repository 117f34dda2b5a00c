//! Observables and estimation: acoustic energy, shot statistics and
//! amplitude-function tomography.

use crate::error::{invalid, QlbmError, QlbmResult};
use crate::lattice::FieldState;
use crate::qlbm::EncodingMap;
use crate::simulator::{rng_from_seed, Sampler, ShotCounts, Statevector};
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rayon::prelude::*;

/// ½ Σ_{x∈S} (c²ρ² + u1² + u2²) over level 1; `subdomain` = None means all cells.
pub fn acoustic_energy(f: &FieldState, c_phys: f64, subdomain: Option<&[usize]>) -> f64 {
    let rho = f.var(0);
    let (u1, u2) = (f.var(1), f.var(2));
    let term = |i: usize| c_phys * c_phys * rho[i] * rho[i] + u1[i] * u1[i] + u2[i] * u2[i];
    let sum: f64 = match subdomain {
        Some(cells) => cells.iter().map(|&i| term(i)).sum(),
        None => (0..f.sites()).map(term).sum(),
    };
    0.5 * sum
}

/// Diagonal energy observable on an encoded register.
#[derive(Clone, Debug)]
pub struct EnergyObservable {
    pub map: EncodingMap,
    pub c_phys: f64,
    /// Per-site membership; all sites when None.
    pub cells: Option<Vec<bool>>,
}

impl EnergyObservable {
    pub fn new(map: &EncodingMap, c_phys: f64, subdomain: Option<&[usize]>) -> Self {
        let cells = subdomain.map(|s| {
            let mut m = vec![false; map.sites()];
            for &i in s {
                m[i] = true;
            }
            m
        });
        Self {
            map: map.clone(),
            c_phys,
            cells,
        }
    }

    /// True if all ancilla bits of `index` are zero.
    pub fn kept(&self, index: usize) -> bool {
        index & !self.map.data_mask() == 0
    }

    /// Eigenvalue of basis state `index`.
    pub fn eigenvalue(&self, index: usize) -> f64 {
        if !self.kept(index) {
            return 0.0;
        }
        let (site, level, slot) = self.map.locate(index);
        if level != 0 || self.cells.as_ref().is_some_and(|c| !c[site]) {
            return 0.0;
        }
        match slot {
            0 => self.c_phys * self.c_phys / 2.0,
            1 | 2 => 0.5,
            _ => 0.0,
        }
    }
}

/// Exact ⟨O⟩ and Var(O) = ⟨O²⟩ − ⟨O⟩².
pub fn energy_expectation(psi: &Statevector, obs: &EnergyObservable) -> (f64, f64) {
    let mean = psi.expect_diagonal(|i| obs.eigenvalue(i));
    let second = psi.expect_diagonal(|i| obs.eigenvalue(i).powi(2));
    (mean, (second - mean * mean).max(0.0))
}

/// Samples needed for relative accuracy `eps`: ⌈Var/(ε²·mean²)⌉, or ⌈ε⁻²⌉
/// when the variance is unknown.
pub fn shots_for_accuracy(eps: f64, variance: Option<f64>, mean: f64) -> QlbmResult<u64> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(invalid("eps", "must be positive"));
    }
    if mean == 0.0 {
        return Err(invalid("mean", "must be non-zero"));
    }
    let n = match variance {
        Some(v) => v / (eps * eps * mean * mean),
        None => 1.0 / (eps * eps),
    };
    // Guard against 1/0.01² = 10000.000000000002.
    Ok((n * (1.0 - 1e-12)).ceil() as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyEstimate {
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub shots: u64,
    /// Fraction of shots with all ancillas 0.
    pub kept_ratio: f64,
}

/// Sample mean of the eigenvalue over all shots (discarded shots count 0).
///
/// The mean therefore estimates p_keep·⟨O⟩ of the post-selected state.
pub fn estimate_energy(counts: &ShotCounts, obs: &EnergyObservable) -> QlbmResult<EnergyEstimate> {
    let n = counts.total;
    let kept: u64 = counts
        .counts
        .iter()
        .filter(|(i, _)| obs.kept(**i))
        .map(|(_, c)| c)
        .sum();
    if kept == 0 || n == 0 {
        return Err(QlbmError::NoKeptShots);
    }
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (&i, &c) in &counts.counts {
        let l = obs.eigenvalue(i);
        s1 += l * c as f64;
        s2 += l * l * c as f64;
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let variance = if n > 1 {
        ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(EnergyEstimate {
        mean,
        variance,
        stderr: (variance / nf).sqrt(),
        shots: n,
        kept_ratio: kept as f64 / nf,
    })
}

/// Sampler for a post-selected state whose survival probability was
/// `p_keep`: discarded shots land on `discard_index` (an index with a
/// non-zero ancilla bit).
pub fn postselected_sampler(psi: &Statevector, p_keep: f64, discard_index: usize) -> Sampler {
    let mut probs: Vec<f64> = psi.amps.iter().map(|z| p_keep * z.norm_sqr()).collect();
    probs[discard_index] += (1.0 - p_keep).max(0.0);
    Sampler::from_probabilities(psi.n, &probs)
}

/// Maps grid coordinates centered on a rectangle of half-sizes (a, b) so the
/// rectangle collapses to the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridTransform {
    pub a: f64,
    pub b: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Rectangle-collapsing transform centered at the origin.
pub fn rect_grid_transform(a: f64, b: f64) -> QlbmResult<GridTransform> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid("a/b", "half-sizes must be positive"));
    }
    Ok(GridTransform {
        a,
        b,
        cx: 0.0,
        cy: 0.0,
    })
}

impl GridTransform {
    pub fn centered_at(mut self, cx: f64, cy: f64) -> Self {
        self.cx = cx;
        self.cy = cy;
        self
    }

    /// (x, y) ↦ (x, y)·max(r − 1, 0)/r in centered coordinates.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let r = (dx / self.a).abs().max((dy / self.b).abs());
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let k = (r - 1.0).max(0.0) / r;
        (dx * k, dy * k)
    }
}

/// Chebyshev T_0..T_deg at `x`.
fn chebyshev(deg: usize, x: f64) -> Vec<f64> {
    let mut t = vec![1.0; deg + 1];
    if deg >= 1 {
        t[1] = x;
    }
    for k in 2..=deg {
        t[k] = 2.0 * x * t[k - 1] - t[k - 2];
    }
    t
}

/// Real functions on grid points with their Gram matrix.
#[derive(Clone, Debug)]
pub struct TomographyBasis {
    /// `values[j][i]` = g_j at point i.
    pub values: Vec<Vec<f64>>,
    pub gram: DMatrix<f64>,
}

impl TomographyBasis {
    pub fn from_values(values: Vec<Vec<f64>>) -> Self {
        let m = values.len();
        let gram = DMatrix::from_fn(m, m, |j, k| {
            values[j].iter().zip(&values[k]).map(|(a, b)| a * b).sum()
        });
        Self { values, gram }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn points(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// f_a at every point.
    pub fn eval(&self, a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.points()];
        for (aj, g) in a.iter().zip(&self.values) {
            for (o, v) in out.iter_mut().zip(g) {
                *o += aj * v;
            }
        }
        out
    }

    /// W(a) = aᵀGa.
    pub fn weight(&self, a: &[f64]) -> f64 {
        let v = DVector::from_column_slice(a);
        (v.transpose() * &self.gram * &v)[(0, 0)]
    }
}

/// Tensor Chebyshev basis T_i(x)T_j(y), i ≤ deg.0, j ≤ deg.1, on an nx×ny grid
/// (site index x + nx·y); coordinates optionally transformed, then rescaled to
/// [−1, 1] per dimension.
pub fn chebyshev_basis(
    nx: usize,
    ny: usize,
    deg: (usize, usize),
    transform: Option<&GridTransform>,
) -> TomographyBasis {
    let pts: Vec<(f64, f64)> = (0..nx * ny)
        .map(|i| {
            let (x, y) = ((i % nx) as f64, (i / nx) as f64);
            match transform {
                Some(t) => t.apply(x, y),
                None => (x, y),
            }
        })
        .collect();
    let rescale = |vals: Vec<f64>| -> Vec<f64> {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        vals.iter()
            .map(|v| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })
            .collect()
    };
    let xs = rescale(pts.iter().map(|p| p.0).collect());
    let ys = rescale(pts.iter().map(|p| p.1).collect());
    let tx: Vec<Vec<f64>> = xs.iter().map(|&x| chebyshev(deg.0, x)).collect();
    let ty: Vec<Vec<f64>> = ys.iter().map(|&y| chebyshev(deg.1, y)).collect();
    let mut values = Vec::new();
    for j in 0..=deg.1 {
        for i in 0..=deg.0 {
            values.push((0..pts.len()).map(|p| tx[p][i] * ty[p][j]).collect());
        }
    }
    TomographyBasis::from_values(values)
}

/// Measured frequencies: Z basis and optional per-qubit X basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TomographyProblem {
    pub n_qubits: usize,
    /// Normalized Z-basis frequencies per point.
    pub z: Vec<f64>,
    pub z_shots: u64,
    /// `x[k]`: frequencies after H on qubit k.
    pub x: Vec<Vec<f64>>,
}

fn frequencies(counts: &[u64]) -> (Vec<f64>, u64) {
    let total: u64 = counts.iter().sum();
    let t = total.max(1) as f64;
    (counts.iter().map(|&c| c as f64 / t).collect(), total)
}

impl TomographyProblem {
    /// From dense count tables over 2^n points.
    pub fn from_counts(z: &[u64], x: &[Vec<u64>]) -> QlbmResult<Self> {
        if !z.len().is_power_of_two() {
            return Err(QlbmError::Shape("point count must be a power of two".into()));
        }
        let (zf, z_shots) = frequencies(z);
        if z_shots == 0 {
            return Err(invalid("counts", "at least one observed bitstring is required"));
        }
        let mut xs = Vec::new();
        for t in x {
            if t.len() != z.len() {
                return Err(QlbmError::Shape("X-basis table size differs".into()));
            }
            xs.push(frequencies(t).0);
        }
        Ok(Self {
            n_qubits: z.len().trailing_zeros() as usize,
            z: zf,
            z_shots,
            x: xs,
        })
    }

    /// Exact distributions of a real amplitude vector (Z and all X bases).
    pub fn exact(f: &[f64], with_x: bool) -> QlbmResult<Self> {
        let w: f64 = f.iter().map(|v| v * v).sum();
        if w == 0.0 {
            return Err(QlbmError::ZeroVector);
        }
        let n = f.len().trailing_zeros() as usize;
        let z = f.iter().map(|v| v * v / w).collect();
        let x = if with_x {
            (0..n)
                .map(|k| {
                    (0..f.len())
                        .map(|i| {
                            let p = i ^ (1 << k);
                            let h = if (i >> k) & 1 == 0 { f[i] + f[p] } else { f[p] - f[i] };
                            h * h / (2.0 * w)
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            n_qubits: n,
            z,
            z_shots: 0,
            x,
        })
    }

    /// Seeded multinomial samples of a real amplitude vector.
    pub fn sampled(f: &[f64], shots: u64, with_x: bool, seed: u64) -> QlbmResult<Self> {
        let exact = Self::exact(f, with_x)?;
        let draw = |p: &[f64], s: u64| -> Vec<u64> {
            let sampler = Sampler::from_probabilities(exact.n_qubits, p);
            let c = sampler.sample(shots, s);
            (0..p.len()).map(|i| c.get(i)).collect()
        };
        let z = draw(&exact.z, seed);
        let x: Vec<Vec<u64>> = exact
            .x
            .iter()
            .enumerate()
            .map(|(k, p)| draw(p, seed.wrapping_add(k as u64 + 1)))
            .collect();
        Self::from_counts(&z, &x)
    }
}

fn check_points(problem: &TomographyProblem, basis: &TomographyBasis) -> QlbmResult<()> {
    if basis.points() != problem.z.len() {
        return Err(QlbmError::Shape(format!(
            "basis has {} points, data {}",
            basis.points(),
            problem.z.len()
        )));
    }
    Ok(())
}

/// Z-basis negative log-likelihood (KL form) over observed points.
pub fn kl_loss(a: &[f64], problem: &TomographyProblem, basis: &TomographyBasis) -> QlbmResult<f64> {
    check_points(problem, basis)?;
    let w = basis.weight(a);
    let f = basis.eval(a);
    let mut l = 0.0;
    for (i, &p) in problem.z.iter().enumerate() {
        if p > 0.0 {
            if f[i] == 0.0 {
                return Ok(f64::INFINITY);
            }
            l -= p * (f[i] * f[i] / (w * p)).ln();
        }
    }
    Ok(l)
}

/// ∂L/∂a_j = −2 Σ P g_j/f + 2 (Ga)_j / W · Σ P.
pub fn kl_gradient(
    a: &[f64],
    problem: &TomographyProblem,
    basis: &TomographyBasis,
) -> QlbmResult<Vec<f64>> {
    check_points(problem, basis)?;
    let w = basis.weight(a);
    let f = basis.eval(a);
    let ga = &basis.gram * DVector::from_column_slice(a);
    let mut g = vec![0.0; basis.len()];
    let mut mass = 0.0;
    for (i, &p) in problem.z.iter().enumerate() {
        if p > 0.0 {
            if f[i] == 0.0 {
                return Err(QlbmError::SingularPoint(i));
            }
            mass += p;
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= 2.0 * p * basis.values[j][i] / f[i];
            }
        }
    }
    for (j, gj) in g.iter_mut().enumerate() {
        *gj += 2.0 * ga[j] * mass / w;
    }
    Ok(g)
}

/// Amplitude of X-basis outcome `i` on qubit `k` (up to 1/√(2W)) and the
/// partner point it mixes with.
fn xbasis_pair(i: usize, k: usize) -> (usize, f64) {
    let p = i ^ (1 << k);
    let sign = if (i >> k) & 1 == 0 { 1.0 } else { -1.0 };
    (p, sign)
}

/// X-basis loss for qubit `k`: outcome i has amplitude (f(i) ± f(i ⊕ 2^k))/√(2W),
/// `+` when bit k of i is 0.
pub fn xbasis_loss(
    a: &[f64],
    problem: &TomographyProblem,
    basis: &TomographyBasis,
    k: usize,
) -> QlbmResult<f64> {
    check_points(problem, basis)?;
    let px = problem
        .x
        .get(k)
        .ok_or_else(|| invalid("k", format!("no X-basis data for qubit {k}")))?;
    let w = basis.weight(a);
    let f = basis.eval(a);
    let mut l = 0.0;
    for (i, &p) in px.iter().enumerate() {
        if p > 0.0 {
            let (q, sign) = xbasis_pair(i, k);
            // Orientation-independent: (f_i ± f_q) for bit 0, (f_q − f_i) for bit 1.
            let h = if sign > 0.0 { f[i] + f[q] } else { f[q] - f[i] };
            if h == 0.0 {
                return Ok(f64::INFINITY);
            }
            l -= p * (h * h / (2.0 * w * p)).ln();
        }
    }
    Ok(l)
}

fn xbasis_gradient(
    a: &[f64],
    problem: &TomographyProblem,
    basis: &TomographyBasis,
    k: usize,
) -> QlbmResult<Vec<f64>> {
    let px = &problem.x[k];
    let w = basis.weight(a);
    let f = basis.eval(a);
    let ga = &basis.gram * DVector::from_column_slice(a);
    let mut g = vec![0.0; basis.len()];
    let mut mass = 0.0;
    for (i, &p) in px.iter().enumerate() {
        if p > 0.0 {
            let (q, sign) = xbasis_pair(i, k);
            let (h, dh): (f64, Box<dyn Fn(usize) -> f64>) = if sign > 0.0 {
                (f[i] + f[q], Box::new(move |j| basis.values[j][i] + basis.values[j][q]))
            } else {
                (f[q] - f[i], Box::new(move |j| basis.values[j][q] - basis.values[j][i]))
            };
            if h == 0.0 {
                return Err(QlbmError::SingularPoint(i));
            }
            mass += p;
            for (j, gj) in g.iter_mut().enumerate() {
                *gj -= 2.0 * p * dh(j) / h;
            }
        }
    }
    for (j, gj) in g.iter_mut().enumerate() {
        *gj += 2.0 * ga[j] * mass / w;
    }
    Ok(g)
}

/// Z loss plus every available X-basis loss.
pub fn total_loss(a: &[f64], problem: &TomographyProblem, basis: &TomographyBasis) -> QlbmResult<f64> {
    let mut l = kl_loss(a, problem, basis)?;
    for k in 0..problem.x.len() {
        l += xbasis_loss(a, problem, basis, k)?;
    }
    Ok(l)
}

pub fn total_gradient(
    a: &[f64],
    problem: &TomographyProblem,
    basis: &TomographyBasis,
) -> QlbmResult<Vec<f64>> {
    let mut g = kl_gradient(a, problem, basis)?;
    for k in 0..problem.x.len() {
        for (gj, x) in g.iter_mut().zip(xbasis_gradient(a, problem, basis, k)?) {
            *gj += x;
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub step: f64,
    pub tolerance: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            step: 0.05,
            tolerance: 1e-13,
            starts: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyFit {
    pub coefficients: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    pub constraint_residual: f64,
}

fn normalize(a: &mut [f64], basis: &TomographyBasis) -> bool {
    let w = basis.weight(a);
    if !(w > 0.0 && w.is_finite()) {
        return false;
    }
    let s = 1.0 / w.sqrt();
    a.iter_mut().for_each(|x| *x *= s);
    true
}

fn descend(
    mut a: Vec<f64>,
    problem: &TomographyProblem,
    basis: &TomographyBasis,
    opts: &FitOptions,
) -> Option<TomographyFit> {
    if !normalize(&mut a, basis) {
        return None;
    }
    let mut loss = total_loss(&a, problem, basis).ok()?;
    if !loss.is_finite() {
        return None;
    }
    let mut eta = opts.step;
    let mut it = 0;
    while it < opts.max_iterations {
        it += 1;
        let g = total_gradient(&a, problem, basis).ok()?;
        let mut accepted = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> = a.iter().zip(&g).map(|(x, d)| x - eta * d).collect();
            if normalize(&mut trial, basis) {
                if let Ok(l) = total_loss(&trial, problem, basis) {
                    if l.is_finite() && l <= loss {
                        let done = loss - l < opts.tolerance;
                        a = trial;
                        loss = l;
                        eta *= 1.5;
                        accepted = !done;
                        break;
                    }
                }
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let w = basis.weight(&a);
    Some(TomographyFit {
        coefficients: a,
        loss,
        iterations: it,
        constraint_residual: (w - 1.0).abs(),
    })
}

/// Least-squares fit of √P, a deterministic first start.
fn sqrt_start(problem: &TomographyProblem, basis: &TomographyBasis) -> Option<Vec<f64>> {
    let rhs = DVector::from_iterator(
        basis.len(),
        basis
            .values
            .iter()
            .map(|g| g.iter().zip(&problem.z).map(|(v, p)| v * p.sqrt()).sum::<f64>()),
    );
    basis
        .gram
        .clone()
        .lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
}

/// Multi-start projected gradient descent under W(a) = 1; best loss wins, ties
/// by start index.
pub fn fit(
    problem: &TomographyProblem,
    basis: &TomographyBasis,
    opts: &FitOptions,
) -> QlbmResult<TomographyFit> {
    check_points(problem, basis)?;
    if basis.is_empty() {
        return Err(invalid("basis", "empty"));
    }
    let m = basis.len();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(a) = sqrt_start(problem, basis) {
        starts.push(a);
    }
    for s in 0..opts.starts {
        let mut rng = rng_from_seed(opts.seed.wrapping_add(s as u64));
        starts.push((0..m).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    let fits: Vec<Option<TomographyFit>> = starts
        .into_par_iter()
        .map(|a| descend(a, problem, basis, opts))
        .collect();
    let mut best: Option<TomographyFit> = None;
    for f in fits.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| f.loss < b.loss) {
            best = Some(f);
        }
    }
    best.ok_or_else(|| QlbmError::NoConvergence("every start hit a singular point".into()))
}

/// Symmetry declaration for sign restoration.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetryAxis {
    /// Horizontal mirror line in cell coordinates.
    pub y_axis: f64,
    /// Per variable: true if the field is antisymmetric about the axis.
    pub antisymmetric: Vec<bool>,
}

/// Assigns + above and − below the axis to antisymmetric fields; symmetric
/// fields and cells on the axis stay non-negative.
pub fn sign_restore_symmetric(abs_f: &FieldState, axis: &SymmetryAxis) -> FieldState {
    let mut out = abs_f.clone();
    for level in out.levels.iter_mut() {
        for (v, grid) in level.iter_mut().enumerate() {
            let anti = axis.antisymmetric.get(v).copied().unwrap_or(false);
            for (i, x) in grid.iter_mut().enumerate() {
                let y = (i / abs_f.nx) as f64;
                *x = x.abs();
                if anti && y < axis.y_axis {
                    *x = -*x;
                }
            }
        }
    }
    out
}
