//! Velocity sets, equilibrium models and moment reconstruction.

use crate::error::{invalid, QlbmError, QlbmResult};
use std::fmt;
use std::str::FromStr;

/// Squared lattice speed, c_s² = 1/3.
pub const CS2: f64 = 1.0 / 3.0;

/// Lattice speed c_s = 1/√3.
pub fn lattice_speed() -> f64 {
    CS2.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatticeName {
    D2Q9,
    D2Q17,
    D3Q27,
}

impl FromStr for LatticeName {
    type Err = QlbmError;

    fn from_str(s: &str) -> QlbmResult<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D2Q9" => Ok(Self::D2Q9),
            "D2Q17" => Ok(Self::D2Q17),
            "D3Q27" => Ok(Self::D3Q27),
            _ => Err(QlbmError::UnknownLattice(s.to_string())),
        }
    }
}

impl fmt::Display for LatticeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::D2Q9 => "D2Q9",
            Self::D2Q17 => "D2Q17",
            Self::D3Q27 => "D3Q27",
        };
        f.write_str(s)
    }
}

/// Exact rational weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub const fn new(num: u32, den: u32) -> Self {
        Self { num, den }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// A discrete velocity set with weights.
///
/// For D2Q17 the entries 9..16 repeat 1..8 and carry level tag 2; their weights
/// are taken equal to the level-1 mirrors.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeConfig {
    pub name: LatticeName,
    pub dim: usize,
    pub velocities: Vec<Vec<i32>>,
    pub weights: Vec<Ratio>,
    pub c_s: f64,
    pub level_of: Vec<u8>,
}

const D2Q9_VEL: [[i32; 2]; 9] = [
    [0, 0],
    [1, 0],
    [1, 1],
    [0, 1],
    [-1, 1],
    [-1, 0],
    [-1, -1],
    [0, -1],
    [1, -1],
];

fn d2_weight(c: &[i32]) -> Ratio {
    match c.iter().map(|v| v.unsigned_abs()).sum::<u32>() {
        0 => Ratio::new(4, 9),
        1 => Ratio::new(1, 9),
        _ => Ratio::new(1, 36),
    }
}

fn d3_weight(c: &[i32]) -> Ratio {
    match c.iter().map(|v| v.unsigned_abs()).sum::<u32>() {
        0 => Ratio::new(8, 27),
        1 => Ratio::new(2, 27),
        2 => Ratio::new(1, 54),
        _ => Ratio::new(1, 216),
    }
}

/// Returns the tabulated velocity set for `name`.
pub fn standard_config(name: LatticeName) -> LatticeConfig {
    let c_s = lattice_speed();
    match name {
        LatticeName::D2Q9 | LatticeName::D2Q17 => {
            let mut velocities: Vec<Vec<i32>> = D2Q9_VEL.iter().map(|c| c.to_vec()).collect();
            let mut level_of = vec![1u8; 9];
            if name == LatticeName::D2Q17 {
                for c in &D2Q9_VEL[1..] {
                    velocities.push(c.to_vec());
                    level_of.push(2);
                }
            }
            let weights = velocities.iter().map(|c| d2_weight(c)).collect();
            LatticeConfig {
                name,
                dim: 2,
                velocities,
                weights,
                c_s,
                level_of,
            }
        }
        LatticeName::D3Q27 => {
            let mut velocities = vec![vec![0, 0, 0]];
            for z in -1..=1 {
                for y in -1..=1 {
                    for x in -1..=1 {
                        if (x, y, z) != (0, 0, 0) {
                            velocities.push(vec![x, y, z]);
                        }
                    }
                }
            }
            let weights = velocities.iter().map(|c| d3_weight(c)).collect();
            LatticeConfig {
                name,
                dim: 3,
                level_of: vec![1; velocities.len()],
                velocities,
                weights,
                c_s,
            }
        }
    }
}

impl LatticeConfig {
    /// Number of discrete velocities including level-2 copies.
    pub fn m(&self) -> usize {
        self.velocities.len()
    }

    /// Indices of level-1 velocities.
    pub fn level1(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.m()).filter(|&a| self.level_of[a] == 1)
    }

    /// Number of level-1 velocities.
    pub fn m1(&self) -> usize {
        self.level1().count()
    }

    pub fn two_levels(&self) -> bool {
        self.level_of.contains(&2)
    }

    pub fn weight(&self, a: usize) -> f64 {
        self.weights[a].value()
    }

    /// Index of the velocity opposite to `a` within the same level.
    pub fn opposite(&self, a: usize) -> usize {
        let neg: Vec<i32> = self.velocities[a].iter().map(|v| -v).collect();
        (0..self.m())
            .find(|&b| self.level_of[b] == self.level_of[a] && self.velocities[b] == neg)
            .expect("velocity sets are symmetric")
    }

    /// The one-level lattice equilibria are evaluated on (D2Q9 for D2Q17).
    pub fn base(&self) -> LatticeConfig {
        match self.name {
            LatticeName::D2Q17 => standard_config(LatticeName::D2Q9),
            _ => self.clone(),
        }
    }
}

/// Equilibrium model family.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    LowMachAthermal,
    IncompressibleAthermal { rho0: f64 },
    LinearAcoustics { rho0: f64, u0: Vec<f64> },
    ShallowWater { g: f64 },
    LinearShallowWater { g: f64, h0: f64, u0: Vec<f64> },
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::LowMachAthermal => "LowMachAthermal",
            Self::IncompressibleAthermal { .. } => "IncompressibleAthermal",
            Self::LinearAcoustics { .. } => "LinearAcoustics",
            Self::ShallowWater { .. } => "ShallowWater",
            Self::LinearShallowWater { .. } => "LinearShallowWater",
        }
    }

    /// True when F_α is affine in (V0, V1).
    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            Self::LinearAcoustics { .. } | Self::LinearShallowWater { .. }
        )
    }
}

/// Equilibrium model together with the relaxation parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicsModel {
    pub kind: ModelKind,
    pub tau: f64,
}

impl PhysicsModel {
    pub fn new(kind: ModelKind, tau: f64) -> QlbmResult<Self> {
        if !(tau > 0.5 && tau < 2.0) {
            return Err(invalid("tau", format!("{tau} not in (0.5, 2)")));
        }
        match &kind {
            ModelKind::IncompressibleAthermal { rho0 } | ModelKind::LinearAcoustics { rho0, .. }
                if *rho0 <= 0.0 =>
            {
                return Err(invalid("rho0", "must be positive"))
            }
            ModelKind::LinearShallowWater { h0, .. } if *h0 <= 0.0 => {
                return Err(invalid("h0", "must be positive"))
            }
            _ => {}
        }
        Ok(Self { kind, tau })
    }

    /// Linear acoustics around rest with unit base density.
    pub fn acoustics(tau: f64) -> Self {
        Self::new(
            ModelKind::LinearAcoustics {
                rho0: 1.0,
                u0: vec![0.0, 0.0],
            },
            tau,
        )
        .expect("valid defaults")
    }

    /// OSSLBM coefficients (c1, c2).
    pub fn osslbm_coefficients(&self) -> (f64, f64) {
        let t = self.tau;
        ((3.0 - 2.0 * t) / (2.0 - t), (t - 1.0) / (2.0 - t))
    }
}

/// Per-site macroscopic variables on a power-of-two grid, one or two time levels.
///
/// `levels[0]` is the most recent snapshot. Each level stores its variables in
/// the order (V0, V1x, V1y[, u1², u2², u1u2]) as row-major grids `x + nx*y`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub nx: usize,
    pub ny: usize,
    pub levels: Vec<Vec<Vec<f64>>>,
}

impl FieldState {
    pub fn zeros(nx: usize, ny: usize, nvars: usize, nlevels: usize) -> QlbmResult<Self> {
        if !nx.is_power_of_two() || !ny.is_power_of_two() || nx < 2 || ny < 2 {
            return Err(QlbmError::Shape(format!("grid {nx}x{ny} is not a power of two")));
        }
        if !(1..=2).contains(&nlevels) {
            return Err(invalid("levels", "must be 1 or 2"));
        }
        Ok(Self {
            nx,
            ny,
            levels: vec![vec![vec![0.0; nx * ny]; nvars]; nlevels],
        })
    }

    pub fn sites(&self) -> usize {
        self.nx * self.ny
    }

    pub fn nvars(&self) -> usize {
        self.levels[0].len()
    }

    pub fn nlevels(&self) -> usize {
        self.levels.len()
    }

    pub fn idx(&self, x: usize, y: usize) -> usize {
        x + self.nx * y
    }

    pub fn var(&self, v: usize) -> &[f64] {
        &self.levels[0][v]
    }

    pub fn var_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.levels[0][v]
    }

    pub fn get(&self, level: usize, v: usize, x: usize, y: usize) -> f64 {
        self.levels[level][v][x + self.nx * y]
    }

    pub fn set(&mut self, level: usize, v: usize, x: usize, y: usize, value: f64) {
        let nx = self.nx;
        self.levels[level][v][x + nx * y] = value;
    }

    /// Keeps only the most recent snapshot.
    pub fn current(&self) -> FieldState {
        Self {
            nx: self.nx,
            ny: self.ny,
            levels: vec![self.levels[0].clone()],
        }
    }

    /// Adds a second level equal to the first.
    pub fn with_history(&self) -> FieldState {
        let mut out = self.current();
        out.levels.push(self.levels[0].clone());
        out
    }

    /// Largest absolute entrywise difference over all levels and variables.
    pub fn max_abs_diff(&self, other: &FieldState) -> f64 {
        let shape = |f: &FieldState| (f.nx, f.ny, f.nvars(), f.nlevels());
        if shape(self) != shape(other) {
            return f64::INFINITY;
        }
        self.levels
            .iter()
            .flatten()
            .flatten()
            .zip(other.levels.iter().flatten().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Euclidean norm over all entries of all levels.
    pub fn norm(&self) -> f64 {
        self.levels
            .iter()
            .flatten()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.levels.iter_mut().flatten().flatten() {
            *v *= factor;
        }
    }
}

fn dot(a: &[i32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&c, &v)| c as f64 * v).sum()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Equilibrium distributions F_α(V0, V1) over the level-1 velocities of `config`.
///
/// `site_values` holds (V0, V1_1, …, V1_d).
pub fn equilibrium(
    model: &PhysicsModel,
    config: &LatticeConfig,
    site_values: &[f64],
) -> QlbmResult<Vec<f64>> {
    let d = config.dim;
    if site_values.len() != d + 1 {
        return Err(QlbmError::Arity {
            expected: d + 1,
            got: site_values.len(),
        });
    }
    let v0 = site_values[0];
    let v1 = &site_values[1..];
    let cs2 = CS2;
    let cs4 = cs2 * cs2;
    let base_vel = |u0: &Vec<f64>| -> QlbmResult<()> {
        if u0.len() != d {
            Err(QlbmError::Arity {
                expected: d,
                got: u0.len(),
            })
        } else {
            Ok(())
        }
    };
    let mut out = Vec::with_capacity(config.m1());
    match &model.kind {
        ModelKind::LowMachAthermal => {
            if v0 <= 0.0 {
                return Err(invalid("V0", "density must be positive"));
            }
            for a in config.level1() {
                let c = &config.velocities[a];
                let cu = dot(c, v1);
                out.push(
                    config.weight(a)
                        * (v0 + cu / cs2 + cu * cu / (2.0 * v0 * cs4)
                            - norm2(v1) / (2.0 * v0 * cs2)),
                );
            }
        }
        ModelKind::IncompressibleAthermal { rho0 } => {
            for a in config.level1() {
                let c = &config.velocities[a];
                let cu = dot(c, v1);
                out.push(
                    config.weight(a)
                        * (v0 + cu / cs2 + cu * cu / (2.0 * rho0 * cs4)
                            - norm2(v1) / (2.0 * rho0 * cs2)),
                );
            }
        }
        ModelKind::LinearAcoustics { u0, .. } => {
            // Jacobian of the low-Mach equilibrium at (ρ0, ρ0 u0); V1 is the
            // momentum fluctuation.
            base_vel(u0)?;
            let u0sq = norm2(u0);
            for a in config.level1() {
                let c = &config.velocities[a];
                let cu0 = dot(c, u0);
                let cm = dot(c, v1);
                let u0m: f64 = u0.iter().zip(v1).map(|(a, b)| a * b).sum();
                let k_rho = 1.0 - cu0 * cu0 / (2.0 * cs4) + u0sq / (2.0 * cs2);
                out.push(
                    config.weight(a)
                        * (v0 * k_rho + cm / cs2 + cu0 * cm / cs4 - u0m / cs2),
                );
            }
        }
        ModelKind::ShallowWater { g } => {
            if d != 2 {
                return Err(invalid("dim", "shallow water is two-dimensional"));
            }
            if v0 <= 0.0 {
                return Err(invalid("V0", "depth must be positive"));
            }
            let h = v0;
            let msq = norm2(v1);
            for a in config.level1() {
                let c = &config.velocities[a];
                let cm = dot(c, v1);
                let f = match c.iter().map(|x| x * x).sum::<i32>() {
                    0 => h - 5.0 * g * h * h / 6.0 - 2.0 * msq / (3.0 * h),
                    1 => g * h * h / 6.0 + cm / 3.0 + cm * cm / (2.0 * h) - msq / (6.0 * h),
                    _ => {
                        (g * h * h / 6.0 + cm / 3.0 + cm * cm / (2.0 * h) - msq / (6.0 * h))
                            / 4.0
                    }
                };
                out.push(f);
            }
        }
        ModelKind::LinearShallowWater { g, h0, u0 } => {
            if d != 2 {
                return Err(invalid("dim", "shallow water is two-dimensional"));
            }
            base_vel(u0)?;
            let u0sq = norm2(u0);
            let u0m: f64 = u0.iter().zip(v1).map(|(a, b)| a * b).sum();
            for a in config.level1() {
                let c = &config.velocities[a];
                let cu0 = dot(c, u0);
                let cm = dot(c, v1);
                let f = match c.iter().map(|x| x * x).sum::<i32>() {
                    0 => v0 * (1.0 - 5.0 * g * h0 / 3.0 + 2.0 * u0sq / 3.0) - 4.0 * u0m / 3.0,
                    n => {
                        let axis = v0 * (g * h0 / 3.0 - cu0 * cu0 / 2.0 + u0sq / 6.0) + cm / 3.0
                            + cu0 * cm
                            - u0m / 3.0;
                        if n == 1 {
                            axis
                        } else {
                            axis / 4.0
                        }
                    }
                };
                out.push(f);
            }
        }
    }
    Ok(out)
}

/// Zeroth and first moments of `f` over the level-1 velocities.
pub fn moments(f: &[f64], config: &LatticeConfig) -> QlbmResult<(f64, Vec<f64>)> {
    if f.len() != config.m1() {
        return Err(QlbmError::Arity {
            expected: config.m1(),
            got: f.len(),
        });
    }
    let mut v0 = 0.0;
    let mut v1 = vec![0.0; config.dim];
    for (k, a) in config.level1().enumerate() {
        v0 += f[k];
        for (j, c) in config.velocities[a].iter().enumerate() {
            v1[j] += *c as f64 * f[k];
        }
    }
    Ok((v0, v1))
}

/// Kinematic viscosity ν = c_s²·(Δx²/Δt)·(τ − 1/2).
pub fn viscosity(tau: f64, dx: f64, dt: f64) -> QlbmResult<f64> {
    if tau < 0.5 {
        return Err(invalid("tau", "negative viscosity below 0.5"));
    }
    if dx <= 0.0 || dt <= 0.0 {
        return Err(invalid("dx/dt", "must be positive"));
    }
    Ok(CS2 * dx * dx / dt * (tau - 0.5))
}

/// The six-term vector (V0, u1, u2, u1², u2², u1u2).
pub fn nonlinear_extend(v0: f64, u: [f64; 2]) -> [f64; 6] {
    [v0, u[0], u[1], u[0] * u[0], u[1] * u[1], u[0] * u[1]]
}

/// Extended input vector on which `model`'s equilibrium is linear.
///
/// Incompressible: (V0, V1, u², u², u1u2) with u = V1/ρ0. Low Mach: the same
/// products weighted by ρ = V0, i.e. (ρ, ρu, ρu1², ρu2², ρu1u2).
pub fn extended_inputs(model: &PhysicsModel, v0: f64, v1: [f64; 2]) -> QlbmResult<[f64; 6]> {
    match &model.kind {
        ModelKind::IncompressibleAthermal { rho0 } => {
            let u = [v1[0] / rho0, v1[1] / rho0];
            let e = nonlinear_extend(v0, u);
            Ok([v0, v1[0], v1[1], e[3], e[4], e[5]])
        }
        ModelKind::LowMachAthermal => {
            if v0 <= 0.0 {
                return Err(invalid("V0", "density must be positive"));
            }
            Ok([
                v0,
                v1[0],
                v1[1],
                v1[0] * v1[0] / v0,
                v1[1] * v1[1] / v0,
                v1[0] * v1[1] / v0,
            ])
        }
        other => Err(QlbmError::ModelMode {
            model: other.label(),
            mode: "nonlinear-extended",
        }),
    }
}

/// Coefficient rows of F_α as a linear map of the model's input vector.
///
/// Linear models use (V0, V1x, V1y); the two nonlinear models use the six-term
/// extended vector. Rows follow the level-1 velocity order of `config`.
pub fn coefficient_rows(model: &PhysicsModel, config: &LatticeConfig) -> QlbmResult<Vec<Vec<f64>>> {
    if config.dim != 2 {
        return Err(invalid("dim", "collision rows are built for 2D lattices"));
    }
    let base = config.base();
    let cs2 = CS2;
    let cs4 = cs2 * cs2;
    if model.kind.is_linear() {
        // Columns are the responses to unit inputs.
        let mut cols = Vec::with_capacity(3);
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            cols.push(equilibrium(model, &base, &e)?);
        }
        return Ok((0..base.m1())
            .map(|a| (0..3).map(|j| cols[j][a]).collect())
            .collect());
    }
    let scale = match &model.kind {
        ModelKind::IncompressibleAthermal { rho0 } => *rho0,
        ModelKind::LowMachAthermal => 1.0,
        other => {
            return Err(QlbmError::ModelMode {
                model: other.label(),
                mode: "nonlinear-extended",
            })
        }
    };
    Ok(base
        .level1()
        .map(|a| {
            let c = &base.velocities[a];
            let (cx, cy) = (c[0] as f64, c[1] as f64);
            let w = base.weight(a);
            vec![
                w,
                w * cx / cs2,
                w * cy / cs2,
                w * scale * (cx * cx / (2.0 * cs4) - 1.0 / (2.0 * cs2)),
                w * scale * (cy * cy / (2.0 * cs4) - 1.0 / (2.0 * cs2)),
                w * scale * (cx * cy / cs4),
            ]
        })
        .collect())
}
