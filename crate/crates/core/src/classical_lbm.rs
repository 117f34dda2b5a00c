//! Reference Tau1 and OSSLBM time stepping on periodic grids with edge conditions
//! and immersed rectangular objects.

mod analytic;

pub use analytic::{gaussian_pulse_analytic, PulseGrid};

use crate::error::{invalid, QlbmResult};
use crate::lattice::{equilibrium, FieldState, LatticeConfig, PhysicsModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

impl Edge {
    /// Application order for corner cells: later edges overwrite earlier ones.
    pub const ORDER: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];
}

#[derive(Clone, Debug, PartialEq)]
pub enum EdgeCondition {
    Periodic,
    DirichletZero,
    ZeroGradient,
    /// Prescribed velocity; V0 is left as streamed.
    Inlet { u: [f64; 2] },
}

/// Edge conditions for the four domain edges.
///
/// `applies[v]` switches the conditions off for variable `v`; variables beyond
/// the end of the list are affected.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySpec {
    pub left: EdgeCondition,
    pub right: EdgeCondition,
    pub bottom: EdgeCondition,
    pub top: EdgeCondition,
    pub applies: Vec<bool>,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::periodic()
    }
}

impl BoundarySpec {
    pub fn periodic() -> Self {
        Self {
            left: EdgeCondition::Periodic,
            right: EdgeCondition::Periodic,
            bottom: EdgeCondition::Periodic,
            top: EdgeCondition::Periodic,
            applies: Vec::new(),
        }
    }

    pub fn new(
        left: EdgeCondition,
        right: EdgeCondition,
        bottom: EdgeCondition,
        top: EdgeCondition,
    ) -> QlbmResult<Self> {
        let bc = Self {
            left,
            right,
            bottom,
            top,
            applies: Vec::new(),
        };
        bc.validate()?;
        Ok(bc)
    }

    pub fn validate(&self) -> QlbmResult<()> {
        let p = |c: &EdgeCondition| matches!(c, EdgeCondition::Periodic);
        if p(&self.left) != p(&self.right) || p(&self.bottom) != p(&self.top) {
            return Err(invalid("boundary", "periodic edges must come in opposite pairs"));
        }
        for c in [&self.left, &self.right, &self.bottom, &self.top] {
            if let EdgeCondition::Inlet { u } = c {
                if !u.iter().all(|v| v.is_finite()) {
                    return Err(invalid("inlet", "velocity must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn edge(&self, e: Edge) -> &EdgeCondition {
        match e {
            Edge::Left => &self.left,
            Edge::Right => &self.right,
            Edge::Bottom => &self.bottom,
            Edge::Top => &self.top,
        }
    }

    pub fn x_bounded(&self) -> bool {
        !matches!(self.left, EdgeCondition::Periodic)
    }

    pub fn y_bounded(&self) -> bool {
        !matches!(self.bottom, EdgeCondition::Periodic)
    }

    pub fn applies_to(&self, v: usize) -> bool {
        self.applies.get(v).copied().unwrap_or(true)
    }

    /// True if cell (x, y) lies within two cells of a bounded edge.
    pub fn in_layer(&self, nx: usize, ny: usize, x: usize, y: usize) -> bool {
        (self.x_bounded() && (x < 2 || x + 2 >= nx)) || (self.y_bounded() && (y < 2 || y + 2 >= ny))
    }
}

/// Axis-aligned rectangle of cells `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Cells of the two outermost layers inside the rectangle.
    pub fn in_shell(&self, x: usize, y: usize) -> bool {
        self.contains(x, y)
            && (x < self.x0 + 2 || x + 2 >= self.x1 || y < self.y0 + 2 || y + 2 >= self.y1)
    }
}

/// Solid objects modeled by zeroing all variables in their cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjectMask {
    pub rects: Vec<Rect>,
    /// Zero whole rectangles instead of their two-layer shells.
    pub full_interior: bool,
}

impl ObjectMask {
    pub fn new(rects: Vec<Rect>, nx: usize, ny: usize) -> QlbmResult<Self> {
        for r in &rects {
            if r.x0 >= r.x1 || r.y0 >= r.y1 {
                return Err(invalid("mask", format!("empty rectangle {r:?}")));
            }
            if r.x0 < 2 || r.y0 < 2 || r.x1 + 2 > nx || r.y1 + 2 > ny {
                return Err(invalid("mask", format!("{r:?} needs two cells of clearance")));
            }
        }
        Ok(Self {
            rects,
            full_interior: false,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }

    pub fn masked(&self, x: usize, y: usize) -> bool {
        self.rects.iter().any(|r| {
            if self.full_interior {
                r.contains(x, y)
            } else {
                r.in_shell(x, y)
            }
        })
    }

    /// Site indices `x + nx*y` of all masked cells, ascending.
    pub fn cells(&self, nx: usize, ny: usize) -> Vec<usize> {
        (0..nx * ny)
            .filter(|&i| self.masked(i % nx, i / nx))
            .collect()
    }
}

/// Solver state: fields (one level for Tau1, two for OSSLBM) and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    pub fields: FieldState,
    pub step: usize,
    pub dx: f64,
    pub dt: f64,
}

impl SolverState {
    pub fn new(fields: FieldState) -> Self {
        Self {
            fields,
            step: 0,
            dx: 1.0,
            dt: 1.0,
        }
    }
}

fn equilibria(
    model: &PhysicsModel,
    base: &LatticeConfig,
    vars: &[Vec<f64>],
) -> QlbmResult<Vec<Vec<f64>>> {
    let n = vars[0].len();
    (0..n)
        .map(|i| equilibrium(model, base, &[vars[0][i], vars[1][i], vars[2][i]]))
        .collect()
}

/// V(x) = Σ_α (1, c_α) F_α(x − hop·c_α) with periodic wrap.
fn stream_moments(
    feq: &[Vec<f64>],
    base: &LatticeConfig,
    nx: usize,
    ny: usize,
    hop: i64,
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; nx * ny]; 3];
    for y in 0..ny {
        for x in 0..nx {
            let i = x + nx * y;
            for (k, a) in base.level1().enumerate() {
                let c = &base.velocities[a];
                let sx = (x as i64 - hop * c[0] as i64).rem_euclid(nx as i64) as usize;
                let sy = (y as i64 - hop * c[1] as i64).rem_euclid(ny as i64) as usize;
                let f = feq[sx + nx * sy][k];
                out[0][i] += f;
                out[1][i] += c[0] as f64 * f;
                out[2][i] += c[1] as f64 * f;
            }
        }
    }
    out
}

fn check_three(fields: &FieldState) -> QlbmResult<()> {
    if fields.nvars() != 3 {
        return Err(crate::error::QlbmError::Arity {
            expected: 3,
            got: fields.nvars(),
        });
    }
    Ok(())
}

/// One Tau1 step: streamed equilibria, then edge conditions and mask.
pub fn tau1_step(
    state: &SolverState,
    model: &PhysicsModel,
    config: &LatticeConfig,
    bc: &BoundarySpec,
    mask: &ObjectMask,
) -> QlbmResult<SolverState> {
    let f = &state.fields;
    check_three(f)?;
    let base = config.base();
    let feq = equilibria(model, &base, &f.levels[0])?;
    let mut fields = FieldState {
        nx: f.nx,
        ny: f.ny,
        levels: vec![stream_moments(&feq, &base, f.nx, f.ny, 1)],
    };
    fields = apply_mask(&apply_boundary(&fields, bc), mask);
    Ok(SolverState {
        fields,
        step: state.step + 1,
        dx: state.dx,
        dt: state.dt,
    })
}

/// One OSSLBM step on a two-level state.
///
/// Cells within two cells of a bounded edge take the Tau1 value; the new
/// second level is the old first level (masked).
pub fn osslbm_step(
    state: &SolverState,
    model: &PhysicsModel,
    config: &LatticeConfig,
    bc: &BoundarySpec,
    mask: &ObjectMask,
) -> QlbmResult<SolverState> {
    let f = &state.fields;
    check_three(f)?;
    if f.nlevels() != 2 {
        return Err(invalid("levels", "OSSLBM needs two time levels"));
    }
    if !(model.tau > 0.5 && model.tau < 2.0) {
        return Err(invalid("tau", format!("{} not in (0.5, 2)", model.tau)));
    }
    let base = config.base();
    let (nx, ny) = (f.nx, f.ny);
    let feq1 = equilibria(model, &base, &f.levels[0])?;
    let mut current = stream_moments(&feq1, &base, nx, ny, 1);
    let (c1, c2) = model.osslbm_coefficients();
    if c2 != 0.0 {
        let feq2 = equilibria(model, &base, &f.levels[1])?;
        let older = stream_moments(&feq2, &base, nx, ny, 2);
        for y in 0..ny {
            for x in 0..nx {
                if bc.in_layer(nx, ny, x, y) {
                    continue;
                }
                let i = x + nx * y;
                for v in 0..3 {
                    current[v][i] = c1 * current[v][i] + c2 * older[v][i];
                }
            }
        }
    }
    let head = FieldState {
        nx,
        ny,
        levels: vec![current],
    };
    let head = apply_mask(&apply_boundary(&head, bc), mask);
    let prev = apply_mask(&f.current(), mask);
    let fields = FieldState {
        nx,
        ny,
        levels: vec![head.levels[0].clone(), prev.levels[0].clone()],
    };
    Ok(SolverState {
        fields,
        step: state.step + 1,
        dx: state.dx,
        dt: state.dt,
    })
}

/// Applies the edge conditions to the first level, in the order left, right,
/// bottom, top.
pub fn apply_boundary(fields: &FieldState, bc: &BoundarySpec) -> FieldState {
    let mut out = fields.clone();
    let (nx, ny) = (fields.nx, fields.ny);
    for e in Edge::ORDER {
        let cond = bc.edge(e);
        if matches!(cond, EdgeCondition::Periodic) {
            continue;
        }
        // (outer, inner) cell pairs along this edge.
        let pairs: Vec<(usize, usize)> = match e {
            Edge::Left => (0..ny).map(|y| (nx * y, 1 + nx * y)).collect(),
            Edge::Right => (0..ny)
                .map(|y| (nx - 1 + nx * y, nx - 2 + nx * y))
                .collect(),
            Edge::Bottom => (0..nx).map(|x| (x, x + nx)).collect(),
            Edge::Top => (0..nx)
                .map(|x| (x + nx * (ny - 1), x + nx * (ny - 2)))
                .collect(),
        };
        let vars = &mut out.levels[0];
        for (v, grid) in vars.iter_mut().enumerate() {
            if !bc.applies_to(v) {
                continue;
            }
            for &(o, i) in &pairs {
                match cond {
                    EdgeCondition::ZeroGradient => grid[o] = grid[i],
                    EdgeCondition::DirichletZero => grid[o] = 0.0,
                    EdgeCondition::Inlet { u } => {
                        if v == 1 || v == 2 {
                            grid[o] = u[v - 1];
                        }
                    }
                    EdgeCondition::Periodic => {}
                }
            }
        }
    }
    out
}

/// Zeros every variable of every level on the masked cells.
pub fn apply_mask(fields: &FieldState, mask: &ObjectMask) -> FieldState {
    let mut out = fields.clone();
    if mask.is_empty() {
        return out;
    }
    let cells = mask.cells(fields.nx, fields.ny);
    for grid in out.levels.iter_mut().flatten() {
        for &i in &cells {
            grid[i] = 0.0;
        }
    }
    out
}

/// Repeats the step matching the number of stored levels; returns all snapshots.
pub fn run_simulation(
    state: &SolverState,
    model: &PhysicsModel,
    config: &LatticeConfig,
    bc: &BoundarySpec,
    mask: &ObjectMask,
    steps: usize,
) -> QlbmResult<Vec<SolverState>> {
    let mut out = vec![state.clone()];
    for _ in 0..steps {
        let last = out.last().expect("non-empty");
        let next = if last.fields.nlevels() == 2 {
            osslbm_step(last, model, config, bc, mask)?
        } else {
            tau1_step(last, model, config, bc, mask)?
        };
        out.push(next);
    }
    Ok(out)
}

/// Mean squared difference of the first level over all variables and sites.
pub fn mse(a: &FieldState, b: &FieldState) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (ga, gb) in a.levels[0].iter().zip(&b.levels[0]) {
        for (x, y) in ga.iter().zip(gb) {
            acc += (x - y) * (x - y);
            n += 1;
        }
    }
    acc / n.max(1) as f64
}

/// Iterates until successive snapshots differ by less than `tol` in MSE.
pub fn steady_state(
    state: &SolverState,
    model: &PhysicsModel,
    config: &LatticeConfig,
    bc: &BoundarySpec,
    mask: &ObjectMask,
    tol: f64,
    max_steps: usize,
) -> QlbmResult<SolverState> {
    let mut cur = state.clone();
    for _ in 0..max_steps {
        let next = run_simulation(&cur, model, config, bc, mask, 1)?.pop().expect("one step");
        let d = mse(&cur.fields, &next.fields);
        cur = next;
        if d < tol {
            return Ok(cur);
        }
    }
    Err(crate::error::QlbmError::NoConvergence(format!(
        "no steady state within {max_steps} steps"
    )))
}
