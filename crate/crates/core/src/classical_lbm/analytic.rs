//! Inviscid 2D acoustic pressure of a Gaussian pulse released from rest.
//!
//! With p(r, 0) = exp(−βr²) and zero initial velocity the Hankel-transform
//! solution is p(r, t) = ∫₀^∞ k/(2β) · exp(−k²/4β) · cos(ckt) · J₀(kr) dk.

use crate::error::{invalid, QlbmError, QlbmResult};
use std::collections::HashMap;

/// Cell-centred sampling grid: cell (i, j) sits at ((i − cx)·dx, (j − cy)·dx).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseGrid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PulseGrid {
    /// Grid with the pulse at cell (nx/2, ny/2).
    pub fn centered(nx: usize, ny: usize, dx: f64) -> Self {
        Self {
            nx,
            ny,
            dx,
            cx: (nx / 2) as f64,
            cy: (ny / 2) as f64,
        }
    }

    pub fn radius(&self, i: usize, j: usize) -> f64 {
        let x = (i as f64 - self.cx) * self.dx;
        let y = (j as f64 - self.cy) * self.dx;
        x.hypot(y)
    }
}

const TOL: f64 = 1e-8;

/// p(r, t) for a single radius.
pub fn pulse_radial(beta: f64, r: f64, t: f64, c: f64) -> QlbmResult<f64> {
    if t == 0.0 {
        return Ok((-beta * r * r).exp());
    }
    // exp(−k²/4β) < 1e-18 beyond this cut-off.
    let kmax = (4.0 * beta * 18.0 * std::f64::consts::LN_10).sqrt();
    let freq = r + c * t + 1.0;
    let panels = ((kmax * freq / std::f64::consts::PI).ceil() as usize).max(8);
    let h = kmax / panels as f64;
    let integrand = |k: f64| {
        k / (2.0 * beta) * (-k * k / (4.0 * beta)).exp() * (c * k * t).cos() * puruspe::Jn(0, k * r)
    };
    let mut total = 0.0;
    let mut err = 0.0;
    for p in 0..panels {
        let a = p as f64 * h;
        let out = quadrature::integrate(integrand, a, a + h, 1e-3 * TOL / panels as f64);
        total += out.integral;
        err += out.error_estimate.abs();
    }
    if !(total.is_finite() && err <= TOL * total.abs().max(1e-2)) {
        return Err(QlbmError::NoConvergence(format!(
            "pulse quadrature at r={r}, t={t}: error estimate {err:e}"
        )));
    }
    Ok(total)
}

/// Pressure field on `grid` at time `t`, row-major `i + nx*j`.
pub fn gaussian_pulse_analytic(beta: f64, t: f64, grid: &PulseGrid, c: f64) -> QlbmResult<Vec<f64>> {
    if beta <= 0.0 {
        return Err(invalid("beta", "must be positive"));
    }
    if t < 0.0 {
        return Err(invalid("t", "must be non-negative"));
    }
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut out = Vec::with_capacity(grid.nx * grid.ny);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let r = grid.radius(i, j);
            let v = match cache.get(&r.to_bits()) {
                Some(v) => *v,
                None => {
                    let v = pulse_radial(beta, r, t, c)?;
                    cache.insert(r.to_bits(), v);
                    v
                }
            };
            out.push(v);
        }
    }
    Ok(out)
}
