//! The Poincaré map on `{y = 0}` and its differential within an energy level.

use serde::{Deserialize, Serialize};

use crate::coords;
use crate::dynamics::{self, CartesianState, MassParams, VariationalState};
use crate::error::{domain, Error, Result};
use crate::integrate::{Direction, EventHit, Integrator, StateEvent, Trajectory};

/// Default iterate count of the section map.
pub const DEFAULT_ITERATE: usize = 4;

/// A point of `{y = 0}` on a fixed energy level. `sign` is the sign of `dy/dt`
/// and selects the root of the energy relation for `p_y`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionPoint {
    pub x: f64,
    pub px: f64,
    pub J: f64,
    pub sign: f64,
}

impl SectionPoint {
    #[allow(non_snake_case)]
    pub fn new(x: f64, px: f64, J: f64, sign: f64) -> Self {
        Self { x, px, J, sign: if sign < 0.0 { -1.0 } else { 1.0 } }
    }

    /// Recovers `p_y` from the energy relation.
    pub fn py(&self, p: &MassParams) -> Result<f64> {
        let (r1, r2) = dynamics::distances(&[self.x, 0.0, 0.0, 0.0], p.mu);
        let jup = if p.mu == 0.0 { 0.0 } else { p.mu / r1 };
        let omega = jup + (1.0 - p.mu) / r2;
        let disc = self.x * self.x + 2.0 * (self.J + omega) - self.px * self.px;
        if disc < 0.0 {
            return domain(format!("no real p_y at x = {}, p_x = {} (discriminant {disc:e})", self.x, self.px));
        }
        Ok(self.x + self.sign * disc.sqrt())
    }

    pub fn lift(&self, p: &MassParams) -> Result<CartesianState> {
        Ok(CartesianState::new(self.x, 0.0, self.px, self.py(p)?))
    }

    /// Projects a state lying on the section.
    pub fn from_state(s: &CartesianState, p: &MassParams) -> Result<Self> {
        let j = dynamics::jacobi_energy(s, p)?;
        Ok(Self::new(s.x, s.px, j, s.py - s.x))
    }

    /// Image under the time-reversal reflection.
    pub fn reflect(&self) -> Self {
        Self { px: -self.px, ..*self }
    }

    pub fn coords(&self) -> [f64; 2] {
        [self.x, self.px]
    }
}

/// Result of one section map evaluation.
#[derive(Debug, Clone, Copy)]
pub struct SectionHit {
    pub point: SectionPoint,
    pub state: CartesianState,
    pub t: f64,
    /// A crossing along the way was tangential.
    pub tangency: bool,
    /// Smallest `|dy/dt|` over the counted crossings.
    pub min_rate: f64,
}

/// The section map `P` and its iterates; negative `k` iterates backwards.
#[derive(Debug, Clone, Copy)]
pub struct SectionMap {
    pub integ: Integrator,
}

impl SectionMap {
    pub fn new(integ: Integrator) -> Self {
        Self { integ }
    }

    pub fn params(&self) -> &MassParams {
        &self.integ.params
    }

    /// State after the `|k|`-th crossing of `{y = 0}`.
    pub fn poincare(&self, p: &SectionPoint, k: i32) -> Result<SectionHit> {
        if k == 0 {
            return domain("section map iterate must be nonzero");
        }
        let s = p.lift(&self.integ.params)?;
        let time_dir = if k > 0 { 1.0 } else { -1.0 };
        let mut min_rate = f64::INFINITY;
        let mut tangency = false;
        let mut count = 0;
        let mut last: Option<EventHit<4>> = None;
        crate::integrate::events::scan_events(
            &self.integ.system(),
            &self.integ.cfg,
            0.0,
            s.to_array(),
            &StateEvent(1),
            time_dir,
            |hit| {
                count += 1;
                min_rate = min_rate.min(hit.rate.abs());
                tangency |= hit.tangency;
                if count == k.unsigned_abs() as usize {
                    last = Some(*hit);
                    false
                } else {
                    true
                }
            },
        )?;
        let hit = last.ok_or(Error::EventNotFound { t_max: time_dir * self.integ.cfg.max_time })?;
        let mut y = hit.y;
        y[1] = 0.0;
        let state = CartesianState::from_array(y);
        let point = SectionPoint::new(state.x, state.px, p.J, hit.rate);
        Ok(SectionHit { point, state, t: hit.t, tangency, min_rate })
    }

    /// Differential of `P^k` restricted to the energy level, on `(x, p_x)`.
    pub fn dpoincare(&self, p: &SectionPoint, k: i32) -> Result<([[f64; 2]; 2], SectionHit)> {
        if k == 0 {
            return domain("section map iterate must be nonzero");
        }
        let params = self.integ.params;
        let s = p.lift(&params)?;
        let time_dir = if k > 0 { 1.0 } else { -1.0 };
        let v0 = VariationalState::identity(s);
        let hit = self.integ.locate_event_variational(&v0, &StateEvent(1), Direction::Any, k.unsigned_abs() as usize, time_dir)?;
        if hit.tangency {
            return Err(Error::Tangency { t: hit.t, rate: hit.rate });
        }
        let v = VariationalState::from_array(&hit.y);
        let m = section_differential(&v, &s, params.mu);
        let mut y = [hit.y[0], 0.0, hit.y[2], hit.y[3]];
        y[1] = 0.0;
        let state = CartesianState::from_array(y);
        let point = SectionPoint::new(state.x, state.px, p.J, hit.rate);
        Ok((m, SectionHit { point, state, t: hit.t, tangency: false, min_rate: hit.rate.abs() }))
    }
}

/// Projects a flow differential onto the section and energy level.
///
/// Input tangents are `(dx, dpx)` at `start` with `dy = 0` and `dpy` fixed by
/// `dJ = 0`; the output is the `(x, p_x)` part after removing the time shift
/// to `{y = 0}`.
pub fn section_differential(v: &VariationalState, start: &CartesianState, mu: f64) -> [[f64; 2]; 2] {
    let f0 = dynamics::rhs(&start.to_array(), mu);
    // gradient of J is (-f[2], -f[3], f[0], f[1])
    let (jx, jpx, jpy) = (-f0[2], f0[0], f0[1]);
    let tangents = [[1.0, 0.0, 0.0, -jx / jpy], [0.0, 0.0, 1.0, -jpx / jpy]];
    let end = v.base.to_array();
    let f1 = dynamics::rhs(&end, mu);
    let mut out = [[0.0; 2]; 2];
    for (c, t) in tangents.iter().enumerate() {
        let d = crate::linalg::mat_vec4(&v.jacobian, t);
        let dt = -d[1] / f1[1];
        out[0][c] = d[0] + f1[0] * dt;
        out[1][c] = d[2] + f1[2] * dt;
    }
    out
}

/// `dg/dt` along a trajectory.
#[derive(Debug, Clone)]
pub struct DgdtReport {
    pub samples: Vec<(f64, f64)>,
    pub first_sign_change: Option<f64>,
    pub skipped: usize,
}

/// Samples `dg/dt = -1 + mu dG(Delta H_circ)` at `per_segment` points per step.
pub fn monitor_dgdt(traj: &Trajectory<4>, params: &MassParams, per_segment: usize) -> DgdtReport {
    let mut samples = Vec::new();
    let mut skipped = 0;
    let n = per_segment.max(1);
    let mut push = |t: f64, y: [f64; 4]| {
        let s = CartesianState::from_array(y);
        match coords::cart_to_delaunay(&s).and_then(|d| dynamics::dG_delta_h_circ(&d, params)) {
            Ok(v) => samples.push((t, -1.0 + params.mu * v)),
            Err(_) => skipped += 1,
        }
    };
    if let Some(first) = traj.segments().first() {
        push(first.t_old, first.eval(first.t_old));
    }
    for seg in traj.segments() {
        for j in 1..=n {
            let t = seg.t_old + (seg.t_new - seg.t_old) * j as f64 / n as f64;
            push(t, seg.eval(t));
        }
    }
    let first_sign_change = samples
        .windows(2)
        .find(|w| w[0].1.signum() != w[1].1.signum())
        .map(|w| 0.5 * (w[0].0 + w[1].0));
    DgdtReport { samples, first_sign_change, skipped }
}
