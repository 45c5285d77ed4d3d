//! Adaptive high-order integration of the rotating-frame flow, dense event
//! location and variational propagation.

mod dop853;
pub mod events;
mod tableau;

use serde::{Deserialize, Serialize};

pub use dop853::{DenseSegment, Stepper};
pub use events::{Direction, Event, EventHit, StateEvent};

use crate::dynamics::{self, CartesianState, MassParams, VariationalState};
use crate::error::{Error, Primary, Result};

/// Distance to a primary below which integration aborts.
pub const COLLISION_RADIUS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub max_time: f64,
    pub min_step: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-14, rel_tol: 1e-14, max_step: 0.5, max_time: 1e4, min_step: 0.0 }
    }
}

impl IntegratorConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { abs_tol: tol, rel_tol: tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("abs_tol", self.abs_tol), ("rel_tol", self.rel_tol)] {
            if !(v > 1e-16 && v < 1e-6) {
                return Err(Error::Config(format!("{name} = {v:e} outside (1e-16, 1e-6)")));
            }
        }
        if !(self.max_time > 0.0) || !(self.max_step > 0.0) {
            return Err(Error::Config("max_time and max_step must be positive".into()));
        }
        Ok(())
    }
}

pub trait OdeSystem<const N: usize> {
    fn eval(&self, t: f64, y: &[f64; N]) -> [f64; N];

    /// Rejects states the integration must not continue from.
    fn check(&self, _t: f64, _y: &[f64; N]) -> Result<()> {
        Ok(())
    }
}

fn guard(t: f64, y: &[f64], mu: f64) -> Result<()> {
    let s = [y[0], y[1], y[2], y[3]];
    let (r1, r2) = dynamics::distances(&s, mu);
    let primary = if r1 < COLLISION_RADIUS && mu > 0.0 {
        Some(Primary::Jupiter)
    } else if r2 < COLLISION_RADIUS {
        Some(Primary::Sun)
    } else {
        None
    };
    match primary {
        Some(primary) => Err(Error::CollisionApproach { primary, t, last_state: s }),
        None => Ok(()),
    }
}

/// The circular problem in rotating coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Circular {
    pub mu: f64,
}

impl OdeSystem<4> for Circular {
    #[inline]
    fn eval(&self, _t: f64, y: &[f64; 4]) -> [f64; 4] {
        dynamics::rhs(y, self.mu)
    }

    fn check(&self, t: f64, y: &[f64; 4]) -> Result<()> {
        guard(t, y, self.mu)
    }
}

/// The circular problem together with its variational equations.
#[derive(Debug, Clone, Copy)]
pub struct CircularVariational {
    pub mu: f64,
}

impl OdeSystem<20> for CircularVariational {
    #[inline]
    fn eval(&self, _t: f64, y: &[f64; 20]) -> [f64; 20] {
        dynamics::rhs_variational(y, self.mu)
    }

    fn check(&self, t: f64, y: &[f64; 20]) -> Result<()> {
        guard(t, y, self.mu)
    }
}

/// Integrates `y0` from `t0` to `t1` (either direction).
pub fn flow_array<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    cfg: &IntegratorConfig,
    t0: f64,
    y0: [f64; N],
    t1: f64,
) -> Result<[f64; N]> {
    if t1 == t0 {
        return Ok(y0);
    }
    if (t1 - t0).abs() > cfg.max_time {
        return Err(Error::Config(format!("span {} exceeds max_time {}", t1 - t0, cfg.max_time)));
    }
    let mut st = Stepper::new(sys, *cfg, t0, y0, t1 - t0)?;
    while st.t() != t1 {
        st.step(t1)?;
    }
    Ok(*st.y())
}

/// Ends of the adaptive steps from `t0` to `t1`.
pub fn step_nodes<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    cfg: &IntegratorConfig,
    t0: f64,
    y0: [f64; N],
    t1: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    if t1 != t0 {
        let mut st = Stepper::new(sys, *cfg, t0, y0, t1 - t0)?;
        while st.t() != t1 {
            st.step(t1)?;
            out.push(st.t());
        }
    }
    Ok(out)
}

/// Samples of an integrated orbit with dense interpolation between nodes.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize = 4> {
    segments: Vec<DenseSegment<N>>,
    pub t0: f64,
    pub t1: f64,
}

impl<const N: usize> Trajectory<N> {
    pub fn segments(&self) -> &[DenseSegment<N>] {
        &self.segments
    }

    pub fn nodes(&self) -> Vec<f64> {
        let mut out = vec![self.t0];
        out.extend(self.segments.iter().map(|s| s.t_new));
        out
    }

    /// Dense evaluation at `t` inside the integrated span.
    pub fn eval(&self, t: f64) -> Option<[f64; N]> {
        let forward = self.t1 >= self.t0;
        let idx = self.segments.partition_point(|s| if forward { s.t_new < t } else { s.t_new > t });
        let seg = self.segments.get(idx)?;
        if seg.contains(t) {
            Some(seg.eval(t))
        } else {
            None
        }
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }
}

pub fn trajectory_array<const N: usize, S: OdeSystem<N>>(
    sys: &S,
    cfg: &IntegratorConfig,
    t0: f64,
    y0: [f64; N],
    t1: f64,
) -> Result<Trajectory<N>> {
    let mut segments = Vec::new();
    if t1 != t0 {
        let mut st = Stepper::new(sys, *cfg, t0, y0, t1 - t0)?;
        while st.t() != t1 {
            st.step(t1)?;
            segments.push(st.dense());
        }
    }
    Ok(Trajectory { segments, t0, t1 })
}

/// Convenience front end for the circular problem at a fixed mass ratio.
#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub params: MassParams,
    pub cfg: IntegratorConfig,
}

impl Integrator {
    pub fn new(params: MassParams, cfg: IntegratorConfig) -> Self {
        Self { params, cfg }
    }

    pub fn system(&self) -> Circular {
        Circular { mu: self.params.mu }
    }

    pub fn variational_system(&self) -> CircularVariational {
        CircularVariational { mu: self.params.mu }
    }

    /// State after time `t` (negative for backward flow).
    pub fn flow(&self, s: &CartesianState, t: f64) -> Result<CartesianState> {
        let y = flow_array(&self.system(), &self.cfg, 0.0, s.to_array(), t)?;
        Ok(CartesianState::from_array(y))
    }

    pub fn trajectory(&self, s: &CartesianState, t: f64) -> Result<Trajectory<4>> {
        trajectory_array(&self.system(), &self.cfg, 0.0, s.to_array(), t)
    }

    pub fn flow_with_variationals(&self, v: &VariationalState, t: f64) -> Result<VariationalState> {
        let y = flow_array(&self.variational_system(), &self.cfg, 0.0, v.to_array(), t)?;
        Ok(VariationalState::from_array(&y))
    }

    /// The `count`-th crossing of `event` in the requested direction.
    pub fn locate_event<E: Event<4>>(
        &self,
        s: &CartesianState,
        event: &E,
        direction: Direction,
        count: usize,
        time_dir: f64,
    ) -> Result<EventHit<4>> {
        events::nth_event(&self.system(), &self.cfg, 0.0, s.to_array(), event, direction, count, time_dir)
    }

    pub fn locate_event_variational<E: Event<20>>(
        &self,
        v: &VariationalState,
        event: &E,
        direction: Direction,
        count: usize,
        time_dir: f64,
    ) -> Result<EventHit<20>> {
        events::nth_event(&self.variational_system(), &self.cfg, 0.0, v.to_array(), event, direction, count, time_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{jacobi_energy, MU_SUN_JUPITER};
    use std::f64::consts::TAU;

    fn jup() -> Integrator {
        Integrator::new(MassParams::default(), IntegratorConfig::default())
    }

    #[test]
    fn circular_equilibrium_returns_after_two_pi() {
        let it = Integrator::new(MassParams::new(0.0).unwrap(), IntegratorConfig::default());
        let s = CartesianState::new(1.0, 0.0, 0.0, 1.0);
        let out = it.flow(&s, TAU).unwrap();
        for (a, b) in out.to_array().iter().zip(s.to_array()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn kepler_ellipse_is_periodic_in_inertial_frame() {
        // e = 0.5, a = 1 ellipse at mu = 0: after 2 pi the rotating frame has turned once too
        let it = Integrator::new(MassParams::new(0.0).unwrap(), IntegratorConfig::default());
        let s = CartesianState::new(0.5, 0.0, 0.0, 3f64.sqrt());
        let out = it.flow(&s, TAU).unwrap();
        for (a, b) in out.to_array().iter().zip(s.to_array()) {
            assert!((a - b).abs() < 1e-10, "{out:?}");
        }
    }

    #[test]
    fn forward_backward_closure() {
        let it = jup();
        let s = CartesianState::new(0.577, 0.02, 0.01, 1.177);
        let fwd = it.flow(&s, 50.0).unwrap();
        let back = it.flow(&fwd, -50.0).unwrap();
        for (a, b) in back.to_array().iter().zip(s.to_array()) {
            assert!((a - b).abs() < 1e-9, "{back:?}");
        }
    }

    #[test]
    fn energy_drift_over_hundred_time_units() {
        let it = jup();
        let p = MassParams::default();
        let s = CartesianState::new(0.3, 0.1, -0.2, 1.2);
        let j0 = jacobi_energy(&s, &p).unwrap();
        let traj = it.trajectory(&s, 100.0).unwrap();
        let mut worst: f64 = 0.0;
        for seg in traj.segments() {
            let y = seg.eval(seg.t_new);
            worst = worst.max((jacobi_energy(&CartesianState::from_array(y), &p).unwrap() - j0).abs());
        }
        assert!(worst < 1e-10, "drift {worst:e}");
    }

    #[test]
    fn variationals_start_at_identity_and_match_differences() {
        let it = jup();
        let s = CartesianState::new(0.45, 0.05, -0.1, 1.0);
        let v0 = VariationalState::identity(s);
        let same = it.flow_with_variationals(&v0, 0.0).unwrap();
        assert_eq!(same.jacobian, v0.jacobian);
        let v = it.flow_with_variationals(&v0, 5.0).unwrap();
        let h = 1e-7;
        let a = s.to_array();
        for k in 0..4 {
            let mut up = a;
            let mut dn = a;
            up[k] += h;
            dn[k] -= h;
            let fu = it.flow(&CartesianState::from_array(up), 5.0).unwrap().to_array();
            let fd = it.flow(&CartesianState::from_array(dn), 5.0).unwrap().to_array();
            let col_norm: f64 = (0..4).map(|i| v.jacobian[i][k].powi(2)).sum::<f64>().sqrt();
            for i in 0..4 {
                let d = (fu[i] - fd[i]) / (2.0 * h);
                assert!((d - v.jacobian[i][k]).abs() < 1e-6 * col_norm.max(1.0), "({i},{k}): {d} vs {}", v.jacobian[i][k]);
            }
        }
        assert!((v.determinant() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn collision_guard_reports_primary() {
        let it = jup();
        // radial plunge into the Sun
        let s = CartesianState::new(0.2, 0.0, 0.0, 0.0);
        match it.flow(&s, 10.0) {
            Err(Error::CollisionApproach { primary: Primary::Sun, last_state, .. }) => {
                let (_, r2) = dynamics::distances(&last_state, MU_SUN_JUPITER);
                assert!(r2 < COLLISION_RADIUS);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tolerance_validation() {
        assert!(IntegratorConfig::with_tol(1e-17).validate().is_err());
        assert!(IntegratorConfig::with_tol(1e-5).validate().is_err());
        assert!(IntegratorConfig::with_tol(1e-12).validate().is_ok());
    }

    #[test]
    fn trajectory_dense_evaluation_matches_flow() {
        let it = jup();
        let s = CartesianState::new(0.45, 0.05, -0.1, 1.0);
        let traj = it.trajectory(&s, 7.0).unwrap();
        let mid = traj.eval(3.3).unwrap();
        let direct = it.flow(&s, 3.3).unwrap().to_array();
        for k in 0..4 {
            assert!((mid[k] - direct[k]).abs() < 1e-11);
        }
        let back = it.trajectory(&s, -7.0).unwrap();
        let mid = back.eval(-3.3).unwrap();
        let direct = it.flow(&s, -3.3).unwrap().to_array();
        for k in 0..4 {
            assert!((mid[k] - direct[k]).abs() < 1e-11);
        }
        assert!(traj.eval(8.0).is_none());
    }
}
