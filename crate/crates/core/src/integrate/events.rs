//! Event location on dense output, polished with exact partial steps.

use super::{IntegratorConfig, OdeSystem, Stepper};
use crate::error::{Error, Result};
use crate::roots::brent_with_values;

/// Rate below which a crossing is reported as tangential.
pub const TANGENCY_RATE: f64 = 1e-8;

/// Crossing orientation with respect to physical time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Any,
}

impl Direction {
    pub fn accepts(self, rate: f64) -> bool {
        match self {
            Direction::Rising => rate > 0.0,
            Direction::Falling => rate < 0.0,
            Direction::Any => true,
        }
    }

    pub fn from_sign(sign: f64) -> Self {
        if sign > 0.0 {
            Direction::Rising
        } else {
            Direction::Falling
        }
    }
}

pub trait Event<const N: usize> {
    fn value(&self, y: &[f64; N]) -> f64;

    /// Time derivative of [`Event::value`] given the field `f` at `y`.
    fn rate(&self, y: &[f64; N], f: &[f64; N]) -> f64;
}

/// Zero of a single state component.
#[derive(Debug, Clone, Copy)]
pub struct StateEvent(pub usize);

impl<const N: usize> Event<N> for StateEvent {
    fn value(&self, y: &[f64; N]) -> f64 {
        y[self.0]
    }

    fn rate(&self, _y: &[f64; N], f: &[f64; N]) -> f64 {
        f[self.0]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EventHit<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub rate: f64,
    pub tangency: bool,
}

fn sign_change(a: f64, b: f64) -> bool {
    (a < 0.0 && b > 0.0) || (a > 0.0 && b < 0.0)
}

/// Crossings inside the last accepted step, in order of integration.
///
/// `ga` is the event value at the start of the step, possibly a signed surrogate.
fn crossings_in_step<const N: usize, S: OdeSystem<N>, E: Event<N>>(
    st: &mut Stepper<'_, N, S>,
    event: &E,
    ga: f64,
    ra: f64,
) -> Result<Vec<EventHit<N>>> {
    let sys = st.system();
    let (ta, tb) = (st.t_old(), st.t());
    let gb = event.value(st.y());
    let rb = event.rate(st.y(), st.f());
    let dir = st.direction();
    let mut brackets: Vec<(f64, f64, f64, f64)> = Vec::new();
    if sign_change(ga, gb) {
        brackets.push((ta, tb, ga, gb));
    } else if ga * ra * dir < 0.0 && gb * rb * dir > 0.0 {
        // the event approaches zero and turns back inside the step
        let seg = st.dense();
        let rate_at = |t: f64| -> Result<f64> {
            let y = seg.eval(t);
            Ok(event.rate(&y, &sys.eval(t, &y)))
        };
        let t_ext = brent_with_values(rate_at, ta, tb, ra, rb, 1e-15, 100)?;
        let g_ext = event.value(&seg.eval(t_ext));
        if sign_change(ga, g_ext) {
            brackets.push((ta, t_ext, ga, g_ext));
            brackets.push((t_ext, tb, g_ext, gb));
        } else if g_ext == 0.0 {
            brackets.push((t_ext, t_ext, 0.0, 0.0));
        }
    }
    if brackets.is_empty() {
        return Ok(Vec::new());
    }
    let seg = st.dense();
    let y_old = *st.y_old();
    let mut hits = Vec::with_capacity(brackets.len());
    for (a, b, fa, fb) in brackets {
        let t_root = if a == b {
            a
        } else {
            brent_with_values(|t| Ok(event.value(&seg.eval(t))), a, b, fa, fb, 1e-15, 200)?
        };
        // polish with exact partial steps from the start of the step
        let mut t = t_root;
        let mut y = if t == ta { y_old } else { st.raw_step(ta, &y_old, t - ta) };
        let mut rate = event.rate(&y, &sys.eval(t, &y));
        for _ in 0..4 {
            let g = event.value(&y);
            if g == 0.0 || rate.abs() < TANGENCY_RATE {
                break;
            }
            let dt = -g / rate;
            if dt.abs() > 0.5 * (tb - ta).abs() {
                break;
            }
            let t_next = t + dt;
            if t_next == t {
                break;
            }
            t = t_next;
            y = st.raw_step(ta, &y_old, t - ta);
            rate = event.rate(&y, &sys.eval(t, &y));
        }
        hits.push(EventHit { t, y, rate, tangency: rate.abs() < TANGENCY_RATE });
    }
    Ok(hits)
}

/// Integrates from `(t0, y0)` in the direction `time_dir` and returns the
/// `count`-th crossing of `event` whose rate matches `direction`.
#[allow(clippy::too_many_arguments)]
pub fn nth_event<const N: usize, S: OdeSystem<N>, E: Event<N>>(
    sys: &S,
    cfg: &IntegratorConfig,
    t0: f64,
    y0: [f64; N],
    event: &E,
    direction: Direction,
    count: usize,
    time_dir: f64,
) -> Result<EventHit<N>> {
    let mut found = 0;
    let mut result = None;
    scan_events(sys, cfg, t0, y0, event, time_dir, |hit| {
        if direction.accepts(hit.rate) {
            found += 1;
            if found >= count.max(1) {
                result = Some(*hit);
                return false;
            }
        }
        true
    })?;
    result.ok_or(Error::EventNotFound { t_max: t0 + time_dir.signum() * cfg.max_time })
}

/// Integrates until `on_hit` returns `false` or `max_time` elapses; every
/// crossing of `event` is passed to `on_hit` in order.
pub fn scan_events<const N: usize, S: OdeSystem<N>, E: Event<N>, F: FnMut(&EventHit<N>) -> bool>(
    sys: &S,
    cfg: &IntegratorConfig,
    t0: f64,
    y0: [f64; N],
    event: &E,
    time_dir: f64,
    on_hit: F,
) -> Result<()> {
    scan_events_scheduled(sys, cfg, t0, y0, event, time_dir, Vec::new(), on_hit)
}

/// [`scan_events`] replaying the step ends `schedule` before adapting.
///
/// With a fixed schedule the crossing data depend smoothly on `y0`.
#[allow(clippy::too_many_arguments)]
pub fn scan_events_scheduled<const N: usize, S: OdeSystem<N>, E: Event<N>, F: FnMut(&EventHit<N>) -> bool>(
    sys: &S,
    cfg: &IntegratorConfig,
    t0: f64,
    y0: [f64; N],
    event: &E,
    time_dir: f64,
    schedule: Vec<f64>,
    mut on_hit: F,
) -> Result<()> {
    let dir = if time_dir < 0.0 { -1.0 } else { 1.0 };
    let t_max = t0 + dir * cfg.max_time;
    let mut st = Stepper::new(sys, *cfg, t0, y0, dir)?.with_schedule(schedule);
    let mut ra = event.rate(&y0, &sys.eval(t0, &y0));
    let mut ga = event.value(&y0);
    if ga == 0.0 {
        // the start itself is not a crossing: use the side the flow moves to
        ga = f64::MIN_POSITIVE * if ra * dir >= 0.0 { 1.0 } else { -1.0 };
    }
    while st.t() != t_max {
        st.step(t_max)?;
        for hit in crossings_in_step(&mut st, event, ga, ra)? {
            if !on_hit(&hit) {
                return Ok(());
            }
        }
        ga = event.value(st.y());
        ra = event.rate(st.y(), st.f());
        if ga == 0.0 {
            ga = f64::MIN_POSITIVE * if ra * dir >= 0.0 { 1.0 } else { -1.0 };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{Circular, IntegratorConfig};
    use super::*;
    use crate::dynamics::MU_SUN_JUPITER;

    #[test]
    fn first_section_crossing_is_on_section() {
        let sys = Circular { mu: MU_SUN_JUPITER };
        let cfg = IntegratorConfig::default();
        let y0 = [0.5, -0.01, 0.0, 1.4];
        let hit = nth_event(&sys, &cfg, 0.0, y0, &StateEvent(1), Direction::Rising, 1, 1.0).unwrap();
        assert!(hit.y[1].abs() < 1e-12, "{}", hit.y[1]);
        assert!(hit.rate > 0.0 && !hit.tangency);
    }

    #[test]
    fn start_on_section_is_not_a_crossing() {
        let sys = Circular { mu: MU_SUN_JUPITER };
        let cfg = IntegratorConfig::default();
        let y0 = [0.5, 0.0, 0.0, 1.4];
        let hit = nth_event(&sys, &cfg, 0.0, y0, &StateEvent(1), Direction::Any, 1, 1.0).unwrap();
        assert!(hit.t > 0.1);
        let back = nth_event(&sys, &cfg, 0.0, y0, &StateEvent(1), Direction::Any, 1, -1.0).unwrap();
        assert!(back.t < -0.1);
    }

    #[test]
    fn grazing_double_crossing_inside_one_step() {
        // y'' = -1 type parabola via a toy system: y = t - t^2, crossing twice in one step
        struct Toy;
        impl OdeSystem<2> for Toy {
            fn eval(&self, _t: f64, y: &[f64; 2]) -> [f64; 2] {
                [y[1], -2.0]
            }
        }
        let cfg = IntegratorConfig { max_step: 10.0, ..IntegratorConfig::default() };
        let mut hits = Vec::new();
        scan_events(&Toy, &cfg, 0.0, [-0.01, 1.0], &StateEvent(0), 1.0, |h| {
            hits.push(*h);
            hits.len() < 2
        })
        .unwrap();
        assert_eq!(hits.len(), 2);
        // roots of -0.01 + t - t^2
        let d = (1.0f64 - 0.04).sqrt();
        assert!((hits[0].t - 0.5 * (1.0 - d)).abs() < 1e-12);
        assert!((hits[1].t - 0.5 * (1.0 + d)).abs() < 1e-12);
        assert!(hits[0].rate > 0.0 && hits[1].rate < 0.0);
    }
}
