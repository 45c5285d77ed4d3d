//! Symmetric homoclinic points of the resonant orbit, splitting angles,
//! tangencies, channel intervals and bounds along the homoclinic orbits.
//!
//! The section of the unstable manifold of the orbit is the union of the
//! images of one branch of a fixed point of `P^k` under every crossing, not
//! only under every `k`-th one. A homoclinic point is a zero of `p_x` on the
//! crossing tracked by continuity in flight time, which stays continuous when
//! loops of the trajectory enter or leave the section.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{CartesianState, VariationalState};
use crate::error::{domain, Error, Result};
use crate::integrate::events::{scan_events, scan_events_scheduled};
use crate::integrate::step_nodes;
use crate::integrate::StateEvent;
use crate::manifold::{orbit_points, reflected_index, LocalManifold, Stability};
use crate::porbit::{find_resonant_po, PeriodicOrbitRecord};
use crate::roots::brent_with_values;
use crate::section::{section_differential, SectionMap, SectionPoint};

/// Energy at which channel labels are assigned.
pub const J_LABEL: f64 = -1.55;
/// Energies above this make `{g = 0}` fail as a global section.
pub const J_DGDT: f64 = -1.485;
/// Energies at which the channels are discovered afresh before continuation;
/// the low-energy anchor lies below the onset of the apocentre loops.
pub const ANCHORS: [f64; 2] = [-1.65, J_LABEL];
/// Mesh size of the branch scan that discovers the channels.
pub const DISCOVERY_MESH: usize = 1000;
pub const PX_TOL: f64 = 1e-10;
pub const HORIZON_CAP: f64 = 200.0;
pub const HORIZON_START: f64 = 25.0;
pub const HORIZON_TOL: f64 = 1e-6;
const BOUND_SUBSAMPLES: usize = 8;
/// Continuity window for matching crossings of neighbouring trajectories.
const MATCH_DT: f64 = 0.05;
const MATCH_DX: f64 = 0.05;
const JOIN_ITER: usize = 30;
const SUBSTEP_DEPTH: usize = 3;
/// A same-sign dip of `|theta|` below this fraction of its neighbours hides a tangency pair.
const COARSE_DIP: f64 = 0.1;
/// Accepted mismatch at the junction of the two halves of a connection.
const JOIN_TOL: f64 = 1e-8;
const JOIN_XTOL: f64 = 1e-13;

/// A crossing of `{y = 0}` along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// 1-based count along the trajectory.
    pub index: usize,
    pub t: f64,
    pub state: [f64; 4],
    pub rate: f64,
}

/// All crossings with `|t| <= t_max` along `time_dir`.
pub fn crossings(map: &SectionMap, start: &SectionPoint, time_dir: f64, t_max: f64) -> Result<Vec<Crossing>> {
    let s = start.lift(map.params())?;
    let mut out = Vec::new();
    scan_events(&map.integ.system(), &map.integ.cfg, 0.0, s.to_array(), &StateEvent(1), time_dir, |h| {
        if h.t.abs() > t_max {
            return false;
        }
        out.push(Crossing { index: out.len() + 1, t: h.t, state: h.y, rate: h.rate });
        true
    })?;
    Ok(out)
}

/// The crossing closest in time to `t_ref`.
pub fn crossing_near(map: &SectionMap, start: &SectionPoint, t_ref: f64) -> Result<Crossing> {
    crossing_near_scheduled(map, start, t_ref, &[])
}

/// Step ends of an adaptive integration from `start` to just past `t_ref`.
pub fn schedule_to(map: &SectionMap, start: &SectionPoint, t_ref: f64) -> Result<Vec<f64>> {
    let s = start.lift(map.params())?;
    let t_end = t_ref + t_ref.signum() * 2.0;
    step_nodes(&map.integ.system(), &map.integ.cfg, 0.0, s.to_array(), t_end)
}

/// [`crossing_near`] on a replayed step schedule.
pub fn crossing_near_scheduled(map: &SectionMap, start: &SectionPoint, t_ref: f64, schedule: &[f64]) -> Result<Crossing> {
    let s = start.lift(map.params())?;
    let time_dir = if t_ref < 0.0 { -1.0 } else { 1.0 };
    let mut best: Option<Crossing> = None;
    let mut count = 0;
    let sys = map.integ.system();
    scan_events_scheduled(&sys, &map.integ.cfg, 0.0, s.to_array(), &StateEvent(1), time_dir, schedule.to_vec(), |h| {
        count += 1;
        let c = Crossing { index: count, t: h.t, state: h.y, rate: h.rate };
        if best.map_or(true, |b| (c.t - t_ref).abs() < (b.t - t_ref).abs()) {
            best = Some(c);
        }
        (h.t - t_ref) * time_dir < 1.0
    })?;
    best.ok_or(Error::EventNotFound { t_max: t_ref })
}

/// Local manifolds used for one energy: the unstable one at the off-axis fixed
/// point with `x < 0, p_x > 0`, and the stable one at its reflection.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HomoclinicSetup {
    pub po: PeriodicOrbitRecord,
    pub unstable: LocalManifold,
    pub stable: LocalManifold,
}

impl HomoclinicSetup {
    pub fn new(map: &SectionMap, po: &PeriodicOrbitRecord) -> Result<Self> {
        let pts = orbit_points(map, po)?;
        let iu = pts
            .iter()
            .enumerate()
            .filter(|(_, p)| p.x < 0.0 && p.px > 1e-6)
            .min_by(|a, b| a.1.x.total_cmp(&b.1.x))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Domain(format!("no off-axis fixed point at J = {}", po.J)))?;
        let is = reflected_index(&pts, iu);
        let k = po.crossings_per_period;
        let unstable = LocalManifold::at(map, pts[iu], iu, k, Stability::Unstable)?;
        let stable = LocalManifold::at(map, pts[is], is, k, Stability::Stable)?;
        Ok(Self { po: *po, unstable, stable })
    }

    pub fn at_energy(map: &SectionMap, j: f64, guess: Option<(f64, f64)>) -> Result<Self> {
        let po = find_resonant_po(map, j, guess)?;
        Self::new(map, &po)
    }

    /// Sign on the stable branch matching `sign` on the unstable one under the reflection.
    pub fn stable_sign(&self, sign: f64) -> f64 {
        let r = [self.unstable.dir[0], -self.unstable.dir[1]];
        let d = r[0] * self.stable.dir[0] + r[1] * self.stable.dir[1];
        sign * d.signum()
    }
}

/// A root of `p_x` on one branch, before refinement.
#[derive(Debug, Clone, Copy)]
pub struct AxisBracket {
    pub sign: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub t: f64,
    pub x: f64,
}

/// Scans a fundamental domain of one unstable branch for the primary symmetric
/// points: sign changes of `p_x` on time-continuous crossings within one
/// period of the first one.
pub fn scan_branch(map: &SectionMap, setup: &HomoclinicSetup, sign: f64, mesh: usize) -> Result<Vec<AxisBracket>> {
    let local = &setup.unstable;
    let period = setup.po.T;
    let t_max = period * (local.iterates_to(1.0) + 6) as f64;
    let mut prev: Option<(f64, Vec<Crossing>)> = None;
    let mut found: Vec<AxisBracket> = Vec::new();
    for i in 0..=mesh {
        let s = i as f64 / mesh as f64;
        let cs = match crossings(map, &local.point(sign, s), 1.0, t_max) {
            Ok(cs) => cs,
            Err(Error::CollisionApproach { .. }) => {
                prev = None;
                continue;
            }
            Err(e) => return Err(e),
        };
        if let Some((s_prev, ps)) = &prev {
            for a in ps {
                let Some(b) = cs.iter().min_by(|u, v| (u.t - a.t).abs().total_cmp(&(v.t - a.t).abs())) else {
                    continue;
                };
                let continuous = (b.t - a.t).abs() < MATCH_DT && (b.state[0] - a.state[0]).abs() < MATCH_DX;
                if continuous && a.state[2].signum() != b.state[2].signum() {
                    found.push(AxisBracket { sign, s_lo: *s_prev, s_hi: s, t: a.t, x: a.state[0] });
                }
            }
        }
        prev = Some((s, cs));
    }
    found.sort_by(|a, b| a.t.total_cmp(&b.t));
    let Some(first) = found.first().copied() else {
        return Ok(Vec::new());
    };
    let mut primary: Vec<AxisBracket> = Vec::new();
    for b in found.into_iter().filter(|b| b.t < first.t + period) {
        if !primary.iter().any(|p| (p.x - b.x).abs() < 1e-6) {
            primary.push(b);
        }
    }
    Ok(primary)
}

/// Approximate zero of `p_x` on the tracked crossing over `[s_lo, s_hi]` of `local`.
fn refine_root(
    map: &SectionMap,
    local: &LocalManifold,
    sign: f64,
    s_lo: f64,
    s_hi: f64,
    t_ref: f64,
) -> Result<(f64, Crossing)> {
    let schedule = schedule_to(map, &local.point(sign, 0.5 * (s_lo + s_hi)), t_ref)?;
    let eval = |s: f64| crossing_near_scheduled(map, &local.point(sign, s), t_ref, &schedule);
    let (ca, cb) = (eval(s_lo)?, eval(s_hi)?);
    if ca.state[2].signum() == cb.state[2].signum() {
        return Err(Error::NoConvergence(format!("bracket lost on the replayed schedule at J = {}", local.fixed.J)));
    }
    let s_star = brent_with_values(|s| Ok(eval(s)?.state[2]), s_lo, s_hi, ca.state[2], cb.state[2], 1e-14, 200)?;
    Ok((s_star, eval(s_star)?))
}

/// Crossing near `t_ref` from `start` and the section differential of the
/// flow up to it.
fn section_jet(map: &SectionMap, start: &SectionPoint, t_ref: f64) -> Result<(Crossing, [[f64; 2]; 2])> {
    let c = crossing_near(map, start, t_ref)?;
    let s = start.lift(map.params())?;
    let v = map.integ.flow_with_variationals(&VariationalState::identity(s), c.t)?;
    Ok((c, section_differential(&v, &s, map.params().mu)))
}

/// A symmetric point joined to a local manifold.
#[derive(Debug, Clone, Copy)]
struct Connection {
    s: f64,
    x: f64,
    /// Flight time from the local manifold to the axis, positive.
    flight: f64,
    /// Part of `flight` spent on the manifold side of the junction.
    junction: f64,
    mismatch: f64,
    /// Unit tangent of the manifold at the axis point.
    tangent: [f64; 2],
}

/// Joins the local manifold at coordinate `s` to the axis point `(x, 0)`.
///
/// The manifold side flows for `mid` along its time direction and the axis
/// side flows back the rest of `flight`; Newton matches the two images on the
/// crossing nearest the junction.
fn connect(map: &SectionMap, local: &LocalManifold, sign: f64, s0: f64, x0: f64, rate: f64, flight: f64) -> Result<Connection> {
    let dir = local.stability.time_dir();
    let j = local.fixed.J;
    let (mut s, mut x) = (s0, x0);
    let probe = crossing_near(map, &local.point(sign, s), dir * 0.5 * flight)?;
    let mid = probe.t;
    let mut rest = -dir * (flight - mid.abs());
    let mut mismatch = f64::INFINITY;
    for _ in 0..JOIN_ITER {
        let (ca, ma) = section_jet(map, &local.point(sign, s), mid)?;
        let (cb, mb) = section_jet(map, &SectionPoint::new(x, 0.0, j, rate), rest)?;
        if (ca.t - mid).abs() > MATCH_DT || (cb.t - rest).abs() > MATCH_DT {
            return Err(Error::NoConvergence(format!("junction crossing drifted at J = {j}")));
        }
        let r = [cb.state[0] - ca.state[0], cb.state[2] - ca.state[2]];
        mismatch = r[0].hypot(r[1]);
        let dxi = local.xi(sign, s) * local.lambda.ln();
        let da = [(ma[0][0] * local.dir[0] + ma[0][1] * local.dir[1]) * dxi, (ma[1][0] * local.dir[0] + ma[1][1] * local.dir[1]) * dxi];
        let db = [mb[0][0], mb[1][0]];
        // [da, -db] (ds, dx) = r
        let det = -da[0] * db[1] + db[0] * da[1];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NoConvergence(format!("singular junction at J = {j}")));
        }
        let ds = (-r[0] * db[1] + db[0] * r[1]) / det;
        let dx = (da[0] * r[1] - da[1] * r[0]) / det;
        s += ds;
        x += dx;
        rest = cb.t;
        if dx.abs() < JOIN_XTOL {
            break;
        }
    }
    let (ca, ma) = section_jet(map, &local.point(sign, s), mid)?;
    let (cb, mb) = section_jet(map, &SectionPoint::new(x, 0.0, j, rate), rest)?;
    let r = (cb.state[0] - ca.state[0]).hypot(cb.state[2] - ca.state[2]);
    // pull the manifold tangent back to the axis through the inverse of the axis half
    let w = crate::linalg::mat_vec2(&ma, &local.dir);
    let inv = [[mb[1][1], -mb[0][1]], [-mb[1][0], mb[0][0]]];
    let v = crate::linalg::mat_vec2(&inv, &w);
    let n = v[0].hypot(v[1]);
    if n < 1e-12 || !n.is_finite() {
        return domain(format!("degenerate manifold tangent (norm {n:e}) at J = {j}"));
    }
    mismatch = mismatch.min(r);
    if r > JOIN_TOL {
        return Err(Error::NoConvergence(format!("junction mismatch {r:e} at J = {j}")));
    }
    Ok(Connection { s, x, flight: ca.t.abs() + cb.t.abs(), junction: ca.t.abs(), mismatch, tangent: [v[0] / n, v[1] / n] })
}

/// Finds a bracket of the tracked `p_x` around `s0`, widening geometrically.
fn bracket_near(map: &SectionMap, local: &LocalManifold, sign: f64, s0: f64, t_ref: f64) -> Result<(f64, f64, f64)> {
    let c0 = crossing_near(map, &local.point(sign, s0), t_ref)?;
    let f0 = c0.state[2];
    if f0 == 0.0 {
        return Ok((s0, s0, c0.t));
    }
    let mut delta = 1e-5;
    while delta < 1.5 {
        for s in [s0 - delta, s0 + delta] {
            let c = crossing_near(map, &local.point(sign, s), t_ref)?;
            let continuous = (c.t - c0.t).abs() < 0.5 && (c.state[0] - c0.state[0]).abs() < 0.2;
            if continuous && c.state[2].signum() != f0.signum() {
                return Ok(if s < s0 { (s, s0, c0.t) } else { (s0, s, c0.t) });
            }
        }
        delta *= 2.0;
    }
    Err(Error::ChannelAbsent { channel: 0, j: local.fixed.J, reason: format!("no p_x sign change near s = {s0}") })
}

/// Directed angle from `v_u` to `v_s`, as a difference of slopes reduced to `(-pi/2, pi/2]`.
pub fn splitting_angle(v_u: [f64; 2], v_s: [f64; 2]) -> f64 {
    let raw = (v_u[1] / v_u[0]).atan() - (v_s[1] / v_s[0]).atan();
    let mut th = raw % PI;
    if th > PI / 2.0 {
        th -= PI;
    } else if th <= -PI / 2.0 {
        th += PI;
    }
    th
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicChannelRecord {
    pub i: usize,
    pub J: f64,
    pub z: SectionPoint,
    /// Unstable-branch side and fundamental-domain coordinate of the root.
    pub sign: f64,
    pub s_star: f64,
    pub xi_star: f64,
    /// Crossing count from the local manifold to `z`.
    pub crossing: usize,
    /// Whole iterates of `P^k` contained in `crossing`.
    pub N: usize,
    /// Flight time from the local unstable manifold to `z`.
    pub t_u: f64,
    /// Stable-side counterparts of `sign`, `s_star` and `t_u`.
    pub sign_s: f64,
    pub s_stable: f64,
    pub t_s: f64,
    /// Flight times from each local manifold to the junction of its two-sided solve.
    pub junction_u: f64,
    pub junction_s: f64,
    pub v_u: [f64; 2],
    pub v_s: [f64; 2],
    pub theta: f64,
    pub us_discrepancy: f64,
    pub junction_mismatch: f64,
    /// Eigenvectors used, for orientation tracking.
    pub dir_u: [f64; 2],
    pub dir_s: [f64; 2],
    pub lambda_u: f64,
    /// Seed of the periodic orbit, for continuation.
    pub po_seed: (f64, f64),
}

impl HomoclinicChannelRecord {
    pub fn state(&self, map: &SectionMap) -> Result<CartesianState> {
        self.z.lift(map.params())
    }
}

/// Completes a channel record from an approximate unstable root.
fn complete(
    map: &SectionMap,
    setup: &HomoclinicSetup,
    i: usize,
    sign: f64,
    s_guess: f64,
    c: &Crossing,
) -> Result<HomoclinicChannelRecord> {
    let j = setup.po.J;
    let u = &setup.unstable;
    let cu = connect(map, u, sign, s_guess, c.state[0], c.rate, c.t)?;
    let v_u = cu.tangent;

    // independent route along the stable manifold
    let st = &setup.stable;
    let ssign = setup.stable_sign(sign);
    let cs = connect(map, st, ssign, s_guess, c.state[0], c.rate, c.t)?;
    let v_s = cs.tangent;
    let (x_u, s_star, xi, t_u) = (cu.x, cu.s, u.xi(sign, cu.s), cu.flight);
    Ok(HomoclinicChannelRecord {
        i,
        J: j,
        z: SectionPoint::new(x_u, 0.0, j, c.rate),
        sign,
        s_star,
        xi_star: xi,
        crossing: c.index,
        N: c.index / u.k,
        t_u,
        sign_s: ssign,
        s_stable: cs.s,
        t_s: cs.flight,
        junction_u: cu.junction,
        junction_s: cs.junction,
        v_u,
        v_s,
        theta: splitting_angle(v_u, v_s),
        us_discrepancy: (cs.x - cu.x).abs(),
        junction_mismatch: cu.mismatch.max(cs.mismatch),
        dir_u: u.dir,
        dir_s: st.dir,
        lambda_u: u.lambda,
        po_seed: (setup.po.x0, setup.po.sign),
    })
}

/// The four primary symmetric homoclinic points at `J_LABEL`, labelled 1..4.
///
/// The branch on which `p_x` increases along the unstable eigenvector holds
/// `z_2` (larger `x`) and `z_3`; the other branch holds `z_1` (larger `x`) and `z_4`.
pub fn discover_channels(map: &SectionMap, setup: &HomoclinicSetup, mesh: usize) -> Result<Vec<HomoclinicChannelRecord>> {
    let mut brackets = scan_branch(map, setup, 1.0, mesh)?;
    brackets.extend(scan_branch(map, setup, -1.0, mesh)?);
    let upper = setup.unstable.dir[1].signum();
    let on = |up: bool| -> Vec<AxisBracket> {
        let mut v: Vec<AxisBracket> = brackets.iter().copied().filter(|b| (b.sign * upper > 0.0) == up).collect();
        v.sort_by(|a, b| b.x.total_cmp(&a.x));
        v
    };
    let (hi, lo) = (on(true), on(false));
    if hi.len() != 2 || lo.len() != 2 {
        return Err(Error::ChannelAbsent {
            channel: 0,
            j: setup.po.J,
            reason: format!("expected 2 primary symmetric points per branch, found {} and {}", hi.len(), lo.len()),
        });
    }
    let labelled = [(1, lo[0]), (2, hi[0]), (3, hi[1]), (4, lo[1])];
    let mut out = Vec::with_capacity(4);
    for (i, b) in labelled {
        let (s, c) = refine_root(map, &setup.unstable, b.sign, b.s_lo, b.s_hi, b.t)?;
        out.push(complete(map, setup, i, b.sign, s, &c)?);
    }
    Ok(out)
}

/// Tracks a channel to a new energy from its record at a neighbouring one.
pub fn continue_channel(map: &SectionMap, setup: &HomoclinicSetup, prev: &HomoclinicChannelRecord) -> Result<HomoclinicChannelRecord> {
    let u = &setup.unstable;
    let d = u.dir[0] * prev.dir_u[0] + u.dir[1] * prev.dir_u[1];
    let sign = prev.sign * d.signum();
    // hold the flight time fixed while the expansion rate changes
    let n = prev.t_u / setup.po.T;
    let (mut s0, mut t0) = ((prev.s_star + n) * prev.lambda_u.ln() / u.lambda.ln() - n, prev.t_u);
    // keep the root inside a window around the fundamental domain
    let period = setup.po.T;
    while s0 > 1.5 {
        s0 -= 1.0;
        t0 += period;
    }
    while s0 < -0.5 {
        s0 += 1.0;
        t0 -= period;
    }
    let (lo, hi, t_ref) = bracket_near(map, u, sign, s0, t0).map_err(|e| match e {
        Error::ChannelAbsent { j, reason, .. } => Error::ChannelAbsent { channel: prev.i, j, reason },
        e => e,
    })?;
    let (s, c) = if lo == hi { (lo, crossing_near(map, &u.point(sign, lo), t_ref)?) } else { refine_root(map, u, sign, lo, hi, t_ref)? };
    if (c.state[0] - prev.z.x).abs() > 0.2 {
        return Err(Error::ChannelAbsent {
            channel: prev.i,
            j: setup.po.J,
            reason: format!("continuation jumped from x = {} to {}", prev.z.x, c.state[0]),
        });
    }
    complete(map, setup, prev.i, sign, s, &c)
}

/// [`continue_channel`] with the step in `J` halved on failure, `depth` times at most.
pub fn continue_adaptive(map: &SectionMap, setup: &HomoclinicSetup, prev: &HomoclinicChannelRecord, depth: usize) -> Result<HomoclinicChannelRecord> {
    match continue_channel(map, setup, prev) {
        Ok(r) => Ok(r),
        Err(e) if depth == 0 => Err(e),
        Err(_) => {
            let jm = 0.5 * (prev.J + setup.po.J);
            let mid_setup = HomoclinicSetup::at_energy(map, jm, Some(prev.po_seed))?;
            let mid = continue_adaptive(map, &mid_setup, prev, depth - 1)?;
            continue_adaptive(map, setup, &mid, depth - 1)
        }
    }
}

/// Records of all channels along a monotone grid, continued from the nearest
/// of the discovery anchors in [`ANCHORS`].
///
/// `out[c][n]` is channel `c + 1` at `grid[n]`, or the error that stopped it.
pub fn sweep_channels(map: &SectionMap, grid: &[f64], mesh: usize) -> Result<Vec<Vec<Result<HomoclinicChannelRecord>>>> {
    if grid.is_empty() {
        return Ok((0..4).map(|_| Vec::new()).collect());
    }
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // an anchor is used when it lies within the grid range or is the closest to it
    let mut anchors: Vec<f64> = ANCHORS.iter().copied().filter(|a| *a >= lo - 0.02 && *a <= hi + 0.02).collect();
    if anchors.is_empty() {
        let mid = 0.5 * (lo + hi);
        anchors.push(ANCHORS.iter().copied().min_by(|a, b| (a - mid).abs().total_cmp(&(b - mid).abs())).unwrap());
    }
    anchors.sort_by(f64::total_cmp);
    let mut out: Vec<Vec<Option<(f64, Result<HomoclinicChannelRecord>)>>> =
        (0..4).map(|_| (0..grid.len()).map(|_| None).collect()).collect();
    for (k, &anchor) in anchors.iter().enumerate() {
        let below = if k == 0 { f64::NEG_INFINITY } else { anchors[k - 1] };
        let above = anchors.get(k + 1).copied().unwrap_or(f64::INFINITY);
        let setup = HomoclinicSetup::at_energy(map, anchor, None)?;
        let labelled = discover_channels(map, &setup, mesh)?;
        let mut up: Vec<usize> = (0..grid.len()).filter(|&n| grid[n] >= anchor && grid[n] <= above).collect();
        up.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
        let mut down: Vec<usize> = (0..grid.len()).filter(|&n| grid[n] < anchor && grid[n] >= below).collect();
        down.sort_by(|&a, &b| grid[b].total_cmp(&grid[a]));
        for order in [up, down] {
            let runs = continue_along(map, grid, &order, &labelled, (setup.po.x0, setup.po.sign));
            for (c, run) in runs.into_iter().enumerate() {
                for (n, res) in run {
                    let dist = (grid[n] - anchor).abs();
                    let slot = &mut out[c][n];
                    let better = match slot {
                        None => true,
                        Some((d, prev)) => match (&res, prev) {
                            (Ok(_), Err(_)) => true,
                            (Err(_), Ok(_)) => false,
                            _ => dist < *d,
                        },
                    };
                    if better {
                        *slot = Some((dist, res));
                    }
                }
            }
        }
    }
    Ok(out.into_iter().map(|v| v.into_iter().map(|r| r.unwrap().1).collect()).collect())
}

/// Continues every labelled channel along `order`, stopping a channel at its
/// first failure.
fn continue_along(
    map: &SectionMap,
    grid: &[f64],
    order: &[usize],
    labelled: &[HomoclinicChannelRecord],
    seed: (f64, f64),
) -> Vec<Vec<(usize, Result<HomoclinicChannelRecord>)>> {
    let mut runs: Vec<Vec<(usize, Result<HomoclinicChannelRecord>)>> = (0..4).map(|_| Vec::new()).collect();
    let mut last: Vec<Option<HomoclinicChannelRecord>> = labelled.iter().copied().map(Some).collect();
    let mut x_guess = Some(seed);
    for &n in order {
        let setup = match HomoclinicSetup::at_energy(map, grid[n], x_guess).or_else(|_| HomoclinicSetup::at_energy(map, grid[n], None)) {
            Ok(s) => s,
            Err(e) => {
                for run in runs.iter_mut() {
                    run.push((n, Err(Error::NoConvergence(format!("J = {}: {e}", grid[n])))));
                }
                continue;
            }
        };
        x_guess = Some((setup.po.x0, setup.po.sign));
        for c in 0..4 {
            let res = match &last[c] {
                Some(prev) => continue_adaptive(map, &setup, prev, SUBSTEP_DEPTH),
                None => Err(Error::ChannelAbsent { channel: c + 1, j: grid[n], reason: "lost at a previous energy".into() }),
            };
            last[c] = res.as_ref().ok().copied();
            runs[c].push((n, res));
        }
    }
    runs
}

/// A zero of `theta_i(J)`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangency {
    pub channel: usize,
    pub J_tangency: f64,
    pub bracket_width: f64,
}

/// Zeros of the splitting angle along a swept channel, refined by bisection in `J`.
pub fn tangencies(map: &SectionMap, records: &[Result<HomoclinicChannelRecord>], tol: f64) -> Result<Vec<Tangency>> {
    let ok: Vec<&HomoclinicChannelRecord> = records.iter().filter_map(|r| r.as_ref().ok()).collect();
    for w in ok.windows(3) {
        let th = [w[0].theta, w[1].theta, w[2].theta];
        let same = th[0].signum() == th[1].signum() && th[1].signum() == th[2].signum();
        if same && th[1].abs() < COARSE_DIP * th[0].abs().min(th[2].abs()) {
            return Err(Error::GridTooCoarse { channel: w[1].i, j: w[1].J });
        }
    }
    let mut out = Vec::new();
    for w in ok.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a.theta.signum() == b.theta.signum() || (a.theta.abs() + b.theta.abs()) > 1.0 {
            continue;
        }
        let (mut lo, mut hi) = (*a, *b);
        while (hi.J - lo.J).abs() > tol {
            let jm = 0.5 * (lo.J + hi.J);
            let setup = HomoclinicSetup::at_energy(map, jm, Some(lo.po_seed)).or_else(|_| HomoclinicSetup::at_energy(map, jm, None))?;
            let mid = continue_adaptive(map, &setup, &lo, SUBSTEP_DEPTH)?;
            if mid.theta.signum() == lo.theta.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // linear interpolation inside the final bracket
        let jt = lo.J - lo.theta * (hi.J - lo.J) / (hi.theta - lo.theta);
        out.push(Tangency { channel: a.i, J_tangency: jt, bracket_width: (hi.J - lo.J).abs() });
    }
    Ok(out)
}

/// A tangency-free span shared by a set of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInterval {
    /// 1-based position in increasing order of the lower end.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub channels: Vec<usize>,
    /// The span intersected with `{J < J_DGDT}`, if nonempty.
    pub restricted: Option<(f64, f64)>,
}

/// Spans that open at a tangency of a channel and close at its next tangency
/// or at `j_max`, intersected over channels whose spans agree within `tol`.
pub fn channel_intervals(tangencies: &[Tangency], j_max: f64, tol: f64) -> Vec<ChannelInterval> {
    let mut channels: Vec<usize> = tangencies.iter().map(|t| t.channel).collect();
    channels.sort_unstable();
    channels.dedup();
    let spans = |c: usize| -> Vec<(f64, f64)> {
        let mut js: Vec<f64> = tangencies.iter().filter(|t| t.channel == c).map(|t| t.J_tangency).collect();
        js.sort_by(f64::total_cmp);
        (0..js.len()).map(|k| (js[k], js.get(k + 1).copied().unwrap_or(j_max))).collect()
    };
    let mut out: Vec<ChannelInterval> = Vec::new();
    for &c in &channels {
        for (lo, hi) in spans(c) {
            if let Some(iv) = out.iter_mut().find(|iv| (iv.lo - lo).abs() < tol && (iv.hi - hi).abs() < tol) {
                if !iv.channels.contains(&c) {
                    iv.channels.push(c);
                    iv.lo = iv.lo.max(lo);
                    iv.hi = iv.hi.min(hi);
                }
            } else {
                out.push(ChannelInterval { index: 0, lo, hi, channels: vec![c], restricted: None });
            }
        }
    }
    out.retain(|iv| iv.channels.len() >= 2 && iv.lo < iv.hi);
    out.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    for (k, iv) in out.iter_mut().enumerate() {
        iv.index = k + 1;
        iv.restricted = (iv.lo < J_DGDT).then_some((iv.lo, iv.hi.min(J_DGDT)));
    }
    out
}

/// Suprema of the action and eccentricity deviations along a homoclinic orbit.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicBounds {
    pub i: usize,
    pub J: f64,
    /// Half-width of the time window `[-M, M]`.
    pub M: f64,
    pub max_L_dev: f64,
    pub max_E11: f64,
    pub max_E2: f64,
    /// Change of the suprema under the last doubling of `M`.
    pub doubling_change: f64,
    pub converged: bool,
}

/// Running suprema at sample times `|t|`, ordered by `|t|`.
fn bound_samples(map: &SectionMap, z: &CartesianState, j: f64, m: f64) -> Result<Vec<(f64, [f64; 3])>> {
    let l0 = crate::coords::l_resonant();
    let e0 = crate::coords::ecc_of_energy(j, l0)?;
    let mut out = Vec::new();
    for dir in [1.0, -1.0] {
        let traj = map.integ.trajectory(z, dir * m)?;
        for seg in traj.segments() {
            for k in 0..BOUND_SUBSAMPLES {
                let t = seg.t_old + (seg.t_new - seg.t_old) * k as f64 / BOUND_SUBSAMPLES as f64;
                let osc = crate::coords::osculating(&CartesianState::from_array(seg.eval(t)))?;
                let e = crate::coords::ecc_of_energy(j, osc.L)?;
                let ecc = (1.0 - (osc.G / osc.L).powi(2)).max(0.0).sqrt();
                out.push((t.abs(), [(osc.L - l0).abs(), (e - e0).abs(), (ecc - e).abs()]));
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Bounds along the orbit of `rec.z` on `[-M, M]`.
///
/// With `horizon = None`, `M` doubles from `HORIZON_START` until the suprema
/// change by less than `HORIZON_TOL`, up to `HORIZON_CAP`.
pub fn homoclinic_bounds(map: &SectionMap, rec: &HomoclinicChannelRecord, horizon: Option<f64>) -> Result<HomoclinicBounds> {
    let z = rec.state(map)?;
    let cap = horizon.unwrap_or(HORIZON_CAP);
    let samples = bound_samples(map, &z, rec.J, cap)?;
    let sup = |m: f64| {
        samples.iter().take_while(|(t, _)| *t <= m).fold([0.0f64; 3], |a, (_, v)| [a[0].max(v[0]), a[1].max(v[1]), a[2].max(v[2])])
    };
    let make = |m: f64, change: f64, converged: bool| {
        let v = sup(m);
        HomoclinicBounds { i: rec.i, J: rec.J, M: m, max_L_dev: v[0], max_E11: v[1], max_E2: v[2], doubling_change: change, converged }
    };
    if let Some(m) = horizon {
        let change = diff3(sup(m), sup(0.5 * m));
        return Ok(make(m, change, change < HORIZON_TOL));
    }
    let mut m = HORIZON_START;
    loop {
        let change = diff3(sup(2.0 * m), sup(m));
        if change < HORIZON_TOL {
            return Ok(make(m, change, true));
        }
        if 2.0 * m >= cap {
            return Ok(make(cap, change, false));
        }
        m *= 2.0;
    }
}

fn diff3(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

/// Largest distance to the periodic orbit's section points among the
/// crossings of the orbit of `rec.z` near `±iterates` periods.
pub fn homoclinicity(map: &SectionMap, setup: &HomoclinicSetup, rec: &HomoclinicChannelRecord, iterates: usize) -> Result<f64> {
    let pts = orbit_points(map, &setup.po)?;
    let t = iterates as f64 * setup.po.T;
    let mut worst: f64 = 0.0;
    for dir in [1.0, -1.0] {
        let c = crossing_near(map, &rec.z, dir * t)?;
        let d = pts.iter().map(|p| (p.x - c.state[0]).hypot(p.px - c.state[2])).fold(f64::INFINITY, f64::min);
        worst = worst.max(d);
    }
    Ok(worst)
}

/// Rows `J,i,x_z,theta_i,us_discrepancy`.
pub fn write_channels_csv<W: Write>(records: &[HomoclinicChannelRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "J,i,x_z,theta_i,us_discrepancy")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.J, r.i, r.z.x, r.theta, r.us_discrepancy)?;
    }
    Ok(())
}

/// Rows `J,i,max_L_dev,max_E11,max_E2`.
pub fn write_bounds_csv<W: Write>(bounds: &[HomoclinicBounds], mut w: W) -> std::io::Result<()> {
    writeln!(w, "J,i,max_L_dev,max_E11,max_E2")?;
    for b in bounds {
        writeln!(w, "{},{},{},{},{}", b.J, b.i, b.max_L_dev, b.max_E11, b.max_E2)?;
    }
    Ok(())
}
