//! The resonant family of symmetric hyperbolic periodic orbits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::coords::{self, l_resonant};
use crate::dynamics::{self, CartesianState, MassParams, VariationalState};
use crate::error::{domain, Error, Result};
use crate::integrate::{Direction, Integrator, StateEvent};
use crate::linalg;
use crate::section::{SectionMap, SectionPoint};

/// Energy window of the family.
pub const J_MIN: f64 = -1.731;
pub const J_MAX: f64 = -1.359;

const NEWTON_MAX_ITER: usize = 30;
const NEWTON_TOL: f64 = 1e-12;
const EIGEN_TOL: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-6;

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbitRecord {
    pub J: f64,
    pub x0: f64,
    /// Sign of `dy/dt` at the seed.
    pub sign: f64,
    pub T: f64,
    pub lambda_u: f64,
    pub v_u: [f64; 2],
    pub v_s: [f64; 2],
    pub crossings_per_period: usize,
    pub max_L_dev: f64,
    /// Index of the `p_x = 0` event at the half period.
    pub half_index: usize,
}

impl PeriodicOrbitRecord {
    pub fn seed(&self) -> SectionPoint {
        SectionPoint::new(self.x0, 0.0, self.J, self.sign)
    }

    pub fn seed_state(&self, p: &MassParams) -> Result<CartesianState> {
        self.seed().lift(p)
    }

    pub fn t_minus_2pi(&self) -> f64 {
        self.T - 2.0 * PI
    }
}

/// Shooting data for a symmetric orbit through `(x0, 0, 0, p_y)`.
struct HalfReturn {
    t: f64,
    y: f64,
    dy_dx0: f64,
    index: usize,
}

/// Zero of `p_x` closest to `t = pi`, or the `index`-th one, and the residual
/// `y` there. A symmetric orbit has `y = p_x = 0` at its half period; the
/// `p_x` event stays transversal where the orbit grazes `{y = 0}`.
fn half_return(map: &SectionMap, j: f64, x0: f64, sign: f64, index: Option<usize>) -> Result<HalfReturn> {
    let sp = SectionPoint::new(x0, 0.0, j, sign);
    let s = sp.lift(map.params())?;
    let event = StateEvent(2);
    let idx = match index {
        Some(i) => i,
        None => {
            let mut best = (f64::INFINITY, 0usize);
            let mut count = 0;
            crate::integrate::events::scan_events(&map.integ.system(), &map.integ.cfg, 0.0, s.to_array(), &event, 1.0, |hit| {
                count += 1;
                let d = (hit.t - PI).abs();
                if d < best.0 {
                    best = (d, count);
                }
                hit.t < 1.5 * PI
            })?;
            best.1
        }
    };
    if idx == 0 {
        return domain("no symmetric return near the half period");
    }
    let mu = map.params().mu;
    let v0 = VariationalState::identity(s);
    let hit = map.integ.locate_event_variational(&v0, &event, Direction::Any, idx, 1.0)?;
    if hit.tangency {
        return Err(Error::Tangency { t: hit.t, rate: hit.rate });
    }
    let v = VariationalState::from_array(&hit.y);
    let f0 = dynamics::rhs(&s.to_array(), mu);
    // tangent along the section and energy level: dpy = -J_x / J_py dx
    let tangent = [1.0, 0.0, 0.0, f0[2] / f0[1]];
    let d = linalg::mat_vec4(&v.jacobian, &tangent);
    let f1 = dynamics::rhs(&v.base.to_array(), mu);
    let dt = -d[2] / f1[2];
    Ok(HalfReturn { t: hit.t, y: v.base.y, dy_dx0: d[1] + f1[1] * dt, index: idx })
}

/// Newton on `x0` so that the half-period return lies on `{y = 0}`.
fn shoot(map: &SectionMap, j: f64, x_guess: f64, sign: f64) -> Result<(f64, HalfReturn)> {
    let mut x0 = x_guess;
    let mut hr = half_return(map, j, x0, sign, None)?;
    let index = hr.index;
    for _ in 0..NEWTON_MAX_ITER {
        if hr.dy_dx0 == 0.0 || !hr.dy_dx0.is_finite() {
            break;
        }
        let dx = -hr.y / hr.dy_dx0;
        x0 += dx;
        hr = half_return(map, j, x0, sign, Some(index))?;
        if dx.abs() < NEWTON_TOL && hr.y.abs() < 1e-11 {
            return Ok((x0, hr));
        }
    }
    Err(Error::NoConvergence(format!("periodic-orbit Newton at J = {j} from x0 = {x_guess}")))
}

/// Two-body seeds on the axis: pericenter and apocenter of the 3:1 ellipse
/// facing Jupiter, then the opposite ones.
pub fn two_body_seeds(j: f64, p: &MassParams) -> Result<Vec<(f64, f64)>> {
    let l0 = l_resonant();
    let e = coords::ecc_of_energy(j, l0)?;
    let a = l0 * l0;
    let mut out = Vec::new();
    for x in [a * (1.0 - e), a * (1.0 + e), -a * (1.0 - e), -a * (1.0 + e)] {
        let r = x.abs();
        // prograde two-body speed at an apse
        let v = (2.0 / r - 1.0 / a).sqrt();
        let py = if x > 0.0 { v } else { -v };
        let sign = py - x;
        if SectionPoint::new(x, 0.0, j, sign).lift(p).is_ok() {
            out.push((x, sign));
        }
    }
    Ok(out)
}

/// Sup of `|L(t) - 3^(-1/3)|` over one period, sampled on the dense output.
pub fn max_l_deviation(integ: &Integrator, s: &CartesianState, t: f64) -> Result<f64> {
    let traj = integ.trajectory(s, t)?;
    let l0 = l_resonant();
    let mut worst: f64 = 0.0;
    for seg in traj.segments() {
        for k in 0..8 {
            let tt = seg.t_old + (seg.t_new - seg.t_old) * k as f64 / 8.0;
            let st = CartesianState::from_array(seg.eval(tt));
            worst = worst.max((coords::osculating(&st)?.L - l0).abs());
        }
    }
    Ok(worst)
}

/// Completes a record from a converged seed.
fn build_record(map: &SectionMap, j: f64, x0: f64, sign: f64, hr: &HalfReturn) -> Result<PeriodicOrbitRecord> {
    let period = 2.0 * hr.t;
    let sp = SectionPoint::new(x0, 0.0, j, sign);
    let k = crossings_per_period(map, &sp, period)?;
    let (m, _) = map.dpoincare(&sp, k as i32)?;
    let pairs = linalg::eig2(&m).ok_or(Error::Elliptic { j, trace: m[0][0] + m[1][1] })?;
    let (lu, vu) = pairs[0];
    let (_, vs) = pairs[1];
    if lu.abs() <= 1.0 {
        return Err(Error::Elliptic { j, trace: m[0][0] + m[1][1] });
    }
    let s = sp.lift(map.params())?;
    // the orbit is reversible: half a period covers the range of L
    let max_l = max_l_deviation(&map.integ, &s, 0.5 * period)?;
    Ok(PeriodicOrbitRecord {
        J: j,
        x0,
        sign,
        T: period,
        lambda_u: lu,
        v_u: orient(vu),
        v_s: orient(vs),
        crossings_per_period: k,
        max_L_dev: max_l,
        half_index: hr.index,
    })
}

/// Crossings of `{y = 0}` in `(0, T]`.
fn crossings_per_period(map: &SectionMap, sp: &SectionPoint, period: f64) -> Result<usize> {
    let s = sp.lift(map.params())?;
    let mut count = 0;
    let end = period - 1e-6;
    crate::integrate::events::scan_events(&map.integ.system(), &map.integ.cfg, 0.0, s.to_array(), &StateEvent(1), 1.0, |hit| {
        if hit.t < end {
            count += 1;
            true
        } else {
            false
        }
    })?;
    Ok(count + 1)
}

/// Fixes the eigenvector sign: positive `x` component.
fn orient(v: [f64; 2]) -> [f64; 2] {
    if v[0] < 0.0 || (v[0] == 0.0 && v[1] < 0.0) {
        [-v[0], -v[1]]
    } else {
        v
    }
}

/// The hyperbolic 3:1 orbit at energy `j`.
pub fn find_resonant_po(map: &SectionMap, j: f64, guess: Option<(f64, f64)>) -> Result<PeriodicOrbitRecord> {
    if !(J_MIN - 1e-9..=J_MAX + 1e-9).contains(&j) {
        return domain(format!("J = {j} outside the family range [{J_MIN}, {J_MAX}]"));
    }
    let seeds = match guess {
        Some(g) => vec![g],
        None => two_body_seeds(j, map.params())?,
    };
    let mut last_err = Error::NoConvergence(format!("no seed converged at J = {j}"));
    for (x, sign) in seeds {
        match shoot(map, j, x, sign).and_then(|(x0, hr)| build_record(map, j, x0, sign, &hr)) {
            Ok(rec) => return Ok(rec),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

/// Eigen-decomposition of `D P^k` at the fixed point, with residual checks.
pub fn hyperbolic_splitting(map: &SectionMap, po: &PeriodicOrbitRecord) -> Result<(f64, [f64; 2], [f64; 2])> {
    let sp = po.seed();
    let fixed = map.poincare(&sp, po.crossings_per_period as i32)?;
    let res = (fixed.point.x - sp.x).hypot(fixed.point.px - sp.px);
    if res > 1e-8 {
        return domain(format!("fixed-point residual {res:e} at J = {}", po.J));
    }
    let (m, _) = map.dpoincare(&sp, po.crossings_per_period as i32)?;
    let pairs = linalg::eig2(&m).ok_or(Error::Elliptic { j: po.J, trace: m[0][0] + m[1][1] })?;
    for (lam, v) in pairs {
        let r = linalg::mat_vec2(&m, &v);
        let res = (r[0] - lam * v[0]).hypot(r[1] - lam * v[1]);
        if res > EIGEN_TOL {
            return Err(Error::NoConvergence(format!("eigenvector residual {res:e} at J = {}", po.J)));
        }
    }
    let (v_u, v_s) = (orient(pairs[0].1), orient(pairs[1].1));
    // the seed is on the symmetry axis, where DR = diag(1, -1)
    let cross = v_s[0] * (-v_u[1]) - v_s[1] * v_u[0];
    if cross.abs() > SYMMETRY_TOL {
        return domain(format!("stable direction not the reflected unstable one ({cross:e}) at J = {}", po.J));
    }
    Ok((pairs[0].0, v_u, v_s))
}

/// Rows `J,x0,T,T_minus_2pi,lambda_u,max_L_dev`.
pub fn write_family_csv<W: std::io::Write>(family: &[PeriodicOrbitRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "J,x0,T,T_minus_2pi,lambda_u,max_L_dev")?;
    for r in family {
        writeln!(w, "{},{},{},{},{},{}", r.J, r.x0, r.T, r.t_minus_2pi(), r.lambda_u, r.max_L_dev)?;
    }
    Ok(())
}

/// Continuation along a monotone energy grid.
pub fn continue_family(map: &SectionMap, grid: &[f64]) -> Result<Vec<PeriodicOrbitRecord>> {
    let mut out: Vec<PeriodicOrbitRecord> = Vec::with_capacity(grid.len());
    for &j in grid {
        let guess = match out.as_slice() {
            [.., a, b] => {
                // secant predictor in J
                let slope = (b.x0 - a.x0) / (b.J - a.J);
                Some((b.x0 + slope * (j - b.J), b.sign))
            }
            [b] => Some((b.x0, b.sign)),
            [] => None,
        };
        let rec = find_resonant_po(map, j, guess).or_else(|_| find_resonant_po(map, j, None));
        match rec {
            Ok(r) => out.push(r),
            Err(e) => {
                return Err(Error::AtEnergy { j, source: Box::new(e) });
            }
        }
    }
    Ok(out)
}

/// Half-period symmetry residual: `|y|` at the return to `{p_x = 0}`.
pub fn symmetry_residual(map: &SectionMap, po: &PeriodicOrbitRecord) -> Result<f64> {
    let s = po.seed_state(map.params())?;
    let hit = map.integ.locate_event(&s, &StateEvent(2), Direction::Any, po.half_index, 1.0)?;
    Ok(hit.y[1].abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::IntegratorConfig;

    fn map() -> SectionMap {
        SectionMap::new(Integrator::new(MassParams::default(), IntegratorConfig::default()))
    }

    #[test]
    fn two_body_limit_is_exactly_resonant() {
        let m0 = SectionMap::new(Integrator::new(MassParams::new(0.0).unwrap(), IntegratorConfig::default()));
        let seeds = two_body_seeds(-1.6, m0.params()).unwrap();
        let (x, sign) = seeds[0];
        let s = SectionPoint::new(x, 0.0, -1.6, sign).lift(m0.params()).unwrap();
        let back = m0.integ.flow(&s, 2.0 * PI).unwrap();
        assert!((back.x - s.x).abs() < 1e-10 && back.y.abs() < 1e-10);
        assert!(max_l_deviation(&m0.integ, &s, 2.0 * PI).unwrap() < 1e-12);
    }

    #[test]
    fn low_energy_orbit() {
        let m = map();
        let po = find_resonant_po(&m, -1.719, None).unwrap();
        let mu = m.params().mu;
        let dt = po.t_minus_2pi().abs();
        assert!(dt > 9.0 * mu && dt < 15.0 * mu, "T - 2pi = {dt}");
        assert!(po.lambda_u.abs() > 1.0);
        assert_eq!(po.crossings_per_period, 4);
        assert!(po.max_L_dev < 0.018);
        assert!(symmetry_residual(&m, &po).unwrap() < 1e-9);
        let (lu, _, _) = hyperbolic_splitting(&m, &po).unwrap();
        assert!((lu - po.lambda_u).abs() < 1e-6 * lu.abs());
    }

    #[test]
    fn splitting_is_reciprocal_and_reflected() {
        let m = map();
        for j in [-1.7, -1.55, -1.4] {
            let po = find_resonant_po(&m, j, None).unwrap();
            let (lu, vu, vs) = hyperbolic_splitting(&m, &po).unwrap();
            assert!(lu.abs() > 1.0);
            let (dm, _) = m.dpoincare(&po.seed(), po.crossings_per_period as i32).unwrap();
            let ls = linalg::eig2(&dm).unwrap()[1].0;
            assert!((lu * ls - 1.0).abs() < 1e-6, "J = {j}: {}", lu * ls);
            assert!((linalg::norm2(vu) - 1.0).abs() < 1e-14 && (linalg::norm2(vs) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn orbit_closes_after_one_period() {
        let m = map();
        let po = find_resonant_po(&m, -1.6, None).unwrap();
        let s = po.seed_state(m.params()).unwrap();
        let back = m.integ.flow(&s, po.T).unwrap();
        let d = (0..4).map(|i| (back.to_array()[i] - s.to_array()[i]).abs()).fold(0.0, f64::max);
        assert!(d < 1e-8, "{d:e}");
    }

    #[test]
    fn family_is_continuous_in_energy() {
        let m = map();
        let grid: Vec<f64> = (0..8).map(|i| -1.70 + 0.02 * i as f64).collect();
        let fam = continue_family(&m, &grid).unwrap();
        for w in fam.windows(2) {
            assert!((w[1].x0 - w[0].x0).abs() < 10.0 * 0.02);
        }
        let mut buf = Vec::new();
        write_family_csv(&fam, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "J,x0,T,T_minus_2pi,lambda_u,max_L_dev");
        assert_eq!(text.lines().count(), grid.len() + 1);
    }

    #[test]
    fn low_energy_eccentricity() {
        let m = map();
        let po = find_resonant_po(&m, -1.719, None).unwrap();
        let s = po.seed_state(m.params()).unwrap();
        let traj = m.integ.trajectory(&s, po.T).unwrap();
        let es: Vec<f64> = traj.nodes().iter().map(|&t| coords::osculating(&CartesianState::from_array(traj.eval(t).unwrap())).unwrap().e).collect();
        let mean = es.iter().sum::<f64>() / es.len() as f64;
        assert!((mean - 0.2).abs() < 0.02, "mean e = {mean}");
    }
}
