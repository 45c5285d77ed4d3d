//! Rotating Delaunay elements and the Kepler equation.
//!
//! `L = sqrt(a)` with unit gravitational parameter, `G = x p_y - y p_x`, and `g`
//! is the argument of pericenter measured in the instantaneous rotating frame.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::dynamics::CartesianState;
use crate::error::{domain, Result};

/// `L` of the exact 3:1 resonance, `3^(-1/3)`.
pub fn l_resonant() -> f64 {
    3f64.powf(-1.0 / 3.0)
}

/// Eccentricity below which the pericenter is treated as undefined.
pub const CIRCULAR_ECC: f64 = 1e-10;

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelaunayState {
    pub L: f64,
    pub ell: f64,
    pub G: f64,
    pub g: f64,
}

impl DelaunayState {
    #[allow(non_snake_case)]
    pub fn new(L: f64, ell: f64, G: f64, g: f64) -> Result<Self> {
        if !(L > 0.0) || !(G.abs() <= L) {
            return domain(format!("invalid Delaunay actions L = {L}, G = {G}"));
        }
        Ok(Self { L, ell: normalize_angle(ell), G, g: normalize_angle(g) })
    }

    pub fn eccentricity(&self) -> f64 {
        let ratio = self.G / self.L;
        (1.0 - ratio * ratio).max(0.0).sqrt()
    }

    pub fn semi_major_axis(&self) -> f64 {
        self.L * self.L
    }
}

/// Reduce an angle to `[0, 2pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wrap an angle difference to `(-pi, pi]`.
pub fn wrap_pi(a: f64) -> f64 {
    let r = normalize_angle(a);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Eccentric anomaly `u` with `u - e sin u = ell`, continuous in `ell`.
pub fn solve_kepler(ell: f64, e: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&e) {
        return domain(format!("Kepler equation needs 0 <= e < 1, got {e}"));
    }
    solve_kepler_signed(ell, e)
}

/// As [`solve_kepler`] but accepting `-1 < e < 1`.
pub(crate) fn solve_kepler_signed(ell: f64, e: f64) -> Result<f64> {
    if !(e.abs() < 1.0) || !ell.is_finite() {
        return domain(format!("Kepler equation needs |e| < 1 and finite ell, got e = {e}"));
    }
    if e == 0.0 {
        return Ok(ell);
    }
    let turns = (ell / TAU).floor();
    let m = ell - turns * TAU;
    let u = kepler_reduced(m, e);
    Ok(u + turns * TAU)
}

/// Newton with a bisection safeguard on `[0, 2pi]`, for `m` in `[0, 2pi)`.
fn kepler_reduced(m: f64, e: f64) -> f64 {
    let f = |u: f64| u - e * u.sin() - m;
    if m == 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, TAU);
    let mut u = m + 0.85 * e * m.sin().signum();
    if !(lo..=hi).contains(&u) {
        u = m;
    }
    for _ in 0..50 {
        let fu = f(u);
        if fu == 0.0 {
            return u;
        }
        if fu < 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let fp = 1.0 - e * u.cos();
        let mut next = u - fu / fp;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 4.0 * f64::EPSILON * next.abs().max(1.0) {
            return next;
        }
        u = next;
    }
    u
}

/// Osculating Kepler quantities that remain defined for circular orbits.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Osculating {
    pub L: f64,
    pub G: f64,
    pub e: f64,
    pub a: f64,
    pub kepler_energy: f64,
}

pub fn osculating(s: &CartesianState) -> Result<Osculating> {
    let r = s.x.hypot(s.y);
    if !(r > 0.0) {
        return domain("position at the origin");
    }
    let v2 = s.px * s.px + s.py * s.py;
    let energy = 0.5 * v2 - 1.0 / r;
    if !(energy < 0.0) {
        return domain(format!("unbound osculating conic (energy {energy})"));
    }
    let a = -0.5 / energy;
    let l = a.sqrt();
    let g = s.x * s.py - s.y * s.px;
    let ev = ecc_vector(s, r, v2);
    Ok(Osculating { L: l, G: g, e: ev[0].hypot(ev[1]), a, kepler_energy: energy })
}

fn ecc_vector(s: &CartesianState, r: f64, v2: f64) -> [f64; 2] {
    let qv = s.x * s.px + s.y * s.py;
    let c = v2 - 1.0 / r;
    [c * s.x - qv * s.px, c * s.y - qv * s.py]
}

pub fn cart_to_delaunay(s: &CartesianState) -> Result<DelaunayState> {
    let osc = osculating(s)?;
    if osc.e < CIRCULAR_ECC {
        return domain(format!("pericenter undefined (e = {:e})", osc.e));
    }
    let r = s.x.hypot(s.y);
    let v2 = s.px * s.px + s.py * s.py;
    let ev = ecc_vector(s, r, v2);
    let qv = s.x * s.px + s.y * s.py;
    let u = (qv * osc.L).atan2(osc.a - r);
    let ell = u - osc.e * u.sin();
    Ok(DelaunayState {
        L: osc.L,
        ell: normalize_angle(ell),
        G: osc.G,
        g: normalize_angle(ev[1].atan2(ev[0])),
    })
}

/// Position on the osculating ellipse.
pub fn delaunay_position(d: &DelaunayState) -> Result<[f64; 2]> {
    let e = d.eccentricity();
    let a = d.semi_major_axis();
    let u = solve_kepler(d.ell, e)?;
    let (su, cu) = u.sin_cos();
    let px = a * (cu - e);
    let py = a * (d.G / d.L) * su;
    Ok(rotate([px, py], d.g))
}

pub fn delaunay_to_cart(d: &DelaunayState) -> Result<CartesianState> {
    if !(d.L > 0.0) || !(d.G.abs() <= d.L) {
        return domain(format!("invalid Delaunay actions L = {}, G = {}", d.L, d.G));
    }
    let e = d.eccentricity();
    let a = d.semi_major_axis();
    let u = solve_kepler(d.ell, e)?;
    let (su, cu) = u.sin_cos();
    let ratio = d.G / d.L;
    let udot = d.L.powi(-3) / (1.0 - e * cu);
    let q = rotate([a * (cu - e), a * ratio * su], d.g);
    let v = rotate([-a * su * udot, a * ratio * cu * udot], d.g);
    Ok(CartesianState::new(q[0], q[1], v[0], v[1]))
}

/// `dq/dG` at fixed `(L, ell, g)`.
#[allow(non_snake_case)]
pub fn position_dG(d: &DelaunayState) -> Result<[f64; 2]> {
    let e = d.eccentricity();
    if e < CIRCULAR_ECC {
        return domain("d/dG undefined on a circular ellipse");
    }
    let a = d.semi_major_axis();
    let u = solve_kepler(d.ell, e)?;
    let (su, cu) = u.sin_cos();
    let e_g = -d.G / (d.L * d.L * e);
    let u_g = su * e_g / (1.0 - e * cu);
    let dx = a * (-su * u_g - e_g);
    let dy = a * (su / d.L + (d.G / d.L) * cu * u_g);
    Ok(rotate([dx, dy], d.g))
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// `E(J, L) = sqrt(1 - (J + 1/(2L^2))^2 / L^2)`: the eccentricity of a Kepler
/// ellipse with actions `L` and `G = -(J + 1/(2L^2))`.
#[allow(non_snake_case)]
pub fn ecc_of_energy(J: f64, L: f64) -> Result<f64> {
    let g = J + 0.5 / (L * L);
    let radicand = 1.0 - g * g / (L * L);
    if radicand < 0.0 {
        return domain(format!("negative radicand {radicand} in E(J, L)"));
    }
    Ok(radicand.sqrt().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kepler_trivial_cases() {
        assert_eq!(solve_kepler(1.234, 0.0).unwrap(), 1.234);
        for e in [0.1, 0.5, 0.9, 0.95] {
            assert!((solve_kepler(PI, e).unwrap() - PI).abs() < 1e-15);
        }
        assert!(solve_kepler(0.3, 1.0).is_err());
        assert!(solve_kepler(0.3, -0.1).is_err());
    }

    #[test]
    fn kepler_residual_sweep() {
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            for j in 0..100 {
                let ell = TAU * i as f64 / 100.0 - 0.37;
                let e = 0.95 * j as f64 / 99.0;
                let u = solve_kepler(ell, e).unwrap();
                worst = worst.max((u - e * u.sin() - ell).abs());
            }
        }
        assert!(worst <= 1e-13, "worst residual {worst:e}");
    }

    #[test]
    fn circular_orbit_elements() {
        let s = CartesianState::new(1.0, 0.0, 0.0, 1.0);
        let o = osculating(&s).unwrap();
        assert!((o.L - 1.0).abs() < 1e-15 && (o.G - 1.0).abs() < 1e-15 && o.e < 1e-15);
        assert!(cart_to_delaunay(&s).is_err());
    }

    #[test]
    fn unbound_state_rejected() {
        let s = CartesianState::new(1.0, 0.0, 0.0, 1.5);
        assert!(cart_to_delaunay(&s).is_err());
    }

    #[test]
    fn ecc_of_energy_examples() {
        let l0 = l_resonant();
        assert!(ecc_of_energy(-0.5 / (l0 * l0) - l0, l0).unwrap() < 1e-7);
        assert!((ecc_of_energy(-1.535, l0).unwrap() - 0.700).abs() < 0.01);
        assert!((ecc_of_energy(-1.551, l0).unwrap() - 0.676).abs() < 0.01);
        assert!(ecc_of_energy(-3.0, l0).is_err());
    }

    #[test]
    fn ecc_of_energy_monotone_on_family_range() {
        let l0 = l_resonant();
        let mut prev = -1.0;
        for k in 0..=200 {
            let j = -1.731 + 0.372 * k as f64 / 200.0;
            let e = ecc_of_energy(j, l0).unwrap();
            assert!(e > prev);
            prev = e;
        }
    }

    fn bound_state() -> impl Strategy<Value = CartesianState> {
        (0.3f64..1.5, 0.0f64..TAU, 0.05f64..0.9, 0.0f64..TAU, -1.0f64..1.0).prop_map(
            |(a, ell, e, g, sign)| {
                let l = a.sqrt();
                let gg = l * (1.0 - e * e).sqrt() * if sign < -0.8 { -1.0 } else { 1.0 };
                delaunay_to_cart(&DelaunayState { L: l, ell, G: gg, g }).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn kepler_odd_about_pi(ell in 0.0f64..TAU, e in 0.0f64..0.95) {
            let a = solve_kepler(TAU - ell, e).unwrap();
            let b = TAU - solve_kepler(ell, e).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn kepler_continuous_across_turns(ell in -20.0f64..20.0, e in 0.0f64..0.95) {
            let a = solve_kepler(ell, e).unwrap();
            let b = solve_kepler(ell + 1e-9, e).unwrap();
            prop_assert!((b - a).abs() < 1e-7);
        }

        #[test]
        fn round_trip_cart_delaunay_cart(s in bound_state()) {
            let d = cart_to_delaunay(&s).unwrap();
            let back = delaunay_to_cart(&d).unwrap();
            for (a, b) in s.to_array().iter().zip(back.to_array()) {
                prop_assert!((a - b).abs() < 1e-10, "{s:?} -> {back:?}");
            }
            prop_assert_eq!(d.G, s.x * s.py - s.y * s.px);
        }

        #[test]
        fn l_encodes_kepler_energy(s in bound_state()) {
            let d = cart_to_delaunay(&s).unwrap();
            let r = s.x.hypot(s.y);
            let en = 0.5 * (s.px * s.px + s.py * s.py) - 1.0 / r;
            prop_assert!((-0.5 / (d.L * d.L) - en).abs() < 1e-12);
        }

        #[test]
        fn position_derivative_matches_difference(s in bound_state()) {
            let d = cart_to_delaunay(&s).unwrap();
            prop_assume!(d.eccentricity() > 0.1 && d.eccentricity() < 0.85);
            let h = 1e-6;
            let up = delaunay_position(&DelaunayState { G: d.G + h, ..d }).unwrap();
            let dn = delaunay_position(&DelaunayState { G: d.G - h, ..d }).unwrap();
            let an = position_dG(&d).unwrap();
            for k in 0..2 {
                let fd = (up[k] - dn[k]) / (2.0 * h);
                prop_assert!((fd - an[k]).abs() < 1e-6 * (1.0 + an[k].abs()));
            }
        }
    }
}
