//! Rotating-frame vector field of the planar circular restricted problem.
//!
//! Jupiter (mass `mu`) sits at `(1 - mu, 0)`, the Sun (mass `1 - mu`) at `(-mu, 0)`.
//! The momenta are the inertial velocity written in rotating axes, so the
//! osculating Kepler ellipse of a state is read off `(q, p)` directly.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coords::{self, DelaunayState};
use crate::error::{domain, Error, Primary, Result};

/// Sun-Jupiter mass ratio.
pub const MU_SUN_JUPITER: f64 = 0.95387536e-3;

/// Fourier nodes in fast time used for the elliptic harmonic.
pub const ELL_FOURIER_NODES: usize = 64;
/// Central-difference step in `e0`.
pub const ELL_E0_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassParams {
    pub mu: f64,
    pub e0: f64,
}

impl Default for MassParams {
    fn default() -> Self {
        Self { mu: MU_SUN_JUPITER, e0: 0.0 }
    }
}

impl MassParams {
    pub fn new(mu: f64) -> Result<Self> {
        Self::with_e0(mu, 0.0)
    }

    pub fn with_e0(mu: f64, e0: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&mu) {
            return domain(format!("mass ratio {mu} outside [0, 1/2]"));
        }
        if !(0.0..1.0).contains(&e0) {
            return domain(format!("primaries' eccentricity {e0} outside [0, 1)"));
        }
        Ok(Self { mu, e0 })
    }

    pub fn jupiter(&self) -> [f64; 2] {
        [1.0 - self.mu, 0.0]
    }

    pub fn sun(&self) -> [f64; 2] {
        [-self.mu, 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianState {
    pub x: f64,
    pub y: f64,
    pub px: f64,
    pub py: f64,
}

impl CartesianState {
    pub const fn new(x: f64, y: f64, px: f64, py: f64) -> Self {
        Self { x, y, px, py }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.px, self.py]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { x: a[0], y: a[1], px: a[2], py: a[3] }
    }

    /// Time-reversal reflection `(x, y, px, py) -> (x, -y, -px, py)`.
    pub fn reflect(self) -> Self {
        Self { x: self.x, y: -self.y, px: -self.px, py: self.py }
    }

    pub fn distances(&self, p: &MassParams) -> (f64, f64) {
        distances(&self.to_array(), p.mu)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Linear part of the reflection, acting on tangent vectors.
pub const REFLECTION: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

/// Distances `(r1, r2)` to Jupiter and to the Sun.
#[inline]
pub fn distances(s: &[f64; 4], mu: f64) -> (f64, f64) {
    let dy2 = s[1] * s[1];
    let r1 = ((s[0] - 1.0 + mu).powi(2) + dy2).sqrt();
    let r2 = ((s[0] + mu).powi(2) + dy2).sqrt();
    (r1, r2)
}

/// Distances treated as a collision.
const COINCIDENT: f64 = 1e-15;

fn check_collision(r1: f64, r2: f64, mu: f64) -> Result<()> {
    if !(r1 > COINCIDENT) && mu > 0.0 {
        return Err(Error::Collision { primary: Primary::Jupiter, distance: r1 });
    }
    if !(r2 > COINCIDENT) {
        return Err(Error::Collision { primary: Primary::Sun, distance: r2 });
    }
    Ok(())
}

pub fn jacobi_energy(s: &CartesianState, p: &MassParams) -> Result<f64> {
    let (r1, r2) = s.distances(p);
    check_collision(r1, r2, p.mu)?;
    Ok(jacobi_unchecked(&s.to_array(), p.mu))
}

#[inline]
pub(crate) fn jacobi_unchecked(s: &[f64; 4], mu: f64) -> f64 {
    let (r1, r2) = distances(s, mu);
    let [x, y, px, py] = *s;
    let jup = if mu == 0.0 { 0.0 } else { mu / r1 };
    0.5 * (px * px + py * py) + y * px - x * py - jup - (1.0 - mu) / r2
}

pub fn vector_field(s: &CartesianState, p: &MassParams) -> Result<[f64; 4]> {
    let (r1, r2) = s.distances(p);
    check_collision(r1, r2, p.mu)?;
    Ok(rhs(&s.to_array(), p.mu))
}

/// Hamilton's equations; callers guard collisions.
#[inline]
pub fn rhs(s: &[f64; 4], mu: f64) -> [f64; 4] {
    let [x, y, px, py] = *s;
    let dx1 = x - 1.0 + mu;
    let dx2 = x + mu;
    let y2 = y * y;
    let r1sq = dx1 * dx1 + y2;
    let r2sq = dx2 * dx2 + y2;
    let c1 = if mu == 0.0 { 0.0 } else { mu / (r1sq * r1sq.sqrt()) };
    let c2 = (1.0 - mu) / (r2sq * r2sq.sqrt());
    [
        px + y,
        py - x,
        py - c1 * dx1 - c2 * dx2,
        -px - (c1 + c2) * y,
    ]
}

/// Jacobian matrix of [`rhs`], row-major.
#[inline]
pub fn rhs_jacobian(s: &[f64; 4], mu: f64) -> [[f64; 4]; 4] {
    let [x, y, _, _] = *s;
    let dx1 = x - 1.0 + mu;
    let dx2 = x + mu;
    let y2 = y * y;
    let r1sq = dx1 * dx1 + y2;
    let r2sq = dx2 * dx2 + y2;
    let r1_3 = r1sq * r1sq.sqrt();
    let r2_3 = r2sq * r2sq.sqrt();
    let a1 = if mu == 0.0 { 0.0 } else { mu / r1_3 };
    let a2 = (1.0 - mu) / r2_3;
    let b1 = if mu == 0.0 { 0.0 } else { 3.0 * a1 / r1sq };
    let b2 = 3.0 * a2 / r2sq;
    // Hessian of mu/r1 + (1-mu)/r2
    let oxx = b1 * dx1 * dx1 + b2 * dx2 * dx2 - a1 - a2;
    let oxy = (b1 * dx1 + b2 * dx2) * y;
    let oyy = (b1 + b2) * y2 - a1 - a2;
    [
        [0.0, 1.0, 1.0, 0.0],
        [-1.0, 0.0, 0.0, 1.0],
        [oxx, oxy, 0.0, 1.0],
        [oxy, oyy, -1.0, 0.0],
    ]
}

/// Base state plus its 4x4 sensitivity matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariationalState {
    pub base: CartesianState,
    pub jacobian: [[f64; 4]; 4],
}

impl VariationalState {
    pub fn identity(base: CartesianState) -> Self {
        let mut jacobian = [[0.0; 4]; 4];
        for (i, row) in jacobian.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self { base, jacobian }
    }

    pub fn to_array(&self) -> [f64; 20] {
        let mut out = [0.0; 20];
        out[..4].copy_from_slice(&self.base.to_array());
        for i in 0..4 {
            out[4 + 4 * i..8 + 4 * i].copy_from_slice(&self.jacobian[i]);
        }
        out
    }

    pub fn from_array(a: &[f64; 20]) -> Self {
        let base = CartesianState::new(a[0], a[1], a[2], a[3]);
        let mut jacobian = [[0.0; 4]; 4];
        for (i, row) in jacobian.iter_mut().enumerate() {
            row.copy_from_slice(&a[4 + 4 * i..8 + 4 * i]);
        }
        Self { base, jacobian }
    }

    pub fn determinant(&self) -> f64 {
        crate::linalg::det4(&self.jacobian)
    }
}

/// Variational equations: base field plus `dPhi/dt = A(s) Phi`.
#[inline]
pub fn rhs_variational(v: &[f64; 20], mu: f64) -> [f64; 20] {
    let s = [v[0], v[1], v[2], v[3]];
    let f = rhs(&s, mu);
    let a = rhs_jacobian(&s, mu);
    let mut out = [0.0; 20];
    out[..4].copy_from_slice(&f);
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a[i][k] * v[4 + 4 * k + j];
            }
            out[4 + 4 * i + j] = acc;
        }
    }
    out
}

/// `Delta H_circ` on the configuration plane, written without the
/// `1/r - 1/r2` cancellation.
pub fn delta_h_circ(q: [f64; 2], p: &MassParams) -> Result<f64> {
    let mu = p.mu;
    let s = [q[0], q[1], 0.0, 0.0];
    let (r1, r2) = distances(&s, mu);
    check_collision(r1, r2, p.mu)?;
    let r = q[0].hypot(q[1]);
    if !(r > 0.0) {
        return domain("Delta H_circ undefined at the barycenter");
    }
    Ok((2.0 * q[0] + mu) / (r * r2 * (r + r2)) + 1.0 / r2 - 1.0 / r1)
}

/// Gradient of `Delta H_circ` with respect to the position.
pub fn grad_delta_h_circ(q: [f64; 2], p: &MassParams) -> Result<[f64; 2]> {
    let mu = p.mu;
    let s = [q[0], q[1], 0.0, 0.0];
    let (r1, r2) = distances(&s, mu);
    check_collision(r1, r2, p.mu)?;
    if mu == 0.0 {
        return delta_h_circ_limit_grad(q);
    }
    let r = q[0].hypot(q[1]);
    let (r3, r13, r23) = (r.powi(3), r1.powi(3), r2.powi(3));
    let j = p.jupiter();
    let sn = p.sun();
    let mut g = [0.0; 2];
    for k in 0..2 {
        g[k] = (-q[k] / r3 + mu * (q[k] - j[k]) / r13 + (1.0 - mu) * (q[k] - sn[k]) / r23) / mu;
    }
    Ok(g)
}

/// `mu -> 0` limit of the gradient: `grad(1/r2 - 1/r1)` plus the Sun-offset dipole term.
fn delta_h_circ_limit_grad(q: [f64; 2]) -> Result<[f64; 2]> {
    let r = q[0].hypot(q[1]);
    let r1 = (q[0] - 1.0).hypot(q[1]);
    let r3 = r.powi(3);
    let r5 = r3 * r * r;
    let r13 = r1.powi(3);
    // d/dmu of (q - (-mu,0))/r2^3 at mu = 0
    let gx = (1.0 / r3 - 3.0 * q[0] * q[0] / r5) + (q[0] - 1.0) / r13 - q[0] / r3;
    let gy = -3.0 * q[0] * q[1] / r5 + q[1] / r13 - q[1] / r3;
    Ok([gx, gy])
}

/// `d Delta H_circ / dG` at fixed `(L, ell, g)` via the chain rule through the Delaunay map.
#[allow(non_snake_case)]
pub fn dG_delta_h_circ(d: &DelaunayState, p: &MassParams) -> Result<f64> {
    let e = d.eccentricity();
    if !(e > 1e-10) {
        return domain("circular osculating ellipse: d/dG undefined");
    }
    if !(d.G.abs() > 1e-12 * d.L) {
        return domain("rectilinear osculating ellipse");
    }
    let q = coords::delaunay_position(d)?;
    let dq = coords::position_dG(d)?;
    let grad = grad_delta_h_circ(q, p)?;
    Ok(grad[0] * dq[0] + grad[1] * dq[1])
}

/// Central finite-difference cross-check of [`dG_delta_h_circ`].
#[allow(non_snake_case)]
pub fn dG_delta_h_circ_fd(d: &DelaunayState, p: &MassParams, h: f64) -> Result<f64> {
    let value = |g_val: f64| -> Result<f64> {
        let dd = DelaunayState { G: g_val, ..*d };
        let c = coords::delaunay_to_cart(&dd)?;
        let j = jacobi_energy(&c, p)?;
        Ok((j + 0.5 / (d.L * d.L) + g_val) / p.mu)
    };
    Ok((value(d.G + h)? - value(d.G - h)?) / (2.0 * h))
}

/// Rotating-frame offset of the primaries' relative vector at time `t`
/// for eccentricity `e0`: `x0(t; e0) e^{-it}` as a complex number.
fn primaries_offset(t: f64, e0: f64) -> Result<Complex64> {
    let ecc_anom = coords::solve_kepler_signed(t, e0)?;
    let inertial = Complex64::new(ecc_anom.cos() - e0, (1.0 - e0 * e0).sqrt() * ecc_anom.sin());
    Ok(inertial * Complex64::from_polar(1.0, -t))
}

/// `(|a| - |b|)` computed from `a - b` and `a + b`.
fn norm_difference(diff: Complex64, sum: Complex64, na: f64, nb: f64) -> f64 {
    (diff.re * sum.re + diff.im * sum.im) / (na + nb)
}

/// `(H_ell(e0 = h) - H_ell(e0 = -h)) / (2 h mu)` at position `q` and time `t`.
fn ell_central_difference(q: Complex64, t: f64, h: f64, mu: f64) -> Result<f64> {
    let rp = primaries_offset(t, h)?;
    let rm = primaries_offset(t, -h)?;
    let drho = rp - rm;
    let mut acc = 0.0;
    // (mass, lever arm): Jupiter at (1-mu) rho, Sun at -mu rho
    for (m, lever) in [(mu, 1.0 - mu), (1.0 - mu, -mu)] {
        if m == 0.0 {
            continue;
        }
        let a = q - rp * lever;
        let b = q - rm * lever;
        let (na, nb) = (a.norm(), b.norm());
        if !(na > 0.0 && nb > 0.0) {
            return domain(format!("collision on the Fourier grid at t = {t}"));
        }
        // -m/|a| + m/|b| = m (|a| - |b|) / (|a||b|)
        let dn = norm_difference(-drho * lever, a + b, na, nb);
        acc += m * dn / (na * nb);
    }
    if mu == 0.0 {
        return domain("elliptic harmonic needs mu > 0");
    }
    Ok(acc / (2.0 * h * mu))
}

/// Harmonics `c_k`, `k = -kmax..=kmax`, of `d/de0 Delta H_ell |_{e0=0}` in fast time
/// at a fixed position, from the Richardson-extrapolated e0-difference on a
/// uniform grid.
pub fn delta_h_ell_harmonics(q: [f64; 2], p: &MassParams, kmax: usize, h: f64) -> Result<Vec<Complex64>> {
    let n = ELL_FOURIER_NODES;
    let qc = Complex64::new(q[0], q[1]);
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let t = 2.0 * PI * k as f64 / n as f64;
        let coarse = ell_central_difference(qc, t, h, p.mu)?;
        let fine = ell_central_difference(qc, t, 0.5 * h, p.mu)?;
        samples.push((4.0 * fine - coarse) / 3.0);
    }
    let mut out = Vec::with_capacity(2 * kmax + 1);
    for k in -(kmax as i64)..=(kmax as i64) {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, v) in samples.iter().enumerate() {
            let t = 2.0 * PI * j as f64 / n as f64;
            acc += Complex64::from_polar(*v, -(k as f64) * t);
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}

/// `Delta H_ell^{1,+}`: the `e^{it}` coefficient of the first-order elliptic
/// perturbation at the given phase point.
pub fn delta_h_ell_harmonic(d: &DelaunayState, p: &MassParams) -> Result<Complex64> {
    let q = coords::delaunay_position(d)?;
    let c = delta_h_ell_harmonics(q, p, 1, ELL_E0_STEP)?;
    Ok(c[2])
}

/// Closed form of `Delta H_ell^{1,+}` at position `q`.
///
/// The primaries' offset is `e0 (-cos t, 2 sin t) + O(e0^2)` in the rotating frame,
/// which gives `-D_x / 2 - i D_y` with `D = (1-mu) [(q - q_S)/r2^3 - (q - q_J)/r1^3]`.
pub fn delta_h_ell_plus(q: [f64; 2], mu: f64) -> Complex64 {
    let s = [q[0], q[1], 0.0, 0.0];
    let (r1, r2) = distances(&s, mu);
    let (r13, r23) = (r1.powi(3), r2.powi(3));
    let dx = (1.0 - mu) * ((q[0] + mu) / r23 - (q[0] - 1.0 + mu) / r13);
    let dy = (1.0 - mu) * (q[1] / r23 - q[1] / r13);
    Complex64::new(-0.5 * dx, -dy)
}
