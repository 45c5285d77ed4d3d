//! Reparameterized time along the resonant periodic orbit and its homoclinic
//! channels, and the quantities built on it: the frequency `nu`, the phase
//! shifts `alpha_i`, the amplitudes `B_i`, and the variance `sigma_0^2`.
//!
//! The new time is `sigma = g`, with `dt/dsigma = 1/(-1 + mu dG(Delta H_circ))`.
//! All sigma-integrals are evaluated in physical time: `mu f dsigma` with
//! `f = dG/(-1 + mu dG)` becomes `mu dG(Delta H_circ) dt`, and
//! `(h / (-1 + mu dG)) dsigma` becomes `h dt`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coords::{self, DelaunayState};
use crate::dynamics::{self, CartesianState, MassParams};
use crate::error::{domain, Error, Result};
use crate::homoclinic::{HomoclinicChannelRecord, HomoclinicSetup};
use crate::integrate::Trajectory;
use crate::porbit::PeriodicOrbitRecord;
use crate::quad::{self, QuadTol};
use crate::roots::brent;
use crate::section::SectionMap;

/// Smallest accepted `|dg/dt|`.
pub const REPARAM_MIN: f64 = 0.1;
pub const CAUCHY_TOL: f64 = 1e-6;
pub const N_MAX: usize = 500;
pub const RESONANT_MIN: f64 = 1e-6;
pub const DEGENERATE_MIN: f64 = 1e-8;
/// `|alpha_i| <= ALPHA_BOUND * mu`.
pub const ALPHA_BOUND: f64 = 100.0;
/// Smallest `|alpha_a - alpha_b|` counted as distinct phase shifts, ten times
/// the Cauchy tolerance of each side.
pub const ALPHA_SEPARATION: f64 = 1e-5;
/// Sampling step of the `g` table along an orbit.
const G_SAMPLE: f64 = 0.05;
/// Allowed state mismatch where two dense pieces of an orbit meet.
const JOIN_STATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelnikovConfig {
    pub quad: QuadTol,
    pub cauchy_tol: f64,
    pub n_max: usize,
}

impl Default for MelnikovConfig {
    fn default() -> Self {
        Self { quad: QuadTol { rel: 1e-8, abs: 1e-13, max_intervals: 2000 }, cauchy_tol: CAUCHY_TOL, n_max: N_MAX }
    }
}

/// `dt/dsigma = 1/(-1 + mu dG(Delta H_circ))`.
pub fn reparam_jacobian(d: &DelaunayState, p: &MassParams) -> Result<f64> {
    if p.mu == 0.0 {
        return Ok(-1.0);
    }
    let den = -1.0 + p.mu * dynamics::dG_delta_h_circ(d, p)?;
    if den.abs() < REPARAM_MIN {
        return Err(Error::Reparam { rate: den });
    }
    Ok(1.0 / den)
}

fn wrap_near(g: f64, reference: f64) -> f64 {
    g + 2.0 * PI * ((reference - g) / (2.0 * PI)).round()
}

/// An orbit on a common clock `tau`, with `tau = 0` at its anchor, assembled
/// from dense pieces.
#[derive(Debug, Clone)]
pub struct AnchoredOrbit {
    /// `(shift, trajectory)`: the trajectory's own time is `tau - shift`.
    pieces: Vec<(f64, Trajectory<4>)>,
    pub tau_lo: f64,
    pub tau_hi: f64,
    /// Argument of the pericenter at the anchor.
    pub g0: f64,
    /// Unwrapped `g` sampled on `[tau_lo, tau_hi]`, ascending in `tau`.
    table: Vec<(f64, f64)>,
}

impl AnchoredOrbit {
    fn new(pieces: Vec<(f64, Trajectory<4>)>, tau_lo: f64, tau_hi: f64) -> Result<Self> {
        let mut orbit = Self { pieces, tau_lo, tau_hi, g0: 0.0, table: Vec::new() };
        orbit.g0 = orbit.g_raw(0.0)?;
        let mut table = vec![(0.0, orbit.g0)];
        for dir in [1.0, -1.0] {
            let end = if dir > 0.0 { tau_hi } else { tau_lo };
            let n = (end.abs() / G_SAMPLE).ceil() as usize;
            let mut prev = orbit.g0;
            for k in 1..=n {
                let tau = if k == n { end } else { dir * G_SAMPLE * k as f64 };
                let g = wrap_near(orbit.g_raw(tau)?, prev);
                table.push((tau, g));
                prev = g;
            }
        }
        table.sort_by(|a, b| a.0.total_cmp(&b.0));
        table.dedup_by(|a, b| a.0 == b.0);
        orbit.table = table;
        Ok(orbit)
    }

    pub fn state(&self, tau: f64) -> Result<CartesianState> {
        for (shift, tr) in &self.pieces {
            if let Some(y) = tr.eval(tau - shift) {
                return Ok(CartesianState::from_array(y));
            }
        }
        domain(format!("tau = {tau} outside the orbit span [{}, {}]", self.tau_lo, self.tau_hi))
    }

    fn g_raw(&self, tau: f64) -> Result<f64> {
        Ok(coords::cart_to_delaunay(&self.state(tau)?)?.g)
    }

    /// Range of `sigma = g - g0` covered by the span.
    pub fn sigma_range(&self) -> (f64, f64) {
        let first = self.table.first().unwrap().1 - self.g0;
        let last = self.table.last().unwrap().1 - self.g0;
        (first.min(last), first.max(last))
    }

    /// `tau` at which `g - g0 = sigma`; `g` decreases along the flow.
    pub fn tau_at_sigma(&self, sigma: f64) -> Result<f64> {
        let target = self.g0 + sigma;
        let k = self.table.partition_point(|&(_, g)| g > target);
        if k == 0 || k == self.table.len() {
            return domain(format!("sigma = {sigma} outside the orbit span"));
        }
        let (a, ga) = self.table[k - 1];
        let (b, gb) = self.table[k];
        if ga == target {
            return Ok(a);
        }
        let f = |tau: f64| -> Result<f64> {
            let reference = ga + (gb - ga) * (tau - a) / (b - a);
            Ok(wrap_near(self.g_raw(tau)?, reference) - target)
        };
        brent(f, a, b, 1e-14, 200)
    }

    /// `tau_n` for `sigma = side * 2 pi n`, `n = 1, 2, ...`, while inside the span.
    pub fn period_times(&self, side: f64, n_max: usize) -> Result<Vec<f64>> {
        let (lo, hi) = self.sigma_range();
        let mut out = Vec::new();
        for n in 1..=n_max {
            let sigma = side * 2.0 * PI * n as f64;
            if sigma < lo || sigma > hi {
                break;
            }
            out.push(self.tau_at_sigma(sigma)?);
        }
        Ok(out)
    }
}

/// `[mu dG(Delta H_circ), Re, Im of Delta H_ell^{1,+} e^{i tau}]` on the orbit.
fn integrand(orbit: &AnchoredOrbit, tau: f64, p: &MassParams) -> Result<[f64; 3]> {
    let s = orbit.state(tau)?;
    let d = coords::cart_to_delaunay(&s)?;
    let dg = dynamics::dG_delta_h_circ(&d, p)?;
    let den = -1.0 + p.mu * dg;
    if den.abs() < REPARAM_MIN {
        return Err(Error::Reparam { rate: den });
    }
    let h = dynamics::delta_h_ell_plus([s.x, s.y], p.mu) * Complex64::from_polar(1.0, tau);
    Ok([p.mu * dg, h.re, h.im])
}

fn integrate_orbit(orbit: &AnchoredOrbit, a: f64, b: f64, p: &MassParams, tol: QuadTol) -> Result<(f64, Complex64)> {
    let (v, _) = quad::integrate(|tau| integrand(orbit, tau, p), a, b, tol)?;
    Ok((v[0], Complex64::new(v[1], v[2])))
}

/// The frequency of the periodic orbit in the new time.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frequency {
    pub J: f64,
    /// `nu = 1 - mu nu_hat`, the rotation of `s` per unit `sigma`.
    pub nu: f64,
    /// `-(1/2pi)` times the periodic-orbit average of `dG/(-1 + mu dG)`: the
    /// constant that makes the `alpha` partial sums converge.
    pub nu_hat: f64,
    /// `int_0^T mu dG(Delta H_circ) dt = 2 pi mu nu_hat`.
    pub period_term: f64,
    pub T: f64,
    /// `9 mu / 2pi <= |nu - 1| <= 15 mu / 2pi`.
    pub in_twist_band: bool,
}

pub fn twist_band(nu: f64, mu: f64) -> bool {
    let d = (nu - 1.0).abs();
    d >= 9.0 * mu / (2.0 * PI) && d <= 15.0 * mu / (2.0 * PI)
}

fn frequency_from(j: f64, t: f64, period_term: f64, mu: f64) -> Frequency {
    let nu_hat = if mu == 0.0 { 0.0 } else { period_term / (2.0 * PI * mu) };
    let nu = 1.0 - period_term / (2.0 * PI);
    Frequency { J: j, nu, nu_hat, period_term, T: t, in_twist_band: twist_band(nu, mu) }
}

/// [`Frequency`] of a periodic orbit by quadrature over one period.
pub fn nu(map: &SectionMap, po: &PeriodicOrbitRecord, tol: QuadTol) -> Result<Frequency> {
    let p = *map.params();
    if p.mu == 0.0 {
        return Ok(frequency_from(po.J, po.T, 0.0, 0.0));
    }
    let start = po.seed_state(&p)?;
    let orbit = AnchoredOrbit::new(vec![(0.0, map.integ.trajectory(&start, po.T)?)], 0.0, po.T)?;
    let (v, _) = quad::integrate_scalar(|tau| Ok(integrand(&orbit, tau, &p)?[0]), 0.0, po.T, tol)?;
    Ok(frequency_from(po.J, po.T, v, p.mu))
}

/// The periodic orbit and both halves of a homoclinic orbit, each anchored at
/// a symmetric point with the same `g` modulo `2 pi`.
#[allow(non_snake_case)]
#[derive(Debug, Clone)]
pub struct ChannelOrbits {
    pub po: AnchoredOrbit,
    /// `tau in [-t_u, 0]`, from the local unstable manifold to `z`.
    pub unstable: AnchoredOrbit,
    /// `tau in [0, t_s]`, from `z` to the local stable manifold.
    pub stable: AnchoredOrbit,
    pub T: f64,
}

fn orient(sign: f64, dir: [f64; 2], recorded: [f64; 2]) -> f64 {
    if dir[0] * recorded[0] + dir[1] * recorded[1] < 0.0 {
        -sign
    } else {
        sign
    }
}

fn join_check(a: &Trajectory<4>, b: &Trajectory<4>, what: &str) -> Result<()> {
    let (ya, yb) = (a.eval(a.t1).unwrap(), b.eval(b.t1).unwrap());
    let d = (0..4).map(|k| (ya[k] - yb[k]).abs()).fold(0.0, f64::max);
    if d > JOIN_STATE_TOL {
        return Err(Error::NoConvergence(format!("{what} halves of the homoclinic orbit miss by {d:e}")));
    }
    Ok(())
}

/// Rebuilds the homoclinic orbit of `rec` from its two-sided solves and the
/// periodic orbit anchored at its symmetric point with `g = g(z)`.
pub fn channel_orbits(map: &SectionMap, setup: &HomoclinicSetup, rec: &HomoclinicChannelRecord) -> Result<ChannelOrbits> {
    let p = *map.params();
    let integ = &map.integ;
    let z = rec.state(map)?;

    let su = orient(rec.sign, setup.unstable.dir, rec.dir_u);
    let w_u = setup.unstable.point(su, rec.s_star).lift(&p)?;
    let far_u = integ.trajectory(&w_u, rec.junction_u)?;
    let near_u = integ.trajectory(&z, -(rec.t_u - rec.junction_u))?;
    join_check(&far_u, &near_u, "unstable")?;
    let unstable = AnchoredOrbit::new(vec![(0.0, near_u), (-rec.t_u, far_u)], -rec.t_u, 0.0)?;

    let ss = orient(rec.sign_s, setup.stable.dir, rec.dir_s);
    let w_s = setup.stable.point(ss, rec.s_stable).lift(&p)?;
    let far_s = integ.trajectory(&w_s, -rec.junction_s)?;
    let near_s = integ.trajectory(&z, rec.t_s - rec.junction_s)?;
    join_check(&far_s, &near_s, "stable")?;
    let stable = AnchoredOrbit::new(vec![(0.0, near_s), (rec.t_s, far_s)], 0.0, rec.t_s)?;

    let po = &setup.po;
    let seed = po.seed_state(&p)?;
    let half = integ.flow(&seed, 0.5 * po.T)?;
    let gz = unstable.g0;
    let pick = [seed, half]
        .into_iter()
        .filter_map(|s| coords::cart_to_delaunay(&s).ok().map(|d| (s, coords::wrap_pi(d.g - gz).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Domain("no symmetric point on the periodic orbit".into()))?;
    if pick.1 > 1e-6 {
        return domain(format!("no symmetric point of the periodic orbit has g = {gz} (closest differs by {})", pick.1));
    }
    let fwd = integ.trajectory(&pick.0, po.T)?;
    let bwd = integ.trajectory(&pick.0, -po.T)?;
    let po_orbit = AnchoredOrbit::new(vec![(0.0, fwd), (0.0, bwd)], -po.T, po.T)?;
    Ok(ChannelOrbits { po: po_orbit, unstable, stable, T: po.T })
}

/// Cumulative `int_0^sigma dt/dsigma'` along the periodic orbit (`lambda`) and
/// the homoclinic orbit (`gamma`), both zero at `sigma = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeShifts {
    pub sigma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl ChannelOrbits {
    /// `lambda~(sigma)`, extended by `lambda~(sigma + 2 pi m) = lambda~(sigma) - m T`.
    pub fn lambda_tilde(&self, sigma: f64) -> Result<f64> {
        let m = (sigma / (2.0 * PI)).round();
        Ok(self.po.tau_at_sigma(sigma - 2.0 * PI * m)? - m * self.T)
    }

    pub fn gamma_tilde(&self, sigma: f64) -> Result<f64> {
        if sigma == 0.0 {
            Ok(0.0)
        } else if sigma > 0.0 {
            self.unstable.tau_at_sigma(sigma)
        } else {
            self.stable.tau_at_sigma(sigma)
        }
    }

    pub fn time_shifts(&self, sigma: &[f64]) -> Result<TimeShifts> {
        let lambda = sigma.iter().map(|&s| self.lambda_tilde(s)).collect::<Result<Vec<_>>>()?;
        let gamma = sigma.iter().map(|&s| self.gamma_tilde(s)).collect::<Result<Vec<_>>>()?;
        Ok(TimeShifts { sigma: sigma.to_vec(), lambda, gamma })
    }
}

/// Per-`2 pi` pieces of one side of a homoclinic orbit.
#[derive(Debug, Clone)]
pub struct SideIntegrals {
    /// `+1` for `sigma -> +inf` (unstable side), `-1` for the stable side.
    pub side: f64,
    /// `tau_n` at `sigma = side 2 pi n`, `n = 1..`.
    pub taus: Vec<f64>,
    /// `int mu dG(Delta H_circ) dt` over piece `n`.
    pub q: Vec<f64>,
    /// `int Delta H_ell^{1,+} e^{i tau} dt` over piece `n`.
    pub h: Vec<Complex64>,
}

impl SideIntegrals {
    pub fn compute(orbit: &AnchoredOrbit, side: f64, p: &MassParams, cfg: &MelnikovConfig) -> Result<Self> {
        let taus = orbit.period_times(side, cfg.n_max)?;
        let mut q = Vec::with_capacity(taus.len());
        let mut h = Vec::with_capacity(taus.len());
        let mut a = 0.0;
        for &b in &taus {
            let (qi, hi) = integrate_orbit(orbit, a, b, p, cfg.quad)?;
            q.push(qi);
            h.push(hi);
            a = b;
        }
        Ok(Self { side, taus, q, h })
    }

    /// `alpha^side(N) = mu (int_0^{side 2 pi N} f dsigma + side 2 pi N nu_hat)`, `N = 0..`.
    pub fn alpha_partials(&self, period_term: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        let mut acc = 0.0;
        for (n, q) in self.q.iter().enumerate() {
            acc += q;
            out.push(acc + self.side * (n + 1) as f64 * period_term);
        }
        out
    }

    /// The same partial sums from the time identity `alpha^side(N) = tau_N + side N T`.
    pub fn alpha_partials_from_times(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0];
        out.extend(self.taus.iter().enumerate().map(|(n, tau)| tau + self.side * (n + 1) as f64 * t));
        out
    }

    /// Regularized tail `int_0^{side 2pi N} (h_gamma e^{i gamma~} - h_lambda e^{i(lambda~ + alpha)}) dt`,
    /// `N = 0..`, given `period = int_0^{-side T} h_lambda e^{it} dt`.
    pub fn b_partials(&self, alpha: f64, period: Complex64, t: f64) -> Vec<Complex64> {
        let shift = Complex64::from_polar(1.0, alpha);
        let mut out = vec![Complex64::new(0.0, 0.0)];
        let (mut gamma, mut lambda) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for (n, h) in self.h.iter().enumerate() {
            gamma += h;
            lambda += period * Complex64::from_polar(1.0, -self.side * n as f64 * t);
            out.push(gamma - shift * lambda);
        }
        out
    }
}

/// First `N` with `|x(N) - x(N+1)| <= tol`; returns `(N + 1, increment)`.
fn cauchy_stop<T: Copy, F: Fn(T, T) -> f64>(partials: &[T], tol: f64, dist: F) -> Option<(usize, f64)> {
    (1..partials.len().saturating_sub(1)).find_map(|n| {
        let d = dist(partials[n], partials[n + 1]);
        (d <= tol).then_some((n + 1, d))
    })
}

/// Converged `alpha` for one side, with the index used and the last increment.
pub fn converged_alpha(partials: &[f64], tol: f64, j: f64, side: f64) -> Result<(f64, usize, f64)> {
    match cauchy_stop(partials, tol, |a, b| (a - b).abs()) {
        Some((n, d)) => Ok((partials[n], n, d)),
        None => {
            let last = partials.len().saturating_sub(1);
            let inc = if last >= 1 { (partials[last] - partials[last - 1]).abs() } else { f64::NAN };
            Err(Error::NoConvergence(format!(
                "alpha partial sums (side {side}) at J = {j}: last increment {inc:e} after N = {last}"
            )))
        }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub J: f64,
    pub i: usize,
    pub alpha_plus: f64,
    /// Computed independently on the stable side.
    pub alpha_minus: f64,
    /// `2 alpha_plus`.
    pub alpha: f64,
    pub N_used: usize,
    pub tail_estimate: f64,
    pub N_minus: usize,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelnikovRecord {
    pub J: f64,
    pub i: usize,
    pub nu: f64,
    pub nu_hat: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub alpha: f64,
    pub B_in: Complex64,
    pub B_out: Complex64,
    pub B: Complex64,
    pub N_used: usize,
    pub tail_estimate: f64,
    pub N_minus: usize,
    /// Truncation indices of the two tails of `B_out` and their last increments.
    pub B_out_N: [usize; 2],
    pub B_out_tail: [f64; 2],
}

/// Everything needed for `alpha` and `B` of one channel.
#[derive(Debug, Clone)]
pub struct ChannelIntegrals {
    pub orbits: ChannelOrbits,
    pub freq: Frequency,
    pub plus: SideIntegrals,
    pub minus: SideIntegrals,
    /// `int_0^{-T} h_lambda e^{it} dt` and `int_0^{T} h_lambda e^{it} dt`.
    pub po_period: [Complex64; 2],
}

impl ChannelIntegrals {
    pub fn compute(map: &SectionMap, rec: &HomoclinicChannelRecord, cfg: &MelnikovConfig) -> Result<Self> {
        let p = *map.params();
        let setup = HomoclinicSetup::at_energy(map, rec.J, Some(rec.po_seed))?;
        let orbits = channel_orbits(map, &setup, rec)?;
        let t = orbits.T;
        let (q_fwd, h_fwd) = integrate_orbit(&orbits.po, 0.0, t, &p, cfg.quad)?;
        let (_, h_bwd) = integrate_orbit(&orbits.po, 0.0, -t, &p, cfg.quad)?;
        let freq = frequency_from(rec.J, t, q_fwd, p.mu);
        let plus = SideIntegrals::compute(&orbits.unstable, 1.0, &p, cfg)?;
        let minus = SideIntegrals::compute(&orbits.stable, -1.0, &p, cfg)?;
        Ok(Self { orbits, freq, plus, minus, po_period: [h_bwd, h_fwd] })
    }

    pub fn alpha(&self, rec: &HomoclinicChannelRecord, cfg: &MelnikovConfig) -> Result<AlphaRecord> {
        let pt = self.freq.period_term;
        let (ap, n, tail) = converged_alpha(&self.plus.alpha_partials(pt), cfg.cauchy_tol, rec.J, 1.0)?;
        let (am, nm, _) = converged_alpha(&self.minus.alpha_partials(pt), cfg.cauchy_tol, rec.J, -1.0)?;
        Ok(AlphaRecord {
            J: rec.J,
            i: rec.i,
            alpha_plus: ap,
            alpha_minus: am,
            alpha: 2.0 * ap,
            N_used: n,
            tail_estimate: tail,
            N_minus: nm,
        })
    }

    /// `B^in = i mu (1 - e^{i alpha}) / (1 - e^{i 2 pi nu}) int_0^{2pi} (h/den) e^{i lambda~} dsigma`.
    pub fn b_in(&self, alpha: f64, mu: f64) -> Result<Complex64> {
        let i = Complex64::i();
        let den = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * self.freq.nu);
        if den.norm() < RESONANT_MIN {
            return Err(Error::ResonantDenominator(den.norm()));
        }
        let num = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, alpha);
        Ok(i * mu * num / den * self.po_period[0])
    }

    /// `B^out` from the two regularized tails; returns the value and, per side,
    /// the truncation index and the last increment.
    pub fn b_out(&self, alpha: &AlphaRecord, mu: f64, tol: f64) -> Result<(Complex64, [usize; 2], [f64; 2])> {
        let i = Complex64::i();
        let t = self.orbits.T;
        let mut total = Complex64::new(0.0, 0.0);
        let mut ns = [0; 2];
        let mut tails = [0.0; 2];
        for (k, (side, a, period)) in [(&self.plus, alpha.alpha_plus, self.po_period[0]), (&self.minus, alpha.alpha_minus, self.po_period[1])]
            .into_iter()
            .enumerate()
        {
            let partials = side.b_partials(a, period, t);
            let (n, d) = cauchy_stop(&partials, tol, |x, y| mu * (x - y).norm()).ok_or_else(|| {
                Error::NoConvergence(format!("B_out tail (side {}) at J = {} after N = {}", side.side, alpha.J, partials.len() - 1))
            })?;
            total += -side.side * i * mu * partials[n];
            ns[k] = n;
            tails[k] = d;
        }
        Ok((total, ns, tails))
    }
}

/// `alpha_i` of one channel.
pub fn alpha(map: &SectionMap, rec: &HomoclinicChannelRecord, cfg: &MelnikovConfig) -> Result<AlphaRecord> {
    ChannelIntegrals::compute(map, rec, cfg)?.alpha(rec, cfg)
}

/// The full record of one channel: `nu`, `alpha`, `B^in`, `B^out` and `B`.
pub fn melnikov(map: &SectionMap, rec: &HomoclinicChannelRecord, cfg: &MelnikovConfig) -> Result<MelnikovRecord> {
    let ci = ChannelIntegrals::compute(map, rec, cfg)?;
    let a = ci.alpha(rec, cfg)?;
    let b_in = ci.b_in(a.alpha, map.params().mu)?;
    let (b_out, b_n, b_tail) = ci.b_out(&a, map.params().mu, cfg.cauchy_tol)?;
    Ok(MelnikovRecord {
        J: rec.J,
        i: rec.i,
        nu: ci.freq.nu,
        nu_hat: ci.freq.nu_hat,
        alpha_plus: a.alpha_plus,
        alpha_minus: a.alpha_minus,
        alpha: a.alpha,
        B_in: b_in,
        B_out: b_out,
        B: b_in + b_out,
        N_used: a.N_used,
        tail_estimate: a.tail_estimate,
        N_minus: a.N_minus,
        B_out_N: b_n,
        B_out_tail: b_tail,
    })
}

/// `sigma_0^2 = 2 E|B_w - E[B] (1 - e^{i beta_w}) / (1 - E[e^{i beta}])|^2` with
/// `beta_w = theta + alpha_w` and `E` the mean over the two symbols.
pub fn sigma0_sq(b: [Complex64; 2], alpha: [f64; 2], theta: f64) -> Result<f64> {
    let one = Complex64::new(1.0, 0.0);
    let e = [Complex64::from_polar(1.0, theta + alpha[0]), Complex64::from_polar(1.0, theta + alpha[1])];
    let mean_b = 0.5 * (b[0] + b[1]);
    let den = one - 0.5 * (e[0] + e[1]);
    if den.norm() < DEGENERATE_MIN {
        return domain(format!("degenerate variance node at theta = {theta} (|1 - E e^(i beta)| = {:e})", den.norm()));
    }
    let mean_sq = (0..2).map(|w| (b[w] - mean_b * (one - e[w]) / den).norm_sqr()).sum::<f64>() / 2.0;
    Ok(2.0 * mean_sq)
}

/// `sigma_0^2` on a `(J, theta)` grid; `None` marks degenerate nodes.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSurface {
    pub pair: (usize, usize),
    pub J: Vec<f64>,
    pub theta: Vec<f64>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl VarianceSurface {
    /// Minimum over `theta` at each energy, over the non-degenerate nodes.
    pub fn min_over_theta(&self) -> Vec<f64> {
        self.values.iter().map(|row| row.iter().flatten().copied().fold(f64::INFINITY, f64::min)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "J,theta,sigma0_sq")?;
        for (j, row) in self.J.iter().zip(&self.values) {
            for (t, v) in self.theta.iter().zip(row) {
                match v {
                    Some(v) => writeln!(w, "{j},{t},{v}")?,
                    None => writeln!(w, "{j},{t},nan")?,
                }
            }
        }
        Ok(())
    }
}

/// Records of two channels at the same energies, in matching order.
fn paired<'a>(a: &'a [MelnikovRecord], b: &'a [MelnikovRecord]) -> Result<Vec<(&'a MelnikovRecord, &'a MelnikovRecord)>> {
    let mut out = Vec::new();
    for ra in a {
        let rb = b
            .iter()
            .find(|r| (r.J - ra.J).abs() < 1e-12)
            .ok_or_else(|| Error::Domain(format!("channel {} has no record at J = {}", b.first().map_or(0, |r| r.i), ra.J)))?;
        out.push((ra, rb));
    }
    Ok(out)
}

pub fn sigma0_surface(a: &[MelnikovRecord], b: &[MelnikovRecord], theta: &[f64]) -> Result<VarianceSurface> {
    let pairs = paired(a, b)?;
    let values = pairs
        .iter()
        .map(|(ra, rb)| theta.iter().map(|&t| sigma0_sq([ra.B, rb.B], [ra.alpha, rb.alpha], t).ok()).collect())
        .collect();
    let pair = (a.first().map_or(0, |r| r.i), b.first().map_or(0, |r| r.i));
    Ok(VarianceSurface { pair, J: pairs.iter().map(|(r, _)| r.J).collect(), theta: theta.to_vec(), values })
}

/// The three conditions at one energy, with margins.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ansatz2Node {
    pub J: f64,
    /// `ALPHA_BOUND mu - max |alpha_i|`.
    pub alpha_margin: f64,
    pub alpha_ok: bool,
    /// `|alpha_a - alpha_b|`.
    pub separation: f64,
    pub separation_ok: bool,
    /// Minimum of `sigma_0^2` over `theta`.
    pub sigma_min: f64,
    pub sigma_ok: bool,
}

pub fn ansatz2_check(a: &[MelnikovRecord], b: &[MelnikovRecord], theta: &[f64], mu: f64) -> Result<Vec<Ansatz2Node>> {
    let surface = sigma0_surface(a, b, theta)?;
    let mins = surface.min_over_theta();
    Ok(paired(a, b)?
        .into_iter()
        .zip(mins)
        .map(|((ra, rb), sigma_min)| {
            let alpha_margin = ALPHA_BOUND * mu - ra.alpha.abs().max(rb.alpha.abs());
            let separation = (ra.alpha - rb.alpha).abs();
            Ansatz2Node {
                J: ra.J,
                alpha_margin,
                alpha_ok: alpha_margin >= 0.0,
                separation,
                separation_ok: separation > ALPHA_SEPARATION,
                sigma_min,
                sigma_ok: sigma_min.is_finite() && sigma_min > 0.0,
            }
        })
        .collect())
}

pub fn write_melnikov_csv<W: Write>(records: &[MelnikovRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "J,i,nu,alpha,Re_Bin,Im_Bin,Re_Bout,Im_Bout,Re_B,Im_B,N_used")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.J, r.i, r.nu, r.alpha, r.B_in.re, r.B_in.im, r.B_out.re, r.B_out.im, r.B.re, r.B.im, r.N_used
        )?;
    }
    Ok(())
}
