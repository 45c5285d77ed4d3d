//! Leading-order lamination map driven by the Melnikov data of a channel pair:
//!
//! `I' = I + e0 (B_w(I) e^{is} + conj)`, `s' = s + theta + alpha_w(I) mod 2 pi`,
//!
//! with `w` a fair Bernoulli symbol. Ensembles of the map estimate the
//! diffusion coefficient that `sigma_0^2` predicts.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::melnikov::{self, MelnikovRecord, ALPHA_BOUND};

/// Fraction of stopped trajectories above which the range is flagged as too small.
pub const STOPPED_WARN: f64 = 0.1;

/// Natural cubic spline through `(x_k, y_k)`; evaluation outside
/// `[x_0, x_last]` is refused.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    /// `y + c1 t + c2 t^2 + c3 t^3` on `[x_k, x_{k+1}]`, `t = x - x_k`.
    coef: Vec<[f64; 4]>,
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::Config(format!("spline needs at least two nodes with values (got {} and {})", n, y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("spline nodes must increase strictly".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        // second derivatives m, natural ends m_0 = m_{n-1} = 0
        let mut m = vec![0.0; n];
        if n > 2 {
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                diag[j] = 2.0 * (h[j] + h[j + 1]);
                rhs[j] = 6.0 * ((y[j + 2] - y[j + 1]) / h[j + 1] - (y[j + 1] - y[j]) / h[j]);
            }
            for j in 1..k {
                let w = h[j] / diag[j - 1];
                diag[j] -= w * h[j];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
            }
        }
        let coef = (0..n - 1)
            .map(|k| {
                let c1 = (y[k + 1] - y[k]) / h[k] - h[k] * (2.0 * m[k] + m[k + 1]) / 6.0;
                [y[k], c1, 0.5 * m[k], (m[k + 1] - m[k]) / (6.0 * h[k])]
            })
            .collect();
        Ok(Self { x: x.to_vec(), coef })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    fn interval(&self, v: f64) -> Option<usize> {
        let (lo, hi) = self.range();
        if !(v >= lo && v <= hi) {
            return None;
        }
        Some(self.x.partition_point(|&x| x <= v).clamp(1, self.x.len() - 1) - 1)
    }

    fn eval_in(&self, k: usize, v: f64) -> f64 {
        let t = v - self.x[k];
        let c = &self.coef[k];
        c[0] + t * (c[1] + t * (c[2] + t * c[3]))
    }

    pub fn eval(&self, v: f64) -> Option<f64> {
        self.interval(v).map(|k| self.eval_in(k, v))
    }

    /// Derivative at `v`.
    pub fn slope(&self, v: f64) -> Option<f64> {
        self.interval(v).map(|k| {
            let t = v - self.x[k];
            let c = &self.coef[k];
            c[1] + t * (2.0 * c[2] + 3.0 * t * c[3])
        })
    }
}

/// Tabulated Melnikov data of two channels and the map parameters.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelData {
    /// Channels carrying symbols 0 and 1.
    pub pair: (usize, usize),
    pub J: Vec<f64>,
    pub B: [Vec<Complex64>; 2],
    pub alpha: [Vec<f64>; 2],
    pub theta: f64,
    pub e0: f64,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct SkewShiftModel {
    pub data: ModelData,
    /// `[Re B, Im B, alpha]` per symbol.
    splines: [[CubicSpline; 3]; 2],
}

/// Point of the map: action `I` and angle `s`.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapState {
    pub I: f64,
    pub s: f64,
}

#[allow(non_snake_case)]
impl SkewShiftModel {
    pub fn new(data: ModelData) -> Result<Self> {
        if !(data.e0 >= 0.0) || !data.theta.is_finite() {
            return Err(Error::Config(format!("e0 = {} and theta = {} must be finite with e0 >= 0", data.e0, data.theta)));
        }
        let build = |w: usize| -> Result<[CubicSpline; 3]> {
            let re: Vec<f64> = data.B[w].iter().map(|b| b.re).collect();
            let im: Vec<f64> = data.B[w].iter().map(|b| b.im).collect();
            Ok([CubicSpline::new(&data.J, &re)?, CubicSpline::new(&data.J, &im)?, CubicSpline::new(&data.J, &data.alpha[w])?])
        };
        let splines = [build(0)?, build(1)?];
        Ok(Self { data, splines })
    }

    /// Model from the records of two channels; energies present for both are used.
    pub fn from_records(a: &[MelnikovRecord], b: &[MelnikovRecord], theta: f64, e0: f64, mu: f64) -> Result<Self> {
        let mut rows: Vec<(&MelnikovRecord, &MelnikovRecord)> =
            a.iter().filter_map(|ra| b.iter().find(|rb| (rb.J - ra.J).abs() < 1e-12).map(|rb| (ra, rb))).collect();
        rows.sort_by(|x, y| x.0.J.total_cmp(&y.0.J));
        let pair = (a.first().map_or(0, |r| r.i), b.first().map_or(0, |r| r.i));
        Self::new(ModelData {
            pair,
            J: rows.iter().map(|r| r.0.J).collect(),
            B: [rows.iter().map(|r| r.0.B).collect(), rows.iter().map(|r| r.1.B).collect()],
            alpha: [rows.iter().map(|r| r.0.alpha).collect(), rows.iter().map(|r| r.1.alpha).collect()],
            theta,
            e0,
            mu,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        self.splines[0][0].range()
    }

    /// `B_w(I)` and `alpha_w(I)`.
    pub fn coefficients(&self, I: f64, w: usize) -> Result<(Complex64, f64)> {
        let sp = &self.splines[w];
        let (lo, hi) = self.range();
        let out = || Error::OutOfRange { value: I, lo, hi };
        let re = sp[0].eval(I).ok_or_else(out)?;
        let im = sp[1].eval(I).ok_or_else(out)?;
        let a = sp[2].eval(I).ok_or_else(out)?;
        Ok((Complex64::new(re, im), a))
    }

    /// `|alpha_w| <= 100 mu` at every node.
    pub fn alpha_bound_holds(&self) -> bool {
        self.data.alpha.iter().flatten().all(|a| a.abs() <= ALPHA_BOUND * self.data.mu)
    }

    pub fn max_b(&self) -> f64 {
        self.data.B.iter().flatten().map(|b| b.norm()).fold(0.0, f64::max)
    }

    /// Largest `|dB_w/dI|` on a fine sample of the range.
    pub fn max_b_slope(&self) -> f64 {
        let (lo, hi) = self.range();
        let mut worst: f64 = 0.0;
        for k in 0..=400 {
            let v = lo + (hi - lo) * k as f64 / 400.0;
            for sp in &self.splines {
                let d = Complex64::new(sp[0].slope(v).unwrap(), sp[1].slope(v).unwrap());
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    /// `sigma_0^2(I, theta)` from the interpolated data.
    pub fn sigma0_sq(&self, I: f64) -> Result<f64> {
        let (b0, a0) = self.coefficients(I, 0)?;
        let (b1, a1) = self.coefficients(I, 1)?;
        melnikov::sigma0_sq([b0, b1], [a0, a1], self.data.theta)
    }

    /// SHA-256 of the JSON form of the data.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.data).expect("model data serializes");
        format!("{:x}", Sha256::digest(&json))
    }
}

/// One step of the map with symbol `w`; the image must stay in the tabulated range.
pub fn step(model: &SkewShiftModel, state: MapState, w: usize) -> Result<MapState> {
    let (b, a) = model.coefficients(state.I, w)?;
    let kick = 2.0 * (b * Complex64::from_polar(1.0, state.s)).re;
    let next = state.I + model.data.e0 * kick;
    let (lo, hi) = model.range();
    if !(next >= lo && next <= hi) {
        return Err(Error::OutOfRange { value: next, lo, hi });
    }
    Ok(MapState { I: next, s: (state.s + model.data.theta + a).rem_euclid(2.0 * PI) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Number of equally spaced checkpoints at which `I_n - I_0` is recorded.
    pub checkpoints: usize,
    /// Smallest checkpoint step entering the linear fit of the variance.
    pub fit_from: usize,
    pub bootstrap: usize,
}

impl EnsembleConfig {
    pub fn new(n_traj: usize, n_steps: usize, seed: u64) -> Self {
        Self { n_traj, n_steps, seed, checkpoints: 100, fit_from: n_steps / 100, bootstrap: 1000 }
    }
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub n_steps: usize,
    /// Checkpoint steps `n`.
    pub steps: Vec<usize>,
    /// Mean of `I_n - I_0` at each checkpoint.
    pub mean: Vec<f64>,
    /// Variance of `I_n - I_0` at each checkpoint.
    pub variance: Vec<f64>,
    /// `Var(I_N - I_0) / N`.
    pub D_hat: f64,
    /// Bootstrap 95% percentile interval of `D_hat`.
    pub ci: (f64, f64),
    pub stopped: usize,
    pub range_warning: bool,
    /// Least-squares line `variance = intercept + slope n` over the fitted checkpoints.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Generator of trajectory `k`: stream `k` of the master seed.
fn trajectory_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Largest phase increment `alpha - alpha_cached` handled by the series for `e^{i delta}`.
const PHASE_SERIES_MAX: f64 = 1e-3;

/// `e^{i delta}` for `|delta| <= PHASE_SERIES_MAX`, to rounding.
#[inline]
fn small_phasor(d: f64) -> Complex64 {
    let d2 = d * d;
    Complex64::new(1.0 - d2 * (0.5 - d2 / 24.0), d * (1.0 - d2 * (1.0 / 6.0 - d2 / 120.0)))
}

/// Trajectories advanced together by one kernel call.
const LANES: usize = 8;

#[derive(Clone)]
struct Lane {
    i: f64,
    z: Complex64,
    k: usize,
    /// Per symbol: cached alpha and `e^{i(theta + alpha)}`.
    cache: [(f64, Complex64); 2],
    bits: u64,
    left: u32,
    rng: ChaCha8Rng,
    stopped: bool,
    out: Vec<f64>,
}

/// Displacements `I_n - I_0` at the checkpoints and whether each orbit stopped,
/// for trajectories `first..first + count` of `seed`. The phase is carried as
/// the unit phasor `e^{is}`; a stopped orbit keeps its last value.
#[allow(non_snake_case)]
fn run_block(model: &SkewShiftModel, I0: f64, s0: f64, steps: &[usize], seed: u64, first: usize, count: usize) -> Vec<(Vec<f64>, bool)> {
    let x = &model.splines[0][0].x;
    // coefficients [symbol][Re B, Im B, alpha] per interval, side by side
    let table: Vec<[[[f64; 4]; 3]; 2]> = (0..x.len() - 1)
        .map(|k| std::array::from_fn(|w| std::array::from_fn(|q| model.splines[w][q].coef[k])))
        .collect();
    let (lo, hi) = model.range();
    let e0 = model.data.e0;
    let theta = model.data.theta;
    let k0 = model.splines[0][0].interval(I0).unwrap_or(0);
    let mut lanes: Vec<Lane> = (0..count)
        .map(|j| Lane {
            i: I0,
            z: Complex64::from_polar(1.0, s0),
            k: k0,
            cache: [(f64::INFINITY, Complex64::new(1.0, 0.0)); 2],
            bits: 0,
            left: 0,
            rng: trajectory_rng(seed, first + j),
            stopped: false,
            out: Vec::with_capacity(steps.len()),
        })
        .collect();
    let mut n = 0;
    for &target in steps {
        while n < target {
            for l in lanes.iter_mut() {
                if l.stopped {
                    continue;
                }
                if l.left == 0 {
                    l.bits = l.rng.next_u64();
                    l.left = 64;
                }
                let w = (l.bits & 1) as usize;
                l.bits >>= 1;
                l.left -= 1;
                while l.k > 0 && l.i < x[l.k] {
                    l.k -= 1;
                }
                while l.k + 2 < x.len() && l.i >= x[l.k + 1] {
                    l.k += 1;
                }
                let t = l.i - x[l.k];
                let c = &table[l.k][w];
                let horner = |p: &[f64; 4]| p[0] + t * (p[1] + t * (p[2] + t * p[3]));
                let (br, bi, a) = (horner(&c[0]), horner(&c[1]), horner(&c[2]));
                let next = l.i + e0 * 2.0 * (br * l.z.re - bi * l.z.im);
                if !(next >= lo && next <= hi) {
                    l.stopped = true;
                    continue;
                }
                l.i = next;
                let slot = &mut l.cache[w];
                let d = a - slot.0;
                if d.abs() > PHASE_SERIES_MAX {
                    *slot = (a, Complex64::from_polar(1.0, theta + a));
                    l.z *= slot.1;
                } else {
                    l.z *= slot.1 * small_phasor(d);
                }
            }
            n += 1;
            if n % 1024 == 0 {
                for l in lanes.iter_mut() {
                    l.z /= l.z.norm();
                }
            }
        }
        for l in lanes.iter_mut() {
            l.out.push(l.i - I0);
        }
    }
    lanes.into_iter().map(|l| (l.out, l.stopped)).collect()
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

fn mean_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var)
}

/// Seeded ensemble from `(I0, s0)` with independent fair symbols.
#[allow(non_snake_case)]
pub fn run_ensemble(model: &SkewShiftModel, I0: f64, s0: f64, cfg: &EnsembleConfig) -> Result<EnsembleStats> {
    if cfg.n_traj < 2 || cfg.n_steps == 0 || cfg.checkpoints == 0 {
        return Err(Error::Config("an ensemble needs at least two trajectories, one step and one checkpoint".into()));
    }
    let (lo, hi) = model.range();
    if !(I0 > lo && I0 < hi) {
        return Err(Error::OutOfRange { value: I0, lo, hi });
    }
    let mut steps: Vec<usize> = (1..=cfg.checkpoints).map(|c| c * cfg.n_steps / cfg.checkpoints).filter(|&n| n > 0).collect();
    steps.dedup();
    let runs: Vec<(Vec<f64>, bool)> = (0..cfg.n_traj.div_ceil(LANES))
        .into_par_iter()
        .flat_map_iter(|b| {
            let first = b * LANES;
            run_block(model, I0, s0, &steps, cfg.seed, first, LANES.min(cfg.n_traj - first))
        })
        .collect();
    let stopped = runs.iter().filter(|r| r.1).count();
    let (mut mean, mut variance) = (Vec::with_capacity(steps.len()), Vec::with_capacity(steps.len()));
    for c in 0..steps.len() {
        let (m, v) = mean_var(runs.iter().map(|r| r.0[c]));
        mean.push(m);
        variance.push(v);
    }
    let n_final = *steps.last().unwrap() as f64;
    let d_hat = variance.last().unwrap() / n_final;

    let finals: Vec<f64> = runs.iter().map(|r| *r.0.last().unwrap()).collect();
    let mut rng = trajectory_rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15, 0);
    let mut boot: Vec<f64> = (0..cfg.bootstrap)
        .map(|_| {
            let sample: Vec<f64> = (0..finals.len()).map(|_| finals[rng.gen_range(0..finals.len())]).collect();
            mean_var(sample.iter().copied()).1 / n_final
        })
        .collect();
    boot.sort_by(|a, b| a.total_cmp(b));
    let ci = if boot.is_empty() {
        (d_hat, d_hat)
    } else {
        let at = |q: f64| boot[((q * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (at(0.025), at(0.975))
    };

    let fit: Vec<usize> = (0..steps.len()).filter(|&c| steps[c] >= cfg.fit_from).collect();
    let (slope, intercept, r2) = if fit.len() >= 2 {
        let xs: Vec<f64> = fit.iter().map(|&c| steps[c] as f64).collect();
        let ys: Vec<f64> = fit.iter().map(|&c| variance[c]).collect();
        linear_fit(&xs, &ys)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };

    Ok(EnsembleStats {
        n_traj: cfg.n_traj,
        n_steps: cfg.n_steps,
        steps,
        mean,
        variance,
        D_hat: d_hat,
        ci,
        stopped,
        range_warning: stopped as f64 > STOPPED_WARN * cfg.n_traj as f64,
        slope,
        intercept,
        r2,
    })
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewShiftReport {
    pub model_hash: String,
    pub seed: u64,
    pub n_traj: usize,
    pub n_steps: usize,
    pub I0: f64,
    pub theta: f64,
    pub e0: f64,
    pub D_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub sigma0_prediction: f64,
    /// `D_hat / (e0^2 sigma0_prediction)`.
    pub ratio: f64,
    pub r2: f64,
    pub stopped: usize,
    pub range_warning: bool,
}

/// Ensemble statistics compared with `e0^2 sigma_0^2(I0, theta)`.
#[allow(non_snake_case)]
pub fn validate(model: &SkewShiftModel, I0: f64, s0: f64, cfg: &EnsembleConfig) -> Result<(SkewShiftReport, EnsembleStats)> {
    let stats = run_ensemble(model, I0, s0, cfg)?;
    let sigma = model.sigma0_sq(I0)?;
    let e0 = model.data.e0;
    let report = SkewShiftReport {
        model_hash: model.hash(),
        seed: cfg.seed,
        n_traj: cfg.n_traj,
        n_steps: cfg.n_steps,
        I0,
        theta: model.data.theta,
        e0,
        D_hat: stats.D_hat,
        ci_low: stats.ci.0,
        ci_high: stats.ci.1,
        sigma0_prediction: sigma,
        ratio: stats.D_hat / (e0 * e0 * sigma),
        r2: stats.r2,
        stopped: stats.stopped,
        range_warning: stats.range_warning,
    };
    Ok((report, stats))
}
