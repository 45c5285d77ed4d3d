//! Adaptive Dormand–Prince 8(5,3) stepper with lazily built dense output.

use super::tableau::{A, B, C, D, E3, E5, N_EXTENDED, N_STAGES};
use super::{IntegratorConfig, OdeSystem};
use crate::error::{Error, Result};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

/// Degree-7 interpolant over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseSegment<const N: usize> {
    pub t_old: f64,
    pub t_new: f64,
    y_old: [f64; N],
    coeffs: [[f64; N]; 7],
}

impl<const N: usize> DenseSegment<N> {
    pub fn eval(&self, t: f64) -> [f64; N] {
        let h = self.t_new - self.t_old;
        let x = (t - self.t_old) / h;
        let mut y = [0.0; N];
        for (i, f) in self.coeffs.iter().rev().enumerate() {
            let m = if i % 2 == 0 { x } else { 1.0 - x };
            for k in 0..N {
                y[k] = (y[k] + f[k]) * m;
            }
        }
        for k in 0..N {
            y[k] += self.y_old[k];
        }
        y
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.t_new >= self.t_old { (self.t_old, self.t_new) } else { (self.t_new, self.t_old) };
        t >= lo && t <= hi
    }
}

pub struct Stepper<'a, const N: usize, S: OdeSystem<N>> {
    sys: &'a S,
    cfg: IntegratorConfig,
    dir: f64,
    t: f64,
    y: [f64; N],
    f: [f64; N],
    t_old: f64,
    y_old: [f64; N],
    f_old: [f64; N],
    h_abs: f64,
    h_prev: f64,
    k: [[f64; N]; N_EXTENDED],
    extended: bool,
    /// Prescribed step ends, taken without error control while available.
    schedule: Vec<f64>,
    next_node: usize,
    pub n_steps: usize,
    pub n_rejected: usize,
    pub n_evals: usize,
}

fn rms<const N: usize>(v: &[f64; N], scale: &[f64; N]) -> f64 {
    let s: f64 = v.iter().zip(scale).map(|(a, b)| (a / b).powi(2)).sum();
    (s / N as f64).sqrt()
}

impl<'a, const N: usize, S: OdeSystem<N>> Stepper<'a, N, S> {
    /// `dir` is the sign of time progression.
    pub fn new(sys: &'a S, cfg: IntegratorConfig, t0: f64, y0: [f64; N], dir: f64) -> Result<Self> {
        cfg.validate()?;
        sys.check(t0, &y0)?;
        let f0 = sys.eval(t0, &y0);
        let dir = if dir < 0.0 { -1.0 } else { 1.0 };
        let mut st = Self {
            sys,
            cfg,
            dir,
            t: t0,
            y: y0,
            f: f0,
            t_old: t0,
            y_old: y0,
            f_old: f0,
            h_abs: 0.0,
            h_prev: 0.0,
            k: [[0.0; N]; N_EXTENDED],
            extended: false,
            schedule: Vec::new(),
            next_node: 0,
            n_steps: 0,
            n_rejected: 0,
            n_evals: 1,
        };
        st.h_abs = st.initial_step().min(cfg.max_step);
        Ok(st)
    }

    fn scale(&self, a: &[f64; N], b: &[f64; N]) -> [f64; N] {
        let mut s = [0.0; N];
        for k in 0..N {
            s[k] = self.cfg.abs_tol + a[k].abs().max(b[k].abs()) * self.cfg.rel_tol;
        }
        s
    }

    fn initial_step(&mut self) -> f64 {
        let scale = self.scale(&self.y, &self.y);
        let d0 = rms(&self.y, &scale);
        let d1 = rms(&self.f, &scale);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let mut y1 = self.y;
        for k in 0..N {
            y1[k] += h0 * self.dir * self.f[k];
        }
        let f1 = self.sys.eval(self.t + h0 * self.dir, &y1);
        self.n_evals += 1;
        let mut df = [0.0; N];
        for k in 0..N {
            df[k] = f1[k] - self.f[k];
        }
        let d2 = rms(&df, &scale) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64; N] {
        &self.y
    }

    pub fn f(&self) -> &[f64; N] {
        &self.f
    }

    pub fn t_old(&self) -> f64 {
        self.t_old
    }

    pub fn y_old(&self) -> &[f64; N] {
        &self.y_old
    }

    pub fn direction(&self) -> f64 {
        self.dir
    }

    pub fn system(&self) -> &'a S {
        self.sys
    }

    /// Fills the 12 stages and returns the 8th-order solution at `t + h`.
    fn stages(sys: &S, t: f64, y: &[f64; N], f: &[f64; N], h: f64, k: &mut [[f64; N]; N_EXTENDED]) -> [f64; N] {
        k[0] = *f;
        for s in 1..N_STAGES {
            let mut ys = *y;
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = A[s][j];
                if a != 0.0 {
                    for m in 0..N {
                        ys[m] += h * a * kj[m];
                    }
                }
            }
            k[s] = sys.eval(t + C[s] * h, &ys);
        }
        let mut y_new = *y;
        for (j, kj) in k.iter().enumerate().take(N_STAGES) {
            let b = B[j];
            if b != 0.0 {
                for m in 0..N {
                    y_new[m] += h * b * kj[m];
                }
            }
        }
        y_new
    }

    /// Single untimed step from `(t, y)` with step `h`; used for event polishing.
    pub fn raw_step(&self, t: f64, y: &[f64; N], h: f64) -> [f64; N] {
        let f = self.sys.eval(t, y);
        let mut k = [[0.0; N]; N_EXTENDED];
        Self::stages(self.sys, t, y, &f, h, &mut k)
    }

    fn error_norm(k: &[[f64; N]; N_EXTENDED], h: f64, scale: &[f64; N]) -> f64 {
        let mut e5 = 0.0;
        let mut e3 = 0.0;
        for m in 0..N {
            let mut a5 = 0.0;
            let mut a3 = 0.0;
            for j in 0..=N_STAGES {
                a5 += k[j][m] * E5[j];
                a3 += k[j][m] * E3[j];
            }
            e5 += (a5 / scale[m]).powi(2);
            e3 += (a3 / scale[m]).powi(2);
        }
        let denom = e5 + 0.01 * e3;
        if denom == 0.0 {
            return 0.0;
        }
        h.abs() * e5 / (denom * N as f64).sqrt()
    }

    /// Replays a step sequence: node times strictly monotone in the direction
    /// of integration, starting after the current time.
    pub fn with_schedule(mut self, nodes: Vec<f64>) -> Self {
        self.schedule = nodes;
        self.next_node = 0;
        self
    }

    fn scheduled_step(&mut self, t_bound: f64) -> Result<bool> {
        let Some(&node) = self.schedule.get(self.next_node) else {
            return Ok(false);
        };
        let t_new = if (node - t_bound) * self.dir > 0.0 { t_bound } else { node };
        let h = t_new - self.t;
        if h * self.dir <= 0.0 {
            self.next_node += 1;
            return self.scheduled_step(t_bound);
        }
        let y_new = Self::stages(self.sys, self.t, &self.y, &self.f, h, &mut self.k);
        self.n_evals += N_STAGES;
        if !y_new.iter().all(|v| v.is_finite()) {
            return Err(Error::StepUnderflow { t: self.t, h: h.abs() });
        }
        let f_new = self.sys.eval(t_new, &y_new);
        self.k[N_STAGES] = f_new;
        self.sys.check(t_new, &y_new)?;
        self.h_prev = h;
        self.t_old = self.t;
        self.y_old = self.y;
        self.f_old = self.f;
        self.t = t_new;
        self.y = y_new;
        self.f = f_new;
        self.h_abs = h.abs();
        self.extended = false;
        self.n_steps += 1;
        if t_new == node {
            self.next_node += 1;
        }
        Ok(true)
    }

    /// Advances by one accepted step without passing `t_bound`.
    pub fn step(&mut self, t_bound: f64) -> Result<()> {
        if self.scheduled_step(t_bound)? {
            return Ok(());
        }
        let min_step = 10.0 * f64::EPSILON * self.t.abs().max(1e-300);
        let mut rejected = false;
        loop {
            if self.h_abs < min_step.max(self.cfg.min_step) {
                return Err(Error::StepUnderflow { t: self.t, h: self.h_abs });
            }
            let mut h = self.h_abs.min(self.cfg.max_step) * self.dir;
            let mut t_new = self.t + h;
            if (t_new - t_bound) * self.dir > 0.0 {
                t_new = t_bound;
            }
            h = t_new - self.t;
            let h_abs = h.abs();
            let y_new = Self::stages(self.sys, self.t, &self.y, &self.f, h, &mut self.k);
            self.n_evals += N_STAGES - 1;
            let finite = y_new.iter().all(|v| v.is_finite());
            let f_new = if finite {
                self.n_evals += 1;
                self.sys.eval(t_new, &y_new)
            } else {
                [f64::NAN; N]
            };
            self.k[N_STAGES] = f_new;
            let scale = self.scale(&self.y, &y_new);
            let err = if finite && f_new.iter().all(|v| v.is_finite()) {
                Self::error_norm(&self.k, h, &scale)
            } else {
                f64::INFINITY
            };
            if err < 1.0 {
                let mut factor = if err == 0.0 { MAX_FACTOR } else { MAX_FACTOR.min(SAFETY * err.powf(ERROR_EXPONENT)) };
                if rejected {
                    factor = factor.min(1.0);
                }
                self.sys.check(t_new, &y_new)?;
                self.h_prev = h;
                self.t_old = self.t;
                self.y_old = self.y;
                self.f_old = self.f;
                self.t = t_new;
                self.y = y_new;
                self.f = f_new;
                self.h_abs = h_abs * factor;
                self.extended = false;
                self.n_steps += 1;
                return Ok(());
            }
            let factor = if err.is_finite() { MIN_FACTOR.max(SAFETY * err.powf(ERROR_EXPONENT)) } else { 0.25 };
            self.h_abs = h_abs * factor;
            rejected = true;
            self.n_rejected += 1;
        }
    }

    /// Interpolant over the last accepted step.
    pub fn dense(&mut self) -> DenseSegment<N> {
        let h = self.h_prev;
        if !self.extended {
            for s in N_STAGES + 1..N_EXTENDED {
                let mut ys = self.y_old;
                for j in 0..s {
                    let a = A[s][j];
                    if a != 0.0 {
                        for m in 0..N {
                            ys[m] += h * a * self.k[j][m];
                        }
                    }
                }
                self.k[s] = self.sys.eval(self.t_old + C[s] * h, &ys);
                self.n_evals += 1;
            }
            self.extended = true;
        }
        let mut coeffs = [[0.0; N]; 7];
        for m in 0..N {
            let dy = self.y[m] - self.y_old[m];
            coeffs[0][m] = dy;
            coeffs[1][m] = h * self.f_old[m] - dy;
            coeffs[2][m] = 2.0 * dy - h * (self.f[m] + self.f_old[m]);
            for (r, drow) in D.iter().enumerate() {
                let mut acc = 0.0;
                for (j, d) in drow.iter().enumerate() {
                    acc += d * self.k[j][m];
                }
                coeffs[3 + r][m] = h * acc;
            }
        }
        DenseSegment { t_old: self.t_old, t_new: self.t, y_old: self.y_old, coeffs }
    }
}
