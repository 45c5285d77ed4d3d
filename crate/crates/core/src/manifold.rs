//! One-dimensional invariant manifolds of the resonant orbit on the section.
//!
//! Local manifolds are linear: `w(xi) = p + xi v`. Points of a fundamental
//! domain are parameterized by `s`, with `xi = xi_minus * lambda^s`, so that
//! `s` and `s + 1` lie on the same orbit of the iterated map.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg;
use crate::porbit::PeriodicOrbitRecord;
use crate::section::{SectionMap, SectionPoint};

/// Displacement of the fundamental domain from the fixed point.
pub const XI_MINUS: f64 = 1e-7;
/// Largest allowed gap between adjacent images in `(x, p_x)`.
pub const GAP_MAX: f64 = 1e-3;
pub const MESH_CAP: usize = 100_000;
pub const N_CAP: usize = 30;
/// Crossing rate below which a sample is flagged as grazing the section.
pub const GRAZE_RATE: f64 = 1e-3;
const INITIAL_MESH: usize = 64;
/// Parameter spacing below which a persistent gap is a discontinuity.
const MIN_DS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Unstable,
    Stable,
}

impl Stability {
    /// Direction of time along which the manifold grows.
    pub fn time_dir(self) -> f64 {
        match self {
            Stability::Unstable => 1.0,
            Stability::Stable => -1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stability::Unstable => "unstable",
            Stability::Stable => "stable",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub stability: Stability,
    /// `+1` or `-1`: side of the fixed point along the eigenvector.
    pub sign: f64,
}

impl Branch {
    pub fn new(stability: Stability, sign: f64) -> Self {
        Self { stability, sign: if sign < 0.0 { -1.0 } else { 1.0 } }
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.stability.name(), if self.sign > 0.0 { "+" } else { "-" })
    }
}

/// The section points of the periodic orbit, in order of crossing, starting at the seed.
pub fn orbit_points(map: &SectionMap, po: &PeriodicOrbitRecord) -> Result<Vec<SectionPoint>> {
    let seed = po.seed();
    let mut out = vec![seed];
    for i in 1..po.crossings_per_period {
        out.push(map.poincare(&seed, i as i32)?.point);
    }
    Ok(out)
}

/// Index of the reflected partner of `points[i]`.
pub fn reflected_index(points: &[SectionPoint], i: usize) -> usize {
    let r = points[i].reflect();
    let mut best = (f64::INFINITY, i);
    for (j, q) in points.iter().enumerate() {
        let d = (q.x - r.x).hypot(q.px - r.px) + if q.sign == r.sign { 0.0 } else { 1.0 };
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// Linear local manifold at one of the fixed points of `P^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalManifold {
    pub fixed: SectionPoint,
    /// Index of `fixed` among [`orbit_points`].
    pub fixed_index: usize,
    pub stability: Stability,
    /// Expansion factor per iterate along the manifold's own time direction.
    pub lambda: f64,
    pub dir: [f64; 2],
    /// Crossings per iterate.
    pub k: usize,
    pub xi_minus: f64,
}

impl LocalManifold {
    pub fn new(map: &SectionMap, po: &PeriodicOrbitRecord, fixed_index: usize, stability: Stability) -> Result<Self> {
        let points = orbit_points(map, po)?;
        let fixed = *points
            .get(fixed_index)
            .ok_or_else(|| Error::Domain(format!("fixed point index {fixed_index} out of range")))?;
        Self::at(map, fixed, fixed_index, po.crossings_per_period, stability)
    }

    /// Eigen-decomposition of `D P^k` at `fixed`.
    pub fn at(map: &SectionMap, fixed: SectionPoint, fixed_index: usize, k: usize, stability: Stability) -> Result<Self> {
        let (m, _) = map.dpoincare(&fixed, k as i32)?;
        let pairs = linalg::eig2(&m).ok_or(Error::Elliptic { j: fixed.J, trace: m[0][0] + m[1][1] })?;
        let (lu, vu) = pairs[0];
        let (_, vs) = pairs[1];
        if lu <= 1.0 {
            return domain(format!("multiplier {lu} at J = {} is not a positive expansion", fixed.J));
        }
        let dir = match stability {
            Stability::Unstable => vu,
            Stability::Stable => vs,
        };
        Ok(Self { fixed, fixed_index, stability, lambda: lu, dir, k, xi_minus: XI_MINUS })
    }

    pub fn xi(&self, sign: f64, s: f64) -> f64 {
        sign * self.xi_minus * self.lambda.powf(s)
    }

    pub fn point(&self, sign: f64, s: f64) -> SectionPoint {
        let xi = self.xi(sign, s);
        SectionPoint { x: self.fixed.x + xi * self.dir[0], px: self.fixed.px + xi * self.dir[1], ..self.fixed }
    }

    /// Iterates needed to reach a displacement of order `reach`.
    pub fn iterates_to(&self, reach: f64) -> usize {
        ((reach / self.xi_minus).ln() / self.lambda.ln()).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSample {
    /// Fundamental-domain coordinate.
    pub s: f64,
    pub xi: f64,
    pub point: SectionPoint,
    /// Flight time from the local manifold.
    pub t: f64,
    pub grazing: bool,
    pub segment: usize,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifoldCurve {
    pub po: PeriodicOrbitRecord,
    pub local: LocalManifold,
    pub branch: Branch,
    pub N: usize,
    pub samples: Vec<ManifoldSample>,
    pub warnings: Vec<String>,
}

impl ManifoldCurve {
    /// Samples grouped into continuous pieces.
    pub fn segments(&self) -> Vec<&[ManifoldSample]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            if i == self.samples.len() || self.samples[i].segment != self.samples[start].segment {
                out.push(&self.samples[start..i]);
                start = i;
            }
        }
        out
    }

    /// Sign changes of `p_x` inside continuous pieces, as adjacent sample pairs.
    pub fn axis_brackets(&self) -> Vec<(ManifoldSample, ManifoldSample)> {
        let mut out = Vec::new();
        for seg in self.segments() {
            for w in seg.windows(2) {
                if w[0].point.px == 0.0 || w[0].point.px.signum() != w[1].point.px.signum() {
                    out.push((w[0], w[1]));
                }
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "branch,xi,x,p_x,segment_id")?;
        let label = self.branch.label();
        for s in &self.samples {
            writeln!(w, "{label},{:e},{:.15e},{:.15e},{}", s.xi, s.point.x, s.point.px, s.segment)?;
        }
        Ok(())
    }
}

/// Default stop predicate: a continuous piece crosses `{p_x = 0}`.
pub fn straddles_axis(c: &ManifoldCurve) -> bool {
    !c.axis_brackets().is_empty()
}

#[derive(Debug, Clone, Copy)]
pub struct GlobalizeOptions {
    pub gap: f64,
    pub mesh_cap: usize,
    pub n_max: usize,
}

impl Default for GlobalizeOptions {
    fn default() -> Self {
        Self { gap: GAP_MAX, mesh_cap: MESH_CAP, n_max: N_CAP }
    }
}

/// Image of the fundamental-domain point `s` after `n` iterates.
fn image(map: &SectionMap, local: &LocalManifold, sign: f64, s: f64, n: usize) -> Result<ManifoldSample> {
    let start = local.point(sign, s);
    let steps = (n * local.k) as i32;
    let hit = map.poincare(&start, steps * local.stability.time_dir() as i32)?;
    Ok(ManifoldSample {
        s,
        xi: local.xi(sign, s),
        point: hit.point,
        t: hit.t,
        grazing: hit.tangency || hit.min_rate < GRAZE_RATE,
        segment: 0,
    })
}

fn gap(a: &ManifoldSample, b: &ManifoldSample) -> f64 {
    (a.point.x - b.point.x).hypot(a.point.px - b.point.px)
}

/// Refines the mesh until adjacent images are closer than `opts.gap`; pairs
/// that stay apart at parameter spacing `MIN_DS` start a new segment.
fn refine(
    map: &SectionMap,
    local: &LocalManifold,
    sign: f64,
    n: usize,
    samples: Vec<ManifoldSample>,
    opts: &GlobalizeOptions,
    warnings: &mut Vec<String>,
) -> Result<Vec<ManifoldSample>> {
    let mut out: Vec<ManifoldSample> = Vec::with_capacity(samples.len());
    let mut stack: Vec<ManifoldSample> = samples.into_iter().rev().collect();
    let mut capped = false;
    let mut segment = 0;
    while let Some(b) = stack.pop() {
        let Some(a) = out.last().copied() else {
            out.push(ManifoldSample { segment, ..b });
            continue;
        };
        if gap(&a, &b) <= opts.gap {
            out.push(ManifoldSample { segment, ..b });
            continue;
        }
        if b.s - a.s < MIN_DS || out.len() + stack.len() + 1 >= opts.mesh_cap {
            if b.s - a.s >= MIN_DS && !capped {
                warnings.push(format!("mesh cap {} reached at iterate {n}", opts.mesh_cap));
                capped = true;
            }
            if b.s - a.s < MIN_DS {
                segment += 1;
                warnings.push(format!("discontinuity at s = {:.15} (iterate {n})", a.s));
            }
            out.push(ManifoldSample { segment, ..b });
            continue;
        }
        let mid = image(map, local, sign, 0.5 * (a.s + b.s), n)?;
        stack.push(b);
        stack.push(mid);
    }
    Ok(out)
}

/// Iterates a fundamental domain of `branch` at `fixed_index` until `stop` holds.
pub fn globalize(
    map: &SectionMap,
    po: &PeriodicOrbitRecord,
    branch: Branch,
    fixed_index: usize,
    stop: &dyn Fn(&ManifoldCurve) -> bool,
    opts: &GlobalizeOptions,
) -> Result<ManifoldCurve> {
    let local = LocalManifold::new(map, po, fixed_index, branch.stability)?;
    let mut warnings = Vec::new();
    let mut samples: Vec<ManifoldSample> = Vec::with_capacity(INITIAL_MESH + 1);
    for i in 0..=INITIAL_MESH {
        let s = i as f64 / INITIAL_MESH as f64;
        let p = local.point(branch.sign, s);
        samples.push(ManifoldSample { s, xi: local.xi(branch.sign, s), point: p, t: 0.0, grazing: false, segment: 0 });
    }
    for n in 1..=opts.n_max {
        let mut next = Vec::with_capacity(samples.len());
        for smp in &samples {
            let hit = map.poincare(&smp.point, local.k as i32 * branch.stability.time_dir() as i32)?;
            next.push(ManifoldSample {
                point: hit.point,
                t: smp.t + hit.t,
                grazing: smp.grazing || hit.tangency || hit.min_rate < GRAZE_RATE,
                ..*smp
            });
        }
        samples = refine(map, &local, branch.sign, n, next, opts, &mut warnings)?;
        let curve = ManifoldCurve { po: *po, local, branch, N: n, samples, warnings };
        if stop(&curve) {
            return Ok(curve);
        }
        samples = curve.samples;
        warnings = curve.warnings;
    }
    Err(Error::NoConvergence(format!(
        "manifold {} at J = {} did not meet its stop predicate within {} iterates",
        branch.label(),
        po.J,
        opts.n_max
    )))
}

/// The stable curve obtained from an unstable one by the time-reversal symmetry.
pub fn stable_from_unstable(c: &ManifoldCurve) -> ManifoldCurve {
    let flip = |s: Stability| match s {
        Stability::Unstable => Stability::Stable,
        Stability::Stable => Stability::Unstable,
    };
    let local = LocalManifold {
        fixed: c.local.fixed.reflect(),
        dir: [c.local.dir[0], -c.local.dir[1]],
        stability: flip(c.local.stability),
        ..c.local
    };
    let samples = c
        .samples
        .iter()
        .map(|s| ManifoldSample { point: s.point.reflect(), t: -s.t, ..*s })
        .collect();
    ManifoldCurve {
        po: c.po,
        local,
        branch: Branch::new(flip(c.branch.stability), c.branch.sign),
        N: c.N,
        samples,
        warnings: c.warnings.clone(),
    }
}
