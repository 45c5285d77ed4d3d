//! Adaptive Gauss-Kronrod (7, 15) quadrature for vector-valued integrands.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights on the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Tolerances of [`integrate`]: component `c` is accepted once its error
/// estimate is below `max(abs, rel * |I_c|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadTol {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Default for QuadTol {
    fn default() -> Self {
        Self { rel: 1e-8, abs: 1e-15, max_intervals: 2000 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Piece<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    err: [f64; K],
}

fn kronrod<const K: usize, F>(f: &mut F, a: f64, b: f64) -> Result<Piece<K>>
where
    F: FnMut(f64) -> Result<[f64; K]>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = [0.0; K];
    let mut g = [0.0; K];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let pts: &[f64] = if x == 0.0 { &[0.0] } else { &[-1.0, 1.0] };
        for &sgn in pts {
            let v = f(c + sgn * h * x)?;
            for m in 0..K {
                k[m] += w * v[m];
                if j % 2 == 1 {
                    g[m] += WG[j / 2] * v[m];
                }
            }
        }
    }
    let mut value = [0.0; K];
    let mut err = [0.0; K];
    for m in 0..K {
        value[m] = k[m] * h;
        err[m] = ((k[m] - g[m]) * h).abs();
    }
    Ok(Piece { a, b, value, err })
}

/// Integral of `f` over `[a, b]` (either orientation) and its error estimate.
pub fn integrate<const K: usize, F>(mut f: F, a: f64, b: f64, tol: QuadTol) -> Result<([f64; K], [f64; K])>
where
    F: FnMut(f64) -> Result<[f64; K]>,
{
    if a == b {
        return Ok(([0.0; K], [0.0; K]));
    }
    let mut pieces = vec![kronrod(&mut f, a, b)?];
    loop {
        let mut total = [0.0; K];
        let mut err = [0.0; K];
        for p in &pieces {
            for m in 0..K {
                total[m] += p.value[m];
                err[m] += p.err[m];
            }
        }
        let target: Vec<f64> = total.iter().map(|t| tol.abs.max(tol.rel * t.abs())).collect();
        if (0..K).all(|m| err[m] <= target[m]) {
            return Ok((total, err));
        }
        if pieces.len() >= tol.max_intervals {
            return Err(Error::NoConvergence(format!("quadrature on [{a}, {b}] after {} subintervals", pieces.len())));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (0..K).map(|m| p.err[m] / target[m]).fold(0.0, f64::max)))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(i, _)| i)
            .unwrap();
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        pieces.push(kronrod(&mut f, p.a, mid)?);
        pieces.push(kronrod(&mut f, mid, p.b)?);
    }
}

/// Scalar front end of [`integrate`].
pub fn integrate_scalar<F>(mut f: F, a: f64, b: f64, tol: QuadTol) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (v, e) = integrate(|x| Ok([f(x)?]), a, b, tol)?;
    Ok((v[0], e[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let (v, _) = integrate_scalar(|x| Ok(x.powi(5) - 3.0 * x * x), -1.0, 2.0, QuadTol::default()).unwrap();
        assert!((v - (64.0 / 6.0 - 1.0 / 6.0 - 9.0)).abs() < 1e-13);
    }

    #[test]
    fn orientation_and_vector_components() {
        let tol = QuadTol::default();
        let (fwd, _) = integrate(|x: f64| Ok([x.sin(), x.cos(), (-x).exp()]), 0.0, 3.0, tol).unwrap();
        let (bwd, _) = integrate(|x: f64| Ok([x.sin(), x.cos(), (-x).exp()]), 3.0, 0.0, tol).unwrap();
        let exact = [1.0 - 3f64.cos(), 3f64.sin(), 1.0 - (-3f64).exp()];
        for m in 0..3 {
            assert!((fwd[m] - exact[m]).abs() < 1e-12);
            assert!((fwd[m] + bwd[m]).abs() < 1e-14);
        }
    }

    #[test]
    fn adaptive_on_peaked_integrand() {
        let (v, e) = integrate_scalar(|x| Ok(1.0 / (1e-4 + x * x)), -1.0, 1.0, QuadTol::default()).unwrap();
        let exact = 2.0 * (1.0 / 1e-2f64).atan() / 1e-2;
        assert!((v - exact).abs() < 1e-8 * exact, "{v} vs {exact} (err {e})");
    }

    #[test]
    fn errors_propagate() {
        let r = integrate_scalar(|x| if x > 0.5 { Err(Error::Domain("x".into())) } else { Ok(x) }, 0.0, 1.0, QuadTol::default());
        assert!(r.is_err());
    }
}
