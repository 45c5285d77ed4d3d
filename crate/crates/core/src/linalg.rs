//! Small fixed-size matrix helpers.

pub fn det4(m: &[[f64; 4]; 4]) -> f64 {
    let mut a = *m;
    let mut det = 1.0;
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..4 {
            let f = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    det
}

pub fn mat_vec4(m: &[[f64; 4]; 4], v: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
    out
}

pub fn mat_vec2(m: &[[f64; 2]; 2], v: &[f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

pub fn mat_mul2(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn det2(a: &[[f64; 2]; 2]) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// Real eigenpairs of a 2x2 matrix, larger modulus first; `None` if complex.
pub fn eig2(a: &[[f64; 2]; 2]) -> Option<[(f64, [f64; 2]); 2]> {
    let tr = a[0][0] + a[1][1];
    let det = det2(a);
    let disc = 0.25 * tr * tr - det;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // avoid cancellation in the smaller root
    let big = 0.5 * tr + sq.copysign(tr);
    let small = if big != 0.0 { det / big } else { 0.5 * tr - sq.copysign(tr) };
    let vec_for = |lam: f64| -> [f64; 2] {
        let r0 = [a[0][0] - lam, a[0][1]];
        let r1 = [a[1][0], a[1][1] - lam];
        // null vector of the row with larger norm
        let r = if r0[0].hypot(r0[1]) >= r1[0].hypot(r1[1]) { r0 } else { r1 };
        let v = [-r[1], r[0]];
        let n = v[0].hypot(v[1]);
        if n == 0.0 {
            [1.0, 0.0]
        } else {
            [v[0] / n, v[1] / n]
        }
    };
    Some([(big, vec_for(big)), (small, vec_for(small))])
}

pub fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}
