//! Oracles and numerical helpers shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Composite Simpson rule with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `∫_0^∞ f` via `s = t/(1−t)`; `f` must decay faster than `1/s²`.
pub fn integrate_half_line(f: impl Fn(f64) -> f64) -> f64 {
    simpson(
        |t| {
            if t >= 1.0 {
                0.0
            } else {
                let s = t / (1.0 - t);
                f(s) / ((1.0 - t) * (1.0 - t))
            }
        },
        0.0,
        1.0,
        200_000,
    )
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let d = d as f64;
    2.0 * PI.powf(d / 2.0) / statrs::function::gamma::gamma(d / 2.0)
}

/// Local correlations straight from the indicator definition, O(M^4).
pub fn brute_force_map(u: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
    let n = u.len();
    let prep = |s: &[f64]| {
        let d: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (s[i] - s[j]).abs()).collect())
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        let mut r = vec![vec![0usize; n]; n];
        for j in 0..n {
            let mean = (0..n).map(|i| d[i][j]).sum::<f64>() / (n - 1) as f64;
            for i in 0..n {
                if i != j {
                    a[i][j] = d[i][j] - mean;
                }
                // count points strictly closer, or tied with smaller index
                r[i][j] = 1 + (0..n)
                    .filter(|&t| d[t][j] < d[i][j] || (d[t][j] == d[i][j] && t < i))
                    .count();
            }
        }
        (a, r)
    };
    let (a, rx) = prep(u);
    let (b, ry) = prep(v);
    let m2 = (n * n) as f64;
    let mut out = vec![vec![0.0; n]; n];
    for k in 1..=n {
        for l in 1..=n {
            let (mut cov, mut sa, mut sb, mut vaa, mut vbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let ia = if rx[i][j] <= k { a[i][j] } else { 0.0 };
                    let ib = if ry[j][i] <= l { b[j][i] } else { 0.0 };
                    cov += ia * ib;
                    sa += ia;
                    sb += ib;
                    let ia_t = if rx[j][i] <= k { a[j][i] } else { 0.0 };
                    let ib_t = if ry[i][j] <= l { b[i][j] } else { 0.0 };
                    vaa += ia * ia_t;
                    vbb += ib * ib_t;
                }
            }
            let vx = vaa - sa * sa / m2;
            let vy = vbb - sb * sb / m2;
            out[k - 1][l - 1] = if vx <= 0.0 || vy <= 0.0 {
                0.0
            } else {
                ((cov - sa * sb / m2) / (vx * vy).sqrt()).clamp(-1.0, 1.0)
            };
        }
    }
    out
}

/// Squared V-statistic distance covariance via the three-term expansion.
pub fn dcov2(u: &[f64], v: &[f64]) -> f64 {
    let n = u.len() as f64;
    let (mut s1, mut sa, mut sb, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..u.len() {
        let (mut ra, mut rb) = (0.0, 0.0);
        for j in 0..u.len() {
            let a = (u[i] - u[j]).abs();
            let b = (v[i] - v[j]).abs();
            s1 += a * b;
            sa += a;
            sb += b;
            ra += a;
            rb += b;
        }
        s3 += ra * rb;
    }
    s1 / (n * n) + (sa / (n * n)) * (sb / (n * n)) - 2.0 * s3 / (n * n * n)
}
