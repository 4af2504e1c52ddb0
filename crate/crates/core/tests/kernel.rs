mod common;

use std::f64::consts::PI;

use common::{integrate_half_line, simpson, sphere_area};
use mgcbo::kernel::{matern52, sample_feature_map, spectral_density};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn radial_mass(lengthscale: f64, dim: usize) -> f64 {
    sphere_area(dim)
        * integrate_half_line(|s| {
            spectral_density(s, lengthscale, dim).unwrap() * s.powi(dim as i32 - 1)
        })
}

#[test]
fn spectral_density_normalized() {
    for (ell, dim) in [(0.5, 1), (1.0, 1), (0.5, 2), (2.0, 2), (0.7, 3)] {
        let mass = radial_mass(ell, dim);
        assert!((mass - 1.0).abs() < 1e-6, "ℓ={ell} D={dim}: {mass}");
    }
}

#[test]
fn spectral_density_decreasing() {
    let mut prev = f64::INFINITY;
    for i in 0..200 {
        let v = spectral_density(i as f64 * 0.05, 0.8, 2).unwrap();
        assert!(v < prev);
        prev = v;
    }
}

/// Fourier pair check in one dimension: `∫ cos(2π s r) S(s) ds = k(r)`.
#[test]
fn spectral_density_transforms_to_kernel() {
    for r in [0.0, 0.3, 1.0, 2.5] {
        let k = 2.0 * simpson(
            |s| (2.0 * PI * s * r).cos() * spectral_density(s, 1.0, 1).unwrap(),
            0.0,
            200.0,
            400_000,
        );
        assert!((k - matern52(r, 1.0).unwrap()).abs() < 1e-6, "r={r}: {k}");
    }
}

/// CDF of the signed one-dimensional frequency, tabulated by Simpson
/// integration on a symmetric grid.
struct QuadratureCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl QuadratureCdf {
    fn new(lengthscale: f64, half_width: f64, cells: usize) -> Self {
        let density = |s: f64| spectral_density(s.abs(), lengthscale, 1).unwrap();
        let h = half_width / cells as f64;
        let tail = integrate_half_line(|s| density(s + half_width));
        let mut grid = vec![-half_width];
        let mut cdf = vec![tail];
        for i in 0..2 * cells {
            let a = -half_width + i as f64 * h;
            let step = simpson(density, a, a + h, 4);
            grid.push(a + h);
            cdf.push(cdf.last().unwrap() + step);
        }
        Self { grid, cdf }
    }

    fn eval(&self, s: f64) -> f64 {
        let h = self.grid[1] - self.grid[0];
        let pos = (s - self.grid[0]) / h;
        if pos <= 0.0 {
            return self.cdf[0];
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.grid.len() {
            return *self.cdf.last().unwrap();
        }
        let w = pos - i as f64;
        self.cdf[i] * (1.0 - w) + self.cdf[i + 1] * w
    }

    fn inverse(&self, p: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < p).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.grid[i - 1] + w * (self.grid[i] - self.grid[i - 1])
    }
}

fn ks_distance(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let f = cdf(s);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn first_coordinates(lengthscale: f64, dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fm = sample_feature_map(lengthscale, dim, count, &mut rng).unwrap();
    (0..dim)
        .map(|j| fm.frequencies().column(j).iter().copied().collect())
        .collect()
}

#[test]
fn sampled_frequencies_follow_spectral_density() {
    let table = QuadratureCdf::new(1.0, 20.0, 200_000);
    assert!((table.cdf.last().unwrap() + table.cdf[0] - 1.0).abs() < 1e-6);
    let mut s = first_coordinates(1.0, 1, 100_000, 42).remove(0);
    s.sort_by(f64::total_cmp);
    let d = ks_distance(&s, |x| table.eval(x));
    // asymptotic critical value at 0.01
    let critical = 1.628 / (s.len() as f64).sqrt();
    assert!(d < critical, "KS {d} ≥ {critical}");
}

#[test]
fn student_t_transform_matches_inverse_cdf_samples() {
    let table = QuadratureCdf::new(1.0, 20.0, 200_000);
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut reference: Vec<f64> = (0..n).map(|_| table.inverse(rng.random::<f64>())).collect();
    let mut transformed = first_coordinates(1.0, 1, n, 10).remove(0);
    reference.sort_by(f64::total_cmp);
    transformed.sort_by(f64::total_cmp);

    // two-sample KS statistic
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < n {
        if reference[i] <= transformed[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 - j as f64).abs() / n as f64);
    }
    let critical = 1.628 * (2.0 / n as f64).sqrt();
    assert!(d < critical, "two-sample KS {d} ≥ {critical}");
}

#[test]
fn frequency_second_moment_in_three_dimensions() {
    let ell = 1.0;
    let dim = 3;
    let target = (5.0 / 3.0) / (4.0 * PI * PI * ell * ell);
    // E|s|² / D by quadrature
    let by_quadrature = sphere_area(dim)
        * integrate_half_line(|s| spectral_density(s, ell, dim).unwrap() * s.powi(4))
        / dim as f64;
    assert!((by_quadrature - target).abs() < 1e-6 * target, "{by_quadrature} vs {target}");

    for coords in first_coordinates(ell, dim, 100_000, 3) {
        let m2 = coords.iter().map(|s| s * s).sum::<f64>() / coords.len() as f64;
        assert!((m2 / target - 1.0).abs() < 0.05, "{m2} vs {target}");
    }
}

#[test]
fn feature_inner_products_approximate_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ell = 0.7;
    let fm = sample_feature_map(ell, 3, 50_000, &mut rng).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
        let r = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let err = (fm.approx_kernel(&x, &y).unwrap() - matern52(r, ell).unwrap()).abs();
        worst = worst.max(err);
    }
    assert!(worst <= 0.02, "max error {worst}");
}
