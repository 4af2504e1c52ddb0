//! Synthetic test functions, negated so that larger is better, and a
//! multistart Nelder–Mead oracle for their maxima.

use std::f64::consts::{E, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cmaes::SearchBox;
use crate::error::{Error, Result};

/// A benchmark maximization problem with a known optimum.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub name: &'static str,
    pub dim: usize,
    pub bounds: SearchBox,
    /// Reference global maximum.
    pub f_max: f64,
    /// One global maximizer, when known in closed form or to published
    /// precision.
    pub argmax: Vec<f64>,
    eval: fn(&[f64]) -> f64,
}

impl TestFunction {
    /// Value at `x`, which must lie in the box.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "{} expects {} coordinates, got {}",
                self.name,
                self.dim,
                x.len()
            )));
        }
        if !self.bounds.contains(x) {
            return Err(Error::invalid(format!("{x:?} lies outside the {} box", self.name)));
        }
        Ok((self.eval)(x))
    }

    /// Value without the box check.
    pub fn evaluate_unchecked(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }
}

fn michalewicz(x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| xi.sin() * ((i + 1) as f64 * xi * xi / PI).sin().powi(20))
        .sum()
}

fn camel(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    let a2 = a * a;
    let b2 = b * b;
    -((4.0 - 2.1 * a2 + a2 * a2 / 3.0) * a2 + a * b + (-4.0 + 4.0 * b2) * b2)
}

const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

const HARTMANN3_A: [[f64; 3]; 4] = [
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
];

const HARTMANN3_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];

const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];

const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

fn hartmann<const D: usize>(x: &[f64], a: &[[f64; D]; 4], p: &[[f64; D]; 4]) -> f64 {
    (0..4)
        .map(|i| {
            let r: f64 = (0..D).map(|j| a[i][j] * (x[j] - p[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-r).exp()
        })
        .sum()
}

fn hartmann3(x: &[f64]) -> f64 {
    hartmann(x, &HARTMANN3_A, &HARTMANN3_P)
}

fn hartmann6(x: &[f64]) -> f64 {
    hartmann(x, &HARTMANN6_A, &HARTMANN6_P)
}

fn ackley(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cos = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / d;
    20.0 * (-0.2 * sq.sqrt()).exp() + cos.exp() - 20.0 - E
}

fn levy(x: &[f64]) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
    let d = w.len();
    let mut g = (PI * w[0]).sin().powi(2);
    for wi in &w[..d - 1] {
        g += (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2));
    }
    let last = w[d - 1];
    g += (last - 1.0).powi(2) * (1.0 + (2.0 * PI * last).sin().powi(2));
    -g
}

fn cube(dim: usize, lo: f64, hi: f64) -> SearchBox {
    SearchBox::new(vec![lo; dim], vec![hi; dim]).expect("valid box")
}

/// The six benchmark problems.
pub fn catalog() -> Vec<TestFunction> {
    vec![
        TestFunction {
            name: "michalewicz-2",
            dim: 2,
            bounds: cube(2, 0.0, PI),
            f_max: 1.801_303_410_098_553_8,
            argmax: vec![2.202_905_520_6, std::f64::consts::FRAC_PI_2],
            eval: michalewicz,
        },
        TestFunction {
            name: "camel-2",
            dim: 2,
            bounds: SearchBox::from_pairs(&[(-3.0, 3.0), (-2.0, 2.0)]).expect("valid box"),
            f_max: 1.031_628_453_489_877,
            argmax: vec![0.089_842_008_8, -0.712_656_403_0],
            eval: camel,
        },
        TestFunction {
            name: "hartmann-3",
            dim: 3,
            bounds: cube(3, 0.0, 1.0),
            f_max: 3.862_782_147_820_756,
            argmax: vec![0.114_614_3, 0.555_649_0, 0.852_546_9],
            eval: hartmann3,
        },
        TestFunction {
            name: "ackley-3",
            dim: 3,
            bounds: cube(3, -32.768, 32.768),
            f_max: 0.0,
            argmax: vec![0.0; 3],
            eval: ackley,
        },
        TestFunction {
            name: "levy-4",
            dim: 4,
            bounds: cube(4, -10.0, 10.0),
            f_max: 0.0,
            argmax: vec![1.0; 4],
            eval: levy,
        },
        TestFunction {
            name: "hartmann-6",
            dim: 6,
            bounds: cube(6, 0.0, 1.0),
            f_max: 3.322_368_011_391_339,
            argmax: vec![0.201_690, 0.150_011, 0.476_874, 0.275_332, 0.311_652, 0.657_300],
            eval: hartmann6,
        },
    ]
}

fn canonical(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Finds a function by name. Separators and case are ignored, and the
/// dimension suffix may be dropped (`camel`, `six-hump-camel`, `Hartmann6`).
pub fn lookup(name: &str) -> Result<TestFunction> {
    let key = canonical(name);
    let key = key.strip_prefix("sixhump").unwrap_or(&key);
    catalog()
        .into_iter()
        .find(|f| {
            let full = canonical(f.name);
            let base = full.trim_end_matches(|c: char| c.is_ascii_digit());
            // hartmann needs its dimension to be unambiguous
            key == full || (key == base && base != "hartmann")
        })
        .ok_or_else(|| {
            let names: Vec<_> = catalog().iter().map(|f| f.name).collect();
            Error::invalid(format!("unknown function {name:?}; known: {}", names.join(", ")))
        })
}

/// Evaluates the named function at a point inside its box.
pub fn evaluate(name: &str, x: &[f64]) -> Result<f64> {
    lookup(name)?.evaluate(x)
}

/// Settings for [`multistart_max`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultistartConfig {
    /// Local searches to run.
    pub starts: usize,
    /// Random points screened to pick half of the starting points.
    pub pool: usize,
    /// Iteration cap per local search.
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        Self {
            starts: 1000,
            pool: 100_000,
            max_iterations: 4000,
            seed: 0,
        }
    }
}

/// Best point found by [`multistart_max`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Multistart Nelder–Mead maximization over a box. Half the starts are the
/// best points of a uniform pool, the rest are uniform draws.
pub fn multistart_max<F>(f: F, bounds: &SearchBox, cfg: &MultistartConfig) -> Result<OracleResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if cfg.starts == 0 {
        return Err(Error::invalid("multistart needs at least one start"));
    }
    let dim = bounds.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let to_box = |u: &[f64]| bounds.from_unit(u);

    let mut pool: Vec<(Vec<f64>, f64)> = (0..cfg.pool)
        .map(|_| {
            let u: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let v = f(&to_box(&u));
            (u, v)
        })
        .collect();
    pool.sort_by(|a, b| b.1.total_cmp(&a.1));
    let elite = (cfg.starts / 2).min(pool.len());
    let mut starts: Vec<Vec<f64>> = pool.into_iter().take(elite).map(|(u, _)| u).collect();
    while starts.len() < cfg.starts {
        starts.push((0..dim).map(|_| rng.random::<f64>()).collect());
    }

    let best = starts
        .par_iter()
        .map(|u0| nelder_mead(|u| -f(&to_box(u)), u0, cfg.max_iterations))
        .map(|(u, neg)| (u, -neg))
        .reduce_with(|a, b| if b.1 > a.1 { b } else { a })
        .expect("at least one start");
    Ok(OracleResult {
        x: to_box(&best.0),
        value: best.1,
    })
}

/// Minimizes `g` on the unit cube; candidate points are clamped into it.
fn nelder_mead<G: Fn(&[f64]) -> f64>(g: G, start: &[f64], max_iterations: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    let clamp = |p: Vec<f64>| -> Vec<f64> { p.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), g(start)));
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += if p[i] < 0.5 { 0.05 } else { -0.05 };
        let p = clamp(p);
        let v = g(&p);
        simplex.push((p, v));
    }

    for _ in 0..max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() <= 1e-14 * (1.0 + simplex[0].1.abs()) && size < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clamp(
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect(),
            )
        };
        let reflected = along(-1.0);
        let fr = g(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = g(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = along(-0.5);
                let v = g(&c);
                (c, v)
            } else {
                let c = along(0.5);
                let v = g(&c);
                (c, v)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for (p, v) in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = p.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    *v = g(&shrunk);
                    *p = shrunk;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
