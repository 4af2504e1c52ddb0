//! Box-constrained CMA-ES maximizer.
//!
//! Standard `(μ/μ_w, λ)`-CMA-ES with rank-one and rank-μ covariance updates
//! and cumulative step-size adaptation. The search runs in box-normalized
//! coordinates `[0, 1]^D`. Candidates that leave the unit cube are
//! resampled up to ten times and then clipped. When a run stagnates it is
//! restarted from a fresh random mean with a doubled population (IPOP) as
//! long as restarts and evaluations remain.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 10;
const STAGNATION_GENERATIONS: usize = 20;
const STAGNATION_TOL: f64 = 1e-12;
const MIN_STEP: f64 = 1e-13;
const MAX_CONDITION: f64 = 1e14;

/// Per-dimension `[lower, upper]` bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("search box needs at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::invalid(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (d, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!(
                    "dimension {d}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(vec![0.0; dim], vec![1.0; dim]).expect("unit cube is valid")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    /// Length of the box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    /// Maps a unit-cube point into the box; the result is clamped so that
    /// rounding never produces a point outside.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| (lo + v * (hi - lo)).clamp(*lo, *hi))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: Vec<f64> = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
        self.from_unit(&u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaConfig {
    /// Initial population size; `None` selects `4 + ⌊3 ln D⌋`.
    pub population: Option<usize>,
    /// Initial step size in box-normalized units.
    pub initial_step: f64,
    pub max_evaluations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Starting mean for the first run, in box coordinates. Restarts always
    /// draw a fresh uniform mean.
    #[serde(default)]
    pub initial_mean: Option<Vec<f64>>,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            population: None,
            initial_step: 0.3,
            max_evaluations: 2000,
            restarts: 8,
            seed: 0,
            initial_mean: None,
        }
    }
}

impl CmaConfig {
    pub fn with_budget(max_evaluations: usize, seed: u64) -> Self {
        Self {
            max_evaluations,
            seed,
            ..Self::default()
        }
    }

    pub fn default_population(dim: usize) -> usize {
        4 + (3.0 * (dim as f64).ln()).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub evaluations: usize,
}

/// Per-generation progress report.
#[derive(Debug, Clone, Copy)]
pub struct Generation {
    /// Generation index counted across restarts.
    pub index: usize,
    /// Best objective value seen so far in the whole optimization.
    pub best: f64,
    pub evaluations: usize,
}

/// Maximizes `objective` over `bounds`.
pub fn maximize<F>(objective: F, bounds: &SearchBox, cfg: &CmaConfig) -> Result<CmaResult>
where
    F: FnMut(&[f64]) -> f64,
{
    maximize_with_progress(objective, bounds, cfg, |_| {})
}

pub fn maximize_with_progress<F, P>(
    mut objective: F,
    bounds: &SearchBox,
    cfg: &CmaConfig,
    mut progress: P,
) -> Result<CmaResult>
where
    F: FnMut(&[f64]) -> f64,
    P: FnMut(Generation),
{
    let dim = bounds.dim();
    let lambda0 = cfg
        .population
        .unwrap_or_else(|| CmaConfig::default_population(dim));
    if lambda0 < 2 {
        return Err(Error::invalid(format!(
            "population must be at least 2, got {lambda0}"
        )));
    }
    if cfg.max_evaluations < lambda0 {
        return Err(Error::invalid(format!(
            "evaluation budget {} is smaller than the population {lambda0}",
            cfg.max_evaluations
        )));
    }
    if !(cfg.initial_step.is_finite() && cfg.initial_step > 0.0) {
        return Err(Error::invalid(format!(
            "initial step must be positive, got {}",
            cfg.initial_step
        )));
    }
    let first_mean = match &cfg.initial_mean {
        Some(m) if m.len() != dim => {
            return Err(Error::invalid(format!(
                "initial mean has dimension {}, box has {dim}",
                m.len()
            )))
        }
        Some(m) => Some(bounds.to_unit(m).iter().map(|v| v.clamp(0.0, 1.0)).collect::<Vec<f64>>()),
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tracker = Tracker {
        objective: &mut objective,
        bounds,
        evaluations: 0,
        best: None,
    };
    let mut generation = 0usize;
    let mut lambda = lambda0;

    for run in 0..=cfg.restarts {
        let remaining = cfg.max_evaluations - tracker.evaluations;
        if remaining == 0 {
            break;
        }
        let mean = match (&first_mean, run) {
            (Some(m), 0) => DVector::from_vec(m.clone()),
            _ => DVector::from_fn(dim, |_, _| rng.random::<f64>()),
        };
        let mut state = CmaState::new(mean, cfg.initial_step, lambda);
        loop {
            let remaining = cfg.max_evaluations - tracker.evaluations;
            if remaining == 0 {
                break;
            }
            let count = state.lambda.min(remaining);
            let population = state.sample(count, &mut rng);
            let mut scored = Vec::with_capacity(count);
            for x in population {
                let f = tracker.eval(&x)?;
                scored.push((x, f));
            }
            generation += 1;
            progress(Generation {
                index: generation,
                best: tracker.best_value(),
                evaluations: tracker.evaluations,
            });
            if count < state.lambda {
                break;
            }
            if state.update(scored) {
                break;
            }
        }
        lambda *= 2;
    }

    let (x_unit, f_best) = tracker.best.expect("at least one evaluation happened");
    Ok(CmaResult {
        x_best: bounds.from_unit(&x_unit),
        f_best,
        evaluations: tracker.evaluations,
    })
}

struct Tracker<'a, F> {
    objective: &'a mut F,
    bounds: &'a SearchBox,
    evaluations: usize,
    best: Option<(Vec<f64>, f64)>,
}

impl<F: FnMut(&[f64]) -> f64> Tracker<'_, F> {
    fn eval(&mut self, unit: &DVector<f64>) -> Result<f64> {
        let x = self.bounds.from_unit(unit.as_slice());
        let f = (self.objective)(&x);
        self.evaluations += 1;
        if !f.is_finite() {
            return Err(Error::Numerical(format!(
                "objective returned {f} at {x:?} (evaluation {})",
                self.evaluations
            )));
        }
        if self.best.as_ref().is_none_or(|(_, b)| f > *b) {
            self.best = Some((unit.as_slice().to_vec(), f));
        }
        Ok(f)
    }

    fn best_value(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.1)
    }
}

/// Strategy parameters and dynamic state of one CMA-ES run.
struct CmaState {
    dim: usize,
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,

    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: usize,

    run_best: f64,
    since_improvement: usize,
}

impl CmaState {
    fn new(mean: DVector<f64>, sigma: f64, lambda: usize) -> Self {
        let dim = mean.len();
        let n = dim as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        Self {
            dim,
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean,
            sigma,
            cov: DMatrix::identity(dim, dim),
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            generation: 0,
            run_best: f64::NEG_INFINITY,
            since_improvement: 0,
        }
    }

    fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
        (0..count)
            .map(|_| {
                for _ in 0..MAX_RESAMPLES {
                    let x = self.draw(rng);
                    if x.iter().all(|v| (0.0..=1.0).contains(v)) {
                        return x;
                    }
                }
                self.draw(rng).map(|v| v.clamp(0.0, 1.0))
            })
            .collect()
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &self.basis * z.component_mul(&self.scales);
        &self.mean + y * self.sigma
    }

    /// Applies one generation update. Returns `true` when the run should stop.
    fn update(&mut self, mut scored: Vec<(DVector<f64>, f64)>) -> bool {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        self.generation += 1;

        let gen_best = scored[0].1;
        if gen_best > self.run_best + STAGNATION_TOL {
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        self.run_best = self.run_best.max(gen_best);

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = scored
            .iter()
            .take(self.weights.len())
            .map(|(x, _)| (x - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w += y * *w;
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_sqrt_y = &self.basis
            * (self.basis.transpose() * &y_w).component_div(&self.scales);
        self.p_sigma = &self.p_sigma * (1.0 - self.c_sigma)
            + inv_sqrt_y * (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();

        let n = self.dim as f64;
        let ps_norm = self.p_sigma.norm();
        let decay = 1.0 - (1.0 - self.c_sigma).powi(2 * self.generation as i32);
        let h_sigma = if ps_norm / decay.sqrt() < (1.4 + 2.0 / (n + 1.0)) * self.chi_n {
            1.0
        } else {
            0.0
        };
        self.p_c = &self.p_c * (1.0 - self.c_c)
            + &y_w * (h_sigma * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu += y * y.transpose() * *w;
        }
        let correction = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        self.cov = &self.cov * (1.0 - self.c_1 - self.c_mu)
            + (&self.p_c * self.p_c.transpose() + &self.cov * correction) * self.c_1
            + rank_mu * self.c_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;

        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();

        let eigen = SymmetricEigen::new(self.cov.clone());
        let max_eig = eigen.eigenvalues.max();
        let min_eig = eigen.eigenvalues.min();
        if !(min_eig > 0.0 && max_eig.is_finite()) || max_eig / min_eig > MAX_CONDITION {
            return true;
        }
        self.basis = eigen.eigenvectors;
        self.scales = eigen.eigenvalues.map(f64::sqrt);

        self.since_improvement >= STAGNATION_GENERATIONS
            || !self.sigma.is_finite()
            || self.sigma * max_eig.sqrt() < MIN_STEP
    }
}
