//! Exact Gaussian-process regression with a Matérn-5/2 kernel.
//!
//! [`GpPosterior`] factorizes `K + σ²I` once and answers mean/variance
//! queries. [`fit_hyperparams`] maximizes the log marginal likelihood with
//! CMA-ES in log-space. [`FunctionSampler`] draws whole posterior functions
//! `f̂(x) = θᵀφ(x)` through the random-feature weight posterior
//!
//! ```text
//! θ ~ N( CΦ A⁻¹ y,  C·I_B − C²Φ A⁻¹ Φᵀ ),   A = CΦᵀΦ + σ²I_n
//! ```
//!
//! using only the `n × n` matrix `A`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cmaes::{self, CmaConfig, SearchBox};
use crate::error::{Error, Result};
use crate::kernel::{FeatureMap, KernelParams};

/// Relative jitter always added to the Gram diagonal.
pub const BASE_JITTER: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const MAX_JITTER: f64 = 1e-4;

/// Default number of likelihood evaluations spent per hyperparameter fit.
pub const DEFAULT_FIT_BUDGET: usize = 300;

/// Observations `{(x_i, y_i)}` inside a search box.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<Vec<f64>>,
    values: Vec<f64>,
    bounds: SearchBox,
}

impl Dataset {
    pub fn new(bounds: SearchBox) -> Self {
        Self {
            points: Vec::new(),
            values: Vec::new(),
            bounds,
        }
    }

    pub fn from_observations(
        bounds: SearchBox,
        points: Vec<Vec<f64>>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if points.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        let mut data = Self::new(bounds);
        for (x, y) in points.into_iter().zip(values) {
            data.push(x, y)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, x: Vec<f64>, y: f64) -> Result<()> {
        if x.len() != self.bounds.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, dataset has {}",
                x.len(),
                self.bounds.dim()
            )));
        }
        if !self.bounds.contains(&x) {
            return Err(Error::invalid(format!("point {x:?} lies outside the box")));
        }
        if !y.is_finite() {
            return Err(Error::invalid(format!("observed value {y} is not finite")));
        }
        self.points.push(x);
        self.values.push(y);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> &SearchBox {
        &self.bounds
    }

    /// Largest observed value.
    pub fn best_value(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    fn mean_and_variance(&self) -> (f64, f64) {
        if self.values.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }
}

/// Affine map of a dataset onto the unit cube with standardized outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    bounds: SearchBox,
    y_mean: f64,
    y_scale: f64,
}

impl Normalizer {
    pub fn from_dataset(data: &Dataset) -> Self {
        let (mean, var) = data.mean_and_variance();
        let scale = var.sqrt();
        Self {
            bounds: data.bounds().clone(),
            y_mean: mean,
            y_scale: if scale > 0.0 && scale.is_finite() { scale } else { 1.0 },
        }
    }

    pub fn normalize(&self, data: &Dataset) -> Dataset {
        Dataset {
            points: data
                .points()
                .iter()
                .map(|x| {
                    self.bounds
                        .to_unit(x)
                        .into_iter()
                        .map(|v| v.clamp(0.0, 1.0))
                        .collect()
                })
                .collect(),
            values: data.values().iter().map(|y| self.standardize(*y)).collect(),
            bounds: SearchBox::unit(self.bounds.dim()),
        }
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_scale
    }

    pub fn unstandardize(&self, z: f64) -> f64 {
        z * self.y_scale + self.y_mean
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.bounds.to_unit(x)
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.bounds.from_unit(u)
    }
}

/// Kernel parameters plus the observation-noise variance `σ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperParams {
    pub kernel: KernelParams,
    pub noise: f64,
}

impl GpHyperParams {
    pub fn new(lengthscale: f64, amplitude: f64, noise: f64) -> Result<Self> {
        if !(noise.is_finite() && noise >= 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be nonnegative, got {noise}"
            )));
        }
        Ok(Self {
            kernel: KernelParams::new(lengthscale, amplitude)?,
            noise,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.kernel.lengthscale()
    }

    pub fn amplitude(&self) -> f64 {
        self.kernel.amplitude()
    }
}

/// Cholesky factor of `M + (σ² + jitter)·I`, escalating the jitter tenfold
/// from `BASE_JITTER·C` up to `MAX_JITTER·C` until the factorization succeeds.
fn factor_with_jitter(
    matrix: &DMatrix<f64>,
    noise: f64,
    amplitude: f64,
) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut rel = BASE_JITTER;
    loop {
        let jitter = rel * amplitude;
        let mut m = matrix.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += noise + jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        if rel >= MAX_JITTER {
            let diag_max = (0..matrix.nrows())
                .map(|i| matrix[(i, i)])
                .fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::Numerical(format!(
                "Gram matrix of size {} not positive definite with jitter {jitter:e} \
                 (noise {noise:e}, amplitude {amplitude:e}, max diagonal {diag_max:e})",
                matrix.nrows()
            )));
        }
        rel *= 10.0;
    }
}

fn gram(points: &[Vec<f64>], kernel: &KernelParams) -> DMatrix<f64> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// GP conditioned on a dataset with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    data: Dataset,
    params: GpHyperParams,
    factor: Option<Cholesky<f64, Dyn>>,
    /// `(K + σ²I)⁻¹ y`
    weights: DVector<f64>,
    jitter: f64,
}

impl GpPosterior {
    pub fn new(data: Dataset, params: GpHyperParams) -> Result<Self> {
        if data.is_empty() {
            return Ok(Self {
                data,
                params,
                factor: None,
                weights: DVector::zeros(0),
                jitter: BASE_JITTER * params.amplitude(),
            });
        }
        let k = gram(data.points(), &params.kernel);
        let (factor, jitter) = factor_with_jitter(&k, params.noise, params.amplitude())?;
        let weights = factor.solve(&DVector::from_column_slice(data.values()));
        Ok(Self {
            data,
            params,
            factor: Some(factor),
            weights,
            jitter,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &GpHyperParams {
        &self.params
    }

    /// Absolute jitter that was added to the Gram diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Noise variance actually used on the diagonal, `σ² + jitter`.
    pub fn effective_noise(&self) -> f64 {
        self.params.noise + self.jitter
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    fn cross_covariance(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.data.len(),
            self.data.points().iter().map(|p| self.params.kernel.eval(x, p)),
        )
    }

    /// Predictive mean and variance of the latent function at `x`.
    pub fn posterior_mean_var(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, GP has {}",
                x.len(),
                self.dim()
            )));
        }
        let prior = self.params.amplitude();
        let Some(factor) = &self.factor else {
            return Ok((0.0, prior));
        };
        let k_star = self.cross_covariance(x);
        let mean = k_star.dot(&self.weights);
        let v = factor.l().solve_lower_triangular(&k_star).ok_or_else(|| {
            Error::Numerical("triangular solve failed in posterior variance".into())
        })?;
        let var = (prior - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }
}

/// `log p(y | X, θ)` for a zero-mean GP.
pub fn log_marginal_likelihood(data: &Dataset, params: &GpHyperParams) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("log marginal likelihood needs observations"));
    }
    let k = gram(data.points(), &params.kernel);
    let (chol, _) = factor_with_jitter(&k, params.noise, params.amplitude())?;
    let y = DVector::from_column_slice(data.values());
    let alpha = chol.solve(&y);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n = data.len() as f64;
    Ok(-0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln())
}

/// Box constraints for hyperparameter search, each as `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperBounds {
    pub lengthscale: (f64, f64),
    pub amplitude: (f64, f64),
    pub noise: (f64, f64),
}

impl HyperBounds {
    /// `ℓ ∈ [10⁻², 10]·diag`, `C ∈ [10⁻², 10²]·var(y)`, `σ² ∈ [10⁻⁸, 10⁻²]·var(y)`.
    pub fn for_dataset(data: &Dataset) -> Self {
        let diag = data.bounds().diagonal();
        let (_, var) = data.mean_and_variance();
        let var = if var > 0.0 && var.is_finite() { var } else { 1.0 };
        Self {
            lengthscale: (1e-2 * diag, 10.0 * diag),
            amplitude: (1e-2 * var, 1e2 * var),
            noise: (1e-8 * var, 1e-2 * var),
        }
    }

    /// Geometric midpoint for `ℓ` and `C`, smallest allowed noise.
    pub fn initial_guess(&self) -> GpHyperParams {
        let mid = |(lo, hi): (f64, f64)| (lo * hi).sqrt();
        GpHyperParams::new(mid(self.lengthscale), mid(self.amplitude), self.noise.0)
            .expect("bounds are positive")
    }

    fn log_box(&self) -> Result<SearchBox> {
        SearchBox::from_pairs(&[
            (self.lengthscale.0.ln(), self.lengthscale.1.ln()),
            (self.amplitude.0.ln(), self.amplitude.1.ln()),
            (self.noise.0.ln(), self.noise.1.ln()),
        ])
    }

    fn clamp(&self, p: &GpHyperParams) -> GpHyperParams {
        GpHyperParams::new(
            p.lengthscale().clamp(self.lengthscale.0, self.lengthscale.1),
            p.amplitude().clamp(self.amplitude.0, self.amplitude.1),
            p.noise.clamp(self.noise.0, self.noise.1),
        )
        .expect("clamped into positive bounds")
    }
}

/// Maximizes the log marginal likelihood over `bounds` (in log-space) with
/// CMA-ES warm-started at `incumbent`. The result is never worse than the
/// incumbent itself.
pub fn fit_hyperparams<R: Rng + ?Sized>(
    data: &Dataset,
    incumbent: &GpHyperParams,
    bounds: &HyperBounds,
    budget: usize,
    rng: &mut R,
) -> Result<GpHyperParams> {
    if data.is_empty() {
        return Err(Error::invalid("cannot fit hyperparameters without data"));
    }
    if data.len() == 1 {
        return Ok(*incumbent);
    }
    let search = bounds.log_box()?;
    let start = bounds.clamp(incumbent);
    let decode = |z: &[f64]| GpHyperParams::new(z[0].exp(), z[1].exp(), z[2].exp());
    let objective = |z: &[f64]| {
        decode(z)
            .and_then(|p| log_marginal_likelihood(data, &p))
            .unwrap_or(-1e300)
    };
    let cfg = CmaConfig {
        initial_mean: Some(vec![
            start.lengthscale().ln(),
            start.amplitude().ln(),
            start.noise.ln(),
        ]),
        ..CmaConfig::with_budget(budget.max(CmaConfig::default_population(3)), rng.random())
    };
    let found = cmaes::maximize(objective, &search, &cfg)?;
    let candidate = decode(&found.x_best)?;

    let incumbent_ll = log_marginal_likelihood(data, incumbent).unwrap_or(f64::NEG_INFINITY);
    if incumbent_ll >= found.f_best {
        Ok(*incumbent)
    } else {
        Ok(candidate)
    }
}

/// A posterior function draw `f̂(x) = θᵀφ(x)`.
#[derive(Debug, Clone)]
pub struct PosteriorFunctionSample {
    weights: DVector<f64>,
    features: Arc<FeatureMap>,
    amplitude: f64,
}

impl PosteriorFunctionSample {
    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn features(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self.features.feature_vector(x)?.dot(&self.weights))
    }
}

/// Precomputed weight posterior for one GP and one feature map. Draws are
/// cheap once this is built, so many samples can share it.
#[derive(Debug, Clone)]
pub struct FunctionSampler {
    features: Arc<FeatureMap>,
    amplitude: f64,
    noise: f64,
    /// `B × n`, columns `φ(x_i)`.
    phi: DMatrix<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
    mean: DVector<f64>,
}

impl FunctionSampler {
    pub fn new(gp: &GpPosterior, features: Arc<FeatureMap>) -> Result<Self> {
        if features.dim() != gp.dim() {
            return Err(Error::invalid(format!(
                "feature map has dimension {}, GP has {}",
                features.dim(),
                gp.dim()
            )));
        }
        let amplitude = gp.params().amplitude();
        let data = gp.data();
        let b = features.count();
        if data.is_empty() {
            return Ok(Self {
                features,
                amplitude,
                noise: gp.effective_noise(),
                phi: DMatrix::zeros(b, 0),
                factor: None,
                mean: DVector::zeros(b),
            });
        }
        let mut phi = DMatrix::zeros(b, data.len());
        for (j, x) in data.points().iter().enumerate() {
            phi.set_column(j, &features.features_unchecked(x));
        }
        let inner = phi.tr_mul(&phi) * amplitude;
        let (factor, jitter) = factor_with_jitter(&inner, gp.params().noise, amplitude)?;
        let y = DVector::from_column_slice(data.values());
        let mean = &phi * factor.solve(&y) * amplitude;
        Ok(Self {
            features,
            amplitude,
            noise: gp.params().noise + jitter,
            phi,
            factor: Some(factor),
            mean,
        })
    }

    /// Posterior mean of the weights, `CΦA⁻¹y`.
    pub fn mean_weights(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn features(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    /// Draws `θ = θ̄ + θ₀ − CΦA⁻¹(Φᵀθ₀ + ε)` with `θ₀ ~ N(0, C·I_B)` and
    /// `ε ~ N(0, σ²I_n)`, which has exactly the weight-posterior covariance.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> PosteriorFunctionSample {
        let b = self.features.count();
        let sd = self.amplitude.sqrt();
        let prior = DVector::from_fn(b, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let weights = match &self.factor {
            None => prior,
            Some(factor) => {
                let n = self.phi.ncols();
                let noise_sd = self.noise.sqrt();
                let eps =
                    DVector::from_fn(n, |_, _| noise_sd * rng.sample::<f64, _>(StandardNormal));
                let residual = self.phi.tr_mul(&prior) + eps;
                let correction = &self.phi * factor.solve(&residual) * self.amplitude;
                &self.mean + prior - correction
            }
        };
        PosteriorFunctionSample {
            weights,
            features: Arc::clone(&self.features),
            amplitude: self.amplitude,
        }
    }
}

/// Draws one posterior function sample.
pub fn sample_posterior_function<R: Rng + ?Sized>(
    gp: &GpPosterior,
    features: &Arc<FeatureMap>,
    rng: &mut R,
) -> Result<PosteriorFunctionSample> {
    Ok(FunctionSampler::new(gp, Arc::clone(features))?.draw(rng))
}
