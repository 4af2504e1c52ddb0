//! Matérn-5/2 kernel, its spectral density, and random cosine features.
//!
//! A [`FeatureMap`] holds `B` frequencies drawn from the kernel's spectral
//! density together with uniform phases. The feature vector
//! `φ_i(x) = √(2/B)·cos(2π(s_i·x + b_i))` satisfies `E[φ(x)ᵀφ(y)] = k(x, y)`,
//! which is what lets the GP module draw whole functions from the posterior.
//!
//! Feature maps are amplitude-free: the kernel amplitude `C` is carried by
//! the weights that multiply the features, never by the map itself.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Default number of random features used by the optimization loop.
pub const DEFAULT_FEATURES: usize = 500;

/// Lengthscale and amplitude of `C·k_{5/2}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelParams {
    lengthscale: f64,
    amplitude: f64,
}

impl KernelParams {
    pub fn new(lengthscale: f64, amplitude: f64) -> Result<Self> {
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(Error::invalid(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::invalid(format!(
                "amplitude must be positive and finite, got {amplitude}"
            )));
        }
        Ok(Self {
            lengthscale,
            amplitude,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `C·k_{5/2}(|x − y|)`.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.amplitude * matern52_unchecked(euclidean(x, y), self.lengthscale)
    }
}

pub(crate) fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub(crate) fn matern52_unchecked(r: f64, lengthscale: f64) -> f64 {
    let z = SQRT5 * r / lengthscale;
    (1.0 + z + z * z / 3.0) * (-z).exp()
}

/// Unit-amplitude Matérn-5/2 kernel as a function of distance.
pub fn matern52(r: f64, lengthscale: f64) -> Result<f64> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::invalid(format!(
            "distance must be finite and nonnegative, got {r}"
        )));
    }
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(Error::invalid(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    Ok(matern52_unchecked(r, lengthscale))
}

/// Spectral density `S_ℓ(s)` of the unit-amplitude Matérn-5/2 kernel in
/// `dim` dimensions, with frequencies in cycles per input unit so that
/// `k(r) = ∫ e^{2πi s·r} S(|s|) ds`. Integrates to one over `R^dim`.
pub fn spectral_density(s: f64, lengthscale: f64, dim: usize) -> Result<f64> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::invalid(format!(
            "frequency norm must be finite and nonnegative, got {s}"
        )));
    }
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(Error::invalid(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    if dim < 1 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let d = dim as f64;
    let half_power = (d + 5.0) / 2.0;
    let log_norm = ln_gamma(half_power) + 2.5 * 5f64.ln()
        - (d + 11.0) / 2.0 * PI.ln()
        - 24f64.ln()
        - 5.0 * lengthscale.ln();
    let base = s * s + 5.0 / (4.0 * PI * PI * lengthscale * lengthscale);
    Ok((log_norm - half_power * base.ln()).exp())
}

/// Random frequencies and phases defining `φ: R^D → R^B`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `B × D`, one frequency per row.
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
}

impl FeatureMap {
    pub fn from_parts(frequencies: DMatrix<f64>, phases: Vec<f64>) -> Result<Self> {
        if frequencies.nrows() == 0 || frequencies.ncols() == 0 {
            return Err(Error::invalid("feature map needs B >= 1 and D >= 1"));
        }
        if phases.len() != frequencies.nrows() {
            return Err(Error::invalid(format!(
                "{} phases for {} frequencies",
                phases.len(),
                frequencies.nrows()
            )));
        }
        if frequencies.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("frequencies must be finite"));
        }
        if phases.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::invalid("phases must lie in [0, 1)"));
        }
        Ok(Self {
            frequencies,
            phases: DVector::from_vec(phases),
        })
    }

    /// Number of features `B`.
    pub fn count(&self) -> usize {
        self.frequencies.nrows()
    }

    /// Input dimension `D`.
    pub fn dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    pub fn feature_vector(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        Ok(self.features_unchecked(x))
    }

    /// `φ(x)ᵀφ(y)`, the Monte-Carlo estimate of `k_{5/2}(|x − y|)`.
    pub fn approx_kernel(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        Ok(self.features_unchecked(x).dot(&self.features_unchecked(y)))
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, feature map expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn features_unchecked(&self, x: &[f64]) -> DVector<f64> {
        let scale = (2.0 / self.count() as f64).sqrt();
        DVector::from_fn(self.count(), |i, _| {
            let mut arg = self.phases[i];
            for (j, xj) in x.iter().enumerate().take(self.dim()) {
                arg += self.frequencies[(i, j)] * xj;
            }
            scale * (2.0 * PI * arg).cos()
        })
    }
}

/// Draws a feature map for a kernel with the given lengthscale.
///
/// Frequencies use the multivariate Student-t representation of the
/// Matérn-5/2 spectral measure, `s = z·√(5/u) / (2πℓ)` with `z ~ N(0, I_D)`
/// and `u ~ χ²₅`; phases are uniform on `[0, 1)`.
pub fn sample_feature_map<R: Rng + ?Sized>(
    lengthscale: f64,
    dim: usize,
    count: usize,
    rng: &mut R,
) -> Result<FeatureMap> {
    if count == 0 {
        return Err(Error::invalid("feature count must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(lengthscale.is_finite() && lengthscale > 0.0) {
        return Err(Error::invalid(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    let chi2 = ChiSquared::new(5.0).expect("5 degrees of freedom is valid");
    let mut frequencies = DMatrix::zeros(count, dim);
    let mut phases = Vec::with_capacity(count);
    for i in 0..count {
        let u: f64 = chi2.sample(rng);
        let scale = (5.0 / u).sqrt() / (2.0 * PI * lengthscale);
        for j in 0..dim {
            let z: f64 = StandardNormal.sample(rng);
            frequencies[(i, j)] = z * scale;
        }
        phases.push(rng.random::<f64>());
    }
    Ok(FeatureMap {
        frequencies,
        phases: DVector::from_vec(phases),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matern_closed_form_values() {
        assert_eq!(matern52(0.0, 1.0).unwrap(), 1.0);
        // mpmath, 30 digits
        assert!((matern52(1.0, 1.0).unwrap() - 0.523_994_108_831_820_3).abs() < 1e-14);
        assert!((matern52(2.0, 1.0).unwrap() - 0.138_660_219_138_504_3).abs() < 1e-14);
    }

    #[test]
    fn matern_strictly_decreasing_on_grid() {
        let mut prev = matern52(0.0, 0.8).unwrap();
        assert_eq!(prev, 1.0);
        for i in 1..=100 {
            let k = matern52(i as f64 * 0.05, 0.8).unwrap();
            assert!(k < prev && k > 0.0, "not decreasing at step {i}");
            prev = k;
        }
    }

    #[test]
    fn matern_rejects_bad_arguments() {
        assert!(matern52(-1.0, 1.0).is_err());
        assert!(matern52(f64::NAN, 1.0).is_err());
        assert!(matern52(1.0, 0.0).is_err());
        assert!(matern52(1.0, -2.0).is_err());
    }

    #[test]
    fn spectral_density_at_origin_is_scaled_student_t() {
        // 2π × Student-t(ν=5) density at zero
        let t5_at_zero = (ln_gamma(3.0) - ln_gamma(2.5)).exp() / (5.0 * PI).sqrt();
        let expected = 2.0 * PI * t5_at_zero;
        let got = spectral_density(0.0, 1.0, 1).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 2.3852).abs() < 1e-4);
    }

    #[test]
    fn spectral_density_decreasing_and_validated() {
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let s = spectral_density(i as f64 * 0.1, 0.5, 3).unwrap();
            assert!(s < prev);
            prev = s;
        }
        assert!(spectral_density(0.1, 0.0, 1).is_err());
        assert!(spectral_density(0.1, 1.0, 0).is_err());
        assert!(spectral_density(-0.1, 1.0, 1).is_err());
    }

    #[test]
    fn feature_map_is_deterministic_per_seed() {
        let a = sample_feature_map(0.4, 3, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_feature_map(0.4, 3, 64, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = sample_feature_map(0.4, 3, 64, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.phases().iter().all(|b| (0.0..1.0).contains(b)));
    }

    #[test]
    fn zero_features_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_feature_map(1.0, 2, 0, &mut rng).is_err());
    }

    #[test]
    fn single_zero_frequency_feature_is_sqrt_two() {
        let fm = FeatureMap::from_parts(DMatrix::zeros(1, 2), vec![0.0]).unwrap();
        let phi = fm.feature_vector(&[0.3, -7.0]).unwrap();
        assert!((phi[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn features_bounded_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fm = sample_feature_map(0.7, 2, 200, &mut rng).unwrap();
        let bound = (2.0 / 200.0f64).sqrt();
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let y = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let phi = fm.feature_vector(&x).unwrap();
            assert!(phi.iter().all(|p| p.abs() <= bound + 1e-15));
            assert!(phi.norm_squared() <= 2.0 + 1e-12);
            assert!(fm.approx_kernel(&x, &x).unwrap() >= 0.0);
            assert_eq!(
                fm.approx_kernel(&x, &y).unwrap(),
                fm.approx_kernel(&y, &x).unwrap()
            );
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let fm = sample_feature_map(1.0, 3, 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(fm.feature_vector(&[0.0, 1.0]).is_err());
        assert!(fm.approx_kernel(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn from_parts_validates_phases() {
        assert!(FeatureMap::from_parts(DMatrix::zeros(2, 1), vec![0.0, 1.0]).is_err());
        assert!(FeatureMap::from_parts(DMatrix::zeros(2, 1), vec![0.0]).is_err());
    }
}
