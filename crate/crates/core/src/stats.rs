//! Distance correlation and multiscale graph correlation of paired scalars.
//!
//! Distance correlation uses the biased (V-statistic) double-centering.
//!
//! MGC follows the reference definition: each distance matrix is centered
//! by its column means with the diagonal zeroed, neighbor ranks are taken
//! within each column (ties broken by sample index), and the local
//! covariance at scale `(k, l)` keeps pair `(i, j)` when `i` is among the
//! `k` nearest neighbors of `j` in `u` and `j` is among the `l` nearest
//! neighbors of `i` in `v`. The statistic is the maximum over the largest
//! connected region of significant local correlations, falling back to the
//! global-scale entry when that region is too small.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::function::beta::inv_beta_reg;

use crate::error::{Error, Result};

/// Fewest paired samples accepted by the statistics.
pub const MIN_SAMPLES: usize = 4;

/// Two equally long finite samples.
#[derive(Debug, Clone, Copy)]
pub struct PairedSamples<'a> {
    u: &'a [f64],
    v: &'a [f64],
}

impl<'a> PairedSamples<'a> {
    pub fn new(u: &'a [f64], v: &'a [f64]) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::invalid(format!(
                "paired samples differ in length: {} vs {}",
                u.len(),
                v.len()
            )));
        }
        if u.len() < MIN_SAMPLES {
            return Err(Error::TooFewSamples {
                needed: MIN_SAMPLES,
                got: u.len(),
            });
        }
        if u.iter().chain(v).any(|x| !x.is_finite()) {
            return Err(Error::invalid("paired samples must be finite"));
        }
        Ok(Self { u, v })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u(&self) -> &[f64] {
        self.u
    }

    pub fn v(&self) -> &[f64] {
        self.v
    }
}

/// Symmetric `M × M` matrix of absolute differences, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.size).map(|i| self.row(i).to_vec()).collect()
    }
}

pub fn pairwise_distances(samples: &[f64]) -> Result<DistanceMatrix> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    Ok(distances_unchecked(samples))
}

fn distances_unchecked(samples: &[f64]) -> DistanceMatrix {
    let n = samples.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (samples[i] - samples[j]).abs();
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { size: n, data }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceResult {
    pub statistic: f64,
    /// `(k*, l*)` neighborhood sizes, 1-based. Only set by MGC.
    pub optimal_scale: Option<(usize, usize)>,
}

/// V-statistic distance correlation in `[0, 1]`; zero when either side
/// has zero distance variance.
pub fn distance_correlation(p: PairedSamples<'_>) -> Result<DependenceResult> {
    let a = double_centered(&distances_unchecked(p.u));
    let b = double_centered(&distances_unchecked(p.v));
    let mut xy = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for (x, y) in a.iter().zip(&b) {
        xy += x * y;
        xx += x * x;
        yy += y * y;
    }
    let statistic = if xx <= 0.0 || yy <= 0.0 {
        0.0
    } else {
        (xy.max(0.0) / (xx * yy).sqrt()).sqrt()
    };
    Ok(DependenceResult {
        statistic,
        optimal_scale: None,
    })
}

fn double_centered(d: &DistanceMatrix) -> Vec<f64> {
    let n = d.size;
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            // symmetric, so column means equal row means
            out[i * n + j] = d.get(i, j) - row_means[i] - row_means[j] + grand;
        }
    }
    out
}

/// Local correlations `c^{kl}` for `k, l ∈ 1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalCorrMap {
    size: usize,
    data: Vec<f64>,
}

impl LocalCorrMap {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry at 1-based scales `(k, l)`.
    pub fn at(&self, k: usize, l: usize) -> f64 {
        assert!(
            (1..=self.size).contains(&k) && (1..=self.size).contains(&l),
            "scale ({k}, {l}) outside 1..={}",
            self.size
        );
        self.data[(k - 1) * self.size + (l - 1)]
    }

    /// The global-scale entry `(M, M)`.
    pub fn global(&self) -> f64 {
        self.data[self.size * self.size - 1]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.size).map(<[f64]>::to_vec).collect()
    }
}

/// Column-centered distances with zero diagonal, and ordinal ranks within
/// each column (rank 1 is the nearest point, normally the point itself).
struct CenteredRanked {
    centered: Vec<f64>,
    ranks: Vec<usize>,
}

fn center_and_rank(d: &DistanceMatrix) -> CenteredRanked {
    let n = d.size;
    let mut centered = vec![0.0; n * n];
    let mut ranks = vec![0usize; n * n];
    let mut order: Vec<usize> = (0..n).collect();
    for j in 0..n {
        let col_sum: f64 = (0..n).map(|i| d.get(i, j)).sum();
        let shift = col_sum / (n - 1) as f64;
        for i in 0..n {
            if i != j {
                centered[i * n + j] = d.get(i, j) - shift;
            }
        }
        // stable sort keeps index order among ties
        order.sort_by(|&a, &b| d.get(a, j).total_cmp(&d.get(b, j)));
        for (rank, &i) in order.iter().enumerate() {
            ranks[i * n + j] = rank + 1;
        }
        order.sort_unstable();
    }
    CenteredRanked { centered, ranks }
}

pub fn local_correlation_map(p: PairedSamples<'_>) -> Result<LocalCorrMap> {
    let n = p.len();
    let x = center_and_rank(&distances_unchecked(p.u));
    let y = center_and_rank(&distances_unchecked(p.v));

    // Pair (i, j) contributes A_ij·B_ji at x-scale R^x_ij and y-scale R^y_ji.
    let mut cov = vec![0.0; n * n];
    let mut sum_x = vec![0.0; n];
    let mut sum_y = vec![0.0; n];
    let mut var_x = vec![0.0; n];
    let mut var_y = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let ij = i * n + j;
            let ji = j * n + i;
            let a = x.centered[ij];
            let b = y.centered[ji];
            let kx = x.ranks[ij] - 1;
            let ly = y.ranks[ji] - 1;
            cov[kx * n + ly] += a * b;
            sum_x[kx] += a;
            sum_y[ly] += b;
            var_x[kx.max(x.ranks[ji] - 1)] += a * x.centered[ji];
            var_y[(y.ranks[ij] - 1).max(ly)] += y.centered[ij] * b;
        }
    }

    for k in 1..n {
        sum_x[k] += sum_x[k - 1];
        sum_y[k] += sum_y[k - 1];
        var_x[k] += var_x[k - 1];
        var_y[k] += var_y[k - 1];
    }
    for k in 0..n {
        for l in 0..n {
            let mut v = cov[k * n + l];
            if k > 0 {
                v += cov[(k - 1) * n + l];
            }
            if l > 0 {
                v += cov[k * n + l - 1];
            }
            if k > 0 && l > 0 {
                v -= cov[(k - 1) * n + l - 1];
            }
            cov[k * n + l] = v;
        }
    }

    let nn = (n * n) as f64;
    let local_var_x: Vec<f64> = (0..n).map(|k| var_x[k] - sum_x[k] * sum_x[k] / nn).collect();
    let local_var_y: Vec<f64> = (0..n).map(|l| var_y[l] - sum_y[l] * sum_y[l] / nn).collect();

    let mut data = vec![0.0; n * n];
    for k in 0..n {
        for l in 0..n {
            let (vx, vy) = (local_var_x[k], local_var_y[l]);
            if vx <= 0.0 || vy <= 0.0 {
                continue;
            }
            let c = (cov[k * n + l] - sum_x[k] * sum_y[l] / nn) / (vx * vy).sqrt();
            data[k * n + l] = if c.is_finite() { c.clamp(-1.0, 1.0) } else { 0.0 };
        }
    }
    Ok(LocalCorrMap { size: n, data })
}

thread_local! {
    static THRESHOLDS: RefCell<HashMap<usize, f64>> = RefCell::new(HashMap::new());
}

/// Beta-approximation null quantile for local correlations at level
/// `1 − 0.02/(M−1)`, mapped from `[0, 1]` to `[−1, 1]`. Returns `+∞` when
/// the approximation is undefined (very small `M`).
fn significance_threshold(m: usize) -> f64 {
    THRESHOLDS.with(|cache| {
        *cache.borrow_mut().entry(m).or_insert_with(|| {
            let dof = (m - 1) as f64;
            let shape = dof * (dof - 3.0) / 4.0 - 0.5;
            if shape <= 0.0 {
                return f64::INFINITY;
            }
            let level = 1.0 - 0.02 / dof;
            inv_beta_reg(shape, shape, level) * 2.0 - 1.0
        })
    })
}

/// Labels of the largest 4-connected component of `mask` (ties go to the
/// component reached first in row-major order).
fn largest_component(mask: &[bool], n: usize) -> Vec<bool> {
    let mut label = vec![0usize; n * n];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..n * n {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        let id = sizes.len();
        sizes.push(0);
        label[start] = id;
        stack.push(start);
        while let Some(cell) = stack.pop() {
            sizes[id] += 1;
            let (r, c) = (cell / n, cell % n);
            let mut visit = |nb: usize| {
                if mask[nb] && label[nb] == 0 {
                    label[nb] = id;
                    stack.push(nb);
                }
            };
            if r > 0 {
                visit(cell - n);
            }
            if r + 1 < n {
                visit(cell + n);
            }
            if c > 0 {
                visit(cell - 1);
            }
            if c + 1 < n {
                visit(cell + 1);
            }
        }
    }
    let mut best = 0;
    for id in 1..sizes.len() {
        if best == 0 || sizes[id] > sizes[best] {
            best = id;
        }
    }
    label.iter().map(|&l| best != 0 && l == best).collect()
}

/// Smoothed maximum of the local correlation map; never below the
/// global-scale entry.
pub fn mgc_statistic(p: PairedSamples<'_>) -> Result<DependenceResult> {
    let map = local_correlation_map(p)?;
    Ok(smoothed_maximum(&map))
}

const TIE_TOLERANCE: f64 = 1e-12;

pub fn smoothed_maximum(map: &LocalCorrMap) -> DependenceResult {
    let n = map.size;
    let global = map.global();
    let fallback = DependenceResult {
        statistic: global,
        optimal_scale: Some((n, n)),
    };
    // absorb rounding so entries tied with the global one are not significant
    let threshold = significance_threshold(n).max(global) + TIE_TOLERANCE;
    let mask: Vec<bool> = map.data.iter().map(|&c| c > threshold).collect();
    if !mask.iter().any(|&b| b) {
        return fallback;
    }
    let region = largest_component(&mask, n);
    let area = region.iter().filter(|&&b| b).count();
    let min_area = (0.02 * n as f64).ceil() as usize * n;
    if area < min_area {
        return fallback;
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (idx, (&c, &inside)) in map.data.iter().zip(&region).enumerate() {
        // later cells win ties
        if inside && c >= best {
            best = c;
            best_idx = idx;
        }
    }
    if best < global {
        return fallback;
    }
    DependenceResult {
        statistic: best,
        optimal_scale: Some((best_idx / n + 1, best_idx % n + 1)),
    }
}
