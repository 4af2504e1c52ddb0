use mgcbo::stats::{
    distance_correlation, local_correlation_map, mgc_statistic, PairedSamples,
};
mod common;

use common::{brute_force_map, dcov2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn local_map_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, rounded) in [(9, false), (12, false), (10, true)] {
        let mut u = normals(&mut rng, n);
        let mut v: Vec<f64> = u.iter().map(|x| x.sin() + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        if rounded {
            // induce distance ties
            u.iter_mut().for_each(|x| *x = x.round());
            v.iter_mut().for_each(|x| *x = (2.0 * *x).round());
        }
        let fast = local_correlation_map(PairedSamples::new(&u, &v).unwrap()).unwrap();
        let slow = brute_force_map(&u, &v);
        for k in 1..=n {
            for l in 1..=n {
                assert!(
                    (fast.at(k, l) - slow[k - 1][l - 1]).abs() < 1e-10,
                    "n={n} ({k},{l}): {} vs {}",
                    fast.at(k, l),
                    slow[k - 1][l - 1]
                );
            }
        }
    }
}

#[test]
fn dcorr_matches_expansion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [5, 20, 50] {
        let u = normals(&mut rng, n);
        let v: Vec<f64> = u.iter().map(|x| x * x + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let expected = (dcov2(&u, &v) / (dcov2(&u, &u) * dcov2(&v, &v)).sqrt()).sqrt();
        let got = distance_correlation(PairedSamples::new(&u, &v).unwrap()).unwrap().statistic;
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }
}

#[test]
fn mgc_detects_dependence_and_stays_small_under_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut null_stats = Vec::new();
    let mut dep_stats = Vec::new();
    for _ in 0..50 {
        let u = normals(&mut rng, 50);
        let w = normals(&mut rng, 50);
        null_stats.push(mgc_statistic(PairedSamples::new(&u, &w).unwrap()).unwrap().statistic);
        let v: Vec<f64> = u.iter().zip(&w).map(|(x, e)| x * x + 0.2 * e).collect();
        dep_stats.push(mgc_statistic(PairedSamples::new(&u, &v).unwrap()).unwrap().statistic);
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&null_stats).abs() < 0.05, "{}", mean(&null_stats));
    // the significance threshold keeps most null samples at the global scale
    assert!(null_stats.iter().filter(|&&s| s > 0.2).count() <= 5);
    assert!(dep_stats.iter().all(|&s| s > 0.3), "{dep_stats:?}");
}

fn sample_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (6usize..25).prop_flat_map(|n| {
        (
            prop::collection::vec(-5.0f64..5.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn statistics_are_symmetric((u, v) in sample_strategy()) {
        let a = PairedSamples::new(&u, &v).unwrap();
        let b = PairedSamples::new(&v, &u).unwrap();
        let ma = local_correlation_map(a).unwrap();
        let mb = local_correlation_map(b).unwrap();
        for k in 1..=u.len() {
            for l in 1..=u.len() {
                prop_assert!((ma.at(k, l) - mb.at(l, k)).abs() < 1e-10);
            }
        }
        let da = distance_correlation(a).unwrap().statistic;
        let db = distance_correlation(b).unwrap().statistic;
        prop_assert!((da - db).abs() < 1e-12);
        let sa = mgc_statistic(a).unwrap().statistic;
        let sb = mgc_statistic(b).unwrap().statistic;
        prop_assert!((sa - sb).abs() < 1e-10);
    }

    #[test]
    fn statistics_are_affine_invariant(
        (u, v) in sample_strategy(),
        scale in 0.1f64..10.0,
        shift in -100.0f64..100.0,
    ) {
        let u2: Vec<f64> = u.iter().map(|x| scale * x + shift).collect();
        let v2: Vec<f64> = v.iter().map(|x| shift - x / scale).collect();
        let a = PairedSamples::new(&u, &v).unwrap();
        let b = PairedSamples::new(&u2, &v2).unwrap();
        let ra = mgc_statistic(a).unwrap();
        let rb = mgc_statistic(b).unwrap();
        prop_assert!((ra.statistic - rb.statistic).abs() < 1e-8, "{} vs {}", ra.statistic, rb.statistic);
        let da = distance_correlation(a).unwrap().statistic;
        let db = distance_correlation(b).unwrap().statistic;
        prop_assert!((da - db).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&ra.statistic));
        prop_assert!((0.0..=1.0).contains(&da));
    }
}
