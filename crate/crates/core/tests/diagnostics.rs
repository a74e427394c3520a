use bemsde::diagnostics::{
    fit_order, ks_scan, ks_two_sample, wasserstein_1d_monotone, wasserstein_exact,
};
use bemsde::ensemble::{EnsembleSnapshot, LevelError};
use bemsde::{Exec, Scheme};
use itertools::Itertools;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sample_vec(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0_f64, len)
}

fn brute_force_d(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter().chain(b).map(|&x| (ecdf(a, x) - ecdf(b, x)).abs()).fold(0.0, f64::max)
}

fn permutation_oracle(a: &[f64], b: &[f64], r: f64) -> f64 {
    let m = a.len();
    (0..m)
        .permutations(m)
        .map(|p| p.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).abs().powf(r)).sum::<f64>() / m as f64)
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn ks_matches_brute_force(a in sample_vec(1..40), b in sample_vec(1..40)) {
        let r = ks_two_sample(&a, &b).unwrap();
        prop_assert_eq!(r.d_stat, brute_force_d(&a, &b));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn ks_invariant_under_increasing_maps(a in sample_vec(1..40), b in sample_vec(1..40)) {
        let d = ks_two_sample(&a, &b).unwrap().d_stat;
        let t = |x: &f64| (x / 10.0).atan() * 3.0 + x.powi(3) / 1000.0;
        let ta: Vec<f64> = a.iter().map(t).collect();
        let tb: Vec<f64> = b.iter().map(t).collect();
        prop_assert_eq!(ks_two_sample(&ta, &tb).unwrap().d_stat, d);
    }

    #[test]
    fn exact_matches_permutations(a in sample_vec(4..5), b in sample_vec(4..5), r in 0.05..=1.0_f64) {
        let w = wasserstein_exact(&a, &b, 1, r).unwrap().value;
        let oracle = permutation_oracle(&a, &b, r);
        prop_assert!((w - oracle).abs() <= 1e-12 * (1.0 + oracle));
    }

    #[test]
    fn exact_is_symmetric(a in sample_vec(6..7), b in sample_vec(6..7), r in 0.1..=1.0_f64) {
        let ab = wasserstein_exact(&a, &b, 2, r).unwrap().value;
        let ba = wasserstein_exact(&b, &a, 2, r).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
    }

    #[test]
    fn exact_triangle_inequality(
        a in sample_vec(10..11), b in sample_vec(10..11), c in sample_vec(10..11), r in 0.1..=1.0_f64,
    ) {
        let w = |x: &[f64], y: &[f64]| wasserstein_exact(x, y, 2, r).unwrap().value;
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
    }

    #[test]
    fn monotone_equals_exact_for_r1(a in sample_vec(1..64), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(-50.0..50.0)).collect();
        let exact = wasserstein_exact(&a, &b, 1, 1.0).unwrap().value;
        let mono = wasserstein_1d_monotone(&a, &b, 1.0).unwrap().value;
        prop_assert!((exact - mono).abs() <= 1e-12 * (1.0 + exact));
    }

    #[test]
    fn exact_below_monotone_for_r_below_1(a in sample_vec(2..40), seed in any::<u64>(), r in 0.05..0.999_f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(-50.0..50.0)).collect();
        let exact = wasserstein_exact(&a, &b, 1, r).unwrap().value;
        let mono = wasserstein_1d_monotone(&a, &b, r).unwrap();
        prop_assert!(mono.upper_bound_flag);
        prop_assert!(exact <= mono.value + 1e-12 * (1.0 + mono.value));
    }

    #[test]
    fn fit_recovers_power_law(p in 0.1..3.0_f64, c in 0.01..100.0_f64) {
        let pts: Vec<LevelError> = (0..5)
            .map(|k| {
                let h = 0.1 / 2f64.powi(k);
                LevelError { h, rms: c * h.powf(p), stderr: 0.0 }
            })
            .collect();
        let rep = fit_order(&pts).unwrap();
        prop_assert!((rep.slope - p).abs() < 1e-12);
    }
}

#[test]
fn exact_zero_only_for_equal_multisets() {
    let a = [1.0, 2.0, 3.0];
    let b = [3.0, 1.0, 2.0];
    assert_eq!(wasserstein_exact(&a, &b, 1, 0.5).unwrap().value, 0.0);
    assert!(wasserstein_exact(&a, &[1.0, 2.0, 3.1], 1, 0.5).unwrap().value > 0.0);
}

#[test]
fn noisy_square_root_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let pts: Vec<LevelError> = (0..5)
            .map(|k| {
                let h = 2f64.powi(-5 - k);
                let noise: f64 = rng.sample(StandardNormal);
                LevelError { h, rms: 0.7 * h.sqrt() * (1.0 + 0.01 * noise), stderr: 0.0 }
            })
            .collect();
        let s = fit_order(&pts).unwrap().slope;
        assert!((0.45..=0.55).contains(&s), "slope {s}");
    }
}

#[test]
fn ks_detects_shifted_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..1000).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = (0..1000).map(|_| 5.0 + rng.sample::<f64, _>(StandardNormal)).collect();
    assert!(ks_two_sample(&a, &b).unwrap().p_value < 0.001);
}

fn snapshot(time: f64, samples: Vec<f64>) -> EnsembleSnapshot {
    EnsembleSnapshot {
        time,
        h: 0.01,
        dim: 2,
        path_ids: (0..samples.len() / 2).collect(),
        samples,
        scheme: Scheme::Bem,
        model: "t".into(),
        rng_digest: String::new(),
        nonfinite_count: 0,
    }
}

#[test]
fn scan_of_identical_snapshots_is_flat() {
    let s: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
    let snaps: Vec<_> = (0..4).map(|k| snapshot(k as f64 * 0.01, s.clone())).collect();
    let rows = ks_scan(&snaps, Exec::Sequential).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ks.d_stat == 0.0));
    assert_eq!((rows[1].t, rows[1].ks.coord), (0.01, 1));
    assert_eq!(rows, ks_scan(&snaps, Exec::Parallel).unwrap());
    assert!(ks_scan(&snaps[..1], Exec::Sequential).is_err());
}
