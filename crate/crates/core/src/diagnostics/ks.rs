use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSnapshot;
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Two-sample (or one-sample, `n = 0`) Kolmogorov–Smirnov outcome for one
/// coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_stat: f64,
    pub p_value: f64,
    pub m: usize,
    pub n: usize,
    pub coord: usize,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2 k² λ²)`.
///
/// For small `λ` the alternating series converges too slowly, so the dual
/// theta-function form `1 - √(2π)/λ Σ exp(-(2k-1)² π² / (8 λ²))` is used.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        let s: f64 = (1..)
            .map(|k: i32| {
                let j = f64::from(2 * k - 1);
                (-(j * j) * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp()
            })
            .take_while(|t| *t > 1e-16)
            .take(100)
            .sum();
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = f64::from(k);
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-12 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

fn p_from_d(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_q((s + 0.12 + 0.11 / s) * d)
}

fn check_sample(x: &[f64], name: &str) -> Result<()> {
    if x.is_empty() {
        return Err(Error::invalid(format!("{name} sample is empty")));
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{name} sample contains non-finite value {v}")));
    }
    Ok(())
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Exact `D` for two ascending samples by a merge scan over the pooled jump
/// points.
pub fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / m - j as f64 / n).abs());
    }
    // Once one sample is exhausted the gap only shrinks toward zero, except
    // right at the switch, which the loop has already seen.
    d
}

/// Two-sample test on ascending samples.
pub fn ks_two_sample_sorted(a: &[f64], b: &[f64]) -> Result<KsResult> {
    check_sample(a, "first")?;
    check_sample(b, "second")?;
    let d = ks_statistic_sorted(a, b);
    let (m, n) = (a.len(), b.len());
    let ne = (m * n) as f64 / (m + n) as f64;
    Ok(KsResult {
        d_stat: d,
        p_value: p_from_d(d, ne),
        m,
        n,
        coord: 0,
    })
}

/// Two-sample test; inputs need not be sorted.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    ks_two_sample_sorted(&sorted(a), &sorted(b))
}

/// One-sample test of `samples` against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    check_sample(samples, "")?;
    let s = sorted(samples);
    let m = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i + 1) as f64 / m - f).max(f - i as f64 / m)
        })
        .fold(0.0_f64, f64::max);
    Ok(KsResult {
        d_stat: d,
        p_value: p_from_d(d, m),
        m: s.len(),
        n: 0,
        coord: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    /// Time of the later snapshot of the compared pair.
    pub t: f64,
    pub ks: KsResult,
}

/// K-S tests between consecutive snapshots, per coordinate.
pub fn ks_scan(snapshots: &[EnsembleSnapshot], exec: Exec) -> Result<Vec<ScanRow>> {
    if snapshots.len() < 2 {
        return Err(Error::invalid("need at least two snapshots"));
    }
    let dim = snapshots[0].dim;
    if snapshots.iter().any(|s| s.dim != dim) {
        return Err(Error::invalid("snapshots differ in dimension"));
    }
    let marginals: Vec<Vec<Vec<f64>>> = par::map_indexed(exec, snapshots.len(), |i| {
        (0..dim).map(|k| sorted(&snapshots[i].coordinate(k))).collect()
    });
    let rows = par::map_indexed(exec, (snapshots.len() - 1) * dim, |idx| {
        let (i, k) = (idx / dim, idx % dim);
        ks_two_sample_sorted(&marginals[i][k], &marginals[i + 1][k]).map(|ks| ScanRow {
            t: snapshots[i + 1].time,
            ks: KsResult { coord: k, ..ks },
        })
    });
    rows.into_iter().collect::<std::result::Result<_, Error>>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn brute_force_d(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&x| (ecdf(a, x) - ecdf(b, x)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn equal_samples() {
        let a = [0.3, -1.0, 2.0, 2.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.d_stat, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn disjoint_supports() {
        let r = ks_two_sample(&[1.0, 2.0, 3.0], &[4.0, 5.0]).unwrap();
        assert_eq!(r.d_stat, 1.0);
    }

    #[test]
    fn merge_scan_matches_brute_force() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.5, 2.5, 3.5];
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.d_stat, brute_force_d(&a, &b));
        assert_relative_eq!(r.d_stat, 1.0 / 3.0);
    }

    #[test]
    fn empty_and_nonfinite_rejected() {
        assert!(ks_two_sample(&[], &[1.0]).is_err());
        assert!(ks_two_sample(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn q_known_values() {
        assert_eq!(kolmogorov_q(0.0), 1.0);
        // Q(1.3581) is the classic 5% critical value.
        assert_relative_eq!(kolmogorov_q(1.3581), 0.05, epsilon = 1e-4);
        assert_relative_eq!(kolmogorov_q(1.2238), 0.10, epsilon = 1e-4);
        assert_relative_eq!(kolmogorov_q(1.6276), 0.01, epsilon = 1e-4);
        // Both branches agree where they meet.
        let two = |l: f64| 2.0 * (1..50).map(|k| {
            let k = f64::from(k);
            let s = if k as i32 % 2 == 1 { 1.0 } else { -1.0 };
            s * (-2.0 * k * k * l * l).exp()
        }).sum::<f64>();
        for l in [0.6, 0.8, 1.0, 1.17] {
            assert_relative_eq!(kolmogorov_q(l), two(l), epsilon = 1e-12);
        }
    }

    #[test]
    fn q_monotone() {
        let mut prev = 1.0;
        for i in 1..400 {
            let q = kolmogorov_q(f64::from(i) * 0.01);
            assert!(q <= prev + 1e-15);
            prev = q;
        }
    }

    #[test]
    fn one_sample_degenerate() {
        let r = ks_one_sample(&[0.0; 50], |x| 1.0 / (1.0 + (-x).exp())).unwrap();
        assert_relative_eq!(r.d_stat, 0.5);
        let r = ks_one_sample(&[10.0; 50], |x| 1.0 / (1.0 + (-x).exp())).unwrap();
        assert!(r.d_stat > 0.99);
    }
}
