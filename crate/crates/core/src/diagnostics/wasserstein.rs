use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sample size accepted by [`wasserstein_exact`].
pub const EXACT_MAX_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WassersteinMethod {
    ExactAssignment,
    Monotone1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WassersteinResult {
    pub r: f64,
    pub value: f64,
    pub method: WassersteinMethod,
    /// Set when `value` is only an upper bound on the optimal cost.
    pub upper_bound_flag: bool,
}

fn check_r(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("exponent r must lie in (0, 1], got {r}")))
    }
}

/// Minimal-cost perfect matching of a square cost matrix (row-major).
/// Returns `assignment[row] = column`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // Shortest augmenting paths with dual potentials, 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `(1/M) min_σ Σ |a_i - b_σ(i)|^r` between two uniform empirical measures
/// given as row-major `M x dim` arrays.
pub fn wasserstein_exact(a: &[f64], b: &[f64], dim: usize, r: f64) -> Result<WassersteinResult> {
    check_r(r)?;
    if dim == 0 || !a.len().is_multiple_of(dim) || a.len() != b.len() {
        return Err(Error::invalid("samples must have equal size and matching dimension"));
    }
    let m = a.len() / dim;
    if m == 0 {
        return Err(Error::invalid("samples are empty"));
    }
    if m > EXACT_MAX_SAMPLES {
        return Err(Error::invalid(format!(
            "exact assignment is capped at {EXACT_MAX_SAMPLES} samples (got {m}); use the monotone 1d method"
        )));
    }
    let rows_a: Vec<&[f64]> = a.chunks_exact(dim).collect();
    let rows_b: Vec<&[f64]> = b.chunks_exact(dim).collect();
    let cost: Vec<f64> = rows_a
        .iter()
        .flat_map(|x| rows_b.iter().map(move |y| dist(x, y).powf(r)))
        .collect();
    let assignment = min_cost_assignment(&cost, m);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    Ok(WassersteinResult {
        r,
        value: total / m as f64,
        method: WassersteinMethod::ExactAssignment,
        upper_bound_flag: false,
    })
}

/// Cost of the sorted (monotone) coupling of two scalar samples. Exact for
/// `r = 1`, an upper bound for `r < 1`.
pub fn wasserstein_1d_monotone(a: &[f64], b: &[f64], r: f64) -> Result<WassersteinResult> {
    check_r(r)?;
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("samples must be non-empty and of equal size"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(r)).sum();
    Ok(WassersteinResult {
        r,
        value: total / a.len() as f64,
        method: WassersteinMethod::Monotone1d,
        upper_bound_flag: r < 1.0,
    })
}
