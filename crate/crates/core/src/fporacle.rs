//! Stationary density of a scalar diffusion `dX = μ(X) dt + σ(X) dW` from
//! the zero-flux solution of its stationary Fokker–Planck equation,
//! `π(x) ∝ σ(x)^-2 exp(∫_{x0}^x 2μ/σ²)`.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{ks_one_sample, KsResult};
use crate::error::{Error, Result};

pub const MIN_GRID_CELLS: usize = 256;
const SIMPSON_TOL: f64 = 1e-10;
const SIMPSON_MAX_DEPTH: u32 = 30;

/// Density tabulated on a uniform grid over `[a, b]`, normalised by the
/// trapezoid rule. Between nodes it is linear, which fixes the CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDensity1D {
    pub domain: (f64, f64),
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// `ln ∫ σ^-2 exp(Φ)` over the domain, with `Φ(midpoint) = 0`.
    pub log_normalizer: f64,
    cdf_nodes: Vec<f64>,
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
    let m = 0.5 * (a + b);
    let fm = f(m);
    ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    fa: f64,
    b: f64,
    fb: f64,
    m: f64,
    fm: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let (left, lm, flm) = simpson(f, a, fa, m, fm);
    let (right, rm, frm) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol.max(1e-14 * (left + right).abs()) {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
        + adaptive(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature with local absolute tolerance `1e-10`
/// (relaxed to 1e-14 relative where the integral is large).
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    adaptive(f, a, fa, b, fb, m, fm, whole, SIMPSON_TOL, SIMPSON_MAX_DEPTH)
}

/// Locates a zero of `sigma` on `[lo, hi]`, given a sign change.
fn bisect_zero(sigma: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let s_lo = sigma(lo).signum();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = sigma(mid);
        if s == 0.0 {
            return mid;
        }
        if s.signum() == s_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Tabulates the stationary density on `cells + 1` equally spaced nodes of
/// `[a, b]`.
pub fn solve_stationary_1d(
    mu: impl Fn(f64) -> f64,
    sigma: impl Fn(f64) -> f64,
    domain: (f64, f64),
    cells: usize,
) -> Result<StationaryDensity1D> {
    let (a, b) = domain;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::invalid(format!("invalid domain ({a}, {b})")));
    }
    if cells < MIN_GRID_CELLS {
        return Err(Error::invalid(format!("grid needs at least {MIN_GRID_CELLS} cells, got {cells}")));
    }
    let dx = (b - a) / cells as f64;
    let grid: Vec<f64> = (0..=cells).map(|i| if i == cells { b } else { a + i as f64 * dx }).collect();

    let sig: Vec<f64> = grid.iter().map(|&x| sigma(x)).collect();
    for (i, &s) in sig.iter().enumerate() {
        if s == 0.0 || !s.is_finite() {
            return Err(Error::Domain { x: grid[i] });
        }
        if i > 0 && s.signum() != sig[i - 1].signum() {
            return Err(Error::Domain {
                x: bisect_zero(&sigma, grid[i - 1], grid[i]),
            });
        }
    }

    let integrand = |x: f64| {
        let s = sigma(x);
        2.0 * mu(x) / (s * s)
    };
    let mut phi = vec![0.0; grid.len()];
    for i in 1..grid.len() {
        let piece = integrate(&integrand, grid[i - 1], grid[i]);
        if !piece.is_finite() {
            return Err(Error::Domain { x: 0.5 * (grid[i - 1] + grid[i]) });
        }
        phi[i] = phi[i - 1] + piece;
    }
    let mid = 0.5 * (a + b);
    let j = (((mid - a) / dx).floor() as usize).min(cells - 1);
    let offset = phi[j] + integrate(&integrand, grid[j], mid);

    let log_pi: Vec<f64> = phi
        .iter()
        .zip(&sig)
        .map(|(p, s)| p - offset - (s * s).ln())
        .collect();
    let shift = log_pi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::DivergentDensity(format!("log-density maximum is {shift}")));
    }
    let raw: Vec<f64> = log_pi.iter().map(|l| (l - shift).exp()).collect();
    let mass = trapezoid(&raw, dx);
    let log_normalizer = mass.ln() + shift;
    if !(mass > 0.0) || !log_normalizer.is_finite() {
        return Err(Error::DivergentDensity(format!("normaliser is {}", log_normalizer.exp())));
    }
    let values: Vec<f64> = raw.iter().map(|v| v / mass).collect();
    let mut cdf_nodes = vec![0.0; values.len()];
    for i in 1..values.len() {
        cdf_nodes[i] = cdf_nodes[i - 1] + 0.5 * dx * (values[i - 1] + values[i]);
    }
    Ok(StationaryDensity1D {
        domain,
        grid,
        values,
        log_normalizer,
        cdf_nodes,
    })
}

fn trapezoid(v: &[f64], dx: f64) -> f64 {
    let inner: f64 = v[1..v.len() - 1].iter().sum();
    dx * (inner + 0.5 * (v[0] + v[v.len() - 1]))
}

impl StationaryDensity1D {
    fn dx(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    /// Trapezoid integral of the tabulated values.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.values, self.dx())
    }

    fn cell(&self, x: f64) -> usize {
        let i = ((x - self.domain.0) / self.dx()).floor() as usize;
        i.min(self.grid.len() - 2)
    }

    /// Piecewise-linear interpolant of the density; zero outside the domain.
    pub fn pdf(&self, x: f64) -> f64 {
        if !(x >= self.domain.0 && x <= self.domain.1) {
            return 0.0;
        }
        let i = self.cell(x);
        let t = (x - self.grid[i]) / self.dx();
        self.values[i] + t * (self.values[i + 1] - self.values[i])
    }

    /// Exact integral of the interpolant from `a` to `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.domain.0 {
            return 0.0;
        }
        if x >= self.domain.1 {
            return 1.0;
        }
        let i = self.cell(x);
        let dx = self.dx();
        let s = x - self.grid[i];
        let slope = (self.values[i + 1] - self.values[i]) / dx;
        (self.cdf_nodes[i] + self.values[i] * s + 0.5 * slope * s * s).min(1.0)
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf_nodes.partition_point(|&c| c < u).clamp(1, self.grid.len() - 1) - 1;
        let (mut lo, mut hi) = (self.grid[i], self.grid[i + 1]);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// `m` independent draws by inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Vec<f64> {
        (0..m).map(|_| self.inverse_cdf(rng.random::<f64>())).collect()
    }

    /// CSV `x,pi`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,pi")?;
        for (x, p) in self.grid.iter().zip(&self.values) {
            writeln!(w, "{x},{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityFit {
    pub ks: KsResult,
    /// Samples outside the oracle domain; they enter the statistic with
    /// CDF 0 or 1.
    pub out_of_domain: usize,
}

impl DensityFit {
    pub fn out_of_domain_fraction(&self) -> f64 {
        self.out_of_domain as f64 / self.ks.m as f64
    }
}

/// One-sample K-S test of `samples` against the oracle CDF.
pub fn ks_against_density(samples: &[f64], density: &StationaryDensity1D) -> Result<DensityFit> {
    let ks = ks_one_sample(samples, |x| density.cdf(x))?;
    let (a, b) = density.domain;
    let out_of_domain = samples.iter().filter(|&&x| !(x >= a && x <= b)).count();
    Ok(DensityFit { ks, out_of_domain })
}
