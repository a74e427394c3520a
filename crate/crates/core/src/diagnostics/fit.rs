use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ensemble::LevelError;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub points: Vec<LevelError>,
    /// Least-squares slope of `log rms` against `log h`.
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the log-log fit.
    pub residual: f64,
}

impl ConvergenceReport {
    /// Constant `C` in `rms ≈ C h^slope`.
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }

    /// CSV `h,rms,stderr`, closed by a `slope,<slope>,<intercept>` row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "h,rms,stderr")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.h, p.rms, p.stderr)?;
        }
        writeln!(w, "slope,{},{}", self.slope, self.intercept)
    }
}

/// Unweighted least-squares fit in log-log space.
pub fn fit_order(points: &[LevelError]) -> Result<ConvergenceReport> {
    if points.len() < 3 {
        return Err(Error::invalid("need at least 3 points to fit an order"));
    }
    if let Some(p) = points.iter().find(|p| !(p.h > 0.0 && p.rms > 0.0) || !p.rms.is_finite()) {
        return Err(Error::invalid(format!("step and error must be positive, got h = {}, rms = {}", p.h, p.rms)));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.h.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.rms.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("step sizes must not all coincide"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(ConvergenceReport {
        points: points.to_vec(),
        slope,
        intercept,
        residual,
    })
}
