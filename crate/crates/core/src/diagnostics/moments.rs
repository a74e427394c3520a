use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleSnapshot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub t: f64,
    /// Sample mean of `|X|^p`.
    pub moment: f64,
    pub stderr: f64,
}

/// Estimates `E|X|^p` (Euclidean norm) at every snapshot.
pub fn moment_series(snapshots: &[EnsembleSnapshot], p: u32) -> Result<Vec<MomentPoint>> {
    if snapshots.is_empty() {
        return Err(Error::invalid("no snapshots"));
    }
    if p == 0 || !p.is_multiple_of(2) {
        return Err(Error::invalid(format!("moment order must be a positive even integer, got {p}")));
    }
    snapshots
        .iter()
        .map(|s| {
            if s.is_empty() {
                return Err(Error::invalid(format!("snapshot at t = {} is empty", s.time)));
            }
            let vals: Vec<f64> = s
                .rows()
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().powi(p as i32 / 2))
                .collect();
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = if vals.len() > 1 {
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            Ok(MomentPoint {
                t: s.time,
                moment: mean,
                stderr: (var / m).sqrt(),
            })
        })
        .collect()
}

/// CSV `t,moment,stderr,bound`; `bound` is left empty when not given.
pub fn write_moments_csv<W: Write>(series: &[MomentPoint], bound: Option<f64>, mut w: W) -> io::Result<()> {
    writeln!(w, "t,moment,stderr,bound")?;
    for m in series {
        match bound {
            Some(b) => writeln!(w, "{},{},{},{}", m.t, m.moment, m.stderr, b)?,
            None => writeln!(w, "{},{},{},", m.t, m.moment, m.stderr)?,
        }
    }
    Ok(())
}
