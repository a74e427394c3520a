//! Distributional statistics over ensemble snapshots.

mod fit;
mod ks;
mod moments;
mod wasserstein;

pub use fit::{fit_order, ConvergenceReport};
pub use ks::{
    kolmogorov_q, ks_one_sample, ks_scan, ks_statistic_sorted, ks_two_sample, ks_two_sample_sorted, KsResult,
    ScanRow,
};
pub use moments::{moment_series, write_moments_csv, MomentPoint};
pub use wasserstein::{
    min_cost_assignment, wasserstein_1d_monotone, wasserstein_exact, WassersteinMethod, WassersteinResult,
    EXACT_MAX_SAMPLES,
};

use std::io::{self, Write};

/// CSV `t,coord,d_stat,p_value` with 1-based coordinates.
pub fn write_scan_csv<W: Write>(rows: &[ScanRow], mut w: W) -> io::Result<()> {
    writeln!(w, "t,coord,d_stat,p_value")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.t, r.ks.coord + 1, r.ks.d_stat, r.ks.p_value)?;
    }
    Ok(())
}
