//! Output directory handling. Every file is written to a temporary file in
//! the target directory and renamed into place.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> anyhow::Result<OutDir> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write_with(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> anyhow::Result<()> {
        let target = self.root.join(name);
        let tmp = tempfile::NamedTempFile::new_in(&self.root)
            .with_context(|| format!("creating temporary file in {}", self.root.display()))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            body(&mut w).with_context(|| format!("writing {}", target.display()))?;
            w.flush()?;
        }
        tmp.persist(&target)
            .with_context(|| format!("moving output into {}", target.display()))?;
        self.written.push(target);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `range`, or over the sample range when absent.
    /// Values outside a fixed range are not counted.
    pub fn build(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Histogram {
        let (mut lo, mut hi) = range.unwrap_or_else(|| {
            values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
        });
        if !(lo < hi) {
            let mid = if lo.is_finite() { lo } else { 0.0 };
            lo = mid - 0.5;
            hi = mid + 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0; bins];
        for &v in values {
            if v >= lo && v <= hi {
                let k = (((v - lo) / width) as usize).min(bins - 1);
                counts[k] += 1;
            }
        }
        Histogram { lo, hi, counts }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }
}

/// CSV `coord,lo,hi,count,density` over one histogram per coordinate;
/// densities are normalised by the full sample size.
pub fn write_histograms(w: &mut dyn Write, hists: &[Histogram], total: usize) -> std::io::Result<()> {
    writeln!(w, "coord,lo,hi,count,density")?;
    for (k, h) in hists.iter().enumerate() {
        let width = h.width();
        for (i, &c) in h.counts.iter().enumerate() {
            let lo = h.lo + i as f64 * width;
            let hi = if i + 1 == h.counts.len() { h.hi } else { lo + width };
            let density = c as f64 / (total as f64 * width);
            writeln!(w, "{},{lo},{hi},{c},{density}", k + 1)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_everything_in_range() {
        let h = Histogram::build(&[0.0, 0.5, 1.0, 1.0], 2, None);
        assert_eq!(h.counts, vec![1, 3]);
        let h = Histogram::build(&[2.0, 2.0], 4, None);
        assert_eq!((h.lo, h.hi), (1.5, 2.5));
        assert_eq!(h.counts.iter().sum::<usize>(), 2);
        let h = Histogram::build(&[-1.0, 0.2, 5.0], 2, Some((0.0, 1.0)));
        assert_eq!(h.counts, vec![1, 0]);
    }
}
