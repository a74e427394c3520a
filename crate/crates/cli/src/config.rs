//! Experiment configuration file (TOML). Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use anyhow::Context;
use bemsde::model::{builtin, PolynomialSpec, ProbeSpec, BUILTIN_NAMES};
use bemsde::{CertificateInputs, NewtonConfig, Scheme, SdeModel};
use serde::Deserialize;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Optional guard: when set, must match the subcommand being run.
    pub experiment: Option<String>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub run: RunConfig,
    pub newton: NewtonConfig,
    pub probe: ProbeSpec,
    pub histogram: HistogramConfig,
    pub ks_scan: KsScanConfig,
    pub contraction: ContractionConfig,
    pub convergence: ConvergenceConfig,
    pub fp_check: FpCheckConfig,
    pub invariant_compare: InvariantCompareConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Built-in model name; defaults to `example1` when no polynomial is given.
    pub name: Option<String>,
    pub polynomial: Option<PolynomialSpec>,
    /// Declared constants; required for polynomial models, optional
    /// override for built-ins.
    pub constants: Option<CertificateInputs>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scheme: Scheme,
    pub h: f64,
    pub paths: usize,
    pub seed: u64,
    /// Single initial point; a scalar is broadcast to every coordinate.
    pub x0: Option<Vec<f64>>,
    /// Several initial points, one ensemble each.
    pub initial_values: Option<Vec<Vec<f64>>>,
    pub times: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scheme: Scheme::Bem,
            h: 0.01,
            paths: 1000,
            seed: DEFAULT_SEED,
            x0: None,
            initial_values: None,
            times: vec![0.1, 0.3, 0.5, 4.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub bins: Option<usize>,
    /// Fixed `[lo, hi]`; the observed range per coordinate when absent.
    pub range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KsScanConfig {
    pub t_start: f64,
    /// Number of consecutive pairs; snapshots are taken every step.
    pub steps: usize,
}

impl Default for KsScanConfig {
    fn default() -> Self {
        KsScanConfig { t_start: 0.0, steps: 200 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContractionConfig {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub steps: usize,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            x: vec![-5.0],
            y: vec![15.0],
            steps: 500,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    pub h_coarse: f64,
    pub levels: usize,
    pub k_ref: u32,
    pub t_end: f64,
    /// Falls back to `run.x0`.
    pub x0: Option<Vec<f64>>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            h_coarse: 0.03125,
            levels: 5,
            k_ref: 4,
            t_end: 1.0,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FpCheckConfig {
    pub domain: (f64, f64),
    pub grid: usize,
    pub t: f64,
}

impl Default for FpCheckConfig {
    fn default() -> Self {
        FpCheckConfig {
            domain: (0.05, 6.0),
            grid: 4096,
            t: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WassersteinChoice {
    /// Monotone coupling in 1D, exact assignment otherwise.
    #[default]
    Auto,
    Exact,
    Monotone1d,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvariantCompareConfig {
    pub step_sizes: Vec<f64>,
    pub t: f64,
    pub r: f64,
    pub method: WassersteinChoice,
}

impl Default for InvariantCompareConfig {
    fn default() -> Self {
        InvariantCompareConfig {
            step_sizes: vec![0.02, 0.01, 0.005],
            t: 50.0,
            r: 1.0,
            method: WassersteinChoice::Auto,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// The model and its declared constants.
    pub fn build_model(&self) -> anyhow::Result<(SdeModel, CertificateInputs)> {
        let m = &self.model;
        match (&m.name, &m.polynomial) {
            (Some(_), Some(_)) => anyhow::bail!("model: give either `name` or `polynomial`, not both"),
            (_, Some(spec)) => {
                let inputs = m
                    .constants
                    .context("model.constants is required for a polynomial model")?;
                Ok((SdeModel::from_polynomials("custom", spec)?, inputs))
            }
            (name, None) => {
                let name = name.as_deref().unwrap_or("example1");
                let (model, inputs) = builtin(name).with_context(|| {
                    format!("unknown model `{name}`; built-ins are {}", BUILTIN_NAMES.join(", "))
                })?;
                Ok((model, m.constants.unwrap_or(inputs)))
            }
        }
    }

    /// Initial points for ensemble commands.
    pub fn initial_values(&self, dim: usize) -> anyhow::Result<Vec<Vec<f64>>> {
        let values = match (&self.run.initial_values, &self.run.x0) {
            (Some(_), Some(_)) => anyhow::bail!("run: give either `x0` or `initial_values`, not both"),
            (Some(v), None) => v.clone(),
            (None, Some(x)) => vec![x.clone()],
            (None, None) => vec![vec![5.0]],
        };
        if values.is_empty() {
            anyhow::bail!("run.initial_values is empty");
        }
        values.into_iter().map(|x| broadcast(x, dim, "initial value")).collect()
    }
}

/// A one-element vector stands for the same value in every coordinate.
pub fn broadcast(x: Vec<f64>, dim: usize, what: &str) -> anyhow::Result<Vec<f64>> {
    match x.len() {
        n if n == dim => Ok(x),
        1 => Ok(vec![x[0]; dim]),
        n => anyhow::bail!("{what} has {n} components, model dimension is {dim}"),
    }
}
