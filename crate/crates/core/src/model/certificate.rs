//! Declared assumption constants, the step-size thresholds they imply, and a
//! probe-based falsification check of the declared inequalities.
//!
//! Constants are never inferred. Probing can only show a declaration false on
//! the sampled region; an empty report means "not falsified".

use serde::{Deserialize, Serialize};

use super::SdeModel;
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::par::{self, Exec};

/// User-declared constants for the growth and one-sided conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateInputs {
    /// Polynomial growth exponent, `q >= 1`.
    pub q: f64,
    /// Growth-Lipschitz constant `L`.
    #[serde(alias = "L")]
    pub lipschitz: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// Reported, does not block a run.
    Warning,
    /// A declared inequality is false; runs need an explicit override.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub assumption: u8,
    /// Which inequality failed, e.g. `growth-f`, `one-sided`, `exponent-l2`.
    pub check: String,
    pub severity: Severity,
    /// Probe index, or `None` for structural checks on the constants.
    pub probe: Option<usize>,
    /// Probe point; pair checks list `u1` followed by `u2`.
    pub point: Vec<f64>,
    /// `lhs - rhs` of the failed inequality (positive means violated).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCertificate {
    pub inputs: CertificateInputs,
    pub lambda1: f64,
    /// Existence/uniqueness threshold for the numerical invariant measure.
    pub h_star: f64,
    /// Threshold for uniform strong order 1/2.
    pub h_star2: f64,
    /// Contraction rate between solutions started at different points.
    pub xi1: f64,
    /// `c1 / (lambda1 - c2)`.
    pub moment_bound_alpha: f64,
    pub violations: Vec<Violation>,
}

/// Computes every threshold from the declared constants and `A`.
///
/// Fails when `max(c, c2) >= lambda1`; exponent conditions on `l1`, `l2` are
/// recorded as warnings instead.
pub fn derive_thresholds(inputs: CertificateInputs, a: &Matrix) -> Result<AssumptionCertificate> {
    let CertificateInputs {
        q,
        lipschitz,
        c,
        c1,
        c2,
        l1,
        l2,
    } = inputs;
    let all = [q, lipschitz, c, c1, c2, l1, l2];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("certificate constants must be finite"));
    }
    if q < 1.0 || lipschitz <= 0.0 || c <= 0.0 || c1 <= 0.0 || c2 <= 0.0 || l1 <= 0.0 || l2 <= 0.0
    {
        return Err(Error::invalid(
            "certificate constants must satisfy q >= 1 and L, c, c1, c2, l1, l2 > 0",
        ));
    }

    let lambda1 = linalg::lambda_min(a)?;
    if c.max(c2) >= lambda1 {
        return Err(Error::AssumptionViolation {
            assumption: 4,
            detail: format!("max(c, c2) = {} is not below lambda1 = {lambda1}", c.max(c2)),
        });
    }

    let h_star = ((l2 - 1.0) / (2.0 * lambda1 - 2.0 * c2)).min((l1 - 1.0) / (2.0 * lambda1 - 2.0 * c));
    let h_star2 =
        ((l2 - 1.0) / (2.0 * (lambda1 - c2))).min((l1 - 2.0) / (4.0 * (lambda1 - c)));
    let z = lambda1 - c;
    let xi1 = z / (1.0 + 2.0 * z);
    let moment_bound_alpha = c1 / (lambda1 - c2);

    let mut violations = Vec::new();
    let structural = |check: &str, margin: f64| Violation {
        assumption: 3,
        check: check.to_string(),
        severity: Severity::Warning,
        probe: None,
        point: Vec::new(),
        margin,
    };
    if l1 < 2.0 {
        violations.push(structural("exponent-l1", 2.0 - l1));
    }
    if l2 < 4.0 * q - 3.0 {
        violations.push(structural("exponent-l2", 4.0 * q - 3.0 - l2));
    }
    if h_star2 <= 0.0 {
        violations.push(structural("empty-strong-threshold", -h_star2));
    }

    Ok(AssumptionCertificate {
        inputs,
        lambda1,
        h_star,
        h_star2,
        xi1,
        moment_bound_alpha,
        violations,
    })
}

impl AssumptionCertificate {
    /// True when no error-severity violation is recorded.
    pub fn is_compliant(&self) -> bool {
        !self.violations.iter().any(|v| v.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Warning)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    pub fn with_violations(mut self, extra: impl IntoIterator<Item = Violation>) -> Self {
        self.violations.extend(extra);
        self
    }

    /// `1 + lambda1 h - c h / 2`, the strong monotonicity constant of the
    /// implicit map at step `h`.
    pub fn monotonicity_margin(&self, h: f64) -> f64 {
        1.0 + self.lambda1 * h - self.inputs.c * h / 2.0
    }

    /// Largest step for which the second-moment bound holds.
    pub fn moment_step_limit(&self) -> f64 {
        (self.inputs.l2 - 1.0) / (2.0 * (self.lambda1 - self.inputs.c2))
    }

    /// Largest step for which the contraction estimate holds.
    pub fn contraction_step_limit(&self) -> f64 {
        (self.inputs.l1 - 1.0) / (2.0 * self.lambda1 - 2.0 * self.inputs.c)
    }

    /// `|x|^2 + ||g(x)||_HS^2 + alpha`.
    pub fn moment_bound(&self, x_norm_sq: f64, g_hs_sq: f64) -> f64 {
        x_norm_sq + g_hs_sq + self.moment_bound_alpha
    }

    /// `sqrt(1 + c) |x - y| exp(-xi1 t)`.
    pub fn contraction_envelope(&self, initial_distance: f64, t: f64) -> f64 {
        (1.0 + self.inputs.c).sqrt() * initial_distance * (-self.xi1 * t).exp()
    }
}

/// Sampling region and size for [`validate_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSpec {
    /// Probes lie in `[-radius, radius]^d`.
    pub radius: f64,
    pub count: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            radius: 10.0,
            count: 10_000,
            exec: Exec::Parallel,
        }
    }
}

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131,
];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = u64::from(base);
    let inv = 1.0 / f64::from(base);
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    r
}

/// Halton point `index` in `[-radius, radius]^dim`, falling back to a
/// scrambled-base sequence beyond the prime table.
fn halton_point(index: usize, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let base = PRIMES[k % PRIMES.len()];
            let shift = (k / PRIMES.len()) as u64 * 7919;
            let u = radical_inverse(index as u64 + 1 + shift, base);
            radius * (2.0 * u - 1.0)
        })
        .collect()
}

fn exceeds(lhs: f64, rhs: f64) -> Option<f64> {
    let margin = lhs - rhs;
    let slack = 1e-9 * (lhs.abs() + rhs.abs()) + 1e-300;
    (margin > slack).then_some(margin)
}

fn finite_or_err(values: &[f64], point: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::ModelEvaluation {
            point: point.to_vec(),
        })
    }
}

/// Evaluates both growth inequalities and both one-sided inequalities at a
/// single probe pair. The point inequality is checked at `u1`.
pub fn probe_pair(
    model: &SdeModel,
    cert: &AssumptionCertificate,
    u1: &[f64],
    u2: &[f64],
) -> Result<Vec<Violation>> {
    let CertificateInputs {
        q,
        lipschitz,
        c,
        c1,
        c2,
        l1,
        l2,
        ..
    } = cert.inputs;
    let f1 = model.f(u1);
    let f2 = model.f(u2);
    let g1 = model.g(u1);
    let g2 = model.g(u2);
    finite_or_err(&f1, u1)?;
    finite_or_err(&g1, u1)?;
    finite_or_err(&f2, u2)?;
    finite_or_err(&g2, u2)?;

    let du: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| a - b).collect();
    let df: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a - b).collect();
    let dg_sq: f64 = g1.iter().zip(&g2).map(|(a, b)| (a - b) * (a - b)).sum();
    let du_norm = linalg::norm(&du);
    let growth = lipschitz
        * (1.0 + linalg::norm(u1).powf(q - 1.0) + linalg::norm(u2).powf(q - 1.0))
        * du_norm;

    let pair_point = || u1.iter().chain(u2).copied().collect::<Vec<_>>();
    let mut out = Vec::new();
    let mut push = |assumption: u8, check: &str, margin: f64, point: Vec<f64>| {
        out.push(Violation {
            assumption,
            check: check.to_string(),
            severity: Severity::Error,
            probe: None,
            point,
            margin,
        });
    };

    if let Some(m) = exceeds(linalg::norm(&df), growth) {
        push(2, "growth-f", m, pair_point());
    }
    if let Some(m) = exceeds(dg_sq.sqrt(), growth) {
        push(2, "growth-g", m, pair_point());
    }
    let one_sided = 2.0 * linalg::dot(&du, &df) + l1 * dg_sq;
    if let Some(m) = exceeds(one_sided, c * du_norm * du_norm) {
        push(3, "one-sided", m, pair_point());
    }
    let g1_sq: f64 = g1.iter().map(|v| v * v).sum();
    let u1_sq: f64 = u1.iter().map(|v| v * v).sum();
    let coercive = 2.0 * linalg::dot(u1, &f1) + l2 * g1_sq;
    if let Some(m) = exceeds(coercive, c1 + c2 * u1_sq) {
        push(3, "coercive", m, u1.to_vec());
    }
    Ok(out)
}

/// Probes the declared inequalities on a deterministic Halton design of
/// `probes.count` pairs in `[-R, R]^d x [-R, R]^d`. Results are ordered by
/// probe index.
pub fn validate_assumptions(
    model: &SdeModel,
    cert: &AssumptionCertificate,
    probes: &ProbeSpec,
) -> Result<Vec<Violation>> {
    let d = model.dim();
    let per_probe = par::map_indexed(probes.exec, probes.count, |i| {
        let p = halton_point(i, 2 * d, probes.radius);
        probe_pair(model, cert, &p[..d], &p[d..]).map(|mut v| {
            for x in &mut v {
                x.probe = Some(i);
            }
            v
        })
    });
    let mut out = Vec::new();
    for r in per_probe {
        out.extend(r?);
    }
    Ok(out)
}
