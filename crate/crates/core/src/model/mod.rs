//! SDE definitions of the form `dX = (-A X + f(X)) dt + g(X) dW`, their
//! assumption certificates and the built-in example models.

mod builtin;
mod certificate;
mod poly;

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub use builtin::{builtin, example1, example1_inputs, example2, example2_inputs, BUILTIN_NAMES};
pub use certificate::{
    derive_thresholds, probe_pair, validate_assumptions, AssumptionCertificate, CertificateInputs,
    ProbeSpec, Severity, Violation,
};
pub use poly::{Monomial, Polynomial, PolynomialSpec};

/// `(x, out)`: evaluates a field at `x` into `out`.
pub type Field = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// An SDE `dX = (-A X + f(X)) dt + g(X) dW` on `R^d` driven by an
/// `n`-dimensional Wiener process.
///
/// `g` writes a row-major `d x n` matrix, `jf` (when present) a row-major
/// `d x d` Jacobian of `f`.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    dim: usize,
    noise_dim: usize,
    a: Matrix,
    lambda1: f64,
    f: Field,
    g: Field,
    jf: Option<Field>,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("a", &self.a)
            .field("lambda1", &self.lambda1)
            .field("analytic_jacobian", &self.jf.is_some())
            .finish()
    }
}

impl SdeModel {
    /// Fails unless `A` is symmetric (to 1e-12) and positive definite.
    pub fn new(
        name: impl Into<String>,
        a: Matrix,
        noise_dim: usize,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        let dim = a.rows();
        if dim == 0 || noise_dim == 0 {
            return Err(Error::invalid("state and noise dimensions must be positive"));
        }
        let lambda1 = linalg::lambda_min(&a)?;
        if lambda1 <= 0.0 {
            return Err(Error::NotPositiveDefinite { lambda1 });
        }
        Ok(SdeModel {
            name: name.into(),
            dim,
            noise_dim,
            a,
            lambda1,
            f: Arc::new(f),
            g: Arc::new(g),
            jf: None,
        })
    }

    pub fn with_jacobian(
        mut self,
        jf: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.jf = Some(Arc::new(jf));
        self
    }

    pub fn without_jacobian(mut self) -> Self {
        self.jf = None;
        self
    }

    /// Builds a model (with analytic Jacobian) from coefficient tables.
    pub fn from_polynomials(name: impl Into<String>, spec: &PolynomialSpec) -> Result<Self> {
        let a = Matrix::from_rows(&spec.a)?;
        let d = a.rows();
        if spec.f.len() != d {
            return Err(Error::invalid(format!(
                "f has {} components, A is {d}x{d}",
                spec.f.len()
            )));
        }
        if spec.g.len() != d {
            return Err(Error::invalid(format!("g has {} rows, expected {d}", spec.g.len())));
        }
        let n = spec.g.first().map_or(0, Vec::len);
        if n == 0 || spec.g.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("g rows must be non-empty and of equal length"));
        }
        for (i, p) in spec.f.iter().enumerate() {
            p.check_dim(d, &format!("f[{i}]"))?;
        }
        for (i, row) in spec.g.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                p.check_dim(d, &format!("g[{i}][{j}]"))?;
            }
        }

        let f_polys = Arc::new(spec.f.clone());
        let g_polys: Arc<Vec<Polynomial>> = Arc::new(spec.g.iter().flatten().cloned().collect());
        let jf_polys = Arc::clone(&f_polys);

        let model = SdeModel::new(
            name,
            a,
            n,
            move |x, out| {
                for (o, p) in out.iter_mut().zip(f_polys.iter()) {
                    *o = p.eval(x);
                }
            },
            move |x, out| {
                for (o, p) in out.iter_mut().zip(g_polys.iter()) {
                    *o = p.eval(x);
                }
            },
        )?;
        Ok(model.with_jacobian(move |x, out| {
            let d = x.len();
            for (i, p) in jf_polys.iter().enumerate() {
                for k in 0..d {
                    out[i * d + k] = p.eval_partial(x, k);
                }
            }
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    /// Smallest eigenvalue of `A`.
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn has_jacobian(&self) -> bool {
        self.jf.is_some()
    }

    #[inline]
    pub fn f_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }

    #[inline]
    pub fn g_into(&self, x: &[f64], out: &mut [f64]) {
        (self.g)(x, out)
    }

    /// Writes the analytic Jacobian of `f`; returns `false` if there is none.
    #[inline]
    pub fn jf_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.jf {
            Some(jf) => {
                jf(x, out);
                true
            }
            None => false,
        }
    }

    pub fn f(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.f_into(x, &mut out);
        out
    }

    /// Row-major `d x n`.
    pub fn g(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.noise_dim];
        self.g_into(x, &mut out);
        out
    }

    /// Full drift `-A x + f(x)`.
    pub fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.f(x);
        let ax = self.a.mul_vec(x);
        for (o, v) in out.iter_mut().zip(ax) {
            *o -= v;
        }
        out
    }

    /// `out += g(x) dw`, using `gbuf` (length d*n) as scratch.
    #[inline]
    pub(crate) fn add_noise(&self, x: &[f64], dw: &[f64], gbuf: &mut [f64], out: &mut [f64]) {
        self.g_into(x, gbuf);
        let n = self.noise_dim;
        for (o, row) in out.iter_mut().zip(gbuf.chunks_exact(n)) {
            *o += row.iter().zip(dw).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}
