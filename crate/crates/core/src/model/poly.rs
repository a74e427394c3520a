//! Polynomial coefficient tables, the form in which custom models are loaded
//! from experiment configs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `coef * prod_k x_k^powers[k]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coef: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn new(coef: f64, powers: Vec<u32>) -> Self {
        Monomial { coef, powers }
    }

    #[inline]
    fn eval(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .fold(self.coef, |acc, (&p, &xi)| match p {
                0 => acc,
                1 => acc * xi,
                _ => acc * xi.powi(p as i32),
            })
    }

    #[inline]
    fn eval_partial(&self, x: &[f64], k: usize) -> f64 {
        let pk = self.powers[k];
        if pk == 0 {
            return 0.0;
        }
        let mut acc = self.coef * f64::from(pk);
        for (j, (&p, &xj)) in self.powers.iter().zip(x).enumerate() {
            let p = if j == k { p - 1 } else { p };
            match p {
                0 => {}
                1 => acc *= xj,
                _ => acc *= xj.powi(p as i32),
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial(pub Vec<Monomial>);

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial(Vec::new())
    }

    pub fn constant(c: f64, dim: usize) -> Self {
        Polynomial(vec![Monomial::new(c, vec![0; dim])])
    }

    /// Builds from `(coef, powers)` pairs.
    pub fn from_terms<I, P>(terms: I) -> Self
    where
        I: IntoIterator<Item = (f64, P)>,
        P: Into<Vec<u32>>,
    {
        Polynomial(
            terms
                .into_iter()
                .map(|(c, p)| Monomial::new(c, p.into()))
                .collect(),
        )
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|m| m.eval(x)).sum()
    }

    #[inline]
    pub fn eval_partial(&self, x: &[f64], k: usize) -> f64 {
        self.0.iter().map(|m| m.eval_partial(x, k)).sum()
    }

    pub fn degree(&self) -> u32 {
        self.0
            .iter()
            .filter(|m| m.coef != 0.0)
            .map(|m| m.powers.iter().sum())
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn check_dim(&self, dim: usize, what: &str) -> Result<()> {
        for m in &self.0 {
            if m.powers.len() != dim {
                return Err(Error::invalid(format!(
                    "{what}: monomial has {} powers, expected {dim}",
                    m.powers.len()
                )));
            }
            if !m.coef.is_finite() {
                return Err(Error::invalid(format!("{what}: non-finite coefficient")));
            }
        }
        Ok(())
    }
}

/// Coefficient tables for `dX = (-A X + f(X)) dt + g(X) dW`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialSpec {
    /// Rows of the stabiliser matrix `A` (d x d).
    pub a: Vec<Vec<f64>>,
    /// One polynomial per state component (length d).
    pub f: Vec<Polynomial>,
    /// Diffusion rows (d rows of n polynomials).
    pub g: Vec<Vec<Polynomial>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_partials() {
        // 1 - 2 x^3 + 3 x y^2
        let p = Polynomial::from_terms([(1.0, vec![0, 0]), (-2.0, vec![3, 0]), (3.0, vec![1, 2])]);
        let x = [2.0, -1.5];
        assert_eq!(p.eval(&x), 1.0 - 16.0 + 3.0 * 2.0 * 2.25);
        assert_eq!(p.eval_partial(&x, 0), -24.0 + 3.0 * 2.25);
        assert_eq!(p.eval_partial(&x, 1), 3.0 * 2.0 * 2.0 * -1.5);
        assert_eq!(p.degree(), 3);
    }
}
