//! One-step maps: the drift-implicit backward Euler-Maruyama step and the
//! explicit Euler-Maruyama baseline.
//!
//! A BEM step solves `G(u) = u + h A u - h f(u) = x + g(x) dW` for `u`. When
//! `f` is one-sided Lipschitz with constant `c/2` and `c < lambda1`, `G` is
//! strongly monotone with constant `1 + lambda1 h - c h / 2`, so the root is
//! unique. It is found with damped Newton iterations warm-started at `x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky, Matrix};
use crate::model::{AssumptionCertificate, SdeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Backward (drift-implicit) Euler-Maruyama.
    Bem,
    /// Explicit Euler-Maruyama.
    Em,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::Bem => "BEM",
            Scheme::Em => "EM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    /// Residual tolerance, scaled by `1 + |rhs|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Step shrink factor for the backtracking line search.
    pub backtrack: f64,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tol: 1e-12,
            max_iter: 50,
            backtrack: 0.5,
            max_halvings: 30,
        }
    }
}

impl NewtonConfig {
    pub fn tol_abs(&self, rhs_norm: f64) -> f64 {
        self.tol * (1.0 + rhs_norm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.backtrack > 0.0 && self.backtrack < 1.0)
        {
            return Err(Error::invalid(
                "newton config needs tol > 0, max_iter >= 1 and 0 < backtrack < 1",
            ));
        }
        Ok(())
    }
}

/// Scratch buffers for one worker. Never shared between threads.
#[derive(Debug, Clone)]
pub struct Workspace {
    r: Vec<f64>,
    r_trial: Vec<f64>,
    f: Vec<f64>,
    f_trial: Vec<f64>,
    f_pert: Vec<f64>,
    jac: Vec<f64>,
    jf: Vec<f64>,
    delta: Vec<f64>,
    trial: Vec<f64>,
    rhs: Vec<f64>,
    gbuf: Vec<f64>,
}

impl Workspace {
    pub fn new(model: &SdeModel) -> Self {
        let d = model.dim();
        let n = model.noise_dim();
        Workspace {
            r: vec![0.0; d],
            r_trial: vec![0.0; d],
            f: vec![0.0; d],
            f_trial: vec![0.0; d],
            f_pert: vec![0.0; d],
            jac: vec![0.0; d * d],
            jf: vec![0.0; d * d],
            delta: vec![0.0; d],
            trial: vec![0.0; d],
            rhs: vec![0.0; d],
            gbuf: vec![0.0; d * n],
        }
    }
}

/// The implicit map `G` for one `(model, h)` pair, with `I + hA` factored
/// once. Read-only after construction, so it can be shared across workers.
#[derive(Debug, Clone)]
pub struct StepOperator<'m> {
    model: &'m SdeModel,
    h: f64,
    margin: f64,
    i_plus_ha: Cholesky,
}

impl<'m> StepOperator<'m> {
    /// `c` is the declared one-sided constant; construction fails unless the
    /// monotonicity margin `1 + lambda1 h - c h / 2` is positive.
    pub fn new(model: &'m SdeModel, h: f64, c: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::invalid(format!("step size must be positive, got {h}")));
        }
        let margin = 1.0 + model.lambda1() * h - c * h / 2.0;
        if !(margin > 0.0) {
            return Err(Error::invalid(format!(
                "implicit map is not monotone at h = {h} (margin {margin})"
            )));
        }
        let d = model.dim();
        let mut m = Matrix::identity(d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += h * model.a()[(i, j)];
            }
        }
        Ok(StepOperator {
            model,
            h,
            margin,
            i_plus_ha: Cholesky::factor(&m)?,
        })
    }

    pub fn for_certificate(model: &'m SdeModel, cert: &AssumptionCertificate, h: f64) -> Result<Self> {
        Self::new(model, h, cert.inputs.c)
    }

    pub fn model(&self) -> &'m SdeModel {
        self.model
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// `G(u) = u + h A u - h f(u)`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let d = self.model.dim();
        let mut f = vec![0.0; d];
        let mut out = vec![0.0; d];
        self.g_map(u, &mut f, &mut out);
        out
    }

    #[inline]
    fn g_map(&self, u: &[f64], f: &mut [f64], out: &mut [f64]) {
        self.model.f_into(u, f);
        let a = self.model.a().as_slice();
        let d = u.len();
        let h = self.h;
        for i in 0..d {
            let au: f64 = a[i * d..(i + 1) * d].iter().zip(u).map(|(x, y)| x * y).sum();
            out[i] = u[i] + h * au - h * f[i];
        }
    }

    #[inline]
    fn residual(&self, u: &[f64], rhs: &[f64], f: &mut [f64], r: &mut [f64]) -> f64 {
        self.g_map(u, f, r);
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri -= bi;
        }
        linalg::norm(r)
    }

    /// `J = I + hA - h Jf(u)`, with a forward-difference `Jf` when the model
    /// has no analytic one. Expects `ws.f` to hold `f(u)`.
    fn jacobian(&self, u: &mut [f64], ws: &mut Workspace) {
        let d = u.len();
        let h = self.h;
        if !self.model.jf_into(u, &mut ws.jf) {
            fd_jacobian(self.model, u, &ws.f, &mut ws.f_pert, &mut ws.jf);
        }
        let a = self.model.a().as_slice();
        for i in 0..d {
            for k in 0..d {
                let delta = if i == k { 1.0 } else { 0.0 };
                ws.jac[i * d + k] = delta + h * a[i * d + k] - h * ws.jf[i * d + k];
            }
        }
    }

    /// `u <- (I + hA)^{-1} (rhs + h f(u))`, damped by one half.
    fn fixed_point_sweep(&self, u: &mut [f64], rhs: &[f64], ws: &mut Workspace) {
        self.model.f_into(u, &mut ws.f);
        for ((t, r), f) in ws.trial.iter_mut().zip(rhs).zip(&ws.f) {
            *t = r + self.h * f;
        }
        self.i_plus_ha.solve_in_place(&mut ws.trial);
        for (ui, ti) in u.iter_mut().zip(&ws.trial) {
            *ui += 0.5 * (ti - *ui);
        }
    }

    /// Solves `G(u) = rhs` in place, starting from the value already in `u`.
    /// Returns the number of Newton iterations used.
    pub fn solve_into(
        &self,
        rhs: &[f64],
        u: &mut [f64],
        cfg: &NewtonConfig,
        ws: &mut Workspace,
    ) -> Result<usize> {
        let d = u.len();
        let tol = cfg.tol_abs(linalg::norm(rhs));
        let mut rnorm = self.residual(u, rhs, &mut ws.f, &mut ws.r);
        let mut after_fallback = false;

        for iter in 0..cfg.max_iter {
            if rnorm <= tol {
                return Ok(iter);
            }
            if !rnorm.is_finite() {
                break;
            }
            self.jacobian(u, ws);
            for i in 0..d {
                ws.delta[i] = -ws.r[i];
            }
            let jmax = ws.jac.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let solved = linalg::lu_solve_in_place(&mut ws.jac, d, &mut ws.delta, 1e-14 * jmax);
            if !solved {
                if after_fallback {
                    break;
                }
                after_fallback = true;
                self.fixed_point_sweep(u, rhs, ws);
                rnorm = self.residual(u, rhs, &mut ws.f, &mut ws.r);
                continue;
            }
            after_fallback = false;

            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..=cfg.max_halvings {
                for ((t, ui), di) in ws.trial.iter_mut().zip(u.iter()).zip(&ws.delta) {
                    *t = ui + step * di;
                }
                let tn = self.residual(&ws.trial, rhs, &mut ws.f_trial, &mut ws.r_trial);
                if tn < (1.0 - 1e-4 * step) * rnorm {
                    u.copy_from_slice(&ws.trial);
                    std::mem::swap(&mut ws.f, &mut ws.f_trial);
                    std::mem::swap(&mut ws.r, &mut ws.r_trial);
                    rnorm = tn;
                    accepted = true;
                    break;
                }
                step *= cfg.backtrack;
            }
            if !accepted {
                // Stalled: accept if the residual is at the rounding floor of G.
                if rnorm <= self.rounding_floor(u, rhs, &ws.f) {
                    return Ok(iter + 1);
                }
                break;
            }
        }
        if rnorm <= tol {
            return Ok(cfg.max_iter);
        }
        Err(Error::NonConvergence {
            best: u.to_vec(),
            residual: rnorm,
            iterations: cfg.max_iter,
        })
    }

    fn rounding_floor(&self, u: &[f64], rhs: &[f64], f: &[f64]) -> f64 {
        let scale = linalg::norm(u) * (1.0 + self.h * self.model.a().frobenius_norm())
            + self.h * linalg::norm(f)
            + linalg::norm(rhs);
        16.0 * f64::EPSILON * scale
    }

    /// Advances `state` by one step of `scheme` with increment `dw`.
    pub fn step_in_place(
        &self,
        scheme: Scheme,
        state: &mut [f64],
        dw: &[f64],
        cfg: &NewtonConfig,
        ws: &mut Workspace,
    ) -> Result<()> {
        match scheme {
            Scheme::Bem => {
                ws.rhs.copy_from_slice(state);
                self.model.add_noise(state, dw, &mut ws.gbuf, &mut ws.rhs);
                let rhs = std::mem::take(&mut ws.rhs);
                let out = self.solve_into(&rhs, state, cfg, ws);
                ws.rhs = rhs;
                out.map(|_| ())
            }
            Scheme::Em => {
                em_into(self.model, state, dw, self.h, ws);
                Ok(())
            }
        }
    }
}

fn em_into(model: &SdeModel, state: &mut [f64], dw: &[f64], h: f64, ws: &mut Workspace) {
    let d = state.len();
    model.f_into(state, &mut ws.f);
    model.g_into(state, &mut ws.gbuf);
    let a = model.a().as_slice();
    let n = model.noise_dim();
    for i in 0..d {
        let ax: f64 = a[i * d..(i + 1) * d].iter().zip(&*state).map(|(x, y)| x * y).sum();
        let noise: f64 = ws.gbuf[i * n..(i + 1) * n].iter().zip(dw).map(|(x, y)| x * y).sum();
        ws.trial[i] = state[i] + h * (ws.f[i] - ax) + noise;
    }
    state.copy_from_slice(&ws.trial[..d]);
}

/// Forward differences with step `sqrt(eps) (1 + |u_j|)`; `f0 = f(u)`.
fn fd_jacobian(model: &SdeModel, u: &mut [f64], f0: &[f64], fp: &mut [f64], out: &mut [f64]) {
    let d = u.len();
    let sqrt_eps = f64::EPSILON.sqrt();
    for j in 0..d {
        let saved = u[j];
        let step = sqrt_eps * (1.0 + saved.abs());
        u[j] = saved + step;
        let actual = u[j] - saved;
        model.f_into(u, fp);
        u[j] = saved;
        for i in 0..d {
            out[i * d + j] = (fp[i] - f0[i]) / actual;
        }
    }
}

/// Finite-difference Jacobian of `f` at `u` (row-major `d x d`).
pub fn finite_difference_jacobian(model: &SdeModel, u: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let mut x = u.to_vec();
    let f0 = model.f(u);
    let mut fp = vec![0.0; d];
    let mut out = vec![0.0; d * d];
    fd_jacobian(model, &mut x, &f0, &mut fp, &mut out);
    out
}

/// `G(u) = rhs` for one operator.
#[derive(Debug, Clone)]
pub struct ImplicitEquation<'a> {
    op: &'a StepOperator<'a>,
    rhs: Vec<f64>,
}

impl<'a> ImplicitEquation<'a> {
    pub fn new(op: &'a StepOperator<'a>, rhs: Vec<f64>) -> Self {
        ImplicitEquation { op, rhs }
    }

    /// Right-hand side `x + g(x) dW` of a BEM step from `x`.
    pub fn from_state(op: &'a StepOperator<'a>, state: &[f64], dw: &[f64]) -> Self {
        let model = op.model();
        let mut rhs = state.to_vec();
        let mut gbuf = vec![0.0; model.dim() * model.noise_dim()];
        model.add_noise(state, dw, &mut gbuf, &mut rhs);
        ImplicitEquation { op, rhs }
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// `|G(u) - rhs|`
    pub fn residual_norm(&self, u: &[f64]) -> f64 {
        let g = self.op.apply(u);
        let diff: Vec<f64> = g.iter().zip(&self.rhs).map(|(a, b)| a - b).collect();
        linalg::norm(&diff)
    }
}

pub fn solve_implicit(eq: &ImplicitEquation<'_>, guess: &[f64], cfg: &NewtonConfig) -> Result<Vec<f64>> {
    let mut u = guess.to_vec();
    let mut ws = Workspace::new(eq.op.model());
    eq.op.solve_into(&eq.rhs, &mut u, cfg, &mut ws)?;
    Ok(u)
}

/// One BEM step `G^{-1}(x + g(x) dW)`; requires `0 < h <= h*`.
pub fn bem_step(
    model: &SdeModel,
    cert: &AssumptionCertificate,
    state: &[f64],
    dw: &[f64],
    h: f64,
    cfg: &NewtonConfig,
) -> Result<Vec<f64>> {
    if !(h > 0.0 && h <= cert.h_star) {
        return Err(Error::invalid(format!(
            "step {h} outside (0, h*] with h* = {}",
            cert.h_star
        )));
    }
    if dw.len() != model.noise_dim() || state.len() != model.dim() {
        return Err(Error::invalid("state or increment has the wrong length"));
    }
    let op = StepOperator::for_certificate(model, cert, h)?;
    let mut ws = Workspace::new(model);
    let mut x = state.to_vec();
    op.step_in_place(Scheme::Bem, &mut x, dw, cfg, &mut ws)?;
    Ok(x)
}

/// Explicit step `x + h(-A x + f(x)) + g(x) dW`. May return non-finite
/// values; callers decide what to do with them.
pub fn em_step(model: &SdeModel, state: &[f64], dw: &[f64], h: f64) -> Vec<f64> {
    let mut ws = Workspace::new(model);
    let mut x = state.to_vec();
    em_into(model, &mut x, dw, h, &mut ws);
    x
}
