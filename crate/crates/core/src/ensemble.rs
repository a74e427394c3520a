//! Monte Carlo drivers: independent ensembles, coupled pairs sharing their
//! noise, and nested-grid runs for strong-error estimation.
//!
//! Every path `i` draws its Wiener increments from its own ChaCha12 stream
//! `(master_seed, i)`, step by step, so results never depend on thread count
//! or on how many other paths are simulated.

use std::io::{self, Write};

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssumptionCertificate, SdeModel};
use crate::par::{self, Exec};
use crate::solver::{NewtonConfig, Scheme, StepOperator, Workspace};

/// Fraction of failed paths above which a run is aborted.
pub const MAX_FAILED_FRACTION: f64 = 0.1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngPlan {
    pub master_seed: u64,
}

impl RngPlan {
    pub fn new(master_seed: u64) -> Self {
        RngPlan { master_seed }
    }

    /// Generator for path `path`: ChaCha12 keyed by the master seed, with
    /// the path index as stream id.
    pub fn path_rng(&self, path: usize) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path as u64);
        rng
    }

    /// An unrelated plan keyed by `(master_seed, key)`.
    pub fn derive(&self, key: u64) -> RngPlan {
        RngPlan {
            master_seed: splitmix64(self.master_seed ^ splitmix64(key)),
        }
    }

    /// Plan keyed by the bit patterns of a point, so equal initial values get
    /// equal noise and distinct ones get independent noise.
    pub fn derive_for_point(&self, x: &[f64]) -> RngPlan {
        let key = x
            .iter()
            .fold(0xcbf2_9ce4_8422_2325_u64, |acc, v| splitmix64(acc ^ v.to_bits()));
        self.derive(key)
    }

    pub fn digest(&self) -> String {
        format!("chacha12-{:016x}", self.master_seed)
    }
}

/// Draws `N(0, h I_n)` increments from one path's stream.
pub struct BrownianSource {
    rng: ChaCha12Rng,
    sqrt_h: f64,
}

impl BrownianSource {
    pub fn new(plan: &RngPlan, path: usize, h: f64) -> Self {
        BrownianSource {
            rng: plan.path_rng(path),
            sqrt_h: h.sqrt(),
        }
    }

    #[inline]
    pub fn next_into(&mut self, out: &mut [f64]) {
        for o in out.iter_mut() {
            let z: f64 = self.rng.sample(StandardNormal);
            *o = self.sqrt_h * z;
        }
    }
}

/// Sums consecutive fine increments into one coarse increment.
#[derive(Debug, Clone)]
pub struct IncrementAggregator {
    ratio: usize,
    count: usize,
    acc: Vec<f64>,
}

impl IncrementAggregator {
    pub fn new(ratio: usize, noise_dim: usize) -> Self {
        IncrementAggregator {
            ratio,
            count: 0,
            acc: vec![0.0; noise_dim],
        }
    }

    /// Adds a fine increment; yields the coarse increment once `ratio` fine
    /// ones have been absorbed.
    #[inline]
    pub fn push(&mut self, fine: &[f64]) -> Option<&[f64]> {
        if self.count == self.ratio {
            self.acc.fill(0.0);
            self.count = 0;
        }
        for (a, f) in self.acc.iter_mut().zip(fine) {
            *a += f;
        }
        self.count += 1;
        (self.count == self.ratio).then_some(&self.acc[..])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    /// Every path starts at the same point.
    Point(Vec<f64>),
    /// One starting point per path.
    PerPath(Vec<Vec<f64>>),
}

impl InitialState {
    fn get(&self, path: usize) -> &[f64] {
        match self {
            InitialState::Point(x) => x,
            InitialState::PerPath(xs) => &xs[path],
        }
    }

    fn check(&self, dim: usize, paths: usize) -> Result<()> {
        let ok = match self {
            InitialState::Point(x) => x.len() == dim,
            InitialState::PerPath(xs) => xs.len() == paths && xs.iter().all(|x| x.len() == dim),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("initial state does not match model dimension or path count"))
        }
    }
}

/// Samples of all surviving paths at one grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSnapshot {
    pub time: f64,
    pub h: f64,
    pub dim: usize,
    /// Row-major `M x d`.
    pub samples: Vec<f64>,
    /// Original path index of each row.
    pub path_ids: Vec<usize>,
    pub scheme: Scheme,
    pub model: String,
    pub rng_digest: String,
    /// Rows dropped because they contained non-finite values.
    pub nonfinite_count: usize,
}

impl EnsembleSnapshot {
    pub fn len(&self) -> usize {
        self.path_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.chunks_exact(self.dim.max(1))
    }

    /// Marginal sample of coordinate `k`.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    /// CSV with header `path,t,x1..xd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "path,t")?;
        for k in 1..=self.dim {
            write!(w, ",x{k}")?;
        }
        writeln!(w)?;
        for (id, row) in self.path_ids.iter().zip(self.rows()) {
            write!(w, "{id},{}", self.time)?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub path: usize,
    pub step: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub newton: NewtonConfig,
    pub exec: Exec,
    /// Run even when the step exceeds the applicable threshold (logged).
    pub allow_large_step: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub scheme: Scheme,
    pub x0: InitialState,
    pub h: f64,
    /// Ascending grid times at which to record the ensemble.
    pub times: Vec<f64>,
    pub paths: usize,
    pub rng: RngPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    pub snapshots: Vec<EnsembleSnapshot>,
    /// Paths dropped after a failed implicit solve.
    pub failures: Vec<PathFailure>,
}

/// Grid index of `t` on a grid of spacing `h`; `t` must be a multiple of `h`
/// to within `1e-9` grid units.
pub fn grid_index(t: f64, h: f64) -> Result<usize> {
    let k = (t / h).round();
    if !(t >= 0.0) || ((t / h) - k).abs() > 1e-9 {
        return Err(Error::invalid(format!("time {t} is not a non-negative multiple of h = {h}")));
    }
    Ok(k as usize)
}

fn check_step(h: f64, limit: f64, what: &str, opts: &EnsembleOptions) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if h > limit {
        if !opts.allow_large_step {
            return Err(Error::invalid(format!("h = {h} exceeds {what} = {limit}")));
        }
        warn!("h = {h} exceeds {what} = {limit}; continuing on override");
    }
    Ok(())
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_FAILED_FRACTION * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(())
}

fn failure_of(path: usize, step: usize, err: &Error) -> PathFailure {
    let residual = match err {
        Error::NonConvergence { residual, .. } => *residual,
        _ => f64::NAN,
    };
    PathFailure { path, step, residual }
}

enum PathOutcome<T> {
    Done(T),
    Failed(PathFailure),
}

/// Simulates `spec.paths` independent paths, recording the ensemble at each
/// requested time.
pub fn run_ensemble(
    model: &SdeModel,
    cert: &AssumptionCertificate,
    spec: &EnsembleSpec,
    opts: &EnsembleOptions,
) -> Result<EnsembleRun> {
    let d = model.dim();
    let n = model.noise_dim();
    let h = spec.h;
    if spec.paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    spec.x0.check(d, spec.paths)?;
    let limit = match spec.scheme {
        Scheme::Bem => cert.h_star,
        Scheme::Em => f64::INFINITY,
    };
    check_step(h, limit, "h*", opts)?;
    opts.newton.validate()?;
    let steps: Vec<usize> = spec
        .times
        .iter()
        .map(|&t| grid_index(t, h))
        .collect::<Result<_>>()?;
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("snapshot times must be strictly ascending"));
    }
    let op = StepOperator::for_certificate(model, cert, h)?;
    let last = steps.last().copied().unwrap_or(0);

    let outcomes = par::map_indexed(opts.exec, spec.paths, |path| {
        let mut src = BrownianSource::new(&spec.rng, path, h);
        let mut ws = Workspace::new(model);
        let mut dw = vec![0.0; n];
        let mut state = spec.x0.get(path).to_vec();
        let mut finite = state.iter().all(|v| v.is_finite());
        let mut recorded: Vec<Option<Vec<f64>>> = Vec::with_capacity(steps.len());
        let mut next = 0;
        for step in 0..=last {
            if step > 0 && finite {
                src.next_into(&mut dw);
                if let Err(e) = op.step_in_place(spec.scheme, &mut state, &dw, &opts.newton, &mut ws) {
                    return PathOutcome::Failed(failure_of(path, step, &e));
                }
                finite = state.iter().all(|v| v.is_finite());
            }
            while next < steps.len() && steps[next] == step {
                recorded.push(finite.then(|| state.clone()));
                next += 1;
            }
        }
        PathOutcome::Done(recorded)
    });

    let mut failures = Vec::new();
    let mut done = Vec::with_capacity(spec.paths);
    for (path, o) in outcomes.into_iter().enumerate() {
        match o {
            PathOutcome::Done(r) => done.push((path, r)),
            PathOutcome::Failed(f) => failures.push(f),
        }
    }
    check_failures(failures.len(), spec.paths)?;

    let snapshots = spec
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut samples = Vec::with_capacity(done.len() * d);
            let mut path_ids = Vec::with_capacity(done.len());
            let mut nonfinite = 0;
            for (path, rec) in &done {
                match &rec[k] {
                    Some(x) => {
                        samples.extend_from_slice(x);
                        path_ids.push(*path);
                    }
                    None => nonfinite += 1,
                }
            }
            EnsembleSnapshot {
                time: t,
                h,
                dim: d,
                samples,
                path_ids,
                scheme: spec.scheme,
                model: model.name().to_string(),
                rng_digest: spec.rng.digest(),
                nonfinite_count: nonfinite,
            }
        })
        .collect();
    Ok(EnsembleRun {
        snapshots,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistancePoint {
    pub n: usize,
    pub t: f64,
    /// Monte Carlo estimate of `(E|X_n - Y_n|^2)^{1/2}`.
    pub distance: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledPairRun {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub h: f64,
    pub rng_digest: String,
    pub series: Vec<DistancePoint>,
    pub failures: Vec<PathFailure>,
}

/// Root of a mean of squares with its delta-method standard error.
fn rms_with_stderr(sq: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let m = sq.len() as f64;
    let mean = sq.clone().sum::<f64>() / m;
    let var = if m > 1.0 {
        sq.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    let se_mean = (var / m).sqrt();
    let rms = mean.sqrt();
    let se = if rms > 0.0 { se_mean / (2.0 * rms) } else { 0.0 };
    (rms, se)
}

/// Runs `paths` replicas of two BEM solutions from `x` and `y` driven by the
/// same increments and reports their L2 distance at every step `0..=n_max`.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled_pair(
    model: &SdeModel,
    cert: &AssumptionCertificate,
    x: &[f64],
    y: &[f64],
    h: f64,
    n_max: usize,
    paths: usize,
    rng: &RngPlan,
    opts: &EnsembleOptions,
) -> Result<CoupledPairRun> {
    let d = model.dim();
    if x.len() != d || y.len() != d {
        return Err(Error::invalid("initial points do not match model dimension"));
    }
    if paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    check_step(h, cert.contraction_step_limit(), "(l1 - 1)/(2 lambda1 - 2c)", opts)?;
    opts.newton.validate()?;
    let op = StepOperator::for_certificate(model, cert, h)?;
    let n = model.noise_dim();

    let outcomes = par::map_indexed(opts.exec, paths, |path| {
        let mut src = BrownianSource::new(rng, path, h);
        let mut ws = Workspace::new(model);
        let mut dw = vec![0.0; n];
        let mut a = x.to_vec();
        let mut b = y.to_vec();
        let mut sq = Vec::with_capacity(n_max + 1);
        let dist_sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        sq.push(dist_sq(&a, &b));
        for step in 1..=n_max {
            src.next_into(&mut dw);
            for s in [&mut a, &mut b] {
                if let Err(e) = op.step_in_place(Scheme::Bem, s, &dw, &opts.newton, &mut ws) {
                    return PathOutcome::Failed(failure_of(path, step, &e));
                }
            }
            sq.push(dist_sq(&a, &b));
        }
        PathOutcome::Done(sq)
    });

    let mut failures = Vec::new();
    let mut done = Vec::new();
    for o in outcomes {
        match o {
            PathOutcome::Done(s) => done.push(s),
            PathOutcome::Failed(f) => failures.push(f),
        }
    }
    check_failures(failures.len(), paths)?;

    let series = (0..=n_max)
        .map(|step| {
            let (distance, stderr) = rms_with_stderr(done.iter().map(|s| s[step]));
            DistancePoint {
                n: step,
                t: step as f64 * h,
                distance,
                stderr,
            }
        })
        .collect();
    Ok(CoupledPairRun {
        x: x.to_vec(),
        y: y.to_vec(),
        h,
        rng_digest: rng.digest(),
        series,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedLevel {
    pub h: f64,
    /// Number of reference steps per step of this level.
    pub ratio: usize,
    pub terminal: EnsembleSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedRun {
    pub h_ref: f64,
    pub reference: EnsembleSnapshot,
    pub levels: Vec<NestedLevel>,
    pub failures: Vec<PathFailure>,
}

/// Reference terminal value and one terminal per level.
type NestedTerminal = (Vec<f64>, Vec<Vec<f64>>);

/// BEM paths on several grids driven by one Brownian path each: level `k`
/// uses step `ratios[k] * h_ref` and increments summed from the reference
/// increments. Returns the terminal ensembles at `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn run_nested(
    model: &SdeModel,
    cert: &AssumptionCertificate,
    x0: &[f64],
    h_ref: f64,
    ratios: &[usize],
    t_end: f64,
    paths: usize,
    rng: &RngPlan,
    opts: &EnsembleOptions,
) -> Result<NestedRun> {
    let d = model.dim();
    let n = model.noise_dim();
    if x0.len() != d {
        return Err(Error::invalid("initial point does not match model dimension"));
    }
    if paths == 0 || ratios.is_empty() || ratios.contains(&0) {
        return Err(Error::invalid("need paths >= 1 and positive level ratios"));
    }
    let n_ref = grid_index(t_end, h_ref)?;
    if let Some(r) = ratios.iter().find(|&&r| n_ref % r != 0) {
        return Err(Error::invalid(format!(
            "t_end = {t_end} is not a multiple of level step {}",
            *r as f64 * h_ref
        )));
    }
    let coarsest = ratios.iter().max().copied().unwrap_or(1) as f64 * h_ref;
    check_step(coarsest, cert.h_star, "h*", opts)?;
    opts.newton.validate()?;
    let ref_op = StepOperator::for_certificate(model, cert, h_ref)?;
    let ops: Vec<StepOperator<'_>> = ratios
        .iter()
        .map(|&r| StepOperator::for_certificate(model, cert, r as f64 * h_ref))
        .collect::<Result<_>>()?;

    let outcomes = par::map_indexed(opts.exec, paths, |path| {
        let mut src = BrownianSource::new(rng, path, h_ref);
        let mut ws = Workspace::new(model);
        let mut dw = vec![0.0; n];
        let mut reference = x0.to_vec();
        let mut states: Vec<Vec<f64>> = vec![x0.to_vec(); ratios.len()];
        let mut aggs: Vec<IncrementAggregator> =
            ratios.iter().map(|&r| IncrementAggregator::new(r, n)).collect();
        for step in 1..=n_ref {
            src.next_into(&mut dw);
            if let Err(e) = ref_op.step_in_place(Scheme::Bem, &mut reference, &dw, &opts.newton, &mut ws) {
                return PathOutcome::Failed(failure_of(path, step, &e));
            }
            for ((op, agg), state) in ops.iter().zip(&mut aggs).zip(&mut states) {
                if let Some(coarse) = agg.push(&dw) {
                    if let Err(e) = op.step_in_place(Scheme::Bem, state, coarse, &opts.newton, &mut ws) {
                        return PathOutcome::Failed(failure_of(path, step, &e));
                    }
                }
            }
        }
        PathOutcome::Done((reference, states))
    });

    let mut failures = Vec::new();
    let mut done = Vec::new();
    for (path, o) in outcomes.into_iter().enumerate() {
        match o {
            PathOutcome::Done(s) => done.push((path, s)),
            PathOutcome::Failed(f) => failures.push(f),
        }
    }
    check_failures(failures.len(), paths)?;

    let snapshot = |h: f64, pick: &dyn Fn(&NestedTerminal) -> &[f64]| {
        let mut samples = Vec::with_capacity(done.len() * d);
        let mut path_ids = Vec::with_capacity(done.len());
        let mut nonfinite = 0;
        for (path, s) in &done {
            let x = pick(s);
            if x.iter().all(|v| v.is_finite()) {
                samples.extend_from_slice(x);
                path_ids.push(*path);
            } else {
                nonfinite += 1;
            }
        }
        EnsembleSnapshot {
            time: t_end,
            h,
            dim: d,
            samples,
            path_ids,
            scheme: Scheme::Bem,
            model: model.name().to_string(),
            rng_digest: rng.digest(),
            nonfinite_count: nonfinite,
        }
    };
    let reference = snapshot(h_ref, &|s| &s.0);
    let levels = ratios
        .iter()
        .enumerate()
        .map(|(k, &r)| NestedLevel {
            h: r as f64 * h_ref,
            ratio: r,
            terminal: snapshot(r as f64 * h_ref, &|s| &s.1[k]),
        })
        .collect();
    Ok(NestedRun {
        h_ref,
        reference,
        levels,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSpec {
    pub h_coarse: f64,
    /// Number of test levels `h_coarse / 2^k`, `k = 0..levels`.
    pub levels: usize,
    /// Reference is `2^k_ref` times finer than the finest test level.
    pub k_ref: u32,
    pub t_end: f64,
    pub paths: usize,
}

impl RefinementSpec {
    pub const DEFAULT_K_REF: u32 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub h: f64,
    pub rms: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedPairReport {
    pub h_ref: f64,
    pub t_end: f64,
    pub paths: usize,
    pub levels: Vec<LevelError>,
}

/// RMS endpoint error of BEM at `h_coarse / 2^k` against a fine BEM
/// reference on the same Brownian paths.
pub fn run_refined_pair(
    model: &SdeModel,
    cert: &AssumptionCertificate,
    x0: &[f64],
    spec: &RefinementSpec,
    rng: &RngPlan,
    opts: &EnsembleOptions,
) -> Result<RefinedPairReport> {
    if spec.levels < 3 {
        return Err(Error::invalid("need at least 3 levels"));
    }
    check_step(spec.h_coarse, cert.h_star2, "h**", opts)?;
    grid_index(spec.t_end, spec.h_coarse)?;
    let top = spec.levels as u32 - 1 + spec.k_ref;
    let h_ref = spec.h_coarse / f64::from(1u32 << top);
    let ratios: Vec<usize> = (0..spec.levels as u32).map(|k| 1usize << (top - k)).collect();
    let nested = run_nested(model, cert, x0, h_ref, &ratios, spec.t_end, spec.paths, rng, opts)?;

    let levels = nested
        .levels
        .iter()
        .map(|lvl| {
            let sq: Vec<f64> = lvl
                .terminal
                .rows()
                .zip(nested.reference.rows())
                .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
                .collect();
            let (rms, stderr) = rms_with_stderr(sq.into_iter());
            LevelError {
                h: lvl.h,
                rms,
                stderr,
            }
        })
        .collect();
    Ok(RefinedPairReport {
        h_ref,
        t_end: spec.t_end,
        paths: nested.reference.len(),
        levels,
    })
}
