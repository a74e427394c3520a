use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::anyhow;
use bemsde::diagnostics::{
    fit_order, ks_scan, wasserstein_1d_monotone, wasserstein_exact, write_scan_csv, WassersteinResult,
};
use bemsde::ensemble::{
    run_coupled_pair, run_ensemble, run_refined_pair, EnsembleOptions, EnsembleSnapshot, EnsembleSpec,
    InitialState, RefinementSpec, RngPlan,
};
use bemsde::fporacle::{ks_against_density, solve_stationary_1d};
use bemsde::model::{validate_assumptions, Severity};
use bemsde::par::configure_threads;
use bemsde::{derive_thresholds, AssumptionCertificate, Error, Exec, SdeModel};
use serde::Serialize;

use crate::config::{broadcast, Config, WassersteinChoice};
use crate::output::{write_histograms, Histogram, OutDir};
use crate::{Cli, Command};

const DEFAULT_BINS: usize = 60;

/// Exit status 2 for refusals (bad input, falsified assumptions), 1 for
/// failures while running.
pub enum Failure {
    Refused(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Refused(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Refused(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_)
            | Error::NotSymmetric { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::AssumptionViolation { .. }
            | Error::ModelEvaluation { .. }
            | Error::Domain { .. } => Failure::Refused(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn refuse(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Refused(e.into())
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

struct Context {
    command: Command,
    cfg: Config,
    model: SdeModel,
    cert: AssumptionCertificate,
    opts: EnsembleOptions,
    seed: u64,
    out: OutDir,
}

impl Context {
    fn plan_for(&self, x0: &[f64]) -> RngPlan {
        RngPlan::new(self.seed).derive_for_point(x0)
    }

    fn single_initial_value(&self) -> Outcome<Vec<f64>> {
        let mut v = self.cfg.initial_values(self.model.dim()).map_err(refuse)?;
        if v.len() != 1 {
            return Err(refuse(anyhow!("{} takes a single initial value (`run.x0`)", self.command.name())));
        }
        Ok(v.remove(0))
    }

    fn ensemble(&self, x0: &[f64], h: f64, times: Vec<f64>) -> Outcome<Vec<EnsembleSnapshot>> {
        let spec = EnsembleSpec {
            scheme: self.cfg.run.scheme,
            x0: InitialState::Point(x0.to_vec()),
            h,
            times,
            paths: self.cfg.run.paths,
            rng: self.plan_for(x0),
        };
        let run = run_ensemble(&self.model, &self.cert, &spec, &self.opts)?;
        if !run.failures.is_empty() {
            log::warn!("{} of {} paths failed and were dropped", run.failures.len(), spec.paths);
        }
        Ok(run.snapshots)
    }
}

#[derive(Serialize)]
struct RunInfo<T: Serialize> {
    command: &'static str,
    model: String,
    scheme: &'static str,
    h: f64,
    paths: usize,
    seed: u64,
    details: T,
}

fn prepare(cli: &Cli) -> Outcome<Context> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(refuse)?,
        None => Config::default(),
    };
    if let Some(kind) = &cfg.experiment {
        if kind != cli.command.name() {
            return Err(refuse(anyhow!(
                "config is for `{kind}` but the command is `{}`",
                cli.command.name()
            )));
        }
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(refuse(anyhow!("--threads must be at least 1")));
        }
        configure_threads(n).map_err(|e| Failure::Runtime(anyhow!(e)))?;
    }
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutDir::create(&root)?;

    let (model, inputs) = cfg.build_model().map_err(refuse)?;
    let cert = derive_thresholds(inputs, model.a())?;
    let probe = bemsde::model::ProbeSpec { exec: Exec::Parallel, ..cfg.probe };
    let violations = validate_assumptions(&model, &cert, &probe)?;
    let cert = cert.with_violations(violations);
    out.write_json("certificate.json", &cert)?;
    for v in cert.warnings() {
        log::warn!("assumption {} ({}): {}", v.assumption, v.check, describe(v.margin));
    }
    let errors = cert.errors().count();
    if errors > 0 && !cli.force {
        return Err(refuse(anyhow!(
            "{errors} declared inequalities are violated (see {}); rerun with --force to proceed",
            root.join("certificate.json").display()
        )));
    }
    let opts = EnsembleOptions {
        newton: cfg.newton,
        exec: Exec::Parallel,
        allow_large_step: cli.force,
    };
    opts.newton.validate()?;
    Ok(Context {
        command: cli.command,
        seed: cli.seed.unwrap_or(cfg.run.seed),
        cfg,
        model,
        cert,
        opts,
        out,
    })
}

fn describe(margin: f64) -> String {
    if margin.is_nan() {
        "structural condition not met".to_string()
    } else {
        format!("violated by {margin:.3e}")
    }
}

pub fn run(cli: &Cli) -> Outcome {
    let mut ctx = prepare(cli)?;
    match cli.command {
        Command::Simulate => simulate(&mut ctx)?,
        Command::KsScan => ks_scan_cmd(&mut ctx)?,
        Command::Contraction => contraction(&mut ctx)?,
        Command::Convergence => convergence(&mut ctx)?,
        Command::FpCheck => fp_check(&mut ctx)?,
        Command::InvariantCompare => invariant_compare(&mut ctx)?,
        Command::Validate => validate(&ctx),
    }
    println!("wrote {} files", ctx.out.written().len());
    Ok(())
}

fn info<T: Serialize>(ctx: &Context, h: f64, details: T) -> RunInfo<T> {
    RunInfo {
        command: ctx.command.name(),
        model: ctx.model.name().to_string(),
        scheme: ctx.cfg.run.scheme.tag(),
        h,
        paths: ctx.cfg.run.paths,
        seed: ctx.seed,
        details,
    }
}

#[derive(Serialize)]
struct SnapshotInfo {
    x0: Vec<f64>,
    t: f64,
    file: String,
    samples: usize,
    nonfinite: usize,
    rng: String,
}

fn simulate(ctx: &mut Context) -> Outcome {
    let inits = ctx.cfg.initial_values(ctx.model.dim()).map_err(refuse)?;
    let bins = ctx.cfg.histogram.bins.unwrap_or(DEFAULT_BINS);
    if bins == 0 {
        return Err(refuse(anyhow!("histogram.bins must be positive")));
    }
    let mut listing = Vec::new();
    for (k, x0) in inits.iter().enumerate() {
        let snaps = ctx.ensemble(x0, ctx.cfg.run.h, ctx.cfg.run.times.clone())?;
        for s in &snaps {
            let file = format!("snapshot_x{k}_t{}.csv", s.time);
            ctx.out.write_with(&file, |w| s.write_csv(w))?;
            let hists: Vec<Histogram> = (0..s.dim)
                .map(|c| Histogram::build(&s.coordinate(c), bins, ctx.cfg.histogram.range))
                .collect();
            ctx.out
                .write_with(&format!("histogram_x{k}_t{}.csv", s.time), |w| write_histograms(w, &hists, s.len()))?;
            listing.push(SnapshotInfo {
                x0: x0.clone(),
                t: s.time,
                file,
                samples: s.len(),
                nonfinite: s.nonfinite_count,
                rng: s.rng_digest.clone(),
            });
        }
    }
    let run = info(ctx, ctx.cfg.run.h, listing);
    ctx.out.write_json("run.json", &run)?;
    Ok(())
}

fn ks_scan_cmd(ctx: &mut Context) -> Outcome {
    let x0 = ctx.single_initial_value()?;
    let h = ctx.cfg.run.h;
    let sc = &ctx.cfg.ks_scan;
    if sc.steps == 0 {
        return Err(refuse(anyhow!("ks_scan.steps must be positive")));
    }
    let k0 = bemsde::ensemble::grid_index(sc.t_start, h)?;
    let times: Vec<f64> = (0..=sc.steps).map(|k| (k0 + k) as f64 * h).collect();
    let snaps = ctx.ensemble(&x0, h, times)?;
    let rows = ks_scan(&snaps, Exec::Parallel)?;
    ctx.out.write_with("ks_scan.csv", |w| write_scan_csv(&rows, w))?;
    let run = info(ctx, h, serde_json::json!({ "x0": x0, "pairs": sc.steps }));
    ctx.out.write_json("run.json", &run)?;
    Ok(())
}

fn contraction(ctx: &mut Context) -> Outcome {
    let d = ctx.model.dim();
    let c = &ctx.cfg.contraction;
    let x = broadcast(c.x.clone(), d, "contraction.x").map_err(refuse)?;
    let y = broadcast(c.y.clone(), d, "contraction.y").map_err(refuse)?;
    let h = ctx.cfg.run.h;
    let rng = RngPlan::new(ctx.seed);
    let run = run_coupled_pair(&ctx.model, &ctx.cert, &x, &y, h, c.steps, ctx.cfg.run.paths, &rng, &ctx.opts)?;
    let d0 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let cert = &ctx.cert;
    ctx.out.write_with("contraction.csv", |w| {
        writeln!(w, "n,t,distance,stderr,envelope")?;
        for p in &run.series {
            writeln!(w, "{},{},{},{},{}", p.n, p.t, p.distance, p.stderr, cert.contraction_envelope(d0, p.t))?;
        }
        Ok(())
    })?;
    let info = info(
        ctx,
        h,
        serde_json::json!({ "x": x, "y": y, "xi1": ctx.cert.xi1, "failed_paths": run.failures.len(), "rng": run.rng_digest }),
    );
    ctx.out.write_json("run.json", &info)?;
    Ok(())
}

fn convergence(ctx: &mut Context) -> Outcome {
    let cc = &ctx.cfg.convergence;
    let x0 = match &cc.x0 {
        Some(x) => broadcast(x.clone(), ctx.model.dim(), "convergence.x0").map_err(refuse)?,
        None => ctx.single_initial_value()?,
    };
    let spec = RefinementSpec {
        h_coarse: cc.h_coarse,
        levels: cc.levels,
        k_ref: cc.k_ref,
        t_end: cc.t_end,
        paths: ctx.cfg.run.paths,
    };
    let rng = RngPlan::new(ctx.seed);
    let rep = run_refined_pair(&ctx.model, &ctx.cert, &x0, &spec, &rng, &ctx.opts)?;
    let report = fit_order(&rep.levels)?;
    ctx.out.write_with("convergence.csv", |w| report.write_csv(w))?;
    let info = info(
        ctx,
        rep.h_ref,
        serde_json::json!({
            "x0": x0, "t_end": rep.t_end, "h_ref": rep.h_ref, "surviving_paths": rep.paths,
            "slope": report.slope, "constant": report.constant(), "fit_residual": report.residual,
        }),
    );
    ctx.out.write_json("run.json", &info)?;
    Ok(())
}

fn fp_check(ctx: &mut Context) -> Outcome {
    if ctx.model.dim() != 1 || ctx.model.noise_dim() != 1 {
        return Err(refuse(anyhow!("fp-check needs a scalar model with scalar noise")));
    }
    let fc = ctx.cfg.fp_check.clone();
    let model = ctx.model.clone();
    let oracle = solve_stationary_1d(|x| model.drift(&[x])[0], |x| model.g(&[x])[0], fc.domain, fc.grid)?;
    let x0 = ctx.single_initial_value()?;
    let snaps = ctx.ensemble(&x0, ctx.cfg.run.h, vec![fc.t])?;
    let fit = ks_against_density(&snaps[0].coordinate(0), &oracle)?;
    ctx.out.write_with("fp_density.csv", |w| oracle.write_csv(w))?;
    ctx.out.write_with("fp_summary.csv", |w| {
        writeln!(w, "normalizer,log_normalizer,truncated_mass,d_stat,p_value,samples")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            oracle.normalizer(),
            oracle.log_normalizer,
            fit.out_of_domain_fraction(),
            fit.ks.d_stat,
            fit.ks.p_value,
            fit.ks.m
        )
    })?;
    let info = info(ctx, ctx.cfg.run.h, serde_json::json!({ "x0": x0, "t": fc.t, "domain": fc.domain }));
    ctx.out.write_json("run.json", &info)?;
    Ok(())
}

fn label(h: f64, x0: &[f64]) -> String {
    let mut s = format!("h={h};x0=");
    for (i, v) in x0.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}

fn invariant_compare(ctx: &mut Context) -> Outcome {
    let ic = ctx.cfg.invariant_compare.clone();
    if ic.step_sizes.is_empty() {
        return Err(refuse(anyhow!("invariant_compare.step_sizes is empty")));
    }
    let inits = ctx.cfg.initial_values(ctx.model.dim()).map_err(refuse)?;
    let d = ctx.model.dim();
    let mut labels = Vec::new();
    let mut terminal = Vec::new();
    for &h in &ic.step_sizes {
        for x0 in &inits {
            let mut snaps = ctx.ensemble(x0, h, vec![ic.t])?;
            labels.push(label(h, x0));
            terminal.push(snaps.remove(0));
        }
    }
    let method = match ic.method {
        WassersteinChoice::Auto if d == 1 => WassersteinChoice::Monotone1d,
        WassersteinChoice::Auto => WassersteinChoice::Exact,
        m => m,
    };
    if method == WassersteinChoice::Monotone1d && d != 1 {
        return Err(refuse(anyhow!("the monotone method needs a scalar model")));
    }
    let distance = |a: &EnsembleSnapshot, b: &EnsembleSnapshot| -> Result<WassersteinResult, Error> {
        match method {
            WassersteinChoice::Monotone1d => wasserstein_1d_monotone(&a.samples, &b.samples, ic.r),
            _ => wasserstein_exact(&a.samples, &b.samples, d, ic.r),
        }
    };
    let n = terminal.len();
    let mut matrix = vec![0.0; n * n];
    let mut upper_bound = false;
    for i in 0..n {
        for j in i + 1..n {
            let w = distance(&terminal[i], &terminal[j])?;
            upper_bound |= w.upper_bound_flag;
            matrix[i * n + j] = w.value;
            matrix[j * n + i] = w.value;
        }
    }
    ctx.out.write_with("wasserstein.csv", |w| {
        write!(w, "label")?;
        for l in &labels {
            write!(w, ",{l}")?;
        }
        writeln!(w)?;
        for (i, l) in labels.iter().enumerate() {
            write!(w, "{l}")?;
            for v in &matrix[i * n..(i + 1) * n] {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let method_name = match method {
        WassersteinChoice::Monotone1d => "monotone-1d",
        _ => "exact-assignment",
    };
    let info = info(
        ctx,
        ic.step_sizes[0],
        serde_json::json!({
            "t": ic.t, "r": ic.r, "method": method_name, "upper_bound": upper_bound,
            "step_sizes": ic.step_sizes, "initial_values": inits,
        }),
    );
    ctx.out.write_json("run.json", &info)?;
    Ok(())
}

fn validate(ctx: &Context) {
    let c = &ctx.cert;
    println!("model {} (lambda1 = {})", ctx.model.name(), c.lambda1);
    println!("h* = {}, h** = {}, xi1 = {}, alpha = {}", c.h_star, c.h_star2, c.xi1, c.moment_bound_alpha);
    let warnings = c.violations.iter().filter(|v| v.severity == Severity::Warning).count();
    let errors = c.violations.len() - warnings;
    println!("{errors} errors, {warnings} warnings");
}
