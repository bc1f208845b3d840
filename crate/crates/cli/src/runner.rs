//! Experiment orchestration.
//!
//! A config resolves in two stages: first the problem (dataset, horizon
//! accounting, `f*`, start point), then the noise envelope. Runs execute one
//! seed per rayon task and persist, per seed, the trajectory (or scalar
//! trace), the invariant report and the bound report, plus one `results.csv`
//! per method directory. Everything except the wall-time column is a pure
//! function of the config, so a re-run reproduces the artifacts byte for
//! byte.

use crate::config::{ExperimentConfig, FStarPolicy, LogModePolicy, NoiseSource, RecordMode};
use crate::rows::{self, ResultRow};
use adalab_core::analysis::{
    check_trajectory_invariants, compute_theorem1_bound, compute_theorem2_bound, BoundReport,
    InvariantOptions, InvariantReport, LogMode, Y_RESIDUAL_TOL,
};
use adalab_core::dataset::{load_libsvm, Dataset};
use adalab_core::oracles::{estimate_noise_params, samples_from_scalar_trace, NoiseSample};
use adalab_core::optim::{run_trajectory, run_trajectory_scalars};
use adalab_core::problems::{estimate_f_star, ProblemSpec, Smoothness};
use adalab_core::rng::derive_seed;
use adalab_core::trajectory::norm_sq;
use adalab_core::{HyperParams, NoiseSpec, Oracle, Problem, ScalarTrace, TrajectoryRecord};
use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Full records are kept up to this horizon under `record = "auto"`.
pub const FULL_RECORD_LIMIT: usize = 20_000;
/// Cap on the path length used when fitting a noise envelope.
const FIT_HORIZON_LIMIT: usize = 20_000;
/// Stream index for the dedicated envelope-fit path.
const FIT_STREAM: u64 = 0xF17;

/// Stage-one resolution: the concrete problem and run geometry.
pub struct ResolvedProblem {
    pub problem: Problem,
    pub horizon: usize,
    pub steps_per_epoch: Option<usize>,
    pub x1: Vec<f64>,
    pub f_star_provenance: String,
}

/// Stage-two resolution: the envelope the analysis machinery will trust.
pub struct ResolvedNoise {
    pub spec: Option<NoiseSpec>,
    pub provenance: String,
}

pub fn resolve_problem(cfg: &ExperimentConfig) -> Result<ResolvedProblem> {
    let dataset = if cfg.problem_spec.needs_dataset() {
        Some(Arc::new(load_dataset(cfg)?))
    } else {
        None
    };

    let (horizon, steps_per_epoch) = match (cfg.horizon, cfg.epochs) {
        (Some(t), None) => (t, None),
        (None, Some(epochs)) => {
            let batch = match cfg.oracle {
                Oracle::Minibatch { batch } => batch,
                _ => bail!("epoch accounting without a minibatch oracle"),
            };
            let n = dataset
                .as_ref()
                .map(|d| d.n())
                .ok_or_else(|| anyhow!("epoch accounting without a dataset"))?;
            let spe = n.div_ceil(batch);
            (epochs * spe, Some(spe))
        }
        _ => bail!("config must fix exactly one of horizon/epochs"),
    };

    let mut problem = cfg
        .problem_spec
        .instantiate(dataset)
        .with_context(|| format!("instantiating `{}`", cfg.problem_id))?;
    cfg.oracle
        .validate_for(&problem)
        .with_context(|| format!("oracle `{}` on `{}`", cfg.oracle.id(), cfg.problem_id))?;

    let f_star_provenance = match cfg.f_star {
        FStarPolicy::Fixed(v) => {
            problem = problem.with_f_star(v);
            format!("f* = {v} (configured)")
        }
        FStarPolicy::Auto => {
            let est = estimate_f_star(&problem, cfg.f_star_steps, cfg.f_star_eta, cfg.epsilon)
                .context("f* estimation job")?;
            problem = problem.with_f_star(est);
            format!(
                "f* = {est} (estimated: {} full-batch adagrad steps, eta = {})",
                cfg.f_star_steps, cfg.f_star_eta
            )
        }
        FStarPolicy::ProblemDefault => match problem.f_star() {
            Some(v) => format!("f* = {v} (exact optimum)"),
            None => "f* unknown (set f_star = \"auto\" or a number to enable gap-based \
                     analysis)"
                .to_string(),
        },
    };

    let x1 = cfg.x1.materialize(problem.dim())?;
    Ok(ResolvedProblem {
        problem,
        horizon,
        steps_per_epoch,
        x1,
        f_star_provenance,
    })
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let path: PathBuf = match &cfg.data_path {
        Some(p) => p.clone(),
        None => match std::env::var_os("A9A_PATH") {
            Some(p) => PathBuf::from(p),
            None => PathBuf::from("data/a9a"),
        },
    };
    if !path.exists() {
        bail!(
            "dataset not found at {} — download the `a9a` training split (LIBSVM format) and \
             point `data_path` or $A9A_PATH at it, or place it under data/a9a",
            path.display()
        );
    }
    load_libsvm(&path, None).with_context(|| format!("loading {}", path.display()))
}

pub fn resolve_noise(cfg: &ExperimentConfig, rp: &ResolvedProblem) -> Result<ResolvedNoise> {
    let d = rp.problem.dim();
    let (spec, provenance) = match cfg.noise {
        NoiseSource::Explicit(spec) => (
            Some(spec),
            format!("envelope (A, B, C) = ({}, {}, {}) (configured)", spec.a, spec.b, spec.c),
        ),
        NoiseSource::Oracle => match &cfg.oracle {
            Oracle::Exact => (
                Some(NoiseSpec::new(0.0, 0.0, 0.0)?),
                "zero envelope (exact oracle)".to_string(),
            ),
            Oracle::SyntheticA3 { spec } => (
                Some(*spec),
                format!(
                    "envelope (A, B, C) = ({}, {}, {}) (certified by the synthetic oracle)",
                    spec.a, spec.b, spec.c
                ),
            ),
            Oracle::Gaussian { sigma2 } => {
                let spec = NoiseSpec::subgaussian_for_gaussian(*sigma2, d);
                (
                    Some(spec),
                    format!(
                        "sub-Gaussian envelope C = {} for isotropic Gaussian noise \
                         (sigma2 = {sigma2}, d = {d})",
                        spec.c
                    ),
                )
            }
            Oracle::Minibatch { .. } => bail!("the minibatch oracle certifies no envelope"),
        },
        NoiseSource::Fit => {
            let (fit, fit_horizon, fit_seed) = fit_envelope(cfg, rp)?;
            let spec = fit.spec();
            (
                Some(spec),
                format!(
                    "envelope (A, B, C) = ({}, {}, {}) fitted on a fresh {} path: T = \
                     {fit_horizon}, seed = {fit_seed}, weights = {:?}, max sample ratio = {}",
                    spec.a, spec.b, spec.c, cfg.method, fit.weights, fit.max_ratio
                ),
            )
        }
    };
    Ok(ResolvedNoise { spec, provenance })
}

/// Collects envelope samples along one dedicated optimization path and fits
/// the smallest affine-variance envelope covering them. Gaps are clamped at
/// zero so that a path dipping below an *estimated* `f*` stays admissible.
fn fit_envelope(
    cfg: &ExperimentConfig,
    rp: &ResolvedProblem,
) -> Result<(adalab_core::NoiseFit, usize, u64)> {
    let f_star = rp.problem.require_f_star().map_err(|_| {
        anyhow!(
            "noise = \"fit\" needs f*; set f_star = \"auto\" to run the estimation job first, \
             or provide a number"
        )
    })?;
    let fit_horizon = rp.horizon.min(FIT_HORIZON_LIMIT);
    let fit_seed = derive_seed(cfg.seeds[0], FIT_STREAM);
    let hyper = cfg.hyper_for(fit_horizon)?;
    let trace = run_trajectory_scalars(
        &rp.problem,
        &cfg.oracle,
        cfg.method,
        &hyper,
        &rp.x1,
        fit_seed,
    )?;
    if trace.diverged {
        bail!(
            "the envelope-fit path diverged at step {:?}; lower eta before fitting",
            trace.divergence_step
        );
    }
    let samples: Vec<NoiseSample> = samples_from_scalar_trace(&trace, f_star)
        .into_iter()
        .map(|mut s| {
            s.gap = s.gap.max(0.0);
            s
        })
        .collect();
    let fit = estimate_noise_params(&samples, None)?;
    Ok((fit, fit_horizon, fit_seed))
}

pub fn resolve_log_mode(cfg: &ExperimentConfig) -> LogMode {
    match cfg.log_mode {
        LogModePolicy::Fixed(m) => m,
        LogModePolicy::Auto => match cfg.oracle {
            Oracle::Gaussian { .. } => LogMode::Subgaussian,
            _ => LogMode::AlmostSure,
        },
    }
}

/// Per-method run metadata, written once next to the CSV.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub problem: String,
    pub oracle: String,
    pub method: String,
    pub eta: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub accounting: String,
    pub delta: f64,
    pub c0: f64,
    pub log_mode: LogMode,
    pub record: String,
    pub checks: Vec<String>,
    pub seeds: Vec<u64>,
    pub f_star: Option<f64>,
    pub f_star_provenance: String,
    pub noise: Option<NoiseSpec>,
    pub noise_provenance: String,
    pub csv_schema: String,
}

/// Invariant artifact for runs where the suite could not execute.
#[derive(Debug, Serialize, Deserialize)]
pub struct SkippedInvariants {
    pub evaluated: bool,
    pub reason: String,
}

struct SeedArtifacts {
    row: ResultRow,
    diverged: bool,
}

/// Shared context for one experiment's seeds.
struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    rp: &'a ResolvedProblem,
    spec: Option<NoiseSpec>,
    log_mode: LogMode,
    hyper: HyperParams,
    /// `f(x1) - f*` and `||grad f(x1)||`, shared by every seed's certificate.
    delta_x1: Option<f64>,
    g1_norm: f64,
}

impl<'a> RunContext<'a> {
    fn new(
        cfg: &'a ExperimentConfig,
        rp: &'a ResolvedProblem,
        rn: &ResolvedNoise,
        horizon: usize,
    ) -> Result<Self> {
        let hyper = cfg.hyper_for(horizon)?;
        let g1_norm = norm_sq(&rp.problem.gradient(&rp.x1)).sqrt();
        let delta_x1 = rp.problem.f_star().map(|fs| rp.problem.value(&rp.x1) - fs);
        Ok(RunContext {
            cfg,
            rp,
            spec: rn.spec,
            log_mode: resolve_log_mode(cfg),
            hyper,
            delta_x1,
            g1_norm,
        })
    }

    /// Evaluates both certificates (where their hypotheses are stated) and
    /// the two high-probability events against the observed run.
    fn bound_report(&self, avg_grad_sq: f64, min_grad_sq: f64, gaps: Option<&[f64]>) -> BoundReport {
        let max_gap = gaps
            .map(|g| g.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .unwrap_or(f64::NAN);
        let mut report = BoundReport {
            avg_grad_sq,
            min_grad_sq,
            max_gap,
            theorem1: None,
            theorem2: None,
            delta_event: None,
            rhs_event: None,
        };
        if !self.cfg.method.is_coordinate_adaptive() {
            return report;
        }
        let (spec, delta_x1) = match (self.spec, self.delta_x1) {
            (Some(s), Some(dx)) if dx >= 0.0 => (s, dx),
            _ => return report,
        };
        match self.rp.problem.smoothness() {
            Some(Smoothness::GlobalL(l)) => {
                if let Ok(bound) = compute_theorem1_bound(
                    &spec,
                    l,
                    &self.hyper,
                    self.rp.problem.dim(),
                    delta_x1,
                    self.g1_norm,
                    self.cfg.delta,
                    self.log_mode,
                ) {
                    if let Some(gaps) = gaps {
                        report.delta_event = Some(gaps.iter().all(|&g| g <= bound.delta_cal));
                        report.rhs_event = Some(avg_grad_sq <= bound.rhs);
                    }
                    report.theorem1 = Some(bound);
                }
            }
            Some(Smoothness::Generalized { l0, l1 }) => {
                if let Ok(bound) = compute_theorem2_bound(
                    &spec,
                    l0,
                    l1,
                    &self.hyper,
                    self.rp.problem.dim(),
                    delta_x1,
                    self.g1_norm,
                    self.cfg.c0,
                    self.cfg.delta,
                ) {
                    if bound.applicable {
                        if let Some(gaps) = gaps {
                            report.delta_event = Some(gaps.iter().all(|&g| g <= bound.lam_x));
                            report.rhs_event = Some(avg_grad_sq <= bound.rhs);
                        }
                    }
                    report.theorem2 = Some(bound);
                }
            }
            None => {}
        }
        report
    }

    fn row_bound_rhs(&self, report: &BoundReport) -> f64 {
        if let Some(t1) = &report.theorem1 {
            return t1.rhs;
        }
        if let Some(t2) = &report.theorem2 {
            if t2.applicable {
                return t2.rhs;
            }
        }
        f64::NAN
    }
}

/// Pathwise envelope verification: every observed noise realization must sit
/// inside the envelope, up to relative rounding slack (and absolute floor
/// `1e-18` against a zero envelope).
fn a3_holds(spec: &NoiseSpec, triples: impl Iterator<Item = (f64, f64, f64)>) -> bool {
    let mut any = false;
    for (gap, grad_sq, noise_sq) in triples {
        any = true;
        let envelope = spec.envelope(gap.max(0.0), grad_sq);
        if noise_sq > envelope * (1.0 + 1e-9) + 1e-18 {
            return false;
        }
    }
    any
}

fn configured_pass(report: &InvariantReport, checks: &[String]) -> bool {
    use adalab_core::analysis::CheckStatus;
    checks.iter().all(|name| {
        report.get(name).is_some_and(|c| {
            matches!(c.status, CheckStatus::Pass | CheckStatus::NotApplicable)
        })
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn run_seed_full(ctx: &RunContext, seed_dir: &Path, seed: u64) -> Result<SeedArtifacts> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let record = run_trajectory(
        &ctx.rp.problem,
        &cfg.oracle,
        cfg.method,
        &ctx.hyper,
        &ctx.rp.x1,
        seed,
    )?;
    std::fs::create_dir_all(seed_dir)?;
    write_json(&seed_dir.join("trajectory.json"), &record)?;

    let invariants_pass;
    if record.diverged {
        invariants_pass = false;
        write_json(
            &seed_dir.join("invariants.json"),
            &SkippedInvariants {
                evaluated: false,
                reason: format!("run diverged at step {:?}", record.divergence_step),
            },
        )?;
    } else if cfg.method.is_coordinate_adaptive() {
        let opts = InvariantOptions {
            spec: ctx.spec,
            log_mode: ctx.log_mode,
            delta_prob: cfg.delta,
            y_tol: Y_RESIDUAL_TOL,
        };
        let report = check_trajectory_invariants(&record, &ctx.rp.problem, &opts)?;
        invariants_pass = configured_pass(&report, &cfg.checks);
        write_json(&seed_dir.join("invariants.json"), &report)?;
    } else {
        // the certificate machinery is defined for the adaptive updates only
        invariants_pass = true;
        write_json(
            &seed_dir.join("invariants.json"),
            &SkippedInvariants {
                evaluated: false,
                reason: format!("method {} records no certificate state", cfg.method),
            },
        )?;
    }

    let gaps: Option<Vec<f64>> = ctx.rp.problem.f_star().map(|fs| {
        let mut gaps: Vec<f64> = record.steps.iter().map(|e| e.f - fs).collect();
        gaps.push(record.final_f - fs);
        gaps
    });
    let bounds = ctx.bound_report(record.avg_grad_sq(), record.min_grad_sq(), gaps.as_deref());
    write_json(&seed_dir.join("bounds.json"), &bounds)?;

    let a3_verified = match (&ctx.spec, ctx.rp.problem.f_star()) {
        (Some(spec), Some(fs)) if !record.diverged => a3_holds(
            spec,
            record.steps.iter().map(|e| {
                let noise_sq = e
                    .g
                    .iter()
                    .zip(&e.grad)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (e.f - fs, norm_sq(&e.grad), noise_sq)
            }),
        ),
        _ => false,
    };

    let row = ResultRow {
        seed,
        t: ctx.hyper.horizon,
        method: cfg.method.to_string(),
        final_f: record.final_f,
        avg_grad_sq: record.avg_grad_sq(),
        min_grad_sq: record.min_grad_sq(),
        bound_rhs: ctx.row_bound_rhs(&bounds),
        a3_verified,
        invariants_pass,
        hp_event: bounds.hp_event().unwrap_or(false),
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok(SeedArtifacts {
        row,
        diverged: record.diverged,
    })
}

fn run_seed_scalars(ctx: &RunContext, seed_dir: &Path, seed: u64) -> Result<SeedArtifacts> {
    let start = Instant::now();
    let cfg = ctx.cfg;
    let trace = run_trajectory_scalars(
        &ctx.rp.problem,
        &cfg.oracle,
        cfg.method,
        &ctx.hyper,
        &ctx.rp.x1,
        seed,
    )?;
    std::fs::create_dir_all(seed_dir)?;
    write_json(&seed_dir.join("trace.json"), &trace)?;
    write_json(
        &seed_dir.join("invariants.json"),
        &SkippedInvariants {
            evaluated: false,
            reason: "scalar record mode keeps no per-step vectors".to_string(),
        },
    )?;

    let gaps: Option<Vec<f64>> = ctx.rp.problem.f_star().map(|fs| {
        let mut gaps: Vec<f64> = trace.steps.iter().map(|e| e.f - fs).collect();
        gaps.push(trace.final_f - fs);
        gaps
    });
    let bounds = ctx.bound_report(trace.avg_grad_sq(), trace.min_grad_sq(), gaps.as_deref());
    write_json(&seed_dir.join("bounds.json"), &bounds)?;

    let a3_verified = match (&ctx.spec, ctx.rp.problem.f_star()) {
        (Some(spec), Some(fs)) if !trace.diverged => a3_holds(
            spec,
            trace
                .steps
                .iter()
                .map(|e| (e.f - fs, e.grad_norm_sq, e.xi_norm_sq)),
        ),
        _ => false,
    };

    let row = ResultRow {
        seed,
        t: ctx.hyper.horizon,
        method: cfg.method.to_string(),
        final_f: trace.final_f,
        avg_grad_sq: trace.avg_grad_sq(),
        min_grad_sq: trace.min_grad_sq(),
        bound_rhs: ctx.row_bound_rhs(&bounds),
        a3_verified,
        invariants_pass: !trace.diverged,
        hp_event: bounds.hp_event().unwrap_or(false),
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok(SeedArtifacts {
        row,
        diverged: trace.diverged,
    })
}

#[derive(Debug)]
pub struct RunSummary {
    pub rows: Vec<ResultRow>,
    pub all_pass: bool,
    pub method_dir: PathBuf,
    pub noise_provenance: String,
    pub f_star_provenance: String,
    pub accounting: String,
}

pub fn run_experiment(cfg: &ExperimentConfig, out_override: Option<&Path>) -> Result<RunSummary> {
    let rp = resolve_problem(cfg)?;
    let rn = resolve_noise(cfg, &rp)?;

    let record_full = match cfg.record {
        RecordMode::Full => true,
        RecordMode::Scalars => false,
        RecordMode::Auto => rp.horizon <= FULL_RECORD_LIMIT,
    };
    if !record_full && !cfg.checks.is_empty() {
        bail!(
            "invariant checks need full per-step records, but this run keeps scalar traces \
             (horizon {}); set record = \"full\", shorten the horizon, or set checks = []",
            rp.horizon
        );
    }
    if record_full && !cfg.checks.is_empty() && !cfg.method.is_coordinate_adaptive() {
        bail!(
            "the configured checks apply to the adaptive updates only; set checks = [] for \
             method `{}`",
            cfg.method
        );
    }

    let out_dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| anyhow!("no output directory (config `out_dir` or --out)"))?;
    let method_dir = out_dir.join(cfg.method.as_str());
    std::fs::create_dir_all(&method_dir)
        .with_context(|| format!("creating {}", method_dir.display()))?;

    let ctx = RunContext::new(cfg, &rp, &rn, rp.horizon)?;
    let accounting = cfg.accounting_note(rp.steps_per_epoch, rp.horizon);

    let meta = RunMeta {
        problem: rp.problem.id().to_string(),
        oracle: cfg.oracle.id(),
        method: cfg.method.to_string(),
        eta: cfg.eta,
        beta: cfg.beta,
        epsilon: cfg.epsilon,
        horizon: rp.horizon,
        epochs: cfg.epochs,
        steps_per_epoch: rp.steps_per_epoch,
        accounting: accounting.clone(),
        delta: cfg.delta,
        c0: cfg.c0,
        log_mode: ctx.log_mode,
        record: if record_full { "full" } else { "scalars" }.to_string(),
        checks: cfg.checks.clone(),
        seeds: cfg.seeds.clone(),
        f_star: rp.problem.f_star(),
        f_star_provenance: rp.f_star_provenance.clone(),
        noise: rn.spec,
        noise_provenance: rn.provenance.clone(),
        csv_schema: rows::CSV_HEADER.to_string(),
    };
    write_json(&method_dir.join("meta.json"), &meta)?;

    let outcomes: Vec<SeedArtifacts> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let seed_dir = method_dir.join(format!("seed-{seed}"));
            let out = if record_full {
                run_seed_full(&ctx, &seed_dir, seed)
            } else {
                run_seed_scalars(&ctx, &seed_dir, seed)
            };
            if let Ok(o) = &out {
                eprintln!(
                    "seed {seed}: final_f = {}, avg_grad_sq = {}{}",
                    o.row.final_f,
                    o.row.avg_grad_sq,
                    if o.diverged { " (diverged)" } else { "" }
                );
            }
            out.with_context(|| format!("seed {seed}"))
        })
        .collect::<Result<_>>()?;

    let mut rows_out: Vec<ResultRow> = outcomes.into_iter().map(|o| o.row).collect();
    rows_out.sort_by_key(|r| r.seed);
    std::fs::write(method_dir.join("results.csv"), rows::write_csv(&rows_out))?;

    let all_pass = rows_out.iter().all(|r| r.invariants_pass);
    Ok(RunSummary {
        rows: rows_out,
        all_pass,
        method_dir,
        noise_provenance: rn.provenance,
        f_star_provenance: rp.f_star_provenance,
        accounting,
    })
}

/// One sweep cell, persisted so an interrupted sweep resumes where it
/// stopped instead of recomputing finished horizons.
#[derive(Debug, Serialize, Deserialize)]
struct SweepCell {
    row: ResultRow,
    diverged: bool,
    note: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SlopeReport {
    pub t_grid: Vec<usize>,
    /// median avg_grad_sq per surviving horizon, aligned with `used_ts`
    pub used_ts: Vec<usize>,
    pub medians: Vec<f64>,
    /// cells left out of the fit, with the reason
    pub excluded: Vec<String>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub accounting: String,
}

#[derive(Debug)]
pub struct SweepSummary {
    pub report: SlopeReport,
    pub rows: Vec<ResultRow>,
    pub method_dir: PathBuf,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn sweep_rates(cfg: &ExperimentConfig, out_override: Option<&Path>) -> Result<SweepSummary> {
    let grid = cfg
        .t_grid
        .clone()
        .ok_or_else(|| anyhow!("sweep needs a `t_grid` in the config"))?;
    if !cfg.checks.is_empty() {
        bail!(
            "sweeps keep scalar traces and run no invariant checks; set checks = [] (use the \
             `run` command for certificate checks)"
        );
    }
    let rp = resolve_problem(cfg)?;
    let rn = resolve_noise(cfg, &rp)?;
    let out_dir = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| anyhow!("no output directory (config `out_dir` or --out)"))?;
    let method_dir = out_dir.join(cfg.method.as_str());
    let cells_dir = method_dir.join("cells");
    std::fs::create_dir_all(&cells_dir)?;

    let cells: Vec<(usize, u64)> = grid
        .iter()
        .flat_map(|&t| cfg.seeds.iter().map(move |&s| (t, s)))
        .collect();

    let results: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(t, seed)| -> Result<SweepCell> {
            let cell_path = cells_dir.join(format!("T{t}-seed{seed}.json"));
            if cell_path.exists() {
                return read_json(&cell_path);
            }
            let ctx = RunContext::new(cfg, &rp, &rn, t)?;
            let start = Instant::now();
            let trace = run_trajectory_scalars(
                &rp.problem,
                &cfg.oracle,
                cfg.method,
                &ctx.hyper,
                &rp.x1,
                seed,
            )?;
            let gaps: Option<Vec<f64>> = rp.problem.f_star().map(|fs| {
                let mut g: Vec<f64> = trace.steps.iter().map(|e| e.f - fs).collect();
                g.push(trace.final_f - fs);
                g
            });
            let bounds = ctx.bound_report(trace.avg_grad_sq(), trace.min_grad_sq(), gaps.as_deref());
            let a3_verified = match (&ctx.spec, rp.problem.f_star()) {
                (Some(spec), Some(fs)) if !trace.diverged => a3_holds(
                    spec,
                    trace
                        .steps
                        .iter()
                        .map(|e| (e.f - fs, e.grad_norm_sq, e.xi_norm_sq)),
                ),
                _ => false,
            };
            let cell = SweepCell {
                row: ResultRow {
                    seed,
                    t,
                    method: cfg.method.to_string(),
                    final_f: trace.final_f,
                    avg_grad_sq: trace.avg_grad_sq(),
                    min_grad_sq: trace.min_grad_sq(),
                    bound_rhs: ctx.row_bound_rhs(&bounds),
                    a3_verified,
                    invariants_pass: !trace.diverged,
                    hp_event: bounds.hp_event().unwrap_or(false),
                    wall_ms: start.elapsed().as_millis() as u64,
                },
                diverged: trace.diverged,
                note: trace
                    .divergence_step
                    .map(|s| format!("diverged at step {s}")),
            };
            write_json(&cell_path, &cell)?;
            eprintln!("cell T = {t}, seed {seed}: avg_grad_sq = {}", cell.row.avg_grad_sq);
            Ok(cell)
        })
        .collect::<Result<_>>()?;

    let mut rows_out: Vec<ResultRow> = results.iter().map(|c| c.row.clone()).collect();
    rows_out.sort_by_key(|r| (r.t, r.seed));
    std::fs::write(method_dir.join("results.csv"), rows::write_csv(&rows_out))?;

    let mut excluded = Vec::new();
    let mut used_ts = Vec::new();
    let mut medians = Vec::new();
    for &t in &grid {
        let mut vals = Vec::new();
        for c in results.iter().filter(|c| c.row.t == t) {
            if c.diverged || !c.row.avg_grad_sq.is_finite() {
                excluded.push(format!(
                    "T = {t}, seed {}: {}",
                    c.row.seed,
                    c.note.as_deref().unwrap_or("non-finite metric")
                ));
            } else {
                vals.push(c.row.avg_grad_sq);
            }
        }
        if vals.is_empty() {
            excluded.push(format!("T = {t}: no surviving seeds, horizon left out of the fit"));
        } else {
            used_ts.push(t);
            medians.push(median(vals));
        }
    }
    let fit = adalab_core::analysis::fit_loglog_rate(&used_ts, &medians)
        .context("rate fit over the surviving horizons")?;
    let report = SlopeReport {
        t_grid: grid,
        used_ts,
        medians,
        excluded,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        accounting: cfg.accounting_note(rp.steps_per_epoch, rp.horizon),
    };
    write_json(&method_dir.join("rates.json"), &report)?;
    Ok(SweepSummary {
        report,
        rows: rows_out,
        method_dir,
    })
}

/// Output of the envelope-estimation command.
#[derive(Debug, Serialize, Deserialize)]
pub struct NoiseFitReport {
    pub problem: String,
    /// ridge weight when the problem is regularized logistic regression
    pub lambda: Option<f64>,
    pub oracle: String,
    pub method: String,
    pub eta: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub horizon: usize,
    pub accounting: String,
    pub seed: u64,
    pub f_star: f64,
    pub f_star_provenance: String,
    /// sampling protocol, spelled out so a mismatch with published constants
    /// is attributable
    pub protocol: String,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub weights: [f64; 3],
    pub max_ratio: f64,
    pub n_samples: usize,
}

pub fn estimate_noise_cmd(
    cfg: &ExperimentConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<NoiseFitReport> {
    let rp = resolve_problem(cfg)?;
    let f_star = rp.problem.require_f_star().map_err(|_| {
        anyhow!(
            "envelope estimation needs f*; set f_star = \"auto\" to run the estimation job \
             first, or provide a number"
        )
    })?;
    let seed = seed_override.unwrap_or_else(|| derive_seed(cfg.seeds[0], FIT_STREAM));
    let hyper = cfg.hyper_for(rp.horizon)?;
    let trace = run_trajectory_scalars(&rp.problem, &cfg.oracle, cfg.method, &hyper, &rp.x1, seed)?;
    if trace.diverged {
        bail!(
            "the sampling path diverged at step {:?}; lower eta before fitting",
            trace.divergence_step
        );
    }
    let samples: Vec<NoiseSample> = samples_from_scalar_trace(&trace, f_star)
        .into_iter()
        .map(|mut s| {
            s.gap = s.gap.max(0.0);
            s
        })
        .collect();
    let fit = estimate_noise_params(&samples, None)?;

    let lambda = match cfg.problem_spec {
        ProblemSpec::RegLogistic { lambda, .. } => Some(lambda),
        _ => None,
    };
    let report = NoiseFitReport {
        problem: rp.problem.id().to_string(),
        lambda,
        oracle: cfg.oracle.id(),
        method: cfg.method.to_string(),
        eta: cfg.eta,
        beta: cfg.beta,
        epsilon: cfg.epsilon,
        horizon: rp.horizon,
        accounting: cfg.accounting_note(rp.steps_per_epoch, rp.horizon),
        seed,
        f_star,
        f_star_provenance: rp.f_star_provenance.clone(),
        protocol: format!(
            "one fresh {} path from the configured start point; one sample (gap, grad_sq, \
             noise_sq) per step, gaps clamped at zero; smallest weighted envelope covering all \
             samples, ties toward B then A",
            cfg.method
        ),
        a: fit.a,
        b: fit.b,
        c: fit.c,
        weights: fit.weights,
        max_ratio: fit.max_ratio,
        n_samples: fit.n_samples,
    };

    if let Some(out_dir) = out_override.map(Path::to_path_buf).or_else(|| cfg.out_dir.clone()) {
        std::fs::create_dir_all(&out_dir)?;
        write_json(&out_dir.join("noise-fit.json"), &report)?;
        let mut csv = String::from("step,gap,grad_sq,noise_sq\n");
        for (i, s) in samples.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", i + 1, s.gap, s.grad_sq, s.noise_sq));
        }
        std::fs::write(out_dir.join("samples.csv"), csv)?;
    }
    Ok(report)
}

#[derive(Debug)]
pub struct CheckOutcome {
    pub seed: u64,
    pub pass: bool,
    pub report: InvariantReport,
}

#[derive(Debug)]
pub struct CheckSummary {
    pub outcomes: Vec<CheckOutcome>,
    pub all_pass: bool,
}

/// Re-runs the invariant suite on trajectories stored by a previous `run`.
pub fn check_stored(cfg: &ExperimentConfig, dir_override: Option<&Path>) -> Result<CheckSummary> {
    let rp = resolve_problem(cfg)?;
    let rn = resolve_noise(cfg, &rp)?;
    let out_dir = dir_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| anyhow!("no results directory (config `out_dir` or --out)"))?;
    let method_dir = out_dir.join(cfg.method.as_str());

    let mut paths: Vec<(u64, PathBuf)> = Vec::new();
    if method_dir.is_dir() {
        for entry in std::fs::read_dir(&method_dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(seed_str) = name.strip_prefix("seed-") {
                if let Ok(seed) = seed_str.parse::<u64>() {
                    let traj = entry.path().join("trajectory.json");
                    if traj.exists() {
                        paths.push((seed, traj));
                    }
                }
            }
        }
    }
    if paths.is_empty() {
        bail!(
            "no stored trajectories under {} (expected {}/seed-<n>/trajectory.json; scalar \
             traces cannot be re-checked)",
            out_dir.display(),
            cfg.method
        );
    }
    paths.sort_by_key(|(seed, _)| *seed);

    let opts = InvariantOptions {
        spec: rn.spec,
        log_mode: resolve_log_mode(cfg),
        delta_prob: cfg.delta,
        y_tol: Y_RESIDUAL_TOL,
    };
    let mut outcomes = Vec::new();
    for (seed, path) in paths {
        let record: TrajectoryRecord = read_json(&path)?;
        if record.problem_id != rp.problem.id() {
            bail!(
                "stored trajectory {} was produced on `{}`, config says `{}`",
                path.display(),
                record.problem_id,
                rp.problem.id()
            );
        }
        let report = check_trajectory_invariants(&record, &rp.problem, &opts)?;
        let pass = configured_pass(&report, &cfg.checks);
        outcomes.push(CheckOutcome { seed, pass, report });
    }
    let all_pass = outcomes.iter().all(|o| o.pass);
    Ok(CheckSummary { outcomes, all_pass })
}

/// Reads back a stored scalar trace or full trajectory as (step, f,
/// grad_norm_sq) series for plotting.
pub fn load_series(seed_dir: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let traj = seed_dir.join("trajectory.json");
    if traj.exists() {
        let record: TrajectoryRecord = read_json(&traj)?;
        return Ok(record
            .steps
            .iter()
            .enumerate()
            .map(|(i, e)| (i + 1, e.f, norm_sq(&e.grad)))
            .collect());
    }
    let trace_path = seed_dir.join("trace.json");
    if trace_path.exists() {
        let trace: ScalarTrace = read_json(&trace_path)?;
        return Ok(trace
            .steps
            .iter()
            .enumerate()
            .map(|(i, e)| (i + 1, e.f, e.grad_norm_sq))
            .collect());
    }
    bail!("no trajectory.json or trace.json in {}", seed_dir.display());
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn cfg_with(extra: &str) -> ExperimentConfig {
        let base = format!(
            r#"
            problem = "quadratic:d=4,L=2"
            oracle = "synthetic-a3:A=0.5,B=0.5,C=0.5"
            method = "adagrad-m"
            eta = 0.05
            beta = 0.9
            horizon = 200
            seeds = [0, 1, 2]
            x1 = 1.0
            {extra}
            "#
        );
        parse_config(&base).unwrap()
    }

    #[test]
    fn quadratic_resolution_is_complete() {
        let cfg = cfg_with("");
        let rp = resolve_problem(&cfg).unwrap();
        assert_eq!(rp.horizon, 200);
        assert_eq!(rp.x1, vec![1.0; 4]);
        assert!(rp.f_star_provenance.contains("exact optimum"));
        let rn = resolve_noise(&cfg, &rp).unwrap();
        let spec = rn.spec.unwrap();
        assert_eq!((spec.a, spec.b, spec.c), (0.5, 0.5, 0.5));
        assert_eq!(resolve_log_mode(&cfg), LogMode::AlmostSure);
    }

    #[test]
    fn gaussian_oracle_gets_subgaussian_budgets_by_default() {
        let cfg = cfg_with("").with_oracle("gaussian:sigma2=2");
        let rp = resolve_problem(&cfg).unwrap();
        let rn = resolve_noise(&cfg, &rp).unwrap();
        let spec = rn.spec.unwrap();
        assert_eq!(spec.a, 0.0);
        assert_eq!(spec.b, 0.0);
        assert!(spec.c > 2.0); // inflated by the sub-Gaussian constant
        assert_eq!(resolve_log_mode(&cfg), LogMode::Subgaussian);
    }

    impl ExperimentConfig {
        fn with_oracle(mut self, id: &str) -> Self {
            self.oracle = Oracle::parse(id).unwrap();
            self
        }
    }

    #[test]
    fn fitted_envelope_covers_its_own_path() {
        let cfg = cfg_with("noise = \"fit\"");
        let rp = resolve_problem(&cfg).unwrap();
        let rn = resolve_noise(&cfg, &rp).unwrap();
        let spec = rn.spec.unwrap();
        assert!(rn.provenance.contains("fitted on a fresh adagrad-m path"));
        // the synthetic oracle saturates (0.5, 0.5, 0.5); the fit must cover
        // every observed realization, which stays inside that envelope
        assert!(spec.a.is_finite() && spec.b.is_finite() && spec.c >= 0.0);
    }

    #[test]
    fn missing_dataset_is_reported_with_instructions() {
        let text = r#"
            problem = "a9a-reglog:lambda=0.0001"
            oracle = "minibatch:batch=16"
            method = "adagrad-m"
            eta = 0.001
            beta = 0.9
            horizon = 10
            seeds = [0]
            x1 = 0.0
            data_path = "/nonexistent/a9a"
        "#;
        let cfg = parse_config(text).unwrap();
        let err = format!("{:#}", resolve_problem(&cfg).err().expect("must fail"));
        assert!(err.contains("/nonexistent/a9a"), "{err}");
        assert!(err.contains("A9A_PATH"), "{err}");
    }

    #[test]
    fn epoch_accounting_multiplies_out() {
        use adalab_core::rng::stream_rng;
        // synthetic stand-in dataset written as LIBSVM so the loader path is
        // exercised end to end
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.libsvm");
        let mut rng = stream_rng(7, 0);
        let data = Dataset::synthetic_sparse(25, 6, 3, &mut rng);
        let mut text = String::new();
        for i in 0..data.n() {
            let (idx, vals) = data.row(i);
            let label = if data.label(i) > 0.0 { "+1" } else { "-1" };
            text.push_str(label);
            for (j, v) in idx.iter().zip(vals) {
                text.push_str(&format!(" {}:{}", j + 1, v));
            }
            text.push('\n');
        }
        std::fs::write(&path, text).unwrap();

        let cfg_text = format!(
            r#"
            problem = "a9a-reglog:lambda=0.01"
            oracle = "minibatch:batch=10"
            method = "adagrad-m"
            eta = 0.01
            beta = 0.9
            epochs = 4
            seeds = [0]
            x1 = 0.0
            f_star = "auto"
            data_path = "{}"
            "#,
            path.display()
        );
        let cfg = parse_config(&cfg_text).unwrap();
        let rp = resolve_problem(&cfg).unwrap();
        // 25 examples, batch 10 -> 3 steps per epoch
        assert_eq!(rp.steps_per_epoch, Some(3));
        assert_eq!(rp.horizon, 12);
        assert!(rp.f_star_provenance.contains("estimated"));
    }

    #[test]
    fn run_writes_rows_and_artifacts_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_with("");
        let summary = run_experiment(&cfg, Some(dir.path())).unwrap();
        assert_eq!(summary.rows.len(), 3);
        assert!(summary.all_pass);
        assert!(summary.rows.iter().all(|r| r.a3_verified));
        assert!(summary.rows.iter().all(|r| r.invariants_pass));
        assert!(summary.rows.windows(2).all(|w| w[0].seed < w[1].seed));

        let method_dir = dir.path().join("adagrad-m");
        for seed in [0, 1, 2] {
            let seed_dir = method_dir.join(format!("seed-{seed}"));
            assert!(seed_dir.join("trajectory.json").exists());
            assert!(seed_dir.join("invariants.json").exists());
            assert!(seed_dir.join("bounds.json").exists());
        }
        let csv1 = std::fs::read_to_string(method_dir.join("results.csv")).unwrap();

        // second run in a fresh directory: identical bytes except wall_ms
        let dir2 = tempfile::tempdir().unwrap();
        run_experiment(&cfg, Some(dir2.path())).unwrap();
        let csv2 =
            std::fs::read_to_string(dir2.path().join("adagrad-m/results.csv")).unwrap();
        let strip = |text: &str| {
            text.lines()
                .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&csv1), strip(&csv2));

        let t1 = std::fs::read(method_dir.join("seed-1/trajectory.json")).unwrap();
        let t2 = std::fs::read(dir2.path().join("adagrad-m/seed-1/trajectory.json")).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn divergent_runs_are_flagged_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        // plain SGD on the quartic with a huge step overflows within a few
        // steps (the adaptive rules would bound each move by eta)
        let text = r#"
            problem = "quartic:d=4"
            oracle = "exact"
            method = "sgd"
            eta = 1000000.0
            beta = 0.0
            horizon = 50
            seeds = [0]
            x1 = 1.5
            checks = []
        "#;
        let cfg = parse_config(text).unwrap();
        let summary = run_experiment(&cfg, Some(dir.path())).unwrap();
        assert_eq!(summary.rows.len(), 1);
        let row = &summary.rows[0];
        assert!(!row.invariants_pass);
        assert!(!summary.all_pass);
        assert!(row.final_f.is_nan() || row.final_f.is_infinite() || !row.a3_verified);
    }

    #[test]
    fn scalar_mode_with_checks_is_a_config_level_error() {
        let cfg = cfg_with("record = \"scalars\"");
        let err = run_experiment(&cfg, Some(Path::new("/tmp/unused"))).err().expect("must fail");
        assert!(format!("{err:#}").contains("full per-step records"));
    }

    #[test]
    fn bound_rhs_appears_for_certified_smooth_runs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_with("");
        let summary = run_experiment(&cfg, Some(dir.path())).unwrap();
        for row in &summary.rows {
            assert!(row.bound_rhs.is_finite() && row.bound_rhs > 0.0);
        }
        // the stored bound report must carry the certificate line
        let bounds: BoundReport = read_json(
            &dir.path().join("adagrad-m/seed-0/bounds.json"),
        )
        .unwrap();
        assert!(bounds.theorem1.is_some());
        assert!(bounds.delta_event.is_some() && bounds.rhs_event.is_some());
    }

    #[test]
    fn sweep_fits_a_slope_and_resumes_from_cells() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"
            problem = "quadratic:d=4,L=2"
            oracle = "exact"
            method = "adagrad-m"
            eta = 0.5
            beta = 0.9
            horizon = 128
            t_grid = [16, 32, 64, 128]
            seeds = [0, 1, 2]
            x1 = 1.0
            checks = []
        "#;
        let cfg = parse_config(text).unwrap();
        let summary = sweep_rates(&cfg, Some(dir.path())).unwrap();
        assert_eq!(summary.rows.len(), 12);
        assert_eq!(summary.report.used_ts, vec![16, 32, 64, 128]);
        // noiseless adagrad on a quadratic decays fast
        assert!(summary.report.slope < -0.5, "slope = {}", summary.report.slope);
        assert!(summary.report.excluded.is_empty());

        // poison one cell file; a resumed sweep must trust it rather than
        // recompute, proving cells are the unit of resumption
        let cell_path = dir.path().join("adagrad-m/cells/T16-seed0.json");
        let mut cell: SweepCell = read_json(&cell_path).unwrap();
        let original = cell.row.avg_grad_sq;
        cell.row.avg_grad_sq = 123.456;
        write_json(&cell_path, &cell).unwrap();
        let resumed = sweep_rates(&cfg, Some(dir.path())).unwrap();
        let poisoned = resumed
            .rows
            .iter()
            .find(|r| r.t == 16 && r.seed == 0)
            .unwrap();
        assert_eq!(poisoned.avg_grad_sq, 123.456);
        assert_ne!(original, 123.456);
    }

    #[test]
    fn sweep_requires_explicitly_empty_checks() {
        let text = r#"
            problem = "quadratic:d=4,L=2"
            oracle = "exact"
            method = "adagrad-m"
            eta = 0.5
            beta = 0.9
            horizon = 128
            t_grid = [16, 32, 64, 128]
            seeds = [0]
            x1 = 1.0
        "#;
        let cfg = parse_config(text).unwrap();
        let err = sweep_rates(&cfg, Some(Path::new("/tmp/unused"))).err().expect("must fail");
        assert!(format!("{err:#}").contains("checks = []"));
    }

    #[test]
    fn noise_estimation_reports_protocol_and_samples() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_with("");
        let report = estimate_noise_cmd(&cfg, Some(dir.path()), Some(99)).unwrap();
        assert_eq!(report.seed, 99);
        assert!(report.max_ratio <= 1.0 + 1e-9);
        assert!(report.protocol.contains("gaps clamped at zero"));
        assert!(dir.path().join("noise-fit.json").exists());
        let csv = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
        assert!(csv.starts_with("step,gap,grad_sq,noise_sq\n"));
        assert_eq!(csv.lines().count(), 201); // header + one per step
    }

    #[test]
    fn stored_trajectories_can_be_rechecked() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_with("");
        run_experiment(&cfg, Some(dir.path())).unwrap();
        let summary = check_stored(&cfg, Some(dir.path())).unwrap();
        assert_eq!(summary.outcomes.len(), 3);
        assert!(summary.all_pass);
        assert_eq!(summary.outcomes[0].seed, 0);

        // checking an empty directory is an explicit error
        let empty = tempfile::tempdir().unwrap();
        let err = check_stored(&cfg, Some(empty.path())).err().expect("must fail");
        assert!(format!("{err:#}").contains("no stored trajectories"));
    }
}
