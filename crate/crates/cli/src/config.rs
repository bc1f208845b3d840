//! Experiment configuration.
//!
//! Configs are TOML with strict unknown-key rejection, and every referenced
//! id (problem, oracle, method, check names) is resolved at load time so a
//! typo fails before any run starts.

use adalab_core::analysis::{LogMode, CHECK_NAMES};
use adalab_core::oracles::NoiseSpec;
use adalab_core::problems::ProblemSpec;
use adalab_core::{HyperParams, Method, Oracle};
use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

fn default_epsilon() -> f64 {
    1e-8
}
fn default_delta() -> f64 {
    0.05
}
fn default_c0() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum X1Spec {
    Fill(f64),
    Vector(Vec<f64>),
}

impl X1Spec {
    pub fn materialize(&self, dim: usize) -> Result<Vec<f64>> {
        match self {
            X1Spec::Fill(v) => {
                if !v.is_finite() {
                    bail!("x1 fill value must be finite, got {v}");
                }
                Ok(vec![*v; dim])
            }
            X1Spec::Vector(v) => {
                if v.len() != dim {
                    bail!("x1 has {} coordinates but the problem has dimension {dim}", v.len());
                }
                if v.iter().any(|a| !a.is_finite()) {
                    bail!("x1 must be finite");
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FStarRaw {
    Keyword(String),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FStarPolicy {
    /// Use whatever the problem construction provides (exact optima only).
    ProblemDefault,
    /// Run the deterministic estimation job before the experiment.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum NoiseRaw {
    Keyword(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSource {
    /// Take the envelope the oracle itself certifies (synthetic spec, the
    /// sub-Gaussian constant for the Gaussian oracle, zeros for exact).
    Oracle,
    /// Fit an envelope on a fresh optimization path before the runs.
    Fit,
    Explicit(NoiseSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RecordMode {
    /// Full records up to 20k steps, scalar traces beyond.
    #[default]
    Auto,
    Full,
    Scalars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogModePolicy {
    /// Sub-Gaussian budgets for the Gaussian oracle, almost-sure otherwise.
    Auto,
    Fixed(LogMode),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: String,
    oracle: String,
    method: String,
    eta: f64,
    beta: f64,
    #[serde(default = "default_epsilon")]
    epsilon: f64,
    horizon: Option<usize>,
    epochs: Option<usize>,
    seeds: Option<Vec<u64>>,
    seed_count: Option<usize>,
    seed_start: Option<u64>,
    t_grid: Option<Vec<usize>>,
    #[serde(default = "default_delta")]
    delta: f64,
    checks: Option<Vec<String>>,
    out_dir: Option<String>,
    #[serde(default)]
    record: RecordMode,
    x1: X1Spec,
    data_path: Option<String>,
    f_star: Option<FStarRaw>,
    noise: Option<NoiseRaw>,
    log_mode: Option<String>,
    #[serde(default = "default_c0")]
    c0: f64,
    f_star_steps: Option<usize>,
    f_star_eta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem_id: String,
    pub problem_spec: ProblemSpec,
    pub oracle: Oracle,
    pub method: Method,
    pub eta: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Set when the config is step-counted; otherwise derived from `epochs`
    /// once the dataset size is known.
    pub horizon: Option<usize>,
    pub epochs: Option<usize>,
    pub seeds: Vec<u64>,
    pub t_grid: Option<Vec<usize>>,
    pub delta: f64,
    pub checks: Vec<String>,
    pub out_dir: Option<PathBuf>,
    pub record: RecordMode,
    pub x1: X1Spec,
    pub data_path: Option<PathBuf>,
    pub f_star: FStarPolicy,
    pub noise: NoiseSource,
    pub log_mode: LogModePolicy,
    pub c0: f64,
    pub f_star_steps: usize,
    pub f_star_eta: f64,
}

impl ExperimentConfig {
    pub fn hyper_for(&self, horizon: usize) -> Result<HyperParams> {
        HyperParams::new(self.eta, self.beta, self.epsilon, horizon)
            .context("invalid hyper-parameters")
    }

    /// The accounting note included in every report header.
    pub fn accounting_note(&self, steps_per_epoch: Option<usize>, horizon: usize) -> String {
        match (self.epochs, steps_per_epoch) {
            (Some(e), Some(spe)) => {
                format!("horizon accounting: {e} epochs x {spe} steps/epoch = {horizon} steps")
            }
            _ => format!("horizon accounting: {horizon} steps (step-counted config)"),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).context("config rejected")?;

    let problem_spec =
        ProblemSpec::parse(&raw.problem).with_context(|| format!("problem `{}`", raw.problem))?;
    let oracle =
        Oracle::parse(&raw.oracle).with_context(|| format!("oracle `{}`", raw.oracle))?;
    let method =
        Method::parse(&raw.method).with_context(|| format!("method `{}`", raw.method))?;

    if method != Method::AdaGradM && raw.beta != 0.0 {
        bail!("method `{}` does not take momentum; set beta = 0", raw.method);
    }

    let seeds = match (&raw.seeds, raw.seed_count) {
        (Some(_), Some(_)) => bail!("give either `seeds` or `seed_count`, not both"),
        (Some(s), None) => s.clone(),
        (None, Some(n)) => {
            let start = raw.seed_start.unwrap_or(0);
            (0..n as u64).map(|i| start + i).collect()
        }
        (None, None) => bail!("no seeds configured (`seeds` or `seed_count`)"),
    };
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    {
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            bail!("seeds must be distinct");
        }
    }
    if raw.seed_start.is_some() && raw.seed_count.is_none() {
        bail!("`seed_start` only makes sense together with `seed_count`");
    }

    match (raw.horizon, raw.epochs) {
        (Some(_), Some(_)) => bail!("give either `horizon` or `epochs`, not both"),
        (None, None) => bail!("one of `horizon` or `epochs` is required"),
        (Some(0), _) => bail!("horizon must be >= 1"),
        (_, Some(0)) => bail!("epochs must be >= 1"),
        _ => {}
    }
    if raw.epochs.is_some() {
        if !matches!(oracle, Oracle::Minibatch { .. }) {
            bail!("`epochs` accounting requires the minibatch oracle");
        }
        if !problem_spec.needs_dataset() {
            bail!("`epochs` accounting requires a dataset-backed problem");
        }
    }

    if let Some(grid) = &raw.t_grid {
        validate_t_grid(grid)?;
    }

    let checks = match raw.checks {
        None => CHECK_NAMES.iter().map(|s| s.to_string()).collect(),
        Some(list) => {
            for name in &list {
                if !CHECK_NAMES.contains(&name.as_str()) {
                    bail!(
                        "unknown check `{name}`; valid names: {}",
                        CHECK_NAMES.join(", ")
                    );
                }
            }
            let mut sorted = list.clone();
            sorted.sort();
            sorted.dedup();
            if sorted.len() != list.len() {
                bail!("check list has duplicates");
            }
            list
        }
    };

    let f_star = match raw.f_star {
        None => FStarPolicy::ProblemDefault,
        Some(FStarRaw::Fixed(v)) => {
            if !v.is_finite() {
                bail!("f_star must be finite, got {v}");
            }
            FStarPolicy::Fixed(v)
        }
        Some(FStarRaw::Keyword(k)) if k == "auto" => FStarPolicy::Auto,
        Some(FStarRaw::Keyword(k)) => bail!("f_star must be a number or \"auto\", got `{k}`"),
    };

    let noise = match raw.noise {
        None => match oracle {
            Oracle::Minibatch { .. } => NoiseSource::Fit,
            _ => NoiseSource::Oracle,
        },
        Some(NoiseRaw::Keyword(k)) => match k.as_str() {
            "oracle" => NoiseSource::Oracle,
            "fit" => NoiseSource::Fit,
            other => bail!("noise must be \"oracle\", \"fit\" or [A,B,C], got `{other}`"),
        },
        Some(NoiseRaw::Explicit(v)) => {
            if v.len() != 3 {
                bail!("explicit noise envelope needs exactly [A, B, C], got {} values", v.len());
            }
            NoiseSource::Explicit(NoiseSpec::new(v[0], v[1], v[2]).context("noise envelope")?)
        }
    };
    if matches!(oracle, Oracle::Minibatch { .. }) && noise == NoiseSource::Oracle {
        bail!("the minibatch oracle certifies no envelope; use noise = \"fit\" or [A,B,C]");
    }

    let log_mode = match raw.log_mode.as_deref() {
        None | Some("auto") => LogModePolicy::Auto,
        Some("almost-sure") => LogModePolicy::Fixed(LogMode::AlmostSure),
        Some("subgaussian") => LogModePolicy::Fixed(LogMode::Subgaussian),
        Some(other) => bail!("log_mode must be auto | almost-sure | subgaussian, got `{other}`"),
    };

    if !(raw.delta > 0.0 && raw.delta < 1.0) {
        bail!("delta must lie in (0,1), got {}", raw.delta);
    }
    if !(raw.c0 > 0.0 && raw.c0.is_finite()) {
        bail!("c0 must be positive, got {}", raw.c0);
    }
    // eta/beta/epsilon bounds checked via HyperParams with a placeholder horizon
    HyperParams::new(raw.eta, raw.beta, raw.epsilon, 1).context("invalid hyper-parameters")?;

    Ok(ExperimentConfig {
        problem_id: raw.problem,
        problem_spec,
        oracle,
        method,
        eta: raw.eta,
        beta: raw.beta,
        epsilon: raw.epsilon,
        horizon: raw.horizon,
        epochs: raw.epochs,
        seeds,
        t_grid: raw.t_grid,
        delta: raw.delta,
        checks,
        out_dir: raw.out_dir.map(PathBuf::from),
        record: raw.record,
        x1: raw.x1,
        data_path: raw.data_path.map(PathBuf::from),
        f_star,
        noise,
        log_mode,
        c0: raw.c0,
        f_star_steps: raw.f_star_steps.unwrap_or(5000),
        f_star_eta: raw.f_star_eta.unwrap_or(1.0),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

/// Sweep grids must be dyadic (each horizon double the last) and long enough
/// for a meaningful rate fit.
pub fn validate_t_grid(grid: &[usize]) -> Result<()> {
    if grid.len() < 4 {
        bail!("t_grid needs at least 4 horizons for a rate fit, got {}", grid.len());
    }
    if grid[0] == 0 {
        bail!("horizons must be positive");
    }
    for w in grid.windows(2) {
        if w[1] != 2 * w[0] {
            bail!("t_grid must be dyadic (each entry double the previous), got {} then {}", w[0], w[1]);
        }
    }
    Ok(())
}
