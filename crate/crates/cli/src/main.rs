use adalab_cli::config::load_config;
use adalab_cli::{plot, runner};
use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "adalab",
    about = "Experiment harness for AdaGrad with heavy-ball momentum",
    version
)]
struct Cli {
    /// Number of worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment across its seeds and persist artifacts
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out_dir` in the config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run this single seed instead of the configured list
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a log-log rate slope over the configured horizon grid
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an affine-variance noise envelope on a fresh optimization path
    EstimateNoise {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the sampling path (default: derived from the first
        /// configured seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run the invariant suite on trajectories stored by a previous run
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Results directory (overrides `out_dir` in the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render series CSVs, SVG charts and a text summary from a results dir
    Plot {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match dispatch(cli.command) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            let summary = runner::run_experiment(&cfg, out.as_deref())?;
            println!("{}", summary.accounting);
            println!("{}", summary.f_star_provenance);
            println!("{}", summary.noise_provenance);
            for row in &summary.rows {
                println!(
                    "seed {}: T = {}, final_f = {}, avg_grad_sq = {}, invariants = {}, \
                     a3 = {}, hp_event = {}",
                    row.seed,
                    row.t,
                    row.final_f,
                    row.avg_grad_sq,
                    if row.invariants_pass { "pass" } else { "FAIL" },
                    row.a3_verified,
                    row.hp_event
                );
            }
            println!("wrote {}", summary.method_dir.join("results.csv").display());
            if summary.all_pass {
                println!("all configured checks passed on every seed");
            } else {
                println!("CHECK FAILURES — see the per-seed invariant reports");
            }
            Ok(summary.all_pass)
        }
        Command::Sweep { config, out } => {
            let cfg = load_config(&config)?;
            let summary = runner::sweep_rates(&cfg, out.as_deref())?;
            let r = &summary.report;
            for (t, m) in r.used_ts.iter().zip(&r.medians) {
                println!("T = {t}: median avg_grad_sq = {m}");
            }
            for note in &r.excluded {
                println!("excluded {note}");
            }
            println!(
                "log-log slope = {:.4} (intercept {:.4}, R^2 {:.4}) over {} horizons",
                r.slope,
                r.intercept,
                r.r_squared,
                r.used_ts.len()
            );
            println!("wrote {}", summary.method_dir.join("rates.json").display());
            Ok(true)
        }
        Command::EstimateNoise { config, out, seed } => {
            let cfg = load_config(&config)?;
            let report = runner::estimate_noise_cmd(&cfg, out.as_deref(), seed)?;
            println!("{}", report.protocol);
            println!("{} | seed {} | {} steps", report.problem, report.seed, report.horizon);
            println!(
                "fitted envelope: A = {}, B = {}, C = {} (max sample ratio {}, {} samples)",
                report.a, report.b, report.c, report.max_ratio, report.n_samples
            );
            Ok(true)
        }
        Command::Check { config, out } => {
            let cfg = load_config(&config)?;
            let summary = runner::check_stored(&cfg, out.as_deref())?;
            for o in &summary.outcomes {
                let failed = o.report.failed();
                if o.pass {
                    println!("seed {}: pass ({} checks)", o.seed, o.report.checks.len());
                } else {
                    let names: Vec<&str> =
                        failed.iter().map(|c| c.name.as_str()).collect();
                    println!("seed {}: FAIL ({})", o.seed, names.join(", "));
                }
            }
            Ok(summary.all_pass)
        }
        Command::Plot { dir } => {
            let summary = plot::emit_report(&dir)?;
            println!(
                "report for methods [{}] in {}",
                summary.methods.join(", "),
                summary.report_dir.display()
            );
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            Ok(true)
        }
    }
}
