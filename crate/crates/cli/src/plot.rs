//! Report generation: per-method series CSVs, SVG charts for the objective
//! and the squared gradient norm, and a plain-text summary.
//!
//! The summary recomputes the high-probability fraction from `results.csv`
//! alone, so the text file is an independent read of the persisted rows
//! rather than a copy of in-memory state.

use crate::rows::{self, ResultRow};
use crate::runner::{load_series, RunMeta};
use adalab_core::analysis::{hp_fraction, CheckStatus, InvariantReport};
use anyhow::{bail, Context, Result};
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const MAX_POINTS_PER_SERIES: usize = 2000;

#[derive(Deserialize)]
#[serde(untagged)]
enum StoredInvariants {
    Report(InvariantReport),
    Skipped { evaluated: bool },
}

struct MethodData {
    name: String,
    meta: Option<RunMeta>,
    rows: Vec<ResultRow>,
    /// (step, f, grad_norm_sq) for the lowest stored seed
    series: Option<(u64, Vec<(usize, f64, f64)>)>,
    /// invariant reports per seed, where stored and evaluated
    reports: Vec<InvariantReport>,
    skipped: usize,
}

#[derive(Debug)]
pub struct ReportSummary {
    pub report_dir: PathBuf,
    pub methods: Vec<String>,
    pub files: Vec<PathBuf>,
}

pub fn emit_report(dir: &Path) -> Result<ReportSummary> {
    let mut methods = collect_methods(dir)?;
    if methods.is_empty() {
        bail!(
            "no results found under {} (expected <method>/results.csv written by run or sweep)",
            dir.display()
        );
    }
    methods.sort_by(|a, b| a.name.cmp(&b.name));

    let report_dir = dir.join("report");
    std::fs::create_dir_all(&report_dir)?;
    let mut files = Vec::new();

    for m in &methods {
        if let Some((seed, series)) = &m.series {
            let mut csv = String::from("step,f,grad_norm_sq\n");
            for (step, f, gsq) in series {
                let _ = writeln!(csv, "{step},{f},{gsq}");
            }
            let path = report_dir.join(format!("series-{}.csv", m.name));
            std::fs::write(&path, csv)?;
            files.push(path);
            let _ = seed;
        }
    }

    let with_series: Vec<&MethodData> = methods.iter().filter(|m| m.series.is_some()).collect();
    if !with_series.is_empty() {
        let loss: Vec<Series> = with_series
            .iter()
            .map(|m| Series {
                label: m.name.clone(),
                points: m
                    .series
                    .as_ref()
                    .unwrap()
                    .1
                    .iter()
                    .map(|&(s, f, _)| (s as f64, f))
                    .collect(),
            })
            .collect();
        let path = report_dir.join("loss.svg");
        std::fs::write(&path, svg_chart("objective value", "step", "f(x_s)", false, &loss))?;
        files.push(path);

        let grads: Vec<Series> = with_series
            .iter()
            .map(|m| Series {
                label: m.name.clone(),
                points: m
                    .series
                    .as_ref()
                    .unwrap()
                    .1
                    .iter()
                    .map(|&(s, _, g)| (s as f64, g))
                    .collect(),
            })
            .collect();
        let path = report_dir.join("gradnorm.svg");
        std::fs::write(
            &path,
            svg_chart("squared gradient norm", "step", "||grad f(x_s)||^2", true, &grads),
        )?;
        files.push(path);
    }

    let summary = render_summary(dir, &methods);
    let path = report_dir.join("summary.txt");
    std::fs::write(&path, summary)?;
    files.push(path);

    Ok(ReportSummary {
        report_dir,
        methods: methods.into_iter().map(|m| m.name).collect(),
        files,
    })
}

fn collect_methods(dir: &Path) -> Result<Vec<MethodData>> {
    let mut out = Vec::new();
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let method_dir = entry.path();
        let csv_path = method_dir.join("results.csv");
        if !csv_path.exists() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let rows = rows::parse_csv(
            &std::fs::read_to_string(&csv_path)
                .with_context(|| format!("reading {}", csv_path.display()))?,
        )
        .with_context(|| format!("parsing {}", csv_path.display()))?;

        let meta: Option<RunMeta> = {
            let p = method_dir.join("meta.json");
            if p.exists() {
                Some(
                    serde_json::from_str(&std::fs::read_to_string(&p)?)
                        .with_context(|| format!("parsing {}", p.display()))?,
                )
            } else {
                None
            }
        };

        let mut seed_dirs: Vec<(u64, PathBuf)> = Vec::new();
        for sub in std::fs::read_dir(&method_dir)? {
            let sub = sub?;
            let sub_name = sub.file_name().to_string_lossy().into_owned();
            if let Some(seed_str) = sub_name.strip_prefix("seed-") {
                if let Ok(seed) = seed_str.parse::<u64>() {
                    seed_dirs.push((seed, sub.path()));
                }
            }
        }
        seed_dirs.sort_by_key(|(seed, _)| *seed);

        let series = seed_dirs
            .first()
            .and_then(|(seed, p)| load_series(p).ok().map(|s| (*seed, s)));

        let mut reports = Vec::new();
        let mut skipped = 0;
        for (_, seed_dir) in &seed_dirs {
            let p = seed_dir.join("invariants.json");
            if !p.exists() {
                continue;
            }
            let stored: StoredInvariants =
                serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?;
            match stored {
                StoredInvariants::Report(r) => reports.push(r),
                StoredInvariants::Skipped { evaluated } => {
                    debug_assert!(!evaluated);
                    skipped += 1;
                }
            }
        }

        out.push(MethodData {
            name,
            meta,
            rows,
            series,
            reports,
            skipped,
        });
    }
    Ok(out)
}

fn render_summary(dir: &Path, methods: &[MethodData]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "results report for {}", dir.display());

    for m in methods {
        let _ = writeln!(s, "\nmethod {}", m.name);
        if let Some(meta) = &m.meta {
            let _ = writeln!(
                s,
                "  {} | {} | eta = {}, beta = {}, epsilon = {}",
                meta.problem, meta.oracle, meta.eta, meta.beta, meta.epsilon
            );
            let _ = writeln!(s, "  {}", meta.accounting);
            let _ = writeln!(s, "  {}", meta.f_star_provenance);
            let _ = writeln!(s, "  {}", meta.noise_provenance);
        }

        let n = m.rows.len();
        let diverged = m.rows.iter().filter(|r| !r.final_f.is_finite()).count();
        let _ = writeln!(s, "  rows: {n} ({diverged} diverged)");
        if let Some((seed, series)) = &m.series {
            let _ = writeln!(s, "  plotted series: seed {seed}, {} steps", series.len());
        }

        let checks: Vec<String> = match &m.meta {
            Some(meta) => meta.checks.clone(),
            None => Vec::new(),
        };
        if checks.is_empty() {
            let _ = writeln!(s, "  invariant checks: none configured");
        } else if m.reports.is_empty() {
            let _ = writeln!(
                s,
                "  invariant checks: configured but no evaluated reports stored ({} skipped)",
                m.skipped
            );
        } else {
            let _ = writeln!(
                s,
                "  invariant checks over {} evaluated seeds (pass+n/a / total):",
                m.reports.len()
            );
            for name in &checks {
                let mut ok = 0;
                let mut precondition = 0;
                for r in &m.reports {
                    match r.get(name).map(|c| c.status) {
                        Some(CheckStatus::Pass) | Some(CheckStatus::NotApplicable) => ok += 1,
                        Some(CheckStatus::PreconditionViolated) => precondition += 1,
                        _ => {}
                    }
                }
                let extra = if precondition > 0 {
                    format!(" ({precondition} precondition-violated)")
                } else {
                    String::new()
                };
                let _ = writeln!(s, "    {name:<24} {ok}/{}{extra}", m.reports.len());
            }
        }

        let a3_ok = m.rows.iter().filter(|r| r.a3_verified).count();
        let _ = writeln!(s, "  noise envelope verified pathwise on {a3_ok}/{n} runs");

        // recomputed from the CSV rows alone, not from stored bound reports
        let has_bounds = m.rows.iter().any(|r| r.bound_rhs.is_finite());
        if has_bounds {
            let events: Vec<bool> = m.rows.iter().map(|r| r.hp_event).collect();
            let delta = m.meta.as_ref().map(|meta| meta.delta).unwrap_or(0.05);
            match hp_fraction(&events, delta) {
                Ok(hp) => {
                    let _ = writeln!(
                        s,
                        "  hp-event fraction {:.4} vs threshold {:.4} (delta = {delta}, n = {}): {}",
                        hp.fraction,
                        hp.threshold,
                        hp.n,
                        if hp.pass { "PASS" } else { "FAIL" }
                    );
                }
                Err(e) => {
                    let _ = writeln!(s, "  hp-event fraction unavailable: {e}");
                }
            }
        } else {
            let _ = writeln!(s, "  certificate bound unavailable for these rows");
        }
    }
    s
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

/// Downsamples to at most `MAX_POINTS_PER_SERIES` points, keeping endpoints.
fn thin(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if points.len() <= MAX_POINTS_PER_SERIES {
        return points.to_vec();
    }
    let stride = points.len().div_ceil(MAX_POINTS_PER_SERIES);
    let mut out: Vec<(f64, f64)> = points.iter().step_by(stride).cloned().collect();
    if let Some(&last) = points.last() {
        if out.last() != Some(&last) {
            out.push(last);
        }
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.').to_string();
        if s.is_empty() || s == "-" {
            "0".to_string()
        } else {
            s
        }
    }
}

/// Renders a single self-contained SVG line chart. `log_y` switches the y
/// axis to log10; points with non-positive y are dropped there (with the
/// axis label noting the scale).
fn svg_chart(title: &str, x_label: &str, y_label: &str, log_y: bool, series: &[Series]) -> String {
    let (w, h) = (860.0, 520.0);
    let (ml, mr, mt, mb) = (80.0, 24.0, 46.0, 56.0);
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;

    let mut cleaned: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for sr in series {
        let pts: Vec<(f64, f64)> = thin(&sr.points)
            .into_iter()
            .filter(|&(x, y)| x.is_finite() && y.is_finite() && (!log_y || y > 0.0))
            .map(|(x, y)| (x, if log_y { y.log10() } else { y }))
            .collect();
        if !pts.is_empty() {
            cleaned.push((sr.label.clone(), pts));
        }
    }

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{}" y="26" font-family="sans-serif" font-size="17" text-anchor="middle">{title}</text>
"#,
        w / 2.0
    );
    if cleaned.is_empty() {
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">no plottable points</text></svg>"#,
            w / 2.0,
            h / 2.0
        );
        return svg;
    }

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in &cleaned {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_max - x_min < 1e-12 {
        x_max = x_min + 1.0;
    }
    if y_max - y_min < 1e-12 {
        y_max = y_min + 1.0;
        y_min -= 1.0;
    }

    let sx = |x: f64| ml + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| mt + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    // axes
    let _ = write!(
        svg,
        r##"<rect x="{ml}" y="{mt}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>
"##
    );
    for i in 0..=4 {
        let fx = x_min + (x_max - x_min) * i as f64 / 4.0;
        let px = sx(fx);
        let _ = write!(
            svg,
            r##"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="#ccc"/>
<text x="{px}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>
"##,
            mt,
            mt + plot_h,
            mt + plot_h + 18.0,
            fmt_tick(fx)
        );
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = sy(fy);
        let label = if log_y {
            format!("1e{}", fmt_tick(fy))
        } else {
            fmt_tick(fy)
        };
        let _ = write!(
            svg,
            r##"<line x1="{ml}" y1="{py}" x2="{}" y2="{py}" stroke="#ccc"/>
<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="end">{label}</text>
"##,
            ml + plot_w,
            ml - 6.0,
            py + 4.0
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{x_label}</text>
<text x="18" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>
"#,
        ml + plot_w / 2.0,
        h - 12.0,
        mt + plot_h / 2.0,
        mt + plot_h / 2.0,
        if log_y { format!("log10 {y_label}") } else { y_label.to_string() }
    );

    for (i, (label, pts)) in cleaned.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: String = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = write!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{path}"/>
"#
        );
        let ly = mt + 16.0 + 18.0 * i as f64;
        let _ = write!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>
<text x="{}" y="{}" font-family="sans-serif" font-size="13">{label}</text>
"#,
            ml + plot_w - 150.0,
            ml + plot_w - 126.0,
            ml + plot_w - 120.0,
            ly + 4.0
        );
    }
    svg.push_str("</svg>");
    svg
}
