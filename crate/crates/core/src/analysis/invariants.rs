//! Per-trajectory certificate checks.
//!
//! Every intermediate inequality the convergence argument relies on is
//! checkable step by step on a recorded run. This module evaluates all of
//! them against a [`TrajectoryRecord`] and reports the tightest slack each
//! one had, so a failure points at the exact step (or coordinate) where an
//! inequality broke.
//!
//! Conventions:
//! - An inequality `q <= R` passes when its relative slack
//!   `(R - q) / max(1, |q|, |R|)` stays above `-REL_TOL` at every step.
//! - The update-identity check is absolute: the reconstruction residual of
//!   the auxiliary sequence must stay below `y_tol` (default 1e-10).
//! - Checks whose hypotheses the run does not satisfy are reported as
//!   `NotApplicable` (machinery missing: no optimum, no envelope, no
//!   certificate) or `PreconditionViolated` (hypothesis checked and found
//!   false: noise outside its budget, step size above the local rule, an
//!   observed value below the supplied optimum). Nothing is silently
//!   dropped: the report always contains the full fixed list of checks.

use crate::analysis::budget::{
    compute_noise_budget, gen_budgets, proxy_stepsize, LogMode,
};
use crate::analysis::bounds::f_polynomial;
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::optim::Method;
use crate::oracles::NoiseSpec;
use crate::problems::{Problem, Smoothness};
use crate::trajectory::{coord, derive_y_sequence_with_tol, norm, norm_sq, TrajectoryRecord};
use serde::{Deserialize, Serialize};

/// Relative slack below which an inequality counts as violated.
pub const REL_TOL: f64 = 1e-9;
/// Default absolute tolerance for the auxiliary-sequence identity residual.
pub const Y_RESIDUAL_TOL: f64 = 1e-10;

/// Fixed order of every check a report contains.
pub const CHECK_NAMES: [&str; 24] = [
    "update-identity",
    "momentum-bound",
    "step-displacement",
    "accumulator-monotone",
    "stepwise-log-sum",
    "gradient-value-bound",
    "gradient-growth",
    "gap-cumulative",
    "gap-transfer",
    "ratio-sum",
    "momentum-sq-bound",
    "momentum-sq-sum",
    "noise-within-budget",
    "proxy-consistency",
    "gen-gradient-value",
    "gen-gradient-growth",
    "gen-gap-cumulative",
    "gen-gap-transfer",
    "gen-ratio-sum",
    "gen-momentum-sq-bound",
    "gen-momentum-sq-sum",
    "gen-noise-within-budget",
    "gen-proxy-consistency",
    "displacement-cap",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
    PreconditionViolated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    /// Worst (most negative) relative slack over all steps/coordinates.
    pub rel_slack: f64,
    pub abs_slack: f64,
    /// 1-based step where the slack was tightest. Per-coordinate aggregate
    /// checks store the coordinate index here; the note says so.
    pub worst_step: usize,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvariantReport {
    pub checks: Vec<CheckResult>,
    pub n_fail: usize,
    pub n_precondition: usize,
    pub n_not_applicable: usize,
}

impl InvariantReport {
    fn from_checks(checks: Vec<CheckResult>) -> Self {
        let n_fail = checks.iter().filter(|c| c.status == CheckStatus::Fail).count();
        let n_precondition = checks
            .iter()
            .filter(|c| c.status == CheckStatus::PreconditionViolated)
            .count();
        let n_not_applicable = checks
            .iter()
            .filter(|c| c.status == CheckStatus::NotApplicable)
            .count();
        InvariantReport {
            checks,
            n_fail,
            n_precondition,
            n_not_applicable,
        }
    }

    /// No check failed outright. Precondition violations are tolerated here;
    /// use [`Self::strict_pass`] when hypotheses are known to hold by design.
    pub fn all_pass(&self) -> bool {
        self.n_fail == 0
    }

    /// No failures and no violated hypotheses.
    pub fn strict_pass(&self) -> bool {
        self.n_fail == 0 && self.n_precondition == 0
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<&CheckResult> {
        self.checks
            .iter()
            .filter(|c| {
                matches!(c.status, CheckStatus::Fail | CheckStatus::PreconditionViolated)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct InvariantOptions {
    /// Affine-variance envelope for budget-dependent checks; without one
    /// those checks are reported as not applicable.
    pub spec: Option<NoiseSpec>,
    pub log_mode: LogMode,
    /// Probability margin used only by the sub-Gaussian log factor.
    pub delta_prob: f64,
    pub y_tol: f64,
}

impl Default for InvariantOptions {
    fn default() -> Self {
        InvariantOptions {
            spec: None,
            log_mode: LogMode::AlmostSure,
            delta_prob: 0.05,
            y_tol: Y_RESIDUAL_TOL,
        }
    }
}

/// Tracks the tightest observation of one inequality.
struct Tracker {
    min_rel: f64,
    min_abs: f64,
    step: usize,
    seen: bool,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            min_rel: f64::INFINITY,
            min_abs: f64::INFINITY,
            step: 0,
            seen: false,
        }
    }

    fn observe(&mut self, step: usize, quantity: f64, bound: f64) {
        let abs = bound - quantity;
        let mut rel = abs / 1f64.max(quantity.abs()).max(bound.abs());
        if !rel.is_finite() {
            // Non-finite data can never pass.
            rel = -f64::MAX;
        }
        if !self.seen || rel < self.min_rel {
            self.min_rel = rel;
            self.min_abs = abs;
            self.step = step;
            self.seen = true;
        }
    }

    fn result(self, name: &str, note: Option<String>) -> CheckResult {
        if !self.seen {
            return na(name, "no observations");
        }
        CheckResult {
            name: name.into(),
            status: if self.min_rel < -REL_TOL { CheckStatus::Fail } else { CheckStatus::Pass },
            rel_slack: self.min_rel,
            abs_slack: self.min_abs,
            worst_step: self.step,
            note,
        }
    }

    /// Like [`Self::result`] but a violation means a *hypothesis* of the
    /// theory failed on this run, not that a proved inequality broke.
    fn result_as_precondition(self, name: &str, note: Option<String>) -> CheckResult {
        let mut r = self.result(name, note);
        if r.status == CheckStatus::Fail {
            r.status = CheckStatus::PreconditionViolated;
        }
        r
    }
}

fn na(name: &str, why: &str) -> CheckResult {
    CheckResult {
        name: name.into(),
        status: CheckStatus::NotApplicable,
        rel_slack: 0.0,
        abs_slack: 0.0,
        worst_step: 0,
        note: Some(why.into()),
    }
}

fn precondition(name: &str, why: &str) -> CheckResult {
    CheckResult {
        name: name.into(),
        status: CheckStatus::PreconditionViolated,
        rel_slack: 0.0,
        abs_slack: 0.0,
        worst_step: 0,
        note: Some(why.into()),
    }
}

/// The sum `sum_s alpha_s / (eps + sum_{k<=s} alpha_k)` and its closed-form
/// bound `log(1 + sum_s alpha_s / eps)`, returned as `(lhs, rhs)`.
pub fn log_sum_lemma(alphas: &[f64], eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut acc = 0.0f64;
    let mut lhs = 0.0f64;
    for (i, &a) in alphas.iter().enumerate() {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha[{i}] must be finite and >= 0, got {a}"
            )));
        }
        acc += a;
        lhs += a / (eps + acc);
    }
    Ok((lhs, (1.0 + acc / eps).ln()))
}

/// Runs every check against a recorded trajectory.
///
/// The record must come from one of the coordinate-adaptive methods and must
/// not have diverged; anything else is a usage error, not a finding.
pub fn check_trajectory_invariants(
    record: &TrajectoryRecord,
    problem: &Problem,
    opts: &InvariantOptions,
) -> Result<InvariantReport> {
    if !matches!(record.method, Method::AdaGradM | Method::AdaGrad) {
        return Err(Error::InvalidArgument(format!(
            "certificate checks target the coordinate-adaptive methods, got {}",
            record.method.as_str()
        )));
    }
    if record.diverged {
        return Err(Error::InvalidArgument(
            "trajectory diverged; checks target completed runs".into(),
        ));
    }
    if record.steps.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let t = record.steps.len();
    let d = record.dim();
    if problem.dim() != d {
        return Err(Error::DimensionMismatch { expected: problem.dim(), got: d });
    }
    let h = record.hyper;
    h.validate()?;
    let eta = h.eta;
    let eps = h.epsilon;
    let omb = h.one_minus_beta();
    let sd = (d as f64).sqrt();

    let ys = derive_y_sequence_with_tol(record, f64::INFINITY)?.ys;
    let x_at = |s: usize| -> &[f64] {
        if s <= t { &record.steps[s - 1].x } else { &record.final_x }
    };
    let f_at = |s: usize| -> f64 {
        if s <= t { record.steps[s - 1].f } else { record.final_f }
    };
    let m_prev_sq = |s: usize| -> f64 {
        if s <= 1 { 0.0 } else { norm_sq(&record.steps[s - 2].m) }
    };
    let v_prev_at = |s: usize| -> Vec<f64> {
        if s <= 1 { vec![0.0; d] } else { record.steps[s - 2].v.clone() }
    };
    let g1_norm = norm(&record.steps[0].grad);

    let m_norms: Vec<f64> = record.steps.iter().map(|e| norm(&e.m)).collect();
    let ratio_sq: Vec<f64> = record
        .steps
        .iter()
        .map(|e| (0..d).map(|i| (e.g[i] / coord(&e.b, i)).powi(2)).sum())
        .collect();

    let mut checks: Vec<CheckResult> = Vec::with_capacity(CHECK_NAMES.len());

    // --- update-identity: y_{s+1} = y_s - eta/(1-beta) * g_s / b_s ---
    {
        let scale = eta / omb;
        let mut worst = 0.0f64;
        let mut worst_step = 1usize;
        for s in 1..=t {
            let e = &record.steps[s - 1];
            for i in 0..d {
                let pred = ys[s - 1][i] - scale * e.g[i] / coord(&e.b, i);
                let r = (ys[s][i] - pred).abs();
                if r > worst {
                    worst = r;
                    worst_step = s;
                }
            }
        }
        let slack = opts.y_tol - worst;
        checks.push(CheckResult {
            name: "update-identity".into(),
            status: if worst <= opts.y_tol { CheckStatus::Pass } else { CheckStatus::Fail },
            rel_slack: slack,
            abs_slack: slack,
            worst_step,
            note: Some(format!("absolute residual {worst:.3e}, tolerance {:.1e}", opts.y_tol)),
        });
    }

    // --- momentum-bound: ||m_s|| <= eta sqrt(d) / (1-beta) ---
    {
        let mut tr = Tracker::new();
        let bound = eta * sd / omb;
        for (s, mn) in m_norms.iter().enumerate() {
            tr.observe(s + 1, *mn, bound);
        }
        checks.push(tr.result("momentum-bound", None));
    }

    // --- step-displacement: iterate and auxiliary moves <= eta sqrt(d)/(1-beta)^2 ---
    let displacement = |s: usize| -> f64 {
        let dx: f64 = (0..d)
            .map(|i| (x_at(s + 1)[i] - x_at(s)[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let dyx: f64 = (0..d)
            .map(|i| (ys[s - 1][i] - x_at(s)[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        let dy: f64 = (0..d)
            .map(|i| (ys[s][i] - ys[s - 1][i]).powi(2))
            .sum::<f64>()
            .sqrt();
        dx.max(dyx).max(dy)
    };
    {
        let mut tr = Tracker::new();
        let bound = eta * sd / (omb * omb);
        for s in 1..=t {
            tr.observe(s, displacement(s), bound);
        }
        checks.push(tr.result("step-displacement", None));
    }

    // --- accumulator-monotone: v never decreases ---
    {
        let mut tr = Tracker::new();
        for s in 1..=t {
            let prev = v_prev_at(s);
            let cur = &record.steps[s - 1].v;
            for i in 0..d {
                tr.observe(s, prev[i], cur[i]);
            }
        }
        checks.push(tr.result("accumulator-monotone", None));
    }

    // --- stepwise-log-sum: per coordinate, the accumulator-ratio sum obeys
    //     its logarithmic closed form (with eps^2 as the additive floor) ---
    {
        let mut tr = Tracker::new();
        let e2 = eps * eps;
        for i in 0..d {
            let mut lhs = 0.0f64;
            for s in 1..=t {
                let e = &record.steps[s - 1];
                lhs += e.g[i] * e.g[i] / (e2 + e.v[i]);
            }
            let rhs = (1.0 + record.steps[t - 1].v[i] / e2).ln();
            tr.observe(i + 1, lhs, rhs);
        }
        checks.push(tr.result(
            "stepwise-log-sum",
            Some("worst_step is the coordinate index".into()),
        ));
    }

    // --- gap-dependent machinery ---
    let f_star = problem.f_star();
    let gaps: std::result::Result<Vec<f64>, String> = match f_star {
        None => Err("no optimal value on the problem".into()),
        Some(fs) => {
            let tol = 1e-9 * 1f64.max(fs.abs());
            let mut out = Vec::with_capacity(t + 1);
            let mut bad: Option<String> = None;
            for s in 1..=t + 1 {
                let gap = f_at(s) - fs;
                if gap < -tol {
                    bad = Some(format!(
                        "objective at step {s} is {:.3e} below the supplied optimum",
                        -gap
                    ));
                    break;
                }
                out.push(gap.max(0.0));
            }
            match bad {
                Some(msg) => Err(msg),
                None => Ok(out),
            }
        }
    };
    // f(y_s) - f*, needed by the gap-transfer checks.
    let y_gaps: Option<Vec<f64>> = match (&gaps, f_star) {
        (Ok(_), Some(fs)) => Some(
            ys.iter()
                .map(|y| (problem.value(y) - fs).max(0.0))
                .collect(),
        ),
        _ => None,
    };

    let smoothness = problem.smoothness();
    let lf = opts.log_mode.factor(t, opts.delta_prob);

    // Names that need a global L, an optimum, or both.
    const SMOOTH_SET: [&str; 9] = [
        "gradient-value-bound",
        "gradient-growth",
        "gap-cumulative",
        "gap-transfer",
        "ratio-sum",
        "momentum-sq-bound",
        "momentum-sq-sum",
        "noise-within-budget",
        "proxy-consistency",
    ];
    const GEN_SET: [&str; 10] = [
        "gen-gradient-value",
        "gen-gradient-growth",
        "gen-gap-cumulative",
        "gen-gap-transfer",
        "gen-ratio-sum",
        "gen-momentum-sq-bound",
        "gen-momentum-sq-sum",
        "gen-noise-within-budget",
        "gen-proxy-consistency",
        "displacement-cap",
    ];

    match (&smoothness, &gaps) {
        (Some(Smoothness::GlobalL(l)), Ok(gaps)) => {
            let l = *l;
            let y_gaps = y_gaps.as_ref().unwrap();

            // gradient-value-bound: ||grad||^2 <= 2 L gap
            let mut tr = Tracker::new();
            for s in 1..=t {
                tr.observe(s, norm_sq(&record.steps[s - 1].grad), 2.0 * l * gaps[s - 1]);
            }
            checks.push(tr.result("gradient-value-bound", None));

            // gradient-growth: ||grad_s|| <= ||grad_1|| + L eta sqrt(d) s / (1-beta)
            let mut tr = Tracker::new();
            for s in 1..=t {
                let bound = g1_norm + l * eta * sd * s as f64 / omb;
                tr.observe(s, norm(&record.steps[s - 1].grad), bound);
            }
            checks.push(tr.result("gradient-growth", None));

            // gap-cumulative: running gap sums against the cubic polynomial
            let mut tr = Tracker::new();
            let mut acc = 0.0f64;
            for s in 1..=t {
                acc += gaps[s - 1];
                let sf = s as f64;
                let bound = gaps[0] * sf
                    + (eta * g1_norm * sd / omb + l * eta * eta * d as f64 / (2.0 * omb * omb))
                        * sf
                        * sf
                    + l * eta * eta * d as f64 * sf * sf * sf / (omb * omb);
                tr.observe(s, acc, bound);
            }
            checks.push(tr.result("gap-cumulative", None));

            // gap-transfer: the auxiliary gap dominates half the iterate gap
            // minus the momentum correction
            let mut tr = Tracker::new();
            for s in 1..=t + 1 {
                let q = gaps[s - 1] / 2.0 - l * m_prev_sq(s) / (2.0 * omb * omb);
                tr.observe(s, q, y_gaps[s - 1]);
            }
            checks.push(tr.result("gap-transfer", None));

            match &opts.spec {
                Some(spec) => {
                    let hyper_t = HyperParams::new(eta, h.beta, eps, t)?;
                    let f_cal = f_polynomial(spec, l, &hyper_t, d, gaps[0], g1_norm);
                    let log_f = f_cal.ln();

                    // ratio-sum: sum of ||g/b||^2 <= d log F_T
                    let mut tr = Tracker::new();
                    let mut acc = 0.0f64;
                    for s in 1..=t {
                        acc += ratio_sq[s - 1];
                        tr.observe(s, acc, d as f64 * log_f);
                    }
                    checks.push(tr.result("ratio-sum", None));

                    // momentum-sq-bound / momentum-sq-sum
                    let mut tr = Tracker::new();
                    for s in 1..=t {
                        let bound = eta * eta * d as f64 / omb * log_f;
                        tr.observe(s, m_norms[s - 1] * m_norms[s - 1], bound);
                    }
                    checks.push(tr.result("momentum-sq-bound", None));

                    let mut tr = Tracker::new();
                    let mut acc = 0.0f64;
                    for s in 1..=t {
                        acc += m_norms[s - 1] * m_norms[s - 1];
                        let bound = eta * eta * d as f64 / (omb * omb) * log_f;
                        tr.observe(s, acc, bound);
                    }
                    checks.push(tr.result("momentum-sq-sum", None));

                    // noise-within-budget (hypothesis) and proxy-consistency
                    let max_gap = gaps.iter().cloned().fold(0.0f64, f64::max);
                    let budget = compute_noise_budget(
                        spec,
                        l,
                        &gaps[..t],
                        max_gap,
                        t,
                        opts.delta_prob,
                        opts.log_mode,
                    )?;
                    let mut tr = Tracker::new();
                    let mut ok_steps = vec![false; t];
                    let mut n_viol = 0usize;
                    for s in 1..=t {
                        let q = norm(&record.steps[s - 1].g);
                        let bound = budget.per_step[s - 1];
                        let rel = (bound - q) / 1f64.max(q.abs()).max(bound.abs());
                        ok_steps[s - 1] = rel >= -REL_TOL;
                        if !ok_steps[s - 1] {
                            n_viol += 1;
                        }
                        tr.observe(s, q, bound);
                    }
                    let note = (n_viol > 0)
                        .then(|| format!("{n_viol}/{t} steps exceeded the noise budget"));
                    checks.push(tr.result_as_precondition("noise-within-budget", note));

                    let mut tr = Tracker::new();
                    for s in 1..=t {
                        if !ok_steps[s - 1] {
                            continue;
                        }
                        let gs = budget.per_step[s - 1];
                        let a = proxy_stepsize(&v_prev_at(s), gs, eps)?;
                        let e = &record.steps[s - 1];
                        for i in 0..d {
                            let b = coord(&e.b, i);
                            let q = (1.0 / a[i] - 1.0 / b).abs();
                            tr.observe(s, q, gs / (a[i] * b));
                        }
                    }
                    let note = (n_viol > 0).then(|| {
                        format!("skipped {n_viol} steps where the noise budget hypothesis failed")
                    });
                    if tr.seen {
                        checks.push(tr.result("proxy-consistency", note));
                    } else {
                        checks.push(na(
                            "proxy-consistency",
                            "noise budget hypothesis failed at every step",
                        ));
                    }
                }
                None => {
                    for name in &SMOOTH_SET[4..] {
                        checks.push(na(name, "no noise envelope supplied"));
                    }
                }
            }
            for name in &GEN_SET {
                checks.push(na(name, "no generalized certificate on the problem"));
            }
        }
        (Some(Smoothness::Generalized { l0, l1 }), Ok(gaps)) => {
            let (l0, l1) = (*l0, *l1);
            let y_gaps = y_gaps.as_ref().unwrap();
            for name in &SMOOTH_SET {
                checks.push(na(name, "no global smoothness constant on the problem"));
            }

            let rule_max = omb * omb / (l1 * sd);
            if eta > rule_max {
                for name in &GEN_SET {
                    checks.push(precondition(
                        name,
                        &format!(
                            "step size {eta:.3e} exceeds the local-smoothness rule {rule_max:.3e}"
                        ),
                    ));
                }
            } else {
                // S_s = 4 L1 gap + sqrt(4 L0 gap) and the local constants L_s,
                // over s = 1..=t+1.
                let s_vals: Vec<f64> = gaps
                    .iter()
                    .map(|&gap| 4.0 * l1 * gap + (4.0 * l0 * gap).sqrt())
                    .collect();
                let l_vals: Vec<f64> = s_vals.iter().map(|s| 2.0 * l0 + 2.0 * l1 * s).collect();
                // prefix_l[s] = sum_{j<=s} L_j (1-based, prefix_l[0] = 0)
                let mut prefix_l = vec![0.0f64; t + 1];
                for s in 1..=t {
                    prefix_l[s] = prefix_l[s - 1] + l_vals[s - 1];
                }
                // G~_s = ||grad_1|| + eta sqrt(d)/(1-beta) * sum_{j<=s} L_j
                let g_tilde: Vec<f64> = (1..=t)
                    .map(|s| g1_norm + eta * sd / omb * prefix_l[s])
                    .collect();

                // gen-gradient-value: ||grad|| <= max{4 L1 gap, sqrt(4 L0 gap)}
                let mut tr = Tracker::new();
                for s in 1..=t {
                    let bound = (4.0 * l1 * gaps[s - 1]).max((4.0 * l0 * gaps[s - 1]).sqrt());
                    tr.observe(s, norm(&record.steps[s - 1].grad), bound);
                }
                checks.push(tr.result("gen-gradient-value", None));

                // gen-gradient-growth
                let mut tr = Tracker::new();
                for s in 1..=t {
                    tr.observe(s, norm(&record.steps[s - 1].grad), g_tilde[s - 1]);
                }
                checks.push(tr.result("gen-gradient-growth", None));

                // gen-gap-cumulative with the path polynomial
                let mut tr = Tracker::new();
                let mut gap_acc = 0.0f64;
                let mut gt_acc = 0.0f64; // sum of A_tau = sum_{s<=tau} G~_s
                let mut gt_prefix = 0.0f64;
                let mut lv_acc = 0.0f64; // sum over tau of prefix_l[tau]
                let mut i_path = Vec::with_capacity(t);
                for s in 1..=t {
                    gap_acc += gaps[s - 1];
                    gt_prefix += g_tilde[s - 1];
                    gt_acc += gt_prefix;
                    lv_acc += prefix_l[s];
                    let i_t = gaps[0] * s as f64
                        + eta * sd / omb * gt_acc
                        + eta * eta * d as f64 / (2.0 * omb * omb) * lv_acc;
                    i_path.push(i_t);
                    tr.observe(s, gap_acc, i_t);
                }
                checks.push(tr.result("gen-gap-cumulative", None));

                // gen-gap-transfer: iterate gap controlled by the auxiliary gap
                let mut tr = Tracker::new();
                for s in 1..=t + 1 {
                    let yg = y_gaps[s - 1];
                    let ls = l_vals[s - 1];
                    let bound = (2.0 * l0 + 1.0) * yg
                        + 8.0 * l1 * yg * yg
                        + (ls + 1.0) / (2.0 * omb * omb) * m_prev_sq(s);
                    tr.observe(s, gaps[s - 1], bound);
                }
                checks.push(tr.result("gen-gap-transfer", None));

                match &opts.spec {
                    Some(spec) => {
                        // J_t path polynomial
                        let mut gt_sq_acc = 0.0f64;
                        let mut j_path = Vec::with_capacity(t);
                        for s in 1..=t {
                            gt_sq_acc += g_tilde[s - 1] * g_tilde[s - 1];
                            let j_t = 1.0
                                + (2.0 * spec.a * i_path[s - 1]
                                    + 2.0 * (spec.b + 1.0) * gt_sq_acc
                                    + 2.0 * spec.c * s as f64)
                                    / (eps * eps);
                            j_path.push(j_t);
                        }

                        let mut tr = Tracker::new();
                        let mut acc = 0.0f64;
                        for s in 1..=t {
                            acc += ratio_sq[s - 1];
                            tr.observe(s, acc, d as f64 * j_path[s - 1].ln());
                        }
                        checks.push(tr.result("gen-ratio-sum", None));

                        let mut tr = Tracker::new();
                        for s in 1..=t {
                            let bound = eta * eta * d as f64 / omb * j_path[s - 1].ln();
                            tr.observe(s, m_norms[s - 1] * m_norms[s - 1], bound);
                        }
                        checks.push(tr.result("gen-momentum-sq-bound", None));

                        let mut tr = Tracker::new();
                        let mut acc = 0.0f64;
                        for s in 1..=t {
                            acc += m_norms[s - 1] * m_norms[s - 1];
                            let bound = eta * eta * d as f64 / (omb * omb) * j_path[s - 1].ln();
                            tr.observe(s, acc, bound);
                        }
                        checks.push(tr.result("gen-momentum-sq-sum", None));

                        let (h_path, _) = gen_budgets(spec, l0, l1, &gaps[..t], lf)?;
                        let mut tr = Tracker::new();
                        let mut ok_steps = vec![false; t];
                        let mut n_viol = 0usize;
                        for s in 1..=t {
                            let q = norm(&record.steps[s - 1].g);
                            let bound = h_path[s - 1];
                            let rel = (bound - q) / 1f64.max(q.abs()).max(bound.abs());
                            ok_steps[s - 1] = rel >= -REL_TOL;
                            if !ok_steps[s - 1] {
                                n_viol += 1;
                            }
                            tr.observe(s, q, bound);
                        }
                        let note = (n_viol > 0)
                            .then(|| format!("{n_viol}/{t} steps exceeded the noise budget"));
                        checks.push(tr.result_as_precondition("gen-noise-within-budget", note));

                        let mut tr = Tracker::new();
                        for s in 1..=t {
                            if !ok_steps[s - 1] {
                                continue;
                            }
                            let hs = h_path[s - 1];
                            let a = proxy_stepsize(&v_prev_at(s), hs, eps)?;
                            let e = &record.steps[s - 1];
                            for i in 0..d {
                                let b = coord(&e.b, i);
                                let q = (1.0 / a[i] - 1.0 / b).abs();
                                tr.observe(s, q, hs / (a[i] * b));
                            }
                        }
                        let note = (n_viol > 0).then(|| {
                            format!(
                                "skipped {n_viol} steps where the noise budget hypothesis failed"
                            )
                        });
                        if tr.seen {
                            checks.push(tr.result("gen-proxy-consistency", note));
                        } else {
                            checks.push(na(
                                "gen-proxy-consistency",
                                "noise budget hypothesis failed at every step",
                            ));
                        }
                    }
                    None => {
                        for name in &GEN_SET[4..9] {
                            checks.push(na(name, "no noise envelope supplied"));
                        }
                    }
                }

                // displacement-cap: under the step rule, every move is <= 1/L1
                let mut tr = Tracker::new();
                for s in 1..=t {
                    tr.observe(s, displacement(s), 1.0 / l1);
                }
                checks.push(tr.result("displacement-cap", None));
            }
        }
        (None, _) => {
            for name in SMOOTH_SET.iter().chain(GEN_SET.iter()) {
                checks.push(na(name, "no smoothness certificate on the problem"));
            }
        }
        (Some(_), Err(why)) => {
            // With an optimum missing the gap machinery is N/A; with an
            // optimum that the run undercut, the hypothesis is violated.
            let missing = f_star.is_none();
            for name in SMOOTH_SET.iter().chain(GEN_SET.iter()) {
                if missing {
                    checks.push(na(name, why));
                } else {
                    checks.push(precondition(name, why));
                }
            }
        }
    }

    // Restore the canonical order regardless of which branch pushed what.
    let mut ordered = Vec::with_capacity(CHECK_NAMES.len());
    for name in CHECK_NAMES {
        match checks.iter().position(|c| c.name == name) {
            Some(i) => ordered.push(checks.remove(i)),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "internal error: check {name} was not evaluated"
                )))
            }
        }
    }
    Ok(InvariantReport::from_checks(ordered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::run_trajectory;
    use crate::oracles::Oracle;

    fn run(
        problem: &Problem,
        oracle: &Oracle,
        eta: f64,
        beta: f64,
        t: usize,
        seed: u64,
    ) -> TrajectoryRecord {
        let h = HyperParams::new(eta, beta, 1e-3, t).unwrap();
        let x1 = vec![0.8; problem.dim()];
        run_trajectory(problem, oracle, Method::AdaGradM, &h, &x1, seed).unwrap()
    }

    #[test]
    fn exact_run_on_quadratic_passes_all_smooth_checks() {
        let p = Problem::quadratic(4, 1.5);
        let rec = run(&p, &Oracle::Exact, 0.1, 0.9, 200, 7);
        let opts = InvariantOptions {
            spec: Some(NoiseSpec::new(0.0, 0.0, 0.0).unwrap()),
            ..Default::default()
        };
        let report = check_trajectory_invariants(&rec, &p, &opts).unwrap();
        assert!(report.strict_pass(), "failed: {:?}", report.failed());
        for name in CHECK_NAMES.iter().take(14) {
            let c = report.get(name).unwrap();
            assert_eq!(c.status, CheckStatus::Pass, "{name}: {:?}", c);
        }
        // generalized set is off for a globally smooth problem
        assert_eq!(report.get("gen-gradient-value").unwrap().status, CheckStatus::NotApplicable);
        assert_eq!(report.n_not_applicable, 10);
    }

    #[test]
    fn noisy_run_with_envelope_passes() {
        let p = Problem::quadratic(6, 2.0);
        let spec = NoiseSpec::new(1.0, 1.0, 0.5).unwrap();
        let oracle = Oracle::SyntheticA3 { spec };
        let rec = run(&p, &oracle, 0.05, 0.5, 300, 11);
        let opts = InvariantOptions { spec: Some(spec), ..Default::default() };
        let report = check_trajectory_invariants(&rec, &p, &opts).unwrap();
        assert!(report.strict_pass(), "failed: {:?}", report.failed());
        assert_eq!(report.get("noise-within-budget").unwrap().status, CheckStatus::Pass);
        assert_eq!(report.get("proxy-consistency").unwrap().status, CheckStatus::Pass);
    }

    #[test]
    fn quartic_run_exercises_the_generalized_set() {
        let p = Problem::quartic(3).unwrap();
        let Some(Smoothness::Generalized { l1, .. }) = p.smoothness() else {
            panic!("quartic must carry a generalized certificate")
        };
        // stay well under the local step rule
        let eta = 0.5 * 0.25 / (l1 * 3f64.sqrt());
        let rec = run(&p, &Oracle::Exact, eta.min(0.05), 0.5, 150, 3);
        let opts = InvariantOptions {
            spec: Some(NoiseSpec::new(0.0, 0.0, 0.0).unwrap()),
            ..Default::default()
        };
        let report = check_trajectory_invariants(&rec, &p, &opts).unwrap();
        assert!(report.strict_pass(), "failed: {:?}", report.failed());
        for name in &["gen-gradient-value", "gen-gap-transfer", "gen-ratio-sum", "displacement-cap"] {
            assert_eq!(report.get(name).unwrap().status, CheckStatus::Pass, "{name}");
        }
        assert_eq!(report.get("gradient-value-bound").unwrap().status, CheckStatus::NotApplicable);
    }

    #[test]
    fn oversized_step_flips_generalized_set_to_precondition() {
        // pin constants so the local step rule is 1/(2 sqrt(3)) ~ 0.29
        let p = Problem::quartic(3)
            .unwrap()
            .with_smoothness(Smoothness::Generalized { l0: 2.0, l1: 2.0 });
        let rec = run(&p, &Oracle::Exact, 10.0, 0.0, 5, 3);
        let report =
            check_trajectory_invariants(&rec, &p, &InvariantOptions::default()).unwrap();
        assert_eq!(
            report.get("displacement-cap").unwrap().status,
            CheckStatus::PreconditionViolated
        );
        assert!(report.all_pass());
        assert!(!report.strict_pass());
    }

    #[test]
    fn tampered_momentum_is_caught() {
        let p = Problem::quadratic(4, 1.5);
        let mut rec = run(&p, &Oracle::Exact, 0.1, 0.9, 50, 7);
        for v in &mut rec.steps[20].m {
            *v *= 1e6;
        }
        let report =
            check_trajectory_invariants(&rec, &p, &InvariantOptions::default()).unwrap();
        let c = report.get("momentum-bound").unwrap();
        assert_eq!(c.status, CheckStatus::Fail);
        assert_eq!(c.worst_step, 21);
        assert!(!report.all_pass());
    }

    #[test]
    fn tampered_gradient_breaks_the_update_identity() {
        let p = Problem::quadratic(4, 1.5);
        let mut rec = run(&p, &Oracle::Exact, 0.1, 0.9, 50, 7);
        rec.steps[10].g[0] += 1.0;
        let report =
            check_trajectory_invariants(&rec, &p, &InvariantOptions::default()).unwrap();
        assert_eq!(report.get("update-identity").unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn wrong_f_star_is_a_precondition_violation_not_a_failure() {
        let p = Problem::quadratic(4, 1.5).with_f_star(0.5); // claims min 0.5; runs go below
        let rec = run(&p, &Oracle::Exact, 0.1, 0.9, 200, 7);
        let report =
            check_trajectory_invariants(&rec, &p, &InvariantOptions::default()).unwrap();
        let c = report.get("gradient-value-bound").unwrap();
        assert_eq!(c.status, CheckStatus::PreconditionViolated);
        assert!(report.all_pass());
        assert!(!report.strict_pass());
    }

    #[test]
    fn sgd_records_are_rejected() {
        let p = Problem::quadratic(3, 1.0);
        let h = HyperParams::new(0.1, 0.0, 1e-3, 10).unwrap();
        let rec =
            run_trajectory(&p, &Oracle::Exact, Method::Sgd, &h, &vec![1.0; 3], 1).unwrap();
        assert!(check_trajectory_invariants(&rec, &p, &InvariantOptions::default()).is_err());
    }

    #[test]
    fn log_sum_lemma_harmonic_example() {
        // alpha_s = eps for all s: lhs telescopes to H_{n+1} - 1
        let n = 1000;
        let alphas = vec![0.5; n];
        let (lhs, rhs) = log_sum_lemma(&alphas, 0.5).unwrap();
        let harmonic: f64 = (2..=n + 1).map(|k| 1.0 / k as f64).sum();
        assert!((lhs - harmonic).abs() < 1e-12);
        assert!(lhs <= rhs);
        assert!(rhs - lhs < 0.6); // the bound is tight up to the Euler constant
    }

    #[test]
    fn log_sum_lemma_rejects_bad_input() {
        assert!(log_sum_lemma(&[1.0], 0.0).is_err());
        assert!(log_sum_lemma(&[-1.0], 1.0).is_err());
        assert!(log_sum_lemma(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn report_always_contains_every_check_in_order() {
        let p = Problem::quadratic(2, 1.0);
        let rec = run(&p, &Oracle::Exact, 0.1, 0.0, 10, 1);
        let report =
            check_trajectory_invariants(&rec, &p, &InvariantOptions::default()).unwrap();
        let names: Vec<&str> = report.checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, CHECK_NAMES.to_vec());
    }
}
