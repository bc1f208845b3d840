//! Benchmark objectives and their smoothness metadata.

use crate::dataset::{Dataset, RegLogistic};
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::optim::{adagrad_momentum_step, Method, OptimizerState};
use crate::rng::stream_rng;
use crate::trajectory::norm;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Smoothness metadata attached to a problem.
///
/// `GlobalL(L)` asserts `||grad f(x) - grad f(y)|| <= L ||x - y||` globally;
/// `Generalized { l0, l1 }` asserts the gradient-dependent version
/// `||grad f(y) - grad f(x)|| <= (l0 + l1 ||grad f(x)||) ||x - y||` for
/// `||x - y|| <= 1/l1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Smoothness {
    GlobalL(f64),
    Generalized { l0: f64, l1: f64 },
}

pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Number of datapoints for finite-sum objectives; `None` otherwise.
    fn num_examples(&self) -> Option<usize> {
        None
    }
    /// Unbiased minibatch gradient over the given example indices, for
    /// finite-sum objectives.
    fn minibatch_gradient(&self, _x: &[f64], _idx: &[usize]) -> Option<Vec<f64>> {
        None
    }
}

/// A benchmark objective plus the metadata the analysis layer consumes.
#[derive(Clone)]
pub struct Problem {
    id: String,
    objective: Arc<dyn Objective>,
    f_star: Option<f64>,
    smoothness: Option<Smoothness>,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("id", &self.id)
            .field("dim", &self.dim())
            .field("f_star", &self.f_star)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

struct Quadratic {
    dim: usize,
    l: f64,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.l * x.iter().map(|a| a * a).sum::<f64>()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|a| self.l * a).collect()
    }
}

struct Quartic {
    dim: usize,
}

impl Objective for Quartic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|a| a * a * a * a).sum()
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|a| 4.0 * a * a * a).collect()
    }
}

impl Problem {
    pub fn from_objective(
        id: impl Into<String>,
        objective: Arc<dyn Objective>,
        f_star: Option<f64>,
        smoothness: Option<Smoothness>,
    ) -> Self {
        Problem {
            id: id.into(),
            objective,
            f_star,
            smoothness,
        }
    }

    /// Isotropic quadratic `f(x) = L/2 ||x||^2`, minimum 0 at the origin.
    pub fn quadratic(dim: usize, l: f64) -> Self {
        assert!(dim > 0 && l > 0.0 && l.is_finite());
        Problem {
            id: format!("quadratic:d={dim},L={l}"),
            objective: Arc::new(Quadratic { dim, l }),
            f_star: Some(0.0),
            smoothness: Some(Smoothness::GlobalL(l)),
        }
    }

    /// Separable quartic `f(x) = sum_j x_j^4`. Not globally Lipschitz-smooth;
    /// carries a generalized-smoothness certificate probed on the box
    /// `[-2, 2]^d` with a fixed internal seed, so repeated construction
    /// yields identical constants.
    pub fn quartic(dim: usize) -> Result<Self> {
        assert!(dim > 0);
        let mut p = Problem {
            id: format!("quartic:d={dim}"),
            objective: Arc::new(Quartic { dim }),
            f_star: Some(0.0),
            smoothness: None,
        };
        let mut rng = stream_rng(0x5eed_9a47, 0);
        let sm = smoothness_probe(&p, -2.0, 2.0, 512, &mut rng)?;
        match sm {
            Smoothness::Generalized { .. } => {
                p.smoothness = Some(sm);
                Ok(p)
            }
            Smoothness::GlobalL(_) => Err(Error::InvalidArgument(
                "quartic probe unexpectedly certified a global constant".into(),
            )),
        }
    }

    /// Regularized logistic regression over a sparse dataset; see
    /// [`crate::dataset::RegLogistic`] for the loss. `f_star` is left unset
    /// and is normally filled in via [`estimate_f_star`].
    pub fn reg_logistic(data: Arc<Dataset>, lambda: f64, fold_labels: bool) -> Result<Self> {
        let obj = RegLogistic::new(data, lambda, fold_labels)?;
        let l = obj.smoothness_upper_bound();
        let suffix = if fold_labels { "" } else { ",labels=raw" };
        Ok(Problem {
            id: format!("a9a-reglog:lambda={lambda}{suffix}"),
            objective: Arc::new(obj),
            f_star: None,
            smoothness: Some(Smoothness::GlobalL(l)),
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_f_star(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }

    /// Replaces the smoothness certificate, e.g. with externally known
    /// constants instead of probed ones.
    pub fn with_smoothness(mut self, smoothness: Smoothness) -> Self {
        self.smoothness = Some(smoothness);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.objective.gradient(x)
    }

    pub fn f_star(&self) -> Option<f64> {
        self.f_star
    }

    pub fn require_f_star(&self) -> Result<f64> {
        self.f_star.ok_or_else(|| Error::MissingFStar(self.id.clone()))
    }

    pub fn smoothness(&self) -> Option<Smoothness> {
        self.smoothness
    }

    pub fn num_examples(&self) -> Option<usize> {
        self.objective.num_examples()
    }

    pub fn minibatch_gradient(&self, x: &[f64], idx: &[usize]) -> Option<Vec<f64>> {
        self.objective.minibatch_gradient(x, idx)
    }
}

/// Parsed problem identifier. Instantiation is separate so dataset-backed
/// problems can be resolved against a loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Quadratic { dim: usize, l: f64 },
    Quartic { dim: usize },
    RegLogistic { lambda: f64, fold_labels: bool },
}

impl ProblemSpec {
    /// Parses ids of the forms `quadratic:d=10,L=2`, `quartic:d=4`,
    /// `a9a-reglog:lambda=0.1[,labels=raw]`. Unknown names or keys are
    /// rejected rather than ignored.
    pub fn parse(id: &str) -> Result<ProblemSpec> {
        let (name, params) = match id.split_once(':') {
            Some((n, p)) => (n, p),
            None => (id, ""),
        };
        let kvs = parse_kv_list(id, params)?;
        match name {
            "quadratic" => {
                let mut dim = None;
                let mut l = None;
                for (k, v) in &kvs {
                    match k.as_str() {
                        "d" => dim = Some(parse_usize(id, v)?),
                        "L" => l = Some(parse_f64(id, v)?),
                        _ => return Err(Error::UnknownId(format!("{id} (key `{k}`)"))),
                    }
                }
                let dim = dim.ok_or_else(|| Error::InvalidArgument(format!("{id}: missing d")))?;
                let l = l.ok_or_else(|| Error::InvalidArgument(format!("{id}: missing L")))?;
                if dim == 0 || !(l > 0.0) {
                    return Err(Error::InvalidArgument(format!("{id}: d and L must be positive")));
                }
                Ok(ProblemSpec::Quadratic { dim, l })
            }
            "quartic" => {
                let mut dim = None;
                for (k, v) in &kvs {
                    match k.as_str() {
                        "d" => dim = Some(parse_usize(id, v)?),
                        _ => return Err(Error::UnknownId(format!("{id} (key `{k}`)"))),
                    }
                }
                let dim = dim.ok_or_else(|| Error::InvalidArgument(format!("{id}: missing d")))?;
                if dim == 0 {
                    return Err(Error::InvalidArgument(format!("{id}: d must be positive")));
                }
                Ok(ProblemSpec::Quartic { dim })
            }
            "a9a-reglog" => {
                let mut lambda = 0.1;
                let mut fold = true;
                for (k, v) in &kvs {
                    match k.as_str() {
                        "lambda" => lambda = parse_f64(id, v)?,
                        "labels" => match v.as_str() {
                            "raw" => fold = false,
                            "folded" => fold = true,
                            _ => {
                                return Err(Error::InvalidArgument(format!(
                                    "{id}: labels must be `raw` or `folded`"
                                )))
                            }
                        },
                        _ => return Err(Error::UnknownId(format!("{id} (key `{k}`)"))),
                    }
                }
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(Error::InvalidArgument(format!("{id}: lambda must be >= 0")));
                }
                Ok(ProblemSpec::RegLogistic {
                    lambda,
                    fold_labels: fold,
                })
            }
            _ => Err(Error::UnknownId(id.to_string())),
        }
    }

    pub fn needs_dataset(&self) -> bool {
        matches!(self, ProblemSpec::RegLogistic { .. })
    }

    pub fn instantiate(&self, dataset: Option<Arc<Dataset>>) -> Result<Problem> {
        match self {
            ProblemSpec::Quadratic { dim, l } => Ok(Problem::quadratic(*dim, *l)),
            ProblemSpec::Quartic { dim } => Problem::quartic(*dim),
            ProblemSpec::RegLogistic {
                lambda,
                fold_labels,
            } => {
                let data = dataset.ok_or_else(|| {
                    Error::InvalidArgument(
                        "a9a-reglog requires a dataset (set data_path)".into(),
                    )
                })?;
                Problem::reg_logistic(data, *lambda, *fold_labels)
            }
        }
    }
}

pub(crate) fn parse_kv_list(id: &str, params: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    if params.is_empty() {
        return Ok(out);
    }
    for part in params.split(',') {
        let (k, v) = part.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("{id}: expected key=value, got `{part}`"))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_f64(id: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("{id}: `{v}` is not a number")))
}

pub(crate) fn parse_usize(id: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::InvalidArgument(format!("{id}: `{v}` is not an integer")))
}

/// Empirical smoothness probe over the box `[lo, hi]^d`.
///
/// Samples gradient differences at random pairs, then decides between a
/// global Lipschitz certificate and a generalized `(L0, L1)` one by
/// re-probing on the box expanded to twice its half-width: if the largest
/// difference quotient grows materially with the box, a global constant is
/// not trustworthy and a grid fit of `(L0, L1)` is performed instead.
///
/// The grid is logarithmic, `2^-10 ..= 2^10` in each parameter, and the fit
/// prefers the smallest feasible `L1` and then the smallest `L0` — i.e. the
/// most "globally smooth" certificate. A degenerate objective with zero
/// gradient variation everywhere fits at the grid minimum in both
/// parameters.
pub fn smoothness_probe(
    problem: &Problem,
    lo: f64,
    hi: f64,
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Smoothness> {
    if n_pairs < 100 {
        return Err(Error::InvalidArgument(format!(
            "smoothness probe needs at least 100 pairs, got {n_pairs}"
        )));
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "probe box [{lo}, {hi}] must be bounded with lo < hi"
        )));
    }
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let inner = probe_pairs(problem, center - half, center + half, n_pairs, rng);
    let outer = probe_pairs(problem, center - 2.0 * half, center + 2.0 * half, n_pairs, rng);
    let r_inner = max_ratio(&inner);
    let r_outer = max_ratio(&outer);

    if r_outer == 0.0 && r_inner == 0.0 {
        let gmin = GRID_MIN;
        return Ok(Smoothness::Generalized { l0: gmin, l1: gmin });
    }
    if r_outer <= 1.25 * r_inner {
        return Ok(Smoothness::GlobalL(r_outer.max(r_inner)));
    }
    fit_generalized_grid(&inner)
}

const GRID_MIN_EXP: i32 = -10;
const GRID_MAX_EXP: i32 = 10;
const GRID_MIN: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, Copy)]
struct ProbePair {
    dist: f64,
    ratio: f64,
    anchor_grad_norm: f64,
}

fn probe_pairs(
    problem: &Problem,
    lo: f64,
    hi: f64,
    n_pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ProbePair> {
    let d = problem.dim();
    let width = hi - lo;
    let mut out = Vec::with_capacity(2 * n_pairs);
    for _ in 0..n_pairs {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(lo..hi)).collect();
        // log-uniform radius so that small-displacement pairs (needed for
        // large L1 candidates) are always represented
        let log_r = rng.gen_range((1e-4f64 * width).ln()..(width).ln());
        let r = log_r.exp();
        let mut dir: Vec<f64> = (0..d)
            .map(|_| rng.gen_range(-1.0f64..1.0))
            .collect();
        let n = norm(&dir);
        if n < 1e-12 {
            dir = vec![1.0; d];
        }
        let n = norm(&dir);
        let y: Vec<f64> = (0..d)
            .map(|i| (x[i] + r * dir[i] / n).clamp(lo, hi))
            .collect();
        let dist = norm(
            &x.iter()
                .zip(&y)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
        if dist < 1e-12 {
            continue;
        }
        let gx = problem.gradient(&x);
        let gy = problem.gradient(&y);
        let diff = norm(
            &gx.iter()
                .zip(&gy)
                .map(|(a, b)| a - b)
                .collect::<Vec<f64>>(),
        );
        let ratio = diff / dist;
        // both orientations are instances of the smoothness inequality
        out.push(ProbePair {
            dist,
            ratio,
            anchor_grad_norm: norm(&gx),
        });
        out.push(ProbePair {
            dist,
            ratio,
            anchor_grad_norm: norm(&gy),
        });
    }
    out
}

fn max_ratio(pairs: &[ProbePair]) -> f64 {
    pairs.iter().map(|p| p.ratio).fold(0.0, f64::max)
}

fn fit_generalized_grid(pairs: &[ProbePair]) -> Result<Smoothness> {
    for e1 in GRID_MIN_EXP..=GRID_MAX_EXP {
        let l1 = (e1 as f64).exp2();
        let radius = 1.0 / l1;
        let mut required_l0 = 0.0f64;
        let mut any = false;
        for p in pairs {
            if p.dist <= radius {
                any = true;
                required_l0 = required_l0.max(p.ratio - l1 * p.anchor_grad_norm);
            }
        }
        if !any {
            continue;
        }
        for e0 in GRID_MIN_EXP..=GRID_MAX_EXP {
            let l0 = (e0 as f64).exp2();
            if l0 >= required_l0 {
                return Ok(Smoothness::Generalized { l0, l1 });
            }
        }
    }
    Err(Error::ExceedsProbeGrid)
}

/// Deterministic full-batch AdaGrad polish to estimate the optimal value of
/// a problem with no closed-form minimum. Returns the best value seen minus
/// a safety margin of 1e-6, so the estimate errs on the low side and
/// downstream suboptimality gaps stay nonnegative.
pub fn estimate_f_star(problem: &Problem, steps: usize, eta: f64, epsilon: f64) -> Result<f64> {
    if steps == 0 {
        return Err(Error::InvalidArgument("f* estimation needs at least 1 step".into()));
    }
    let hyper = HyperParams::new(eta, 0.0, epsilon, steps)?;
    let mut state = OptimizerState::init(Method::AdaGrad, vec![0.0; problem.dim()]);
    let mut best = problem.value(&state.x);
    if !best.is_finite() {
        return Err(Error::NonFinite {
            what: "objective at the origin".into(),
        });
    }
    for _ in 0..steps {
        let g = problem.gradient(&state.x);
        if g.iter().any(|a| !a.is_finite()) {
            break;
        }
        let (next, _) = adagrad_momentum_step(&state, &g, &hyper)?;
        state = next;
        let f = problem.value(&state.x);
        if f.is_finite() && f < best {
            best = f;
        }
    }
    Ok(best - 1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_value_and_gradient() {
        let p = Problem::quadratic(3, 2.0);
        let x = [1.0, -2.0, 0.5];
        assert_eq!(p.value(&x), 0.5 * 2.0 * (1.0 + 4.0 + 0.25));
        assert_eq!(p.gradient(&x), vec![2.0, -4.0, 1.0]);
        assert_eq!(p.f_star(), Some(0.0));
        assert_eq!(p.smoothness(), Some(Smoothness::GlobalL(2.0)));
    }

    #[test]
    fn quartic_value_and_gradient() {
        let p = Problem::quartic(2).unwrap();
        let x = [2.0, -1.0];
        assert_eq!(p.value(&x), 16.0 + 1.0);
        assert_eq!(p.gradient(&x), vec![32.0, -4.0]);
    }

    #[test]
    fn probe_certifies_quadratic_globally() {
        let p = Problem::quadratic(5, 2.0);
        let mut rng = stream_rng(1, 0);
        match smoothness_probe(&p, -1.0, 1.0, 200, &mut rng).unwrap() {
            Smoothness::GlobalL(l) => {
                assert!((1.9..=2.0 + 1e-9).contains(&l), "estimated L = {l}");
            }
            other => panic!("expected a global certificate, got {other:?}"),
        }
    }

    #[test]
    fn probe_detects_quartic_growth() {
        let p = Problem::quartic(4).unwrap();
        match p.smoothness().unwrap() {
            Smoothness::Generalized { l0, l1 } => {
                assert!(l0.is_finite() && l0 > 0.0);
                assert!(l1.is_finite() && l1 > 0.0);
            }
            other => panic!("expected a generalized certificate, got {other:?}"),
        }
    }

    #[test]
    fn probe_on_constant_function_fits_grid_minimum() {
        struct Constant;
        impl Objective for Constant {
            fn dim(&self) -> usize {
                3
            }
            fn value(&self, _x: &[f64]) -> f64 {
                7.0
            }
            fn gradient(&self, _x: &[f64]) -> Vec<f64> {
                vec![0.0; 3]
            }
        }
        let p = Problem::from_objective("constant:d=3", Arc::new(Constant), Some(7.0), None);
        let mut rng = stream_rng(2, 0);
        match smoothness_probe(&p, -1.0, 1.0, 150, &mut rng).unwrap() {
            Smoothness::Generalized { l0, l1 } => {
                assert_eq!(l0, GRID_MIN);
                assert_eq!(l1, GRID_MIN);
            }
            other => panic!("expected grid-minimum fit, got {other:?}"),
        }
    }

    #[test]
    fn probe_rejects_bad_inputs() {
        let p = Problem::quadratic(2, 1.0);
        let mut rng = stream_rng(3, 0);
        assert!(smoothness_probe(&p, -1.0, 1.0, 50, &mut rng).is_err());
        assert!(smoothness_probe(&p, 1.0, -1.0, 200, &mut rng).is_err());
        assert!(smoothness_probe(&p, f64::NEG_INFINITY, 1.0, 200, &mut rng).is_err());
    }

    #[test]
    fn id_parsing_round_trips() {
        let spec = ProblemSpec::parse("quadratic:d=10,L=2").unwrap();
        assert_eq!(spec, ProblemSpec::Quadratic { dim: 10, l: 2.0 });
        let p = spec.instantiate(None).unwrap();
        assert_eq!(p.id(), "quadratic:d=10,L=2");

        assert_eq!(
            ProblemSpec::parse("quartic:d=4").unwrap(),
            ProblemSpec::Quartic { dim: 4 }
        );
        assert_eq!(
            ProblemSpec::parse("a9a-reglog:lambda=0.1").unwrap(),
            ProblemSpec::RegLogistic {
                lambda: 0.1,
                fold_labels: true
            }
        );
        assert_eq!(
            ProblemSpec::parse("a9a-reglog:lambda=0.5,labels=raw").unwrap(),
            ProblemSpec::RegLogistic {
                lambda: 0.5,
                fold_labels: false
            }
        );
    }

    #[test]
    fn id_parsing_rejects_unknown_names_and_keys() {
        assert!(ProblemSpec::parse("rosenbrock:d=2").is_err());
        assert!(ProblemSpec::parse("quadratic:d=10,L=2,mu=1").is_err());
        assert!(ProblemSpec::parse("quadratic:d=0,L=2").is_err());
        assert!(ProblemSpec::parse("quadratic:L=2").is_err());
        assert!(ProblemSpec::parse("quartic").is_err());
        assert!(ProblemSpec::parse("a9a-reglog:lambda=-1").is_err());
    }

    #[test]
    fn f_star_estimate_on_quadratic_is_slightly_below_zero() {
        let p = Problem::quadratic(4, 1.0);
        let est = estimate_f_star(&p, 200, 0.5, 1e-8).unwrap();
        // the true minimum is 0 and estimation starts there
        assert!((est + 1e-6).abs() < 1e-12, "estimate = {est}");
    }
}
