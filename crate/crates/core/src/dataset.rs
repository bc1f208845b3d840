//! Sparse datasets in libsvm format and the regularized logistic objective.

use crate::error::{Error, Result};
use crate::problems::Objective;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

/// Row-compressed sparse dataset with ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>, labels: Vec<f64>, dim: usize) -> Result<Dataset> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0usize);
        for (r, row) in rows.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(idx, val) in row {
                if idx as usize >= dim {
                    return Err(Error::InvalidArgument(format!(
                        "row {r}: feature index {idx} out of range for dim {dim}"
                    )));
                }
                if let Some(p) = prev {
                    if idx <= p {
                        return Err(Error::InvalidArgument(format!(
                            "row {r}: feature indices must be strictly ascending"
                        )));
                    }
                }
                prev = Some(idx);
                indices.push(idx);
                values.push(val);
            }
            indptr.push(indices.len());
        }
        let labels = labels
            .into_iter()
            .map(|y| if y > 0.0 { 1.0 } else { -1.0 })
            .collect();
        Ok(Dataset {
            indptr,
            indices,
            values,
            labels,
            dim,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        let (_, vals) = self.row(i);
        vals.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Draws `k` distinct rows into a new dataset (deterministic in `rng`).
    pub fn subsample(&self, k: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
        if k == 0 || k > self.n() {
            return Err(Error::InvalidArgument(format!(
                "cannot subsample {k} of {} rows",
                self.n()
            )));
        }
        let mut picked = rand::seq::index::sample(rng, self.n(), k).into_vec();
        picked.sort_unstable();
        let mut rows = Vec::with_capacity(k);
        let mut labels = Vec::with_capacity(k);
        for &i in &picked {
            let (idx, val) = self.row(i);
            rows.push(idx.iter().copied().zip(val.iter().copied()).collect());
            labels.push(self.labels[i]);
        }
        Dataset::from_rows(rows, labels, self.dim)
    }

    /// Synthetic sparse binary-feature dataset: `nnz_per_row` active
    /// features per row, values 1, labels ±1. Stands in for real data in
    /// tests that only need *some* sparse logistic instance.
    pub fn synthetic_sparse(n: usize, dim: usize, nnz_per_row: usize, rng: &mut ChaCha8Rng) -> Dataset {
        assert!(nnz_per_row >= 1 && nnz_per_row <= dim);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let mut idx = rand::seq::index::sample(rng, dim, nnz_per_row).into_vec();
            idx.sort_unstable();
            rows.push(idx.into_iter().map(|j| (j as u32, 1.0)).collect());
            labels.push(if rng.gen_bool(0.5) { 1.0 } else { -1.0 });
        }
        Dataset::from_rows(rows, labels, dim).expect("synthetic rows are valid by construction")
    }
}

/// Loads a libsvm/svmlight file: one example per line,
/// `label index:value ...` with 1-based strictly ascending indices.
/// The feature dimension is the largest index seen unless `dim_override`
/// asks for more. Labels are mapped to ±1 (nonpositive values become -1).
pub fn load_libsvm(path: impl AsRef<Path>, dim_override: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: pstr.clone(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut max_index: usize = 0;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| Error::Io {
            path: pstr.clone(),
            source,
        })?;
        let content = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = content.split_whitespace();
        let label_tok = match tokens.next() {
            Some(t) => t,
            None => continue, // blank line
        };
        let label: f64 = label_tok.parse().map_err(|_| Error::Parse {
            path: pstr.clone(),
            line: lineno,
            msg: format!("bad label `{label_tok}`"),
        })?;
        let mut row: Vec<(u32, f64)> = Vec::new();
        let mut prev: u32 = 0;
        for tok in tokens {
            let (is, vs) = tok.split_once(':').ok_or_else(|| Error::Parse {
                path: pstr.clone(),
                line: lineno,
                msg: format!("expected index:value, got `{tok}`"),
            })?;
            let idx: u32 = is.parse().map_err(|_| Error::Parse {
                path: pstr.clone(),
                line: lineno,
                msg: format!("bad feature index `{is}`"),
            })?;
            let val: f64 = vs.parse().map_err(|_| Error::Parse {
                path: pstr.clone(),
                line: lineno,
                msg: format!("bad feature value `{vs}`"),
            })?;
            if idx == 0 {
                return Err(Error::Parse {
                    path: pstr.clone(),
                    line: lineno,
                    msg: "feature indices are 1-based".into(),
                });
            }
            if idx <= prev {
                return Err(Error::Parse {
                    path: pstr.clone(),
                    line: lineno,
                    msg: format!("feature index {idx} not strictly ascending"),
                });
            }
            prev = idx;
            max_index = max_index.max(idx as usize);
            row.push((idx - 1, val));
        }
        rows.push(row);
        labels.push(label);
    }

    let dim = dim_override.unwrap_or(0).max(max_index);
    if rows.is_empty() || dim == 0 {
        return Err(Error::Parse {
            path: pstr,
            line: 0,
            msg: "file contains no examples".into(),
        });
    }
    Dataset::from_rows(rows, labels, dim)
}

/// Regularized logistic regression
///
/// ```text
/// f(x) = (1/n) sum_i log(1 + exp(-a_i' x)) + lambda * sum_j x_j^2 / (1 + x_j^2)
/// ```
///
/// where by default the labels are folded into the features,
/// `a_i = y_i * row_i` (the raw unlabeled form is available behind
/// `fold_labels = false`). The regularizer is nonconvex and bounded with
/// curvature at most `2 lambda` per coordinate.
pub struct RegLogistic {
    data: Arc<Dataset>,
    /// effective feature values after optional label folding
    vals: Vec<f64>,
    lambda: f64,
    n_inv: f64,
}

const CHUNK: usize = 2048;

impl RegLogistic {
    pub fn new(data: Arc<Dataset>, lambda: f64, fold_labels: bool) -> Result<RegLogistic> {
        if data.n() == 0 {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        let mut vals = data.values.clone();
        if fold_labels {
            for i in 0..data.n() {
                let y = data.labels[i];
                for j in data.indptr[i]..data.indptr[i + 1] {
                    vals[j] *= y;
                }
            }
        }
        let n_inv = 1.0 / data.n() as f64;
        Ok(RegLogistic {
            data,
            vals,
            lambda,
            n_inv,
        })
    }

    fn margin(&self, x: &[f64], i: usize) -> f64 {
        let (a, b) = (self.data.indptr[i], self.data.indptr[i + 1]);
        let mut z = 0.0;
        for j in a..b {
            z += self.vals[j] * x[self.data.indices[j] as usize];
        }
        z
    }

    fn add_example_gradient(&self, x: &[f64], i: usize, weight: f64, out: &mut [f64]) {
        // d/dx log(1 + exp(-a'x)) = -sigma(-a'x) * a
        let z = self.margin(x, i);
        let coef = -weight * sigma_neg(z);
        let (a, b) = (self.data.indptr[i], self.data.indptr[i + 1]);
        for j in a..b {
            out[self.data.indices[j] as usize] += coef * self.vals[j];
        }
    }

    fn reg_value(&self, x: &[f64]) -> f64 {
        self.lambda
            * x.iter()
                .map(|&xi| xi * xi / (1.0 + xi * xi))
                .sum::<f64>()
    }

    fn add_reg_gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, &xi) in out.iter_mut().zip(x) {
            let denom = 1.0 + xi * xi;
            *o += self.lambda * 2.0 * xi / (denom * denom);
        }
    }

    /// Upper bound on the global smoothness constant:
    /// `max_i ||a_i|| * sum_i ||a_i|| / (4n)` for the loss plus `2 lambda`
    /// for the regularizer.
    pub fn smoothness_upper_bound(&self) -> f64 {
        let n = self.data.n();
        let mut max_norm = 0.0f64;
        let mut sum_norm = 0.0f64;
        for i in 0..n {
            let r = self.data.row_norm(i);
            max_norm = max_norm.max(r);
            sum_norm += r;
        }
        max_norm * sum_norm / (4.0 * n as f64) + 2.0 * self.lambda
    }
}

impl Objective for RegLogistic {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.data.n();
        // fixed chunk boundaries and an in-order reduction keep the result
        // bitwise deterministic under any thread schedule
        let partials: Vec<f64> = (0..n)
            .into_par_iter()
            .chunks(CHUNK)
            .map(|chunk| {
                let mut s = 0.0;
                for i in chunk {
                    s += log1p_exp_neg(self.margin(x, i));
                }
                s
            })
            .collect();
        partials.iter().sum::<f64>() * self.n_inv + self.reg_value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.data.n();
        let d = self.data.dim();
        let partials: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .chunks(CHUNK)
            .map(|chunk| {
                let mut acc = vec![0.0; d];
                for i in chunk {
                    self.add_example_gradient(x, i, self.n_inv, &mut acc);
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; d];
        for p in &partials {
            for (o, v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
        self.add_reg_gradient(x, &mut out);
        out
    }

    fn num_examples(&self) -> Option<usize> {
        Some(self.data.n())
    }

    fn minibatch_gradient(&self, x: &[f64], idx: &[usize]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.data.dim()];
        let w = 1.0 / idx.len() as f64;
        for &i in idx {
            self.add_example_gradient(x, i, w, &mut out);
        }
        self.add_reg_gradient(x, &mut out);
        Some(out)
    }
}

/// `log(1 + exp(-z))` without overflow on either tail.
fn log1p_exp_neg(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `sigma(-z) = 1 / (1 + exp(z))` without overflow.
fn sigma_neg(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Problem;
    use crate::rng::stream_rng;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_libsvm_file() {
        let f = write_tmp("+1 1:1 3:1\n-1 2:1\n+1 1:1 2:1 3:1\n");
        let ds = load_libsvm(f.path(), None).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.label(0), 1.0);
        assert_eq!(ds.label(1), -1.0);
        let (idx, val) = ds.row(0);
        assert_eq!(idx, &[0, 2]);
        assert_eq!(val, &[1.0, 1.0]);
    }

    #[test]
    fn loader_reports_line_numbers() {
        let f = write_tmp("+1 1:1\n-1 3:1 2:1\n");
        match load_libsvm(f.path(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("+1 1:1\nnotalabel 2:1\n");
        match load_libsvm(f.path(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write_tmp("+1 0:1\n");
        assert!(load_libsvm(f.path(), None).is_err());
        let f = write_tmp("");
        assert!(load_libsvm(f.path(), None).is_err());
    }

    #[test]
    fn dim_override_extends_but_never_truncates() {
        let f = write_tmp("+1 1:1 5:1\n");
        let ds = load_libsvm(f.path(), Some(10)).unwrap();
        assert_eq!(ds.dim(), 10);
        let ds = load_libsvm(f.path(), Some(2)).unwrap();
        assert_eq!(ds.dim(), 5);
    }

    #[test]
    fn logistic_value_matches_direct_computation() {
        // two examples: a_1 = y_1*(e_1) with y_1=+1, a_2 = y_2*(e_1+e_2), y_2=-1
        let ds = Arc::new(
            Dataset::from_rows(
                vec![vec![(0, 1.0)], vec![(0, 1.0), (1, 1.0)]],
                vec![1.0, -1.0],
                2,
            )
            .unwrap(),
        );
        let obj = RegLogistic::new(ds, 0.1, true).unwrap();
        let x = [0.5, -0.25];
        // folded margins: z_1 = 0.5, z_2 = -(0.5 - 0.25) = -0.25
        let expect = 0.5 * ((1.0f64 + (-0.5f64).exp()).ln() + (1.0f64 + 0.25f64.exp()).ln())
            + 0.1 * (0.25 / 1.25 + 0.0625 / 1.0625);
        assert!((obj.value(&x) - expect).abs() < 1e-14);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = stream_rng(9, 0);
        let ds = Arc::new(Dataset::synthetic_sparse(40, 12, 4, &mut rng));
        let p = Problem::reg_logistic(ds, 0.1, true).unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = p.gradient(&x);
        let h = 1e-5 * (1.0 + crate::trajectory::norm(&x));
        for i in 0..12 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.value(&xp) - p.value(&xm)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs().max(g[i].abs())),
                "coordinate {i}: fd {fd} vs analytic {}",
                g[i]
            );
        }
    }

    #[test]
    fn minibatch_over_all_examples_equals_full_gradient() {
        let mut rng = stream_rng(10, 0);
        let ds = Arc::new(Dataset::synthetic_sparse(25, 8, 3, &mut rng));
        let p = Problem::reg_logistic(ds, 0.05, true).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let full = p.gradient(&x);
        let idx: Vec<usize> = (0..25).collect();
        let mb = p.minibatch_gradient(&x, &idx).unwrap();
        for i in 0..8 {
            assert!((full[i] - mb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothness_bound_dominates_sampled_curvature() {
        let mut rng = stream_rng(11, 0);
        let ds = Arc::new(Dataset::synthetic_sparse(30, 10, 3, &mut rng));
        let lambda = 0.1;
        let obj = RegLogistic::new(ds.clone(), lambda, true).unwrap();
        let bound = obj.smoothness_upper_bound();
        let p = Problem::reg_logistic(ds, lambda, true).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..10).map(|i| x[i] + rng.gen_range(-0.1..0.1)).collect();
            let gx = p.gradient(&x);
            let gy = p.gradient(&y);
            let num: f64 = gx
                .iter()
                .zip(&gy)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if den > 1e-12 {
                assert!(num / den <= bound * (1.0 + 1e-9), "ratio {} > bound {bound}", num / den);
            }
        }
    }

    #[test]
    fn subsample_preserves_rows() {
        let mut rng = stream_rng(12, 0);
        let ds = Dataset::synthetic_sparse(50, 10, 3, &mut rng);
        let sub = ds.subsample(10, &mut rng).unwrap();
        assert_eq!(sub.n(), 10);
        assert_eq!(sub.dim(), 10);
        assert!(ds.subsample(0, &mut rng).is_err());
        assert!(ds.subsample(51, &mut rng).is_err());
    }

    #[test]
    fn raw_and_folded_forms_agree_on_positive_labels() {
        let rows = vec![vec![(0, 1.0), (2, 1.0)], vec![(1, 1.0)]];
        let ds = Arc::new(Dataset::from_rows(rows, vec![1.0, 1.0], 3).unwrap());
        let a = RegLogistic::new(ds.clone(), 0.1, true).unwrap();
        let b = RegLogistic::new(ds, 0.1, false).unwrap();
        let x = [0.3, -0.7, 0.2];
        assert_eq!(a.value(&x), b.value(&x));
    }
}
