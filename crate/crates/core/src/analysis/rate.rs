//! Empirical convergence-rate fitting and high-probability event tallies.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RateFit {
    /// Slope of `log(metric)` against `log(T)`; a `T^{-1/2}` decay fits -0.5.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

/// Least-squares fit of `log(metric)` on `log(T)`.
///
/// The grid must be strictly increasing with at least three points and the
/// metric strictly positive — a zero metric means the run bottomed out at
/// numerical precision and carries no rate information.
pub fn fit_loglog_rate(t_grid: &[usize], metric: &[f64]) -> Result<RateFit> {
    if t_grid.len() != metric.len() {
        return Err(Error::DimensionMismatch { expected: t_grid.len(), got: metric.len() });
    }
    if t_grid.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 horizon points for a rate fit, got {}",
            t_grid.len()
        )));
    }
    for w in t_grid.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::InvalidArgument(format!(
                "horizon grid must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if t_grid[0] == 0 {
        return Err(Error::InvalidArgument("horizons must be positive".into()));
    }
    for (i, &m) in metric.iter().enumerate() {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "metric at T={} must be finite and positive, got {m}",
                t_grid[i]
            )));
        }
    }

    let n = t_grid.len() as f64;
    let xs: Vec<f64> = t_grid.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = metric.iter().map(|&m| m.ln()).collect();
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mean_x) * (x - mean_x)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let p = intercept + slope * x;
            (y - p) * (y - p)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };

    Ok(RateFit { slope, intercept, r_squared, n: t_grid.len() })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HpSummary {
    pub n: usize,
    pub successes: usize,
    pub fraction: f64,
    /// Admissible empirical fraction: `1 - delta - 3 sqrt(delta(1-delta)/n)`.
    pub threshold: f64,
    pub pass: bool,
}

/// Tallies high-probability events across seeds. A guarantee of level
/// `1 - delta` passes when the empirical success fraction stays above the
/// Monte-Carlo-adjusted threshold.
pub fn hp_fraction(events: &[bool], delta: f64) -> Result<HpSummary> {
    if events.is_empty() {
        return Err(Error::InvalidArgument("no events supplied".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0,1), got {delta}")));
    }
    let n = events.len();
    let successes = events.iter().filter(|&&e| e).count();
    let fraction = successes as f64 / n as f64;
    let threshold = 1.0 - delta - 3.0 * (delta * (1.0 - delta) / n as f64).sqrt();
    Ok(HpSummary { n, successes, fraction, threshold, pass: fraction >= threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_an_exact_power_law() {
        let grid: Vec<usize> = vec![256, 512, 1024, 2048, 4096];
        let metric: Vec<f64> = grid.iter().map(|&t| 3.0 * (t as f64).powf(-0.5)).collect();
        let fit = fit_loglog_rate(&grid, &metric).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_metric_fits_zero_slope() {
        let grid: Vec<usize> = vec![10, 100, 1000];
        let fit = fit_loglog_rate(&grid, &[2.0, 2.0, 2.0]).unwrap();
        assert!(fit.slope.abs() < 1e-15);
        assert_eq!(fit.r_squared, 1.0); // zero residual on zero variance
    }

    #[test]
    fn rejects_bad_grids_and_metrics() {
        assert!(fit_loglog_rate(&[1, 2], &[1.0, 2.0]).is_err());
        assert!(fit_loglog_rate(&[1, 2, 2], &[1.0, 2.0, 3.0]).is_err());
        assert!(fit_loglog_rate(&[1, 2, 3], &[1.0, 2.0]).is_err());
        assert!(fit_loglog_rate(&[1, 2, 3], &[1.0, 0.0, 2.0]).is_err());
        assert!(fit_loglog_rate(&[1, 2, 3], &[1.0, -1.0, 2.0]).is_err());
        assert!(fit_loglog_rate(&[0, 1, 2], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn hp_fraction_hand_example() {
        // n=200, delta=0.05: threshold = 0.95 - 3 sqrt(0.0475/200) = 0.90377
        let mut events = vec![true; 190];
        events.extend(vec![false; 10]);
        let s = hp_fraction(&events, 0.05).unwrap();
        assert_eq!(s.successes, 190);
        assert!((s.threshold - 0.9037672).abs() < 1e-6);
        assert!(s.pass);

        let mut events = vec![true; 180];
        events.extend(vec![false; 20]);
        let s = hp_fraction(&events, 0.05).unwrap();
        assert!(!s.pass, "0.90 sits below the admissible 0.9038");
    }

    #[test]
    fn hp_fraction_validation() {
        assert!(hp_fraction(&[], 0.05).is_err());
        assert!(hp_fraction(&[true], 0.0).is_err());
        assert!(hp_fraction(&[true], 1.0).is_err());
    }
}
