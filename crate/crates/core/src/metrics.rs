//! Point, quantile and interval scores.

use std::io::Write;

use crate::distributions::{stable_quantile, StableParams};
use crate::error::check_len;
use crate::{Error, Result};

pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("mape inputs", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(Error::data("mape of an empty series"));
    }
    let mut sum = 0.0;
    for (i, (a, f)) in y.iter().zip(yhat).enumerate() {
        if *a == 0.0 {
            return Err(Error::data(format!("mape undefined: actual value at index {i} is zero")));
        }
        sum += ((a - f) / a).abs();
    }
    Ok(100.0 * sum / y.len() as f64)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("mae inputs", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(Error::data("mae of an empty series"));
    }
    Ok(y.iter().zip(yhat).map(|(a, f)| (a - f).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len("rmse inputs", y.len(), yhat.len())?;
    if y.is_empty() {
        return Err(Error::data("rmse of an empty series"));
    }
    Ok((y.iter().zip(yhat).map(|(a, f)| (a - f) * (a - f)).sum::<f64>() / y.len() as f64).sqrt())
}

pub fn pinball(y: f64, q: f64, p: f64) -> f64 {
    if y >= q {
        (y - q) * p
    } else {
        (q - y) * (1.0 - p)
    }
}

/// Strictly ascending probabilities inside `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileGrid {
    probs: Vec<f64>,
    weights: Vec<f64>,
}

/// Width of the cell around each probability, cells split at midpoints and
/// the outer cells mirrored and clipped to `[0, 1]`. One point gets weight 1.
fn cell_weights(probs: &[f64]) -> Vec<f64> {
    let k = probs.len();
    if k == 1 {
        return vec![1.0];
    }
    (0..k)
        .map(|i| {
            let lo = if i == 0 { probs[0] - (probs[1] - probs[0]) / 2.0 } else { (probs[i - 1] + probs[i]) / 2.0 };
            let hi = if i + 1 == k { probs[k - 1] + (probs[k - 1] - probs[k - 2]) / 2.0 } else { (probs[i] + probs[i + 1]) / 2.0 };
            hi.min(1.0) - lo.max(0.0)
        })
        .collect()
}

impl QuantileGrid {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || probs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("quantile grid must be nonempty, strictly ascending and inside (0, 1)"));
        }
        let weights = cell_weights(&probs);
        Ok(QuantileGrid { probs, weights })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Default for QuantileGrid {
    /// `0.01, 0.02, ..., 0.99`.
    fn default() -> Self {
        QuantileGrid::new((1..=99).map(|i| i as f64 / 100.0).collect()).expect("valid grid")
    }
}

/// Quantile-decomposition CRPS, `2 * sum_p w_p * pinball(y, q_p, p)` with
/// cell widths `w_p` (0.01 on the default grid).
pub fn crps_quantile(y: f64, predictive: &StableParams, grid: &QuantileGrid) -> f64 {
    let sum: f64 = grid
        .probs
        .iter()
        .zip(&grid.weights)
        .map(|(&p, w)| w * pinball(y, stable_quantile(p, predictive).expect("grid inside (0, 1)"), p))
        .sum();
    2.0 * sum
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalForecast {
    pub lower: f64,
    pub upper: f64,
    /// Nominal central coverage.
    pub coverage: f64,
}

impl IntervalForecast {
    pub fn new(lower: f64, upper: f64, coverage: f64) -> Result<Self> {
        if !(coverage > 0.0 && coverage < 1.0) {
            return Err(Error::domain(format!("interval coverage {coverage} must lie in (0, 1)")));
        }
        if !(lower <= upper) {
            return Err(Error::domain(format!("interval lower bound {lower} exceeds upper bound {upper}")));
        }
        Ok(IntervalForecast { lower, upper, coverage })
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }
}

/// Width plus `2/(1-c)` per unit of exceedance.
pub fn winkler(y: f64, iv: &IntervalForecast) -> f64 {
    let width = iv.upper - iv.lower;
    let penalty = 2.0 / (1.0 - iv.coverage);
    if y < iv.lower {
        width + penalty * (iv.lower - y)
    } else if y > iv.upper {
        width + penalty * (y - iv.upper)
    } else {
        width
    }
}

pub fn coverage(y: &[f64], intervals: &[IntervalForecast]) -> Result<f64> {
    check_len("coverage inputs", y.len(), intervals.len())?;
    if y.is_empty() {
        return Err(Error::data("coverage of an empty series"));
    }
    Ok(y.iter().zip(intervals).filter(|(v, iv)| iv.contains(**v)).count() as f64 / y.len() as f64)
}

/// One `metric,dataset,variant,value` row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub dataset: String,
    pub variant: String,
    pub value: f64,
}

impl ReportRow {
    pub fn new(metric: impl Into<String>, dataset: impl Into<String>, variant: impl Into<String>, value: f64) -> Self {
        ReportRow {
            metric: metric.into(),
            dataset: dataset.into(),
            variant: variant.into(),
            value,
        }
    }
}

pub fn write_report<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "dataset", "variant", "value"])?;
    for r in rows {
        out.write_record([r.metric.as_str(), r.dataset.as_str(), r.variant.as_str(), &r.value.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Family;
    use crate::rng::{normal_vec, stream};

    fn gaussian_crps(y: f64, loc: f64, scale: f64) -> f64 {
        use statrs::distribution::{Continuous, ContinuousCDF, Normal};
        let n = Normal::new(0.0, 1.0).unwrap();
        let z = (y - loc) / scale;
        scale * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - 1.0 / std::f64::consts::PI.sqrt())
    }

    #[test]
    fn point_metric_examples() {
        assert!((mape(&[100.0, 200.0], &[110.0, 180.0]).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert!((mape(&[50.0], &[60.0]).unwrap() - 20.0).abs() < 1e-12);
        let err = mape(&[1.0, 0.0], &[1.0, 1.0]).unwrap_err().to_string();
        assert!(err.contains("index 1"));
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mae(&[-1.0], &[2.0]).unwrap(), 3.0);
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(rmse(&[-1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.5, 2.0], &[0.5, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(2.0, 2.0, 0.3), 0.0);
        assert!((pinball(1.0, 0.0, 0.9) - 0.9).abs() < 1e-15);
        assert!((pinball(0.0, 1.0, 0.9) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn crps_matches_gaussian_closed_form() {
        let grid = QuantileGrid::default();
        let p = StableParams::gaussian(0.0, 1.0).unwrap();
        assert!((gaussian_crps(0.0, 0.0, 1.0) - 0.233_695_0).abs() < 1e-6);
        assert!((gaussian_crps(1.0, 0.0, 1.0) - 0.602_441_4).abs() < 1e-6);
        for y in [0.0, 0.5, 1.0, 2.0] {
            let exact = gaussian_crps(y, 0.0, 1.0);
            let got = crps_quantile(y, &p, &grid);
            assert!(((got - exact) / exact).abs() < 0.01, "y={y}: {got} vs {exact}");
        }
        let single = QuantileGrid::new(vec![0.5]).unwrap();
        assert_eq!(crps_quantile(3.0, &StableParams::cauchy(3.0, 2.0).unwrap(), &single), 0.0);
    }

    #[test]
    fn crps_properties() {
        let grid = QuantileGrid::default();
        for family in [Family::Cauchy, Family::Gaussian] {
            let mut prev = f64::INFINITY;
            for k in (0..=20).rev() {
                let loc = k as f64 * 0.25;
                let c = crps_quantile(0.0, &StableParams::new(family, loc, 1.0).unwrap(), &grid);
                assert!(c >= 0.0 && c.is_finite());
                assert!(c <= prev + 1e-12);
                prev = c;
            }
        }
        let ys: Vec<f64> = normal_vec(&mut stream(3, &[]), 10_000);
        let mean = |p: StableParams| ys.iter().map(|y| crps_quantile(*y, &p, &grid)).sum::<f64>() / ys.len() as f64;
        let truth = mean(StableParams::gaussian(0.0, 1.0).unwrap());
        assert!(truth < mean(StableParams::gaussian(0.5, 1.0).unwrap()));
        assert!(truth < mean(StableParams::gaussian(0.0, 2.0).unwrap()));
    }

    #[test]
    fn grid_validation() {
        assert!(QuantileGrid::new(vec![]).is_err());
        assert!(QuantileGrid::new(vec![0.2, 0.1]).is_err());
        assert!(QuantileGrid::new(vec![0.0, 0.5]).is_err());
        let g = QuantileGrid::default();
        assert_eq!(g.probs().len(), 99);
        assert!(g.weights().iter().all(|w| (w - 0.01).abs() < 1e-12));
        let w = QuantileGrid::new(vec![0.1, 0.5, 0.7]).unwrap().weights().to_vec();
        assert!((w[0] - 0.3).abs() < 1e-12 && (w[1] - 0.3).abs() < 1e-12 && (w[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn winkler_examples() {
        let iv = IntervalForecast::new(1.0, 3.0, 0.75).unwrap();
        assert_eq!(winkler(2.0, &iv), 2.0);
        assert_eq!(winkler(1.0, &iv), winkler(2.9, &iv));
        assert!((winkler(0.0, &iv) - 10.0).abs() < 1e-12);
        assert!((winkler(4.0, &iv) - 10.0).abs() < 1e-12);
        assert_eq!(winkler(5.0, &IntervalForecast::new(5.0, 5.0, 0.5).unwrap()), 0.0);
        assert!(IntervalForecast::new(0.0, 1.0, 1.0).is_err());
        assert!(IntervalForecast::new(2.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn coverage_examples() {
        let iv = |l, u| IntervalForecast::new(l, u, 0.5).unwrap();
        let ivs = [iv(0.0, 1.0), iv(0.0, 1.0), iv(0.0, 1.0), iv(0.0, 1.0)];
        assert_eq!(coverage(&[0.5, 0.2, 1.0, 0.0], &ivs).unwrap(), 1.0);
        assert_eq!(coverage(&[2.0, -1.0, 3.0, 5.0], &ivs).unwrap(), 0.0);
        assert_eq!(coverage(&[0.5, 0.2, 1.0, 7.0], &ivs).unwrap(), 0.75);
        assert!(coverage(&[0.5], &ivs).is_err());
    }

    #[test]
    fn report_csv() {
        let mut buf = Vec::new();
        write_report(&mut buf, &[ReportRow::new("mape", "synthetic", "d/c", 2.5)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "metric,dataset,variant,value\nmape,synthetic,d/c,2.5\n");
    }
}
