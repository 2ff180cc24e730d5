//! Train-and-score pipelines behind the command-line tool.

use std::io::Write;

use crate::checkpoint::TrainedModel;
use crate::config::RunConfig;
use crate::data::{load_csv, synth_generate, Dataset, Frame, NoiseKind, WindowSet};
use crate::distributions::Family;
use crate::inference::{actuals, forecast_split, sample_forecasts, select_quantile_distance, ForecastResult, REPORTED_COVERAGES};
use crate::metrics::{coverage, crps_quantile, mae, mape, winkler, IntervalForecast, QuantileGrid, ReportRow};
use crate::model::{Network, Variant};
use crate::training::{train, TrainReport};
use crate::{Error, Result};

/// Input series for one seed: the CSV file when configured, otherwise a
/// synthetic realization drawn with that seed.
pub fn load_frame(cfg: &RunConfig, seed: u64) -> Result<Frame> {
    match &cfg.data {
        Some(path) => load_csv(path),
        None => synth_generate(cfg.days, &cfg.synth_profile()?, seed),
    }
}

/// Name used in report rows.
pub fn dataset_name(cfg: &RunConfig) -> String {
    match &cfg.data {
        Some(p) => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "data".into()),
        None => format!("synthetic-{}", cfg.profile),
    }
}

pub fn train_model(frame: &Frame, cfg: &RunConfig, seed: u64) -> Result<(TrainedModel, TrainReport, Dataset)> {
    let ds = Dataset::prepare(frame, &cfg.data_config(seed))?;
    let net = Network::new(cfg.model_config(ds.input_dim()))?;
    let (params, report) = train(&net, &ds.train, &ds.val, &cfg.train_config(seed), |_, _, _| {})?;
    let model = TrainedModel::new(net, params, ds.standardizer.clone(), cfg.input_len)?;
    Ok((model, report, ds))
}

/// Point, distributional and interval scores of one forecast.
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub mape: f64,
    pub mae: f64,
    pub crps: f64,
    /// `(coverage, mean Winkler score, empirical coverage)`.
    pub intervals: Vec<(f64, f64, f64)>,
}

impl Scores {
    pub fn winkler(&self, c: f64) -> Option<f64> {
        self.intervals.iter().find(|(k, _, _)| (k - c).abs() < 1e-12).map(|(_, w, _)| *w)
    }

    pub fn rows(&self, dataset: &str, variant: &str) -> Vec<ReportRow> {
        let mut rows = vec![
            ReportRow::new("mape", dataset, variant, self.mape),
            ReportRow::new("mae", dataset, variant, self.mae),
            ReportRow::new("crps", dataset, variant, self.crps),
        ];
        for (c, w, cov) in &self.intervals {
            let pct = (c * 100.0).round() as u32;
            rows.push(ReportRow::new(format!("winkler{pct}"), dataset, variant, *w));
            rows.push(ReportRow::new(format!("coverage{pct}"), dataset, variant, *cov));
        }
        rows
    }
}

pub fn score(forecast: &ForecastResult, y: &[f64], family: Family) -> Result<Scores> {
    crate::error::check_len("actual values", forecast.len(), y.len())?;
    if y.is_empty() {
        return Err(Error::data("nothing to score"));
    }
    let grid = QuantileGrid::default();
    let mut crps = 0.0;
    for (t, v) in y.iter().enumerate() {
        crps += crps_quantile(*v, &forecast.predictive(family, t)?, &grid);
    }
    let mut intervals = Vec::new();
    for (c, lo, hi) in &forecast.intervals {
        let ivs: Vec<IntervalForecast> =
            lo.iter().zip(hi).map(|(l, u)| IntervalForecast::new(*l, *u, *c)).collect::<Result<_>>()?;
        let w = y.iter().zip(&ivs).map(|(v, iv)| winkler(*v, iv)).sum::<f64>() / y.len() as f64;
        intervals.push((*c, w, coverage(y, &ivs)?));
    }
    Ok(Scores {
        mape: mape(y, &forecast.loc)?,
        mae: mae(y, &forecast.loc)?,
        crps: crps / y.len() as f64,
        intervals,
    })
}

/// A trained model with its test-split forecast.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub model: TrainedModel,
    pub report: TrainReport,
    pub coverage: f64,
    pub coverage_scores: Vec<(f64, f64)>,
    pub forecast: ForecastResult,
    pub actuals: Vec<f64>,
    pub scores: Scores,
    /// MAPE of the lag-24 seasonal-naive forecast on the same steps.
    pub naive_mape: f64,
}

impl RunOutcome {
    pub fn mean_sigma_epistemic(&self) -> f64 {
        self.forecast.sigma_epistemic.iter().sum::<f64>() / self.forecast.len() as f64
    }
}

/// Uses the configured coverage, or selects one on the validation split.
pub fn choose_coverage(model: &TrainedModel, ds: &Dataset, cfg: &RunConfig, seed: u64) -> Result<(f64, Vec<(f64, f64)>)> {
    match cfg.coverage {
        Some(c) => Ok((c, Vec::new())),
        None => select_quantile_distance(model, &ds.val, &cfg.inference_config(seed)),
    }
}

/// Test-split forecast of every window, concatenated.
pub fn forecast_test(model: &TrainedModel, ds: &Dataset, cfg: &RunConfig, coverage: f64, seed: u64) -> Result<ForecastResult> {
    let samples = sample_forecasts(model, &ds.test, cfg.samples, seed)?;
    let parts = forecast_split(model, &ds.test, &samples, coverage, cfg.epistemic_mode)?;
    Ok(ForecastResult::concat(&parts))
}

pub fn run_single(frame: &Frame, cfg: &RunConfig, seed: u64) -> Result<RunOutcome> {
    let (model, report, ds) = train_model(frame, cfg, seed)?;
    let (cov, coverage_scores) = choose_coverage(&model, &ds, cfg, seed)?;
    let forecast = forecast_test(&model, &ds, cfg, cov, seed)?;
    let y: Vec<f64> = actuals(&model, &ds.test).concat();
    let scores = score(&forecast, &y, model.network.family())?;
    let naive_mape = mape(&y, &seasonal_naive(&model, &ds.test, SEASONAL_LAG)?)?;
    Ok(RunOutcome {
        model,
        report,
        coverage: cov,
        coverage_scores,
        forecast,
        actuals: y,
        scores,
        naive_mape,
    })
}

pub const SEASONAL_LAG: usize = 24;

/// Each target step forecast by the observed load `lag` steps earlier,
/// concatenated over windows.
pub fn seasonal_naive(model: &TrainedModel, set: &WindowSet, lag: usize) -> Result<Vec<f64>> {
    if lag == 0 || lag > set.input_len {
        return Err(Error::config(format!("seasonal lag {lag} must lie in 1..={}", set.input_len)));
    }
    let load = model.standardizer.load;
    Ok((0..set.len())
        .flat_map(|w| set.target_range(w).map(|i| load.invert(set.segment.features[[i - lag, 0]] as f64)))
        .collect())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn seeds(cfg: &RunConfig) -> Result<Vec<u64>> {
    let s = cfg.resolved_seed()?;
    Ok((0..cfg.seeds as u64).map(|k| s.wrapping_add(k)).collect())
}

/// Medians over seeds of every score, per variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub per_seed: Vec<Scores>,
}

impl AblationRow {
    pub fn median_of(&self, f: impl Fn(&Scores) -> f64) -> f64 {
        median(&self.per_seed.iter().map(f).collect::<Vec<_>>())
    }
}

pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    let seeds = seeds(cfg)?;
    let frames: Vec<Frame> = seeds.iter().map(|&s| load_frame(cfg, s)).collect::<Result<_>>()?;
    Variant::ALL
        .into_iter()
        .map(|variant| {
            let run_cfg = RunConfig {
                variant,
                ..cfg.clone()
            };
            let per_seed = seeds
                .iter()
                .zip(&frames)
                .map(|(&s, f)| run_single(f, &run_cfg, s).map(|o| o.scores))
                .collect::<Result<_>>()?;
            Ok(AblationRow { variant, per_seed })
        })
        .collect()
}

pub fn write_ablation<W: Write>(w: W, rows: &[AblationRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["variant".to_string(), "family".into(), "seeds".into(), "mape".into(), "mae".into(), "crps".into()];
    for c in REPORTED_COVERAGES {
        header.push(format!("winkler{}", (c * 100.0).round()));
    }
    for c in REPORTED_COVERAGES {
        header.push(format!("coverage{}", (c * 100.0).round()));
    }
    out.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.variant.to_string(),
            r.variant.family().name().to_string(),
            r.per_seed.len().to_string(),
            r.median_of(|s| s.mape).to_string(),
            r.median_of(|s| s.mae).to_string(),
            r.median_of(|s| s.crps).to_string(),
        ];
        for k in 0..REPORTED_COVERAGES.len() {
            rec.push(r.median_of(|s| s.intervals[k].1).to_string());
        }
        for k in 0..REPORTED_COVERAGES.len() {
            rec.push(r.median_of(|s| s.intervals[k].2).to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// One cell of the robustness study; `kind` is `None` for the clean
/// baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbRow {
    pub kind: Option<NoiseKind>,
    pub rate: f64,
    pub mape: f64,
    pub winkler75: f64,
}

impl PerturbRow {
    /// Relative change against the baseline.
    pub fn degradation(&self, base: &PerturbRow) -> (f64, f64) {
        ((self.mape - base.mape) / base.mape, (self.winkler75 - base.winkler75) / base.winkler75)
    }
}

/// Clean baseline followed by every noise kind at every configured rate,
/// all scored on the clean test split. Values are medians over seeds.
pub fn perturb(cfg: &RunConfig) -> Result<Vec<PerturbRow>> {
    let seeds = seeds(cfg)?;
    let frames: Vec<Frame> = seeds.iter().map(|&s| load_frame(cfg, s)).collect::<Result<_>>()?;
    let mut cells = vec![(None, 0.0)];
    for kind in NoiseKind::ALL {
        for &rate in &cfg.perturb_rates {
            cells.push((Some(kind), rate));
        }
    }
    cells
        .into_iter()
        .map(|(kind, rate)| {
            let run_cfg = RunConfig {
                noise_kind: kind,
                noise_rate: rate,
                ..cfg.clone()
            };
            let scores: Vec<Scores> = seeds
                .iter()
                .zip(&frames)
                .map(|(&s, f)| run_single(f, &run_cfg, s).map(|o| o.scores))
                .collect::<Result<_>>()?;
            Ok(PerturbRow {
                kind,
                rate,
                mape: median(&scores.iter().map(|s| s.mape).collect::<Vec<_>>()),
                winkler75: median(&scores.iter().map(|s| s.winkler(0.75).unwrap_or(f64::NAN)).collect::<Vec<_>>()),
            })
        })
        .collect()
}

pub fn write_perturb<W: Write>(w: W, rows: &[PerturbRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["noise", "rate", "mape", "winkler75", "mape_degradation", "winkler75_degradation"])?;
    let base = rows.first().ok_or_else(|| Error::data("no perturbation cells"))?;
    for r in rows {
        let (dm, dw) = r.degradation(base);
        out.write_record([
            r.kind.map_or("clean", |k| k.name()).to_string(),
            r.rate.to_string(),
            r.mape.to_string(),
            r.winkler75.to_string(),
            dm.to_string(),
            dw.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean epistemic scale on the test split per training fraction, one curve
/// per seed.
#[derive(Clone, Debug, PartialEq)]
pub struct EpistemicCurve {
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `values[s][f]`.
    pub values: Vec<Vec<f64>>,
}

impl EpistemicCurve {
    pub fn median_curve(&self) -> Vec<f64> {
        (0..self.fractions.len())
            .map(|f| median(&self.values.iter().map(|v| v[f]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["fraction", "seed", "mean_sigma_epistemic"])?;
        for (s, vals) in self.seeds.iter().zip(&self.values) {
            for (f, v) in self.fractions.iter().zip(vals) {
                out.write_record([f.to_string(), s.to_string(), v.to_string()])?;
            }
        }
        for (f, v) in self.fractions.iter().zip(self.median_curve()) {
            out.write_record([f.to_string(), "median".into(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains one model per chronological prefix of the training segment. The
/// validation and test splits stay fixed.
pub fn epistemic_curve(cfg: &RunConfig) -> Result<EpistemicCurve> {
    if cfg.fractions.is_empty() {
        return Err(Error::config("no training fractions given"));
    }
    let seeds = seeds(cfg)?;
    let mut values = Vec::new();
    for &seed in &seeds {
        let frame = load_frame(cfg, seed)?;
        let mut curve = Vec::new();
        for &f in &cfg.fractions {
            let run_cfg = RunConfig {
                train_fraction: f,
                ..cfg.clone()
            };
            let (model, _, ds) = train_model(&frame, &run_cfg, seed)?;
            let (cov, _) = choose_coverage(&model, &ds, &run_cfg, seed)?;
            let fc = forecast_test(&model, &ds, &run_cfg, cov, seed)?;
            curve.push(fc.sigma_epistemic.iter().sum::<f64>() / fc.len() as f64);
        }
        values.push(curve);
    }
    Ok(EpistemicCurve {
        fractions: cfg.fractions.clone(),
        seeds,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeDelta};

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn perfect_forecast_scores() {
        let t0 = NaiveDate::from_ymd_opt(2022, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let y = vec![10.0, 12.0];
        let f = ForecastResult {
            timestamps: vec![t0, t0 + TimeDelta::hours(1)],
            loc: y.clone(),
            sigma_aleatoric: vec![1.0; 2],
            sigma_epistemic: vec![0.0; 2],
            sigma_bar: vec![1.0; 2],
            intervals: REPORTED_COVERAGES.iter().map(|c| (*c, vec![9.0, 11.0], vec![11.0, 13.0])).collect(),
        };
        let s = score(&f, &y, Family::Cauchy).unwrap();
        assert_eq!(s.mape, 0.0);
        assert_eq!(s.mae, 0.0);
        assert_eq!(s.winkler(0.75), Some(2.0));
        let rows = s.rows("d", "d/c");
        for m in ["winkler25", "winkler50", "winkler75", "coverage75", "crps"] {
            assert!(rows.iter().any(|r| r.metric == m), "{m}");
        }
        assert!(score(&f, &y[..1], Family::Cauchy).is_err());
    }

    #[test]
    fn degradation_is_relative() {
        let base = PerturbRow {
            kind: None,
            rate: 0.0,
            mape: 2.0,
            winkler75: 10.0,
        };
        let noisy = PerturbRow {
            kind: Some(NoiseKind::Constant),
            rate: 0.2,
            mape: 2.2,
            winkler75: 15.0,
        };
        let (dm, dw) = noisy.degradation(&base);
        assert!((dm - 0.1).abs() < 1e-12 && (dw - 0.5).abs() < 1e-12);
        assert_eq!(base.degradation(&base), (0.0, 0.0));
    }
}
