//! Repeated stochastic forecasts, uncertainty separation and intervals.

use std::io::{Read, Write};

use chrono::NaiveDateTime;
use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::checkpoint::TrainedModel;
use crate::data::{format_timestamp, parse_timestamp, WindowSet};
use crate::distributions::{combine_scales, stable_quantile, Family, StableParams};
use crate::metrics::{crps_quantile, QuantileGrid};
use crate::rng::{stream, TAG_INFER};
use crate::{Error, Result};

/// Passes evaluated together in one batched reverse chain.
pub const PASS_CHUNK: usize = 25;

pub const DEFAULT_CANDIDATES: [f64; 4] = [0.1, 0.3, 0.5, 0.7];
pub const REPORTED_COVERAGES: [f64; 3] = [0.25, 0.5, 0.75];

/// Estimator of the spread of sampled locations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpistemicMode {
    /// Central quantile distance `q_(1+c)/2 - q_(1-c)/2`.
    QuantileDistance,
    /// Population standard deviation.
    StdDev,
}

impl std::str::FromStr for EpistemicMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(EpistemicMode::QuantileDistance),
            "std" => Ok(EpistemicMode::StdDev),
            _ => Err(Error::config(format!("unknown epistemic mode {s:?} (expected quantile or std)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    pub samples: usize,
    pub candidates: Vec<f64>,
    /// Chosen quantile-distance coverage; selected on validation data when
    /// absent.
    pub coverage: Option<f64>,
    pub mode: EpistemicMode,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            samples: 100,
            candidates: DEFAULT_CANDIDATES.to_vec(),
            coverage: None,
            mode: EpistemicMode::QuantileDistance,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("sample count must be at least 1"));
        }
        if self.candidates.is_empty() {
            return Err(Error::config("at least one quantile-distance candidate is required"));
        }
        for c in self.candidates.iter().chain(&self.coverage) {
            if !(*c > 0.0 && *c < 1.0) {
                return Err(Error::config(format!("coverage {c} must lie in (0, 1)")));
            }
        }
        Ok(())
    }
}

/// `M` sampled emissions of one window, standardized, `M x H` each.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSamples {
    pub loc: Array2<f64>,
    pub scale: Array2<f64>,
}

impl WindowSamples {
    pub fn passes(&self) -> usize {
        self.loc.nrows()
    }
}

/// Samples for every window of `set`. Pass `m` of window `w` draws only from
/// stream `(seed, TAG_INFER, window_id(w), m)`, so the result is independent of
/// chunking and thread scheduling.
pub fn sample_forecasts(model: &TrainedModel, set: &WindowSet, passes: usize, seed: u64) -> Result<Vec<WindowSamples>> {
    if passes == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    let net = &model.network;
    let p = &model.params[..];
    let h = net.config.horizon;
    let f = net.config.input_dim;
    let stochastic = net.config.variant.diffused();
    let jobs: Vec<(usize, usize)> = (0..set.len())
        .flat_map(|w| {
            let chunks = if stochastic { passes.div_ceil(PASS_CHUNK) } else { 1 };
            (0..chunks).map(move |c| (w, c))
        })
        .collect();
    let results: Vec<(usize, Array2<f32>, Array2<f32>)> = jobs
        .par_iter()
        .map(|&(w, c)| {
            let batch = set.batch(&[w]);
            let h0 = net.encode(p, batch.enc.view(), 1);
            let first = c * PASS_CHUNK;
            let rows = if stochastic { PASS_CHUNK.min(passes - first) } else { 1 };
            let h0 = h0.broadcast((rows, h0.ncols())).expect("one row").to_owned();
            let mut dec = Array2::zeros((h * rows, f));
            for t in 0..h {
                for r in 0..rows {
                    dec.row_mut(t * rows + r).assign(&batch.dec.row(t));
                }
            }
            let mut rngs: Vec<_> =
                (first..first + rows).map(|m| stream(seed, &[TAG_INFER, set.window_id(w), m as u64])).collect();
            let h_star = net.reconstruct(p, h0.view(), &mut rngs);
            let em = net.decode_autoregressive(p, h_star.view(), dec.view());
            (w, em.loc, em.scale)
        })
        .collect();
    let mut out: Vec<WindowSamples> = (0..set.len())
        .map(|_| WindowSamples {
            loc: Array2::zeros((0, h)),
            scale: Array2::zeros((0, h)),
        })
        .collect();
    for (w, loc, scale) in results {
        let s = &mut out[w];
        s.loc.append(Axis(0), loc.mapv(f64::from).view()).expect("matching width");
        s.scale.append(Axis(0), scale.mapv(f64::from).view()).expect("matching width");
    }
    if !stochastic {
        for s in &mut out {
            s.loc = s.loc.broadcast((passes, h)).expect("one row").to_owned();
            s.scale = s.scale.broadcast((passes, h)).expect("one row").to_owned();
        }
    }
    for s in &out {
        if s.loc.iter().chain(s.scale.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sampled forecast".into()));
        }
    }
    Ok(out)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn spread(values: &mut [f64], coverage: f64, mode: EpistemicMode) -> f64 {
    match mode {
        EpistemicMode::QuantileDistance => {
            values.sort_by(f64::total_cmp);
            empirical_quantile(values, (1.0 + coverage) / 2.0) - empirical_quantile(values, (1.0 - coverage) / 2.0)
        }
        EpistemicMode::StdDev => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
        }
    }
}

/// Forecast distribution of one horizon, in load units.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub timestamps: Vec<NaiveDateTime>,
    pub loc: Vec<f64>,
    pub sigma_aleatoric: Vec<f64>,
    pub sigma_epistemic: Vec<f64>,
    pub sigma_bar: Vec<f64>,
    /// `(coverage, lower, upper)` for each reported coverage.
    pub intervals: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

impl ForecastResult {
    pub fn len(&self) -> usize {
        self.loc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loc.is_empty()
    }

    pub fn interval(&self, coverage: f64) -> Option<(&[f64], &[f64])> {
        self.intervals
            .iter()
            .find(|(c, _, _)| (c - coverage).abs() < 1e-12)
            .map(|(_, l, u)| (&l[..], &u[..]))
    }

    /// Predictive law at step `t`.
    pub fn predictive(&self, family: Family, t: usize) -> Result<StableParams> {
        StableParams::new(family, self.loc[t], self.sigma_bar[t].max(f64::MIN_POSITIVE))
    }

    /// Concatenates results along time.
    pub fn concat(parts: &[ForecastResult]) -> ForecastResult {
        let mut out = ForecastResult {
            timestamps: Vec::new(),
            loc: Vec::new(),
            sigma_aleatoric: Vec::new(),
            sigma_epistemic: Vec::new(),
            sigma_bar: Vec::new(),
            intervals: parts
                .first()
                .map(|p| p.intervals.iter().map(|(c, _, _)| (*c, Vec::new(), Vec::new())).collect())
                .unwrap_or_default(),
        };
        for p in parts {
            out.timestamps.extend(&p.timestamps);
            out.loc.extend(&p.loc);
            out.sigma_aleatoric.extend(&p.sigma_aleatoric);
            out.sigma_epistemic.extend(&p.sigma_epistemic);
            out.sigma_bar.extend(&p.sigma_bar);
            for ((_, l, u), (_, pl, pu)) in out.intervals.iter_mut().zip(&p.intervals) {
                l.extend(pl);
                u.extend(pu);
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["timestamp".to_string(), "loc".into(), "sigma_aleatoric".into(), "sigma_epistemic".into(), "sigma_bar".into()];
        for (c, _, _) in &self.intervals {
            let pct = (c * 100.0).round() as u32;
            header.push(format!("lo{pct}"));
            header.push(format!("hi{pct}"));
        }
        out.write_record(&header)?;
        for t in 0..self.len() {
            let mut row = vec![
                format_timestamp(&self.timestamps[t]),
                self.loc[t].to_string(),
                self.sigma_aleatoric[t].to_string(),
                self.sigma_epistemic[t].to_string(),
                self.sigma_bar[t].to_string(),
            ];
            for (_, l, u) in &self.intervals {
                row.push(l[t].to_string());
                row.push(u[t].to_string());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::data(format!("forecast file lacks column {name:?}")))
        };
        let fixed = [col("timestamp")?, col("loc")?, col("sigma_aleatoric")?, col("sigma_epistemic")?, col("sigma_bar")?];
        let mut bands = Vec::new();
        for (i, h) in header.iter().enumerate() {
            if let Some(pct) = h.trim().strip_prefix("lo").and_then(|p| p.parse::<u32>().ok()) {
                let hi = col(&format!("hi{pct}"))?;
                bands.push((pct as f64 / 100.0, i, hi));
            }
        }
        let mut res = ForecastResult {
            timestamps: Vec::new(),
            loc: Vec::new(),
            sigma_aleatoric: Vec::new(),
            sigma_epistemic: Vec::new(),
            sigma_bar: Vec::new(),
            intervals: bands.iter().map(|(c, _, _)| (*c, Vec::new(), Vec::new())).collect(),
        };
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = k + 1;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| Error::data(format!("forecast row {row}: cannot parse column {:?}", &header[i])))
            };
            let ts = rec.get(fixed[0]).unwrap_or("");
            res.timestamps.push(
                parse_timestamp(ts).ok_or_else(|| Error::data(format!("forecast row {row}: cannot parse timestamp {ts:?}")))?,
            );
            res.loc.push(num(fixed[1])?);
            res.sigma_aleatoric.push(num(fixed[2])?);
            res.sigma_epistemic.push(num(fixed[3])?);
            res.sigma_bar.push(num(fixed[4])?);
            for ((_, l, u), (_, li, hi)) in res.intervals.iter_mut().zip(&bands) {
                l.push(num(*li)?);
                u.push(num(*hi)?);
            }
        }
        Ok(res)
    }
}

/// Summarizes the samples of one window and maps them to load units via
/// `y = mean + std * z`.
pub fn aggregate(
    samples: &WindowSamples,
    family: Family,
    coverage: f64,
    mode: EpistemicMode,
    load_mean: f64,
    load_std: f64,
    timestamps: &[NaiveDateTime],
) -> Result<ForecastResult> {
    let m = samples.passes();
    if m == 0 {
        return Err(Error::data("no forecast samples to aggregate"));
    }
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::domain(format!("coverage {coverage} must lie in (0, 1)")));
    }
    let h = samples.loc.ncols();
    crate::error::check_len("forecast timestamps", h, timestamps.len())?;
    let mut res = ForecastResult {
        timestamps: timestamps.to_vec(),
        loc: Vec::with_capacity(h),
        sigma_aleatoric: Vec::with_capacity(h),
        sigma_epistemic: Vec::with_capacity(h),
        sigma_bar: Vec::with_capacity(h),
        intervals: REPORTED_COVERAGES.iter().map(|c| (*c, Vec::new(), Vec::new())).collect(),
    };
    for t in 0..h {
        let mut locs = samples.loc.column(t).to_vec();
        let loc = locs.iter().sum::<f64>() / m as f64;
        let alea = samples.scale.column(t).sum() / m as f64;
        let epi = spread(&mut locs, coverage, mode).max(0.0);
        let bar = combine_scales(family.alpha(), alea, epi)?;
        let (loc, alea, epi, bar) = (load_mean + load_std * loc, load_std * alea, load_std * epi, load_std * bar);
        res.loc.push(loc);
        res.sigma_aleatoric.push(alea);
        res.sigma_epistemic.push(epi);
        res.sigma_bar.push(bar);
        let law = StableParams::new(family, loc, bar.max(f64::MIN_POSITIVE))?;
        for (c, lo, hi) in &mut res.intervals {
            lo.push(stable_quantile((1.0 - *c) / 2.0, &law)?);
            hi.push(stable_quantile((1.0 + *c) / 2.0, &law)?);
        }
    }
    Ok(res)
}

/// Aggregates every window of a split at the given coverage.
pub fn forecast_split(
    model: &TrainedModel,
    set: &WindowSet,
    samples: &[WindowSamples],
    coverage: f64,
    mode: EpistemicMode,
) -> Result<Vec<ForecastResult>> {
    let load = model.standardizer.load;
    samples
        .iter()
        .enumerate()
        .map(|(w, s)| aggregate(s, model.network.family(), coverage, mode, load.mean, load.std, set.target_timestamps(w)))
        .collect()
}

/// Mean CRPS of the aggregated forecasts against `actuals[w][t]`.
pub fn mean_crps(results: &[ForecastResult], actuals: &[Vec<f64>], family: Family) -> Result<f64> {
    crate::error::check_len("actual windows", results.len(), actuals.len())?;
    let grid = QuantileGrid::default();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, ys) in results.iter().zip(actuals) {
        crate::error::check_len("actual horizon", r.len(), ys.len())?;
        for (t, y) in ys.iter().enumerate() {
            sum += crps_quantile(*y, &r.predictive(family, t)?, &grid);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::data("no forecasts to score"));
    }
    Ok(sum / n as f64)
}

/// Candidate with the lowest mean CRPS; ties go to the smaller coverage.
#[allow(clippy::too_many_arguments)]
pub fn select_from_samples(
    samples: &[WindowSamples],
    actuals: &[Vec<f64>],
    family: Family,
    candidates: &[f64],
    mode: EpistemicMode,
    timestamps: &[Vec<NaiveDateTime>],
    load_mean: f64,
    load_std: f64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut scores = Vec::with_capacity(sorted.len());
    let mut best: Option<(f64, f64)> = None;
    for c in sorted {
        let results: Vec<ForecastResult> = samples
            .iter()
            .zip(timestamps)
            .map(|(s, ts)| aggregate(s, family, c, mode, load_mean, load_std, ts))
            .collect::<Result<_>>()?;
        let score = mean_crps(&results, actuals, family)?;
        scores.push((c, score));
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((c, score));
        }
    }
    let (c, _) = best.ok_or_else(|| Error::config("no quantile-distance candidates"))?;
    Ok((c, scores))
}

/// Labels of every window in load units.
pub fn actuals(model: &TrainedModel, set: &WindowSet) -> Vec<Vec<f64>> {
    let load = model.standardizer.load;
    (0..set.len()).map(|w| set.targets(w).iter().map(|v| load.invert(*v as f64)).collect()).collect()
}

/// Picks the coverage minimizing validation CRPS, returning it with the score
/// of every candidate.
pub fn select_quantile_distance(model: &TrainedModel, val: &WindowSet, cfg: &InferenceConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    cfg.validate()?;
    if val.is_empty() {
        return Err(Error::config("validation split has no windows"));
    }
    if cfg.candidates.len() == 1 {
        return Ok((cfg.candidates[0], Vec::new()));
    }
    let samples = sample_forecasts(model, val, cfg.samples, cfg.seed)?;
    let ts: Vec<Vec<NaiveDateTime>> = (0..val.len()).map(|w| val.target_timestamps(w).to_vec()).collect();
    let load = model.standardizer.load;
    select_from_samples(&samples, &actuals(model, val), model.network.family(), &cfg.candidates, cfg.mode, &ts, load.mean, load.std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeDelta};
    use ndarray::array;

    fn hours(n: usize) -> Vec<NaiveDateTime> {
        let t0 = NaiveDate::from_ymd_opt(2022, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n).map(|i| t0 + TimeDelta::hours(i as i64)).collect()
    }

    fn samples(loc: Array2<f64>, scale: f64) -> WindowSamples {
        let s = Array2::from_elem(loc.raw_dim(), scale);
        WindowSamples { loc, scale: s }
    }

    #[test]
    fn quantile_distance_example() {
        let s = samples(array![[0.0], [1.0], [2.0], [3.0], [4.0]], 0.5);
        let r = aggregate(&s, Family::Cauchy, 0.5, EpistemicMode::QuantileDistance, 0.0, 1.0, &hours(1)).unwrap();
        assert_eq!(r.sigma_epistemic, vec![2.0]);
        assert_eq!(r.loc, vec![2.0]);
        assert_eq!(r.sigma_bar, vec![2.5]);
        assert!((empirical_quantile(&[0.0, 10.0], 0.25) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_have_no_epistemic_spread() {
        for mode in [EpistemicMode::QuantileDistance, EpistemicMode::StdDev] {
            let s = samples(Array2::from_elem((7, 2), 1.5), 0.3);
            let r = aggregate(&s, Family::Gaussian, 0.7, mode, 0.0, 1.0, &hours(2)).unwrap();
            assert_eq!(r.sigma_epistemic, vec![0.0, 0.0]);
            assert_eq!(r.sigma_bar, r.sigma_aleatoric);
            let one = samples(array![[1.0, 2.0]], 0.3);
            let r1 = aggregate(&one, Family::Gaussian, 0.7, mode, 0.0, 1.0, &hours(2)).unwrap();
            assert_eq!(r1.sigma_epistemic, vec![0.0, 0.0]);
        }
        let empty = samples(Array2::zeros((0, 2)), 0.3);
        assert!(aggregate(&empty, Family::Cauchy, 0.5, EpistemicMode::QuantileDistance, 0.0, 1.0, &hours(2)).is_err());
    }

    #[test]
    fn std_mode() {
        let s = samples(array![[1.0], [3.0]], 1.0);
        let r = aggregate(&s, Family::Gaussian, 0.5, EpistemicMode::StdDev, 0.0, 1.0, &hours(1)).unwrap();
        assert_eq!(r.sigma_epistemic, vec![1.0]);
        assert!((r.sigma_bar[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn intervals_and_bounds() {
        let s = samples(array![[0.0, 5.0], [1.0, 5.5], [3.0, 4.0], [0.5, 6.0]], 0.4);
        for family in [Family::Cauchy, Family::Gaussian] {
            let r = aggregate(&s, family, 0.5, EpistemicMode::QuantileDistance, 10.0, 2.0, &hours(2)).unwrap();
            for t in 0..2 {
                assert!(r.sigma_bar[t] >= r.sigma_aleatoric[t].max(r.sigma_epistemic[t]));
                let mut prev = 0.0;
                for c in REPORTED_COVERAGES {
                    let (l, u) = r.interval(c).unwrap();
                    assert!(l[t] <= r.loc[t] && r.loc[t] <= u[t]);
                    assert!(u[t] - l[t] > prev);
                    prev = u[t] - l[t];
                }
            }
            let (_, u75) = r.interval(0.75).unwrap();
            let ratio = (u75[0] - r.loc[0]) / r.sigma_bar[0];
            let expect = if family == Family::Cauchy { 2.414 } else { 1.150 };
            assert!((ratio - expect).abs() < 1e-3, "{ratio}");
        }
    }

    #[test]
    fn destandardization_is_exact_affine() {
        let s = samples(array![[0.2, -1.0], [0.4, 0.0], [-0.3, 0.5]], 0.7);
        let z = aggregate(&s, Family::Cauchy, 0.3, EpistemicMode::QuantileDistance, 0.0, 1.0, &hours(2)).unwrap();
        let y = aggregate(&s, Family::Cauchy, 0.3, EpistemicMode::QuantileDistance, 50.0, 4.0, &hours(2)).unwrap();
        for t in 0..2 {
            assert!((y.loc[t] - (50.0 + 4.0 * z.loc[t])).abs() < 1e-12);
            assert!((y.sigma_bar[t] - 4.0 * z.sigma_bar[t]).abs() < 1e-12);
            assert!((y.sigma_epistemic[t] - 4.0 * z.sigma_epistemic[t]).abs() < 1e-12);
            assert!((y.sigma_aleatoric[t] - 4.0 * z.sigma_aleatoric[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_prefers_narrow_when_wide_hurts() {
        // Widely spread locations with tiny aleatoric scale; the outcome sits
        // at the center, so every extra unit of width costs CRPS.
        let s = samples(array![[-3.0], [-1.0], [0.0], [1.0], [3.0]], 0.01);
        let ts = vec![hours(1)];
        let ys = vec![vec![0.0]];
        let (c, scores) =
            select_from_samples(std::slice::from_ref(&s), &ys, Family::Gaussian, &[0.7, 0.1], EpistemicMode::QuantileDistance, &ts, 0.0, 1.0)
                .unwrap();
        assert_eq!(c, 0.1);
        assert!(scores[0].1 < scores[1].1);
        let (single, _) =
            select_from_samples(std::slice::from_ref(&s), &ys, Family::Gaussian, &[0.5], EpistemicMode::QuantileDistance, &ts, 0.0, 1.0).unwrap();
        assert_eq!(single, 0.5);
        // Identical samples make every candidate tie.
        let flat = samples(Array2::from_elem((4, 1), 0.0), 1.0);
        let (tie, _) =
            select_from_samples(&[flat], &ys, Family::Cauchy, &[0.5, 0.3], EpistemicMode::QuantileDistance, &ts, 0.0, 1.0).unwrap();
        assert_eq!(tie, 0.3);
    }

    #[test]
    fn csv_round_trip() {
        let s = samples(array![[0.2, -1.0], [0.4, 0.0]], 0.7);
        let r = aggregate(&s, Family::Cauchy, 0.3, EpistemicMode::QuantileDistance, 3.0, 2.0, &hours(2)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,loc,sigma_aleatoric,sigma_epistemic,sigma_bar,lo25,hi25,lo50,hi50,lo75,hi75\n"));
        let back = ForecastResult::read_csv(&buf[..]).unwrap();
        assert_eq!(back, r);
    }
}
