//! Time series ingestion, splitting, standardization and windowing.

mod frame;
mod noise;
mod synth;
mod windows;

pub use frame::{format_timestamp, load_csv, parse_timestamp, read_csv, Frame};
pub use noise::{noise_inject, NoiseKind, NoiseSpec};
pub use synth::{synth_generate, SynthProfile};
pub use windows::{calendar_features, make_windows, Segment, WindowSet, CALENDAR_FEATURES};

use std::ops::Range;

use crate::{Error, Result};

/// Mean and population standard deviation of one column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

impl ColumnStats {
    pub fn fit(name: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config(format!("cannot standardize {name}: empty training range")));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::config(format!("cannot standardize {name}: zero spread over the training range")));
        }
        Ok(ColumnStats { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Training-range statistics of the load and every covariate.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub load: ColumnStats,
    pub covariates: Vec<(String, ColumnStats)>,
}

impl Standardizer {
    pub fn fit(frame: &Frame, range: Range<usize>) -> Result<Self> {
        if range.is_empty() || range.end > frame.len() {
            return Err(Error::config(format!("invalid training range {range:?} for {} rows", frame.len())));
        }
        let load = ColumnStats::fit("load", &frame.load[range.clone()])?;
        let covariates = frame
            .covariates
            .iter()
            .map(|(name, v)| Ok((name.clone(), ColumnStats::fit(name, &v[range.clone()])?)))
            .collect::<Result<_>>()?;
        Ok(Standardizer { load, covariates })
    }

    /// Standardized copy of `frame`; covariates must match by name and order.
    pub fn standardize(&self, frame: &Frame) -> Result<Frame> {
        self.check_columns(frame)?;
        let mut out = frame.clone();
        out.load.iter_mut().for_each(|v| *v = self.load.apply(*v));
        for ((_, col), (_, st)) in out.covariates.iter_mut().zip(&self.covariates) {
            col.iter_mut().for_each(|v| *v = st.apply(*v));
        }
        Ok(out)
    }

    pub fn destandardize(&self, frame: &Frame) -> Result<Frame> {
        self.check_columns(frame)?;
        let mut out = frame.clone();
        out.load.iter_mut().for_each(|v| *v = self.load.invert(*v));
        for ((_, col), (_, st)) in out.covariates.iter_mut().zip(&self.covariates) {
            col.iter_mut().for_each(|v| *v = st.invert(*v));
        }
        Ok(out)
    }

    pub fn check_columns(&self, frame: &Frame) -> Result<()> {
        let want: Vec<&str> = self.covariates.iter().map(|(n, _)| n.as_str()).collect();
        let got: Vec<&str> = frame.covariates.iter().map(|(n, _)| n.as_str()).collect();
        if want != got {
            return Err(Error::data(format!("covariate columns {got:?} do not match the model's {want:?}")));
        }
        Ok(())
    }
}

/// Chronological train/validation/test row ranges. Train and validation
/// counts are rounded; the test segment takes the remainder.
pub fn chrono_split(len: usize, ratios: [f64; 3]) -> Result<[Range<usize>; 3]> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let train = (ratios[0] * len as f64).round() as usize;
    let val = ((ratios[1] * len as f64).round() as usize).min(len - train.min(len));
    let test = len.saturating_sub(train + val);
    let out = [0..train, train..train + val, train + val..train + val + test];
    for (name, r) in ["train", "validation", "test"].iter().zip(&out) {
        if r.is_empty() {
            return Err(Error::config(format!("{name} segment is empty for {len} rows and ratios {ratios:?}")));
        }
    }
    Ok(out)
}

/// Windowing and split settings for [`Dataset::prepare`].
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub ratios: [f64; 3],
    /// Chronological prefix of the training segment actually used.
    pub train_fraction: f64,
    pub noise: Option<NoiseSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            input_len: 168,
            horizon: 24,
            train_stride: 1,
            eval_stride: 24,
            ratios: [0.7, 0.1, 0.2],
            train_fraction: 1.0,
            noise: None,
        }
    }
}

/// Standardized windows for the three splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub standardizer: Standardizer,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    /// Indices of corrupted training labels (into the full frame).
    pub corrupted: Vec<usize>,
}

impl Dataset {
    /// Splits, optionally corrupts the raw training labels, fits statistics on
    /// the (used) training range and windows each segment independently.
    pub fn prepare(frame: &Frame, cfg: &DataConfig) -> Result<Self> {
        Self::prepare_with(frame, cfg, None)
    }

    /// As [`Dataset::prepare`], but standardizing with `fitted` when given
    /// instead of statistics of this frame.
    pub fn prepare_with(frame: &Frame, cfg: &DataConfig, fitted: Option<&Standardizer>) -> Result<Self> {
        let [train, val, test] = chrono_split(frame.len(), cfg.ratios)?;
        if !(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0) {
            return Err(Error::config(format!("train fraction {} must lie in (0, 1]", cfg.train_fraction)));
        }
        let used = (cfg.train_fraction * train.len() as f64).round() as usize;
        let train = train.start..train.start + used;
        let mut frame = frame.clone();
        let mut corrupted = Vec::new();
        if let Some(spec) = &cfg.noise {
            let clean = &frame.load[train.clone()];
            let mean = clean.iter().sum::<f64>() / clean.len().max(1) as f64;
            let (noisy, mask) = noise_inject(clean, spec, mean)?;
            frame.load[train.clone()].copy_from_slice(&noisy);
            corrupted = mask.into_iter().map(|i| i + train.start).collect();
        }
        let standardizer = match fitted {
            Some(st) => st.clone(),
            None => Standardizer::fit(&frame, train.clone())?,
        };
        let std_frame = standardizer.standardize(&frame)?;
        let build = |range: Range<usize>, stride: usize, name: &str| -> Result<WindowSet> {
            let seg = Segment::from_frame(&std_frame, range)?;
            WindowSet::new(seg, cfg.input_len, cfg.horizon, stride)
                .map_err(|e| Error::config(format!("{name} segment: {e}")))
        };
        Ok(Dataset {
            train: build(train, cfg.train_stride, "train")?,
            val: build(val, cfg.eval_stride, "validation")?,
            test: build(test, cfg.eval_stride, "test")?,
            standardizer,
            corrupted,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.train.segment.features.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(load: Vec<f64>) -> Frame {
        let ts = (0..load.len()).map(|i| parse_timestamp(&format!("2021-03-01T{:02}:00:00", i)).unwrap()).collect();
        Frame::new(ts, load, vec![]).unwrap()
    }

    #[test]
    fn standardize_small_series() {
        let f = frame(vec![1.0, 2.0, 3.0]);
        let st = Standardizer::fit(&f, 0..3).unwrap();
        let z = st.standardize(&f).unwrap();
        let e = 1.5f64.sqrt();
        for (got, want) in z.load.iter().zip([-e, 0.0, e]) {
            assert!((got - want).abs() < 1e-12);
        }
        let back = st.destandardize(&z).unwrap();
        for (a, b) in back.load.iter().zip(&f.load) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_column_rejected() {
        let f = frame(vec![4.0; 5]);
        assert!(matches!(Standardizer::fit(&f, 0..5), Err(Error::Config(_))));
    }

    #[test]
    fn stats_ignore_rows_outside_training_range() {
        let mut f = frame(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let a = Standardizer::fit(&f, 0..3).unwrap();
        f.load[4] = 1e9;
        assert_eq!(a, Standardizer::fit(&f, 0..3).unwrap());
    }

    #[test]
    fn split_counts() {
        assert_eq!(chrono_split(100, [0.7, 0.1, 0.2]).unwrap(), [0..70, 70..80, 80..100]);
        assert_eq!(chrono_split(10, [0.5, 0.2, 0.3]).unwrap(), [0..5, 5..7, 7..10]);
        assert!(chrono_split(10, [0.5, 0.2, 0.2]).is_err());
        assert!(chrono_split(3, [0.9, 0.1, 0.0]).is_err());
    }
}
