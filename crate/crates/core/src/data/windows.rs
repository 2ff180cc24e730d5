use std::f64::consts::PI;
use std::ops::Range;

use chrono::{Datelike, NaiveDateTime, Timelike};
use ndarray::Array2;

use super::Frame;
use crate::model::Batch;
use crate::{Error, Result};

pub const CALENDAR_FEATURES: usize = 5;

/// Hour-of-day and day-of-week sine/cosine pairs and a weekend flag.
pub fn calendar_features(t: &NaiveDateTime) -> [f64; CALENDAR_FEATURES] {
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0;
    let dow = t.weekday().num_days_from_monday() as f64;
    let weekend = if dow >= 5.0 { 1.0 } else { 0.0 };
    [
        (2.0 * PI * hour / 24.0).sin(),
        (2.0 * PI * hour / 24.0).cos(),
        (2.0 * PI * dow / 7.0).sin(),
        (2.0 * PI * dow / 7.0).cos(),
        weekend,
    ]
}

/// Start indices of all windows `[s, s+input_len) -> [s+input_len, s+input_len+horizon)`.
pub fn make_windows(len: usize, input_len: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("input length, horizon and stride must be positive"));
    }
    if len < input_len + horizon {
        return Err(Error::data(format!(
            "series of {len} rows is shorter than input length {input_len} plus horizon {horizon}"
        )));
    }
    Ok((0..=len - input_len - horizon).step_by(stride).collect())
}

/// Contiguous standardized rows with their model features.
#[derive(Clone, Debug)]
pub struct Segment {
    pub timestamps: Vec<NaiveDateTime>,
    /// `T x F`: standardized load, standardized covariates, calendar.
    pub features: Array2<f32>,
    /// Row of the first entry in the source frame.
    pub offset: usize,
}

impl Segment {
    pub fn from_frame(standardized: &Frame, range: Range<usize>) -> Result<Self> {
        if range.end > standardized.len() {
            return Err(Error::data(format!("segment {range:?} exceeds {} rows", standardized.len())));
        }
        let f = 1 + standardized.covariates.len() + CALENDAR_FEATURES;
        let mut features = Array2::zeros((range.len(), f));
        for (r, i) in range.clone().enumerate() {
            let mut row = features.row_mut(r);
            row[0] = standardized.load[i] as f32;
            for (k, (_, c)) in standardized.covariates.iter().enumerate() {
                row[1 + k] = c[i] as f32;
            }
            let cal = calendar_features(&standardized.timestamps[i]);
            for (k, v) in cal.iter().enumerate() {
                row[1 + standardized.covariates.len() + k] = *v as f32;
            }
        }
        Ok(Segment {
            timestamps: standardized.timestamps[range.clone()].to_vec(),
            features,
            offset: range.start,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

/// Windows over one segment; none crosses the segment's boundaries.
#[derive(Clone, Debug)]
pub struct WindowSet {
    pub segment: Segment,
    pub starts: Vec<usize>,
    pub input_len: usize,
    pub horizon: usize,
}

impl WindowSet {
    pub fn new(segment: Segment, input_len: usize, horizon: usize, stride: usize) -> Result<Self> {
        let starts = make_windows(segment.len(), input_len, horizon, stride)?;
        Ok(WindowSet {
            segment,
            starts,
            input_len,
            horizon,
        })
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Stable identifier of window `w`: its first target row in the source
    /// frame. Keys the random streams.
    pub fn window_id(&self, w: usize) -> u64 {
        (self.segment.offset + self.starts[w] + self.input_len) as u64
    }

    pub fn target_range(&self, w: usize) -> Range<usize> {
        let s = self.starts[w] + self.input_len;
        s..s + self.horizon
    }

    pub fn target_timestamps(&self, w: usize) -> &[NaiveDateTime] {
        &self.segment.timestamps[self.target_range(w)]
    }

    /// Standardized labels of window `w`.
    pub fn targets(&self, w: usize) -> Vec<f32> {
        self.target_range(w).map(|i| self.segment.features[[i, 0]]).collect()
    }

    /// Time-major batch of the given windows. Decoder step `t` sees the
    /// features of its target row with column 0 replaced by the previous
    /// load value.
    pub fn batch(&self, windows: &[usize]) -> Batch<f32> {
        let b = windows.len();
        let feats = &self.segment.features;
        let f = feats.ncols();
        let (l, h) = (self.input_len, self.horizon);
        let mut enc = Array2::zeros((l * b, f));
        let mut dec = Array2::zeros((h * b, f));
        let mut target = Array2::zeros((b, h));
        for (k, &w) in windows.iter().enumerate() {
            let s = self.starts[w];
            for t in 0..l {
                enc.row_mut(t * b + k).assign(&feats.row(s + t));
            }
            for t in 0..h {
                let i = s + l + t;
                let mut row = dec.row_mut(t * b + k);
                row.assign(&feats.row(i));
                row[0] = feats[[i - 1, 0]];
                target[[k, t]] = feats[[i, 0]];
            }
        }
        Batch { enc, dec, target }
    }
}
