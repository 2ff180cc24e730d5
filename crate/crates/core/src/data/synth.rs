use std::f64::consts::PI;
use std::str::FromStr;

use chrono::{NaiveDate, TimeDelta};
use rand_distr::{Distribution, StandardNormal};

use super::Frame;
use crate::rng::{stream, TAG_SYNTH};
use crate::{Error, Result};

/// Synthetic hourly load: base + daily and weekly sinusoids + a temperature
/// response + Gaussian observation noise, optionally scaled down over the
/// final part of the series.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthProfile {
    pub base: f64,
    pub daily_amplitude: f64,
    pub weekly_amplitude: f64,
    /// Emit a `temperature` covariate and add `temperature_effect * (T - 18)`.
    pub temperature: bool,
    pub temperature_effect: f64,
    pub noise_std: f64,
    /// Multiplier applied to the last `shift_fraction` of the series.
    pub shift_factor: f64,
    pub shift_fraction: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            base: 100.0,
            daily_amplitude: 20.0,
            weekly_amplitude: 8.0,
            temperature: true,
            temperature_effect: 1.5,
            noise_std: 3.0,
            shift_factor: 1.0,
            shift_fraction: 0.3,
        }
    }
}

impl SynthProfile {
    pub fn stationary() -> Self {
        Self::default()
    }

    pub fn level_shift() -> Self {
        SynthProfile {
            shift_factor: 0.8,
            ..Self::default()
        }
    }
}

impl FromStr for SynthProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stationary" => Ok(Self::stationary()),
            "level_shift" | "level-shift" => Ok(Self::level_shift()),
            _ => Err(Error::config(format!("unknown synthetic profile {s:?} (expected stationary or level_shift)"))),
        }
    }
}

pub fn synth_generate(days: usize, profile: &SynthProfile, seed: u64) -> Result<Frame> {
    if days < 14 {
        return Err(Error::config(format!("synthetic series needs at least 14 days, got {days}")));
    }
    let n = days * 24;
    let start = NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time");
    let timestamps = (0..n).map(|i| start + TimeDelta::hours(i as i64)).collect();
    let mut temp_rng = stream(seed, &[TAG_SYNTH, 1]);
    let mut obs_rng = stream(seed, &[TAG_SYNTH, 2]);

    let mut ar = 0.0;
    let mut temperature = Vec::with_capacity(n);
    let mut load = Vec::with_capacity(n);
    let shift_start = n - (profile.shift_fraction * n as f64).round() as usize;
    for i in 0..n {
        let t = i as f64;
        let daily = profile.daily_amplitude
            * (0.7 * (2.0 * PI * (t - 8.0) / 24.0).sin() + 0.3 * (4.0 * PI * (t - 2.0) / 24.0).sin());
        let weekly = profile.weekly_amplitude * (2.0 * PI * t / 168.0).cos();
        let mut y = profile.base + daily + weekly;
        if profile.temperature {
            let e: f64 = StandardNormal.sample(&mut temp_rng);
            ar = 0.9 * ar + 0.8 * e;
            let temp = 18.0 + 6.0 * (2.0 * PI * (t - 9.0) / 24.0).sin() + 4.0 * (2.0 * PI * t / (24.0 * 30.0)).sin() + ar;
            temperature.push(temp);
            y += profile.temperature_effect * (temp - 18.0);
        }
        if profile.noise_std > 0.0 {
            let e: f64 = StandardNormal.sample(&mut obs_rng);
            y += profile.noise_std * e;
        }
        if i >= shift_start {
            y *= profile.shift_factor;
        }
        load.push(y);
    }
    let covariates = if profile.temperature {
        vec![("temperature".to_string(), temperature)]
    } else {
        vec![]
    };
    Frame::new(timestamps, load, covariates)
}
