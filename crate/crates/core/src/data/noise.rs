use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::{stream, TAG_CORRUPT};
use crate::{Error, Result};

/// Label corruption laws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    /// `y + 0.2 * mean`
    Constant,
    /// `mean`
    Missing,
    /// `y + N(0, 0.5 * mean)` (variance).
    Gaussian,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] = [NoiseKind::Constant, NoiseKind::Missing, NoiseKind::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Constant => "constant",
            NoiseKind::Missing => "missing",
            NoiseKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown noise kind {s:?} (expected constant, missing or gaussian)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Per-label corruption probability, below 0.5.
    pub rate: f64,
    pub seed: u64,
    /// Read `0.5 * mean` as a standard deviation instead of a variance.
    pub gaussian_as_std: bool,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, rate: f64, seed: u64) -> Self {
        NoiseSpec {
            kind,
            rate,
            seed,
            gaussian_as_std: false,
        }
    }
}

/// Corrupts each label independently with probability `rate`. Returns the
/// new labels and the sorted indices of changed entries.
pub fn noise_inject(labels: &[f64], spec: &NoiseSpec, train_label_mean: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    if !(0.0..0.5).contains(&spec.rate) {
        return Err(Error::config(format!("noise rate {} must lie in [0, 0.5)", spec.rate)));
    }
    let normal = match spec.kind {
        NoiseKind::Gaussian => {
            if !(train_label_mean > 0.0) {
                return Err(Error::config(format!(
                    "gaussian noise needs a positive label mean, got {train_label_mean}"
                )));
            }
            let m = 0.5 * train_label_mean;
            let sd = if spec.gaussian_as_std { m } else { m.sqrt() };
            Some(Normal::new(0.0, sd).map_err(|e| Error::config(e.to_string()))?)
        }
        _ => None,
    };
    let mut rng = stream(spec.seed, &[TAG_CORRUPT, spec.kind as u64]);
    let mut out = labels.to_vec();
    let mut mask = Vec::new();
    for (i, y) in out.iter_mut().enumerate() {
        if !rng.random_bool(spec.rate) {
            continue;
        }
        let new = match spec.kind {
            NoiseKind::Constant => *y + 0.2 * train_label_mean,
            NoiseKind::Missing => train_label_mean,
            NoiseKind::Gaussian => *y + normal.expect("gaussian").sample(&mut rng),
        };
        if new != *y {
            *y = new;
            mask.push(i);
        }
    }
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rate_is_identity() {
        let y = vec![1.0, 2.0, 3.0];
        let (out, mask) = noise_inject(&y, &NoiseSpec::new(NoiseKind::Gaussian, 0.0, 1), 2.0).unwrap();
        assert_eq!(out, y);
        assert!(mask.is_empty());
    }

    #[test]
    fn constant_offset_uses_training_mean() {
        let y = vec![50.0; 200];
        let (out, mask) = noise_inject(&y, &NoiseSpec::new(NoiseKind::Constant, 0.3, 4), 100.0).unwrap();
        assert!(!mask.is_empty());
        for &i in &mask {
            assert_eq!(out[i], 70.0);
        }
        let (out, mask) = noise_inject(&y, &NoiseSpec::new(NoiseKind::Missing, 0.3, 4), 100.0).unwrap();
        assert!(mask.iter().all(|&i| out[i] == 100.0));
    }

    #[test]
    fn corrupted_count_is_binomial() {
        let y: Vec<f64> = (0..10_000).map(|i| 10.0 + (i % 7) as f64).collect();
        let (_, mask) = noise_inject(&y, &NoiseSpec::new(NoiseKind::Constant, 0.1, 9), 13.0).unwrap();
        let bound = 3.0 * (10_000f64 * 0.1 * 0.9).sqrt();
        assert!((mask.len() as f64 - 1000.0).abs() <= bound, "{}", mask.len());
    }

    #[test]
    fn mask_indexes_exactly_the_changes_and_is_reproducible() {
        let y: Vec<f64> = (0..500).map(|i| (i as f64).sin() * 5.0 + 20.0).collect();
        let spec = NoiseSpec::new(NoiseKind::Gaussian, 0.2, 3);
        let (a, mask) = noise_inject(&y, &spec, 20.0).unwrap();
        let (b, mask2) = noise_inject(&y, &spec, 20.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(mask, mask2);
        let changed: Vec<usize> = (0..y.len()).filter(|&i| a[i] != y[i]).collect();
        assert_eq!(changed, mask);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(noise_inject(&[1.0], &NoiseSpec::new(NoiseKind::Constant, 0.5, 0), 1.0).is_err());
        assert!(noise_inject(&[1.0], &NoiseSpec::new(NoiseKind::Gaussian, 0.1, 0), -1.0).is_err());
        assert!(noise_inject(&[1.0], &NoiseSpec::new(NoiseKind::Gaussian, 0.1, 0), 0.0).is_err());
    }
}
