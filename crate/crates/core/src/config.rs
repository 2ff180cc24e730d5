//! Flat `key = value` run configuration shared by every command.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::{DataConfig, NoiseKind, NoiseSpec, SynthProfile};
use crate::inference::{EpistemicMode, InferenceConfig};
use crate::model::{ModelConfig, Variant};
use crate::training::TrainConfig;
use crate::{Error, Result};

pub const SEED_ENV: &str = "DIFFLOAD_SEED";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// CSV input; the synthetic generator is used when absent.
    pub data: Option<PathBuf>,
    pub profile: String,
    pub days: usize,
    pub out_dir: PathBuf,
    /// Explicit seed; falls back to `DIFFLOAD_SEED`, then 0.
    pub seed: Option<u64>,
    /// Consecutive seeds used by the experiment commands.
    pub seeds: usize,

    pub input_len: usize,
    pub horizon: usize,
    pub train_stride: usize,
    pub eval_stride: usize,
    pub ratios: [f64; 3],
    pub train_fraction: f64,

    pub noise_kind: Option<NoiseKind>,
    pub noise_rate: f64,
    pub gaussian_as_std: bool,

    pub variant: Variant,
    pub hidden: usize,
    pub layers: usize,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lambda: f64,
    pub elbo_to_encoder: bool,

    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,

    pub samples: usize,
    pub candidates: Vec<f64>,
    pub coverage: Option<f64>,
    pub epistemic_mode: EpistemicMode,

    pub fractions: Vec<f64>,
    pub perturb_rates: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DataConfig::default();
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let i = InferenceConfig::default();
        RunConfig {
            data: None,
            profile: "default".into(),
            days: 120,
            out_dir: PathBuf::from("out"),
            seed: None,
            seeds: 1,
            input_len: d.input_len,
            horizon: d.horizon,
            train_stride: d.train_stride,
            eval_stride: d.eval_stride,
            ratios: d.ratios,
            train_fraction: d.train_fraction,
            noise_kind: None,
            noise_rate: 0.0,
            gaussian_as_std: false,
            variant: m.variant,
            hidden: m.hidden,
            layers: m.layers,
            steps: m.steps,
            beta_start: m.beta_start,
            beta_end: m.beta_end,
            lambda: m.lambda,
            elbo_to_encoder: m.elbo_to_encoder,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            patience: t.patience,
            max_epochs: t.max_epochs,
            samples: i.samples,
            candidates: i.candidates,
            coverage: None,
            epistemic_mode: i.mode,
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            perturb_rates: vec![0.1, 0.2],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for key {key:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Every accepted key, in dump order.
    pub const KEYS: [&'static str; 35] = [
        "data",
        "profile",
        "days",
        "out_dir",
        "seed",
        "seeds",
        "input_len",
        "horizon",
        "train_stride",
        "eval_stride",
        "train_ratio",
        "val_ratio",
        "test_ratio",
        "train_fraction",
        "noise_kind",
        "noise_rate",
        "gaussian_as_std",
        "variant",
        "hidden",
        "layers",
        "steps",
        "beta_start",
        "beta_end",
        "lambda",
        "elbo_to_encoder",
        "batch_size",
        "learning_rate",
        "patience",
        "max_epochs",
        "samples",
        "candidates",
        "coverage",
        "epistemic_mode",
        "fractions",
        "perturb_rates",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "profile" => {
                if v != "default" {
                    v.parse::<SynthProfile>()?;
                }
                self.profile = v.into();
            }
            "days" => self.days = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "seeds" => self.seeds = parse(key, v)?,
            "input_len" => self.input_len = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "train_stride" => self.train_stride = parse(key, v)?,
            "eval_stride" => self.eval_stride = parse(key, v)?,
            "train_ratio" => self.ratios[0] = parse(key, v)?,
            "val_ratio" => self.ratios[1] = parse(key, v)?,
            "test_ratio" => self.ratios[2] = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "noise_kind" => self.noise_kind = if v == "none" { None } else { Some(v.parse()?) },
            "noise_rate" => self.noise_rate = parse(key, v)?,
            "gaussian_as_std" => self.gaussian_as_std = parse(key, v)?,
            "variant" => self.variant = v.parse()?,
            "hidden" => self.hidden = parse(key, v)?,
            "layers" => self.layers = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "elbo_to_encoder" => self.elbo_to_encoder = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "max_epochs" => self.max_epochs = parse(key, v)?,
            "samples" => self.samples = parse(key, v)?,
            "candidates" => self.candidates = parse_list(key, v)?,
            "coverage" => self.coverage = if v == "auto" || v.is_empty() { None } else { Some(parse(key, v)?) },
            "epistemic_mode" => self.epistemic_mode = v.parse()?,
            "fractions" => self.fractions = parse_list(key, v)?,
            "perturb_rates" => self.perturb_rates = parse_list(key, v)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("config line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Explicit seed, else `DIFFLOAD_SEED`, else 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    /// Effective configuration in the file format; re-reading it yields an
    /// equal config.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("data", self.data.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        kv("profile", self.profile.clone());
        kv("days", self.days.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("seed", self.seed.map(|s| s.to_string()).unwrap_or_default());
        kv("seeds", self.seeds.to_string());
        kv("input_len", self.input_len.to_string());
        kv("horizon", self.horizon.to_string());
        kv("train_stride", self.train_stride.to_string());
        kv("eval_stride", self.eval_stride.to_string());
        kv("train_ratio", self.ratios[0].to_string());
        kv("val_ratio", self.ratios[1].to_string());
        kv("test_ratio", self.ratios[2].to_string());
        kv("train_fraction", self.train_fraction.to_string());
        kv("noise_kind", self.noise_kind.map_or("none", |k| k.name()).to_string());
        kv("noise_rate", self.noise_rate.to_string());
        kv("gaussian_as_std", self.gaussian_as_std.to_string());
        kv("variant", self.variant.to_string());
        kv("hidden", self.hidden.to_string());
        kv("layers", self.layers.to_string());
        kv("steps", self.steps.to_string());
        kv("beta_start", self.beta_start.to_string());
        kv("beta_end", self.beta_end.to_string());
        kv("lambda", self.lambda.to_string());
        kv("elbo_to_encoder", self.elbo_to_encoder.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("patience", self.patience.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("samples", self.samples.to_string());
        kv("candidates", list_text(&self.candidates));
        kv("coverage", self.coverage.map_or("auto".into(), |c| c.to_string()));
        kv(
            "epistemic_mode",
            match self.epistemic_mode {
                EpistemicMode::QuantileDistance => "quantile",
                EpistemicMode::StdDev => "std",
            }
            .into(),
        );
        kv("fractions", list_text(&self.fractions));
        kv("perturb_rates", list_text(&self.perturb_rates));
        s
    }

    pub fn synth_profile(&self) -> Result<SynthProfile> {
        if self.profile == "default" {
            Ok(SynthProfile::default())
        } else {
            self.profile.parse()
        }
    }

    pub fn noise(&self, seed: u64) -> Option<NoiseSpec> {
        self.noise_kind.filter(|_| self.noise_rate > 0.0).map(|kind| NoiseSpec {
            gaussian_as_std: self.gaussian_as_std,
            ..NoiseSpec::new(kind, self.noise_rate, seed)
        })
    }

    pub fn data_config(&self, seed: u64) -> DataConfig {
        DataConfig {
            input_len: self.input_len,
            horizon: self.horizon,
            train_stride: self.train_stride,
            eval_stride: self.eval_stride,
            ratios: self.ratios,
            train_fraction: self.train_fraction,
            noise: self.noise(seed),
        }
    }

    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            input_dim,
            horizon: self.horizon,
            hidden: self.hidden,
            layers: self.layers,
            steps: self.steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            lambda: self.lambda,
            elbo_to_encoder: self.elbo_to_encoder,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            patience: self.patience,
            max_epochs: self.max_epochs,
            seed,
        }
    }

    pub fn inference_config(&self, seed: u64) -> InferenceConfig {
        InferenceConfig {
            samples: self.samples,
            candidates: self.candidates.clone(),
            coverage: self.coverage,
            mode: self.epistemic_mode,
            seed,
        }
    }

    /// Cross-field checks not covered by the per-module validators.
    pub fn validate(&self) -> Result<()> {
        if self.seeds == 0 {
            return Err(Error::config("seeds must be at least 1"));
        }
        for (k, v) in [("input_len", self.input_len), ("horizon", self.horizon), ("train_stride", self.train_stride), ("eval_stride", self.eval_stride)] {
            if v == 0 {
                return Err(Error::config(format!("{k} must be positive")));
            }
        }
        self.train_config(0).validate()?;
        self.inference_config(0).validate()?;
        self.model_config(1).validate()?;
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("fractions must be ascending within (0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("variant = o/o\nhidden=32 # smaller\n\ncandidates = 0.2, 0.4\ncoverage = 0.3\nnoise_kind = missing\nnoise_rate = 0.1\nseed = 7\n")
            .unwrap();
        assert_eq!(c.variant, Variant::OO);
        assert_eq!(c.hidden, 32);
        assert_eq!(c.candidates, vec![0.2, 0.4]);
        let back = RunConfig::from_text(&c.dump()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::from_text(&RunConfig::default().dump()).unwrap(), RunConfig::default());
        assert_eq!(c.dump().lines().count(), RunConfig::KEYS.len());
        let dumped = c.dump();
        let keys: Vec<&str> = dumped.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, RunConfig::KEYS);
    }

    #[test]
    fn bad_keys_are_named() {
        let err = RunConfig::from_text("hiden = 3").unwrap_err().to_string();
        assert!(err.contains("hiden"));
        assert!(RunConfig::from_text("hidden = many").unwrap_err().to_string().contains("hidden"));
        assert!(RunConfig::from_text("just words").is_err());
        for k in RunConfig::KEYS {
            if let Err(e) = RunConfig::default().set(k, "?") {
                assert!(!e.to_string().contains("unknown config key"), "{k}");
            }
        }
    }

    #[test]
    fn explicit_seed_wins() {
        let c = RunConfig {
            seed: Some(5),
            ..RunConfig::default()
        };
        assert_eq!(c.resolved_seed().unwrap(), 5);
    }

    #[test]
    fn noise_only_with_positive_rate() {
        let mut c = RunConfig::default();
        c.set("noise_kind", "constant").unwrap();
        assert!(c.noise(1).is_none());
        c.set("noise_rate", "0.2").unwrap();
        assert_eq!(c.noise(1).unwrap().rate, 0.2);
    }
}
