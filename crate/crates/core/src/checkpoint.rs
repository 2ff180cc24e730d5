//! Trained model bundle and its on-disk format.
//!
//! ```text
//! DIFFLOAD-CKPT v1 digest=<first 16 hex digits of sha256(config line)>
//! config variant=d/c input_dim=7 ...
//! norm <mean> <std> load
//! norm <mean> <std> <covariate name>
//! param <name> <rows>x<cols> f32 <byte offset>
//! data <byte count>
//! <raw little-endian f32, row-major>
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{ColumnStats, Standardizer};
use crate::model::{ModelConfig, Network};
use crate::{Error, Result};

const MAGIC: &str = "DIFFLOAD-CKPT";
const VERSION: &str = "v1";

/// Network, parameters and the preprocessing it was trained with.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub network: Network,
    pub params: Vec<f32>,
    pub standardizer: Standardizer,
    pub input_len: usize,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn config_line(cfg: &ModelConfig, input_len: usize) -> String {
    format!(
        "config variant={} input_dim={} horizon={} hidden={} layers={} steps={} beta_start={:?} beta_end={:?} lambda={:?} elbo_to_encoder={} input_len={}",
        cfg.variant,
        cfg.input_dim,
        cfg.horizon,
        cfg.hidden,
        cfg.layers,
        cfg.steps,
        cfg.beta_start,
        cfg.beta_end,
        cfg.lambda,
        cfg.elbo_to_encoder,
        input_len
    )
}

fn digest(line: &str) -> String {
    Sha256::digest(line.as_bytes())[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_config(line: &str) -> Result<(ModelConfig, usize)> {
    let body = line.strip_prefix("config ").ok_or_else(|| bad("missing config line"))?;
    let mut cfg = ModelConfig::default();
    let mut input_len = None;
    for kv in body.split(' ') {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("malformed config entry {kv:?}")))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("config {k}: not an integer: {v:?}")));
        let real = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("config {k}: not a number: {v:?}")));
        match k {
            "variant" => cfg.variant = v.parse()?,
            "input_dim" => cfg.input_dim = num(v)?,
            "horizon" => cfg.horizon = num(v)?,
            "hidden" => cfg.hidden = num(v)?,
            "layers" => cfg.layers = num(v)?,
            "steps" => cfg.steps = num(v)?,
            "beta_start" => cfg.beta_start = real(v)?,
            "beta_end" => cfg.beta_end = real(v)?,
            "lambda" => cfg.lambda = real(v)?,
            "elbo_to_encoder" => cfg.elbo_to_encoder = v.parse().map_err(|_| bad(format!("config {k}: {v:?}")))?,
            "input_len" => input_len = Some(num(v)?),
            _ => return Err(bad(format!("unknown config key {k:?}"))),
        }
    }
    Ok((cfg, input_len.ok_or_else(|| bad("config line lacks input_len"))?))
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl TrainedModel {
    pub fn new(network: Network, params: Vec<f32>, standardizer: Standardizer, input_len: usize) -> Result<Self> {
        crate::error::check_len("parameter vector", network.count_parameters(), params.len())?;
        let covs = network.config.input_dim.checked_sub(1 + crate::data::CALENDAR_FEATURES);
        if covs != Some(standardizer.covariates.len()) {
            return Err(Error::config(format!(
                "input_dim {} does not match {} covariates plus load and calendar features",
                network.config.input_dim,
                standardizer.covariates.len()
            )));
        }
        Ok(TrainedModel {
            network,
            params,
            standardizer,
            input_len,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let cfg_line = config_line(&self.network.config, self.input_len);
        writeln!(w, "{MAGIC} {VERSION} digest={}", digest(&cfg_line))?;
        writeln!(w, "{cfg_line}")?;
        let norm = std::iter::once(("load", &self.standardizer.load))
            .chain(self.standardizer.covariates.iter().map(|(n, s)| (n.as_str(), s)));
        for (name, s) in norm {
            if name.contains('\n') {
                return Err(bad(format!("column name {name:?} contains a newline")));
            }
            writeln!(w, "norm {:?} {:?} {name}", s.mean, s.std)?;
        }
        for e in self.network.layout.entries() {
            writeln!(w, "param {} {} f32 {}", e.name, shape_text(&e.shape()), e.slot.offset * 4)?;
        }
        writeln!(w, "data {}", self.params.len() * 4)?;
        let mut bytes = Vec::with_capacity(self.params.len() * 4);
        for v in &self.params {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(mut r: R) -> Result<Self> {
        let next_line = |r: &mut R| -> Result<String> {
            let mut s = String::new();
            if r.read_line(&mut s)? == 0 {
                return Err(bad("unexpected end of checkpoint"));
            }
            Ok(s.trim_end_matches('\n').to_string())
        };
        let header = next_line(&mut r)?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file"));
        }
        let version = parts.next().unwrap_or("");
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version:?}")));
        }
        let want = parts
            .next()
            .and_then(|d| d.strip_prefix("digest="))
            .ok_or_else(|| bad("header lacks a config digest"))?
            .to_string();
        let cfg_line = next_line(&mut r)?;
        if digest(&cfg_line) != want {
            return Err(bad("config digest mismatch"));
        }
        let (cfg, input_len) = parse_config(&cfg_line)?;
        let network = Network::new(cfg)?;

        let mut norms = Vec::new();
        let mut entries = network.layout.entries().iter();
        let bytes = loop {
            let line = next_line(&mut r)?;
            let (kind, rest) = line.split_once(' ').ok_or_else(|| bad(format!("malformed line {line:?}")))?;
            match kind {
                "norm" => {
                    let mut f = rest.splitn(3, ' ');
                    let mut num = || -> Result<f64> {
                        f.next()
                            .and_then(|v| v.parse().ok())
                            .ok_or_else(|| bad(format!("malformed norm line {line:?}")))
                    };
                    let (mean, std) = (num()?, num()?);
                    let name = f.next().ok_or_else(|| bad(format!("norm line without a name {line:?}")))?;
                    norms.push((name.to_string(), ColumnStats { mean, std }));
                }
                "param" => {
                    let e = entries.next().ok_or_else(|| bad("more parameters than the config implies"))?;
                    let expected = format!("{} {} f32 {}", e.name, shape_text(&e.shape()), e.slot.offset * 4);
                    if rest != expected {
                        return Err(bad(format!("parameter manifest mismatch: expected {expected:?}, found {rest:?}")));
                    }
                }
                "data" => break rest.parse::<usize>().map_err(|_| bad(format!("malformed data line {line:?}")))?,
                _ => return Err(bad(format!("unknown section {kind:?}"))),
            }
        };
        if entries.next().is_some() {
            return Err(bad("manifest lists fewer parameters than the config implies"));
        }
        if bytes != network.count_parameters() * 4 {
            return Err(bad(format!("data section has {bytes} bytes, expected {}", network.count_parameters() * 4)));
        }
        let mut raw = vec![0u8; bytes];
        r.read_exact(&mut raw).map_err(|_| bad("truncated data section"))?;
        if r.read(&mut [0u8])? != 0 {
            return Err(bad("trailing bytes after data section"));
        }
        let params: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

        let mut norms = norms.into_iter();
        let (first, load) = norms.next().ok_or_else(|| bad("missing load statistics"))?;
        if first != "load" {
            return Err(bad(format!("first norm line is {first:?}, expected load")));
        }
        let standardizer = Standardizer {
            load,
            covariates: norms.collect(),
        };
        TrainedModel::new(network, params, standardizer, input_len)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::read(std::io::BufReader::new(f))
    }
}
