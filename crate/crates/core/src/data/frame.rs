use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};

use crate::{Error, Result};

/// Regularly sampled load series with named real covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub timestamps: Vec<NaiveDateTime>,
    pub step: TimeDelta,
    pub load: Vec<f64>,
    pub covariates: Vec<(String, Vec<f64>)>,
}

const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

impl Frame {
    /// Validates lengths and a strictly regular time grid. Diagnostics count
    /// data rows from 1.
    pub fn new(timestamps: Vec<NaiveDateTime>, load: Vec<f64>, covariates: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if timestamps.len() < 2 {
            return Err(Error::data(format!("need at least 2 rows, found {}", timestamps.len())));
        }
        if load.len() != timestamps.len() || covariates.iter().any(|(_, c)| c.len() != timestamps.len()) {
            return Err(Error::data("column lengths differ"));
        }
        let step = timestamps[1] - timestamps[0];
        for (i, w) in timestamps.windows(2).enumerate() {
            let d = w[1] - w[0];
            let row = i + 2;
            if d == TimeDelta::zero() {
                return Err(Error::data(format!("row {row}: duplicate timestamp {}", format_timestamp(&w[1]))));
            }
            if d < TimeDelta::zero() {
                return Err(Error::data(format!("row {row}: timestamp {} is earlier than the previous row", format_timestamp(&w[1]))));
            }
            if d != step {
                return Err(Error::data(format!(
                    "row {row}: irregular timestamps, gap from {} to {} ({} s) but the series step is {} s",
                    format_timestamp(&w[0]),
                    format_timestamp(&w[1]),
                    d.num_seconds(),
                    step.num_seconds()
                )));
            }
        }
        Ok(Frame {
            timestamps,
            step,
            load,
            covariates,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Frame {
        Frame {
            timestamps: self.timestamps[range.clone()].to_vec(),
            step: self.step,
            load: self.load[range.clone()].to_vec(),
            covariates: self.covariates.iter().map(|(n, c)| (n.clone(), c[range.clone()].to_vec())).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["timestamp".to_string(), "load".to_string()];
        header.extend(self.covariate_names());
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![format_timestamp(&self.timestamps[i]), self.load[i].to_string()];
            rec.extend(self.covariates.iter().map(|(_, c)| c[i].to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Parses CSV text with a header naming `timestamp`, `load` and any number of
/// real covariate columns.
pub fn read_csv<R: Read>(r: R) -> Result<Frame> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let ts_col = find("timestamp").ok_or_else(|| Error::data("missing required column `timestamp`"))?;
    let load_col = find("load").ok_or_else(|| Error::data("missing required column `load`"))?;
    let cov_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ts_col && *i != load_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut timestamps = Vec::new();
    let mut load = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::data(format!("row {row}: {e}")))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let ts = parse_timestamp(field(ts_col))
            .ok_or_else(|| Error::data(format!("row {row}: cannot parse timestamp {:?}", field(ts_col))))?;
        let num = |c: usize, name: &str| -> Result<f64> {
            field(c)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::data(format!("row {row}: cannot parse {name} value {:?}", field(c))))
        };
        timestamps.push(ts);
        load.push(num(load_col, "load")?);
        for ((c, name), out) in cov_cols.iter().zip(covs.iter_mut()) {
            out.push(num(*c, name)?);
        }
    }
    let covariates = cov_cols.into_iter().map(|(_, n)| n).zip(covs).collect();
    Frame::new(timestamps, load, covariates)
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Frame> {
        read_csv(text.as_bytes())
    }

    #[test]
    fn well_formed_file() {
        let f = parse("timestamp,load,temperature\n2021-01-01T00:00:00,10,1.5\n2021-01-01T01:00:00,11,2\n2021-01-01T02:00:00,12.5,2.5\n").unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.load, vec![10.0, 11.0, 12.5]);
        assert_eq!(f.covariate_names(), vec!["temperature"]);
        assert_eq!(f.step, TimeDelta::hours(1));
    }

    #[test]
    fn distinct_diagnostics() {
        let dup = parse("timestamp,load\n2021-01-01T00:00:00,1\n2021-01-01T01:00:00,2\n2021-01-01T01:00:00,3\n");
        let msg = dup.unwrap_err().to_string();
        assert!(msg.contains("row 3") && msg.contains("duplicate"), "{msg}");

        let gap = parse("timestamp,load\n2021-01-01T00:00:00,1\n2021-01-01T01:00:00,2\n2021-01-01T03:00:00,3\n");
        let msg = gap.unwrap_err().to_string();
        assert!(msg.contains("gap from 2021-01-01T01:00:00 to 2021-01-01T03:00:00"), "{msg}");

        let missing = parse("timestamp,value\n2021-01-01T00:00:00,1\n");
        assert!(missing.unwrap_err().to_string().contains("missing required column `load`"));

        let bad = parse("timestamp,load\n2021-01-01T00:00:00,1\n2021-01-01T01:00:00,abc\n");
        let msg = bad.unwrap_err().to_string();
        assert!(msg.contains("row 2") && msg.contains("load"), "{msg}");

        let bad_ts = parse("timestamp,load\nyesterday,1\n2021-01-01T01:00:00,2\n");
        assert!(bad_ts.unwrap_err().to_string().contains("cannot parse timestamp"));
    }

    #[test]
    fn csv_round_trip() {
        let f = parse("timestamp,load,t\n2021-01-01 00:00:00,1,3\n2021-01-01 00:30:00,2,4\n").unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), f);
    }
}
