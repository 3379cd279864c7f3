//! Series import and export.
//!
//! CSV is one value per line under the header `x`, written with 17
//! significant digits so a round trip is exact. JSON records carry the
//! generating spec and seed when known.

use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procgen::{ProcessSpec, TimeSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub spec: Option<ProcessSpec>,
    pub seed: Option<u64>,
    pub n: usize,
    pub values: Vec<f64>,
}

impl From<&TimeSeries> for SeriesRecord {
    fn from(ts: &TimeSeries) -> Self {
        Self { spec: ts.spec.clone(), seed: ts.seed, n: ts.len(), values: ts.values.clone() }
    }
}

impl SeriesRecord {
    pub fn into_series(self) -> Result<TimeSeries> {
        if self.n != self.values.len() {
            return Err(Error::Parse(format!(
                "record says n = {} but holds {} values",
                self.n,
                self.values.len()
            )));
        }
        let mut ts = TimeSeries::from_values(self.values)?;
        if let Some(spec) = self.spec {
            spec.validate()?;
            ts.truth = Some(spec.truth());
            ts.spec = Some(spec);
        }
        ts.seed = self.seed;
        Ok(ts)
    }
}

pub fn write_series_csv<W: Write>(values: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "x")?;
    for v in values {
        writeln!(w, "{v:.16e}")?;
    }
    Ok(())
}

/// Reads the CSV format. The `x` header is optional; blank lines are skipped.
pub fn read_series_csv<R: BufRead>(r: R) -> Result<TimeSeries> {
    let mut values = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || (i == 0 && t.eq_ignore_ascii_case("x")) {
            continue;
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: `{t}` is not a number", i + 1)))?;
        values.push(v);
    }
    TimeSeries::from_values(values)
}

pub fn write_series_json<W: Write>(series: &TimeSeries, w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, &SeriesRecord::from(series))?;
    Ok(())
}

pub fn read_series_json<R: std::io::Read>(r: R) -> Result<TimeSeries> {
    let rec: SeriesRecord = serde_json::from_reader(r)?;
    rec.into_series()
}

/// Dispatch on the extension: `.json` is a record, anything else CSV.
pub fn read_series(path: &Path) -> Result<TimeSeries> {
    let f = fs::File::open(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        read_series_json(std::io::BufReader::new(f))
    } else {
        read_series_csv(std::io::BufReader::new(f))
    }
}

pub fn write_series(path: &Path, series: &TimeSeries) -> Result<()> {
    let f = std::io::BufWriter::new(fs::File::create(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        write_series_json(series, f)
    } else {
        write_series_csv(&series.values, f)
    }
}
