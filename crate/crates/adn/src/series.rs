//! Raw measurement tables on disk.
//!
//! * Wide CSV: a header `timestamp,<id>,<id>,...`, one row per instant.
//!   Timestamps are Unix seconds, RFC 3339, or `YYYY-MM-DD HH:MM[:SS]`
//!   (read as UTC). Empty cells, `nan` and the configured sentinel are missing.
//!   The spacing must be constant.
//! * Binary: little-endian `f64` cells, row-major instants×locations, with a
//!   JSON sidecar (`<stem>.json`) holding the grid and the location ids.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adn_core::data::RawSeries;
use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesHeader {
    pub start_timestamp: i64,
    pub step_seconds: i64,
    pub num_instants: usize,
    pub location_ids: Vec<String>,
    #[serde(default)]
    pub missing_value: Option<f64>,
}

pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc().timestamp());
        }
    }
    None
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::<Utc>::from_timestamp(ts, 0).map_or_else(|| ts.to_string(), |t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
}

fn parse_cell(s: &str) -> std::result::Result<f64, std::num::ParseFloatError> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") {
        Ok(f64::NAN)
    } else {
        s.parse()
    }
}

pub fn read_csv(path: &Path, missing_value: Option<f64>) -> Result<RawSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.len() < 2 {
        return Err(Error::parse(path, "expected a timestamp column and at least one location column"));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let n = ids.len();
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let row = line + 2;
        if rec.len() != n + 1 {
            return Err(Error::parse(path, format!("row {row} has {} fields, expected {}", rec.len(), n + 1)));
        }
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| Error::parse(path, format!("row {row}: bad timestamp {:?}", &rec[0])))?;
        let vals = rec
            .iter()
            .skip(1)
            .map(parse_cell)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, format!("row {row}: {e}")))?;
        rows.push((ts, vals));
    }
    if rows.len() < 2 {
        return Err(Error::parse(path, "need at least two rows to infer the time step"));
    }
    let start = rows[0].0;
    let step = rows[1].0 - start;
    if step <= 0 {
        return Err(Error::parse(path, "row 3: timestamps must be strictly increasing"));
    }
    for (i, w) in rows.windows(2).enumerate() {
        if w[1].0 - w[0].0 != step {
            return Err(Error::parse(
                path,
                format!("row {}: spacing {}s differs from the {step}s step", i + 3, w[1].0 - w[0].0),
            ));
        }
    }
    let values = rows.into_iter().flat_map(|(_, v)| v).collect();
    Ok(RawSeries::new(values, start, step, ids, missing_value)?)
}

pub fn write_csv(path: &Path, s: &RawSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    let n = s.num_locations();
    let mut header = vec!["timestamp".to_owned()];
    header.extend(s.location_ids.iter().cloned());
    w.write_record(&header).map_err(|e| Error::parse(path, e))?;
    for t in 0..s.num_instants() {
        let mut rec = vec![format_timestamp(s.timestamp(t))];
        for loc in 0..n {
            rec.push(s.value(t, loc).map_or_else(String::new, |v| v.to_string()));
        }
        w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().at(path)
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn write_binary(path: &Path, s: &RawSeries) -> Result<()> {
    let file = fs::File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    for (v, ok) in s.values.iter().zip(&s.valid) {
        let v = if *ok { *v } else { f64::NAN };
        w.write_all(&v.to_le_bytes()).at(path)?;
    }
    w.flush().at(path)?;
    let header = SeriesHeader {
        start_timestamp: s.start_timestamp,
        step_seconds: s.step_seconds,
        num_instants: s.num_instants(),
        location_ids: s.location_ids.clone(),
        missing_value: None,
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&header).map_err(|e| Error::parse(&side, e))?).at(&side)
}

pub fn read_binary(path: &Path, missing_value: Option<f64>) -> Result<RawSeries> {
    let side = sidecar_path(path);
    let header: SeriesHeader = serde_json::from_str(&fs::read_to_string(&side).at(&side)?).map_err(|e| Error::parse(&side, e))?;
    let bytes = fs::read(path).at(path)?;
    let cells = header.num_instants * header.location_ids.len();
    if bytes.len() != cells * 8 {
        return Err(Error::parse(path, format!("{} bytes, expected {} cells of 8 bytes", bytes.len(), cells)));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(RawSeries::new(
        values,
        header.start_timestamp,
        header.step_seconds,
        header.location_ids,
        missing_value.or(header.missing_value),
    )?)
}

/// Load by extension: `.csv` or `.bin`.
pub fn load(path: &Path, missing_value: Option<f64>) -> Result<RawSeries> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path, missing_value),
        Some("bin") => read_binary(path, missing_value),
        _ => Err(Error::parse(path, "unknown series format (expected .csv or .bin)")),
    }
}
