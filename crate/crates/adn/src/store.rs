//! Prepared instance store: a directory holding the cleaned series and a
//! manifest with the windowing, split and standardization that rebuild the
//! train/validation/test instances exactly.
//!
//! ```text
//! <dir>/series.bin    little-endian f64 cells (see `series`)
//! <dir>/series.json   grid sidecar
//! <dir>/manifest.json
//! ```

use std::fs;
use std::path::Path;

use adn_core::calendar::CalendarSpec;
use adn_core::data::{chronological_split, make_windows, RawSeries, SplitFractions, Standardizer, WindowSpec};
use adn_core::experiments::Prepared;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, IoContext, Result};
use crate::series;

pub const FORMAT_VERSION: u32 = 1;
const SERIES_FILE: &str = "series.bin";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub window: WindowSpec,
    pub split: SplitFractions,
    pub calendar: CalendarSpec,
    pub standardize: bool,
}

impl From<&RunConfig> for PrepareOptions {
    fn from(c: &RunConfig) -> Self {
        PrepareOptions {
            window: c.window,
            split: c.split,
            calendar: c.calendar,
            standardize: c.standardize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub total: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub options: PrepareOptions,
    pub num_instants: usize,
    pub start_timestamp: i64,
    pub step_seconds: i64,
    pub missing_cells: usize,
    pub location_names: Vec<String>,
    pub counts: SplitCounts,
    pub standardizer: Standardizer,
    /// SHA-256 of `series.bin`.
    pub series_sha256: String,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Window, split and standardize `raw`. The standardizer is fitted on the
/// valid training cells (or is the identity when disabled).
pub fn prepare(raw: &RawSeries, opts: &PrepareOptions) -> Result<Prepared> {
    opts.calendar.validate()?;
    let all = make_windows(raw, opts.window, &opts.calendar)?;
    let (mut train, mut validation, mut test) = chronological_split(all, opts.split)?;
    let standardizer = if opts.standardize {
        Standardizer::fit(&train).unwrap_or_else(|| Standardizer::identity(1))
    } else {
        Standardizer::identity(1)
    };
    for inst in train.iter_mut().chain(&mut validation).chain(&mut test) {
        standardizer.apply(inst);
    }
    Ok(Prepared {
        train,
        validation,
        test,
        standardizer,
        calendar: opts.calendar,
        location_names: raw.location_ids.clone(),
    })
}

/// Prepare `raw` and write the store to `dir`.
pub fn write_store(dir: &Path, raw: &RawSeries, opts: &PrepareOptions) -> Result<(Prepared, Manifest)> {
    let prepared = prepare(raw, opts)?;
    fs::create_dir_all(dir).at(dir)?;
    let bin = dir.join(SERIES_FILE);
    series::write_binary(&bin, raw)?;
    let bytes = fs::read(&bin).at(&bin)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        options: *opts,
        num_instants: raw.num_instants(),
        start_timestamp: raw.start_timestamp,
        step_seconds: raw.step_seconds,
        missing_cells: raw.missing_count(),
        location_names: raw.location_ids.clone(),
        counts: counts(&prepared),
        standardizer: prepared.standardizer.clone(),
        series_sha256: sha256_hex(&bytes),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse(&path, e))? + "\n";
    fs::write(&path, text).at(&path)?;
    Ok((prepared, manifest))
}

fn counts(p: &Prepared) -> SplitCounts {
    SplitCounts {
        total: p.train.len() + p.validation.len() + p.test.len(),
        train: p.train.len(),
        validation: p.validation.len(),
        test: p.test.len(),
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::parse(&path, format!("unsupported store version {}", m.format_version)));
    }
    Ok(m)
}

/// SHA-256 of the manifest file.
pub fn manifest_hash(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST_FILE);
    Ok(sha256_hex(&fs::read(&path).at(&path)?))
}

/// Load a store, rebuilding its instances and checking them against the manifest.
pub fn load_store(dir: &Path) -> Result<(Prepared, Manifest)> {
    let manifest = read_manifest(dir)?;
    let bin = dir.join(SERIES_FILE);
    let bytes = fs::read(&bin).at(&bin)?;
    if sha256_hex(&bytes) != manifest.series_sha256 {
        return Err(Error::parse(&bin, "series checksum does not match the manifest"));
    }
    let raw = series::read_binary(&bin, None)?;
    let all = make_windows(&raw, manifest.options.window, &manifest.options.calendar)?;
    let (mut train, mut validation, mut test) = chronological_split(all, manifest.options.split)?;
    for inst in train.iter_mut().chain(&mut validation).chain(&mut test) {
        manifest.standardizer.apply(inst);
    }
    let prepared = Prepared {
        train,
        validation,
        test,
        standardizer: manifest.standardizer.clone(),
        calendar: manifest.options.calendar,
        location_names: raw.location_ids,
    };
    if counts(&prepared) != manifest.counts {
        return Err(Error::parse(dir.join(MANIFEST_FILE), "instance counts do not match the manifest"));
    }
    Ok((prepared, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use adn_core::data::{synth_diffusion, SynthConfig};

    fn opts() -> PrepareOptions {
        PrepareOptions {
            window: WindowSpec::default(),
            split: SplitFractions::default(),
            calendar: CalendarSpec::default(),
            standardize: true,
        }
    }

    #[test]
    fn store_round_trip_rebuilds_instances() {
        let raw = synth_diffusion(&SynthConfig::ring(3, 2, 4, 0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, m) = write_store(dir.path(), &raw, &opts()).unwrap();
        let (b, m2) = load_store(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_eq!(a.test, b.test);
        assert_eq!(a.standardizer, b.standardizer);
    }

    #[test]
    fn corrupted_series_is_rejected() {
        let raw = synth_diffusion(&SynthConfig::ring(2, 1, 4, 0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_store(dir.path(), &raw, &opts()).unwrap();
        let bin = dir.path().join(SERIES_FILE);
        let mut bytes = fs::read(&bin).unwrap();
        bytes[3] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert_eq!(load_store(dir.path()).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn unstandardized_store_keeps_original_units() {
        let raw = synth_diffusion(&SynthConfig::ring(2, 1, 4, 0.1)).unwrap();
        let p = prepare(&raw, &PrepareOptions { standardize: false, ..opts() }).unwrap();
        assert_eq!(p.standardizer, Standardizer::identity(1));
        assert_eq!(p.train[0].value(1, 3, 0), raw.value(3, 1).unwrap());
    }
}
