use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Location×instant measurement table on a fixed time grid.
///
/// `values` is row-major `⟨num_instants, num_locations⟩`; `valid[i]` is false
/// for missing cells, whose value is then meaningless.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Unix timestamp (seconds) of the first row.
    pub start_timestamp: i64,
    pub step_seconds: i64,
    pub location_ids: Vec<String>,
    pub missing_sentinel: Option<f64>,
}

impl RawSeries {
    /// Build a series, marking cells equal to `missing_sentinel` (or NaN) as missing.
    pub fn new(
        values: Vec<f64>,
        start_timestamp: i64,
        step_seconds: i64,
        location_ids: Vec<String>,
        missing_sentinel: Option<f64>,
    ) -> Result<Self> {
        let valid = values
            .iter()
            .map(|&v| !v.is_nan() && Some(v) != missing_sentinel)
            .collect();
        let s = RawSeries {
            values,
            valid,
            start_timestamp,
            step_seconds,
            location_ids,
            missing_sentinel,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.location_ids.len();
        if n == 0 {
            bail!(Data, "series has no locations");
        }
        if self.values.len() % n != 0 || self.valid.len() != self.values.len() {
            bail!(Data, "series buffer length {} is not a multiple of {n} locations", self.values.len());
        }
        if self.step_seconds <= 0 {
            bail!(Data, "non-positive time step {}", self.step_seconds);
        }
        let mut seen = BTreeSet::new();
        for (col, id) in self.location_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                bail!(Data, "duplicate location id {id:?} at column {col}");
            }
        }
        Ok(())
    }

    pub fn num_locations(&self) -> usize {
        self.location_ids.len()
    }

    pub fn num_instants(&self) -> usize {
        self.values.len() / self.location_ids.len().max(1)
    }

    pub fn timestamp(&self, instant: usize) -> i64 {
        self.start_timestamp + instant as i64 * self.step_seconds
    }

    pub fn value(&self, instant: usize, location: usize) -> Option<f64> {
        let i = instant * self.num_locations() + location;
        self.valid[i].then(|| self.values[i])
    }

    pub fn missing_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Rows `from..to` as a new series.
    pub fn slice_instants(&self, from: usize, to: usize) -> RawSeries {
        let n = self.num_locations();
        RawSeries {
            values: self.values[from * n..to * n].to_vec(),
            valid: self.valid[from * n..to * n].to_vec(),
            start_timestamp: self.timestamp(from),
            step_seconds: self.step_seconds,
            location_ids: self.location_ids.clone(),
            missing_sentinel: self.missing_sentinel,
        }
    }
}
