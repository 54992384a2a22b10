use alloc::vec::Vec;

use crate::calendar::CalendarSpec;
use crate::data::{Instance, RawSeries};
use crate::error::{bail, Result};

/// Moving-window layout, in instants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WindowSpec {
    pub window: usize,
    pub stride: usize,
    /// Number of source instants `T`; the window's remaining `window - T`
    /// instants are targets.
    pub reference_offset: usize,
}

impl Default for WindowSpec {
    /// Two-hour windows with one-hour overlap, reference at the middle.
    fn default() -> Self {
        WindowSpec {
            window: 24,
            stride: 12,
            reference_offset: 12,
        }
    }
}

/// Slice `raw` into fixed-length instances covering every location.
pub fn make_windows(raw: &RawSeries, spec: WindowSpec, calendar: &CalendarSpec) -> Result<Vec<Instance>> {
    let WindowSpec {
        window,
        stride,
        reference_offset,
    } = spec;
    if stride == 0 {
        bail!(Config, "window stride must be positive");
    }
    if reference_offset == 0 || reference_offset >= window {
        bail!(Config, "reference offset {reference_offset} must lie in (0, {window})");
    }
    let len = raw.num_instants();
    if window > len {
        bail!(Config, "window of {window} instants exceeds series length {len}");
    }
    if raw.step_seconds != calendar.step_seconds() {
        bail!(
            Config,
            "series step {}s does not match calendar slot {}s",
            raw.step_seconds,
            calendar.step_seconds()
        );
    }
    let n = raw.num_locations();
    let mut out = Vec::with_capacity((len - window) / stride + 1);
    let mut start = 0;
    while start + window <= len {
        let mut measurements = Vec::with_capacity(n * window);
        let mut valid = Vec::with_capacity(n * window);
        for loc in 0..n {
            for t in start..start + window {
                let v = raw.value(t, loc);
                measurements.push(v.unwrap_or(0.0));
                valid.push(v.is_some());
            }
        }
        let stamps = (start..start + window).map(|t| raw.timestamp(t));
        out.push(Instance {
            num_locations: n,
            source_len: reference_offset,
            target_len: window - reference_offset,
            features: 1,
            measurements,
            valid,
            location_ids: (0..n as u32).collect(),
            day_ids: stamps.clone().map(|ts| calendar.day_id(ts) as u8).collect(),
            slot_ids: stamps.map(|ts| calendar.slot_id(ts) as u16).collect(),
            start_timestamp: raw.timestamp(start),
            step_seconds: raw.step_seconds,
        });
        start += stride;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

/// Earliest instances to train, then validation, then test.
pub fn chronological_split(
    instances: Vec<Instance>,
    fractions: SplitFractions,
) -> Result<(Vec<Instance>, Vec<Instance>, Vec<Instance>)> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(0.0..=1.0).contains(f)) || ((train + val + test) - 1.0).abs() > 1e-9 {
        bail!(Config, "split fractions {train}/{val}/{test} must be in [0,1] and sum to 1");
    }
    if instances
        .windows(2)
        .any(|w| w[0].reference_timestamp() > w[1].reference_timestamp())
    {
        bail!(Data, "instances must be sorted by reference timestamp");
    }
    let n = instances.len();
    let n_train = libm::round(n as f64 * train) as usize;
    let n_val = libm::round(n as f64 * val) as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        bail!(Config, "split {train}/{val}/{test} of {n} instances leaves an empty subset");
    }
    let mut rest = instances;
    let mut mid = rest.split_off(n_train);
    let test_set = mid.split_off(n_val);
    Ok((rest, mid, test_set))
}
