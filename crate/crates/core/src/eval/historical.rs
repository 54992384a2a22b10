use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::calendar::CalendarSpec;
use crate::data::{Instance, Standardizer};
use crate::error::{bail, Result};

#[derive(Debug, Clone, Default)]
struct Cells {
    sum: Vec<f64>,
    count: Vec<usize>,
}

/// Mean per (location, day-of-week, slot-of-day) cell over the training
/// instants, in original units. The source window is ignored.
#[derive(Debug, Clone)]
pub struct HistoricalAverage {
    calendar: CalendarSpec,
    features: usize,
    /// Keyed by location id; cells are `⟨days·slots, P⟩`.
    locations: BTreeMap<u32, Cells>,
    global: Vec<f64>,
}

impl HistoricalAverage {
    /// Fit on (possibly standardized) training instances. Overlapping windows
    /// are deduplicated by absolute instant so every training instant counts once.
    pub fn fit(train: &[Instance], standardizer: &Standardizer, calendar: &CalendarSpec) -> Result<Self> {
        calendar.validate()?;
        let Some(first) = train.first() else {
            bail!(Data, "historical average needs training instances");
        };
        let p = first.features;
        let ncells = calendar.days_per_week * calendar.slots_per_day;
        let mut seen: BTreeSet<(u32, i64)> = BTreeSet::new();
        let mut locations: BTreeMap<u32, Cells> = BTreeMap::new();
        let mut global = vec![0.0; p];
        let mut global_n = 0usize;
        for inst in train {
            for loc in 0..inst.num_locations {
                let id = inst.location_ids[loc];
                for pos in 0..inst.horizon() {
                    let ts = inst.timestamp(pos);
                    if !inst.is_valid(loc, pos) || !seen.insert((id, ts)) {
                        continue;
                    }
                    let cells = locations.entry(id).or_insert_with(|| Cells {
                        sum: vec![0.0; ncells * p],
                        count: vec![0; ncells],
                    });
                    let cell = calendar.cell(ts);
                    for f in 0..p {
                        let v = standardizer.inverse(f, inst.value(loc, pos, f));
                        cells.sum[cell * p + f] += v;
                        global[f] += v;
                    }
                    cells.count[cell] += 1;
                    global_n += 1;
                }
            }
        }
        if global_n == 0 {
            bail!(Data, "historical average: training data has no valid measurements");
        }
        for g in &mut global {
            *g /= global_n as f64;
        }
        let empty: usize = locations.values().map(|c| c.count.iter().filter(|&&n| n == 0).count()).sum();
        if empty > 0 {
            log::warn!("historical average: {empty} (location, day, slot) cells unseen in training; using location means");
        }
        Ok(HistoricalAverage {
            calendar: *calendar,
            features: p,
            locations,
            global,
        })
    }

    /// Prediction for one location at one timestamp.
    pub fn value(&self, location_id: u32, timestamp: i64, feature: usize) -> f64 {
        let p = self.features;
        match self.locations.get(&location_id) {
            Some(c) => {
                let cell = self.calendar.cell(timestamp);
                if c.count[cell] > 0 {
                    c.sum[cell * p + feature] / c.count[cell] as f64
                } else {
                    let (s, n) = c
                        .count
                        .iter()
                        .enumerate()
                        .fold((0.0, 0usize), |(s, n), (i, &k)| (s + c.sum[i * p + feature], n + k));
                    if n > 0 { s / n as f64 } else { self.global[feature] }
                }
            }
            None => self.global[feature],
        }
    }

    /// Target-window predictions `⟨N,T',P⟩` in original units.
    pub fn predict(&self, inst: &Instance) -> Vec<f64> {
        let (t, tp, p) = (inst.source_len, inst.target_len, inst.features);
        let mut out = Vec::with_capacity(inst.num_locations * tp * p);
        for loc in 0..inst.num_locations {
            for pos in t..t + tp {
                for f in 0..p {
                    out.push(self.value(inst.location_ids[loc], inst.timestamp(pos), f));
                }
            }
        }
        out
    }

    pub fn predict_all(&self, instances: &[Instance]) -> Vec<Vec<f64>> {
        instances.iter().map(|i| self.predict(i)).collect()
    }
}
