//! Experiment protocols: training-data scarcity, random location removal,
//! random location partitions and domain adaptation.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::calendar::{CalendarSpec, SECONDS_PER_DAY};
use crate::data::{Instance, Standardizer};
use crate::error::{bail, Error, Result};
use crate::eval::{self, MetricsReport};
use crate::model::{ModelConfig, ModelParams, ParamGroup};
use crate::rng::{derive_seed, Stream};
use crate::train::{train, TrainConfig, TrainData, TrainHooks, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ExperimentKind {
    Scarcity,
    Missing,
    Partition,
    Adapt,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Scarcity => "scarcity",
            ExperimentKind::Missing => "missing",
            ExperimentKind::Partition => "partition",
            ExperimentKind::Adapt => "adapt",
        }
    }

    /// Default sweep of the knob.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            ExperimentKind::Scarcity => alloc::vec![0.01, 0.05, 0.1, 0.3, 0.5, 1.0],
            ExperimentKind::Missing => alloc::vec![0.0, 0.3, 0.6, 0.8, 0.95],
            ExperimentKind::Partition => alloc::vec![1.0, 2.0, 4.0, 8.0, 16.0],
            ExperimentKind::Adapt => alloc::vec![1.0, 3.0, 7.0, 14.0],
        }
    }

    /// Check one knob value against the protocol's range.
    pub fn check_knob(self, knob: f64) -> Result<()> {
        let ok = match self {
            ExperimentKind::Scarcity => knob > 0.0 && knob <= 1.0,
            ExperimentKind::Missing => (0.0..1.0).contains(&knob),
            ExperimentKind::Partition | ExperimentKind::Adapt => knob >= 1.0 && libm::fmod(knob, 1.0) == 0.0,
        };
        if !ok {
            bail!(Config, "knob {knob} out of range for the {} protocol", self.name());
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ExperimentKind::Scarcity,
            ExperimentKind::Missing,
            ExperimentKind::Partition,
            ExperimentKind::Adapt,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(alloc::format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Fraction `x` (scarcity, missing), number of cells `k` (partition) or
    /// days (adapt), one run per value.
    pub knobs: Vec<f64>,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.knobs.is_empty() {
            bail!(Config, "experiment needs at least one knob value");
        }
        for &k in &self.knobs {
            self.kind.check_knob(k)?;
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Seed of the run at `knob`, independent of sweep order.
    pub fn point_seed(&self, knob: f64) -> u64 {
        derive_seed(self.seed, knob.to_bits())
    }
}

/// Keep the earliest fraction `x` of `train` by reference instant.
pub fn scarcity_subset(train: &[Instance], x: f64) -> Result<Vec<Instance>> {
    ExperimentKind::Scarcity.check_knob(x)?;
    if train.windows(2).any(|w| w[0].reference_timestamp() > w[1].reference_timestamp()) {
        bail!(Data, "instances must be sorted by reference instant");
    }
    let keep = libm::round(x * train.len() as f64) as usize;
    if keep == 0 {
        bail!(Data, "scarcity fraction {x} of {} instances leaves none", train.len());
    }
    Ok(train[..keep].to_vec())
}

/// Delete `⌈x·N⌉` uniformly chosen locations (at most `N − 1`).
pub fn drop_locations(inst: &Instance, x: f64, rng: &mut Stream) -> Result<Instance> {
    ExperimentKind::Missing.check_knob(x)?;
    let n = inst.num_locations;
    let remove = (libm::ceil(x * n as f64 - 1e-9) as usize).min(n.saturating_sub(1));
    if remove == 0 {
        return Ok(inst.clone());
    }
    let mut keep = rng.permutation(n);
    keep.truncate(n - remove);
    keep.sort_unstable();
    Ok(inst.select_locations(&keep))
}

/// [`drop_locations`] applied independently to every instance.
pub fn drop_locations_all(instances: &[Instance], x: f64, seed: u64) -> Result<Vec<Instance>> {
    let root = Stream::new(seed).child("drop-locations");
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| drop_locations(inst, x, &mut root.child_indexed("instance", i as u64)))
        .collect()
}

/// Uniformly random partition of `0..n` into `k` cells of size `⌊n/k⌋` or `⌈n/k⌉`.
pub fn random_partition(n: usize, k: usize, rng: &mut Stream) -> Result<Vec<Vec<usize>>> {
    if k == 0 || k > n {
        bail!(Config, "cannot partition {n} locations into {k} cells");
    }
    let perm = rng.permutation(n);
    let (base, extra) = (n / k, n % k);
    let mut cells = Vec::with_capacity(k);
    let mut at = 0;
    for c in 0..k {
        let len = base + usize::from(c < extra);
        let mut cell = perm[at..at + len].to_vec();
        cell.sort_unstable();
        cells.push(cell);
        at += len;
    }
    Ok(cells)
}

/// Split every instance into one partial instance per cell of a fresh
/// random partition of its locations.
pub fn partition_instances(instances: &[Instance], k: usize, rng: &mut Stream) -> Result<Vec<Instance>> {
    let mut out = Vec::with_capacity(instances.len() * k);
    for inst in instances {
        for cell in random_partition(inst.num_locations, k.min(inst.num_locations), rng)? {
            out.push(inst.select_locations(&cell));
        }
    }
    Ok(out)
}

/// Instances whose reference instant lies in the first `days` days after
/// the earliest reference instant of `train`.
pub fn first_days(train: &[Instance], days: usize) -> Result<Vec<Instance>> {
    let Some(start) = train.iter().map(Instance::reference_timestamp).min() else {
        bail!(Data, "no target training instances");
    };
    let end = start + days as i64 * SECONDS_PER_DAY;
    let out: Vec<Instance> = train.iter().filter(|i| i.reference_timestamp() < end).cloned().collect();
    if out.is_empty() || days == 0 {
        bail!(Data, "no instances within the first {days} days");
    }
    Ok(out)
}

/// Every group except the location embeddings.
pub fn adaptation_frozen_groups() -> Vec<ParamGroup> {
    ParamGroup::ALL.into_iter().filter(|g| *g != ParamGroup::LocationEmbeddings).collect()
}

/// Standardized train/validation/test sets of one domain.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<Instance>,
    pub validation: Vec<Instance>,
    pub test: Vec<Instance>,
    pub standardizer: Standardizer,
    pub calendar: CalendarSpec,
    /// External id of each embedding row.
    pub location_names: Vec<String>,
}

impl Prepared {
    fn data<'a>(&'a self, train: &'a [Instance]) -> TrainData<'a> {
        TrainData {
            train,
            validation: &self.validation,
            standardizer: &self.standardizer,
        }
    }
}

/// Transfer `source` to the disjoint location set of `target`: a fresh
/// location table is trained on the first `days` days of the target
/// training data while every other parameter stays frozen.
pub fn adapt_domain<S: crate::Scalar>(
    source: &ModelParams<S>,
    source_locations: &[String],
    target: &Prepared,
    days: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams<S>, TrainReport)> {
    if let Some(shared) = target.location_names.iter().find(|n| source_locations.contains(n)) {
        bail!(Contract, "location {shared:?} appears in both source and target domains");
    }
    if target.calendar != source.calendar {
        bail!(Contract, "source and target calendars differ");
    }
    let subset = first_days(&target.train, days)?;
    let mut rng = Stream::new(cfg.seed).child("adapt-locations");
    let mut params = source.with_new_locations(target.location_names.len(), &mut rng)?;
    let mut cfg = cfg.clone();
    cfg.freeze_groups = adaptation_frozen_groups();
    let report = train(&mut params, target.data(&subset), &cfg, &mut TrainHooks::default())?;
    Ok((params, report))
}

/// Outcome of one sweep point.
#[derive(Debug, Clone)]
pub struct PointResult<S> {
    pub knob: f64,
    pub seed: u64,
    pub params: ModelParams<S>,
    pub train: TrainReport,
    pub test: MetricsReport,
}

/// Train and evaluate one point of a scarcity, missing or partition sweep.
/// Validation and test sets are never altered.
pub fn run_point<S: crate::Scalar>(spec: &ExperimentSpec, knob: f64, data: &Prepared) -> Result<PointResult<S>> {
    spec.kind.check_knob(knob)?;
    let seed = spec.point_seed(knob);
    let mut cfg = spec.train.clone();
    cfg.seed = seed;
    let mut params = ModelParams::<S>::init(
        &spec.model,
        &data.calendar,
        data.location_names.len(),
        &mut Stream::new(seed).child("init"),
    )?;
    let report = match spec.kind {
        ExperimentKind::Scarcity => {
            let subset = scarcity_subset(&data.train, knob)?;
            train(&mut params, data.data(&subset), &cfg, &mut TrainHooks::default())?
        }
        ExperimentKind::Missing => {
            let dropped = drop_locations_all(&data.train, knob, seed)?;
            train(&mut params, data.data(&dropped), &cfg, &mut TrainHooks::default())?
        }
        ExperimentKind::Partition => {
            let k = knob as usize;
            let root = Stream::new(seed).child("partition");
            let mut transform =
                |epoch: usize, full: &[Instance]| partition_instances(full, k, &mut root.child_indexed("epoch", epoch as u64));
            let mut hooks = TrainHooks {
                transform: Some(&mut transform),
                on_epoch: None,
            };
            train(&mut params, data.data(&data.train), &cfg, &mut hooks)?
        }
        ExperimentKind::Adapt => bail!(Contract, "adaptation points need a source model; use adapt_domain"),
    };
    let test = eval::evaluate(&params, &data.test, &data.standardizer, cfg.eval_batch_size)?;
    Ok(PointResult {
        knob,
        seed,
        params,
        train: report,
        test,
    })
}
