//! The commands behind the `adn` binary, as library calls.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use adn_core::data::{synth_diffusion, Instance, RawSeries, Standardizer, SynthConfig};
use adn_core::eval::{self, MetricsReport};
use adn_core::experiments::{adapt_domain, run_point, ExperimentKind, Prepared};
use adn_core::model::ModelParams;
use adn_core::rng::Stream;
use adn_core::train::{train, TrainData, TrainHooks, TrainReport};

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::embeddings;
use crate::error::{Error, IoContext, Result};
use crate::report::{self, ResultRow};
use crate::series;
use crate::store::{self, Manifest, PrepareOptions};

pub const CONFIG_FILE: &str = "config.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Record the resolved configuration in a run directory.
pub fn write_resolved_config(out: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).at(out)?;
    let path = out.join(CONFIG_FILE);
    let text = format!("# adn {}\n{}", env!("CARGO_PKG_VERSION"), cfg.to_text());
    fs::write(&path, text).at(&path)
}

pub fn prepare(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let data = cfg
        .data
        .as_deref()
        .ok_or_else(|| Error::Config("no input series (set data.path or --data)".into()))?;
    let raw = series::load(data, cfg.missing_value)?;
    let (_, manifest) = store::write_store(out, &raw, &PrepareOptions::from(cfg))?;
    write_resolved_config(out, cfg)?;
    log::info!(
        "prepared {} instances ({} / {} / {}) over {} locations",
        manifest.counts.total,
        manifest.counts.train,
        manifest.counts.validation,
        manifest.counts.test,
        manifest.location_names.len()
    );
    Ok(manifest)
}

/// Synthetic diffusion series written as CSV.
pub fn synth(out: &Path, num_locations: usize, num_days: usize, seed: u64, noise: f64) -> Result<RawSeries> {
    let raw = synth_diffusion(&SynthConfig::ring(num_locations, num_days, seed, noise))?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    series::write_csv(out, &raw)?;
    Ok(raw)
}

/// Fresh parameters for a run with this configuration; the same stream
/// labels as the experiment sweeps.
pub fn init_params(cfg: &RunConfig, num_locations: usize) -> Result<ModelParams<f32>> {
    Ok(ModelParams::init(
        &cfg.model,
        &cfg.calendar,
        num_locations,
        &mut Stream::new(cfg.train.seed).child("init"),
    )?)
}

/// Stored data must share the run's calendar.
fn check_calendar(cfg: &RunConfig, data: &Prepared) -> Result<()> {
    if cfg.calendar != data.calendar {
        return Err(Error::Config(format!(
            "run calendar {:?} differs from the prepared store's {:?}",
            cfg.calendar, data.calendar
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
    pub train_time_s: f64,
}

/// Train on a prepared store; writes the best checkpoint, the history and
/// the resolved configuration into `out`.
pub fn train_store(cfg: &RunConfig, store_dir: &Path, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (data, _) = store::load_store(store_dir)?;
    check_calendar(cfg, &data)?;
    write_resolved_config(out, cfg)?;
    let mut params = init_params(cfg, data.location_names.len())?;
    let t0 = Instant::now();
    let train_data = TrainData {
        train: &data.train,
        validation: &data.validation,
        standardizer: &data.standardizer,
    };
    let report = train(&mut params, train_data, &cfg.train, &mut TrainHooks::default())?;
    let train_time_s = t0.elapsed().as_secs_f64();
    report::write_history_csv(&out.join(HISTORY_FILE), &report.history, cfg.calendar.slot_minutes)?;
    let ckpt = Checkpoint {
        params,
        location_names: data.location_names.clone(),
        standardizer: data.standardizer.clone(),
    };
    checkpoint::save(&out.join(CHECKPOINT_DIR), &ckpt)?;
    if let (Some(e), Some(m)) = (report.best_epoch, report.best_val_mae) {
        log::info!("best validation MAE {m:.4} at epoch {e}");
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        report,
        train_time_s,
    })
}

/// Point every instance at the embedding row of its location in `names`.
pub fn align_locations(data: &mut Prepared, names: &[String]) -> Result<()> {
    let rows = data
        .location_names
        .iter()
        .map(|n| {
            names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::Core(adn_core::Error::Data(format!("location {n:?} has no embedding row in the checkpoint"))))
        })
        .collect::<Result<Vec<usize>>>()?;
    for inst in data.train.iter_mut().chain(&mut data.validation).chain(&mut data.test) {
        for id in &mut inst.location_ids {
            *id = rows[*id as usize] as u32;
        }
    }
    data.location_names = names.to_vec();
    Ok(())
}

fn restandardize_set(set: &mut [Instance], from: &Standardizer, to: &Standardizer) {
    for inst in set {
        from.invert(inst);
        to.apply(inst);
    }
}

/// Express `data` in the units of `to` instead of its own standardizer.
pub fn restandardize(data: &mut Prepared, to: &Standardizer) {
    if data.standardizer == *to {
        return;
    }
    let from = data.standardizer.clone();
    restandardize_set(&mut data.train, &from, to);
    restandardize_set(&mut data.validation, &from, to);
    restandardize_set(&mut data.test, &from, to);
    data.standardizer = to.clone();
}

/// Load a store in the units and embedding rows of a checkpoint.
pub fn load_for_checkpoint(store_dir: &Path, ckpt: &Checkpoint) -> Result<Prepared> {
    let (mut data, _) = store::load_store(store_dir)?;
    if data.calendar != ckpt.params.calendar {
        return Err(Error::Config("checkpoint and store calendars differ".into()));
    }
    align_locations(&mut data, &ckpt.location_names)?;
    restandardize(&mut data, &ckpt.standardizer);
    Ok(data)
}

/// Autoregressive test-split evaluation. Writes `metrics.json` and
/// `metrics.csv` into `out` when given.
pub fn evaluate(store_dir: &Path, ckpt_dir: &Path, batch_size: usize, out: Option<&Path>) -> Result<MetricsReport> {
    let ckpt = checkpoint::load(ckpt_dir)?;
    let data = load_for_checkpoint(store_dir, &ckpt)?;
    let report = eval::evaluate(&ckpt.params, &data.test, &data.standardizer, batch_size)?;
    if let Some(out) = out {
        fs::create_dir_all(out).at(out)?;
        report::write_json(&out.join("metrics.json"), &report)?;
        report::write_metrics_csv(&out.join("metrics.csv"), &report)?;
    }
    Ok(report)
}

/// Export the location and instant tables; returns their row counts.
pub fn export_embeddings(ckpt_dir: &Path, out: &Path) -> Result<(usize, usize)> {
    let ckpt = checkpoint::load(ckpt_dir)?;
    fs::create_dir_all(out).at(out)?;
    let n = embeddings::write_locations(&out.join("locations.csv"), &ckpt.params, &ckpt.location_names)?;
    let m = embeddings::write_instants(&out.join("instants.csv"), &ckpt.params)?;
    Ok((n, m))
}

/// Inputs of an experiment sweep.
pub struct ExperimentInputs<'a> {
    pub store: &'a Path,
    /// Source checkpoint (adaptation only).
    pub checkpoint: Option<&'a Path>,
}

/// Run the configured sweep; writes `results.csv` plus a history per point.
pub fn experiment(cfg: &RunConfig, inputs: ExperimentInputs<'_>, out: &Path) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let spec = cfg.experiment()?;
    write_resolved_config(out, cfg)?;
    let mut rows = Vec::new();
    let slot_minutes = cfg.calendar.slot_minutes;
    let history_path = |knob: f64| out.join(format!("history_{}_{knob}.csv", spec.kind));
    if spec.kind == ExperimentKind::Adapt {
        let source_dir = inputs
            .checkpoint
            .ok_or_else(|| Error::Config("adaptation needs a source checkpoint (--ckpt)".into()))?;
        let target_dir: PathBuf = cfg
            .target
            .clone()
            .ok_or_else(|| Error::Config("adaptation needs experiment.target".into()))?;
        let source = checkpoint::load(source_dir)?;
        let (mut target, _) = store::load_store(&target_dir)?;
        restandardize(&mut target, &source.standardizer);
        for &days in &spec.knobs {
            let mut tcfg = spec.train.clone();
            tcfg.seed = spec.point_seed(days);
            let t0 = Instant::now();
            let (params, rep) = adapt_domain(&source.params, &source.location_names, &target, days as usize, &tcfg)?;
            let secs = t0.elapsed().as_secs_f64();
            let test = eval::evaluate(&params, &target.test, &target.standardizer, tcfg.eval_batch_size)?;
            report::write_history_csv(&history_path(days), &rep.history, slot_minutes)?;
            rows.extend(report::result_rows(spec.kind.name(), days, tcfg.seed, &test, secs));
        }
    } else {
        let (data, _) = store::load_store(inputs.store)?;
        check_calendar(cfg, &data)?;
        for &knob in &spec.knobs {
            let t0 = Instant::now();
            let point = run_point::<f32>(&spec, knob, &data)?;
            let secs = t0.elapsed().as_secs_f64();
            report::write_history_csv(&history_path(knob), &point.train.history, slot_minutes)?;
            log::info!("{} {knob}: test MAE {:.4} in {secs:.1}s", spec.kind, point.test.overall.mae);
            rows.extend(report::result_rows(spec.kind.name(), knob, point.seed, &point.test, secs));
        }
    }
    report::write_results_csv(&out.join("results.csv"), &rows)?;
    Ok(rows)
}
