//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma-separated.
//! Layering: defaults, then the config file, then `--set key=value`
//! overrides, then dedicated command-line flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adn_core::calendar::CalendarSpec;
use adn_core::data::{SplitFractions, WindowSpec};
use adn_core::experiments::{ExperimentKind, ExperimentSpec};
use adn_core::model::{ModelConfig, ParamGroup};
use adn_core::train::TrainConfig;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Raw series for `prepare`.
    pub data: Option<PathBuf>,
    pub missing_value: Option<f64>,
    pub window: WindowSpec,
    pub split: SplitFractions,
    pub standardize: bool,
    pub calendar: CalendarSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment_kind: Option<ExperimentKind>,
    /// Empty means the protocol's default grid.
    pub knobs: Vec<f64>,
    /// Prepared store of the target domain (adaptation only).
    pub target: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            missing_value: None,
            window: WindowSpec::default(),
            split: SplitFractions::default(),
            standardize: true,
            calendar: CalendarSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            experiment_kind: None,
            knobs: Vec::new(),
            target: None,
        }
    }
}

fn bad(key: &str, value: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key} = {value:?}: {e}"))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected a boolean")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_owned(), ToString::to_string)
}

impl RunConfig {
    /// Set one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        match key.trim() {
            "seed" => t.seed = parse(key, v)?,
            "data.path" => self.data = parse_opt::<String>(key, v)?.map(PathBuf::from),
            "data.missing_value" => self.missing_value = parse_opt(key, v)?,
            "data.window" => self.window.window = parse(key, v)?,
            "data.stride" => self.window.stride = parse(key, v)?,
            "data.reference_offset" => self.window.reference_offset = parse(key, v)?,
            "data.split" => {
                let f: Vec<f64> = parse_list(key, v)?;
                let [train, val, test] = f[..] else {
                    return Err(bad(key, v, "expected train,val,test fractions"));
                };
                self.split = SplitFractions { train, val, test };
            }
            "data.standardize" => self.standardize = parse_bool(key, v)?,
            "calendar.days_per_week" => self.calendar.days_per_week = parse(key, v)?,
            "calendar.slots_per_day" => self.calendar.slots_per_day = parse(key, v)?,
            "calendar.slot_minutes" => self.calendar.slot_minutes = parse(key, v)?,
            "model.d_model" => m.d_model = parse(key, v)?,
            "model.enc_layers" => m.enc_layers = parse(key, v)?,
            "model.dec_layers" => m.dec_layers = parse(key, v)?,
            "model.heads_temporal" => m.heads_temporal = parse(key, v)?,
            "model.heads_spatial" => m.heads_spatial = parse(key, v)?,
            "model.ff_dim" => m.ff_dim = parse(key, v)?,
            "model.dropout" => m.dropout = parse(key, v)?,
            "model.features" => m.features = parse(key, v)?,
            "model.positional_encoding" => m.use_positional_encoding = parse_bool(key, v)?,
            "model.layer_norm_eps" => m.layer_norm_eps = parse(key, v)?,
            "train.batch_size" => t.batch_size = parse(key, v)?,
            "train.epochs" => t.epochs = parse(key, v)?,
            "train.lr0" => t.lr0 = parse(key, v)?,
            "train.lr_halve_epochs" => t.lr_halve_epochs = parse_list(key, v)?,
            "train.adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "train.adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "train.adam_eps" => t.adam_eps = parse(key, v)?,
            "train.grad_clip" => t.grad_clip = parse(key, v)?,
            "train.freeze_groups" => t.freeze_groups = parse_list::<ParamGroup>(key, v)?,
            "train.eval_batch_size" => t.eval_batch_size = parse(key, v)?,
            "experiment.kind" => self.experiment_kind = parse_opt(key, v)?,
            "experiment.knobs" => self.knobs = parse_list(key, v)?,
            "experiment.target" => self.target = parse_opt::<String>(key, v)?.map(PathBuf::from),
            other => return Err(Error::Config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` (or `key = value`) text, one entry per line.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                e => e,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).at(path)?;
        self.apply_text(&text)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    /// Full resolved configuration; reading it back gives an equal value.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("seed", t.seed.to_string());
        kv("data.path", opt(&self.data.as_ref().map(|p| p.display())));
        kv("data.missing_value", opt(&self.missing_value));
        kv("data.window", self.window.window.to_string());
        kv("data.stride", self.window.stride.to_string());
        kv("data.reference_offset", self.window.reference_offset.to_string());
        kv("data.split", join(&[self.split.train, self.split.val, self.split.test]));
        kv("data.standardize", self.standardize.to_string());
        kv("calendar.days_per_week", self.calendar.days_per_week.to_string());
        kv("calendar.slots_per_day", self.calendar.slots_per_day.to_string());
        kv("calendar.slot_minutes", self.calendar.slot_minutes.to_string());
        kv("model.d_model", m.d_model.to_string());
        kv("model.enc_layers", m.enc_layers.to_string());
        kv("model.dec_layers", m.dec_layers.to_string());
        kv("model.heads_temporal", m.heads_temporal.to_string());
        kv("model.heads_spatial", m.heads_spatial.to_string());
        kv("model.ff_dim", m.ff_dim.to_string());
        kv("model.dropout", m.dropout.to_string());
        kv("model.features", m.features.to_string());
        kv("model.positional_encoding", m.use_positional_encoding.to_string());
        kv("model.layer_norm_eps", m.layer_norm_eps.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.lr0", t.lr0.to_string());
        kv("train.lr_halve_epochs", join(&t.lr_halve_epochs));
        kv("train.adam_beta1", t.adam_beta1.to_string());
        kv("train.adam_beta2", t.adam_beta2.to_string());
        kv("train.adam_eps", t.adam_eps.to_string());
        kv("train.grad_clip", t.grad_clip.to_string());
        kv("train.freeze_groups", join(&t.freeze_groups));
        kv("train.eval_batch_size", t.eval_batch_size.to_string());
        kv("experiment.kind", opt(&self.experiment_kind));
        kv("experiment.knobs", join(&self.knobs));
        kv("experiment.target", opt(&self.target.as_ref().map(|p| p.display())));
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.calendar.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn experiment(&self) -> Result<ExperimentSpec> {
        let kind = self
            .experiment_kind
            .ok_or_else(|| Error::Config("experiment.kind is not set".into()))?;
        let spec = ExperimentSpec {
            kind,
            knobs: if self.knobs.is_empty() { kind.default_grid() } else { self.knobs.clone() },
            seed: self.train.seed,
            model: self.model.clone(),
            train: self.train.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }
}
