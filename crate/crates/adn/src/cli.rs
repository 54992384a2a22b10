//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::report;
use crate::run;

#[derive(Debug, Parser)]
#[command(name = "adn", version, about = "Attention diffusion network traffic forecaster")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file, for `synth`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Raw series for `prepare`; a prepared store otherwise.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory (or a training run directory containing one).
    #[arg(long, global = true)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window, split and standardize a raw series into a store.
    Prepare,
    /// Train on a prepared store.
    Train,
    /// Autoregressive evaluation on the test split.
    Eval,
    /// Sweep one experiment protocol.
    Experiment {
        /// scarcity, missing, partition or adapt.
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated knob values.
        #[arg(long)]
        knobs: Option<String>,
    },
    /// Write location and instant embeddings as CSV.
    ExportEmbeddings,
    /// Generate a synthetic diffusion series as CSV.
    Synth {
        #[arg(long, default_value_t = 8)]
        locations: usize,
        #[arg(long, default_value_t = 14)]
        days: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
}

/// Defaults, config file, `--set` overrides, then the dedicated flags.
pub fn resolve_config(common: &Common, command: &Command) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = common.epochs {
        cfg.train.epochs = epochs;
    }
    if let (Command::Prepare, Some(d)) = (command, &common.data) {
        cfg.data = Some(d.clone());
    }
    if let Command::Experiment { kind, knobs } = command {
        if let Some(k) = kind {
            cfg.set("experiment.kind", k)?;
        }
        if let Some(k) = knobs {
            cfg.set("experiment.knobs", k)?;
        }
    }
    Ok(cfg)
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

/// Accept either a checkpoint directory or a run directory holding one.
pub fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.join(crate::checkpoint::META_FILE).exists() {
        path.to_path_buf()
    } else {
        path.join(run::CHECKPOINT_DIR)
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common, &cli.command)?;
    let c = &cli.common;
    match &cli.command {
        Command::Prepare => {
            let out = required(&c.out, "out")?;
            let m = run::prepare(&cfg, out)?;
            println!(
                "{} instances: {} train, {} validation, {} test",
                m.counts.total, m.counts.train, m.counts.validation, m.counts.test
            );
            println!("manifest sha256 {}", crate::store::manifest_hash(out)?);
        }
        Command::Train => {
            let out = required(&c.out, "out")?;
            let r = run::train_store(&cfg, required(&c.data, "data")?, out)?;
            match (r.report.best_epoch, r.report.best_val_mae) {
                (Some(e), Some(m)) => println!("best validation MAE {m:.4} at epoch {e}"),
                _ => println!("no validation run"),
            }
            println!("checkpoint written to {}", out.join(run::CHECKPOINT_DIR).display());
        }
        Command::Eval => {
            let ckpt = checkpoint_dir(required(&c.ckpt, "ckpt")?);
            let report = run::evaluate(required(&c.data, "data")?, &ckpt, cfg.train.eval_batch_size, c.out.as_deref())?;
            print!("{}", report::table(&report));
            println!("all steps MAE {:.4}", report.overall.mae);
        }
        Command::Experiment { .. } => {
            let out = required(&c.out, "out")?;
            let ckpt = c.ckpt.as_deref().map(checkpoint_dir);
            let inputs = run::ExperimentInputs {
                store: c.data.as_deref().unwrap_or(Path::new("")),
                checkpoint: ckpt.as_deref(),
            };
            if cfg.experiment_kind != Some(adn_core::experiments::ExperimentKind::Adapt) {
                required(&c.data, "data")?;
            }
            let rows = run::experiment(&cfg, inputs, out)?;
            println!("{} result rows written to {}", rows.len(), out.join("results.csv").display());
        }
        Command::ExportEmbeddings => {
            let out = required(&c.out, "out")?;
            let (n, m) = run::export_embeddings(&checkpoint_dir(required(&c.ckpt, "ckpt")?), out)?;
            println!("{n} location rows, {m} instant rows");
        }
        Command::Synth { locations, days, noise } => {
            let out = required(&c.out, "out")?;
            let raw = run::synth(out, *locations, *days, cfg.train.seed, *noise)?;
            println!("{} instants × {} locations", raw.num_instants(), raw.num_locations());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("adn").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_win_over_file_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        std::fs::write(&f, "seed = 1\ntrain.epochs = 3\nmodel.d_model = 16\n").unwrap();
        let f = f.to_str().unwrap();
        let cli = parse(&["train", "--config", f, "--set", "seed=2", "--set", "train.epochs=4", "--seed", "9"]);
        let cfg = resolve_config(&cli.common, &cli.command).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.model.d_model, 16);
        let cli = parse(&["--epochs", "0", "train", "--set", "train.epochs=4"]);
        assert_eq!(resolve_config(&cli.common, &cli.command).unwrap().train.epochs, 0);
    }

    #[test]
    fn experiment_flags() {
        let cli = parse(&["experiment", "--kind", "missing", "--knobs", "0,0.5"]);
        let cfg = resolve_config(&cli.common, &cli.command).unwrap();
        assert_eq!(cfg.experiment().unwrap().knobs, vec![0.0, 0.5]);
        let cli = parse(&["experiment", "--kind", "sideways"]);
        assert_eq!(resolve_config(&cli.common, &cli.command).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn missing_required_paths_are_config_errors() {
        assert_eq!(execute(&parse(&["train"])).unwrap_err().exit_code(), 2);
        assert_eq!(execute(&parse(&["prepare", "--out", "x"])).unwrap_err().exit_code(), 2);
    }
}
