//! CSV and JSON outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use adn_core::eval::{MetricsReport, StepMetrics, REPORT_STEPS};
use adn_core::train::EpochRecord;
use serde::Serialize;

use crate::error::{Error, IoContext, Result};

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))? + "\n";
    fs::write(path, text).at(path)
}

/// One row per prediction step followed by an `all` row.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let row = |w: &mut csv::Writer<fs::File>, step: String, m: &StepMetrics| {
        w.write_record([
            step,
            m.minutes.to_string(),
            num(m.mae),
            num(m.rmse),
            num(m.mape),
            m.count.to_string(),
            m.mape_count.to_string(),
        ])
    };
    let io = |e: csv::Error| Error::parse(path, e);
    w.write_record(["step", "minutes", "mae", "rmse", "mape", "count", "mape_count"])
        .map_err(io)?;
    for m in &report.per_step {
        row(&mut w, m.step.to_string(), m).map_err(io)?;
    }
    row(&mut w, "all".into(), &report.overall).map_err(io)?;
    w.flush().at(path)
}

/// Training history; the validation columns are named by horizon in
/// minutes (`slot_minutes` per step).
pub fn write_history_csv(path: &Path, history: &[EpochRecord], slot_minutes: usize) -> Result<()> {
    let io = |e: csv::Error| Error::parse(path, e);
    let mut w = csv_writer(path)?;
    let mut header = vec!["epoch".to_owned(), "lr".into(), "train_loss".into(), "val_mae".into()];
    header.extend(REPORT_STEPS.iter().map(|s| format!("val_mae_{}", s * slot_minutes)));
    header.extend(["max_grad_norm".into(), "max_clipped_norm".into()]);
    w.write_record(&header).map_err(io)?;
    for r in history {
        let mut rec = vec![r.epoch.to_string(), r.lr.to_string(), num(r.train_loss), r.val_mae.map_or_else(String::new, num)];
        for s in REPORT_STEPS {
            rec.push(r.val_mae_steps.iter().find(|(k, _)| *k == s).map_or_else(String::new, |(_, v)| num(*v)));
        }
        rec.push(num(r.max_grad_norm));
        rec.push(num(r.max_clipped_norm));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().at(path)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub kind: String,
    pub knob: f64,
    pub seed: u64,
    pub horizon_min: i64,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub train_time_s: f64,
}

/// Headline rows of one sweep point.
pub fn result_rows(kind: &str, knob: f64, seed: u64, report: &MetricsReport, train_time_s: f64) -> Vec<ResultRow> {
    report
        .headline()
        .into_iter()
        .map(|m| ResultRow {
            kind: kind.to_owned(),
            knob,
            seed,
            horizon_min: m.minutes,
            mae: m.mae,
            rmse: m.rmse,
            mape: m.mape,
            train_time_s,
        })
        .collect()
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let io = |e: csv::Error| Error::parse(path, e);
    let mut w = csv_writer(path)?;
    w.write_record(["kind", "knob", "seed", "horizon_min", "mae", "rmse", "mape", "train_time_s"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            r.kind.clone(),
            r.knob.to_string(),
            r.seed.to_string(),
            r.horizon_min.to_string(),
            num(r.mae),
            num(r.rmse),
            num(r.mape),
            format!("{:.3}", r.train_time_s),
        ])
        .map_err(io)?;
    }
    w.flush().at(path)
}

/// Horizon table of the headline steps.
pub fn table(report: &MetricsReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:>8}  {:>9}  {:>9}  {:>8}", "horizon", "MAE", "RMSE", "MAPE").expect("write");
    for m in report.headline() {
        writeln!(
            s,
            "{:>4} min  {:>9.4}  {:>9.4}  {:>7.2}%",
            m.minutes,
            m.mae,
            m.rmse,
            m.mape
        )
        .expect("write");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use adn_core::eval::MetricsAccumulator;

    fn report() -> MetricsReport {
        let mut acc = MetricsAccumulator::new(12, 300);
        for step in 0..12 {
            acc.add(step, 1.0 + step as f64, 2.0);
            acc.add(step, 0.5, 1.0);
        }
        acc.finish().unwrap()
    }

    #[test]
    fn metrics_and_results_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&p, &r).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 14);
        assert!(text.lines().last().unwrap().starts_with("all,"));
        let rows = result_rows("scarcity", 0.5, 3, &r, 1.5);
        assert_eq!(rows.iter().map(|r| r.horizon_min).collect::<Vec<_>>(), vec![15, 30, 60]);
        let p = dir.path().join("r.csv");
        write_results_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("kind,knob,seed,horizon_min,mae,rmse,mape,train_time_s\n"));
        assert!(text.contains("scarcity,0.5,3,15,"));
        write_json(&dir.path().join("m.json"), &r).unwrap();
        let t = table(&r);
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("  60 min"));
    }

    #[test]
    fn history_columns() {
        let dir = tempfile::tempdir().unwrap();
        let rec = EpochRecord {
            epoch: 0,
            lr: 0.002,
            train_loss: 0.5,
            val_mae: Some(1.0),
            val_mae_steps: vec![(3, 0.9), (6, 1.0)],
            max_grad_norm: 3.0,
            max_clipped_norm: 0.1,
        };
        let p = dir.path().join("h.csv");
        write_history_csv(&p, &[rec], 5).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,lr,train_loss,val_mae,val_mae_15,val_mae_30,val_mae_60,max_grad_norm,max_clipped_norm"
        );
        assert_eq!(lines.next().unwrap(), "0,0.002,0.5,1,0.9,1,,3,0.1");
    }
}
