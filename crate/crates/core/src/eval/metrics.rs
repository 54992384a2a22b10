use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Targets with `|y|` below this are excluded from MAPE.
pub const MAPE_GUARD: f64 = 1e-3;

/// 1-based steps reported as headline horizons (15/30/60 minutes at 5 min).
pub const REPORT_STEPS: [usize; 3] = [3, 6, 12];

fn check(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<()> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        bail!(Evaluation, "metric inputs differ in length: {} / {} / {}", pred.len(), target.len(), mask.len());
    }
    Ok(())
}

fn masked_mean(pred: &[f64], target: &[f64], mask: &[bool], f: impl Fn(f64, f64) -> Option<f64>) -> Result<f64> {
    check(pred, target, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &y), &ok) in pred.iter().zip(target).zip(mask) {
        if ok {
            if let Some(v) = f(p, y) {
                sum += v;
                n += 1;
            }
        }
    }
    if n == 0 {
        bail!(Evaluation, "no valid entries to evaluate");
    }
    Ok(sum / n as f64)
}

pub fn mae(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    masked_mean(pred, target, mask, |p, y| Some((p - y).abs()))
}

pub fn rmse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    masked_mean(pred, target, mask, |p, y| Some((p - y) * (p - y))).map(libm::sqrt)
}

/// Percent; entries with `|y| < MAPE_GUARD` are skipped.
pub fn mape(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    masked_mean(pred, target, mask, |p, y| (y.abs() >= MAPE_GUARD).then(|| ((p - y) / y).abs() * 100.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepMetrics {
    /// 1-based horizon step; 0 for the all-steps aggregate.
    pub step: usize,
    pub minutes: i64,
    pub mae: f64,
    pub rmse: f64,
    /// NaN when no target clears the MAPE guard.
    pub mape: f64,
    pub count: usize,
    pub mape_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub per_step: Vec<StepMetrics>,
    pub overall: StepMetrics,
}

impl MetricsReport {
    pub fn step(&self, step: usize) -> Option<&StepMetrics> {
        self.per_step.get(step.checked_sub(1)?)
    }

    /// The headline horizons that exist for this target length.
    pub fn headline(&self) -> Vec<&StepMetrics> {
        REPORT_STEPS.iter().filter_map(|&s| self.step(s)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    abs: f64,
    sq: f64,
    ape: f64,
    n: usize,
    n_ape: usize,
}

impl Acc {
    fn add(&mut self, p: f64, y: f64) {
        let e = p - y;
        self.abs += e.abs();
        self.sq += e * e;
        self.n += 1;
        if y.abs() >= MAPE_GUARD {
            self.ape += (e / y).abs() * 100.0;
            self.n_ape += 1;
        }
    }

    fn merge(&mut self, o: &Acc) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.ape += o.ape;
        self.n += o.n;
        self.n_ape += o.n_ape;
    }

    fn finish(&self, step: usize, minutes: i64) -> StepMetrics {
        let n = self.n as f64;
        StepMetrics {
            step,
            minutes,
            mae: self.abs / n,
            rmse: libm::sqrt(self.sq / n),
            mape: if self.n_ape > 0 { self.ape / self.n_ape as f64 } else { f64::NAN },
            count: self.n,
            mape_count: self.n_ape,
        }
    }
}

/// Streaming per-step metric sums over instances of varying location count.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    steps: Vec<Acc>,
    step_seconds: i64,
}

impl MetricsAccumulator {
    pub fn new(target_len: usize, step_seconds: i64) -> Self {
        MetricsAccumulator {
            steps: vec![Acc::default(); target_len],
            step_seconds,
        }
    }

    /// Add one valid entry at a 0-based target step.
    pub fn add(&mut self, step: usize, pred: f64, target: f64) {
        self.steps[step].add(pred, target);
    }

    /// `pred`, `target` and `mask` are `⟨N,T',P⟩`.
    pub fn add_instance(&mut self, pred: &[f64], target: &[f64], mask: &[bool], target_len: usize, features: usize) {
        for (i, ((&p, &y), &ok)) in pred.iter().zip(target).zip(mask).enumerate() {
            if ok {
                self.add((i / features) % target_len, p, y);
            }
        }
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        let mut all = Acc::default();
        let mut per_step = Vec::with_capacity(self.steps.len());
        for (i, a) in self.steps.iter().enumerate() {
            if a.n == 0 {
                bail!(Evaluation, "target step {} has no valid entries", i + 1);
            }
            all.merge(a);
            per_step.push(a.finish(i + 1, (i as i64 + 1) * self.step_seconds / 60));
        }
        if all.n == 0 {
            bail!(Evaluation, "no valid entries to evaluate");
        }
        Ok(MetricsReport {
            per_step,
            overall: all.finish(0, 0),
        })
    }
}
