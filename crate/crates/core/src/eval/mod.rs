//! Autoregressive prediction in original units, masked metrics and the
//! Historical Average baseline.

mod historical;
mod metrics;

pub use historical::HistoricalAverage;
pub use metrics::{mae, mape, rmse, MetricsAccumulator, MetricsReport, StepMetrics, MAPE_GUARD, REPORT_STEPS};

use alloc::vec::Vec;

use crate::data::{Instance, MaskedBatch, Standardizer};
use crate::error::Result;
use crate::model::{forward_autoregressive, ModelParams};
use crate::scalar::Scalar;

/// Autoregressive predictions `⟨N,T',P⟩` per instance, in original units.
pub fn predict<S: Scalar>(
    params: &ModelParams<S>,
    instances: &[Instance],
    standardizer: &Standardizer,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(batch_size.max(1)) {
        let refs: Vec<&Instance> = chunk.iter().collect();
        let batch = MaskedBatch::from_instances(&refs)?;
        let y = forward_autoregressive(params, &batch)?;
        let per_row = batch.target_len * batch.features;
        for (b, inst) in chunk.iter().enumerate() {
            let start = b * batch.num_locations * per_row;
            let mut v: Vec<f64> = y.data()[start..start + inst.num_locations * per_row]
                .iter()
                .map(|x| x.as_f64())
                .collect();
            standardizer.invert_values(&mut v);
            out.push(v);
        }
    }
    Ok(out)
}

/// Target values `⟨N,T',P⟩` of `inst` in original units, with their mask.
pub fn targets(inst: &Instance, standardizer: &Standardizer) -> (Vec<f64>, Vec<bool>) {
    let (t, tp, p) = (inst.source_len, inst.target_len, inst.features);
    let mut values = Vec::with_capacity(inst.num_locations * tp * p);
    let mut mask = Vec::with_capacity(inst.num_locations * tp * p);
    for loc in 0..inst.num_locations {
        for pos in t..t + tp {
            let ok = inst.is_valid(loc, pos);
            for f in 0..p {
                values.push(standardizer.inverse(f, inst.value(loc, pos, f)));
                mask.push(ok);
            }
        }
    }
    (values, mask)
}

/// Score per-instance predictions `⟨N,T',P⟩` (original units) against the
/// targets of `instances`.
pub fn score(predictions: &[Vec<f64>], instances: &[Instance], standardizer: &Standardizer) -> Result<MetricsReport> {
    let Some(first) = instances.first() else {
        crate::error::bail!(Evaluation, "no instances to evaluate");
    };
    let mut acc = MetricsAccumulator::new(first.target_len, first.step_seconds);
    for (pred, inst) in predictions.iter().zip(instances) {
        let (target, mask) = targets(inst, standardizer);
        acc.add_instance(pred, &target, &mask, inst.target_len, inst.features);
    }
    acc.finish()
}

/// Autoregressive evaluation of `params` on (standardized) `instances`.
pub fn evaluate<S: Scalar>(
    params: &ModelParams<S>,
    instances: &[Instance],
    standardizer: &Standardizer,
    batch_size: usize,
) -> Result<MetricsReport> {
    let preds = predict(params, instances, standardizer, batch_size)?;
    score(&preds, instances, standardizer)
}
