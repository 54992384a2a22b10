//! Teacher-forced training: masked MAE, global-norm clipping, Adam with a
//! staged learning-rate decay, best-on-validation retention.

mod optim;

pub use optim::{adam_step, clip_gradients, global_norm, lr_schedule, AdamConfig, OptState};

use alloc::format;
use alloc::vec::Vec;

use crate::data::{Instance, MaskedBatch, Standardizer};
use crate::error::{bail, Error, Result};
use crate::eval;
use crate::model::{bind, forward_teacher_forced, ModelParams, ParamGroup};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// 0-based epochs at which the learning rate is halved.
    pub lr_halve_epochs: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub freeze_groups: Vec<ParamGroup>,
    /// Batch size used for autoregressive validation.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 100,
            lr0: 0.002,
            lr_halve_epochs: alloc::vec![15, 30, 45],
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            grad_clip: 0.1,
            seed: 0,
            freeze_groups: Vec::new(),
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            bail!(Config, "batch sizes must be positive");
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            bail!(Config, "learning rate must be a nonnegative number, got {}", self.lr0);
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_eps <= 0.0 {
            bail!(Config, "Adam constants out of range");
        }
        if self.grad_clip <= 0.0 {
            bail!(Config, "gradient clip must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Mean absolute error over the valid target events of `batch`.
pub fn masked_mae_loss<S: Scalar>(tape: &mut Tape<S>, pred: Var, batch: &MaskedBatch) -> Result<Var> {
    let (target, mask) = batch.targets();
    tape.masked_mae(pred, &target.cast(), &mask)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    /// 0-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch losses (standardized units).
    pub train_loss: f64,
    /// All-step validation MAE in original units.
    pub val_mae: Option<f64>,
    /// Validation MAE at the headline steps that exist.
    pub val_mae_steps: Vec<(usize, f64)>,
    /// Largest pre-clip global gradient norm seen this epoch.
    pub max_grad_norm: f64,
    /// Largest post-clip global gradient norm seen this epoch.
    pub max_clipped_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, if validation ran.
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
}

/// Optional callbacks of [`train`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    /// Replace the epoch's training instances (e.g. with random partitions).
    /// Called with the epoch index and the full training set.
    #[allow(clippy::type_complexity)]
    pub transform: Option<&'a mut dyn FnMut(usize, &[Instance]) -> Result<Vec<Instance>>>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

/// Datasets for [`train`]; instances are already standardized.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub train: &'a [Instance],
    pub validation: &'a [Instance],
    pub standardizer: &'a Standardizer,
}

/// One optimization step on `batch`. Returns (loss, pre-clip norm, post-clip norm).
pub fn train_step<S: Scalar>(
    params: &mut ModelParams<S>,
    state: &mut OptState,
    batch: &MaskedBatch,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut Stream,
) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let vars = bind(&mut tape, params, &cfg.freeze_groups);
    let pred = forward_teacher_forced(&mut tape, params, &vars, batch, true, rng)?;
    let loss = masked_mae_loss(&mut tape, pred, batch)?;
    let loss_value = tape.value(loss).data()[0].as_f64();
    if !loss_value.is_finite() {
        bail!(Divergence, "loss is {loss_value}");
    }
    tape.backward(loss)?;
    let mut grads: Vec<Option<Vec<f64>>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(|g| g.iter().map(|x| x.as_f64()).collect()))
        .collect();
    drop(tape);
    let pre = clip_gradients(&mut grads, cfg.grad_clip);
    let post = global_norm(&grads);
    if !pre.is_finite() {
        let bad = grads
            .iter()
            .zip(params.tensors())
            .find(|(g, _)| g.as_ref().is_some_and(|g| g.iter().any(|x| !x.is_finite())))
            .map_or("?", |(_, t)| t.name.as_str());
        bail!(Divergence, "non-finite gradient in {bad}");
    }
    adam_step(params, &grads, state, lr, &cfg.adam())?;
    Ok((loss_value, pre, post))
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Divergence(m) => Error::Divergence(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

/// Train `params` in place. When validation instances are given, the
/// parameters with the lowest validation MAE are kept at the end.
pub fn train<S: Scalar>(
    params: &mut ModelParams<S>,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks<'_>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let root = Stream::new(cfg.seed);
    let mut state = OptState::new(params);
    let mut best: Option<(f64, usize, ModelParams<S>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let transformed;
        let epoch_set: &[Instance] = match hooks.transform.as_deref_mut() {
            Some(f) => {
                transformed = f(epoch, data.train)?;
                &transformed
            }
            None => data.train,
        };
        if epoch_set.is_empty() {
            bail!(Data, "no training instances");
        }
        let order = root.child_indexed("shuffle", epoch as u64).permutation(epoch_set.len());
        let mut dropout = root.child_indexed("dropout", epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut max_pre: f64 = 0.0;
        let mut max_post: f64 = 0.0;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&Instance> = idx.iter().map(|&i| &epoch_set[i]).collect();
            let batch = MaskedBatch::from_instances(&refs)?;
            if batch.valid_counts().iter().all(|&c| c == 0) {
                continue;
            }
            let (loss, pre, post) = match train_step(params, &mut state, &batch, cfg, lr, &mut dropout) {
                Ok(v) => v,
                // A batch whose targets are all missing carries no signal.
                Err(Error::Evaluation(_)) => continue,
                Err(e) => return Err(with_context(e, epoch, bi)),
            };
            loss_sum += loss;
            batches += 1;
            max_pre = max_pre.max(pre);
            max_post = max_post.max(post);
        }

        let mut record = EpochRecord {
            epoch,
            lr,
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            val_mae: None,
            val_mae_steps: Vec::new(),
            max_grad_norm: max_pre,
            max_clipped_norm: max_post,
        };
        if !data.validation.is_empty() {
            let report = eval::evaluate(params, data.validation, data.standardizer, cfg.eval_batch_size)?;
            let mae = report.overall.mae;
            if !mae.is_finite() {
                bail!(Divergence, "epoch {epoch}: validation MAE is {mae}");
            }
            record.val_mae = Some(mae);
            record.val_mae_steps = report.headline().iter().map(|s| (s.step, s.mae)).collect();
            if best.as_ref().is_none_or(|(b, _, _)| mae < *b) {
                best = Some((mae, epoch, params.clone()));
            }
        }
        log::info!(
            "epoch {epoch}: lr {lr:.6} loss {:.5} val {:?}",
            record.train_loss,
            record.val_mae
        );
        if let Some(f) = hooks.on_epoch.as_deref_mut() {
            f(&record);
        }
        history.push(record);
    }

    let (best_val_mae, best_epoch) = match best {
        Some((mae, epoch, p)) => {
            *params = p;
            (Some(mae), Some(epoch))
        }
        None => (None, None),
    };
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_mae,
    })
}

/// Loss of `params` on `batch` without dropout; for diagnostics and tests.
pub fn evaluate_loss<S: Scalar>(params: &ModelParams<S>, batch: &MaskedBatch) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = bind(&mut tape, params, &ParamGroup::ALL);
    let pred = forward_teacher_forced(&mut tape, params, &vars, batch, false, &mut Stream::new(0))?;
    let loss = masked_mae_loss(&mut tape, pred, batch)?;
    Ok(tape.value(loss).data()[0].as_f64())
}
