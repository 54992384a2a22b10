//! Full forward passes: teacher-forced (training) and autoregressive
//! (inference).

use alloc::vec::Vec;

use crate::data::MaskedBatch;
use crate::error::{bail, Result};
use crate::model::layers::{self, LayerCtx};
use crate::model::{ModelParams, ParamGroup};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Decoder inputs are the observed (shifted) targets.
    TeacherForced,
    /// Decoder inputs are the model's own earlier predictions.
    Autoregressive,
}

/// Decoder measurements, `⟨B,N,L,P⟩` values with `⟨B,N,L⟩` validity.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderInput {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub len: usize,
}

impl DecoderInput {
    /// Observed measurements at positions `T-1 .. T+T'-1`.
    pub fn teacher_forced(batch: &MaskedBatch) -> Self {
        let (t, tp, p) = (batch.source_len, batch.target_len, batch.features);
        let h = batch.horizon();
        let rows = batch.batch_size * batch.num_locations;
        let mut values = Vec::with_capacity(rows * tp * p);
        let mut valid = Vec::with_capacity(rows * tp);
        for r in 0..rows {
            values.extend_from_slice(&batch.measurements[(r * h + t - 1) * p..][..tp * p]);
            valid.extend_from_slice(&batch.valid[r * h + t - 1..][..tp]);
        }
        DecoderInput { values, valid, len: tp }
    }

    /// First decoder step only: the last source measurement.
    fn first_step(batch: &MaskedBatch) -> Self {
        let (t, p) = (batch.source_len, batch.features);
        let h = batch.horizon();
        let rows = batch.batch_size * batch.num_locations;
        let mut values = Vec::with_capacity(rows * p);
        let mut valid = Vec::with_capacity(rows);
        for r in 0..rows {
            values.extend_from_slice(&batch.measurements[(r * h + t - 1) * p..][..p]);
            valid.push(batch.valid[r * h + t - 1]);
        }
        DecoderInput { values, valid, len: 1 }
    }

    /// Append one step per row (`⟨B,N,P⟩` values, all marked valid).
    fn push_step(&mut self, step: &[f64], features: usize) {
        let rows = self.valid.len() / self.len;
        let l = self.len;
        let mut values = Vec::with_capacity(rows * (l + 1) * features);
        let mut valid = Vec::with_capacity(rows * (l + 1));
        for r in 0..rows {
            values.extend_from_slice(&self.values[r * l * features..][..l * features]);
            values.extend_from_slice(&step[r * features..][..features]);
            valid.extend_from_slice(&self.valid[r * l..][..l]);
            valid.push(true);
        }
        *self = DecoderInput { values, valid, len: l + 1 };
    }
}

/// Register every parameter on the tape. Groups in `frozen` become
/// constants and receive no gradient.
pub fn bind<S: Scalar>(tape: &mut Tape<S>, params: &ModelParams<S>, frozen: &[ParamGroup]) -> Vec<Var> {
    params
        .tensors()
        .iter()
        .map(|t| {
            if frozen.contains(&t.group) {
                tape.constant(t.tensor.clone())
            } else {
                tape.param(t.tensor.clone())
            }
        })
        .collect()
}

fn encode<S: Scalar>(tape: &mut Tape<S>, params: &ModelParams<S>, ctx: &mut LayerCtx<'_>, batch: &MaskedBatch, real: &[bool]) -> Result<Var> {
    let layout = params.layout();
    let mut x = layers::enc_ini(tape, ctx, layout, batch)?;
    for ids in &layout.encoder {
        x = layers::enc_layer(tape, ctx, ids, x, real)?;
    }
    Ok(x)
}

fn decode<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    ctx: &mut LayerCtx<'_>,
    batch: &MaskedBatch,
    input: &DecoderInput,
    enc_out: Var,
    real: &[bool],
) -> Result<Var> {
    let layout = params.layout();
    let mut y = layers::dec_ini(tape, ctx, layout, batch, input)?;
    for ids in &layout.decoder {
        y = layers::dec_layer(tape, ctx, ids, y, enc_out, real)?;
    }
    layers::pred(tape, ctx.vars, layout.pred, y)
}

fn check_batch<S: Scalar>(params: &ModelParams<S>, batch: &MaskedBatch) -> Result<()> {
    if batch.features != params.config.features {
        bail!(Data, "batch has {} features, model expects {}", batch.features, params.config.features);
    }
    if batch.source_len == 0 || batch.target_len == 0 {
        bail!(Data, "source and target windows must be non-empty");
    }
    Ok(())
}

/// Teacher-forced prediction `⟨B,N,T',P⟩`. Dropout is active when `training`.
pub fn forward_teacher_forced<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    vars: &[Var],
    batch: &MaskedBatch,
    training: bool,
    rng: &mut Stream,
) -> Result<Var> {
    check_batch(params, batch)?;
    let real = layers::location_real(batch);
    let mut ctx = LayerCtx {
        config: &params.config,
        vars,
        dropout: if training { Some(rng) } else { None },
    };
    let enc_out = encode(tape, params, &mut ctx, batch, &real)?;
    let input = DecoderInput::teacher_forced(batch);
    decode(tape, params, &mut ctx, batch, &input, enc_out, &real)
}

/// Autoregressive prediction `⟨B,N,T',P⟩` without dropout. The encoder runs
/// once; step `i` re-runs the decoder over the `i+1` inputs produced so far.
pub fn forward_autoregressive<S: Scalar>(params: &ModelParams<S>, batch: &MaskedBatch) -> Result<Tensor<S>> {
    check_batch(params, batch)?;
    let real = layers::location_real(batch);
    let (rows, tp, p) = (batch.batch_size * batch.num_locations, batch.target_len, batch.features);
    let frozen = ParamGroup::ALL;

    let mut tape = Tape::new();
    let vars = bind(&mut tape, params, &frozen);
    let mut ctx = LayerCtx { config: &params.config, vars: &vars, dropout: None };
    let enc_out = encode(&mut tape, params, &mut ctx, batch, &real)?;
    let memory = tape.value(enc_out).clone();
    drop(tape);

    let mut input = DecoderInput::first_step(batch);
    let mut out = alloc::vec![S::zero(); rows * tp * p];
    for i in 0..tp {
        let mut tape = Tape::new();
        let vars = bind(&mut tape, params, &frozen);
        let mut ctx = LayerCtx { config: &params.config, vars: &vars, dropout: None };
        let mem = tape.constant(memory.clone());
        let y = decode(&mut tape, params, &mut ctx, batch, &input, mem, &real)?;
        let y = tape.value(y).data();
        let l = input.len;
        let mut step = Vec::with_capacity(rows * p);
        for r in 0..rows {
            let last = &y[(r * l + l - 1) * p..][..p];
            out[(r * tp + i) * p..][..p].copy_from_slice(last);
            step.extend(last.iter().map(|v| v.as_f64()));
        }
        if i + 1 < tp {
            input.push_step(&step, p);
        }
    }
    Tensor::new(&[batch.batch_size, batch.num_locations, tp, p], out)
}

/// Either decoding mode. Autoregressive decoding is inference-only; its
/// output is a constant on `tape`.
pub fn forward<S: Scalar>(
    tape: &mut Tape<S>,
    params: &ModelParams<S>,
    vars: &[Var],
    batch: &MaskedBatch,
    mode: Mode,
    training: bool,
    rng: &mut Stream,
) -> Result<Var> {
    match mode {
        Mode::TeacherForced => forward_teacher_forced(tape, params, vars, batch, training, rng),
        Mode::Autoregressive if training => bail!(Contract, "autoregressive decoding is not available in training mode"),
        Mode::Autoregressive => {
            let y = forward_autoregressive(params, batch)?;
            Ok(tape.constant(y))
        }
    }
}
