//! Building blocks of the forecaster, expressed as tape operations.
//!
//! Event tensors are `⟨B,N,S,D⟩`. Temporal attention folds the location
//! axis into the batch (`⟨B·N,S,D⟩`), spatial attention folds the instant
//! axis (`⟨B·S,N,D⟩`), so attention matrices are only ever `S×S'` or `N×N`.

use alloc::vec::Vec;

use crate::data::{MaskedBatch, PAD_LOCATION};
use crate::error::{Error, Result};
use crate::model::{DecLayerIds, EncLayerIds, FeedForwardIds, Layout, LinearIds, MhaIds, ModelConfig, NormIds};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Everything a layer needs besides the tape.
pub struct LayerCtx<'a> {
    pub config: &'a ModelConfig,
    /// Tape handles of the parameters, indexed by [`Layout`] ids.
    pub vars: &'a [Var],
    /// Dropout stream; `None` disables dropout.
    pub dropout: Option<&'a mut Stream>,
}

impl LayerCtx<'_> {
    fn drop<S: Scalar>(&mut self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        match self.dropout.as_deref_mut() {
            Some(rng) if self.config.dropout > 0.0 => tape.dropout(x, self.config.dropout, true, rng),
            _ => Ok(x),
        }
    }
}

pub fn linear<S: Scalar>(tape: &mut Tape<S>, vars: &[Var], ids: LinearIds, x: Var) -> Result<Var> {
    let h = tape.matmul(x, vars[ids.weight])?;
    tape.add(h, vars[ids.bias])
}

pub fn norm<S: Scalar>(tape: &mut Tape<S>, ctx: &LayerCtx<'_>, ids: NormIds, x: Var) -> Result<Var> {
    tape.layer_norm(
        x,
        ctx.vars[ids.gain],
        ctx.vars[ids.bias],
        S::from_f64(ctx.config.layer_norm_eps),
    )
}

fn dims4<S: Scalar>(tape: &Tape<S>, x: Var) -> Result<[usize; 4]> {
    match *tape.shape(x) {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::dim("event tensor", s, &[0, 0, 0, 0])),
    }
}

/// `⟨B,N,S,D⟩ → ⟨B·N,S,D⟩` (zero-copy reinterpretation).
pub fn fold_locations<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let [b, n, s, d] = dims4(tape, x)?;
    tape.reshape(x, &[b * n, s, d])
}

/// Inverse of [`fold_locations`].
pub fn unfold_locations<S: Scalar>(tape: &mut Tape<S>, x: Var, batch: usize) -> Result<Var> {
    let [bn, s, d] = match *tape.shape(x) {
        [a, b, c] => [a, b, c],
        ref sh => return Err(Error::dim("unfold_locations", sh, &[0, 0, 0])),
    };
    tape.reshape(x, &[batch, bn / batch, s, d])
}

/// `⟨B,N,S,D⟩ → ⟨B·S,N,D⟩` (materializing permute, then reshape).
pub fn fold_instants<S: Scalar>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let [b, n, s, d] = dims4(tape, x)?;
    let p = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(p, &[b * s, n, d])
}

/// Inverse of [`fold_instants`].
pub fn unfold_instants<S: Scalar>(tape: &mut Tape<S>, x: Var, batch: usize) -> Result<Var> {
    let [bs, n, d] = match *tape.shape(x) {
        [a, b, c] => [a, b, c],
        ref sh => return Err(Error::dim("unfold_instants", sh, &[0, 0, 0])),
    };
    let r = tape.reshape(x, &[batch, bs / batch, n, d])?;
    tape.permute(r, &[0, 2, 1, 3])
}

/// Blocked-key mask `⟨B·N, Sq, Sk⟩` for attention along time. Keys of padded
/// locations are blocked; `causal` also blocks keys after the query.
pub fn temporal_block(location_real: &[bool], sq: usize, sk: usize, causal: bool) -> Option<Vec<bool>> {
    if !causal && location_real.iter().all(|&r| r) {
        return None;
    }
    let mut m = Vec::with_capacity(location_real.len() * sq * sk);
    for &real in location_real {
        for q in 0..sq {
            for k in 0..sk {
                m.push(!real || (causal && k > q));
            }
        }
    }
    Some(m)
}

/// Blocked-key mask `⟨B·S, N, N⟩` for attention across locations.
pub fn spatial_block(location_real: &[bool], batch: usize, steps: usize) -> Option<Vec<bool>> {
    if location_real.iter().all(|&r| r) {
        return None;
    }
    let n = location_real.len() / batch;
    let mut m = Vec::with_capacity(batch * steps * n * n);
    for b in 0..batch {
        let real = &location_real[b * n..(b + 1) * n];
        for _ in 0..steps {
            for _ in 0..n {
                m.extend(real.iter().map(|r| !r));
            }
        }
    }
    Some(m)
}

/// Multi-head scaled dot-product attention.
///
/// `query` is `⟨G,Sq,D⟩`, `memory` is `⟨G,Sk,D⟩`; `blocked` (`⟨G,Sq,Sk⟩`)
/// marks keys that a query may not attend to.
pub fn mha<S: Scalar>(
    tape: &mut Tape<S>,
    ctx: &LayerCtx<'_>,
    ids: &MhaIds,
    heads: usize,
    query: Var,
    memory: Var,
    blocked: Option<&[bool]>,
) -> Result<Var> {
    let (g, sq, d) = match *tape.shape(query) {
        [a, b, c] => (a, b, c),
        ref s => return Err(Error::dim("mha query", s, &[0, 0, 0])),
    };
    let sk = match *tape.shape(memory) {
        [a, b, c] if a == g && c == d => b,
        ref s => return Err(Error::dim("mha memory", s, &[g, 0, d])),
    };
    if heads == 0 || d % heads != 0 {
        return Err(Error::dim("mha heads", &[d], &[heads]));
    }
    let dh = d / heads;
    let vars = ctx.vars;
    let q = linear(tape, vars, ids.query, query)?;
    let k = linear(tape, vars, ids.key, memory)?;
    let v = linear(tape, vars, ids.value, memory)?;
    let q = tape.reshape(q, &[g, sq, heads, dh])?;
    let q = tape.permute(q, &[0, 2, 1, 3])?;
    let k = tape.reshape(k, &[g, sk, heads, dh])?;
    let kt = tape.permute(k, &[0, 2, 3, 1])?;
    let v = tape.reshape(v, &[g, sk, heads, dh])?;
    let v = tape.permute(v, &[0, 2, 1, 3])?;

    tape.record_attention(sq, sk);
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, S::from_f64(1.0 / libm::sqrt(dh as f64)));
    let scores = match blocked {
        Some(mask) => {
            if mask.len() != g * sq * sk {
                return Err(Error::dim("mha mask", &[mask.len()], &[g, sq, sk]));
            }
            let mut full = Vec::with_capacity(g * heads * sq * sk);
            for gi in 0..g {
                let m = &mask[gi * sq * sk..(gi + 1) * sq * sk];
                for _ in 0..heads {
                    full.extend_from_slice(m);
                }
            }
            tape.mask_fill(scores, full)?
        }
        None => scores,
    };
    let weights = tape.softmax(scores, 3)?;
    let ctx_v = tape.matmul(weights, v)?;
    let ctx_v = tape.permute(ctx_v, &[0, 2, 1, 3])?;
    let ctx_v = tape.reshape(ctx_v, &[g, sq, d])?;
    linear(tape, vars, ids.output, ctx_v)
}

pub fn feed_forward<S: Scalar>(tape: &mut Tape<S>, vars: &[Var], ids: &FeedForwardIds, x: Var) -> Result<Var> {
    let h = linear(tape, vars, ids.hidden, x)?;
    let h = tape.relu(h);
    linear(tape, vars, ids.output, h)
}

/// `norm(x + dropout(sub))`.
fn residual<S: Scalar>(tape: &mut Tape<S>, ctx: &mut LayerCtx<'_>, ids: NormIds, x: Var, sub: Var) -> Result<Var> {
    let sub = ctx.drop(tape, sub)?;
    let s = tape.add(x, sub)?;
    norm(tape, ctx, ids, s)
}

/// Spatial self-attention sublayer with residual and norm, on `⟨B,N,S,D⟩`.
fn spatial_sublayer<S: Scalar>(
    tape: &mut Tape<S>,
    ctx: &mut LayerCtx<'_>,
    attn: &MhaIds,
    norm_ids: NormIds,
    x: Var,
    location_real: &[bool],
) -> Result<Var> {
    let [b, _, s, _] = dims4(tape, x)?;
    let folded = fold_instants(tape, x)?;
    let blocked = spatial_block(location_real, b, s);
    let a = mha(tape, ctx, attn, ctx.config.heads_spatial, folded, folded, blocked.as_deref())?;
    let a = unfold_instants(tape, a, b)?;
    residual(tape, ctx, norm_ids, x, a)
}

fn ff_sublayer<S: Scalar>(tape: &mut Tape<S>, ctx: &mut LayerCtx<'_>, ff: &FeedForwardIds, norm_ids: NormIds, x: Var) -> Result<Var> {
    let f = feed_forward(tape, ctx.vars, ff, x)?;
    residual(tape, ctx, norm_ids, x, f)
}

/// Encoder layer: temporal self-attention, spatial self-attention,
/// feed-forward; each with residual, dropout and post-norm.
pub fn enc_layer<S: Scalar>(
    tape: &mut Tape<S>,
    ctx: &mut LayerCtx<'_>,
    ids: &EncLayerIds,
    x: Var,
    location_real: &[bool],
) -> Result<Var> {
    let [b, _, t, _] = dims4(tape, x)?;
    let folded = fold_locations(tape, x)?;
    let blocked = temporal_block(location_real, t, t, false);
    let a = mha(tape, ctx, &ids.temporal, ctx.config.heads_temporal, folded, folded, blocked.as_deref())?;
    let a = unfold_locations(tape, a, b)?;
    let y = residual(tape, ctx, ids.temporal_norm, x, a)?;
    let z = spatial_sublayer(tape, ctx, &ids.spatial, ids.spatial_norm, y, location_real)?;
    ff_sublayer(tape, ctx, &ids.ff, ids.ff_norm, z)
}

/// Decoder layer: causal temporal self-attention, temporal cross-attention
/// to the encoder output, spatial self-attention, feed-forward.
pub fn dec_layer<S: Scalar>(
    tape: &mut Tape<S>,
    ctx: &mut LayerCtx<'_>,
    ids: &DecLayerIds,
    y: Var,
    enc_out: Var,
    location_real: &[bool],
) -> Result<Var> {
    let [b, _, l, _] = dims4(tape, y)?;
    let [_, _, t, _] = dims4(tape, enc_out)?;
    let heads = ctx.config.heads_temporal;

    let folded = fold_locations(tape, y)?;
    let blocked = temporal_block(location_real, l, l, true);
    let a = mha(tape, ctx, &ids.self_temporal, heads, folded, folded, blocked.as_deref())?;
    let a = unfold_locations(tape, a, b)?;
    let y1 = residual(tape, ctx, ids.self_norm, y, a)?;

    let q = fold_locations(tape, y1)?;
    let mem = fold_locations(tape, enc_out)?;
    let blocked = temporal_block(location_real, l, t, false);
    let c = mha(tape, ctx, &ids.cross, heads, q, mem, blocked.as_deref())?;
    let c = unfold_locations(tape, c, b)?;
    let y2 = residual(tape, ctx, ids.cross_norm, y1, c)?;

    let y3 = spatial_sublayer(tape, ctx, &ids.spatial, ids.spatial_norm, y2, location_real)?;
    ff_sublayer(tape, ctx, &ids.ff, ids.ff_norm, y3)
}

/// Point prediction head, `D → P`.
pub fn pred<S: Scalar>(tape: &mut Tape<S>, vars: &[Var], ids: LinearIds, z: Var) -> Result<Var> {
    linear(tape, vars, ids, z)
}

/// Sinusoidal encoding of chronological positions `start..start+len`, `⟨len, D⟩`.
pub fn positional_encoding<S: Scalar>(start: usize, len: usize, d: usize) -> Tensor<S> {
    Tensor::from_fn(&[len, d], |i| {
        let pos = (start + i / d) as f64;
        let j = i % d;
        let freq = libm::pow(10_000.0, -((j - j % 2) as f64) / d as f64);
        S::from_f64(if j % 2 == 0 { libm::sin(pos * freq) } else { libm::cos(pos * freq) })
    })
}

/// Validity of each `(b, n)` row of a batch.
pub fn location_real(batch: &MaskedBatch) -> Vec<bool> {
    batch.location_ids.iter().map(|&id| id != PAD_LOCATION).collect()
}

/// Sum of measurement projection and event descriptors for a block of
/// instants. `values` is `⟨B,N,L,P⟩`, `valid` is `⟨B,N,L⟩`, and descriptor
/// positions are `positions[i]` within each instance.
#[allow(clippy::too_many_arguments)]
fn embed_events<S: Scalar>(
    tape: &mut Tape<S>,
    ctx: &LayerCtx<'_>,
    layout: &Layout,
    batch: &MaskedBatch,
    values: &[f64],
    valid: &[bool],
    positions: core::ops::Range<usize>,
) -> Result<Var> {
    let (b, n, p) = (batch.batch_size, batch.num_locations, batch.features);
    let l = positions.len();
    let h = batch.horizon();
    let d = ctx.config.d_model;
    let vars = ctx.vars;

    let meas = tape.constant(Tensor::new(&[b, n, l, p], values.iter().map(|&v| S::from_f64(v)).collect())?);
    let proj = linear(tape, vars, layout.input, meas)?;
    let keep = tape.constant(Tensor::new(
        &[b, n, l, 1],
        valid.iter().map(|&ok| if ok { S::one() } else { S::zero() }).collect(),
    )?);
    let proj = tape.mul(proj, keep)?;

    let loc_ids: Vec<usize> = batch
        .location_ids
        .iter()
        .map(|&id| if id == PAD_LOCATION { 0 } else { id as usize })
        .collect();
    let loc = tape.embedding(vars[layout.location_embed], &loc_ids, &[b, n, 1])?;
    let mut day_ids = Vec::with_capacity(b * l);
    let mut slot_ids = Vec::with_capacity(b * l);
    for bi in 0..b {
        for pos in positions.clone() {
            day_ids.push(batch.day_ids[bi * h + pos] as usize);
            slot_ids.push(batch.slot_ids[bi * h + pos] as usize);
        }
    }
    let day = tape.embedding(vars[layout.day_embed], &day_ids, &[b, 1, l])?;
    let slot = tape.embedding(vars[layout.slot_embed], &slot_ids, &[b, 1, l])?;

    let x = tape.add(proj, loc)?;
    let x = tape.add(x, day)?;
    let mut x = tape.add(x, slot)?;
    if ctx.config.use_positional_encoding {
        let pe = tape.constant(positional_encoding(positions.start, l, d));
        x = tape.add(x, pe)?;
    }
    Ok(x)
}

/// Encoder input: source instants `0..T`, `⟨B,N,T,D⟩`.
pub fn enc_ini<S: Scalar>(tape: &mut Tape<S>, ctx: &LayerCtx<'_>, layout: &Layout, batch: &MaskedBatch) -> Result<Var> {
    let (b, n, t, p) = (batch.batch_size, batch.num_locations, batch.source_len, batch.features);
    let h = batch.horizon();
    let mut values = Vec::with_capacity(b * n * t * p);
    let mut valid = Vec::with_capacity(b * n * t);
    for bn in 0..b * n {
        values.extend_from_slice(&batch.measurements[bn * h * p..][..t * p]);
        valid.extend_from_slice(&batch.valid[bn * h..][..t]);
    }
    embed_events(tape, ctx, layout, batch, &values, &valid, 0..t)
}

/// Decoder input `⟨B,N,L,D⟩`: step `i` carries the measurement at position
/// `T-1+i` (shifted right) with the descriptors of target position `T+i`.
pub fn dec_ini<S: Scalar>(
    tape: &mut Tape<S>,
    ctx: &LayerCtx<'_>,
    layout: &Layout,
    batch: &MaskedBatch,
    input: &super::DecoderInput,
) -> Result<Var> {
    let t = batch.source_len;
    let expected = batch.batch_size * batch.num_locations * input.len;
    if input.valid.len() != expected || input.values.len() != expected * batch.features || input.len > batch.target_len {
        return Err(Error::dim("dec_ini", &[input.valid.len()], &[expected]));
    }
    embed_events(tape, ctx, layout, batch, &input.values, &input.valid, t..t + input.len)
}
