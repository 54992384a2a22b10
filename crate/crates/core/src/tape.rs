//! Reverse-mode automatic differentiation over a linear operation record.
//!
//! A [`Tape`] owns every tensor produced during a forward pass. Operations
//! append a node and return a [`Var`] handle; [`Tape::backward`] walks the
//! nodes in exact reverse order and accumulates gradients into every node
//! that requires one.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::{numel, strides, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    MatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Softmax(Var, usize),
    MaskFill(Var, Vec<bool>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        rstd: Vec<S>,
    },
    Relu(Var),
    Dropout(Var, Vec<S>),
    Embedding(Var, Vec<usize>),
    Sum(Var),
    MaskedMae {
        pred: Var,
        target: Vec<S>,
        mask: Vec<bool>,
        count: usize,
    },
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

/// Shape of one attention-score matrix (queries × keys) built on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionShape {
    pub queries: usize,
    pub keys: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    backward_done: bool,
    attention: Vec<AttentionShape>,
}

/// Right-aligned broadcast of two shapes.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::dim(op, a, b)),
        };
    }
    Ok(out)
}

/// Strides of `shape` viewed inside `out` (zero on broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let st = strides(shape);
    let off = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < off || shape[i - off] == 1 {
                0
            } else {
                st[i - off]
            }
        })
        .collect()
}

/// Visit every output position with the matching offsets into both operands.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total = numel(out);
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..total {
        f(i, oa, ob);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * idx[ax];
            ob -= sb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

struct MatMulLayout {
    lead: Vec<usize>,
    lead_a: Vec<usize>,
    lead_b: Vec<usize>,
    m: usize,
    k: usize,
    r: usize,
}

fn matmul_layout(a: &[usize], b: &[usize]) -> Result<MatMulLayout> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::dim("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, r) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(Error::dim("matmul", a, b));
    }
    let la = &a[..a.len() - 2];
    let lb = &b[..b.len() - 2];
    let lead = broadcast_shape("matmul", la, lb).map_err(|_| Error::dim("matmul", a, b))?;
    Ok(MatMulLayout {
        lead_a: broadcast_strides(la, &lead),
        lead_b: broadcast_strides(lb, &lead),
        lead,
        m,
        k,
        r,
    })
}

/// Split `shape` around `axis` into (outer, len, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, len: usize) -> &mut Vec<S> {
    slot.get_or_insert_with(|| vec![S::zero(); len])
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            attention: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Shapes of every value on the tape, in recording order.
    pub fn shapes(&self) -> impl Iterator<Item = &[usize]> {
        self.nodes.iter().map(|n| n.value.shape())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    /// Record the shape of an attention-score matrix.
    pub fn record_attention(&mut self, queries: usize, keys: usize) {
        self.attention.push(AttentionShape { queries, keys });
    }

    pub fn attention_shapes(&self) -> &[AttentionShape] {
        &self.attention
    }

    // ── elementwise ─────────────────────────────────────────────────────

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(S, S) -> S) -> Result<(Tensor<S>, Vec<usize>)> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out = broadcast_shape(name, &sa, &sb)?;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut data = vec![S::zero(); numel(&out)];
        for_each_broadcast(
            &out,
            &broadcast_strides(&sa, &out),
            &broadcast_strides(&sb, &out),
            |i, ia, ib| data[i] = f(xa[ia], xb[ib]),
        );
        Ok((Tensor::new(&out, data)?, out))
    }

    /// Broadcasting sum.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Broadcasting difference.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b), &[a, b]))
    }

    /// Broadcasting product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(t, Op::Relu(x), &[x])
    }

    // ── linear algebra ──────────────────────────────────────────────────

    /// Batched matrix product `⟨..,M,K⟩ × ⟨..,K,R⟩` with broadcast leading axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let lay = matmul_layout(self.shape(a), self.shape(b))?;
        let (m, k, r) = (lay.m, lay.k, lay.r);
        let xa = self.value(a).data();
        let xb = self.value(b).data();
        let mut out = vec![S::zero(); numel(&lay.lead) * m * r];
        for_each_broadcast(&lay.lead, &lay.lead_a, &lay.lead_b, |li, ia, ib| {
            let pa = &xa[ia * m * k..][..m * k];
            let pb = &xb[ib * k * r..][..k * r];
            let po = &mut out[li * m * r..][..m * r];
            for i in 0..m {
                let row = &mut po[i * r..(i + 1) * r];
                for kk in 0..k {
                    let av = pa[i * k + kk];
                    let brow = &pb[kk * r..(kk + 1) * r];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        });
        let mut shape = lay.lead.clone();
        shape.extend([m, r]);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::MatMul(a, b), &[a, b]))
    }

    // ── shape ───────────────────────────────────────────────────────────

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Materializing permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x).permute(perm)?;
        Ok(self.push(t, Op::Permute(x, perm.to_vec()), &[x]))
    }

    // ── normalization ───────────────────────────────────────────────────

    /// Softmax along `axis`. Entries equal to −∞ map to exactly zero and a
    /// slice that is entirely −∞ produces all zeros.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let xs = self.value(x).data();
        let mut out = vec![S::zero(); xs.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = S::neg_infinity();
                for j in 0..len {
                    let v = xs[base + j * inner];
                    if v > max {
                        max = v;
                    }
                }
                if max == S::neg_infinity() {
                    continue;
                }
                let mut sum = S::zero();
                for j in 0..len {
                    let e = (xs[base + j * inner] - max).exp_libm();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Softmax(x, axis), &[x]))
    }

    /// Replace entries where `mask` is true with −∞.
    pub fn mask_fill(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let n = self.value(x).len();
        if mask.len() != n {
            return Err(Error::dim("mask_fill", self.shape(x), &[mask.len()]));
        }
        let mut t = self.value(x).clone();
        for (v, &m) in t.data_mut().iter_mut().zip(&mask) {
            if m {
                *v = S::neg_infinity();
            }
        }
        Ok(self.push(t, Op::MaskFill(x, mask), &[x]))
    }

    /// Normalize over the last axis, then apply `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = shape.last().copied().unwrap_or(0);
        if d == 0 {
            return Err(Error::dim("layer_norm", &shape, &[d]));
        }
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim("layer_norm", &shape, self.shape(gain)));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xs.len() / d;
        let dn = S::from_f64(d as f64);
        let mut xhat = vec![S::zero(); xs.len()];
        let mut rstd = vec![S::zero(); rows];
        let mut out = vec![S::zero(); xs.len()];
        for r in 0..rows {
            let row = &xs[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
            let rs = S::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Inverted dropout. Identity when `training` is false or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Stream) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            bail!(Config, "dropout probability {p} outside [0, 1)");
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let scale = S::from_f64(1.0 / (1.0 - p));
        let keep: Vec<S> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { S::zero() } else { scale })
            .collect();
        let mut t = self.value(x).clone();
        for (v, &k) in t.data_mut().iter_mut().zip(&keep) {
            *v *= k;
        }
        Ok(self.push(t, Op::Dropout(x, keep), &[x]))
    }

    // ── gathers and reductions ──────────────────────────────────────────

    /// Gather rows of `table ⟨V,D⟩`; output shape is `ids_shape ++ [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || numel(ids_shape) != ids.len() {
            return Err(Error::dim("embedding", &ts, ids_shape));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index {
                what: "embedding",
                id: bad,
                size: v,
            });
        }
        let tab = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tab[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Embedding(table, ids.to_vec()), &[table]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<S>();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean absolute error over entries where `mask` is true.
    pub fn masked_mae(&mut self, pred: Var, target: &Tensor<S>, mask: &[bool]) -> Result<Var> {
        let ps = self.shape(pred);
        if ps != target.shape() || mask.len() != target.len() {
            return Err(Error::dim("masked_mae", ps, target.shape()));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            bail!(Evaluation, "masked_mae: no valid target entries");
        }
        let p = self.value(pred).data();
        let mut acc = S::zero();
        for ((&pv, &tv), &m) in p.iter().zip(target.data()).zip(mask) {
            if m {
                acc += (pv - tv).abs();
            }
        }
        let loss = acc / S::from_f64(count as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedMae {
                pred,
                target: target.data().to_vec(),
                mask: mask.to_vec(),
                count,
            },
            &[pred],
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Populate gradients of the scalar `loss` with respect to every node
    /// that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            bail!(Contract, "backward called twice without reset_grads");
        }
        if self.value(loss).len() != 1 {
            bail!(
                Contract,
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            );
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[S]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out_shape = nodes[i].value.shape();
        let wants = |v: Var| nodes[v.0].requires_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(nodes[i].op, Op::Sub(..));
                let (a, b) = (*a, *b);
                let sa = broadcast_strides(nodes[a.0].value.shape(), out_shape);
                let sb = broadcast_strides(nodes[b.0].value.shape(), out_shape);
                let (na, nb) = (nodes[a.0].value.len(), nodes[b.0].value.len());
                let (wa, wb) = (wants(a), wants(b));
                let mut ga = wa.then(|| vec![S::zero(); na]);
                let mut gb = wb.then(|| vec![S::zero(); nb]);
                for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += g[o];
                    }
                    if let Some(gb) = gb.as_mut() {
                        if neg {
                            gb[ib] -= g[o];
                        } else {
                            gb[ib] += g[o];
                        }
                    }
                });
                add_into(grads, a, ga);
                add_into(grads, b, gb);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let xa = nodes[a.0].value.data();
                let xb = nodes[b.0].value.data();
                let sa = broadcast_strides(nodes[a.0].value.shape(), out_shape);
                let sb = broadcast_strides(nodes[b.0].value.shape(), out_shape);
                let mut ga = wants(a).then(|| vec![S::zero(); xa.len()]);
                let mut gb = wants(b).then(|| vec![S::zero(); xb.len()]);
                for_each_broadcast(out_shape, &sa, &sb, |o, ia, ib| {
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] += g[o] * xb[ib];
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] += g[o] * xa[ia];
                    }
                });
                add_into(grads, a, ga);
                add_into(grads, b, gb);
            }
            Op::Scale(x, c) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for (d, &v) in gx.iter_mut().zip(g) {
                    *d += v * *c;
                }
            }
            Op::Relu(x) => {
                let xs = nodes[x.0].value.data();
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((d, &v), &xv) in gx.iter_mut().zip(g).zip(xs) {
                    if xv > S::zero() {
                        *d += v;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let lay = matmul_layout(nodes[a.0].value.shape(), nodes[b.0].value.shape())
                    .expect("shapes validated in forward");
                let (m, k, r) = (lay.m, lay.k, lay.r);
                let xa = nodes[a.0].value.data();
                let xb = nodes[b.0].value.data();
                let mut ga = wants(a).then(|| vec![S::zero(); xa.len()]);
                let mut gb = wants(b).then(|| vec![S::zero(); xb.len()]);
                for_each_broadcast(&lay.lead, &lay.lead_a, &lay.lead_b, |li, ia, ib| {
                    let go = &g[li * m * r..][..m * r];
                    let pa = &xa[ia * m * k..][..m * k];
                    let pb = &xb[ib * k * r..][..k * r];
                    if let Some(ga) = ga.as_mut() {
                        let da = &mut ga[ia * m * k..][..m * k];
                        for i in 0..m {
                            let grow = &go[i * r..(i + 1) * r];
                            for kk in 0..k {
                                let brow = &pb[kk * r..(kk + 1) * r];
                                let mut acc = S::zero();
                                for (&gv, &bv) in grow.iter().zip(brow) {
                                    acc += gv * bv;
                                }
                                da[i * k + kk] += acc;
                            }
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        let db = &mut gb[ib * k * r..][..k * r];
                        for i in 0..m {
                            let grow = &go[i * r..(i + 1) * r];
                            for kk in 0..k {
                                let av = pa[i * k + kk];
                                let drow = &mut db[kk * r..(kk + 1) * r];
                                for (d, &gv) in drow.iter_mut().zip(grow) {
                                    *d += av * gv;
                                }
                            }
                        }
                    }
                });
                add_into(grads, a, ga);
                add_into(grads, b, gb);
            }
            Op::Reshape(x) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for (d, &v) in gx.iter_mut().zip(g) {
                    *d += v;
                }
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let back = Tensor::new(out_shape, g.to_vec())
                    .and_then(|t| t.permute(&inv))
                    .expect("valid permutation");
                let gx = accumulate(&mut grads[x.0], g.len());
                for (d, &v) in gx.iter_mut().zip(back.data()) {
                    *d += v;
                }
            }
            Op::Softmax(x, axis) => {
                let y = nodes[i].value.data();
                let (outer, len, inner) = axis_split(out_shape, *axis);
                let gx = accumulate(&mut grads[x.0], g.len());
                for o in 0..outer {
                    for ii in 0..inner {
                        let base = o * len * inner + ii;
                        let mut dot = S::zero();
                        for j in 0..len {
                            let p = base + j * inner;
                            dot += y[p] * g[p];
                        }
                        for j in 0..len {
                            let p = base + j * inner;
                            gx[p] += y[p] * (g[p] - dot);
                        }
                    }
                }
            }
            Op::MaskFill(x, mask) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((d, &v), &m) in gx.iter_mut().zip(g).zip(mask) {
                    if !m {
                        *d += v;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = *out_shape.last().unwrap();
                let rows = g.len() / d;
                let gv = nodes[gain.0].value.data();
                let dn = S::from_f64(d as f64);
                if wants(*gain) || wants(*bias) {
                    let mut gg = vec![S::zero(); d];
                    let mut gb = vec![S::zero(); d];
                    for r in 0..rows {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                            gb[j] += g[r * d + j];
                        }
                    }
                    add_into(grads, *gain, wants(*gain).then_some(gg));
                    add_into(grads, *bias, wants(*bias).then_some(gb));
                }
                if wants(*x) {
                    let gx = accumulate(&mut grads[x.0], g.len());
                    for r in 0..rows {
                        let mut mean_dh = S::zero();
                        let mut mean_dh_h = S::zero();
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * d + j];
                        }
                        mean_dh /= dn;
                        mean_dh_h /= dn;
                        for j in 0..d {
                            let dh = g[r * d + j] * gv[j];
                            gx[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Dropout(x, keep) => {
                let gx = accumulate(&mut grads[x.0], g.len());
                for ((d, &v), &k) in gx.iter_mut().zip(g).zip(keep) {
                    *d += v * k;
                }
            }
            Op::Embedding(table, ids) => {
                let ts = nodes[table.0].value.shape();
                let d = ts[1];
                let gt = accumulate(&mut grads[table.0], ts[0] * d);
                for (n, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[id * d + j] += g[n * d + j];
                    }
                }
            }
            Op::Sum(x) => {
                let n = nodes[x.0].value.len();
                let gx = accumulate(&mut grads[x.0], n);
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::MaskedMae {
                pred,
                target,
                mask,
                count,
            } => {
                let p = nodes[pred.0].value.data();
                let scale = g[0] / S::from_f64(*count as f64);
                let gp = accumulate(&mut grads[pred.0], p.len());
                for (((d, &pv), &tv), &m) in gp.iter_mut().zip(p).zip(target).zip(mask) {
                    if m {
                        let e = pv - tv;
                        if e > S::zero() {
                            *d += scale;
                        } else if e < S::zero() {
                            *d -= scale;
                        }
                    }
                }
            }
        }
    }
}

fn add_into<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, g: Option<Vec<S>>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
