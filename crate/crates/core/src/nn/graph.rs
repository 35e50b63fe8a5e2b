//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node to the tape, so node order is already a topological order;
//! `backward` walks the tape in reverse and accumulates into input gradients.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Handle to a node on a [`Graph`]'s tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    ConcatCols(Vec<Var>),
    Concat0(Vec<Var>),
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    SegmentMean {
        input: Var,
        segment: Vec<usize>,
        counts: Vec<usize>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    GatherPixels {
        input: Var,
        pixel: Vec<Option<usize>>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
        mask: Vec<bool>,
        count: usize,
    },
}

/// One forward/backward computation. Not shared across threads; build one per sample.
#[derive(Debug, Default)]
pub struct Graph {
    values: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    ops: Vec<Op>,
    tracked: Vec<bool>,
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.values.push(value);
        self.grads.push(None);
        self.ops.push(op);
        self.tracked.push(tracked);
        Var(self.values.len() - 1)
    }

    fn any_tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.tracked[v.0])
    }

    /// Leaf whose gradient is collected by `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that takes no part in differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.tracked[v.0]
    }

    /// Gradient after `backward`; `None` if the node was not reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    fn binary_check(&self, a: Var, b: Var, name: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "{name}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_check(a, b, "add")?;
        let t = self.zip_map(a, b, |p, q| p + q);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_check(a, b, "sub")?;
        let t = self.zip_map(a, b, |p, q| p - q);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_check(a, b, "mul")?;
        let t = self.zip_map(a, b, |p, q| p * q);
        let tracked = self.any_tracked(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), tracked))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())
            .expect("same shape");
        let tracked = self.tracked[a.0];
        self.push(t, Op::Scale(a, s), tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked[a.0];
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())
            .expect("same shape");
        let tracked = self.tracked[a.0];
        self.push(t, Op::Relu(a), tracked)
    }

    /// `input [N, D_in] · weightᵀ [D_in, D_out] + bias [D_out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(input), self.shape(weight));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("linear: input {xs:?}, weight {ws:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            if self.shape(b) != [dout] {
                return Err(shape_err(format!("linear: bias {:?}, want [{dout}]", self.shape(b))));
            }
        }
        let x = self.value(input).data();
        let wt = transpose(self.value(weight).data(), dout, din);
        let mut out = vec![0.0; n * dout];
        if dout > 0 {
            let b = bias.map(|b| self.value(b).data());
            for (r, orow) in out.chunks_exact_mut(dout).enumerate() {
                if let Some(b) = b {
                    orow.copy_from_slice(b);
                }
                for i in 0..din {
                    axpy(orow, x[r * din + i], &wt[i * dout..(i + 1) * dout]);
                }
            }
        }
        let mut vars = vec![input, weight];
        vars.extend(bias);
        let tracked = self.any_tracked(&vars);
        Ok(self.push(
            Tensor::new(vec![n, dout], out)?,
            Op::Linear {
                input,
                weight,
                bias,
            },
            tracked,
        ))
    }

    /// Concatenates `[N, d_j]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_cols: no inputs".into()))?;
        let n = self.shape(*first).first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return Err(shape_err(format!("concat_cols: part {s:?} with {n} rows")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &d) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..n {
                out[r * total + offset..r * total + offset + d]
                    .copy_from_slice(&src[r * d..(r + 1) * d]);
            }
            offset += d;
        }
        let tracked = self.any_tracked(parts);
        Ok(self.push(
            Tensor::new(vec![n, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            tracked,
        ))
    }

    /// Concatenates along the first axis; trailing dimensions must agree.
    pub fn concat0(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat0: no inputs".into()))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(shape_err(format!("concat0: {s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let tracked = self.any_tracked(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat0(parts.to_vec()), tracked))
    }

    /// `out[i, :] = input[index[i], :]` for a `[S, D]` input.
    pub fn gather_rows(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 {
            return Err(shape_err(format!("gather_rows: input {s:?}")));
        }
        let (rows, d) = (s[0], s[1]);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(shape_err(format!("gather_rows: index {bad} >= {rows}")));
        }
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(index.len() * d);
        for &i in index {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let tracked = self.any_tracked(&[input]);
        Ok(self.push(
            Tensor::new(vec![index.len(), d], out)?,
            Op::GatherRows {
                input,
                index: index.to_vec(),
            },
            tracked,
        ))
    }

    /// Mean of the rows of `[N, D]` input sharing a segment id; output `[num_segments, D]`.
    pub fn segment_mean(&mut self, input: Var, segment: &[usize], num_segments: usize) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 2 || s[0] != segment.len() {
            return Err(shape_err(format!(
                "segment_mean: input {s:?} with {} segment ids",
                segment.len()
            )));
        }
        let d = s[1];
        let mut counts = vec![0usize; num_segments];
        for &g in segment {
            if g >= num_segments {
                return Err(shape_err(format!("segment_mean: id {g} >= {num_segments}")));
            }
            counts[g] += 1;
        }
        let src = self.value(input).data();
        let mut out = vec![0.0; num_segments * d];
        for (r, &g) in segment.iter().enumerate() {
            for (o, v) in out[g * d..(g + 1) * d].iter_mut().zip(&src[r * d..(r + 1) * d]) {
                *o += v;
            }
        }
        for (g, &c) in counts.iter().enumerate() {
            if c > 0 {
                let inv = 1.0 / c as f64;
                out[g * d..(g + 1) * d].iter_mut().for_each(|v| *v *= inv);
            }
        }
        let tracked = self.any_tracked(&[input]);
        Ok(self.push(
            Tensor::new(vec![num_segments, d], out)?,
            Op::SegmentMean {
                input,
                segment: segment.to_vec(),
                counts,
            },
            tracked,
        ))
    }

    /// Same-padded, stride-1 cross-correlation: input `[C_in, H, W]`, kernel
    /// `[C_out, C_in, k, k]` with odd `k`, bias `[C_out]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || ws[2] % 2 == 0 {
            return Err(shape_err(format!("conv2d: input {xs:?}, kernel {ws:?}")));
        }
        let (cout, k) = (ws[0], ws[2]);
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(shape_err(format!("conv2d: bias {:?}, want [{cout}]", self.shape(b))));
            }
        }
        let geo = ConvGeom {
            cin: xs[0],
            h: xs[1],
            w: xs[2],
            k,
        };
        let hw = geo.h * geo.w;
        let patches = geo.patches(self.value(input).data());
        let r = geo.cin * k * k;
        let wt = self.value(weight).data();
        let mut out = vec![0.0; cout * hw];
        for co in 0..cout {
            let wrow = &wt[co * r..(co + 1) * r];
            let b0 = bias.map_or(0.0, |b| self.values[b.0].data()[co]);
            for (p, o) in out[co * hw..(co + 1) * hw].iter_mut().enumerate() {
                *o = b0 + dot(wrow, &patches[p * r..(p + 1) * r]);
            }
        }
        let mut vars = vec![input, weight];
        vars.extend(bias);
        let tracked = self.any_tracked(&vars);
        Ok(self.push(
            Tensor::new(vec![cout, geo.h, geo.w], out)?,
            Op::Conv2d {
                input,
                weight,
                bias,
            },
            tracked,
        ))
    }

    /// 2×2 max pooling with stride 2 over `[C, H, W]`; `H` and `W` must be even.
    /// Ties go to the first position in row-major window order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(shape_err(format!("max_pool2 needs [C, even H, even W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = vec![0.0; c * ho * wo];
        let mut argmax = vec![0usize; c * ho * wo];
        for ch in 0..c {
            for y in 0..ho {
                for xo in 0..wo {
                    let base = ch * h * w + 2 * y * w + 2 * xo;
                    let mut best = base;
                    for cand in [base + 1, base + w, base + w + 1] {
                        if x[cand] > x[best] {
                            best = cand;
                        }
                    }
                    let o = ch * ho * wo + y * wo + xo;
                    out[o] = x[best];
                    argmax[o] = best;
                }
            }
        }
        let tracked = self.any_tracked(&[input]);
        Ok(self.push(
            Tensor::new(vec![c, ho, wo], out)?,
            Op::MaxPool2 { input, argmax },
            tracked,
        ))
    }

    /// Nearest-neighbour 2× upsampling of `[C, H, W]`.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 {
            return Err(shape_err(format!("upsample2 needs [C, H, W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let x = self.value(input).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let src = &x[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
                let dst = &mut out[ch * h2 * w2 + y * w2..ch * h2 * w2 + (y + 1) * w2];
                for (xo, d) in dst.iter_mut().enumerate() {
                    *d = src[xo / 2];
                }
            }
        }
        let tracked = self.any_tracked(&[input]);
        Ok(self.push(Tensor::new(vec![c, h2, w2], out)?, Op::Upsample2(input), tracked))
    }

    /// For each entry of `pixel` (a flat `row * W + col` index, or `None`), gathers the
    /// `C`-vector at that pixel of a `[C, H, W]` map. `None` yields zeros. Output `[N, C]`.
    pub fn gather_pixels(&mut self, input: Var, pixel: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(input).to_vec();
        if s.len() != 3 {
            return Err(shape_err(format!("gather_pixels needs [C, H, W], got {s:?}")));
        }
        let (c, hw) = (s[0], s[1] * s[2]);
        if let Some(bad) = pixel.iter().flatten().find(|&&p| p >= hw) {
            return Err(shape_err(format!("gather_pixels: pixel {bad} >= {hw}")));
        }
        let x = self.value(input).data();
        let mut out = vec![0.0; pixel.len() * c];
        for (n, p) in pixel.iter().enumerate() {
            if let Some(p) = *p {
                for ch in 0..c {
                    out[n * c + ch] = x[ch * hw + p];
                }
            }
        }
        let tracked = self.any_tracked(&[input]);
        Ok(self.push(
            Tensor::new(vec![pixel.len(), c], out)?,
            Op::GatherPixels {
                input,
                pixel: pixel.to_vec(),
            },
            tracked,
        ))
    }

    /// Mean over rows of `-log softmax(logits)[target]`, logits `[N, C]`. Zero rows give 0.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(shape_err(format!(
                "softmax_cross_entropy: logits {s:?}, {} targets",
                targets.len()
            )));
        }
        let (n, c) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(shape_err(format!("softmax_cross_entropy: target {bad} >= {c} classes")));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &z[r * c..(r + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            total += lse - row[t];
            for (p, v) in probs[r * c..(r + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let loss = if n > 0 { total / n as f64 } else { 0.0 };
        let tracked = self.any_tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Masked mean binary cross-entropy on logits, in the stable form
    /// `max(z, 0) - z t + ln(1 + e^{-|z|})`. An empty mask gives exactly 0.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], mask: &[bool]) -> Result<Var> {
        let n = self.value(logits).numel();
        if targets.len() != n || mask.len() != n {
            return Err(shape_err(format!(
                "bce_with_logits: {n} logits, {} targets, {} mask",
                targets.len(),
                mask.len()
            )));
        }
        let z = self.value(logits).data();
        let mut total = 0.0;
        let mut count = 0;
        for ((&zi, &t), &m) in z.iter().zip(targets).zip(mask) {
            if m {
                total += zi.max(0.0) - zi * t + (-zi.abs()).exp().ln_1p();
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        let tracked = self.any_tracked(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            tracked,
        ))
    }

    /// Populates gradients of every tracked node reachable from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.tracked[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: &[f64]) {
        let values = &self.values;
        let tracked = &self.tracked;
        let mut sink = GradSink {
            values,
            grads: &mut self.grads,
            tracked,
        };
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = sink.get(*a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = sink.get(*b) {
                    axpy(gb, 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = sink.get(*a) {
                    axpy(ga, 1.0, g);
                }
                if let Some(gb) = sink.get(*b) {
                    axpy(gb, -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (values[a.0].data(), values[b.0].data());
                if let Some(ga) = sink.get(*a) {
                    for ((o, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = sink.get(*b) {
                    for ((o, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                        *o += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = sink.get(*a) {
                    axpy(ga, *s, g);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = sink.get(*a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Relu(a) => {
                let out = values[i].data();
                if let Some(ga) = sink.get(*a) {
                    for ((o, gi), y) in ga.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let xs = values[input.0].shape();
                let (n, din) = (xs[0], xs[1]);
                let dout = values[weight.0].shape()[0];
                let x = values[input.0].data();
                let w = values[weight.0].data();
                if din > 0 && dout > 0 {
                    if let Some(gx) = sink.get(*input) {
                        // Inner loops run over whichever width is longer.
                        if din >= dout {
                            for r in 0..n {
                                let gx_row = &mut gx[r * din..(r + 1) * din];
                                for o in 0..dout {
                                    axpy(gx_row, g[r * dout + o], &w[o * din..(o + 1) * din]);
                                }
                            }
                        } else {
                            let wt = transpose(w, dout, din);
                            for r in 0..n {
                                let g_row = &g[r * dout..(r + 1) * dout];
                                for i in 0..din {
                                    gx[r * din + i] += dot(g_row, &wt[i * dout..(i + 1) * dout]);
                                }
                            }
                        }
                    }
                    if let Some(gw) = sink.get(*weight) {
                        if din >= dout {
                            for r in 0..n {
                                let x_row = &x[r * din..(r + 1) * din];
                                for o in 0..dout {
                                    axpy(&mut gw[o * din..(o + 1) * din], g[r * dout + o], x_row);
                                }
                            }
                        } else {
                            let mut gwt = vec![0.0; din * dout];
                            for r in 0..n {
                                let g_row = &g[r * dout..(r + 1) * dout];
                                for i in 0..din {
                                    axpy(&mut gwt[i * dout..(i + 1) * dout], x[r * din + i], g_row);
                                }
                            }
                            for o in 0..dout {
                                for i in 0..din {
                                    gw[o * din + i] += gwt[i * dout + o];
                                }
                            }
                        }
                    }
                }
                if let Some(b) = bias {
                    if let Some(gb) = sink.get(*b) {
                        for r in 0..n {
                            axpy(gb, 1.0, &g[r * dout..(r + 1) * dout]);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let n = values[i].shape()[0];
                let total = values[i].shape()[1];
                let mut offset = 0;
                for p in parts {
                    let d = values[p.0].shape()[1];
                    if let Some(gp) = sink.get(*p) {
                        for r in 0..n {
                            axpy(
                                &mut gp[r * d..(r + 1) * d],
                                1.0,
                                &g[r * total + offset..r * total + offset + d],
                            );
                        }
                    }
                    offset += d;
                }
            }
            Op::Concat0(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = values[p.0].numel();
                    if let Some(gp) = sink.get(*p) {
                        axpy(gp, 1.0, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::GatherRows { input, index } => {
                let d = values[input.0].shape()[1];
                if let Some(gi) = sink.get(*input) {
                    for (r, &src) in index.iter().enumerate() {
                        axpy(&mut gi[src * d..(src + 1) * d], 1.0, &g[r * d..(r + 1) * d]);
                    }
                }
            }
            Op::SegmentMean {
                input,
                segment,
                counts,
            } => {
                let d = values[input.0].shape()[1];
                if let Some(gi) = sink.get(*input) {
                    for (r, &s) in segment.iter().enumerate() {
                        let inv = 1.0 / counts[s] as f64;
                        axpy(&mut gi[r * d..(r + 1) * d], inv, &g[s * d..(s + 1) * d]);
                    }
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
            } => {
                let xs = values[input.0].shape();
                let ws = values[weight.0].shape();
                let geo = ConvGeom {
                    cin: xs[0],
                    h: xs[1],
                    w: xs[2],
                    k: ws[2],
                };
                let cout = ws[0];
                let hw = geo.h * geo.w;
                let r = geo.cin * geo.k * geo.k;
                let wt = values[weight.0].data();
                let need_w = tracked[weight.0];
                let need_x = tracked[input.0];
                if need_w {
                    let patches = geo.patches(values[input.0].data());
                    let gw = sink.get(*weight).expect("tracked");
                    for co in 0..cout {
                        let gwrow = &mut gw[co * r..(co + 1) * r];
                        for p in 0..hw {
                            axpy(gwrow, g[co * hw + p], &patches[p * r..(p + 1) * r]);
                        }
                    }
                }
                if need_x {
                    let mut gpatches = vec![0.0; hw * r];
                    for p in 0..hw {
                        let gp = &mut gpatches[p * r..(p + 1) * r];
                        for co in 0..cout {
                            axpy(gp, g[co * hw + p], &wt[co * r..(co + 1) * r]);
                        }
                    }
                    let gx = sink.get(*input).expect("tracked");
                    geo.scatter_patches(&gpatches, gx);
                }
                if let Some(b) = bias {
                    if let Some(gb) = sink.get(*b) {
                        for (co, o) in gb.iter_mut().enumerate() {
                            *o += g[co * hw..(co + 1) * hw].iter().sum::<f64>();
                        }
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if let Some(gi) = sink.get(*input) {
                    for (o, &src) in argmax.iter().enumerate() {
                        gi[src] += g[o];
                    }
                }
            }
            Op::Upsample2(input) => {
                let s = values[input.0].shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (h2, w2) = (2 * h, 2 * w);
                if let Some(gi) = sink.get(*input) {
                    for ch in 0..c {
                        for y in 0..h2 {
                            let grow = &g[ch * h2 * w2 + y * w2..ch * h2 * w2 + (y + 1) * w2];
                            let dst = &mut gi[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
                            for (xo, gv) in grow.iter().enumerate() {
                                dst[xo / 2] += gv;
                            }
                        }
                    }
                }
            }
            Op::GatherPixels { input, pixel } => {
                let s = values[input.0].shape();
                let (c, hw) = (s[0], s[1] * s[2]);
                if let Some(gi) = sink.get(*input) {
                    for (n, p) in pixel.iter().enumerate() {
                        if let Some(p) = *p {
                            for ch in 0..c {
                                gi[ch * hw + p] += g[n * c + ch];
                            }
                        }
                    }
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = targets.len();
                if n > 0 {
                    let c = probs.len() / n;
                    let scale = g[0] / n as f64;
                    if let Some(gz) = sink.get(*logits) {
                        for (r, &t) in targets.iter().enumerate() {
                            for j in 0..c {
                                let ind = if j == t { 1.0 } else { 0.0 };
                                gz[r * c + j] += scale * (probs[r * c + j] - ind);
                            }
                        }
                    }
                }
            }
            Op::BceWithLogits {
                logits,
                targets,
                mask,
                count,
            } => {
                if *count > 0 {
                    let z = values[logits.0].data();
                    let scale = g[0] / *count as f64;
                    if let Some(gz) = sink.get(*logits) {
                        for (j, o) in gz.iter_mut().enumerate() {
                            if mask[j] {
                                *o += scale * (sigmoid(z[j]) - targets[j]);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// `dot` and `axpy` carry nearly all arithmetic. On x86-64 they switch to AVX builds of the
// same code when the CPU has it; no FMA, no reassociation, so results are bit-identical.

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX.
        return unsafe { dot_avx(a, b) };
    }
    dot_generic(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn dot_avx(a: &[f64], b: &[f64]) -> f64 {
    dot_generic(a, b)
}

#[inline(always)]
fn dot_generic(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators let the compiler vectorize; the order is fixed so results are
    // reproducible.
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Transposes a row-major `[rows, cols]` matrix.
fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the CPU supports AVX.
        return unsafe { axpy_avx(y, a, x) };
    }
    axpy_generic(y, a, x)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn axpy_avx(y: &mut [f64], a: f64, x: &[f64]) {
    axpy_generic(y, a, x)
}

#[inline(always)]
fn axpy_generic(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

struct GradSink<'a> {
    values: &'a [Tensor],
    grads: &'a mut [Option<Vec<f64>>],
    tracked: &'a [bool],
}

impl GradSink<'_> {
    /// Gradient buffer of `v`, allocated on first use; `None` for untracked nodes.
    fn get(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.tracked[v.0] {
            return None;
        }
        let n = self.values[v.0].numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl ConvGeom {
    /// One row per output pixel holding its `(ci, ky, kx)` receptive field; zero outside
    /// the image.
    fn patches(&self, x: &[f64]) -> Vec<f64> {
        let (h, w, k) = (self.h, self.w, self.k);
        let r = self.cin * k * k;
        let p = (k / 2) as isize;
        let mut out = Vec::with_capacity(h * w * r);
        for y in 0..h {
            for xo in 0..w {
                // Kernel columns whose source pixel lies inside the image.
                let kx0 = (p - xo as isize).max(0) as usize;
                let kx1 = ((w as isize - xo as isize + p).min(k as isize) as usize).max(kx0);
                let sx0 = xo as isize + kx0 as isize - p;
                for ci in 0..self.cin {
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - p;
                        if sy < 0 || sy >= h as isize || kx0 == kx1 {
                            out.resize(out.len() + k, 0.0);
                            continue;
                        }
                        let src = (ci * h + sy as usize) * w + sx0 as usize;
                        out.resize(out.len() + kx0, 0.0);
                        out.extend_from_slice(&x[src..src + kx1 - kx0]);
                        out.resize(out.len() + k - kx1, 0.0);
                    }
                }
            }
        }
        debug_assert_eq!(out.len(), h * w * r);
        out
    }

    /// Adjoint of [`ConvGeom::patches`]: accumulates patch gradients back onto the image.
    fn scatter_patches(&self, patches: &[f64], gx: &mut [f64]) {
        let (h, w, k) = (self.h, self.w, self.k);
        let r = self.cin * k * k;
        let p = (k / 2) as isize;
        for y in 0..h {
            for xo in 0..w {
                let row = &patches[(y * w + xo) * r..][..r];
                for ci in 0..self.cin {
                    for ky in 0..k {
                        let sy = y as isize + ky as isize - p;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let sx = xo as isize + kx as isize - p;
                            if sx >= 0 && sx < w as isize {
                                gx[(ci * h + sy as usize) * w + sx as usize] += row[(ci * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Reduces `out` to a scalar with fixed random weights so every output entry matters.
    fn probe(g: &mut Graph, out: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_tensor(g.shape(out), &mut rng);
        let w = g.constant(w);
        let m = g.mul(out, w).unwrap();
        g.sum(m)
    }

    /// Central-difference check of d loss / d inputs for `build`.
    fn check<F>(inputs: Vec<Tensor>, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
            let loss = build(&mut g, &vars);
            (g, vars, loss)
        };
        let (mut g, vars, loss) = eval(&inputs);
        g.backward(loss).unwrap();
        let h = 1e-6;
        for (k, v) in vars.iter().enumerate() {
            let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or(vec![0.0; inputs[k].numel()]);
            for i in 0..inputs[k].numel() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let (gp, _, lp) = eval(&plus);
                let (gm, _, lm) = eval(&minus);
                let numeric = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
                let a = analytic[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < 1e-5 || (a - numeric).abs() < 1e-8, "input {k}[{i}]: {a} vs {numeric}");
            }
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn elementwise_gradients() {
        let mut r = rng();
        let ins = vec![rand_tensor(&[3, 4], &mut r), rand_tensor(&[3, 4], &mut r)];
        check(ins, |g, v| {
            let a = g.add(v[0], v[1]).unwrap();
            let s = g.sub(a, v[1]).unwrap();
            let m = g.mul(s, v[1]).unwrap();
            let c = g.scale(m, -2.5);
            let r = g.relu(c);
            probe(g, r, 1)
        });
    }

    #[test]
    fn linear_gradients() {
        let mut r = rng();
        let ins = vec![rand_tensor(&[5, 3], &mut r), rand_tensor(&[4, 3], &mut r), rand_tensor(&[4], &mut r)];
        check(ins, |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2])).unwrap();
            probe(g, y, 2)
        });
    }

    #[test]
    fn concat_gather_segment_gradients() {
        let mut r = rng();
        let ins = vec![rand_tensor(&[4, 2], &mut r), rand_tensor(&[4, 3], &mut r)];
        check(ins, |g, v| {
            let c = g.concat_cols(&[v[0], v[1]]).unwrap();
            let s = g.segment_mean(c, &[0, 2, 0, 2], 3).unwrap();
            let gth = g.gather_rows(s, &[2, 0, 0, 1, 2]).unwrap();
            let z = g.concat0(&[gth, c]).unwrap();
            probe(g, z, 3)
        });
    }

    #[test]
    fn conv_pool_upsample_gradients() {
        let mut r = rng();
        let ins = vec![
            rand_tensor(&[2, 4, 6], &mut r),
            rand_tensor(&[3, 2, 3, 3], &mut r),
            rand_tensor(&[3], &mut r),
            rand_tensor(&[2, 3, 5, 5], &mut r),
        ];
        check(ins, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2])).unwrap();
            let p = g.max_pool2(y).unwrap();
            let u = g.upsample2(p).unwrap();
            let z = g.conv2d(u, v[3], None).unwrap();
            probe(g, z, 4)
        });
    }

    #[test]
    fn gather_pixels_and_losses_gradients() {
        let mut r = rng();
        let ins = vec![rand_tensor(&[4, 3, 3], &mut r)];
        check(ins, |g, v| {
            let px = g.gather_pixels(v[0], &[Some(0), None, Some(8), Some(4), Some(0)]).unwrap();
            let ce = g.softmax_cross_entropy(px, &[1, 0, 3, 2, 1]).unwrap();
            let w = g.constant(Tensor::new(vec![1, 4], vec![1.0, -0.5, 0.25, 2.0]).unwrap());
            let z = g.linear(px, w, None).unwrap();
            let b = g
                .bce_with_logits(z, &[1.0, 0.0, 1.0, 0.0, 1.0], &[true, true, false, true, true])
                .unwrap();
            g.add(ce, b).unwrap()
        });
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut r = rng();
        let (cin, cout, h, w, k) = (2, 3, 5, 4, 5);
        let x = rand_tensor(&[cin, h, w], &mut r);
        let wt = rand_tensor(&[cout, cin, k, k], &mut r);
        let b = rand_tensor(&[cout], &mut r);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wt.clone()), g.constant(b.clone()));
        let y = g.conv2d(xv, wv, Some(bv)).unwrap();
        let half = (k / 2) as isize;
        for co in 0..cout {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for di in 0..k {
                            for dj in 0..k {
                                let (yy, xx) = (i as isize + di as isize - half, j as isize + dj as isize - half);
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += wt.data()[((co * cin + ci) * k + di) * k + dj]
                                    * x.data()[(ci * h + yy as usize) * w + xx as usize];
                            }
                        }
                    }
                    let got = g.value(y).data()[(co * h + i) * w + j];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pool_routes_gradient_to_first_max() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![1, 2, 2], vec![3.0, 3.0, 1.0, 3.0]).unwrap());
        let p = g.max_pool2(x).unwrap();
        let s = g.sum(p);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn loss_values_match_closed_form() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap());
        let ce = g.softmax_cross_entropy(z, &[2, 1]).unwrap();
        let e: f64 = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        let expected = (e + 3f64.ln()) / 2.0;
        assert!((g.value(ce).item() - expected).abs() < 1e-14);

        let l = g.constant(Tensor::new(vec![3], vec![0.0, 50.0, -2.0]).unwrap());
        let b = g.bce_with_logits(l, &[1.0, 1.0, 0.0], &[true, true, true]).unwrap();
        let naive = |z: f64, t: f64| {
            let s = sigmoid(z);
            if t == 1.0 {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        };
        let expected = (naive(0.0, 1.0) + naive(50.0, 1.0) + naive(-2.0, 0.0)) / 3.0;
        assert!((g.value(b).item() - expected).abs() < 1e-12);

        let empty = g.bce_with_logits(l, &[1.0, 1.0, 0.0], &[false; 3]).unwrap();
        assert_eq!(g.value(empty).item(), 0.0);
    }

    #[test]
    fn linearity_of_linear() {
        let mut r = rng();
        let (x1, x2, w) = (rand_tensor(&[3, 4], &mut r), rand_tensor(&[3, 4], &mut r), rand_tensor(&[2, 4], &mut r));
        let mut g = Graph::new();
        let (a, b, wv) = (g.constant(x1), g.constant(x2), g.constant(w));
        let s = g.add(a, b).unwrap();
        let ys = g.linear(s, wv, None).unwrap();
        let ya = g.linear(a, wv, None).unwrap();
        let yb = g.linear(b, wv, None).unwrap();
        let sum = g.add(ya, yb).unwrap();
        for (p, q) in g.value(ys).data().iter().zip(g.value(sum).data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_and_shape_errors() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[2, 2]));
        let b = g.param(Tensor::zeros(&[2, 3]));
        assert!(g.backward(a).is_err());
        assert!(g.add(a, b).is_err());
        assert!(g.linear(a, b, None).is_err());
        let even = g.param(Tensor::zeros(&[1, 1, 2, 2]));
        let img = g.param(Tensor::zeros(&[1, 4, 4]));
        assert!(g.conv2d(img, even, None).is_err());
    }
}
