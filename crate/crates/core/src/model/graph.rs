//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! tape visits every node after all of its consumers.

use super::{ModelError, Tensor};
use crate::Scalar;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: T },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMul { a: Var, b: Var, trans_b: bool },
    SoftmaxRows(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: (usize, usize), pad: (usize, usize) },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: (usize, usize), pad: (usize, usize) },
    ChannelMix { x: Var, w: Var, b: Option<Var>, groups: usize },
    Csa { q: Var, k: Var, v: Var, heads: usize, att: Vec<T> },
    Embedding { table: Var, idx: Vec<usize> },
    Mse { a: Var, b: Var },
    Dot { x: Var, c: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. Values are computed eagerly as nodes are added.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    /// Activation pattern imposed on ReLUs, consumed in tape order.
    relu_masks: Option<(Vec<bool>, usize)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

fn mismatch(msg: String) -> ModelError {
    ModelError::ShapeMismatch(msg)
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn conv_out(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    (n + 2 * p).checked_sub(k).map(|v| v / s + 1)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            relu_masks: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Which side of the kink every ReLU input is on, in tape order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|v| *v > T::zero()));
            }
        }
        out
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(), ModelError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var, ModelError> {
        self.same_shape(a, b, "elementwise")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::from_vec(x.shape(), data)?;
        Ok(self.push(t, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ModelError> {
        self.zip_with(a, b, Op::Add(a, b), |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ModelError> {
        self.zip_with(a, b, Op::Sub(a, b), |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ModelError> {
        self.zip_with(a, b, Op::Mul(a, b), |p, q| p * q)
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let t = self.value(x).map(|v| scale * v + shift);
        self.push(t, Op::Affine { x, scale }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.tanh());
        self.push(t, Op::Tanh(x), &[x])
    }

    /// A graph whose ReLUs follow `pattern` (as returned by
    /// [`Graph::relu_pattern`]) instead of the sign of their input, so the
    /// tape stays on one linear piece. Meant for forward evaluation only.
    pub fn with_relu_pattern(pattern: Vec<bool>) -> Self {
        Graph {
            nodes: Vec::new(),
            relu_masks: Some((pattern, 0)),
        }
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let t = match &mut self.relu_masks {
            Some((mask, pos)) => {
                let start = *pos;
                *pos = (start + xv.len()).min(mask.len());
                let m = &mask[start..*pos];
                let mut t = xv.clone();
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    if !m.get(i).copied().unwrap_or(*v > T::zero()) {
                        *v = T::zero();
                    }
                }
                t
            }
            None => xv.map(|v| v.max(T::zero())),
        };
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, ModelError> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x), &[x]))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, ModelError> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch(format!("concat axis {axis} for rank {}", base.len())));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(mismatch(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.dim(axis) * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::from_vec(&shape, data)?;
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, ModelError> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(mismatch(format!("slice {start}+{len} on axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::from_vec(&shape, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }, &[x]))
    }

    /// `x · wᵀ + b` for `x: [n, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, ModelError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(mismatch(format!("linear: x {xs:?}, w {ws:?}")));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return Err(mismatch(format!("linear bias {:?} for {dout} outputs", self.shape(b))));
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); n * dout];
        for i in 0..n {
            let xr = &xv[i * din..(i + 1) * din];
            for o in 0..dout {
                let wr = &wv[o * din..(o + 1) * din];
                let mut acc = bv.map_or(T::zero(), |b| b[o]);
                for k in 0..din {
                    acc += xr[k] * wr[k];
                }
                out[i * dout + o] = acc;
            }
        }
        let t = Tensor::from_vec(&[n, dout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Linear { x, w, b }, &inputs))
    }

    /// `a · b` (or `a · bᵀ`) for 2-D operands.
    pub fn matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, ModelError> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 {
            return Err(mismatch(format!("matmul: {as_:?}, {bs:?}")));
        }
        let (m, k) = (as_[0], as_[1]);
        let (kb, n) = if trans_b { (bs[1], bs[0]) } else { (bs[0], bs[1]) };
        if k != kb {
            return Err(mismatch(format!("matmul: {as_:?}, {bs:?}, trans_b={trans_b}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    let bb = if trans_b { bv[j * k + p] } else { bv[p * n + j] };
                    acc += av[i * k + p] * bb;
                }
                out[i * n + j] = acc;
            }
        }
        let t = Tensor::from_vec(&[m, n], out)?;
        Ok(self.push(t, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let cols = *t.shape().last().unwrap_or(&1);
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            softmax_in_place(row);
        }
        let t = Tensor::from_vec(t.shape(), data).expect("same length");
        self.push(t, Op::SoftmaxRows(x), &[x])
    }

    /// 2-D convolution of `x: [ci, h, w]` with `w: [co, ci, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var, ModelError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] {
            return Err(mismatch(format!("conv2d: x {xs:?}, w {ws:?}")));
        }
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        let ho = conv_out(h, kh, stride.0, pad.0);
        let wo = conv_out(wd, kw, stride.1, pad.1);
        let (ho, wo) = match (ho, wo) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => return Err(mismatch(format!("conv2d: input {xs:?} smaller than kernel {ws:?}"))),
        };
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(mismatch(format!("conv2d bias {:?}", self.shape(b))));
            }
        }
        let geo = ConvGeo { ci, co, h, w: wd, ho, wo, kh, kw, stride, pad };
        let mut out = vec![T::zero(); co * ho * wo];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (o, plane) in out.chunks_mut(ho * wo).enumerate() {
                plane.iter_mut().for_each(|v| *v = bv[o]);
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        geo.accumulate_forward(xv, wv, &mut out);
        let t = Tensor::from_vec(&[co, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    /// Transposed convolution of `x: [ci, h, w]` with `w: [ci, co, kh, kw]`
    /// producing exactly `out_hw`; taps falling outside are dropped.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
        out_hw: (usize, usize),
    ) -> Result<Var, ModelError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] {
            return Err(mismatch(format!("conv_transpose2d: x {xs:?}, w {ws:?}")));
        }
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let (co, kh, kw) = (ws[1], ws[2], ws[3]);
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(mismatch(format!("conv_transpose2d bias {:?}", self.shape(b))));
            }
        }
        // The transposed convolution is the adjoint of a convolution from the
        // output grid to the input grid.
        let geo = ConvGeo {
            ci: co,
            co: ci,
            h: out_hw.0,
            w: out_hw.1,
            ho: h,
            wo: wd,
            kh,
            kw,
            stride,
            pad,
        };
        let mut out = vec![T::zero(); co * out_hw.0 * out_hw.1];
        if let Some(b) = b {
            let bv = self.value(b).data();
            for (o, plane) in out.chunks_mut(out_hw.0 * out_hw.1).enumerate() {
                plane.iter_mut().for_each(|v| *v = bv[o]);
            }
        }
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        geo.accumulate_input_grad(xv, wv, &mut out);
        let t = Tensor::from_vec(&[co, out_hw.0, out_hw.1], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::ConvTranspose2d { x, w, b, stride, pad }, &inputs))
    }

    /// Pointwise channel mixing. `x: [groups·ci, t, f]`, `w: [co, ci]`,
    /// `b: [co]`; the same weights are applied to every group.
    pub fn channel_mix(&mut self, x: Var, w: Var, b: Option<Var>, groups: usize) -> Result<Var, ModelError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 2 || groups == 0 || xs[0] != groups * ws[1] {
            return Err(mismatch(format!(
                "channel_mix: x {xs:?}, w {ws:?}, groups {groups}"
            )));
        }
        let (co, ci) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [co] {
                return Err(mismatch(format!("channel_mix bias {:?}", self.shape(b))));
            }
        }
        let plane = xs[1] * xs[2];
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let bv = b.map(|b| self.value(b).data());
        let mut out = vec![T::zero(); groups * co * plane];
        for g in 0..groups {
            for o in 0..co {
                let dst = &mut out[(g * co + o) * plane..(g * co + o + 1) * plane];
                if let Some(bv) = bv {
                    dst.iter_mut().for_each(|v| *v = bv[o]);
                }
                for c in 0..ci {
                    let wgt = wv[o * ci + c];
                    let src = &xv[(g * ci + c) * plane..(g * ci + c + 1) * plane];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d += wgt * s;
                    }
                }
            }
        }
        let t = Tensor::from_vec(&[groups * co, xs[1], xs[2]], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::ChannelMix { x, w, b, groups }, &inputs))
    }

    /// Channel-wise attention: per head and frame, queries `q` (C/H channels)
    /// attend over the M latent channels of `k`, and mix the matching rows of
    /// `v`. Logits are scaled by `1/√F`.
    pub fn csa(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, ModelError> {
        let (qs, ks) = (self.shape(q).to_vec(), self.shape(k).to_vec());
        if heads == 0 || qs.len() != 3 || qs[0] % heads != 0 {
            return Err(ModelError::HeadsDontDivide {
                channels: qs.first().copied().unwrap_or(0),
                heads,
            });
        }
        self.same_shape(k, v, "csa keys/values")?;
        if ks.len() != 3 || ks[0] % heads != 0 || ks[1] != qs[1] || ks[2] != qs[2] {
            return Err(mismatch(format!("csa: q {qs:?}, k {ks:?}, heads {heads}")));
        }
        let (c, t_len, f) = (qs[0], qs[1], qs[2]);
        let (ch, m) = (c / heads, ks[0] / heads);
        let scale = T::one() / T::from_usize_lossy(f).sqrt();
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let plane = t_len * f;
        let mut att = vec![T::zero(); heads * t_len * ch * m];
        let mut out = vec![T::zero(); c * plane];
        for h in 0..heads {
            for t in 0..t_len {
                let a_base = ((h * t_len + t) * ch) * m;
                for a in 0..ch {
                    let qrow = &qv[(h * ch + a) * plane + t * f..][..f];
                    let row = &mut att[a_base + a * m..a_base + (a + 1) * m];
                    for (j, r) in row.iter_mut().enumerate() {
                        let krow = &kv[(h * m + j) * plane + t * f..][..f];
                        let mut acc = T::zero();
                        for p in 0..f {
                            acc += qrow[p] * krow[p];
                        }
                        *r = acc * scale;
                    }
                    softmax_in_place(row);
                    let dst = (h * ch + a) * plane + t * f;
                    for (j, &wgt) in row.iter().enumerate() {
                        let vrow = &vv[(h * m + j) * plane + t * f..][..f];
                        for p in 0..f {
                            out[dst + p] += wgt * vrow[p];
                        }
                    }
                }
            }
        }
        let tns = Tensor::from_vec(&[c, t_len, f], out)?;
        Ok(self.push(tns, Op::Csa { q, k, v, heads, att }, &[q, k, v]))
    }

    /// Rows of `table: [vocab, dim]` selected by `idx`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var, ModelError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || idx.iter().any(|&i| i >= s[0]) {
            return Err(mismatch(format!("embedding lookup {idx:?} in {s:?}")));
        }
        let d = s[1];
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let t = Tensor::from_vec(&[idx.len(), d], data)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                idx: idx.to_vec(),
            },
            &[table],
        ))
    }

    /// Mean squared difference, a scalar of shape `[1]`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, ModelError> {
        self.same_shape(a, b, "mse")?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let n = T::from_usize_lossy(x.len().max(1));
        let s = x
            .iter()
            .zip(y)
            .fold(T::zero(), |acc, (&p, &q)| acc + (p - q) * (p - q));
        Ok(self.push(Tensor::from_vec(&[1], vec![s / n])?, Op::Mse { a, b }, &[a, b]))
    }

    /// `Σ c ⊙ x` for a constant tensor `c`.
    pub fn dot_const(&mut self, x: Var, c: Tensor<T>) -> Result<Var, ModelError> {
        if self.shape(x) != c.shape() {
            return Err(mismatch(format!("dot: {:?} vs {:?}", self.shape(x), c.shape())));
        }
        let s = self.value(x).dot(&c);
        Ok(self.push(Tensor::from_vec(&[1], vec![s])?, Op::Dot { x, c }, &[x]))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let seed = Tensor::full(self.shape(out), T::one());
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop(&self, op: &Op<T>, value: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, f: &dyn Fn(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(self.shape(v)));
            f(slot.data_mut());
        };
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &|d| add_into(d, gd));
                acc(*b, &|d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                acc(*a, &|d| add_into(d, gd));
                acc(*b, &|d| d.iter_mut().zip(gd).for_each(|(x, &y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * bv[i];
                    }
                });
                acc(*b, &|d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * av[i];
                    }
                });
            }
            Op::Affine { x, scale } => {
                acc(*x, &|d| d.iter_mut().zip(gd).for_each(|(x, &y)| *x += *scale * y));
            }
            Op::Sigmoid(x) => {
                let y = value.data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * y[i] * (T::one() - y[i]);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = value.data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        d[i] += gd[i] * (T::one() - y[i] * y[i]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        if xv[i] > T::zero() {
                            d[i] += gd[i];
                        }
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &|d| add_into(d, gd)),
            Op::Concat { parts, axis } => {
                let s = value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis] * inner;
                let mut off = 0;
                for p in parts {
                    let chunk = self.shape(*p)[*axis] * inner;
                    acc(*p, &|d| {
                        for o in 0..outer {
                            add_into(&mut d[o * chunk..(o + 1) * chunk], &gd[o * total + off..][..chunk]);
                        }
                    });
                    off += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let (full, len) = (s[*axis], value.dim(*axis));
                acc(*x, &|d| {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        add_into(&mut d[base..base + len * inner], &gd[o * len * inner..][..len * inner]);
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, din, dout) = (xs[0], xs[1], ws[0]);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &|d| {
                    for i in 0..n {
                        for o in 0..dout {
                            let go = gd[i * dout + o];
                            for k in 0..din {
                                d[i * din + k] += go * wv[o * din + k];
                            }
                        }
                    }
                });
                acc(*w, &|d| {
                    for i in 0..n {
                        for o in 0..dout {
                            let go = gd[i * dout + o];
                            for k in 0..din {
                                d[o * din + k] += go * xv[i * din + k];
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &|d| {
                        for i in 0..n {
                            add_into(d, &gd[i * dout..(i + 1) * dout]);
                        }
                    });
                }
            }
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = value.dim(1);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let bidx = |p: usize, j: usize| if *trans_b { j * k + p } else { p * n + j };
                acc(*a, &|d| {
                    for i in 0..m {
                        for j in 0..n {
                            let go = gd[i * n + j];
                            for p in 0..k {
                                d[i * k + p] += go * bv[bidx(p, j)];
                            }
                        }
                    }
                });
                acc(*b, &|d| {
                    for i in 0..m {
                        for j in 0..n {
                            let go = gd[i * n + j];
                            for p in 0..k {
                                d[bidx(p, j)] += go * av[i * k + p];
                            }
                        }
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let cols = *value.shape().last().unwrap_or(&1);
                let y = value.data();
                acc(*x, &|d| {
                    for r in 0..y.len() / cols.max(1) {
                        let ys = &y[r * cols..(r + 1) * cols];
                        let gs = &gd[r * cols..(r + 1) * cols];
                        let dotp = ys.iter().zip(gs).fold(T::zero(), |a, (&p, &q)| a + p * q);
                        for c in 0..cols {
                            d[r * cols + c] += ys[c] * (gs[c] - dotp);
                        }
                    }
                });
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let geo = ConvGeo {
                    ci: xs[0],
                    co: ws[0],
                    h: xs[1],
                    w: xs[2],
                    ho: value.dim(1),
                    wo: value.dim(2),
                    kh: ws[2],
                    kw: ws[3],
                    stride: *stride,
                    pad: *pad,
                };
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &|d| geo.accumulate_input_grad(gd, wv, d));
                acc(*w, &|d| geo.accumulate_weight_grad(xv, gd, d));
                if let Some(b) = b {
                    acc(*b, &|d| plane_sums_into(d, gd));
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let geo = ConvGeo {
                    ci: ws[1],
                    co: xs[0],
                    h: value.dim(1),
                    w: value.dim(2),
                    ho: xs[1],
                    wo: xs[2],
                    kh: ws[2],
                    kw: ws[3],
                    stride: *stride,
                    pad: *pad,
                };
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                // Forward was the input adjoint of a convolution, so the roles swap;
                // the `[ci, co, kh, kw]` layout is that convolution's own layout.
                acc(*x, &|d| geo.accumulate_forward(gd, wv, d));
                acc(*w, &|d| geo.accumulate_weight_grad(gd, xv, d));
                if let Some(b) = b {
                    acc(*b, &|d| plane_sums_into(d, gd));
                }
            }
            Op::ChannelMix { x, w, b, groups } => {
                let (co, ci) = (self.shape(*w)[0], self.shape(*w)[1]);
                let plane = value.dim(1) * value.dim(2);
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                acc(*x, &|d| {
                    for g in 0..*groups {
                        for o in 0..co {
                            let go = &gd[(g * co + o) * plane..][..plane];
                            for c in 0..ci {
                                let wgt = wv[o * ci + c];
                                let dst = &mut d[(g * ci + c) * plane..][..plane];
                                for (p, &q) in dst.iter_mut().zip(go) {
                                    *p += wgt * q;
                                }
                            }
                        }
                    }
                });
                acc(*w, &|d| {
                    for g in 0..*groups {
                        for o in 0..co {
                            let go = &gd[(g * co + o) * plane..][..plane];
                            for c in 0..ci {
                                let src = &xv[(g * ci + c) * plane..][..plane];
                                d[o * ci + c] += src.iter().zip(go).fold(T::zero(), |a, (&p, &q)| a + p * q);
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    acc(*b, &|d| {
                        for g in 0..*groups {
                            for o in 0..co {
                                d[o] += gd[(g * co + o) * plane..][..plane].iter().fold(T::zero(), |a, &v| a + v);
                            }
                        }
                    });
                }
            }
            Op::Csa { q, k, v, heads, att } => {
                let (c, t_len, f) = (value.dim(0), value.dim(1), value.dim(2));
                let heads = *heads;
                let (ch, m) = (c / heads, self.shape(*k)[0] / heads);
                let plane = t_len * f;
                let scale = T::one() / T::from_usize_lossy(f).sqrt();
                let (qv, kv, vv) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                // Gradient of the logits, shared by the q and k adjoints.
                let mut dlogit = vec![T::zero(); att.len()];
                for h in 0..heads {
                    for t in 0..t_len {
                        let a_base = ((h * t_len + t) * ch) * m;
                        for a in 0..ch {
                            let go = &gd[(h * ch + a) * plane + t * f..][..f];
                            let row = &att[a_base + a * m..][..m];
                            let mut datt = vec![T::zero(); m];
                            for (j, da) in datt.iter_mut().enumerate() {
                                let vrow = &vv[(h * m + j) * plane + t * f..][..f];
                                *da = go.iter().zip(vrow).fold(T::zero(), |s, (&p, &q)| s + p * q);
                            }
                            let dotp = row.iter().zip(&datt).fold(T::zero(), |s, (&p, &q)| s + p * q);
                            for j in 0..m {
                                dlogit[a_base + a * m + j] = row[j] * (datt[j] - dotp) * scale;
                            }
                        }
                    }
                }
                acc(*v, &|d| {
                    for h in 0..heads {
                        for t in 0..t_len {
                            let a_base = ((h * t_len + t) * ch) * m;
                            for a in 0..ch {
                                let go = &gd[(h * ch + a) * plane + t * f..][..f];
                                for j in 0..m {
                                    let wgt = att[a_base + a * m + j];
                                    let dst = &mut d[(h * m + j) * plane + t * f..][..f];
                                    for p in 0..f {
                                        dst[p] += wgt * go[p];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*q, &|d| {
                    for h in 0..heads {
                        for t in 0..t_len {
                            let a_base = ((h * t_len + t) * ch) * m;
                            for a in 0..ch {
                                let dst = &mut d[(h * ch + a) * plane + t * f..][..f];
                                for j in 0..m {
                                    let dl = dlogit[a_base + a * m + j];
                                    let krow = &kv[(h * m + j) * plane + t * f..][..f];
                                    for p in 0..f {
                                        dst[p] += dl * krow[p];
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*k, &|d| {
                    for h in 0..heads {
                        for t in 0..t_len {
                            let a_base = ((h * t_len + t) * ch) * m;
                            for a in 0..ch {
                                let qrow = &qv[(h * ch + a) * plane + t * f..][..f];
                                for j in 0..m {
                                    let dl = dlogit[a_base + a * m + j];
                                    let dst = &mut d[(h * m + j) * plane + t * f..][..f];
                                    for p in 0..f {
                                        dst[p] += dl * qrow[p];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Embedding { table, idx } => {
                let dim = self.shape(*table)[1];
                acc(*table, &|d| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_into(&mut d[i * dim..(i + 1) * dim], &gd[r * dim..(r + 1) * dim]);
                    }
                });
            }
            Op::Mse { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let coef = T::lit(2.0) * gd[0] / T::from_usize_lossy(av.len().max(1));
                acc(*a, &|d| {
                    for i in 0..d.len() {
                        d[i] += coef * (av[i] - bv[i]);
                    }
                });
                acc(*b, &|d| {
                    for i in 0..d.len() {
                        d[i] -= coef * (av[i] - bv[i]);
                    }
                });
            }
            Op::Dot { x, c } => {
                let cv = c.data();
                acc(*x, &|d| {
                    for i in 0..d.len() {
                        d[i] += gd[0] * cv[i];
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn plane_sums_into<T: Scalar>(dst: &mut [T], g: &[T]) {
    let plane = g.len() / dst.len().max(1);
    for (o, d) in dst.iter_mut().enumerate() {
        *d += g[o * plane..(o + 1) * plane].iter().fold(T::zero(), |a, &v| a + v);
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Geometry of a strided, zero-padded 2-D convolution from an input grid
/// `ci × h × w` to an output grid `co × ho × wo`, weights `[co, ci, kh, kw]`.
struct ConvGeo {
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl ConvGeo {
    /// Output columns `j` whose input column `j·s + kj − p` lies inside `[0, w)`.
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let (s, p) = (self.stride.1, self.pad.1);
        let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
        // Largest j with j·s + kj − p ≤ w − 1.
        let hi = if self.w + p > kj {
            ((self.w - 1 + p - kj) / s + 1).min(self.wo)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn row_in(&self, i: usize, ki: usize) -> Option<usize> {
        let r = (i * self.stride.0 + ki) as isize - self.pad.0 as isize;
        (r >= 0 && (r as usize) < self.h).then_some(r as usize)
    }

    /// `out[co, i, j] += Σ w[co, ci, ki, kj] · x[ci, i·s + ki − p, j·s + kj − p]`.
    fn accumulate_forward<T: Scalar>(&self, x: &[T], wt: &[T], out: &mut [T]) {
        let (s1, p1) = (self.stride.1, self.pad.1);
        for o in 0..self.co {
            for c in 0..self.ci {
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let wgt = wt[((o * self.ci + c) * self.kh + ki) * self.kw + kj];
                        let (lo, hi) = self.col_range(kj);
                        for i in 0..self.ho {
                            let Some(r) = self.row_in(i, ki) else { continue };
                            let src = &x[(c * self.h + r) * self.w..][..self.w];
                            let dst = &mut out[(o * self.ho + i) * self.wo..][..self.wo];
                            for j in lo..hi {
                                dst[j] += wgt * src[j * s1 + kj - p1];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::accumulate_forward`] with respect to `x`.
    fn accumulate_input_grad<T: Scalar>(&self, g: &[T], wt: &[T], dx: &mut [T]) {
        let (s1, p1) = (self.stride.1, self.pad.1);
        for o in 0..self.co {
            for c in 0..self.ci {
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let wgt = wt[((o * self.ci + c) * self.kh + ki) * self.kw + kj];
                        let (lo, hi) = self.col_range(kj);
                        for i in 0..self.ho {
                            let Some(r) = self.row_in(i, ki) else { continue };
                            let src = &g[(o * self.ho + i) * self.wo..][..self.wo];
                            let dst = &mut dx[(c * self.h + r) * self.w..][..self.w];
                            for j in lo..hi {
                                dst[j * s1 + kj - p1] += wgt * src[j];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Weight gradient `Σ g[co, i, j] · x[ci, …]`.
    fn accumulate_weight_grad<T: Scalar>(&self, x: &[T], g: &[T], dw: &mut [T]) {
        let (s1, p1) = (self.stride.1, self.pad.1);
        for o in 0..self.co {
            for c in 0..self.ci {
                for ki in 0..self.kh {
                    for kj in 0..self.kw {
                        let (lo, hi) = self.col_range(kj);
                        let mut acc = T::zero();
                        for i in 0..self.ho {
                            let Some(r) = self.row_in(i, ki) else { continue };
                            let src = &x[(c * self.h + r) * self.w..][..self.w];
                            let go = &g[(o * self.ho + i) * self.wo..][..self.wo];
                            for j in lo..hi {
                                acc += go[j] * src[j * s1 + kj - p1];
                            }
                        }
                        dw[((o * self.ci + c) * self.kh + ki) * self.kw + kj] += acc;
                    }
                }
            }
        }
    }
}
