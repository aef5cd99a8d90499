//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op appends a node holding its forward value. Node indices are a topological
//! order, so `backward` walks the tape once from the loss down to index 0 and adds each
//! node's vector-Jacobian product into its inputs (fan-out accumulates additively).

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::kernels::{self, ConvGeom, NormCache};
use crate::param::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    LinComb(Vec<(Var, T)>),
    AddScalar(Var),
    Mul(Var, Var),
    Square(Var),
    Abs(Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    InstanceNorm { input: Var, gamma: Var, beta: Var, cache: NormCache<T> },
    UpsampleNearest2(Var),
    ConcatChannels(Var, Var),
    ChannelMean(Var),
    Reshape(Var),
    PadReplicate(Var, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Multiply-accumulate count of one recorded convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvRecord {
    pub weight: Option<ParamId>,
    pub macs: u64,
}

/// Gradients produced by [`Graph::backward`] for parameters and grad-requiring leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    params: BTreeMap<ParamId, Tensor<T>>,
    leaves: BTreeMap<Var, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn wrt(&self, leaf: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&leaf)
    }
}

/// The tape. Parameters are read from an optional [`ParamStore`] borrowed for the
/// lifetime of the graph, so a store cannot change while a forward pass refers to it.
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;

pub struct Graph<'s, T> {
    store: Option<&'s ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_vars: BTreeMap<ParamId, Var>,
    frozen: Vec<bool>,
    convs: Vec<ConvRecord>,
    kink_distance: f64,
    kink_signature: u64,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
            frozen: Vec::new(),
            convs: Vec::new(),
            kink_distance: f64::INFINITY,
            kink_signature: FNV_OFFSET,
        }
    }

    pub fn with_params(store: &'s ParamStore<T>) -> Self {
        Graph { store: Some(store), frozen: vec![false; store.len()], ..Self::new() }
    }

    /// Marks every parameter whose name satisfies `pred` as constant for this graph.
    pub fn freeze(&mut self, pred: impl Fn(&str) -> bool) {
        if let Some(store) = self.store {
            for (id, p) in store.iter() {
                if pred(&p.name) {
                    self.frozen[id.0] = true;
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Convolutions recorded so far, in execution order.
    pub fn conv_records(&self) -> &[ConvRecord] {
        &self.convs
    }

    pub fn total_macs(&self) -> u64 {
        self.convs.iter().map(|c| c.macs).sum()
    }

    /// Smallest distance to a kink seen at a relu, leaky-relu or abs input.
    pub fn kink_distance(&self) -> f64 {
        self.kink_distance
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a data input that never receives gradients.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a fixed tensor, e.g. a frozen kernel. Identical to [`Graph::input`].
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value)
    }

    /// Records a leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf for a stored parameter. Repeated calls return the same node, so every use of
    /// a shared parameter feeds one gradient slot.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(&id) {
            return Ok(v);
        }
        let store = self.store.ok_or_else(|| arg_err!("graph has no parameter store"))?;
        if id.0 >= store.len() {
            return Err(arg_err!("unknown parameter id {}", id.0));
        }
        let value = store.value(id).clone();
        let trainable = !self.frozen[id.0];
        let v = self.push(value, Op::Param(id), trainable);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var> {
        let store = self.store.ok_or_else(|| arg_err!("graph has no parameter store"))?;
        let id = store.id(name).ok_or_else(|| arg_err!("unknown parameter `{name}`"))?;
        self.param(id)
    }

    // ---- elementwise ----

    /// `Σ coeffᵢ · xᵢ` over equally shaped inputs.
    pub fn lincomb(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let (first, _) = *terms.first().ok_or_else(|| arg_err!("lincomb of no terms"))?;
        let shape = self.value(first).shape().to_vec();
        let mut out = vec![T::zero(); self.value(first).numel()];
        let mut recorded = Vec::with_capacity(terms.len());
        for &(v, c) in terms {
            let x = self.value(v);
            if x.shape() != shape.as_slice() {
                return Err(dim_err!("lincomb shape mismatch: {:?} vs {:?}", x.shape(), shape));
            }
            let c = T::from_f64(c);
            for (o, &xv) in out.iter_mut().zip(x.data()) {
                *o += c * xv;
            }
            recorded.push((v, c));
        }
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let needs = self.needs(&vars);
        Ok(self.push(Tensor::new(shape, out)?, Op::LinComb(recorded), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(&[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(&[(a, 1.0), (b, -1.0)])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.lincomb(&[(a, c)])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = self.value(a).map(|x| x + c);
        let needs = self.needs(&[a]);
        self.push(value, Op::AddScalar(a), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), needs))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let needs = self.needs(&[a]);
        self.push(value, Op::Square(a), needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        let value = self.value(a).map(|x| x.abs());
        let needs = self.needs(&[a]);
        self.push(value, Op::Abs(a), needs)
    }

    /// Hash of which side of its kink every relu, leaky-relu and abs input lies on. Two
    /// evaluations with equal signatures share one linear piece at every kink.
    pub fn kink_signature(&self) -> u64 {
        self.kink_signature
    }

    fn note_kinks(&mut self, a: Var) {
        let mut d = self.kink_distance;
        let mut h = self.kink_signature;
        for x in self.value(a).data() {
            let x = x.as_f64();
            d = d.min(x.abs());
            h = (h ^ u64::from(x > 0.0) ^ (u64::from(x < 0.0) << 1)).wrapping_mul(FNV_PRIME);
        }
        self.kink_distance = d;
        self.kink_signature = h;
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.note_kinks(a);
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let needs = self.needs(&[a]);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.note_kinks(a);
        let s = T::from_f64(slope);
        let value = self.value(a).map(|x| if x > T::zero() { x } else { s * x });
        let needs = self.needs(&[a]);
        self.push(value, Op::LeakyRelu(a, s), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.tanh());
        let needs = self.needs(&[a]);
        self.push(value, Op::Tanh(a), needs)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        match kind {
            Activation::Relu => self.relu(a),
            Activation::LeakyRelu(s) => self.leaky_relu(a, s),
            Activation::Tanh => self.tanh(a),
        }
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let needs = self.needs(&[a]);
        self.push(value, Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let needs = self.needs(&[a]);
        self.push(value, Op::Mean(a), needs)
    }

    /// `[B, C, H, W] → [B, 1, H, W]` average over channels.
    pub fn channel_mean(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        let plane = h * w;
        let x = self.value(a).data();
        let inv = T::from_f64(1.0 / c as f64);
        let mut out = vec![T::zero(); b * plane];
        for bi in 0..b {
            let o = &mut out[bi * plane..(bi + 1) * plane];
            for ci in 0..c {
                let src = &x[(bi * c + ci) * plane..(bi * c + ci + 1) * plane];
                for (ov, &sv) in o.iter_mut().zip(src) {
                    *ov += sv;
                }
            }
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::new([b, 1, h, w], out)?, Op::ChannelMean(a), needs))
    }

    // ---- layers ----

    /// Zero-padded cross-correlation.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.value(input).shape(), self.value(weight).shape(), stride, padding)?;
        if let Some(b) = bias {
            if self.value(b).shape() != [geom.out_channels] {
                return Err(dim_err!(
                    "conv2d bias shape {:?}, expected [{}]",
                    self.value(b).shape(),
                    geom.out_channels
                ));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let shape = [geom.batch, geom.out_channels, geom.out_h, geom.out_w];
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let needs = self.needs(&deps);
        let weight_id = match self.nodes[weight.0].op {
            Op::Param(id) => Some(id),
            _ => None,
        };
        self.convs.push(ConvRecord { weight: weight_id, macs: geom.macs() });
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { input, weight, bias, geom }, needs))
    }

    pub fn instance_norm(&mut self, input: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4()?;
        if h * w < 2 {
            return Err(dim_err!("instance_norm needs at least 2 spatial elements, got {h}x{w}"));
        }
        if eps <= 0.0 {
            return Err(arg_err!("instance_norm eps must be positive"));
        }
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(dim_err!("instance_norm affine parameters must have shape [{c}]"));
        }
        let (y, cache) = kernels::instance_norm_forward(
            self.value(input).data(),
            (b, c, h * w),
            self.value(gamma).data(),
            self.value(beta).data(),
            T::from_f64(eps),
        );
        let needs = self.needs(&[input, gamma, beta]);
        Ok(self.push(Tensor::new([b, c, h, w], y)?, Op::InstanceNorm { input, gamma, beta, cache }, needs))
    }

    pub fn upsample_nearest2(&mut self, a: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        let out = kernels::upsample_nearest2_forward(self.value(a).data(), (b * c, h, w));
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::new([b, c, 2 * h, 2 * w], out)?, Op::UpsampleNearest2(a), needs))
    }

    /// Concatenates two `[B, *, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, ha, wa) = self.value(a).dims4()?;
        let (bb, cb, hb, wb) = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(dim_err!(
                "concat_channels: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        let plane = ha * wa;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity((ca + cb) * plane * ba);
        for bi in 0..ba {
            out.extend_from_slice(&xa[bi * ca * plane..(bi + 1) * ca * plane]);
            out.extend_from_slice(&xb[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::new([ba, ca + cb, ha, wa], out)?, Op::ConcatChannels(a, b), needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let needs = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), needs))
    }

    /// Pads the spatial plane by `pad` pixels, replicating the nearest edge value.
    pub fn pad_replicate(&mut self, a: Var, pad: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(a).dims4()?;
        let (ho, wo) = (h + 2 * pad, w + 2 * pad);
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(b * c * ho * wo);
        for p in 0..b * c {
            let plane = &x[p * h * w..(p + 1) * h * w];
            for y in 0..ho {
                let sy = y.saturating_sub(pad).min(h - 1);
                for xx in 0..wo {
                    let sx = xx.saturating_sub(pad).min(w - 1);
                    out.push(plane[sy * w + sx]);
                }
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::new([b, c, ho, wo], out)?, Op::PadReplicate(a, pad), needs))
    }

    // ---- backward ----

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(arg_err!("backward needs a scalar loss, got shape {:?}", root.value.shape()));
        }
        if !root.needs_grad {
            return Err(Error::EmptyTape);
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), T::one()));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => {
                    out.params.insert(*id, g);
                }
                Op::LinComb(terms) => {
                    for &(v, c) in terms {
                        if c == T::one() {
                            self.accum(&mut grads, v, g.clone())?;
                        } else {
                            self.accum(&mut grads, v, g.map(|x| x * c))?;
                        }
                    }
                }
                Op::AddScalar(a) => self.accum(&mut grads, *a, g)?,
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].needs_grad {
                        self.accum(&mut grads, *a, g.zip_map(vb, |x, y| x * y)?)?;
                    }
                    if self.nodes[b.0].needs_grad {
                        self.accum(&mut grads, *b, g.zip_map(va, |x, y| x * y)?)?;
                    }
                }
                Op::Square(a) => {
                    let two = T::from_f64(2.0);
                    let d = g.zip_map(self.value(*a), |x, y| two * x * y)?;
                    self.accum(&mut grads, *a, d)?;
                }
                Op::Abs(a) => {
                    let d = g.zip_map(self.value(*a), |x, y| {
                        if y > T::zero() {
                            x
                        } else if y < T::zero() {
                            -x
                        } else {
                            T::zero()
                        }
                    })?;
                    self.accum(&mut grads, *a, d)?;
                }
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |x, y| if y > T::zero() { x } else { T::zero() })?;
                    self.accum(&mut grads, *a, d)?;
                }
                Op::LeakyRelu(a, s) => {
                    let s = *s;
                    let d = g.zip_map(self.value(*a), |x, y| if y > T::zero() { x } else { s * x })?;
                    self.accum(&mut grads, *a, d)?;
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |x, y| x * (T::one() - y * y))?;
                    self.accum(&mut grads, *a, d)?;
                }
                Op::Sum(a) => {
                    let gv = g.item()?;
                    self.accum(&mut grads, *a, Tensor::full(self.value(*a).shape(), gv))?;
                }
                Op::Mean(a) => {
                    let n = T::from_f64(self.value(*a).numel() as f64);
                    let gv = g.item()? / n;
                    self.accum(&mut grads, *a, Tensor::full(self.value(*a).shape(), gv))?;
                }
                Op::ChannelMean(a) => {
                    let (b, c, h, w) = self.value(*a).dims4()?;
                    let plane = h * w;
                    let inv = T::from_f64(1.0 / c as f64);
                    let mut d = Vec::with_capacity(b * c * plane);
                    for bi in 0..b {
                        let src = &g.data()[bi * plane..(bi + 1) * plane];
                        for _ in 0..c {
                            d.extend(src.iter().map(|&x| x * inv));
                        }
                    }
                    self.accum(&mut grads, *a, Tensor::new([b, c, h, w], d)?)?;
                }
                Op::Conv2d { input, weight, bias, geom } => {
                    let need = (
                        self.nodes[input.0].needs_grad,
                        self.nodes[weight.0].needs_grad,
                        bias.is_some_and(|b| self.nodes[b.0].needs_grad),
                    );
                    let cg = kernels::conv2d_backward(
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        g.data(),
                        geom,
                        need,
                    );
                    if let Some(dx) = cg.input {
                        self.accum(&mut grads, *input, Tensor::new(self.value(*input).shape(), dx)?)?;
                    }
                    if let Some(dw) = cg.weight {
                        self.accum(&mut grads, *weight, Tensor::new(self.value(*weight).shape(), dw)?)?;
                    }
                    if let (Some(db), Some(b)) = (cg.bias, bias) {
                        self.accum(&mut grads, *b, Tensor::new([geom.out_channels], db)?)?;
                    }
                }
                Op::InstanceNorm { input, gamma, beta, cache } => {
                    let (b, c, h, w) = self.value(*input).dims4()?;
                    let (dx, dg, db) = kernels::instance_norm_backward(
                        g.data(),
                        (b, c, h * w),
                        self.value(*gamma).data(),
                        cache,
                    );
                    self.accum(&mut grads, *input, Tensor::new([b, c, h, w], dx)?)?;
                    self.accum(&mut grads, *gamma, Tensor::new([c], dg)?)?;
                    self.accum(&mut grads, *beta, Tensor::new([c], db)?)?;
                }
                Op::UpsampleNearest2(a) => {
                    let (b, c, h, w) = self.value(*a).dims4()?;
                    let dx = kernels::upsample_nearest2_backward(g.data(), (b * c, h, w));
                    self.accum(&mut grads, *a, Tensor::new([b, c, h, w], dx)?)?;
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    self.accum(&mut grads, *a, g.reshape(shape)?)?;
                }
                Op::PadReplicate(a, pad) => {
                    let (b, c, h, w) = self.value(*a).dims4()?;
                    let (ho, wo) = (h + 2 * pad, w + 2 * pad);
                    let mut dx = vec![T::zero(); b * c * h * w];
                    for p in 0..b * c {
                        let src = &g.data()[p * ho * wo..(p + 1) * ho * wo];
                        let dst = &mut dx[p * h * w..(p + 1) * h * w];
                        for y in 0..ho {
                            let sy = y.saturating_sub(*pad).min(h - 1);
                            for xx in 0..wo {
                                let sx = xx.saturating_sub(*pad).min(w - 1);
                                dst[sy * w + sx] += src[y * wo + xx];
                            }
                        }
                    }
                    self.accum(&mut grads, *a, Tensor::new([b, c, h, w], dx)?)?;
                }
                Op::ConcatChannels(a, bv) => {
                    let (bn, ca, h, w) = self.value(*a).dims4()?;
                    let cb = self.value(*bv).dims4()?.1;
                    let plane = h * w;
                    let mut da = Vec::with_capacity(bn * ca * plane);
                    let mut db = Vec::with_capacity(bn * cb * plane);
                    for bi in 0..bn {
                        let base = bi * (ca + cb) * plane;
                        da.extend_from_slice(&g.data()[base..base + ca * plane]);
                        db.extend_from_slice(&g.data()[base + ca * plane..base + (ca + cb) * plane]);
                    }
                    self.accum(&mut grads, *a, Tensor::new([bn, ca, h, w], da)?)?;
                    self.accum(&mut grads, *bv, Tensor::new([bn, cb, h, w], db)?)?;
                }
            }
        }
        Ok(out)
    }

    fn accum(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        match grads[v.0].as_mut() {
            Some(acc) => acc.add_assign(&g),
            None => {
                grads[v.0] = Some(g);
                Ok(())
            }
        }
    }
}
