use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvGeom, GroupNormSaved};
use super::params::ParameterSet;
use super::tensor::{dims_nchw, matmul_into, Element, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation kinds the engine can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Matmul,
    Conv2d,
    Upsample2,
    Downsample2,
    GroupNorm,
    Silu,
    Exp,
    MeanSquare,
    Mean,
    ConcatChannels,
    SliceChannels,
    ScalarAffine,
    Reshape,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2(Var),
    Downsample2(Var),
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        saved: GroupNormSaved<T>,
    },
    Silu(Var),
    Exp(Var),
    MeanSquare(Var),
    Mean(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    ScalarAffine {
        x: Var,
        scale: T,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode recording of one forward pass.
///
/// Values are computed eagerly as ops are recorded; [`Tape::backward`]
/// walks the records in reverse once.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, (Var, bool)>,
    param_lookup: HashMap<String, Var>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to a recorded value, zeros when the
    /// value did not influence the loss.
    pub fn wrt(&self, var: Var, tape_value_shape: &[usize]) -> Tensor<T> {
        self.nodes
            .get(var.0)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(tape_value_shape))
    }

    /// Gradients of trainable parameters registered on the tape, keyed by name.
    pub fn params(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor<T>> {
        self.params
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
            param_lookup: HashMap::new(),
            consumed: false,
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(format!("{:?}", op_kind(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a constant input; gradients are tracked when `requires_grad`.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var, AutodiffError> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, AutodiffError> {
        self.input(value, false)
    }

    /// Records a named parameter. Repeated lookups return the same handle.
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<Var, AutodiffError> {
        if let Some(&v) = self.param_lookup.get(name) {
            return Ok(v);
        }
        let p = params
            .get(name)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))?;
        let trainable = p.trainable;
        let v = self.push(p.value.clone(), Op::Param, trainable)?;
        self.param_lookup.insert(name.to_string(), v);
        self.params.insert(name.to_string(), (v, trainable));
        Ok(v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast_binary(a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast_binary(a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.broadcast_binary(a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    fn broadcast_binary(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Tensor::new(ta.shape(), data);
        }
        let shape = kernels::broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| {
            AutodiffError::Shape(format!(
                "cannot broadcast {:?} with {:?}",
                ta.shape(),
                tb.shape()
            ))
        })?;
        let mut out = vec![T::zero(); shape.iter().product()];
        let (da, db) = (ta.data(), tb.data());
        kernels::for_each_broadcast(&shape, ta.shape(), tb.shape(), |o, ia, ib| {
            out[o] = f(da[ia], db[ib]);
        });
        Tensor::new(&shape, out)
    }

    /// 2-d matrix product `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = match (ta.shape(), tb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (sa, sb) => {
                return Err(AutodiffError::Shape(format!("matmul {sa:?} · {sb:?}")));
            }
        };
        let mut out = vec![T::zero(); m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n, false, false, T::zero());
        let out = Tensor::new(&[m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Matmul(a, b), rg)
    }

    /// 2-d convolution on NCHW input with `[cout, cin, kh, kw]` weights and
    /// zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, AutodiffError> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, cin, h, wd) = dims_nchw(tx.shape())
            .ok_or_else(|| AutodiffError::Shape(format!("conv2d input {:?} is not NCHW", tx.shape())))?;
        let (cout, wcin, kh, kw) = dims_nchw(tw.shape())
            .ok_or_else(|| AutodiffError::Shape(format!("conv2d weight {:?} is not 4-d", tw.shape())))?;
        if wcin != cin {
            return Err(AutodiffError::Shape(format!(
                "conv2d weight expects {wcin} input channels, input has {cin}"
            )));
        }
        if stride == 0 || h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(AutodiffError::Shape(format!(
                "conv2d kernel {kh}x{kw} stride {stride} does not fit {h}x{wd} with padding {pad}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [cout] {
                return Err(AutodiffError::Shape(format!(
                    "conv2d bias {:?} for {cout} output channels",
                    self.value(b).shape()
                )));
            }
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
        };
        let bias = b.map(|b| self.value(b).data());
        let out = kernels::conv2d_forward(&geom, tx.data(), tw.data(), bias);
        let (oh, ow) = geom.out_hw();
        let out = Tensor::new(&[n, cout, oh, ow], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Conv2d { x, w, b, geom }, rg)
    }

    /// Nearest-neighbour ×2 upsampling of an NCHW tensor.
    pub fn upsample2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let dims = self.nchw(x, "upsample2")?;
        let out = kernels::upsample2_forward(self.value(x).data(), dims);
        let out = Tensor::new(&[dims.0, dims.1, dims.2 * 2, dims.3 * 2], out)?;
        let rg = self.rg(x);
        self.push(out, Op::Upsample2(x), rg)
    }

    /// Keeps every second row and column, starting at the origin.
    pub fn downsample2(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let dims = self.nchw(x, "downsample2")?;
        let out = kernels::downsample2_forward(self.value(x).data(), dims);
        let out = Tensor::new(&[dims.0, dims.1, dims.2.div_ceil(2), dims.3.div_ceil(2)], out)?;
        let rg = self.rg(x);
        self.push(out, Op::Downsample2(x), rg)
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        eps: f64,
    ) -> Result<Var, AutodiffError> {
        let dims = self.nchw(x, "group_norm")?;
        let c = dims.1;
        if groups == 0 || c % groups != 0 {
            return Err(AutodiffError::Shape(format!("{c} channels not divisible into {groups} groups")));
        }
        if self.value(gamma).shape() != [c] || self.value(beta).shape() != [c] {
            return Err(AutodiffError::Shape(format!("group_norm affine params must have shape [{c}]")));
        }
        let (out, saved) = kernels::group_norm_forward(
            self.value(x).data(),
            dims,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::from_f64(eps),
        );
        let out = Tensor::new(self.value(x).shape(), out)?;
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                saved,
            },
            rg,
        )
    }

    /// Sigmoid-weighted linear unit `x·σ(x)`.
    pub fn silu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let rg = self.rg(x);
        self.push(out, Op::Silu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let out = self.value(x).map(|v| v.exp());
        let rg = self.rg(x);
        self.push(out, Op::Exp(x), rg)
    }

    /// Scalar `mean(x²)`.
    pub fn mean_square(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let t = self.value(x);
        let n = T::from_f64(t.numel() as f64);
        let v = t.data().iter().map(|&v| v * v).sum::<T>() / n;
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::MeanSquare(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let v = self.value(x).mean();
        let rg = self.rg(x);
        self.push(Tensor::scalar(v), Op::Mean(x), rg)
    }

    /// `mean((a − b)²)`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let d = self.sub(a, b)?;
        self.mean_square(d)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&tensors)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let out = self.value(x).slice_channels(start, len)?;
        let rg = self.rg(x);
        self.push(out, Op::Slice { x, start }, rg)
    }

    /// Splits channels into consecutive groups of the given sizes.
    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>, AutodiffError> {
        let c = self.nchw(x, "split_channels")?.1;
        if sizes.iter().sum::<usize>() != c {
            return Err(AutodiffError::Shape(format!("split sizes {sizes:?} do not sum to {c}")));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice_channels(x, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// `scale·x + shift`.
    pub fn scalar_affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, AutodiffError> {
        let (s, b) = (T::from_f64(scale), T::from_f64(shift));
        let out = self.value(x).map(|v| s * v + b);
        let rg = self.rg(x);
        self.push(out, Op::ScalarAffine { x, scale: s }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape(x), rg)
    }

    fn nchw(&self, x: Var, what: &str) -> Result<(usize, usize, usize, usize), AutodiffError> {
        dims_nchw(self.value(x).shape())
            .ok_or_else(|| AutodiffError::Shape(format!("{what} needs NCHW input, got {:?}", self.value(x).shape())))
    }

    /// Back-propagates from a scalar loss. The tape cannot be used afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NotScalar(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let t = match g {
                Some(g) => {
                    let t = Tensor::new(node.value.shape(), g)?;
                    if !t.is_finite() {
                        return Err(AutodiffError::NonFinite("gradient".into()));
                    }
                    Some(t)
                }
                None => None,
            };
            nodes.push(t);
        }
        let mut params = BTreeMap::new();
        for (name, &(v, trainable)) in &self.params {
            if trainable {
                let g = nodes[v.0]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
                params.insert(name.clone(), g);
            }
        }
        Ok(Gradients { nodes, params })
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<(), AutodiffError> {
        let node = &self.nodes[id];
        let mut acc = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e = *e + d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                let (ta, tb) = (self.value(*a), self.value(*b));
                if ta.shape() == tb.shape() {
                    if self.rg(*a) {
                        acc(*a, g.to_vec());
                    }
                    if self.rg(*b) {
                        acc(*b, g.iter().map(|&v| sign * v).collect());
                    }
                } else {
                    let mut ga = vec![T::zero(); ta.numel()];
                    let mut gb = vec![T::zero(); tb.numel()];
                    kernels::for_each_broadcast(node.value.shape(), ta.shape(), tb.shape(), |o, ia, ib| {
                        ga[ia] = ga[ia] + g[o];
                        gb[ib] = gb[ib] + sign * g[o];
                    });
                    acc(*a, ga);
                    acc(*b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (da, db) = (ta.data(), tb.data());
                if ta.shape() == tb.shape() {
                    if self.rg(*a) {
                        acc(*a, g.iter().zip(db).map(|(&g, &y)| g * y).collect());
                    }
                    if self.rg(*b) {
                        acc(*b, g.iter().zip(da).map(|(&g, &x)| g * x).collect());
                    }
                } else {
                    let mut ga = vec![T::zero(); ta.numel()];
                    let mut gb = vec![T::zero(); tb.numel()];
                    kernels::for_each_broadcast(node.value.shape(), ta.shape(), tb.shape(), |o, ia, ib| {
                        ga[ia] = ga[ia] + g[o] * db[ib];
                        gb[ib] = gb[ib] + g[o] * da[ia];
                    });
                    acc(*a, ga);
                    acc(*b, gb);
                }
            }
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.rg(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    matmul_into(g, tb.data(), &mut ga, m, n, k, false, true, T::zero());
                    acc(*a, ga);
                }
                if self.rg(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    matmul_into(ta.data(), g, &mut gb, k, m, n, true, false, T::zero());
                    acc(*b, gb);
                }
            }
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    self.rg(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                if let Some(b) = b {
                    acc(*b, db);
                }
            }
            Op::Upsample2(x) => {
                let dims = dims_nchw(self.value(*x).shape()).expect("recorded as NCHW");
                acc(*x, kernels::upsample2_backward(g, dims));
            }
            Op::Downsample2(x) => {
                let dims = dims_nchw(self.value(*x).shape()).expect("recorded as NCHW");
                acc(*x, kernels::downsample2_backward(g, dims));
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                saved,
            } => {
                let dims = dims_nchw(self.value(*x).shape()).expect("recorded as NCHW");
                let (dx, dg, db) = kernels::group_norm_backward(
                    self.value(*x).data(),
                    g,
                    dims,
                    *groups,
                    self.value(*gamma).data(),
                    saved,
                );
                acc(*x, dx);
                acc(*gamma, dg);
                acc(*beta, db);
            }
            Op::Silu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &g)| {
                        let s = sigmoid(v);
                        g * s * (T::one() + v * (T::one() - s))
                    })
                    .collect();
                acc(*x, dx);
            }
            Op::Exp(x) => {
                let dx = node.value.data().iter().zip(g).map(|(&y, &g)| g * y).collect();
                acc(*x, dx);
            }
            Op::MeanSquare(x) => {
                let t = self.value(*x);
                let scale = T::from_f64(2.0) * g[0] / T::from_f64(t.numel() as f64);
                acc(*x, t.data().iter().map(|&v| scale * v).collect());
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![g[0] / T::from_f64(n as f64); n]);
            }
            Op::Concat(parts) => {
                let (n, c, h, w) = dims_nchw(node.value.shape()).expect("recorded as NCHW");
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(n * pc * plane);
                        for bi in 0..n {
                            let base = (bi * c + offset) * plane;
                            gp.extend_from_slice(&g[base..base + pc * plane]);
                        }
                        acc(p, gp);
                    }
                    offset += pc;
                }
            }
            Op::Slice { x, start } => {
                let (n, c, h, w) = dims_nchw(self.value(*x).shape()).expect("recorded as NCHW");
                let len = node.value.shape()[1];
                let plane = h * w;
                let mut gx = vec![T::zero(); n * c * plane];
                for bi in 0..n {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    gx[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
                }
                acc(*x, gx);
            }
            Op::ScalarAffine { x, scale } => {
                acc(*x, g.iter().map(|&v| v * *scale).collect());
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
        }
        Ok(())
    }
}

fn sigmoid<T: Element>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

fn op_kind<T>(op: &Op<T>) -> Option<OpKind> {
    Some(match op {
        Op::Leaf | Op::Param => return None,
        Op::Add(..) => OpKind::Add,
        Op::Sub(..) => OpKind::Sub,
        Op::Mul(..) => OpKind::Mul,
        Op::Matmul(..) => OpKind::Matmul,
        Op::Conv2d { .. } => OpKind::Conv2d,
        Op::Upsample2(_) => OpKind::Upsample2,
        Op::Downsample2(_) => OpKind::Downsample2,
        Op::GroupNorm { .. } => OpKind::GroupNorm,
        Op::Silu(_) => OpKind::Silu,
        Op::Exp(_) => OpKind::Exp,
        Op::MeanSquare(_) => OpKind::MeanSquare,
        Op::Mean(_) => OpKind::Mean,
        Op::Concat(_) => OpKind::ConcatChannels,
        Op::Slice { .. } => OpKind::SliceChannels,
        Op::ScalarAffine { .. } => OpKind::ScalarAffine,
        Op::Reshape(_) => OpKind::Reshape,
    })
}
