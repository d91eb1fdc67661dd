use super::kernels::{self, ConvGeom};
use super::sobel;
use super::{Real, Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    /// `a / (sign(b) · max(|b|, eps))`, with `sign(0) = +1`.
    DivEps(f64),
}

/// Default clamp for [`ElementwiseKind::DivEps`].
pub const DEFAULT_DIV_EPS: f64 = 1e-8;

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    Conv1dChannels {
        v: Var,
        w: Var,
    },
    Pool2d {
        x: Var,
        kind: PoolKind,
        k: usize,
        stride: usize,
        argmax: Vec<usize>,
    },
    GlobalPool {
        x: Var,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Concat {
        xs: Vec<Var>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    Elementwise {
        a: Var,
        b: Var,
        kind: ElementwiseKind,
        broadcast: bool,
    },
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Sobel {
        x: Var,
        gx: Vec<T>,
        gy: Vec<T>,
    },
    Scale {
        x: Var,
        k: T,
    },
    AddScalar {
        x: Var,
    },
    Square {
        x: Var,
    },
    Abs {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Vec<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records operations in execution order so that gradients can be replayed
/// in reverse. Nodes are only ever appended, so each node's inputs always
/// precede it.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the last backward passes, if `v` received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grad(v)
            .map(|g| Tensor::new(self.shape(v), g.to_vec()).expect("grad shape matches value"))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, name: &str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// 2-D cross-correlation with zero padding. Weight `(out, in, kh, kw)`,
    /// bias `(1, out, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if self.value(b).numel() != geom.w.b() {
            return Err(Error::Dimension(format!(
                "conv2d bias {} does not match {} output channels",
                self.shape(b),
                geom.w.b()
            )));
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::new(geom.out, out)?;
        self.push(
            "conv2d",
            value,
            &[x, w, b],
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        )
    }

    /// 1-D cross-correlation along the channel axis of a `(b, c, 1, 1)`
    /// tensor with an odd-length kernel stored as `(1, 1, 1, k)`.
    pub fn conv1d_channels(&mut self, v: Var, w: Var) -> Result<Var> {
        let vs = self.shape(v);
        if vs.h() != 1 || vs.w() != 1 {
            return Err(Error::Dimension(format!(
                "conv1d_channels expects (b,c,1,1), got {vs}"
            )));
        }
        let k = self.value(w).numel();
        if k.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "conv1d_channels kernel length must be odd, got {k}"
            )));
        }
        let out = kernels::conv1d_channels_forward(
            self.value(v).data(),
            vs.b(),
            vs.c(),
            self.value(w).data(),
        );
        let value = Tensor::new(vs, out)?;
        self.push("conv1d_channels", value, &[v, w], Op::Conv1dChannels { v, w })
    }

    pub fn pool2d(&mut self, x: Var, kind: PoolKind, k: usize, stride: usize) -> Result<Var> {
        let (out, shape, argmax) = kernels::pool2d_forward(
            self.value(x).data(),
            self.shape(x),
            k,
            stride,
            kind == PoolKind::Max,
        )?;
        let value = Tensor::new(shape, out)?;
        self.push(
            "pool2d",
            value,
            &[x],
            Op::Pool2d {
                x,
                kind,
                k,
                stride,
                argmax,
            },
        )
    }

    /// Reduces every `(batch, channel)` plane to `1 × 1`.
    pub fn global_pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let xs = self.shape(x);
        let data = self.value(x).data();
        let plane = xs.plane();
        let mut out = Vec::with_capacity(xs.b() * xs.c());
        let mut argmax = Vec::new();
        for p in 0..xs.b() * xs.c() {
            let src = &data[p * plane..(p + 1) * plane];
            match kind {
                PoolKind::Max => {
                    let mut best = 0;
                    for (i, v) in src.iter().enumerate() {
                        if *v > src[best] {
                            best = i;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(p * plane + best);
                }
                PoolKind::Avg => {
                    let s: T = src.iter().copied().sum();
                    out.push(s / T::lit(plane as f64));
                }
            }
        }
        let value = Tensor::new(Shape::new(xs.b(), xs.c(), 1, 1), out)?;
        self.push("global_pool", value, &[x], Op::GlobalPool { x, kind, argmax })
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::Parameter("upsample factor must be at least 1".into()));
        }
        let (out, shape) = kernels::upsample_forward(self.value(x).data(), self.shape(x), factor);
        let value = Tensor::new(shape, out)?;
        self.push("upsample_nearest", value, &[x], Op::Upsample { x, factor })
    }

    /// Affine map of each flattened batch item. Weight `(m, n, 1, 1)`,
    /// bias `(1, m, 1, 1)`; output `(b, m, 1, 1)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        let n_in = xs.item();
        let m = ws.b();
        if ws.item() != n_in || self.value(b).numel() != m {
            return Err(Error::Dimension(format!(
                "dense input of {n_in} features against weight {ws} and bias {}",
                self.shape(b)
            )));
        }
        let out = kernels::dense_forward(
            self.value(x).data(),
            xs.b(),
            n_in,
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::new(Shape::new(xs.b(), m, 1, 1), out)?;
        self.push("dense", value, &[x, w, b], Op::Dense { x, w, b })
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let src = self.value(x);
        let data = match kind {
            Activation::LeakyRelu(slope) => {
                let slope = T::lit(slope);
                src.data()
                    .iter()
                    .map(|&v| if v > T::zero() { v } else { v * slope })
                    .collect()
            }
            Activation::Tanh => src.data().iter().map(|v| v.tanh()).collect(),
            Activation::Sigmoid => src.data().iter().map(|&v| sigmoid(v)).collect(),
        };
        let value = Tensor::new(src.shape(), data)?;
        self.push("activation", value, &[x], Op::Act { x, kind })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.activation(x, Activation::LeakyRelu(slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .map(|&v| self.shape(v))
            .ok_or_else(|| Error::Dimension("concat of an empty list".into()))?;
        let mut channels = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.b() != first.b() || s.h() != first.h() || s.w() != first.w() {
                return Err(Error::Dimension(format!(
                    "concat_channels: {s} does not share batch/spatial dims with {first}"
                )));
            }
            channels += s.c();
        }
        let shape = Shape::new(first.b(), channels, first.h(), first.w());
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..first.b() {
            for &v in xs {
                let t = self.value(v);
                let item = t.shape().item();
                data.extend_from_slice(&t.data()[n * item..(n + 1) * item]);
            }
        }
        let value = Tensor::new(shape, data)?;
        self.push("concat_channels", value, xs, Op::Concat { xs: xs.to_vec() })
    }

    /// Channels `start..start + len` of `x`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x);
        if start + len > xs.c() || len == 0 {
            return Err(Error::Dimension(format!(
                "channel slice {start}..{} out of range for {xs}",
                start + len
            )));
        }
        let plane = xs.plane();
        let mut data = Vec::with_capacity(xs.b() * len * plane);
        let src = self.value(x).data();
        for n in 0..xs.b() {
            let base = (n * xs.c() + start) * plane;
            data.extend_from_slice(&src[base..base + len * plane]);
        }
        let value = Tensor::new(Shape::new(xs.b(), len, xs.h(), xs.w()), data)?;
        self.push("slice_channels", value, &[x], Op::SliceChannels { x, start })
    }

    /// Splits `x` into consecutive channel groups of the given sizes.
    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        if sizes.iter().sum::<usize>() != self.shape(x).c() {
            return Err(Error::Dimension(format!(
                "split sizes {sizes:?} do not cover {}",
                self.shape(x)
            )));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &len in sizes {
            out.push(self.slice_channels(x, start, len)?);
            start += len;
        }
        Ok(out)
    }

    /// Elementwise binary op. `b` may have the same shape as `a` or be a
    /// `(b, c, 1, 1)` tensor repeated over `a`'s spatial extent.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: ElementwiseKind) -> Result<Var> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let broadcast = if sa == sb {
            false
        } else if sb == Shape::new(sa.b(), sa.c(), 1, 1) {
            true
        } else {
            return Err(Error::Dimension(format!(
                "elementwise operands {sa} and {sb} are incompatible"
            )));
        };
        let plane = sa.plane();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let b_at = |i: usize| if broadcast { bv[i / plane] } else { bv[i] };
        let data: Vec<T> = match kind {
            ElementwiseKind::Add => av.iter().enumerate().map(|(i, &x)| x + b_at(i)).collect(),
            ElementwiseKind::Sub => av.iter().enumerate().map(|(i, &x)| x - b_at(i)).collect(),
            ElementwiseKind::Mul => av.iter().enumerate().map(|(i, &x)| x * b_at(i)).collect(),
            ElementwiseKind::DivEps(eps) => {
                let eps = T::lit(eps);
                av.iter()
                    .enumerate()
                    .map(|(i, &x)| x / clamp_denominator(b_at(i), eps))
                    .collect()
            }
        };
        let value = Tensor::new(sa, data)?;
        self.push(
            "elementwise",
            value,
            &[a, b],
            Op::Elementwise {
                a,
                b,
                kind,
                broadcast,
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Mul)
    }

    pub fn div_eps(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::DivEps(eps))
    }

    /// Per-pixel maximum over channels, output `(b, 1, h, w)`.
    pub fn channel_max_map(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        let (out, argmax) = kernels::channel_max_forward(self.value(x).data(), xs);
        let value = Tensor::new(Shape::new(xs.b(), 1, xs.h(), xs.w()), out)?;
        self.push("channel_max_map", value, &[x], Op::ChannelMax { x, argmax })
    }

    /// Differentiable Sobel magnitude `sqrt(gx² + gy² + δ)` of every plane.
    pub fn sobel_gradient(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.h() < 3 || xs.w() < 3 {
            return Err(Error::Geometry(format!(
                "sobel_gradient needs at least 3×3 planes, got {xs}"
            )));
        }
        let delta = T::lit(sobel::SOBEL_DELTA);
        let src = self.value(x).data();
        let mut gx_all = Vec::with_capacity(xs.numel());
        let mut gy_all = Vec::with_capacity(xs.numel());
        let mut mag = Vec::with_capacity(xs.numel());
        for p in 0..xs.b() * xs.c() {
            let plane = &src[p * xs.plane()..(p + 1) * xs.plane()];
            let (gx, gy) = sobel::sobel_components(plane, xs.h(), xs.w());
            mag.extend(gx.iter().zip(&gy).map(|(&a, &b)| (a * a + b * b + delta).sqrt()));
            gx_all.extend(gx);
            gy_all.extend(gy);
        }
        let value = Tensor::new(xs, mag)?;
        self.push(
            "sobel_gradient",
            value,
            &[x],
            Op::Sobel {
                x,
                gx: gx_all,
                gy: gy_all,
            },
        )
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let k = T::lit(k);
        let value = map(self.value(x), |v| v * k);
        self.push("scale", value, &[x], Op::Scale { x, k })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let c = T::lit(c);
        let value = map(self.value(x), |v| v + c);
        self.push("add_scalar", value, &[x], Op::AddScalar { x })
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let value = map(self.value(x), |v| v * v);
        self.push("square", value, &[x], Op::Square { x })
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let value = map(self.value(x), |v| v.abs());
        self.push("abs", value, &[x], Op::Abs { x })
    }

    /// Sum of all elements as a `(1,1,1,1)` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), &[x], Op::Sum { x })
    }

    /// Mean of all elements as a `(1,1,1,1)` scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::lit(t.numel() as f64);
        self.push("mean", Tensor::scalar(m), &[x], Op::Mean { x })
    }

    /// Reverse pass from a scalar root. Gradients accumulate into every
    /// participating node that requires them; call [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {}",
                self.shape(root)
            )));
        }
        let mut pass: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            pass[root.0] = Some(vec![T::one()]);
        }
        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else {
                continue;
            };
            self.backprop_node(i, &g, &mut pass);
            pass[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(pass) {
            if let (true, Some(g)) = (node.requires_grad, g) {
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], pass: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contribution: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut pass[v.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += *b),
                slot => *slot = Some(contribution),
            }
        };
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let geom = ConvGeom::new(self.shape(*x), self.shape(*w), *stride, *pad)
                    .expect("geometry validated in forward");
                if needs(*x) {
                    send(*x, kernels::conv2d_backward_input(&geom, g, self.value(*w).data()));
                }
                if needs(*w) {
                    send(*w, kernels::conv2d_backward_weight(&geom, g, self.value(*x).data()));
                }
                if needs(*b) {
                    send(*b, kernels::channel_sums(g, geom.out));
                }
            }
            Op::Conv1dChannels { v, w } => {
                let vs = self.shape(*v);
                let (gv, gw) = kernels::conv1d_channels_backward(
                    g,
                    self.value(*v).data(),
                    vs.b(),
                    vs.c(),
                    self.value(*w).data(),
                );
                send(*v, gv);
                send(*w, gw);
            }
            Op::Pool2d {
                x,
                kind,
                k,
                stride,
                argmax,
            } => {
                let xs = self.shape(*x);
                let gx = match kind {
                    PoolKind::Max => kernels::scatter_argmax(g, argmax, xs.numel()),
                    PoolKind::Avg => kernels::avgpool2d_backward(g, xs, node.value.shape(), *k, *stride),
                };
                send(*x, gx);
            }
            Op::GlobalPool { x, kind, argmax } => {
                let xs = self.shape(*x);
                let gx = match kind {
                    PoolKind::Max => kernels::scatter_argmax(g, argmax, xs.numel()),
                    PoolKind::Avg => {
                        let plane = xs.plane();
                        let inv = T::one() / T::lit(plane as f64);
                        (0..xs.numel()).map(|j| g[j / plane] * inv).collect()
                    }
                };
                send(*x, gx);
            }
            Op::Upsample { x, factor } => {
                send(*x, kernels::upsample_backward(g, self.shape(*x), *factor));
            }
            Op::Dense { x, w, b } => {
                let xs = self.shape(*x);
                let n_in = xs.item();
                let m = self.shape(*w).b();
                let wv = self.value(*w).data();
                let xv = self.value(*x).data();
                if needs(*x) {
                    let mut gx = vec![T::zero(); xs.numel()];
                    for n in 0..xs.b() {
                        for (j, row) in wv.chunks_exact(n_in).enumerate() {
                            let gj = g[n * m + j];
                            for (dst, &wj) in gx[n * n_in..(n + 1) * n_in].iter_mut().zip(row) {
                                *dst += gj * wj;
                            }
                        }
                    }
                    send(*x, gx);
                }
                if needs(*w) {
                    let mut gw = vec![T::zero(); m * n_in];
                    for n in 0..xs.b() {
                        let xi = &xv[n * n_in..(n + 1) * n_in];
                        for (j, row) in gw.chunks_exact_mut(n_in).enumerate() {
                            let gj = g[n * m + j];
                            for (dst, &xk) in row.iter_mut().zip(xi) {
                                *dst += gj * xk;
                            }
                        }
                    }
                    send(*w, gw);
                }
                if needs(*b) {
                    let mut gb = vec![T::zero(); m];
                    for n in 0..xs.b() {
                        for j in 0..m {
                            gb[j] += g[n * m + j];
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Act { x, kind } => {
                let y = node.value.data();
                let gx = match kind {
                    Activation::LeakyRelu(slope) => {
                        let slope = T::lit(*slope);
                        self.value(*x)
                            .data()
                            .iter()
                            .zip(g)
                            .map(|(&v, &gi)| if v > T::zero() { gi } else { gi * slope })
                            .collect()
                    }
                    Activation::Tanh => y.iter().zip(g).map(|(&t, &gi)| gi * (T::one() - t * t)).collect(),
                    Activation::Sigmoid => y.iter().zip(g).map(|(&s, &gi)| gi * s * (T::one() - s)).collect(),
                };
                send(*x, gx);
            }
            Op::Concat { xs } => {
                let os = node.value.shape();
                let mut offset = 0;
                for &v in xs {
                    let vs = self.shape(v);
                    let item = vs.item();
                    if needs(v) {
                        let mut gv = Vec::with_capacity(vs.numel());
                        for n in 0..os.b() {
                            let base = n * os.item() + offset;
                            gv.extend_from_slice(&g[base..base + item]);
                        }
                        send(v, gv);
                    }
                    offset += item;
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.shape(*x);
                let os = node.value.shape();
                let plane = xs.plane();
                let mut gx = vec![T::zero(); xs.numel()];
                for n in 0..xs.b() {
                    let dst = (n * xs.c() + start) * plane;
                    gx[dst..dst + os.item()].copy_from_slice(&g[n * os.item()..(n + 1) * os.item()]);
                }
                send(*x, gx);
            }
            Op::Elementwise {
                a,
                b,
                kind,
                broadcast,
            } => self.backprop_elementwise(*a, *b, *kind, *broadcast, g, &mut send),
            Op::ChannelMax { x, argmax } => {
                send(*x, kernels::scatter_argmax(g, argmax, self.shape(*x).numel()));
            }
            Op::Sobel { x, gx, gy } => {
                let xs = self.shape(*x);
                let mag = node.value.data();
                let p = xs.plane();
                let mut gin = Vec::with_capacity(xs.numel());
                for plane in 0..xs.b() * xs.c() {
                    let r = plane * p..(plane + 1) * p;
                    gin.extend(sobel::sobel_magnitude_backward(
                        &g[r.clone()],
                        &gx[r.clone()],
                        &gy[r.clone()],
                        &mag[r],
                        xs.h(),
                        xs.w(),
                    ));
                }
                send(*x, gin);
            }
            Op::Scale { x, k } => send(*x, g.iter().map(|&v| v * *k).collect()),
            Op::AddScalar { x } => send(*x, g.to_vec()),
            Op::Square { x } => {
                let two = T::lit(2.0);
                send(
                    *x,
                    self.value(*x).data().iter().zip(g).map(|(&v, &gi)| two * v * gi).collect(),
                );
            }
            Op::Abs { x } => {
                send(
                    *x,
                    self.value(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &gi)| if v > T::zero() { gi } else if v < T::zero() { -gi } else { T::zero() })
                        .collect(),
                );
            }
            Op::Sum { x } => send(*x, vec![g[0]; self.value(*x).numel()]),
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                send(*x, vec![g[0] / T::lit(n as f64); n]);
            }
        }
    }

    fn backprop_elementwise(
        &self,
        a: Var,
        b: Var,
        kind: ElementwiseKind,
        broadcast: bool,
        g: &[T],
        send: &mut impl FnMut(Var, Vec<T>),
    ) {
        let sa = self.shape(a);
        let plane = sa.plane();
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let b_at = |i: usize| if broadcast { bv[i / plane] } else { bv[i] };
        // Per-element contributions to b, reduced over space when broadcast.
        let reduce_b = |full: Vec<T>| -> Vec<T> {
            if !broadcast {
                return full;
            }
            full.chunks_exact(plane).map(|c| c.iter().copied().sum()).collect()
        };
        match kind {
            ElementwiseKind::Add => {
                send(a, g.to_vec());
                send(b, reduce_b(g.to_vec()));
            }
            ElementwiseKind::Sub => {
                send(a, g.to_vec());
                send(b, reduce_b(g.iter().map(|&v| -v).collect()));
            }
            ElementwiseKind::Mul => {
                send(a, g.iter().enumerate().map(|(i, &gi)| gi * b_at(i)).collect());
                send(b, reduce_b(g.iter().zip(av).map(|(&gi, &x)| gi * x).collect()));
            }
            ElementwiseKind::DivEps(eps) => {
                let eps = T::lit(eps);
                send(
                    a,
                    g.iter()
                        .enumerate()
                        .map(|(i, &gi)| gi / clamp_denominator(b_at(i), eps))
                        .collect(),
                );
                send(
                    b,
                    reduce_b(
                        g.iter()
                            .enumerate()
                            .map(|(i, &gi)| {
                                let raw = b_at(i);
                                if raw.abs() >= eps {
                                    -gi * av[i] / (raw * raw)
                                } else {
                                    T::zero()
                                }
                            })
                            .collect(),
                    ),
                );
            }
        }
    }
}

fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `sign(b) · max(|b|, eps)` with `sign(0) = +1`.
pub(crate) fn clamp_denominator<T: Real>(b: T, eps: T) -> T {
    let mag = b.abs().max(eps);
    if b < T::zero() {
        -mag
    } else {
        mag
    }
}

fn map<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}
