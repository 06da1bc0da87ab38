use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::kernels::{self, ConvGeometry, SpectrumPart};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise binary operations; there is no implicit broadcasting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointwiseKind {
    Add,
    Sub,
    Mul,
    /// Multiplication by a scalar operand.
    Scale,
}

/// Second argument of [`Tape::pointwise`].
#[derive(Clone, Copy, Debug)]
pub enum Operand {
    Var(Var),
    Scalar(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    /// Mean absolute value over every element.
    L1Mean,
    Mean,
    Sum,
    /// Sums the three colour channels of an `(N,3,H,W)` tensor into `(N,1,H,W)`.
    ChannelSum,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeometry },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Abs { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Shift { x: Var },
    AvgPool { x: Var, k: usize },
    GlobalAvgPool { x: Var },
    BroadcastChannel { x: Var },
    ScaleChannels { x: Var, gate: Var },
    PixelShuffle { x: Var, r: usize },
    L2Normalize { x: Var, norms: Vec<f64> },
    Reduce { x: Var, kind: ReduceKind },
    Dft2 { x: Var, part: SpectrumPart },
    ComplexAbs { re: Var, im: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Smallest per-sample norm [`Tape::l2_normalize`] accepts.
pub const NORM_EPSILON: f64 = 1e-12;

/// Reverse-mode computation record.
///
/// Nodes are appended in evaluation order, so inputs always precede the
/// nodes that consume them and [`Tape::backward`] can sweep the list in
/// reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Copies `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        self.value(a).expect_same_shape(self.value(b))
    }

    /// Stride-1 zero-padded convolution; `pad` must equal `(k-1)/2`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
        let geom = ConvGeometry::new(self.shape(x), self.shape(w), self.shape(b), pad)?;
        let out = kernels::conv2d_forward(&geom, self.value(x), self.value(w), self.value(b));
        Ok(self.push_op(out, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    /// `max(x, slope*x)`; the derivative at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push_op(out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push_op(out, Op::Sigmoid { x }, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::abs);
        self.push_op(out, Op::Abs { x }, &[x])
    }

    pub fn pointwise(&mut self, x: Var, y: Operand, kind: PointwiseKind) -> Result<Var> {
        match (y, kind) {
            (Operand::Var(y), PointwiseKind::Add) => self.add(x, y),
            (Operand::Var(y), PointwiseKind::Sub) => self.sub(x, y),
            (Operand::Var(y), PointwiseKind::Mul | PointwiseKind::Scale) => self.mul(x, y),
            (Operand::Scalar(s), PointwiseKind::Add) => Ok(self.shift(x, s)),
            (Operand::Scalar(s), PointwiseKind::Sub) => Ok(self.shift(x, -s)),
            (Operand::Scalar(s), PointwiseKind::Mul | PointwiseKind::Scale) => Ok(self.scale(x, s)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        Ok(self.push_op(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        Ok(self.push_op(out, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        Ok(self.push_op(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push_op(out, Op::Scale { x, factor }, &[x])
    }

    /// Adds a scalar to every element.
    pub fn shift(&mut self, x: Var, offset: f64) -> Var {
        let out = self.value(x).map(|v| v + offset);
        self.push_op(out, Op::Shift { x }, &[x])
    }

    /// Non-overlapping `k x k` mean pooling with stride `k`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x);
        if k == 0 || !s.h.is_multiple_of(k) || !s.w.is_multiple_of(k) {
            return Err(Error::InvalidShape(format!(
                "avg_pool kernel {k} does not tile spatial size {}x{}",
                s.h, s.w
            )));
        }
        let (oh, ow) = (s.h / k, s.w / k);
        let xv = self.value(x);
        let mut out = Tensor::zeros([s.n, s.c, oh, ow]);
        let inv = 1.0 / (k * k) as f64;
        for n in 0..s.n {
            for c in 0..s.c {
                let src = xv.plane(n, c);
                let dst = out.plane_mut(n, c);
                for y in 0..s.h {
                    for xx in 0..s.w {
                        dst[(y / k) * ow + xx / k] += src[y * s.w + xx];
                    }
                }
                for v in dst.iter_mut() {
                    *v *= inv;
                }
            }
        }
        Ok(self.push_op(out, Op::AvgPool { x, k }, &[x]))
    }

    /// Per-channel spatial mean, `(N,C,H,W) -> (N,C,1,1)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let xv = self.value(x);
        let mut out = Tensor::zeros([s.n, s.c, 1, 1]);
        for n in 0..s.n {
            for c in 0..s.c {
                let p = xv.plane(n, c);
                out.set(n, c, 0, 0, p.iter().sum::<f64>() / p.len() as f64);
            }
        }
        self.push_op(out, Op::GlobalAvgPool { x }, &[x])
    }

    /// Repeats a single-channel tensor `c` times along the channel axis.
    pub fn broadcast_channel(&mut self, x: Var, c: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.c != 1 {
            return Err(Error::InvalidShape(format!(
                "broadcast_channel needs one input channel, got {s}"
            )));
        }
        let xv = self.value(x);
        let mut out = Tensor::zeros(s.with_channels(c));
        for n in 0..s.n {
            for ch in 0..c {
                out.plane_mut(n, ch).copy_from_slice(xv.plane(n, 0));
            }
        }
        Ok(self.push_op(out, Op::BroadcastChannel { x }, &[x]))
    }

    /// Multiplies each channel plane of `x` by the matching `(N,C,1,1)` gate.
    pub fn scale_channels(&mut self, x: Var, gate: Var) -> Result<Var> {
        let s = self.shape(x);
        let gs = self.shape(gate);
        if gs != Shape::new(s.n, s.c, 1, 1) {
            return Err(Error::InvalidShape(format!(
                "channel gate {gs} does not match input {s}"
            )));
        }
        let mut out = self.value(x).clone();
        let gv = self.value(gate);
        for n in 0..s.n {
            for c in 0..s.c {
                let g = gv.at(n, c, 0, 0);
                for v in out.plane_mut(n, c) {
                    *v *= g;
                }
            }
        }
        Ok(self.push_op(out, Op::ScaleChannels { x, gate }, &[x, gate]))
    }

    /// Sub-pixel rearrangement `(N, r*r*C, H, W) -> (N, C, rH, rW)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let s = self.shape(x);
        if r == 0 || !s.c.is_multiple_of(r * r) {
            return Err(Error::InvalidShape(format!(
                "pixel_shuffle factor {r} does not divide {} channels",
                s.c
            )));
        }
        let out = kernels::pixel_shuffle(self.value(x), r);
        Ok(self.push_op(out, Op::PixelShuffle { x, r }, &[x]))
    }

    /// Divides each sample by its L2 norm over all `C*H*W` elements.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let xv = self.value(x);
        let mut norms = Vec::with_capacity(s.n);
        for n in 0..s.n {
            let norm = xv.sample(n).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm.is_nan() || norm <= NORM_EPSILON {
                return Err(Error::DegenerateInput(format!(
                    "sample {n} has L2 norm {norm:e}, cannot normalize"
                )));
            }
            norms.push(norm);
        }
        let mut out = xv.clone();
        let len = s.sample();
        for (n, chunk) in out.data_mut().chunks_mut(len.max(1)).enumerate().take(s.n) {
            for v in chunk {
                *v /= norms[n];
            }
        }
        Ok(self.push_op(out, Op::L2Normalize { x, norms }, &[x]))
    }

    pub fn reduce(&mut self, x: Var, kind: ReduceKind) -> Result<Var> {
        let s = self.shape(x);
        let xv = self.value(x);
        let out = match kind {
            ReduceKind::L1Mean => Tensor::scalar(xv.data().iter().map(|v| v.abs()).sum::<f64>() / s.numel() as f64),
            ReduceKind::Mean => Tensor::scalar(xv.mean()),
            ReduceKind::Sum => Tensor::scalar(xv.sum()),
            ReduceKind::ChannelSum => {
                if s.c != 3 {
                    return Err(Error::InvalidShape(format!("channel_sum expects 3 channels, got {s}")));
                }
                let mut out = Tensor::zeros(s.with_channels(1));
                for n in 0..s.n {
                    let dst = out.plane_mut(n, 0);
                    for c in 0..3 {
                        for (d, v) in dst.iter_mut().zip(xv.plane(n, c)) {
                            *d += v;
                        }
                    }
                }
                out
            }
        };
        Ok(self.push_op(out, Op::Reduce { x, kind }, &[x]))
    }

    pub fn l1_mean(&mut self, x: Var) -> Var {
        self.reduce(x, ReduceKind::L1Mean).expect("l1_mean accepts any shape")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        self.reduce(x, ReduceKind::Mean).expect("mean accepts any shape")
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.reduce(x, ReduceKind::Sum).expect("sum accepts any shape")
    }

    pub fn channel_sum(&mut self, x: Var) -> Result<Var> {
        self.reduce(x, ReduceKind::ChannelSum)
    }

    /// 2-D DFT of every `(n, c)` plane, returned as real and imaginary parts.
    pub fn dft2(&mut self, x: Var) -> (Var, Var) {
        let re = kernels::dft2_part(self.value(x), SpectrumPart::Real);
        let im = kernels::dft2_part(self.value(x), SpectrumPart::Imag);
        let re = self.push_op(
            re,
            Op::Dft2 {
                x,
                part: SpectrumPart::Real,
            },
            &[x],
        );
        let im = self.push_op(
            im,
            Op::Dft2 {
                x,
                part: SpectrumPart::Imag,
            },
            &[x],
        );
        (re, im)
    }

    /// Elementwise modulus `sqrt(re^2 + im^2)`; the subgradient at zero is zero.
    pub fn complex_abs(&mut self, re: Var, im: Var) -> Result<Var> {
        let out = self.value(re).zip_map(self.value(im), f64::hypot)?;
        Ok(self.push_op(out, Op::ComplexAbs { re, im }, &[re, im]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if !shape.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {shape}"
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contribution: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match grads[v.0].as_mut() {
            Some(existing) => existing.add_assign(&contribution)?,
            None => grads[v.0] = Some(contribution),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let cg = kernels::conv2d_backward(geom, val(*x), val(*w), g, [needs(*x), needs(*w), needs(*b)]);
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, dx)?;
                }
                if let Some(dw) = cg.dw {
                    self.accumulate(grads, *w, dw)?;
                }
                if let Some(db) = cg.db {
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::LeakyRelu { x, slope } => {
                let dx = val(*x).zip_map(g, |v, gv| if v > 0.0 { gv } else { slope * gv })?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Sigmoid { x } => {
                let dx = node.value.zip_map(g, |s, gv| gv * s * (1.0 - s))?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Abs { x } => {
                let dx = val(*x).zip_map(g, |v, gv| gv * sign(v))?;
                self.accumulate(grads, *x, dx)?;
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.map(|v| -v))?;
            }
            Op::Mul { a, b } => {
                if needs(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |p, q| p * q)?)?;
                }
                if needs(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |p, q| p * q)?)?;
                }
            }
            Op::Scale { x, factor } => self.accumulate(grads, *x, g.map(|v| v * factor))?,
            Op::Shift { x } => self.accumulate(grads, *x, g.clone())?,
            Op::AvgPool { x, k } => {
                let s = val(*x).shape();
                let ow = s.w / k;
                let inv = 1.0 / (k * k) as f64;
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let src = g.plane(n, c);
                        let dst = dx.plane_mut(n, c);
                        for y in 0..s.h {
                            for xx in 0..s.w {
                                dst[y * s.w + xx] = src[(y / k) * ow + xx / k] * inv;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::GlobalAvgPool { x } => {
                let s = val(*x).shape();
                let inv = 1.0 / s.plane() as f64;
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    for c in 0..s.c {
                        let gv = g.at(n, c, 0, 0) * inv;
                        dx.plane_mut(n, c).fill(gv);
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::BroadcastChannel { x } => {
                let s = val(*x).shape();
                let mut dx = Tensor::zeros(s);
                for n in 0..s.n {
                    let dst = dx.plane_mut(n, 0);
                    for c in 0..g.shape().c {
                        for (d, v) in dst.iter_mut().zip(g.plane(n, c)) {
                            *d += v;
                        }
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::ScaleChannels { x, gate } => {
                let s = val(*x).shape();
                if needs(*x) {
                    let mut dx = g.clone();
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let gv = val(*gate).at(n, c, 0, 0);
                            for v in dx.plane_mut(n, c) {
                                *v *= gv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx)?;
                }
                if needs(*gate) {
                    let mut dg = Tensor::zeros([s.n, s.c, 1, 1]);
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let dot: f64 = g.plane(n, c).iter().zip(val(*x).plane(n, c)).map(|(a, b)| a * b).sum();
                            dg.set(n, c, 0, 0, dot);
                        }
                    }
                    self.accumulate(grads, *gate, dg)?;
                }
            }
            Op::PixelShuffle { x, r } => {
                self.accumulate(grads, *x, kernels::pixel_unshuffle(g, *r))?;
            }
            Op::L2Normalize { x, norms } => {
                // d(x/|x|) = (g - y <y, g>) / |x| per sample.
                let y = &node.value;
                let len = y.shape().sample();
                let mut dx = g.clone();
                for (n, norm) in norms.iter().enumerate() {
                    let ys = y.sample(n);
                    let dot: f64 = ys.iter().zip(g.sample(n)).map(|(a, b)| a * b).sum();
                    let d = &mut dx.data_mut()[n * len..(n + 1) * len];
                    for (dv, yv) in d.iter_mut().zip(ys) {
                        *dv = (*dv - yv * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, dx)?;
            }
            Op::Reduce { x, kind } => {
                let xv = val(*x);
                let s = xv.shape();
                let dx = match kind {
                    ReduceKind::L1Mean => {
                        let gv = g.data()[0] / s.numel() as f64;
                        xv.map(|v| gv * sign(v))
                    }
                    ReduceKind::Mean => Tensor::full(s, g.data()[0] / s.numel() as f64),
                    ReduceKind::Sum => Tensor::full(s, g.data()[0]),
                    ReduceKind::ChannelSum => {
                        let mut dx = Tensor::zeros(s);
                        for n in 0..s.n {
                            for c in 0..3 {
                                dx.plane_mut(n, c).copy_from_slice(g.plane(n, 0));
                            }
                        }
                        dx
                    }
                };
                self.accumulate(grads, *x, dx)?;
            }
            Op::Dft2 { x, part } => {
                self.accumulate(grads, *x, kernels::dft2_part(g, *part))?;
            }
            Op::ComplexAbs { re, im } => {
                let m = &node.value;
                let ratio = |part: &Tensor| -> Result<Tensor> {
                    let t = part.zip_map(m, |p, mv| if mv > 0.0 { p / mv } else { 0.0 })?;
                    t.zip_map(g, |a, b| a * b)
                };
                if needs(*re) {
                    self.accumulate(grads, *re, ratio(val(*re))?)?;
                }
                if needs(*im) {
                    self.accumulate(grads, *im, ratio(val(*im))?)?;
                }
            }
        }
        Ok(())
    }
}

/// Sign with `sign(0) = 0`, the subgradient used for `|x|` at the kink.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
