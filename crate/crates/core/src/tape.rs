//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every op as an append-only node list. Inputs of a node
//! always have smaller ids than the node itself, so a single reverse sweep
//! over ids visits each node once after all of its consumers.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Lower/upper clamp applied before `exp` in [`UnaryKind::ExpClamped`].
pub const EXP_CLAMP: f32 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Elu,
    Sigmoid,
    /// `exp(clamp(x, -10, 10))`.
    ExpClamped,
    /// Subgradient at zero is zero.
    Abs,
    /// Natural logarithm; non-positive input is an error.
    Ln,
    Square,
}

impl UnaryKind {
    fn apply(self, x: f32) -> f32 {
        match self {
            UnaryKind::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    libm::expm1f(x)
                }
            }
            UnaryKind::Sigmoid => 1.0 / (1.0 + libm::expf(-x)),
            UnaryKind::ExpClamped => libm::expf(x.clamp(-EXP_CLAMP, EXP_CLAMP)),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Ln => libm::logf(x),
            UnaryKind::Square => x * x,
        }
    }

    /// Derivative given the input `x` and the forward output `y`.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            UnaryKind::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::ExpClamped => {
                if (-EXP_CLAMP..=EXP_CLAMP).contains(&x) {
                    y
                } else {
                    0.0
                }
            }
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Ln => 1.0 / x,
            UnaryKind::Square => 2.0 * x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryKind::Elu => "elu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::ExpClamped => "exp_clamped",
            UnaryKind::Abs => "abs",
            UnaryKind::Ln => "ln",
            UnaryKind::Square => "square",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf {
        requires_grad: bool,
    },
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geometry: ConvGeometry,
        out_channels: usize,
        col: Vec<f32>,
    },
    Unary {
        kind: UnaryKind,
        input: NodeId,
    },
    Affine {
        input: NodeId,
        scale: f32,
    },
    Binary {
        kind: BinaryKind,
        a: NodeId,
        b: NodeId,
    },
    Upsample {
        input: NodeId,
        factor: usize,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Slice {
        input: NodeId,
        start: usize,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f32>,
    },
    Reduce {
        kind: ReduceKind,
        input: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(Error::UnknownNode(id.0))
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        let value = value.ensure_finite(name)?;
        self.nodes.push(Node { op, value });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Records an input tensor. Gradients are only accumulated into leaves
    /// created with `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        self.push(Op::Leaf { requires_grad }, value, "leaf")
    }

    /// Shorthand for a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, false)
    }

    /// Zero-padded cross-correlation of a `c_in × h × w` input with a
    /// `c_out × c_in × k × k` kernel. `k` must be odd and the padding
    /// `(k - 1) / 2`, giving an output of `ceil(h / stride)` rows.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        const OP: &str = "conv2d";
        let x = self.value(input)?;
        let w = self.value(weight)?;
        let b = self.value(bias)?;
        let (c_in, h, width) = x.chw(OP)?;
        let &[c_out, wc_in, k, k2] = w.shape() else {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "weight rank",
                expected: 4,
                actual: w.shape().len(),
            });
        };
        if wc_in != c_in {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "input channels",
                expected: wc_in,
                actual: c_in,
            });
        }
        if k2 != k {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "kernel width",
                expected: k,
                actual: k2,
            });
        }
        if k % 2 == 0 {
            return Err(Error::invalid(OP, "kernel size must be odd"));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::invalid(OP, "stride must be 1 or 2"));
        }
        if padding != (k - 1) / 2 {
            return Err(Error::invalid(OP, "padding must be (k - 1) / 2"));
        }
        if b.numel() != c_out {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "bias length",
                expected: c_out,
                actual: b.numel(),
            });
        }
        let geometry = ConvGeometry {
            channels: c_in,
            height: h,
            width,
            kernel: k,
            stride,
            padding,
        };
        let (out, col) = kernels::conv2d_forward(x.data(), w.data(), b.data(), c_out, &geometry);
        let value = Tensor::new(&[c_out, geometry.out_height(), geometry.out_width()], out)?;
        self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
                out_channels: c_out,
                col,
            },
            value,
            OP,
        )
    }

    pub fn unary(&mut self, kind: UnaryKind, input: NodeId) -> Result<NodeId> {
        let value = self.value(input)?.map(|v| kind.apply(v));
        self.push(Op::Unary { kind, input }, value, kind.name())
    }

    /// `scale * x + offset`.
    pub fn affine(&mut self, input: NodeId, scale: f32, offset: f32) -> Result<NodeId> {
        let value = self.value(input)?.map(|v| scale * v + offset);
        self.push(Op::Affine { input, scale }, value, "affine")
    }

    /// Elementwise binary op on equally shaped tensors.
    pub fn binary(&mut self, kind: BinaryKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a)?, self.value(b)?);
        if x.shape() != y.shape() {
            return Err(Error::ShapeMismatch {
                op: "binary",
                dim: "element count",
                expected: x.numel(),
                actual: y.numel(),
            });
        }
        let f = match kind {
            BinaryKind::Add => |p: f32, q: f32| p + q,
            BinaryKind::Sub => |p: f32, q: f32| p - q,
            BinaryKind::Mul => |p: f32, q: f32| p * q,
            BinaryKind::Div => |p: f32, q: f32| p / q,
        };
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape(), data)?;
        self.push(Op::Binary { kind, a, b }, value, "binary")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn upsample_nearest(&mut self, input: NodeId, factor: usize) -> Result<NodeId> {
        const OP: &str = "upsample_nearest";
        if factor == 0 {
            return Err(Error::invalid(OP, "factor must be at least 1"));
        }
        let x = self.value(input)?;
        let (c, h, w) = x.chw(OP)?;
        let data = kernels::upsample_nearest(x.data(), c, h, w, factor);
        let value = Tensor::new(&[c, h * factor, w * factor], data)?;
        self.push(Op::Upsample { input, factor }, value, OP)
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        const OP: &str = "concat_channels";
        let (x, y) = (self.value(a)?, self.value(b)?);
        let (c1, h, w) = x.chw(OP)?;
        let (c2, h2, w2) = y.chw(OP)?;
        if h2 != h {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "height",
                expected: h,
                actual: h2,
            });
        }
        if w2 != w {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "width",
                expected: w,
                actual: w2,
            });
        }
        let mut data = Vec::with_capacity(x.numel() + y.numel());
        data.extend_from_slice(x.data());
        data.extend_from_slice(y.data());
        let value = Tensor::new(&[c1 + c2, h, w], data)?;
        self.push(Op::Concat { a, b }, value, OP)
    }

    /// Channels `start..start + len` of a rank-3 tensor.
    pub fn slice_channels(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        const OP: &str = "slice_channels";
        let x = self.value(input)?;
        let (c, h, w) = x.chw(OP)?;
        if start + len > c {
            return Err(Error::ShapeMismatch {
                op: OP,
                dim: "channels",
                expected: start + len,
                actual: c,
            });
        }
        let data = x.data()[start * h * w..(start + len) * h * w].to_vec();
        let value = Tensor::new(&[len, h, w], data)?;
        self.push(Op::Slice { input, start }, value, OP)
    }

    /// Inverted dropout: each element is zeroed with probability `p` and
    /// survivors are scaled by `1 / (1 - p)`. The mask is a pure function of
    /// `seed`.
    pub fn dropout(&mut self, input: NodeId, p: f32, seed: u64) -> Result<NodeId> {
        const OP: &str = "dropout";
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(OP, "probability must lie in [0, 1)"));
        }
        let x = self.value(input)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..x.numel())
            .map(|_| {
                if rng.random::<f32>() < p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape(), data)?;
        self.push(Op::Dropout { input, mask }, value, OP)
    }

    /// Sequential reduction in index order, accumulated in `f64`.
    pub fn reduce(&mut self, kind: ReduceKind, input: NodeId) -> Result<NodeId> {
        let x = self.value(input)?;
        if x.numel() == 0 {
            return Err(Error::Empty("reduce"));
        }
        let sum: f64 = x.data().iter().map(|&v| v as f64).sum();
        let v = match kind {
            ReduceKind::Sum => sum,
            ReduceKind::Mean => sum / x.numel() as f64,
        };
        self.push(Op::Reduce { kind, input }, Tensor::scalar(v as f32), "reduce")
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Sum, input)
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        self.reduce(ReduceKind::Mean, input)
    }

    fn wants_grad(&self, id: NodeId) -> bool {
        match self.nodes[id.0].op {
            Op::Leaf { requires_grad } => requires_grad,
            _ => true,
        }
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        self.backward_until(loss, NodeId(0))
    }

    /// Like [`Tape::backward`], but stops the sweep at `stop`: nodes with a
    /// smaller id are left without gradient (reported as zeros). Use this
    /// when only the gradient of a late feature map is needed.
    pub fn backward_until(&self, loss: NodeId, stop: NodeId) -> Result<GradientMap> {
        let loss_value = self.value(loss)?;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss {
                id: loss.0,
                numel: loss_value.numel(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (stop.0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::new(self.nodes[i].value.shape(), g)))
            .map(Option::transpose)
            .collect::<Result<Vec<_>>>()?;
        Ok(GradientMap { grads, shapes })
    }

    fn backprop_node(&self, id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[id];
        let val = |n: NodeId| self.nodes[n.0].value.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
                out_channels,
                col,
            } => {
                if self.wants_grad(*weight) || self.wants_grad(*bias) {
                    let (dw, db) =
                        kernels::conv2d_backward_params(g, col, *out_channels, geometry);
                    self.accumulate(grads, *weight, dw);
                    self.accumulate(grads, *bias, db);
                }
                if self.wants_grad(*input) {
                    let dx = kernels::conv2d_backward_input(g, val(*weight), *out_channels, geometry);
                    self.accumulate(grads, *input, dx);
                }
            }
            Op::Unary { kind, input } => {
                let dx = val(*input)
                    .iter()
                    .zip(node.value.data())
                    .zip(g)
                    .map(|((&x, &y), &g)| g * kind.derivative(x, y))
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Affine { input, scale } => {
                self.accumulate(grads, *input, g.iter().map(|v| v * scale).collect());
            }
            Op::Binary { kind, a, b } => {
                let (x, y) = (val(*a), val(*b));
                let (da, db): (Vec<f32>, Vec<f32>) = match kind {
                    BinaryKind::Add => (g.to_vec(), g.to_vec()),
                    BinaryKind::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                    BinaryKind::Mul => (
                        g.iter().zip(y).map(|(g, y)| g * y).collect(),
                        g.iter().zip(x).map(|(g, x)| g * x).collect(),
                    ),
                    BinaryKind::Div => (
                        g.iter().zip(y).map(|(g, y)| g / y).collect(),
                        g.iter()
                            .zip(x.iter().zip(y))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    ),
                };
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Upsample { input, factor } => {
                let shape = self.nodes[input.0].value.shape();
                let dx = kernels::upsample_nearest_backward(g, shape[0], shape[1], shape[2], *factor);
                self.accumulate(grads, *input, dx);
            }
            Op::Concat { a, b } => {
                let split = self.nodes[a.0].value.numel();
                self.accumulate(grads, *a, g[..split].to_vec());
                self.accumulate(grads, *b, g[split..].to_vec());
            }
            Op::Slice { input, start } => {
                let x = &self.nodes[input.0].value;
                let plane = x.shape()[1] * x.shape()[2];
                let mut dx = vec![0.0f32; x.numel()];
                dx[start * plane..start * plane + g.len()].copy_from_slice(g);
                self.accumulate(grads, *input, dx);
            }
            Op::Dropout { input, mask } => {
                self.accumulate(grads, *input, g.iter().zip(mask).map(|(g, m)| g * m).collect());
            }
            Op::Reduce { kind, input } => {
                let n = self.nodes[input.0].value.numel();
                let v = match kind {
                    ReduceKind::Sum => g[0],
                    ReduceKind::Mean => (g[0] as f64 / n as f64) as f32,
                };
                self.accumulate(grads, *input, vec![v; n]);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], id: NodeId, contribution: Vec<f32>) {
        if !self.wants_grad(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => existing
                .iter_mut()
                .zip(&contribution)
                .for_each(|(e, c)| *e += c),
            slot @ None => *slot = Some(contribution),
        }
    }
}

/// Per-node gradients from one backward sweep.
#[derive(Debug, Clone)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl GradientMap {
    /// Gradient of the loss with respect to node `id`; zeros when the node
    /// has no path to the loss.
    pub fn grad_of(&self, id: NodeId) -> Result<Tensor> {
        match self.grads.get(id.0) {
            None => Err(Error::UnknownNode(id.0)),
            Some(Some(g)) => Ok(g.clone()),
            Some(None) => Ok(Tensor::zeros(&self.shapes[id.0])),
        }
    }

    /// Borrowing variant of [`GradientMap::grad_of`]; `None` for nodes with
    /// no gradient.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}
