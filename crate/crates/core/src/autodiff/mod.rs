//! Reverse-mode automatic differentiation over a linear tape.
//!
//! A [`Graph`] records every operation in the order it is executed, so the
//! node list is already topologically sorted. [`Graph::backward`] walks it in
//! reverse once, visiting each node exactly once. Leaf gradients accumulate
//! across calls until [`Graph::zero_grad`].
//!
//! GELU uses the tanh approximation
//! `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))` in both the forward pass and
//! its analytic derivative.

pub mod conv;
mod linalg;
mod norm;

use crate::error::{invalid, Error, Result};
use crate::tensor::{inverse_perm, numel, strides, Scalar, Tensor};

pub use conv::{out_extent, ConvParams};

const GELU_C: f64 = 0.044_715;
// sqrt(2/pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, S),
    Gelu(Var),
    Exp(Var),
    Recip(Var),
    Sum(Var),
    SumAxis {
        x: Var,
        axis: usize,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        x: Var,
        axis: usize,
        indices: Vec<usize>,
    },
    MatMul(Var, Var, linalg::MatmulDims),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<S>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geo: conv::Geometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: norm::NormSaved<S>,
        train: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: norm::NormSaved<S>,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Gelu(..) => "gelu",
            Op::Exp(..) => "exp",
            Op::Recip(..) => "recip",
            Op::Sum(..) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::IndexSelect { .. } => "index_select",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Softmax(..) => "softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Conv { .. } => "conv",
            Op::BatchNorm { .. } => "batch_norm",
            Op::LayerNorm { .. } => "layer_norm",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b, _) => vec![*a, *b],
            Op::AddScalar(x)
            | Op::MulScalar(x, _)
            | Op::Gelu(x)
            | Op::Exp(x)
            | Op::Recip(x)
            | Op::Sum(x)
            | Op::SumAxis { x, .. }
            | Op::Reshape(x)
            | Op::Permute(x, _)
            | Op::Slice { x, .. }
            | Op::IndexSelect { x, .. }
            | Op::Softmax(x)
            | Op::CrossEntropy { logits: x, .. } => vec![*x],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Linear { x, w, b } | Op::Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } | Op::LayerNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch-norm, for updating
/// running estimates.
#[derive(Clone, Debug)]
pub struct BatchNormStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// The computation tape. Single-threaded; build one per forward pass.
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        debug_assert!(
            value.all_finite() || op.inputs().iter().any(|v| !self.nodes[v.0].value.all_finite()),
            "{} produced a non-finite value from finite inputs",
            op.name()
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ---- elementwise -------------------------------------------------

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok(sa.shape().to_vec())
        } else if sb.is_scalar() {
            Ok(sa.shape().to_vec())
        } else if sa.is_scalar() {
            Ok(sb.shape().to_vec())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: sa.shape().to_vec(),
                rhs: sb.shape().to_vec(),
            })
        }
    }

    fn zip_broadcast(&self, a: Var, b: Var, shape: Vec<usize>, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = numel(&shape);
        let data = (0..n)
            .map(|i| {
                let x = if va.len() == 1 { va[0] } else { va[i] };
                let y = if vb.len() == 1 { vb[0] } else { vb[i] };
                f(x, y)
            })
            .collect();
        Tensor::new(shape, data).expect("broadcast")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("add", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("sub", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shapes("mul", a, b)?;
        let out = self.zip_broadcast(a, b, shape, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn add_scalar(&mut self, x: Var, c: S) -> Var {
        let out = self.value(x).map(|v| v + c);
        self.push(out, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: S) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::MulScalar(x, c))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| S::of(gelu_scalar(v.as_f64())));
        self.push(out, Op::Gelu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(S::exp);
        self.push(out, Op::Exp(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let out = self.value(x).map(S::recip);
        self.push(out, Op::Recip(x))
    }

    // ---- reductions and layout ---------------------------------------

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(invalid("sum_axis", format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let t = Tensor::new(oshape, out).expect("sum_axis");
        Ok(self.push(t, Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| invalid("mean_axis", "axis out of range"))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.mul_scalar(s, S::of(1.0 / len as f64)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x).permute(perm)?;
        Ok(self.push(t, Op::Permute(x, perm.to_vec())))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(invalid("transpose", "rank must be at least 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 1, r - 2);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| invalid("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, data).expect("concat");
        Ok(self.push(
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    /// `x[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} out of bounds on axis {axis} of {shape:?}", start + len),
            ));
        }
        let indices: Vec<usize> = (start..start + len).collect();
        let t = gather(self.value(x), axis, &indices);
        Ok(self.push(t, Op::Slice { x, axis, start }))
    }

    /// Gather entries along `axis`; indices may repeat, gradients scatter-add.
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() || indices.iter().any(|&i| i >= shape[axis]) {
            return Err(invalid(
                "index_select",
                format!("indices out of bounds on axis {axis} of {shape:?}"),
            ));
        }
        let t = gather(self.value(x), axis, indices);
        Ok(self.push(
            t,
            Op::IndexSelect {
                x,
                axis,
                indices: indices.to_vec(),
            },
        ))
    }

    // ---- linear algebra ----------------------------------------------

    /// Matrix product of rank-2 or batched rank-3 operands; a batch of 1
    /// broadcasts.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = linalg::MatmulDims::new(self.shape(a), self.shape(b))?;
        let t = linalg::matmul(self.value(a), self.value(b), &d);
        Ok(self.push(t, Op::MatMul(a, b, d)))
    }

    /// `x·wᵀ + b` applied over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let bad = ws.len() != 2
            || xs.last() != Some(&ws[1])
            || b.is_some_and(|b| self.shape(b) != [ws[0]]);
        if bad {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let t = linalg::linear(self.value(x), self.value(w), b.map(|b| self.value(b)));
        Ok(self.push(t, Op::Linear { x, w, b }))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).last().copied().unwrap_or(0) == 0 {
            return Err(invalid("softmax", "last dimension must be at least 1"));
        }
        let t = linalg::softmax(self.value(x));
        Ok(self.push(t, Op::Softmax(x)))
    }

    /// Mean softmax cross-entropy of `[batch, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() || labels.iter().any(|&l| l >= shape[1]) {
            return Err(invalid(
                "cross_entropy",
                format!("logits {shape:?} incompatible with {} labels", labels.len()),
            ));
        }
        let probs = linalg::softmax(self.value(logits));
        let k = shape[1];
        // log-sum-exp form; NaN logits must surface as a NaN loss.
        let x = self.value(logits).data();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row = &x[i * k..(i + 1) * k];
                let m = row.iter().copied().fold(row[0], |a, b| if b > a || b.is_nan() { b } else { a });
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
                lse - row[l]
            })
            .sum::<S>()
            / S::of(labels.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    // ---- layers ------------------------------------------------------

    pub fn conv(&mut self, x: Var, w: Var, b: Option<Var>, params: ConvParams) -> Result<Var> {
        let geo = conv::Geometry::new(self.shape(x), self.shape(w), &params)?;
        if let Some(b) = b {
            if self.shape(b) != [self.shape(w)[0]] {
                return Err(Error::ShapeMismatch {
                    op: "conv bias",
                    lhs: self.shape(w).to_vec(),
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let t = conv::forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geo);
        Ok(self.push(t, Op::Conv { x, w, b, geo }))
    }

    fn check_affine(&self, op: &'static str, x: Var, gamma: Var, beta: Var, axis: usize) -> Result<()> {
        let xs = self.shape(x);
        let c = xs.get(axis).copied();
        if c.is_none() || self.shape(gamma) != [c.unwrap()] || self.shape(beta) != [c.unwrap()] {
            return Err(Error::ShapeMismatch {
                op,
                lhs: xs.to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        Ok(())
    }

    /// Batch norm over every axis but axis 1. In training mode the batch
    /// statistics are used and returned; otherwise `running` supplies them.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: Option<(&[S], &[S])>,
        eps: f64,
    ) -> Result<(Var, Option<BatchNormStats<S>>)> {
        self.check_affine("batch_norm", x, gamma, beta, 1)?;
        let (train, mean, var) = match running {
            Some((m, v)) => (false, m.to_vec(), v.to_vec()),
            None => {
                let st = norm::channel_stats(self.value(x));
                (true, st.mean, st.var)
            }
        };
        let (y, saved) =
            norm::batchnorm_forward(self.value(x), self.value(gamma), self.value(beta), &mean, &var, eps);
        let v = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                train,
            },
        );
        Ok((v, train.then_some(BatchNormStats { mean, var })))
    }

    /// Layer norm over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let last = self.shape(x).len().saturating_sub(1);
        self.check_affine("layer_norm", x, gamma, beta, last)?;
        let (y, saved) = norm::layernorm_forward(self.value(x), self.value(gamma), self.value(beta), eps);
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved,
            },
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Back-propagate from a scalar `root`, adding `d root / d leaf` into the
    /// gradient slot of every leaf that requires grad.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let rv = self.value(root);
        if rv.numel() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut pending: Vec<Option<Tensor<S>>> = (0..=root.0).map(|_| None).collect();
        pending[root.0] = Some(Tensor::ones(rv.shape().to_vec()));
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            for (input, grad) in self.local_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut pending[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    fn reduce_to(&self, v: Var, g: Tensor<S>) -> Tensor<S> {
        let shape = self.shape(v);
        if shape == g.shape() {
            g
        } else {
            Tensor::full(shape.to_vec(), g.sum())
        }
    }

    fn local_grads(&self, i: usize, g: &Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let node = &self.nodes[i];
        let val = |v: Var| self.value(v);
        let zip = |a: &Tensor<S>, f: &dyn Fn(S, S) -> S| -> Tensor<S> {
            let data = a.data().iter().zip(g.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(g.shape().to_vec(), data).expect("grad")
        };
        let broadcast_other = |v: Var| -> Tensor<S> {
            let t = val(v);
            if t.shape() == g.shape() {
                t.clone()
            } else {
                Tensor::full(g.shape().to_vec(), t.data()[0])
            }
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, self.reduce_to(*a, g.clone())),
                (*b, self.reduce_to(*b, g.clone())),
            ],
            Op::Sub(a, b) => vec![
                (*a, self.reduce_to(*a, g.clone())),
                (*b, self.reduce_to(*b, g.map(|v| -v))),
            ],
            Op::Mul(a, b) => {
                let (ba, bb) = (broadcast_other(*a), broadcast_other(*b));
                vec![
                    (*a, self.reduce_to(*a, zip(&bb, &|y, d| y * d))),
                    (*b, self.reduce_to(*b, zip(&ba, &|x, d| x * d))),
                ]
            }
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::MulScalar(x, c) => {
                let c = *c;
                vec![(*x, g.map(|v| v * c))]
            }
            Op::Gelu(x) => vec![(*x, zip(val(*x), &|x, d| d * S::of(gelu_grad_scalar(x.as_f64()))))],
            Op::Exp(x) => vec![(*x, zip(&node.value, &|y, d| y * d))],
            Op::Recip(x) => vec![(*x, zip(&node.value, &|y, d| -d * y * y))],
            Op::Sum(x) => vec![(*x, Tensor::full(self.shape(*x).to_vec(), g.item()))],
            Op::SumAxis { x, axis } => {
                let shape = self.shape(*x);
                let len = shape[*axis];
                let inner: usize = shape[axis + 1..].iter().product();
                let outer: usize = shape[..*axis].iter().product();
                let mut out = vec![S::zero(); numel(shape)];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        out[base..base + inner].copy_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![(*x, Tensor::new(shape.to_vec(), out).expect("sum_axis grad"))]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(self.shape(*x).to_vec()).expect("reshape grad"))],
            Op::Permute(x, perm) => {
                vec![(*x, g.permute(&inverse_perm(perm)).expect("permute grad"))]
            }
            Op::Concat { parts, axis } => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let len = self.shape(p)[*axis];
                        let idx: Vec<usize> = (off..off + len).collect();
                        off += len;
                        (p, gather(g, *axis, &idx))
                    })
                    .collect()
            }
            Op::Slice { x, axis, start } => {
                let len = g.shape()[*axis];
                let idx: Vec<usize> = (*start..start + len).collect();
                vec![(*x, scatter_add(g, self.shape(*x), *axis, &idx))]
            }
            Op::IndexSelect { x, axis, indices } => {
                vec![(*x, scatter_add(g, self.shape(*x), *axis, indices))]
            }
            Op::MatMul(a, b, d) => {
                let (da, db) = linalg::matmul_backward(val(*a), val(*b), g, d);
                vec![(*a, da), (*b, db)]
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = linalg::linear_backward(val(*x), val(*w), g);
                let mut v = vec![(*x, dx), (*w, dw)];
                v.extend(b.map(|b| (b, db)));
                v
            }
            Op::Softmax(x) => vec![(*x, linalg::softmax_backward(&node.value, g))],
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let k = probs.shape()[1];
                let scale = g.item() / S::of(labels.len() as f64);
                let mut d = probs.data().to_vec();
                for (i, &l) in labels.iter().enumerate() {
                    d[i * k + l] -= S::one();
                }
                d.iter_mut().for_each(|v| *v *= scale);
                vec![(*logits, Tensor::new(probs.shape().to_vec(), d).expect("ce grad"))]
            }
            Op::Conv { x, w, b, geo } => {
                let (dx, dw, db) = conv::backward(val(*x), val(*w), g, geo);
                let mut v = vec![(*x, dx), (*w, dw)];
                v.extend(b.map(|b| (b, db)));
                v
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
                train,
            } => {
                let (dx, dg, db) = norm::batchnorm_backward(g, val(*gamma), saved, *train);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (dx, dg, db) = norm::layernorm_backward(g, val(*gamma), saved);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
        }
    }
}

fn gather<S: Scalar>(x: &Tensor<S>, axis: usize, indices: &[usize]) -> Tensor<S> {
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * indices.len() * inner);
    for o in 0..outer {
        for &i in indices {
            let base = (o * len + i) * inner;
            data.extend_from_slice(&x.data()[base..base + inner]);
        }
    }
    let mut out = shape.to_vec();
    out[axis] = indices.len();
    Tensor::new(out, data).expect("gather")
}

fn scatter_add<S: Scalar>(g: &Tensor<S>, shape: &[usize], axis: usize, indices: &[usize]) -> Tensor<S> {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![S::zero(); numel(shape)];
    for o in 0..outer {
        for (k, &i) in indices.iter().enumerate() {
            let src = (o * indices.len() + k) * inner;
            let dst = (o * len + i) * inner;
            for j in 0..inner {
                out[dst + j] += g.data()[src + j];
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("scatter")
}

/// Row-major offset of a multi-index.
pub fn offset(shape: &[usize], idx: &[usize]) -> usize {
    strides(shape).iter().zip(idx).map(|(s, i)| s * i).sum()
}
