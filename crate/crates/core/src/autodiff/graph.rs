//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so node ids are already in
//! topological order and `backward` is a single reverse sweep. A graph is
//! built for one forward pass and discarded afterwards.
//!
//! Binary elementwise ops broadcast only when the right operand's shape is
//! a suffix of the left operand's shape (a bias over the trailing axes, or a
//! scalar). Anything else needs an explicit reshape.

use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Additive mask value for blocked attention positions.
pub const MASK_VALUE: f64 = -1e9;

/// Default variance floor for [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A user-supplied differentiable operation.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// Returns one gradient buffer per input, each the size of that input.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_output: &[f64]) -> Vec<Vec<f64>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul {
        a: Var,
        b: Var,
        shared: bool,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        input: Var,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Custom {
        op: Box<dyn CustomOp>,
        inputs: Vec<Var>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul { .. } => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Square(..) => "square",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::Relu(..) => "max_with_zero",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gelu(..) => "gelu",
            Op::Embedding { .. } => "embedding_lookup",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Shift(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Square(x)
            | Op::Sqrt(x)
            | Op::Exp(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::Gelu(x) => vec![*x],
            Op::Slice { input, .. } | Op::LayerNorm { input, .. } => vec![*input],
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
            Op::Embedding { table, .. } => vec![*table],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

/// Number of times `small` repeats inside `big` when `small` is a trailing
/// suffix of `big`.
fn suffix_repeat(big: &[usize], small: &[usize]) -> Option<usize> {
    if small.len() > big.len() || big[big.len() - small.len()..] != *small {
        return None;
    }
    Some(big[..big.len() - small.len()].iter().product())
}

fn zeroed(slot: &mut Option<Vec<f64>>, n: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; n])
}

/// `c (+)= op(a) · op(b)` for row-major buffers, where `op(a)` is `m×k` and
/// `op(b)` is `k×n`. A transposed operand is stored in its untransposed
/// layout.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slice lengths above cover every index touched with these
    // strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn gelu_parts(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let du = C * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    (y, dy)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor. Only leaves with `requires_grad` receive
    /// gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf, if any
    /// flowed into it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Like [`Graph::grad`], but zeros for leaves the loss does not touch.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![0.0; self.nodes[v.0].value.numel()])
    }

    // --- elementwise -----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, ())> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if suffix_repeat(ta.shape(), tb.shape()).is_none() {
            return Err(Error::shape(
                name,
                format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape()),
            ));
        }
        let nb = tb.numel();
        let bd = tb.data();
        let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % nb])).collect();
        Ok((Tensor::new(ta.shape().to_vec(), data)?, ()))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, _) = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let tx = &self.nodes[x.0].value;
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        self.push(t, op)
    }

    /// `x · c` for a constant `c`.
    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    /// `x + c` for a constant `c`.
    pub fn shift(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Shift(x), |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    /// `max(x, 0)`; the gradient is 0 for `x <= 0` and 1 above.
    pub fn max_with_zero(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Gelu(x), |v| gelu_parts(v).0)
    }

    // --- reductions ------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    // --- structural ------------------------------------------------------

    /// `(..., m, k) × (k, n)` with a shared right operand, or
    /// `(..., m, k) × (..., k, n)` with matching leading dimensions.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.nodes[a.0].value.shape().to_vec();
        let sb = self.nodes[b.0].value.shape().to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", format!("need rank >= 2, got {sa:?} x {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(Error::shape("matmul", format!("inner dims differ: {sa:?} x {sb:?}")));
        }
        let shared = sb.len() == 2;
        if !shared && sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(Error::shape("matmul", format!("batch dims differ: {sa:?} x {sb:?}")));
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = vec![0.0; batch * m * n];
        {
            let ad = self.nodes[a.0].value.data();
            let bd = self.nodes[b.0].value.data();
            if shared {
                gemm(batch * m, k, n, ad, false, bd, false, &mut out, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &ad[i * m * k..(i + 1) * m * k],
                        false,
                        &bd[i * k * n..(i + 1) * k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::MatMul {
                a,
                b,
                shared,
                batch,
                m,
                k,
                n,
            },
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let s = t.shape();
        if s.len() < 2 {
            return Err(Error::shape("transpose", format!("need rank >= 2, got {s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = t.numel() / (r * c);
        let mut out = vec![0.0; t.numel()];
        let d = t.data();
        for b in 0..batch {
            let base = b * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[base + j * r + i] = d[base + i * c + j];
                }
            }
        }
        let mut shape = s.to_vec();
        let nd = shape.len();
        shape.swap(nd - 2, nd - 1);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[x.0].value.clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let s = t.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let dim = s[axis];
        let d = t.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * dim + start) * inner;
            out.extend_from_slice(&d[from..from + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Slice { input: x, axis, start }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let s0 = self.nodes[first.0].value.shape().to_vec();
        if axis >= s0.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {s0:?}")));
        }
        let mut total = 0;
        for v in xs {
            let s = self.nodes[v.0].value.shape();
            if s.len() != s0.len() || s.iter().zip(&s0).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} does not match {s0:?} off axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let outer: usize = s0[..axis].iter().product();
        let inner: usize = s0[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in xs {
                let t = &self.nodes[v.0].value;
                let w = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        Ok(self.push(
            t,
            Op::Concat {
                inputs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// Rows of `table` (shape `(V, d)`) picked by `indices`, giving `(n, d)`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = &self.nodes[table.0].value;
        if t.ndim() != 2 || indices.is_empty() {
            return Err(Error::shape(
                "embedding_lookup",
                format!("table {:?} with {} indices", t.shape(), indices.len()),
            ));
        }
        let (v, d) = (t.shape()[0], t.shape()[1]);
        if let Some(bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::shape(
                "embedding_lookup",
                format!("index {bad} >= vocabulary {v}"),
            ));
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![indices.len(), d], out)?;
        Ok(self.push(
            t,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    // --- normalization ---------------------------------------------------

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let c = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax", "scalar input"))?;
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(t, Op::Softmax(x)))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance
    /// (population variance, `eps` added before the square root). No affine
    /// parameters.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let c = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
        let mut out = t.data().to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / c);
        for row in out.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let t = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(t, Op::LayerNorm { input: x, inv_std }))
    }

    // --- composites ------------------------------------------------------

    /// `softmax(q·kᵀ/√d + mask)·v` for `q: (B, Lq, d)`, `k: (B, Lk, d)`,
    /// `v: (B, Lk, dv)`. The mask is additive with shape `(Lq, Lk)`.
    pub fn scaled_dot_product_attention(&mut self, q: Var, k: Var, v: Var, mask: Option<Var>) -> Result<Var> {
        let d = *self
            .shape(q)
            .last()
            .ok_or_else(|| Error::shape("attention", "scalar query"))?;
        let kt = self.transpose(k)?;
        let scores = self.matmul(q, kt)?;
        let mut scores = self.scale(scores, 1.0 / (d as f64).sqrt());
        if let Some(m) = mask {
            scores = self.add(scores, m)?;
        }
        let probs = self.softmax(scores)?;
        self.matmul(probs, v)
    }

    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var> {
        let value = {
            let ts: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&ts)?
        };
        Ok(self.push(
            value,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Locates the first node holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<Error> {
        self.nodes.iter().enumerate().find_map(|(i, n)| {
            (!n.value.is_finite()).then(|| Error::NonFinite {
                op_id: i,
                op: n.op.name(),
            })
        })
    }

    // --- backward --------------------------------------------------------

    /// Propagates `d loss / d node` to every node that requires a gradient.
    /// A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        if !lt.data()[0].is_finite() {
            return Err(self.first_non_finite().unwrap_or(Error::NonFinite {
                op_id: loss.0,
                op: self.nodes[loss.0].op.name(),
            }));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let (lower, upper) = self.grads.split_at_mut(id);
            let node = &self.nodes[id];
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let needs = |v: &Var| nodes[v.0].requires_grad;
            let val = |v: &Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    if needs(a) {
                        let ga = zeroed(&mut lower[a.0], g.len());
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                    if needs(b) {
                        let nb = val(b).numel();
                        let gb = zeroed(&mut lower[b.0], nb);
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % nb] += sign * gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (val(a).data(), val(b).data());
                    let nb = bd.len();
                    if needs(a) {
                        let ga = zeroed(&mut lower[a.0], g.len());
                        for (i, gi) in g.iter().enumerate() {
                            ga[i] += gi * bd[i % nb];
                        }
                    }
                    if needs(b) {
                        let gb = zeroed(&mut lower[b.0], nb);
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % nb] += gi * ad[i];
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let gx = zeroed(&mut lower[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += c * b);
                }
                Op::Shift(x) | Op::Reshape(x) => {
                    let gx = zeroed(&mut lower[x.0], g.len());
                    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
                Op::MatMul {
                    a,
                    b,
                    shared,
                    batch,
                    m,
                    k,
                    n,
                } => {
                    let (m, k, n, batch) = (*m, *k, *n, *batch);
                    let (ad, bd) = (val(a).data(), val(b).data());
                    if *shared {
                        let rows = batch * m;
                        if needs(a) {
                            let ga = zeroed(&mut lower[a.0], rows * k);
                            gemm(rows, n, k, g, false, bd, true, ga, true);
                        }
                        if needs(b) {
                            let gb = zeroed(&mut lower[b.0], k * n);
                            gemm(k, rows, n, ad, true, g, false, gb, true);
                        }
                    } else {
                        if needs(a) {
                            let ga = zeroed(&mut lower[a.0], batch * m * k);
                            for i in 0..batch {
                                gemm(
                                    m,
                                    n,
                                    k,
                                    &g[i * m * n..(i + 1) * m * n],
                                    false,
                                    &bd[i * k * n..(i + 1) * k * n],
                                    true,
                                    &mut ga[i * m * k..(i + 1) * m * k],
                                    true,
                                );
                            }
                        }
                        if needs(b) {
                            let gb = zeroed(&mut lower[b.0], batch * k * n);
                            for i in 0..batch {
                                gemm(
                                    k,
                                    m,
                                    n,
                                    &ad[i * m * k..(i + 1) * m * k],
                                    true,
                                    &g[i * m * n..(i + 1) * m * n],
                                    false,
                                    &mut gb[i * k * n..(i + 1) * k * n],
                                    true,
                                );
                            }
                        }
                    }
                }
                Op::Transpose(x) => {
                    let s = node.value.shape();
                    // Output is (.., c, r); input was (.., r, c).
                    let (c, r) = (s[s.len() - 2], s[s.len() - 1]);
                    let gx = zeroed(&mut lower[x.0], g.len());
                    for b in 0..g.len() / (r * c) {
                        let base = b * r * c;
                        for j in 0..c {
                            for i in 0..r {
                                gx[base + i * c + j] += g[base + j * r + i];
                            }
                        }
                    }
                }
                Op::Slice { input, axis, start } => {
                    let s = val(input).shape();
                    let outer: usize = s[..*axis].iter().product();
                    let inner: usize = s[axis + 1..].iter().product();
                    let dim = s[*axis];
                    let len = node.value.shape()[*axis];
                    let gx = zeroed(&mut lower[input.0], val(input).numel());
                    for o in 0..outer {
                        let from = (o * dim + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        gx[from..from + len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, b)| *a += b);
                    }
                }
                Op::Concat { inputs, axis } => {
                    let s = node.value.shape();
                    let outer: usize = s[..*axis].iter().product();
                    let inner: usize = s[axis + 1..].iter().product();
                    let total = s[*axis] * inner;
                    let mut offset = 0;
                    for v in inputs {
                        let w = val(v).shape()[*axis] * inner;
                        if needs(v) {
                            let gv = zeroed(&mut lower[v.0], val(v).numel());
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + w];
                                gv[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(a, b)| *a += b);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Sum(x) | Op::Mean(x) => {
                    let n = val(x).numel();
                    let scale = if matches!(node.op, Op::Mean(_)) {
                        1.0 / n as f64
                    } else {
                        1.0
                    };
                    let gx = zeroed(&mut lower[x.0], n);
                    gx.iter_mut().for_each(|a| *a += g[0] * scale);
                }
                Op::Square(x) => {
                    let xd = val(x).data();
                    let gx = zeroed(&mut lower[x.0], g.len());
                    for i in 0..g.len() {
                        gx[i] += 2.0 * xd[i] * g[i];
                    }
                }
                Op::Sqrt(x) => {
                    let yd = node.value.data();
                    let gx = zeroed(&mut lower[x.0], g.len());
                    for i in 0..g.len() {
                        gx[i] += 0.5 * g[i] / yd[i];
                    }
                }
                Op::Exp(x) => {
                    let yd = node.value.data();
                    let gx = zeroed(&mut lower[x.0], g.len());
                    for i in 0..g.len() {
                        gx[i] += yd[i] * g[i];
                    }
                }
                Op::Relu(x) => {
                    let xd = val(x).data();
                    let gx = zeroed(&mut lower[x.0], g.len());
                    for i in 0..g.len() {
                        if xd[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
                Op::Gelu(x) => {
                    let xd = val(x).data();
                    let gx = zeroed(&mut lower[x.0], g.len());
                    for i in 0..g.len() {
                        gx[i] += gelu_parts(xd[i]).1 * g[i];
                    }
                }
                Op::Softmax(x) => {
                    let y = node.value.data();
                    let c = *node.value.shape().last().unwrap();
                    let gx = zeroed(&mut lower[x.0], g.len());
                    for r in 0..g.len() / c {
                        let (ys, gs) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { input, inv_std } => {
                    let y = node.value.data();
                    let c = *node.value.shape().last().unwrap();
                    let cf = c as f64;
                    let gx = zeroed(&mut lower[input.0], g.len());
                    for (r, is) in inv_std.iter().enumerate() {
                        let (ys, gs) = (&y[r * c..(r + 1) * c], &g[r * c..(r + 1) * c]);
                        let sg: f64 = gs.iter().sum();
                        let sgy: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            gx[r * c + j] += is / cf * (cf * gs[j] - sg - ys[j] * sgy);
                        }
                    }
                }
                Op::Embedding { table, indices } => {
                    let d = val(table).shape()[1];
                    let gt = zeroed(&mut lower[table.0], val(table).numel());
                    for (row, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            gt[i * d + j] += g[row * d + j];
                        }
                    }
                }
                Op::Custom { op, inputs } => {
                    let ts: Vec<&Tensor> = inputs.iter().map(val).collect();
                    let grads = op.backward(&ts, &node.value, g);
                    for (v, gv) in inputs.iter().zip(grads) {
                        if needs(v) {
                            let slot = zeroed(&mut lower[v.0], gv.len());
                            slot.iter_mut().zip(&gv).for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            if !matches!(node.op, Op::Leaf) {
                upper[0] = None;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_leaf(g: &mut Graph, v: &[f64]) -> Var {
        g.param(Tensor::from_vec(v.to_vec()))
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[1.0, 2.0, 3.0]);
        let sq = g.square(x);
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn mean_gradient() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[1.0, -2.0, 3.0, 4.0]);
        let loss = g.mean(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn hinge_values_and_gradients() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[-2.0, 3.0]);
        let y = g.max_with_zero(x);
        assert_eq!(g.value(y).data(), &[0.0, 3.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn uniform_softmax() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[0.0, 0.0, 0.0]);
        let y = g.softmax(x).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[1.0]);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[1.0, 2.0]);
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn nan_reports_origin() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[-1.0]);
        let r = g.sqrt(x);
        let loss = g.sum(r);
        match g.backward(loss) {
            Err(Error::NonFinite { op_id, op }) => {
                assert_eq!(op_id, r.id());
                assert_eq!(op, "sqrt");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        let c = g.constant(Tensor::zeros(&[2]));
        let err = g.add(a, c).unwrap_err();
        assert!(err.to_string().contains("add"), "{err}");
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = vec_leaf(&mut g, &[3.0]);
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let loss = g.sum(z);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn suffix_broadcast_bias() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = vec_leaf(&mut g, &[10.0, 20.0]);
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn slice_and_concat_invert() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        let a = g.slice(x, 1, 0, 1).unwrap();
        let b = g.slice(x, 1, 1, 2).unwrap();
        assert_eq!(g.value(b).data(), &[1.0, 2.0, 4.0, 5.0]);
        let y = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn embedding_scatters_gradient() {
        let mut g = Graph::new();
        let table = g.param(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let e = g.embedding_lookup(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum(e);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(table).unwrap(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(g.embedding_lookup(table, &[3]).is_err());
    }

    #[test]
    fn masked_attention_ignores_blocked_keys() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::new(vec![1, 1, 2], vec![1.0, 0.0]).unwrap());
        let k = g.constant(Tensor::new(vec![1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let v = g.constant(Tensor::new(vec![1, 2, 1], vec![5.0, -7.0]).unwrap());
        let mask = g.constant(Tensor::new(vec![1, 2], vec![0.0, MASK_VALUE]).unwrap());
        let out = g.scaled_dot_product_attention(q, k, v, Some(mask)).unwrap();
        assert!((g.value(out).data()[0] - 5.0).abs() < 1e-12);
    }
}
