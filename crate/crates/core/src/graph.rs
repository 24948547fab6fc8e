//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles in
//! execution order. [`Graph::backward`] walks the tape in reverse once and
//! adds the resulting adjoints into the gradient slots of the leaves created
//! with [`Graph::param`]; repeated calls accumulate until
//! [`Graph::zero_grad`].

use crate::error::TensorError;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    TransposeLast2(Var),
    Softmax(Var),
    Scale(Var, T),
    Add(Var, Var),
    Mul(Var, Var),
    AddSuffix(Var, Var),
    SliceZeroPad { x: Var, lo: isize },
    Concat(Vec<Var>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    PrependRow { x: Var, row: Var },
    SelectRow { x: Var, index: usize },
    ScaleLeading { x: Var, factors: Vec<T> },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        smoothing: T,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward computation plus accumulated leaf gradients.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a `param` leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Accumulated gradient, or zeros shaped like the value.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<T> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    // ------------------------------------------------------------ operations

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.derived(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose_last2()?;
        Ok(self.derived(v, Op::TransposeLast2(x), &[x]))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).softmax_lastdim()?;
        Ok(self.derived(v, Op::Softmax(x), &[x]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let v = self.value(x).scale(c)?;
        Ok(self.derived(v, Op::Scale(x, c), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.derived(v, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.derived(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x + y` with `y` broadcast over the leading axes of `x`.
    pub fn add_suffix(&mut self, x: Var, y: Var) -> Result<Var> {
        let v = self.value(x).add_suffix(self.value(y))?;
        Ok(self.derived(v, Op::AddSuffix(x, y), &[x, y]))
    }

    pub fn slice_zero_pad(&mut self, x: Var, lo: isize, hi: isize) -> Result<Var> {
        let v = self.value(x).slice_zero_pad(lo, hi)?;
        Ok(self.derived(v, Op::SliceZeroPad { x, lo }, &[x]))
    }

    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_lastdim(&tensors)?;
        Ok(self.derived(v, Op::Concat(parts.to_vec()), parts))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (v, xhat, rstd) =
            self.value(x)
                .layer_norm_with_stats(self.value(gamma), self.value(beta), eps)?;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        };
        Ok(self.derived(v, op, &[x, gamma, beta]))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).gelu()?;
        Ok(self.derived(v, Op::Gelu(x), &[x]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        if !s.is_finite() {
            return Err(TensorError::NonFinite { op: "sum" });
        }
        Ok(self.derived(Tensor::scalar(s), Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = t.sum() / T::of_usize(t.numel());
        if !m.is_finite() {
            return Err(TensorError::NonFinite { op: "mean" });
        }
        Ok(self.derived(Tensor::scalar(m), Op::Mean(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.derived(v, Op::Reshape(x), &[x]))
    }

    /// `[B, N, D]` plus a `[D]` row placed first in every batch item -> `[B, N+1, D]`.
    pub fn prepend_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.value(x), self.value(row));
        if xs.rank() != 3 || rs.shape() != [xs.shape()[2]] {
            return Err(TensorError::Shape {
                op: "prepend_row",
                lhs: xs.shape().to_vec(),
                rhs: rs.shape().to_vec(),
            });
        }
        let (b, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
        let mut data = Vec::with_capacity(b * (n + 1) * d);
        for item in xs.data().chunks_exact(n * d) {
            data.extend_from_slice(rs.data());
            data.extend_from_slice(item);
        }
        let v = Tensor::new(vec![b, n + 1, d], data)?;
        Ok(self.derived(v, Op::PrependRow { x, row }, &[x, row]))
    }

    /// Row `index` of the middle axis: `[B, N, D] -> [B, D]`.
    pub fn select_row(&mut self, x: Var, index: usize) -> Result<Var> {
        let xs = self.value(x);
        if xs.rank() != 3 || index >= xs.shape()[1] {
            return Err(TensorError::Contract(format!(
                "select_row {index} out of range for {:?}",
                xs.shape()
            )));
        }
        let (b, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
        let mut data = Vec::with_capacity(b * d);
        for item in xs.data().chunks_exact(n * d) {
            data.extend_from_slice(&item[index * d..(index + 1) * d]);
        }
        let v = Tensor::new(vec![b, d], data)?;
        Ok(self.derived(v, Op::SelectRow { x, index }, &[x]))
    }

    /// Multiplies batch item `i` (first axis) by `factors[i]`.
    pub fn scale_leading(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        let xs = self.value(x);
        if xs.rank() == 0 || xs.shape()[0] != factors.len() {
            return Err(TensorError::Contract(format!(
                "scale_leading: {} factors for shape {:?}",
                factors.len(),
                xs.shape()
            )));
        }
        let block = xs.numel() / factors.len();
        let mut v = xs.clone();
        for (chunk, &f) in v.data_mut().chunks_exact_mut(block).zip(&factors) {
            chunk.iter_mut().for_each(|e| *e *= f);
        }
        Ok(self.derived(v, Op::ScaleLeading { x, factors }, &[x]))
    }

    /// Mean label-smoothed cross-entropy of `[B, C]` logits.
    ///
    /// The target distribution is `(1 - s) * onehot + s / C`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], smoothing: T) -> Result<Var> {
        let lt = self.value(logits);
        if lt.rank() != 2 || lt.shape()[0] != labels.len() {
            return Err(TensorError::Contract(format!(
                "cross_entropy: logits {:?} vs {} labels",
                lt.shape(),
                labels.len()
            )));
        }
        if !(smoothing >= T::zero() && smoothing < T::one()) {
            return Err(TensorError::Contract(format!(
                "cross_entropy: smoothing {smoothing} outside [0, 1)"
            )));
        }
        let c = lt.shape()[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Contract(format!(
                "cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let probs = lt.softmax_lastdim()?;
        let loss = smoothed_nll(lt, labels, smoothing);
        if !loss.is_finite() {
            return Err(TensorError::NonFinite { op: "cross_entropy" });
        }
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            smoothing,
            probs,
        };
        Ok(self.derived(Tensor::scalar(loss), op, &[logits]))
    }

    // -------------------------------------------------------------- backward

    /// Back-propagates from a single-element `loss` and accumulates into the
    /// gradients of every reachable `param` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::ones(self.shape(loss).to_vec()));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let rg = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (da, db) =
                        Tensor::matmul_backward(val(*a), val(*b), &g, rg(*a), rg(*b))?;
                    if let Some(da) = da {
                        accumulate(&mut adj, *a, da)?;
                    }
                    if let Some(db) = db {
                        accumulate(&mut adj, *b, db)?;
                    }
                }
                Op::TransposeLast2(x) => accumulate(&mut adj, *x, g.transpose_last2()?)?,
                Op::Softmax(x) => {
                    accumulate(&mut adj, *x, Tensor::softmax_backward(&node.value, &g))?
                }
                Op::Scale(x, c) => accumulate(&mut adj, *x, g.map(|v| v * *c))?,
                Op::Add(a, b) => {
                    if rg(*a) {
                        accumulate(&mut adj, *a, g.clone())?;
                    }
                    if rg(*b) {
                        accumulate(&mut adj, *b, g)?;
                    }
                }
                Op::Mul(a, b) => {
                    if rg(*a) {
                        accumulate(&mut adj, *a, g.mul(val(*b))?)?;
                    }
                    if rg(*b) {
                        accumulate(&mut adj, *b, g.mul(val(*a))?)?;
                    }
                }
                Op::AddSuffix(x, y) => {
                    if rg(*y) {
                        accumulate(&mut adj, *y, g.sum_to_suffix(val(*y).shape()))?;
                    }
                    if rg(*x) {
                        accumulate(&mut adj, *x, g)?;
                    }
                }
                Op::SliceZeroPad { x, lo } => {
                    let dx = Tensor::slice_zero_pad_backward(val(*x).shape(), *lo, &g);
                    accumulate(&mut adj, *x, dx)?
                }
                Op::Concat(parts) => {
                    let widths: Vec<usize> = parts.iter().map(|&p| val(p).last_dim()).collect();
                    for (&p, piece) in parts.iter().zip(g.split_lastdim(&widths)?) {
                        if rg(p) {
                            accumulate(&mut adj, p, piece)?;
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (dx, dgamma, dbeta) =
                        Tensor::layer_norm_backward(xhat, rstd, val(*gamma), &g);
                    if rg(*x) {
                        accumulate(&mut adj, *x, dx)?;
                    }
                    if rg(*gamma) {
                        accumulate(&mut adj, *gamma, dgamma)?;
                    }
                    if rg(*beta) {
                        accumulate(&mut adj, *beta, dbeta)?;
                    }
                }
                Op::Gelu(x) => accumulate(&mut adj, *x, Tensor::gelu_backward(val(*x), &g))?,
                Op::Sum(x) => {
                    let s = g.item();
                    accumulate(&mut adj, *x, Tensor::full(val(*x).shape().to_vec(), s))?
                }
                Op::Mean(x) => {
                    let xs = val(*x);
                    let s = g.item() / T::of_usize(xs.numel());
                    accumulate(&mut adj, *x, Tensor::full(xs.shape().to_vec(), s))?
                }
                Op::Reshape(x) => accumulate(&mut adj, *x, g.reshape(val(*x).shape().to_vec())?)?,
                Op::PrependRow { x, row } => {
                    let (b, n1, d) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                    let mut drow = vec![T::zero(); d];
                    let mut dx = Vec::with_capacity(b * (n1 - 1) * d);
                    for item in g.data().chunks_exact(n1 * d) {
                        for (a, &v) in drow.iter_mut().zip(&item[..d]) {
                            *a += v;
                        }
                        dx.extend_from_slice(&item[d..]);
                    }
                    if rg(*row) {
                        accumulate(&mut adj, *row, Tensor::new(vec![d], drow)?)?;
                    }
                    if rg(*x) {
                        accumulate(&mut adj, *x, Tensor::new(vec![b, n1 - 1, d], dx)?)?;
                    }
                }
                Op::SelectRow { x, index } => {
                    let xs = val(*x).shape();
                    let (n, d) = (xs[1], xs[2]);
                    let mut dx = Tensor::zeros(xs.to_vec());
                    for (dst, src) in dx
                        .data_mut()
                        .chunks_exact_mut(n * d)
                        .zip(g.data().chunks_exact(d))
                    {
                        dst[index * d..(index + 1) * d].copy_from_slice(src);
                    }
                    accumulate(&mut adj, *x, dx)?
                }
                Op::ScaleLeading { x, factors } => {
                    let block = g.numel() / factors.len();
                    let mut dx = g;
                    for (chunk, &f) in dx.data_mut().chunks_exact_mut(block).zip(factors) {
                        chunk.iter_mut().for_each(|e| *e *= f);
                    }
                    accumulate(&mut adj, *x, dx)?
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    smoothing,
                    probs,
                } => {
                    let c = probs.last_dim();
                    let b = labels.len();
                    let upstream = g.item() / T::of_usize(b);
                    let off = *smoothing / T::of_usize(c);
                    let on = T::one() - *smoothing + off;
                    let mut dl = probs.clone();
                    for (row, &label) in dl.data_mut().chunks_exact_mut(c).zip(labels) {
                        for (j, v) in row.iter_mut().enumerate() {
                            let target = if j == label { on } else { off };
                            *v = (*v - target) * upstream;
                        }
                    }
                    accumulate(&mut adj, *logits, dl)?
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Mean over rows of `-sum_c q_c log p_c` with a stable log-softmax.
fn smoothed_nll<T: Scalar>(logits: &Tensor<T>, labels: &[usize], smoothing: T) -> T {
    let c = logits.last_dim();
    let cf = T::of_usize(c);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln() + max;
        let mean_logp = row.iter().fold(T::zero(), |a, &v| a + (v - lse)) / cf;
        let nll = -(row[label] - lse);
        total += (T::one() - smoothing) * nll - smoothing * mean_logp;
    }
    total / T::of_usize(labels.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn disconnected_stays_zero() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.param(t(&[2], &[3.0, 4.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(y).is_none());
        assert_eq!(g.grad_or_zeros(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
        g.zero_grad();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.param(t(&[2, 1], &[3.0, 4.0]));
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(a).is_none());
        assert_eq!(g.grad(b).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_confident() {
        let mut g = Graph::new();
        let z = g.param(Tensor::<f64>::zeros(vec![2, 5]));
        let l = g.cross_entropy(z, &[0, 3], 0.0).unwrap();
        assert!((g.value(l).item() - 5f64.ln()).abs() < 1e-12);
        let big = g.param(t(&[1, 3], &[0.0, 60.0, 0.0]));
        let l = g.cross_entropy(big, &[1], 0.0).unwrap();
        assert!(g.value(l).item() < 1e-12);
        assert!(g.cross_entropy(big, &[3], 0.0).is_err());
        assert!(g.cross_entropy(big, &[1], 1.0).is_err());
    }
}
