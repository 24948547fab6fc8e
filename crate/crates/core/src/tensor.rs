//! Dense row-major tensors and the forward/backward kernels behind every
//! differentiable operation in [`crate::graph`].
//!
//! Forward kernels return `Err(TensorError::NonFinite)` instead of producing
//! NaN or infinity. Shapes are explicit: apart from batch broadcasting in
//! [`Tensor::matmul`] and the suffix broadcast in [`Tensor::add_suffix`] there
//! is no implicit broadcasting.

use crate::error::TensorError;
use crate::scalar::Scalar;

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(TensorError::Contract(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Contract(format!(
                "shape {shape:?} holds {numel} elements but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of_f64(v)).collect())
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![value; numel]).expect("full: valid shape")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Last extent (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[numel / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.last_dim()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() || shape.contains(&0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn finite(self, op: &'static str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.add_assign(other)?;
        out.finite("add")
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "mul")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect();
        Self::new(self.shape.clone(), data)?.finite("mul")
    }

    pub fn scale(&self, c: T) -> Result<Self> {
        self.map(|v| v * c).finite("scale")
    }

    /// `self + other` where `other`'s shape is a trailing suffix of `self`'s
    /// (bias rows, position tables).
    pub fn add_suffix(&self, other: &Self) -> Result<Self> {
        let k = other.rank();
        if k > self.rank() || self.shape[self.rank() - k..] != other.shape[..] {
            return Err(TensorError::Shape {
                op: "add_suffix",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let block = other.numel();
        let mut out = self.clone();
        for chunk in out.data.chunks_exact_mut(block) {
            for (a, &b) in chunk.iter_mut().zip(&other.data) {
                *a += b;
            }
        }
        out.finite("add_suffix")
    }

    /// Sums `self` down to the trailing `suffix` shape (adjoint of `add_suffix`).
    pub fn sum_to_suffix(&self, suffix: &[usize]) -> Self {
        let block: usize = suffix.iter().product();
        let mut acc = vec![T::zero(); block];
        for chunk in self.data.chunks_exact(block) {
            for (a, &b) in acc.iter_mut().zip(chunk) {
                *a += b;
            }
        }
        Self {
            shape: suffix.to_vec(),
            data: acc,
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    // ---------------------------------------------------------------- matmul

    /// Batched matrix product `[..., M, K] x [..., K, N] -> [..., M, N]`.
    ///
    /// Batch extents must agree or be 1 (broadcast); a missing leading
    /// extent counts as 1.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let plan = MatmulPlan::new(&self.shape, &other.shape)?;
        let mut out = vec![T::zero(); plan.out_batch * plan.m * plan.n];
        plan.forward(&self.data, &other.data, &mut out);
        let mut shape = plan.batch_shape.clone();
        shape.push(plan.m);
        shape.push(plan.n);
        Self::new(shape, out)?.finite("matmul")
    }

    /// Adjoints of `matmul` for upstream gradient `grad`.
    pub fn matmul_backward(
        a: &Self,
        b: &Self,
        grad: &Self,
        need_a: bool,
        need_b: bool,
    ) -> Result<(Option<Self>, Option<Self>)> {
        let plan = MatmulPlan::new(&a.shape, &b.shape)?;
        let da = need_a.then(|| {
            let mut da = vec![T::zero(); a.numel()];
            plan.backward_lhs(&b.data, &grad.data, &mut da);
            Self {
                shape: a.shape.clone(),
                data: da,
            }
        });
        let db = need_b.then(|| {
            let mut db = vec![T::zero(); b.numel()];
            plan.backward_rhs(&a.data, &grad.data, &mut db);
            Self {
                shape: b.shape.clone(),
                data: db,
            }
        });
        Ok((da, db))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&self) -> Result<Self> {
        let r = self.rank();
        if r < 2 {
            return Err(TensorError::Contract(format!(
                "transpose_last2 needs rank >= 2, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let mut out = vec![T::zero(); self.numel()];
        for (src, dst) in self.data.chunks_exact(m * n).zip(out.chunks_exact_mut(m * n)) {
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.swap(r - 2, r - 1);
        Ok(Self { shape, data: out })
    }

    // --------------------------------------------------------------- softmax

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_lastdim(&self) -> Result<Self> {
        if !self.all_finite() {
            return Err(TensorError::NonFinite { op: "softmax_lastdim" });
        }
        let d = self.last_dim();
        let mut out = self.data.clone();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let inv = T::one() / total;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        Self::new(self.shape.clone(), out)?.finite("softmax_lastdim")
    }

    /// `dx = y * (g - sum(g * y))` row-wise, `y` being the softmax output.
    pub fn softmax_backward(y: &Self, grad: &Self) -> Self {
        let d = y.last_dim();
        let mut dx = vec![T::zero(); y.numel()];
        for ((yr, gr), dr) in y
            .data
            .chunks_exact(d)
            .zip(grad.data.chunks_exact(d))
            .zip(dx.chunks_exact_mut(d))
        {
            let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                *o = yv * (gv - dot);
            }
        }
        Self {
            shape: y.shape.clone(),
            data: dx,
        }
    }

    // --------------------------------------------------------------- slicing

    /// Columns `[lo, hi)` of the last axis; positions outside `[0, D)` read 0.
    pub fn slice_zero_pad(&self, lo: isize, hi: isize) -> Result<Self> {
        if lo >= hi {
            return Err(TensorError::Range {
                op: "slice_zero_pad",
                lo,
                hi,
            });
        }
        let d = self.last_dim() as isize;
        let w = (hi - lo) as usize;
        // in-range window of the source, and where it lands in the output
        let src_lo = lo.clamp(0, d);
        let src_hi = hi.clamp(0, d);
        let mut out = vec![T::zero(); self.rows() * w];
        if src_lo < src_hi {
            let off = (src_lo - lo) as usize;
            let len = (src_hi - src_lo) as usize;
            for (src, dst) in self.data.chunks_exact(d as usize).zip(out.chunks_exact_mut(w)) {
                dst[off..off + len].copy_from_slice(&src[src_lo as usize..src_hi as usize]);
            }
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(w);
        } else {
            *shape.last_mut().unwrap() = w;
        }
        Ok(Self { shape, data: out })
    }

    /// Adjoint of `slice_zero_pad`: scatters `grad` into the in-range columns
    /// of a zero tensor shaped like the source.
    pub fn slice_zero_pad_backward(source_shape: &[usize], lo: isize, grad: &Self) -> Self {
        let d = source_shape.last().copied().unwrap_or(1) as isize;
        let w = grad.last_dim() as isize;
        let hi = lo + w;
        let src_lo = lo.clamp(0, d);
        let src_hi = hi.clamp(0, d);
        let numel: usize = source_shape.iter().product();
        let mut dx = vec![T::zero(); numel];
        if src_lo < src_hi {
            let off = (src_lo - lo) as usize;
            let len = (src_hi - src_lo) as usize;
            for (g, dst) in grad.data.chunks_exact(w as usize).zip(dx.chunks_exact_mut(d as usize)) {
                for (o, &v) in dst[src_lo as usize..src_hi as usize]
                    .iter_mut()
                    .zip(&g[off..off + len])
                {
                    *o += v;
                }
            }
        }
        Self {
            shape: source_shape.to_vec(),
            data: dx,
        }
    }

    /// Strict column slice `[lo, hi)` of the last axis; no padding.
    pub fn slice_lastdim(&self, lo: usize, hi: usize) -> Result<Self> {
        if lo >= hi || hi > self.last_dim() {
            return Err(TensorError::Range {
                op: "slice_lastdim",
                lo: lo as isize,
                hi: hi as isize,
            });
        }
        let d = self.last_dim();
        let w = hi - lo;
        let mut out = Vec::with_capacity(self.rows() * w);
        for row in self.data.chunks_exact(d) {
            out.extend_from_slice(&row[lo..hi]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = w;
        Ok(Self { shape, data: out })
    }

    /// Concatenation along the last axis.
    pub fn concat_lastdim(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_lastdim of zero parts".into()))?;
        let lead = &first.shape[..first.rank().saturating_sub(1)];
        for p in parts {
            if p.rank() == 0 || &p.shape[..p.rank() - 1] != lead {
                return Err(TensorError::Shape {
                    op: "concat_lastdim",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let rows = first.rows();
        let total: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let w = p.last_dim();
                out.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Self { shape, data: out })
    }

    /// Splits the last axis into consecutive pieces of the given widths.
    pub fn split_lastdim(&self, widths: &[usize]) -> Result<Vec<Self>> {
        if widths.iter().sum::<usize>() != self.last_dim() || widths.contains(&0) {
            return Err(TensorError::Shape {
                op: "split_lastdim",
                lhs: self.shape.clone(),
                rhs: widths.to_vec(),
            });
        }
        let mut lo = 0;
        widths
            .iter()
            .map(|&w| {
                let piece = self.slice_lastdim(lo, lo + w);
                lo += w;
                piece
            })
            .collect()
    }

    // ------------------------------------------------------------ layer norm

    /// Per-row normalisation followed by the affine `gamma * xhat + beta`.
    pub fn layer_norm(&self, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        Ok(self.layer_norm_with_stats(gamma, beta, eps)?.0)
    }

    /// Layer norm that also returns the normalised rows and per-row inverse
    /// standard deviations needed by the backward pass.
    pub fn layer_norm_with_stats(
        &self,
        gamma: &Self,
        beta: &Self,
        eps: T,
    ) -> Result<(Self, Vec<T>, Vec<T>)> {
        let d = self.last_dim();
        if gamma.shape != [d] || beta.shape != [d] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gamma.shape.clone(),
            });
        }
        if !(eps > T::zero()) {
            return Err(TensorError::Contract("layer_norm: eps must be positive".into()));
        }
        let dn = T::of_usize(d);
        let mut xhat = vec![T::zero(); self.numel()];
        let mut rstd = Vec::with_capacity(self.rows());
        let mut out = vec![T::zero(); self.numel()];
        for ((row, xh), o) in self
            .data
            .chunks_exact(d)
            .zip(xhat.chunks_exact_mut(d))
            .zip(out.chunks_exact_mut(d))
        {
            let mean = row.iter().copied().fold(T::zero(), |a, v| a + v) / dn;
            let var = row
                .iter()
                .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
                / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for j in 0..d {
                xh[j] = (row[j] - mean) * r;
                o[j] = xh[j] * gamma.data[j] + beta.data[j];
            }
        }
        let out = Self::new(self.shape.clone(), out)?.finite("layer_norm")?;
        Ok((out, xhat, rstd))
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn layer_norm_backward(
        xhat: &[T],
        rstd: &[T],
        gamma: &Self,
        grad: &Self,
    ) -> (Self, Self, Self) {
        let d = gamma.numel();
        let dn = T::of_usize(d);
        let mut dx = vec![T::zero(); grad.numel()];
        let mut dgamma = vec![T::zero(); d];
        let mut dbeta = vec![T::zero(); d];
        for (((g, xh), &r), o) in grad
            .data
            .chunks_exact(d)
            .zip(xhat.chunks_exact(d))
            .zip(rstd)
            .zip(dx.chunks_exact_mut(d))
        {
            let mut mean_dxhat = T::zero();
            let mut mean_dxhat_xhat = T::zero();
            for j in 0..d {
                let dxh = g[j] * gamma.data[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh[j];
                dgamma[j] += g[j] * xh[j];
                dbeta[j] += g[j];
            }
            mean_dxhat /= dn;
            mean_dxhat_xhat /= dn;
            for j in 0..d {
                let dxh = g[j] * gamma.data[j];
                o[j] = r * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
        (
            Self {
                shape: grad.shape.clone(),
                data: dx,
            },
            Self {
                shape: vec![d],
                data: dgamma,
            },
            Self {
                shape: vec![d],
                data: dbeta,
            },
        )
    }

    // ------------------------------------------------------------------ gelu

    /// Exact GELU, `x * Phi(x)` with the Gaussian CDF written through `erf`.
    pub fn gelu(&self) -> Result<Self> {
        let half = T::of_f64(0.5);
        let inv_sqrt2 = T::of_f64(std::f64::consts::FRAC_1_SQRT_2);
        self.map(|x| x * half * (T::one() + (x * inv_sqrt2).erf()))
            .finite("gelu")
    }

    pub fn gelu_backward(x: &Self, grad: &Self) -> Self {
        let half = T::of_f64(0.5);
        let inv_sqrt2 = T::of_f64(std::f64::consts::FRAC_1_SQRT_2);
        let inv_sqrt_2pi = T::of_f64(0.398_942_280_401_432_7);
        let data = x
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&x, &g)| {
                let cdf = half * (T::one() + (x * inv_sqrt2).erf());
                let pdf = (-(x * x) * half).exp() * inv_sqrt_2pi;
                g * (cdf + x * pdf)
            })
            .collect();
        Self {
            shape: x.shape.clone(),
            data,
        }
    }
}

/// Index bookkeeping for batched, broadcasting matrix products.
struct MatmulPlan {
    batch_shape: Vec<usize>,
    out_batch: usize,
    /// (a batch index, b batch index) for each output batch, row-major.
    pairs: Vec<(usize, usize)>,
    a_batch: usize,
    b_batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || TensorError::Shape {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(err());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let ab = &a[..a.len() - 2];
        let bb = &b[..b.len() - 2];
        let rank = ab.len().max(bb.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ab), pad(bb));
        let mut batch_shape = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(err());
            }
            batch_shape.push(x.max(y));
        }
        let out_batch: usize = batch_shape.iter().product();
        let a_batch: usize = pa.iter().product();
        let b_batch: usize = pb.iter().product();
        let mut pairs = Vec::with_capacity(out_batch);
        let mut idx = vec![0usize; rank];
        for _ in 0..out_batch {
            let (mut ia, mut ib) = (0, 0);
            for d in 0..rank {
                ia = ia * pa[d] + if pa[d] == 1 { 0 } else { idx[d] };
                ib = ib * pb[d] + if pb[d] == 1 { 0 } else { idx[d] };
            }
            pairs.push((ia, ib));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < batch_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(Self {
            batch_shape,
            out_batch,
            pairs,
            a_batch,
            b_batch,
            m,
            k,
            n,
        })
    }

    /// A single shared right operand lets the whole batch run as one GEMM.
    fn flat_rhs(&self) -> bool {
        self.b_batch == 1 && self.a_batch == self.out_batch
    }

    fn forward<T: Scalar>(&self, a: &[T], b: &[T], out: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat_rhs() {
            T::gemm(self.out_batch * m, k, n, a, false, b, false, out, false);
            return;
        }
        for (o, &(ia, ib)) in self.pairs.iter().enumerate() {
            T::gemm(
                m,
                k,
                n,
                &a[ia * m * k..(ia + 1) * m * k],
                false,
                &b[ib * k * n..(ib + 1) * k * n],
                false,
                &mut out[o * m * n..(o + 1) * m * n],
                false,
            );
        }
    }

    /// `da = g * b^T`, summed over broadcast batches in output order.
    fn backward_lhs<T: Scalar>(&self, b: &[T], g: &[T], da: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat_rhs() {
            T::gemm(self.out_batch * m, n, k, g, false, b, true, da, false);
            return;
        }
        for (o, &(ia, ib)) in self.pairs.iter().enumerate() {
            T::gemm(
                m,
                n,
                k,
                &g[o * m * n..(o + 1) * m * n],
                false,
                &b[ib * k * n..(ib + 1) * k * n],
                true,
                &mut da[ia * m * k..(ia + 1) * m * k],
                true,
            );
        }
    }

    /// `db = a^T * g`, summed over broadcast batches in output order.
    fn backward_rhs<T: Scalar>(&self, a: &[T], g: &[T], db: &mut [T]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.flat_rhs() {
            T::gemm(k, self.out_batch * m, n, a, true, g, false, db, false);
            return;
        }
        for (o, &(ia, ib)) in self.pairs.iter().enumerate() {
            T::gemm(
                k,
                m,
                n,
                &a[ia * m * k..(ia + 1) * m * k],
                true,
                &g[o * m * n..(o + 1) * m * n],
                false,
                &mut db[ib * k * n..(ib + 1) * k * n],
                true,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_dot() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let col = t(&[2, 1], &[3.0, 4.0]);
        assert_eq!(eye.matmul(&col).unwrap().data(), &[3.0, 4.0]);
        let row = t(&[1, 2], &[1.0, 2.0]);
        assert_eq!(row.matmul(&col).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2, 3], &[0.0; 6]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[test]
    fn matmul_batch_broadcast() {
        // [2,1,2] x [1,2,1]: lhs batch 2, rhs batch broadcast from 1
        let a = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[1, 2, 1], &[1.0, 1.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
        // lhs broadcast
        let a1 = t(&[1, 1, 2], &[1.0, 2.0]);
        let b2 = t(&[2, 2, 1], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(a1.matmul(&b2).unwrap().data(), &[1.0, 2.0]);
        // incompatible batches
        let b3 = t(&[3, 2, 1], &[0.0; 6]);
        assert!(a.matmul(&b3).is_err());
    }

    #[test]
    fn softmax_cases() {
        let s = t(&[2], &[0.0, 0.0]).softmax_lastdim().unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        for x in [-1e3, 0.0, 7.5, 1e3] {
            assert_eq!(t(&[1], &[x]).softmax_lastdim().unwrap().data(), &[1.0]);
        }
        let s = t(&[3], &[1.0, 2.0, 3.0]).softmax_lastdim().unwrap();
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let z: f64 = e.iter().sum();
        for (a, b) in s.data().iter().zip(&e) {
            assert!((a - b / z).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = t(&[2], &[f64::NAN, 0.0]);
        assert!(matches!(
            x.softmax_lastdim(),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn slice_zero_pad_examples() {
        let x = t(&[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.slice_zero_pad(0, 4).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.slice_zero_pad(-1, 2).unwrap().data(), &[0.0, 1.0, 2.0]);
        assert_eq!(x.slice_zero_pad(3, 6).unwrap().data(), &[4.0, 0.0, 0.0]);
        assert_eq!(x.slice_zero_pad(-3, -1).unwrap().data(), &[0.0, 0.0]);
        assert!(matches!(
            x.slice_zero_pad(2, 2),
            Err(TensorError::Range { .. })
        ));
    }

    #[test]
    fn slice_zero_pad_backward_drops_padding() {
        let g = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let dx = Tensor::slice_zero_pad_backward(&[2, 2], -1, &g);
        assert_eq!(dx.data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn layer_norm_cases() {
        let ones = t(&[3], &[1.0; 3]);
        let zeros = t(&[3], &[0.0; 3]);
        let y = t(&[3], &[1.0, 1.0, 1.0]).layer_norm(&ones, &zeros, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        let ones2 = t(&[2], &[1.0; 2]);
        let zeros2 = t(&[2], &[0.0; 2]);
        let y = t(&[2], &[-1.0, 1.0]).layer_norm(&ones2, &zeros2, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gelu_asymptotes() {
        let y = t(&[3], &[0.0, 20.0, -20.0]).gelu().unwrap();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 20.0).abs() < 1e-9);
        assert!(y.data()[2].abs() < 1e-9);
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[5.0, 6.0]);
        let c = Tensor::concat_lastdim(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let parts = c.split_lastdim(&[2, 1]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
        assert_eq!(Tensor::concat_lastdim(&[&a]).unwrap(), a);
        let bad = t(&[3, 1], &[0.0; 3]);
        assert!(Tensor::concat_lastdim(&[&a, &bad]).is_err());
    }

    #[test]
    fn add_suffix_broadcasts_rows() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[10.0, 20.0]);
        assert_eq!(x.add_suffix(&b).unwrap().data(), &[11.0, 22.0, 13.0, 24.0]);
        assert!(x.add_suffix(&t(&[3], &[0.0; 3])).is_err());
    }
}
