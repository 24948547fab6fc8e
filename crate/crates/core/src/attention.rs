//! Multi-head self-attention with overlapping heads.
//!
//! The query, key and value projections are split into `h` heads of width
//! `head_dim`. With overlap `o`, head `i` additionally reads `o` columns
//! from each neighbouring head, i.e. source columns
//! `[i * head_dim - o, (i + 1) * head_dim + o)`, with zeros standing in for
//! the missing neighbour of the first and last head. Each widened head runs
//! scaled dot-product attention, the head outputs are concatenated and an
//! output projection maps `h * v_width` back to `dim`.
//!
//! Overlap is applied to the tensors selected by [`OverlapTargets`]; queries
//! and keys always move together so their widths agree.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result, ScheduleError};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which of Q/K (as a pair) and V receive overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OverlapTargets {
    pub qk: bool,
    pub v: bool,
}

impl OverlapTargets {
    pub const QKV: Self = Self { qk: true, v: true };
    pub const QK: Self = Self { qk: true, v: false };
    pub const V: Self = Self { qk: false, v: true };
    pub const ALL: [Self; 3] = [Self::QK, Self::V, Self::QKV];
}

impl Default for OverlapTargets {
    fn default() -> Self {
        Self::QKV
    }
}

impl fmt::Display for OverlapTargets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match (self.qk, self.v) {
            (true, true) => "qkv",
            (true, false) => "qk",
            (false, true) => "v",
            (false, false) => "none",
        };
        f.write_str(s)
    }
}

impl FromStr for OverlapTargets {
    type Err = Error;

    /// `qkv`, `qk`, `v` or `none`; commas and spaces are ignored.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "qkv" => Ok(Self::QKV),
            "qk" => Ok(Self::QK),
            "v" => Ok(Self::V),
            "none" => Ok(Self { qk: false, v: false }),
            "q" | "k" | "qv" | "kv" => Err(Error::Config(format!(
                "overlap targets {s:?}: queries and keys must be overlapped together"
            ))),
            _ => Err(Error::Config(format!(
                "overlap targets {s:?}: expected qkv, qk, v or none"
            ))),
        }
    }
}

/// Width used in the `1 / sqrt(d_k)` attention scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ScaleMode {
    /// Actual query/key head width, `head_dim + 2 * o` when Q/K overlap.
    #[default]
    Widened,
    /// Always the unwidened `head_dim`.
    HeadDim,
}

impl fmt::Display for ScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScaleMode::Widened => "widened",
            ScaleMode::HeadDim => "head_dim",
        })
    }
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "widened" => Ok(ScaleMode::Widened),
            "head_dim" | "headdim" => Ok(ScaleMode::HeadDim),
            _ => Err(Error::Config(format!(
                "scale mode {s:?}: expected widened or head_dim"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub dim: usize,
    pub heads: usize,
    pub overlap: usize,
    pub targets: OverlapTargets,
    pub qkv_bias: bool,
    pub proj_bias: bool,
    pub scale_mode: ScaleMode,
}

impl AttentionConfig {
    /// Overlap on Q, K and V, both biases on, widened scale.
    pub fn new(dim: usize, heads: usize, overlap: usize) -> Self {
        Self {
            dim,
            heads,
            overlap,
            targets: OverlapTargets::QKV,
            qkv_bias: true,
            proj_bias: true,
            scale_mode: ScaleMode::Widened,
        }
    }

    pub fn with_targets(mut self, targets: OverlapTargets) -> Self {
        self.targets = targets;
        self
    }

    pub fn with_scale_mode(mut self, mode: ScaleMode) -> Self {
        self.scale_mode = mode;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Query/key width per head.
    pub fn qk_width(&self) -> usize {
        self.head_dim() + if self.targets.qk { 2 * self.overlap } else { 0 }
    }

    /// Value width per head.
    pub fn v_width(&self) -> usize {
        self.head_dim() + if self.targets.v { 2 * self.overlap } else { 0 }
    }

    /// Input width of the output projection.
    pub fn proj_in(&self) -> usize {
        self.heads * self.v_width()
    }

    pub fn scale_width(&self) -> usize {
        match self.scale_mode {
            ScaleMode::Widened => self.qk_width(),
            ScaleMode::HeadDim => self.head_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.overlap > self.head_dim() {
            return Err(ScheduleError::Overflow {
                layer: 0,
                overlap: self.overlap,
                head_dim: self.head_dim(),
            }
            .into());
        }
        Ok(())
    }

    /// Expected `(name, shape)` of every weight array.
    pub fn weight_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut v = vec![("qkv_w", vec![self.dim, 3 * self.dim])];
        if self.qkv_bias {
            v.push(("qkv_b", vec![3 * self.dim]));
        }
        v.push(("proj_w", vec![self.proj_in(), self.dim]));
        if self.proj_bias {
            v.push(("proj_b", vec![self.dim]));
        }
        v
    }
}

/// Learnable arrays of one attention layer, generic over the storage
/// (`Tensor<T>` for weights, [`Var`] once bound to a graph).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<P> {
    /// `dim x 3*dim`, columns ordered Q | K | V.
    pub qkv_w: P,
    pub qkv_b: Option<P>,
    /// `h*v_width x dim`.
    pub proj_w: P,
    pub proj_b: Option<P>,
}

pub type AttentionWeights<T> = AttentionParams<Tensor<T>>;

impl<P> AttentionParams<P> {
    /// Visits `(name, value)` in canonical order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a P)) {
        f("qkv_w", &self.qkv_w);
        if let Some(b) = &self.qkv_b {
            f("qkv_b", b);
        }
        f("proj_w", &self.proj_w);
        if let Some(b) = &self.proj_b {
            f("proj_b", b);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut P)) {
        f("qkv_w", &mut self.qkv_w);
        if let Some(b) = &mut self.qkv_b {
            f("qkv_b", b);
        }
        f("proj_w", &mut self.proj_w);
        if let Some(b) = &mut self.proj_b {
            f("proj_b", b);
        }
    }

    pub fn try_map<Q, E>(
        &self,
        f: &mut dyn FnMut(&str, &P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<AttentionParams<Q>, E> {
        Ok(AttentionParams {
            qkv_w: f("qkv_w", &self.qkv_w)?,
            qkv_b: self.qkv_b.as_ref().map(|b| f("qkv_b", b)).transpose()?,
            proj_w: f("proj_w", &self.proj_w)?,
            proj_b: self.proj_b.as_ref().map(|b| f("proj_b", b)).transpose()?,
        })
    }
}

impl AttentionParams<Vec<usize>> {
    pub fn shapes(cfg: &AttentionConfig) -> Self {
        Self {
            qkv_w: vec![cfg.dim, 3 * cfg.dim],
            qkv_b: cfg.qkv_bias.then(|| vec![3 * cfg.dim]),
            proj_w: vec![cfg.proj_in(), cfg.dim],
            proj_b: cfg.proj_bias.then(|| vec![cfg.dim]),
        }
    }
}

impl<T: Scalar> AttentionWeights<T> {
    /// Truncated-normal matrices (std 0.02, cut at 2 sigma), zero biases.
    pub fn init(cfg: &AttentionConfig, rng: &mut Rng) -> Self {
        AttentionParams::shapes(cfg)
            .try_map::<_, std::convert::Infallible>(&mut |name, shape| {
                Ok(if name.ends_with("_b") {
                    Tensor::zeros(shape.clone())
                } else {
                    trunc_normal(shape, rng)
                })
            })
            .unwrap()
    }

    /// Gaussian weights with a chosen standard deviation, biases included.
    /// Used by tests and sweeps that want non-trivial biases.
    pub fn random(cfg: &AttentionConfig, std: f64, rng: &mut Rng) -> Self {
        AttentionParams::shapes(cfg)
            .try_map::<_, std::convert::Infallible>(&mut |_, shape| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::of_f64(rng.normal() * std)).collect();
                Ok(Tensor::new(shape.clone(), data).unwrap())
            })
            .unwrap()
    }

    pub fn check_shapes(&self, cfg: &AttentionConfig) -> Result<()> {
        let mut actual = Vec::new();
        self.visit(&mut |name, t| actual.push((name.to_string(), t.shape().to_vec())));
        check_against(cfg, &actual)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Registers the arrays on `graph`, as gradient-tracked leaves when
    /// `trainable`.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> AttentionParams<Var> {
        self.try_map::<_, std::convert::Infallible>(&mut |_, t| {
            Ok(if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            })
        })
        .unwrap()
    }
}

fn check_against(cfg: &AttentionConfig, actual: &[(String, Vec<usize>)]) -> Result<()> {
    let expected = cfg.weight_shapes();
    let same = expected.len() == actual.len()
        && expected
            .iter()
            .zip(actual)
            .all(|((en, es), (an, ash))| *en == an && es == ash);
    if same {
        return Ok(());
    }
    let fmt_list = |v: Vec<String>| v.join(", ");
    Err(Error::Config(format!(
        "attention weights do not match config (dim {}, heads {}, overlap {}, targets {}): expected [{}], got [{}]",
        cfg.dim,
        cfg.heads,
        cfg.overlap,
        cfg.targets,
        fmt_list(expected.iter().map(|(n, s)| format!("{n} {s:?}")).collect()),
        fmt_list(actual.iter().map(|(n, s)| format!("{n} {s:?}")).collect()),
    )))
}

pub(crate) fn trunc_normal<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of_f64(rng.truncated_normal(0.02, 2.0)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("trunc_normal: valid shape")
}

fn head_window(i: usize, head_dim: usize, overlap: usize) -> (isize, isize) {
    let lo = (i * head_dim) as isize - overlap as isize;
    let hi = ((i + 1) * head_dim + overlap) as isize;
    (lo, hi)
}

/// Splits `x: [T, h*head_dim]` into `[h, T, head_dim + 2*overlap]`.
pub fn split_heads_overlapped<T: Scalar>(
    x: &Tensor<T>,
    heads: usize,
    head_dim: usize,
    overlap: usize,
) -> Result<Tensor<T>> {
    if x.rank() != 2 || x.last_dim() != heads * head_dim {
        return Err(Error::Config(format!(
            "split_heads_overlapped: input {:?} is not [T, {}]",
            x.shape(),
            heads * head_dim
        )));
    }
    if overlap > head_dim {
        return Err(ScheduleError::Overflow {
            layer: 0,
            overlap,
            head_dim,
        }
        .into());
    }
    let w = head_dim + 2 * overlap;
    let mut data = Vec::with_capacity(heads * x.rows() * w);
    for i in 0..heads {
        let (lo, hi) = head_window(i, head_dim, overlap);
        data.extend_from_slice(x.slice_zero_pad(lo, hi)?.data());
    }
    Ok(Tensor::new(vec![heads, x.rows(), w], data)?)
}

/// Graph form of [`split_heads_overlapped`]: one `[..., T, w]` var per head.
pub fn split_heads_overlapped_vars<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    heads: usize,
    head_dim: usize,
    overlap: usize,
) -> Result<Vec<Var>> {
    if g.value(x).last_dim() != heads * head_dim {
        return Err(Error::Config(format!(
            "split_heads_overlapped: input {:?} does not end in {}",
            g.shape(x),
            heads * head_dim
        )));
    }
    if overlap > head_dim {
        return Err(ScheduleError::Overflow {
            layer: 0,
            overlap,
            head_dim,
        }
        .into());
    }
    (0..heads)
        .map(|i| {
            let (lo, hi) = head_window(i, head_dim, overlap);
            Ok(g.slice_zero_pad(x, lo, hi)?)
        })
        .collect()
}

/// `softmax(q k^T / sqrt(d_q)) v` with `d_q` the query/key width.
pub fn attention_head<T: Scalar>(g: &mut Graph<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    let d = g.value(q).last_dim();
    attention_head_scaled(g, q, k, v, d)
}

/// Scaled dot-product attention with an explicit scale width.
pub fn attention_head_scaled<T: Scalar>(
    g: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    scale_width: usize,
) -> Result<Var> {
    if g.value(q).last_dim() != g.value(k).last_dim() {
        return Err(crate::error::TensorError::Shape {
            op: "attention_head",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        }
        .into());
    }
    let kt = g.transpose_last2(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, inv_sqrt::<T>(scale_width))?;
    let weights = g.softmax_lastdim(scaled)?;
    Ok(g.matmul(weights, v)?)
}

fn inv_sqrt<T: Scalar>(width: usize) -> T {
    T::one() / T::of_usize(width).sqrt()
}

fn check_bound<T: Scalar>(
    g: &Graph<T>,
    w: &AttentionParams<Var>,
    cfg: &AttentionConfig,
) -> Result<()> {
    let mut actual = Vec::new();
    w.visit(&mut |name, &v| actual.push((name.to_string(), g.shape(v).to_vec())));
    check_against(cfg, &actual)
}

/// One attention layer over `tokens: [T, dim]` or `[B, T, dim]`.
pub fn mohsa_forward<T: Scalar>(
    g: &mut Graph<T>,
    tokens: Var,
    w: &AttentionParams<Var>,
    cfg: &AttentionConfig,
) -> Result<Var> {
    cfg.validate()?;
    check_bound(g, w, cfg)?;
    if g.value(tokens).rank() < 2 || g.value(tokens).last_dim() != cfg.dim {
        return Err(crate::error::TensorError::Shape {
            op: "mohsa_forward",
            lhs: g.shape(tokens).to_vec(),
            rhs: vec![cfg.dim],
        }
        .into());
    }
    let dim = cfg.dim as isize;
    let hd = cfg.head_dim();
    let mut qkv = g.matmul(tokens, w.qkv_w)?;
    if let Some(b) = w.qkv_b {
        qkv = g.add_suffix(qkv, b)?;
    }
    let q = g.slice_zero_pad(qkv, 0, dim)?;
    let k = g.slice_zero_pad(qkv, dim, 2 * dim)?;
    let v = g.slice_zero_pad(qkv, 2 * dim, 3 * dim)?;
    let o_qk = if cfg.targets.qk { cfg.overlap } else { 0 };
    let o_v = if cfg.targets.v { cfg.overlap } else { 0 };
    let qs = split_heads_overlapped_vars(g, q, cfg.heads, hd, o_qk)?;
    let ks = split_heads_overlapped_vars(g, k, cfg.heads, hd, o_qk)?;
    let vs = split_heads_overlapped_vars(g, v, cfg.heads, hd, o_v)?;
    let scale_width = cfg.scale_width();
    let mut outs = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        outs.push(attention_head_scaled(g, qs[i], ks[i], vs[i], scale_width)?);
    }
    let cat = g.concat_lastdim(&outs)?;
    let mut out = g.matmul(cat, w.proj_w)?;
    if let Some(b) = w.proj_b {
        out = g.add_suffix(out, b)?;
    }
    Ok(out)
}

/// Forward pass on plain tensors, without gradient tracking.
pub fn mohsa_forward_tensor<T: Scalar>(
    tokens: &Tensor<T>,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(tokens.clone());
    let bound = w.bind(&mut g, false);
    let out = mohsa_forward(&mut g, x, &bound, cfg)?;
    Ok(g.value(out).clone())
}

/// Standard multi-head attention with hard head boundaries, evaluated
/// directly on tensors. Ignores `cfg.overlap` and `cfg.targets`.
pub fn mhsa_reference<T: Scalar>(
    tokens: &Tensor<T>,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    let plain = AttentionConfig {
        overlap: 0,
        ..*cfg
    };
    plain.validate()?;
    w.check_shapes(&plain)?;
    let hd = plain.head_dim();
    let dim = plain.dim;
    let mut qkv = tokens.matmul(&w.qkv_w)?;
    if let Some(b) = &w.qkv_b {
        qkv = qkv.add_suffix(b)?;
    }
    let q = qkv.slice_lastdim(0, dim)?;
    let k = qkv.slice_lastdim(dim, 2 * dim)?;
    let v = qkv.slice_lastdim(2 * dim, 3 * dim)?;
    let scale = inv_sqrt::<T>(hd);
    let mut heads = Vec::with_capacity(plain.heads);
    for i in 0..plain.heads {
        let (lo, hi) = (i * hd, (i + 1) * hd);
        let qh = q.slice_lastdim(lo, hi)?;
        let kh = k.slice_lastdim(lo, hi)?;
        let vh = v.slice_lastdim(lo, hi)?;
        let scores = qh.matmul(&kh.transpose_last2()?)?.scale(scale)?;
        heads.push(scores.softmax_lastdim()?.matmul(&vh)?);
    }
    let refs: Vec<&Tensor<T>> = heads.iter().collect();
    let mut out = Tensor::concat_lastdim(&refs)?.matmul(&w.proj_w)?;
    if let Some(b) = &w.proj_b {
        out = out.add_suffix(b)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShapeReport {
    pub d_q: usize,
    pub d_v: usize,
    pub proj_in: usize,
    pub param_count: usize,
}

/// Effective head widths and the learnable-scalar count of one layer.
pub fn shape_report(cfg: &AttentionConfig) -> ShapeReport {
    let param_count = cfg
        .weight_shapes()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    ShapeReport {
        d_q: cfg.qk_width(),
        d_v: cfg.v_width(),
        proj_in: cfg.proj_in(),
        param_count,
    }
}
