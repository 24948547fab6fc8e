//! Independent scalar-loop references and finite differences.
//!
//! Everything in the `naive_*` family is written as explicit index loops
//! over `f64` and reads weights only through [`Tensor::data`]. No tensor
//! kernel, graph operation or GEMM from the rest of the crate is used, so
//! agreement with the core is evidence rather than tautology.
//!
//! The `run_*` functions drive the sweeps used by the test suite and the
//! `oracle` / `gradcheck` command-line paths.

use std::fmt;

use crate::attention::{
    mhsa_reference, mohsa_forward, mohsa_forward_tensor, AttentionConfig, AttentionWeights,
    OverlapTargets, ScaleMode,
};
use crate::error::Result;
use crate::graph::Graph;
use crate::model::{self, ModelConfig, ModelWeights, LN_EPS};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub const ORACLE_TOL: f64 = 1e-5;
pub const LAYER_GRAD_TOL: f64 = 1e-4;
pub const VIT_GRAD_TOL: f64 = 1e-3;
pub const LAYER_FD_EPS: f64 = 1e-5;
pub const VIT_FD_EPS: f64 = 1e-3;

// ------------------------------------------------------------- references

/// `softmax(q k^T / sqrt(d_k)) v` for row lists `q [T, d]`, `k [S, d]`,
/// `v [S, e]`.
pub fn naive_attention(q: &[Vec<f64>], k: &[Vec<f64>], v: &[Vec<f64>], d_k: usize) -> Mat {
    let scale = 1.0 / (d_k as f64).sqrt();
    let width = v.first().map_or(0, |r| r.len());
    let mut out = vec![vec![0.0; width]; q.len()];
    for i in 0..q.len() {
        let mut s = vec![0.0; k.len()];
        for j in 0..k.len() {
            let mut dot = 0.0;
            for c in 0..q[i].len() {
                dot += q[i][c] * k[j][c];
            }
            s[j] = dot * scale;
        }
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for sj in s.iter_mut() {
            *sj = (*sj - m).exp();
            z += *sj;
        }
        for j in 0..k.len() {
            for c in 0..width {
                out[i][c] += s[j] / z * v[j][c];
            }
        }
    }
    out
}

/// Columns `[head * hd - o, (head + 1) * hd + o)` of `x`, zero outside the
/// valid range.
fn widen(x: &[Vec<f64>], head: usize, hd: usize, o: usize) -> Mat {
    x.iter()
        .map(|row| {
            (0..hd + 2 * o)
                .map(|j| {
                    let c = (head * hd + j) as isize - o as isize;
                    if c >= 0 && (c as usize) < row.len() {
                        row[c as usize]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// `x W + b` with `W` stored row-major as `[x_width, out]`.
fn affine(x: &[Vec<f64>], w: &[f64], b: Option<&[f64]>, out: usize) -> Mat {
    x.iter()
        .map(|row| {
            (0..out)
                .map(|c| {
                    let mut acc = b.map_or(0.0, |b| b[c]);
                    for (r, &xr) in row.iter().enumerate() {
                        acc += xr * w[r * out + c];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn columns(x: &[Vec<f64>], lo: usize, hi: usize) -> Mat {
    x.iter().map(|r| r[lo..hi].to_vec()).collect()
}

/// One overlapped-head attention layer over `tokens [T, dim]`.
pub fn naive_mohsa(tokens: &[Vec<f64>], w: &AttentionWeights<f64>, cfg: &AttentionConfig) -> Mat {
    let dim = cfg.dim;
    let h = cfg.heads;
    let hd = dim / h;
    let o_qk = if cfg.targets.qk { cfg.overlap } else { 0 };
    let o_v = if cfg.targets.v { cfg.overlap } else { 0 };
    let d_k = match cfg.scale_mode {
        ScaleMode::Widened => hd + 2 * o_qk,
        ScaleMode::HeadDim => hd,
    };
    let qkv = affine(
        tokens,
        w.qkv_w.data(),
        w.qkv_b.as_ref().map(|b| b.data()),
        3 * dim,
    );
    let q = columns(&qkv, 0, dim);
    let k = columns(&qkv, dim, 2 * dim);
    let v = columns(&qkv, 2 * dim, 3 * dim);
    let mut cat: Mat = vec![Vec::with_capacity(h * (hd + 2 * o_v)); tokens.len()];
    for head in 0..h {
        let y = naive_attention(
            &widen(&q, head, hd, o_qk),
            &widen(&k, head, hd, o_qk),
            &widen(&v, head, hd, o_v),
            d_k,
        );
        for (dst, src) in cat.iter_mut().zip(y) {
            dst.extend(src);
        }
    }
    assert_eq!(
        w.proj_w.data().len(),
        h * (hd + 2 * o_v) * dim,
        "naive_mohsa: projection does not match widened value width"
    );
    affine(&cat, w.proj_w.data(), w.proj_b.as_ref().map(|b| b.data()), dim)
}

/// Plain multi-head attention (overlap ignored).
pub fn naive_mhsa(tokens: &[Vec<f64>], w: &AttentionWeights<f64>, cfg: &AttentionConfig) -> Mat {
    naive_mohsa(tokens, w, &AttentionConfig { overlap: 0, ..*cfg })
}

/// Error function from its Maclaurin-type series
/// `2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (1*3*...*(2n+1))`,
/// whose terms are all positive; saturates to +-1 beyond |x| = 6.
pub fn naive_erf(x: f64) -> f64 {
    if x.abs() > 6.0 {
        return x.signum();
    }
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
        if term.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

pub fn naive_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + naive_erf(x / std::f64::consts::SQRT_2))
}

pub fn naive_layer_norm(row: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    row.iter()
        .enumerate()
        .map(|(i, x)| (x - mean) * inv * gamma[i] + beta[i])
        .collect()
}

/// Mean cross-entropy against `(1 - s) * onehot + s / C`.
pub fn naive_cross_entropy(logits: &[Vec<f64>], labels: &[usize], smoothing: f64) -> f64 {
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let c = z.len() as f64;
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let mut target_dot = (1.0 - smoothing) * z[y];
        for v in z {
            target_dot += smoothing / c * v;
        }
        total += lse - target_dot;
    }
    total / logits.len() as f64
}

/// ViT logits for `images [B, 3, S, S]` (flat, row-major).
pub fn naive_vit_forward(
    images: &[f64],
    batch: usize,
    w: &ModelWeights<f64>,
    cfg: &ModelConfig,
) -> Result<Mat> {
    let s = cfg.image_size;
    let p = cfg.patch_size;
    let g = s / p;
    let dim = cfg.dim;
    let hidden = cfg.mlp_ratio * dim;
    let overlaps = cfg.schedule()?.dims().to_vec();
    let pos = w.pos_embed.data();
    let mut logits = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut x: Mat = vec![w.cls_token.data().to_vec()];
        for gy in 0..g {
            for gx in 0..g {
                let mut feat = Vec::with_capacity(3 * p * p);
                for c in 0..3 {
                    for py in 0..p {
                        for px in 0..p {
                            feat.push(images[((b * 3 + c) * s + gy * p + py) * s + gx * p + px]);
                        }
                    }
                }
                x.extend(affine(&[feat], w.patch_w.data(), Some(w.patch_b.data()), dim));
            }
        }
        for (t, row) in x.iter_mut().enumerate() {
            for d in 0..dim {
                row[d] += pos[t * dim + d];
            }
        }
        for (layer, &o) in w.layers.iter().zip(&overlaps) {
            let ac = AttentionConfig {
                dim,
                heads: cfg.heads,
                overlap: o,
                targets: cfg.targets,
                qkv_bias: true,
                proj_bias: true,
                scale_mode: cfg.scale_mode,
            };
            let h: Mat = x
                .iter()
                .map(|r| naive_layer_norm(r, layer.norm1_gamma.data(), layer.norm1_beta.data(), LN_EPS))
                .collect();
            let a = naive_mohsa(&h, &layer.attn, &ac);
            add_rows(&mut x, &a);
            let h: Mat = x
                .iter()
                .map(|r| naive_layer_norm(r, layer.norm2_gamma.data(), layer.norm2_beta.data(), LN_EPS))
                .collect();
            let mut f = affine(&h, layer.fc1_w.data(), Some(layer.fc1_b.data()), hidden);
            for row in f.iter_mut() {
                for v in row.iter_mut() {
                    *v = naive_gelu(*v);
                }
            }
            let f = affine(&f, layer.fc2_w.data(), Some(layer.fc2_b.data()), dim);
            add_rows(&mut x, &f);
        }
        let cls = naive_layer_norm(&x[0], w.norm_gamma.data(), w.norm_beta.data(), LN_EPS);
        logits.extend(affine(
            &[cls],
            w.head_w.data(),
            Some(w.head_b.data()),
            cfg.num_classes,
        ));
    }
    Ok(logits)
}

fn add_rows(x: &mut [Vec<f64>], y: &[Vec<f64>]) {
    for (a, b) in x.iter_mut().zip(y) {
        for (u, v) in a.iter_mut().zip(b) {
            *u += v;
        }
    }
}

// ------------------------------------------------------ finite differences

/// Central differences `(f(theta + eps e_i) - f(theta - eps e_i)) / (2 eps)`.
pub fn finite_diff(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
    assert!(eps > 0.0, "finite_diff: eps must be positive");
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + eps;
            let up = f(&x);
            x[i] = theta[i] - eps;
            let down = f(&x);
            x[i] = theta[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "max_rel_error: length mismatch");
    a.iter().zip(b).map(|(&x, &y)| rel_error(x, y)).fold(0.0, f64::max)
}

// ------------------------------------------------------------------ sweeps

/// Grid of small attention configurations.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    /// Token counts, cycled across cases.
    pub tokens: Vec<usize>,
    /// `(dim, heads)` pairs.
    pub shapes: Vec<(usize, usize)>,
    pub targets: Vec<OverlapTargets>,
    /// Each seed repeats the grid with fresh weights; odd seeds drop the
    /// biases and use the unwidened scale.
    pub seeds: u64,
}

#[derive(Clone, Debug)]
pub struct SweepCase {
    pub cfg: AttentionConfig,
    pub tokens: usize,
    pub seed: u64,
}

impl fmt::Display for SweepCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.cfg;
        write!(
            f,
            "T={} dim={} h={} o={} {} bias={} scale={} seed={}",
            self.tokens, c.dim, c.heads, c.overlap, c.targets, c.qkv_bias, c.scale_mode, self.seed
        )
    }
}

impl SweepSpec {
    /// T <= 6, dim <= 12, h in {1, 2, 3}, o in {0, 1, hd/2, hd}, every
    /// target set, two seeds.
    pub fn small() -> Self {
        Self {
            tokens: vec![1, 2, 3, 4, 5, 6],
            shapes: vec![(4, 1), (8, 1), (4, 2), (8, 2), (12, 2), (6, 3), (12, 3)],
            targets: OverlapTargets::ALL.to_vec(),
            seeds: 2,
        }
    }

    pub fn cases(&self) -> Vec<SweepCase> {
        let mut out = Vec::new();
        for seed in 0..self.seeds {
            for &(dim, heads) in &self.shapes {
                let hd = dim / heads;
                let mut overlaps = vec![0, 1, hd / 2, hd];
                overlaps.sort_unstable();
                overlaps.dedup();
                for &targets in &self.targets {
                    for &o in &overlaps {
                        let mut cfg = AttentionConfig::new(dim, heads, o).with_targets(targets);
                        if seed % 2 == 1 {
                            cfg.qkv_bias = false;
                            cfg.proj_bias = false;
                            cfg.scale_mode = ScaleMode::HeadDim;
                        }
                        let tokens = self.tokens[out.len() % self.tokens.len()];
                        out.push(SweepCase {
                            cfg,
                            tokens,
                            seed: seed * 1000 + out.len() as u64,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One line of a pass/fail table.
#[derive(Clone, Debug)]
pub struct CheckRow {
    pub label: String,
    pub error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub title: String,
    pub tolerance: f64,
    pub rows: Vec<CheckRow>,
}

impl CheckReport {
    fn new(title: &str, tolerance: f64) -> Self {
        Self {
            title: title.to_string(),
            tolerance,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, label: String, error: f64) {
        let pass = error < self.tolerance;
        self.rows.push(CheckRow { label, error, pass });
    }

    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }

    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.pass).count()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(4);
        writeln!(f, "{} (tolerance {:.0e})", self.title, self.tolerance)?;
        for r in &self.rows {
            writeln!(
                f,
                "  {:<w$}  {:>10.3e}  {}",
                r.label,
                r.error,
                if r.pass { "PASS" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{}: {} cases, {} failed, max error {:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.rows.len(),
            self.failures(),
            self.max_error()
        )
    }
}

fn random_tokens(t: usize, dim: usize, rng: &mut Rng) -> Tensor<f64> {
    let data = (0..t * dim).map(|_| rng.normal()).collect();
    Tensor::new(vec![t, dim], data).expect("positive extents")
}

fn rows_of(t: &Tensor<f64>) -> Mat {
    t.data().chunks(t.last_dim()).map(|r| r.to_vec()).collect()
}

fn case_inputs(case: &SweepCase) -> (Tensor<f64>, AttentionWeights<f64>) {
    let mut rng = Rng::new(case.seed);
    let x = random_tokens(case.tokens, case.cfg.dim, &mut rng);
    let w = AttentionWeights::random(&case.cfg, 0.5, &mut rng);
    (x, w)
}

/// Core forward (`f64`) against [`naive_mohsa`] for every case.
pub fn run_oracle_sweep(spec: &SweepSpec) -> Result<CheckReport> {
    let mut report = CheckReport::new("mohsa_forward vs naive_mohsa", ORACLE_TOL);
    for case in spec.cases() {
        let (x, w) = case_inputs(&case);
        let core = mohsa_forward_tensor(&x, &w, &case.cfg)?;
        let naive: Vec<f64> = naive_mohsa(&rows_of(&x), &w, &case.cfg).concat();
        report.push(case.to_string(), max_rel_error(core.data(), &naive));
    }
    Ok(report)
}

/// `n` random small configurations with overlap 0: the overlapped layer
/// must reproduce plain multi-head attention bit for bit. The error column
/// is the largest absolute difference.
pub fn run_degeneracy_check(n: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("overlap 0 vs multi-head attention (bitwise)", f64::MIN_POSITIVE);
    let mut rng = Rng::new(seed);
    for i in 0..n {
        let heads = 1 + rng.below(4);
        let dim = heads * (1 + rng.below(6));
        let t = 1 + rng.below(8);
        let targets = OverlapTargets::ALL[rng.below(3)];
        let mut cfg = AttentionConfig::new(dim, heads, 0).with_targets(targets);
        cfg.qkv_bias = rng.bernoulli(0.5);
        cfg.proj_bias = rng.bernoulli(0.5);
        let batch = rng.below(3);
        let mut shape = vec![t, dim];
        if batch > 0 {
            shape.insert(0, batch);
        }
        let n_in: usize = shape.iter().product();
        let x = Tensor::new(shape.clone(), (0..n_in).map(|_| rng.normal()).collect())?;
        let w = AttentionWeights::random(&cfg, 0.5, &mut rng);
        let a = mohsa_forward_tensor(&x, &w, &cfg)?;
        let b = mhsa_reference(&x, &w, &cfg)?;
        let bitwise = a.shape() == b.shape()
            && a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits());
        let diff = if bitwise {
            0.0
        } else {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(u, v)| (u - v).abs())
                .fold(f64::MIN_POSITIVE, f64::max)
        };
        report.push(format!("#{i} {shape:?} h={heads} {targets}"), diff);
    }
    Ok(report)
}

/// Analytic gradients of `sum(layer(x) * R)` against central differences of
/// the same loss through [`naive_mohsa`], for the input and every weight.
/// `R` is a fixed random matrix of scale 1e-4. The key bias has an exactly
/// zero gradient (softmax ignores a per-row shift), so the only thing
/// compared there is rounding noise of the difference quotient; a small
/// readout keeps that noise well below the 1e-8 floor of [`rel_error`]
/// while leaving relative errors of nonzero gradients unchanged.
pub fn run_layer_gradcheck(spec: &SweepSpec) -> Result<CheckReport> {
    let mut report = CheckReport::new("attention layer gradients vs central differences", LAYER_GRAD_TOL);
    for case in spec.cases() {
        let (x, w) = case_inputs(&case);
        let mut rng = Rng::derive(case.seed, 1);
        let r: Vec<f64> = (0..x.numel()).map(|_| 1e-4 * rng.normal()).collect();
        let cfg = case.cfg;

        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let wv = w.bind(&mut g, true);
        let out = mohsa_forward(&mut g, xv, &wv, &cfg)?;
        let rv = g.constant(Tensor::new(x.shape().to_vec(), r.clone())?);
        let prod = g.mul(out, rv)?;
        let loss = g.sum(prod)?;
        g.backward(loss)?;

        let objective = |x: &Tensor<f64>, w: &AttentionWeights<f64>| -> f64 {
            let y = naive_mohsa(&rows_of(x), w, &cfg).concat();
            y.iter().zip(&r).map(|(a, b)| a * b).sum()
        };

        let mut worst = (0.0f64, String::from("x"));
        let numeric = finite_diff(
            |theta| objective(&Tensor::new(x.shape().to_vec(), theta.to_vec()).unwrap(), &w),
            x.data(),
            LAYER_FD_EPS,
        );
        let e = max_rel_error(g.grad_or_zeros(xv).data(), &numeric);
        if e > worst.0 {
            worst = (e, "x".into());
        }

        let mut names = Vec::new();
        wv.visit(&mut |n, &v| names.push((n.to_string(), v)));
        for (k, (name, var)) in names.iter().enumerate() {
            let base = w.clone();
            let theta = nth_attention_array(&base, k).data().to_vec();
            let numeric = finite_diff(
                |t| {
                    let mut ww = base.clone();
                    let mut i = 0;
                    ww.visit_mut(&mut |_, a| {
                        if i == k {
                            a.data_mut().copy_from_slice(t);
                        }
                        i += 1;
                    });
                    objective(&x, &ww)
                },
                &theta,
                LAYER_FD_EPS,
            );
            let e = max_rel_error(g.grad_or_zeros(*var).data(), &numeric);
            if e > worst.0 {
                worst = (e, name.clone());
            }
        }
        report.push(format!("{case} worst={}", worst.1), worst.0);
    }
    Ok(report)
}

fn nth_attention_array(w: &AttentionWeights<f64>, k: usize) -> &Tensor<f64> {
    let mut found = None;
    let mut i = 0;
    w.visit(&mut |_, t| {
        if i == k {
            found = Some(t);
        }
        i += 1;
    });
    found.expect("array index in range")
}

/// Well-conditioned random weights for gradient checks: standard deviation
/// `std` everywhere, norm scales around 1.
pub fn random_model_weights(cfg: &ModelConfig, std: f64, seed: u64) -> Result<ModelWeights<f64>> {
    let mut rng = Rng::new(seed);
    let mut w: ModelWeights<f64> = model::init_weights(cfg, seed)?;
    w.visit_mut(&mut |name, t| {
        let gamma = name.ends_with(".gamma");
        for v in t.data_mut() {
            *v = if gamma { 1.0 } else { 0.0 } + std * rng.normal();
        }
    });
    Ok(w)
}

/// End-to-end gradient check of the label-smoothed training loss for a
/// small ViT, one row per parameter array. The step is 1e-3: the loss is of
/// order one, and a larger step keeps rounding noise on the exactly-zero
/// key-bias gradients under the 1e-8 floor.
pub fn run_vit_gradcheck(cfg: &ModelConfig, batch: usize, seed: u64) -> Result<CheckReport> {
    let smoothing = 0.1;
    let mut report = CheckReport::new(
        &format!("ViT gradients vs central differences ({})", cfg.policy),
        VIT_GRAD_TOL,
    );
    let w = random_model_weights(cfg, 0.3, seed)?;
    let mut rng = Rng::derive(seed, 7);
    let s = cfg.image_size;
    let pixels: Vec<f64> = (0..batch * 3 * s * s).map(|_| rng.uniform()).collect();
    let labels: Vec<usize> = (0..batch).map(|i| i % cfg.num_classes).collect();
    let images = Tensor::new(vec![batch, 3, s, s], pixels.clone())?;

    let mut g = Graph::new();
    let wv = w.bind(&mut g, true);
    let logits = model::forward(&mut g, &images, &wv, cfg, None)?;
    let loss = model::loss(&mut g, logits, &labels, smoothing)?;
    g.backward(loss)?;

    let objective = |w: &ModelWeights<f64>| -> f64 {
        let z = naive_vit_forward(&pixels, batch, w, cfg).expect("valid config");
        naive_cross_entropy(&z, &labels, smoothing)
    };
    let vars: Vec<(String, crate::graph::Var)> =
        wv.entries().into_iter().map(|(n, &v)| (n, v)).collect();
    for (k, (name, var)) in vars.iter().enumerate() {
        let theta = w.entries()[k].1.data().to_vec();
        let numeric = finite_diff(
            |t| {
                let mut ww = w.clone();
                let mut i = 0;
                ww.visit_mut(&mut |_, a| {
                    if i == k {
                        a.data_mut().copy_from_slice(t);
                    }
                    i += 1;
                });
                objective(&ww)
            },
            &theta,
            VIT_FD_EPS,
        );
        report.push(name.clone(), max_rel_error(g.grad_or_zeros(*var).data(), &numeric));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attention_of_one_token_is_its_value() {
        let v = vec![vec![3.0, -1.0]];
        let y = naive_attention(&[vec![0.4, 2.0]], &[vec![1.0, 1.0]], &v, 2);
        assert_eq!(y, v);
    }

    #[test]
    fn uniform_scores_average_values() {
        let q = vec![vec![0.0, 0.0]; 2];
        let k = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 7.0]];
        let v = vec![vec![1.0], vec![2.0], vec![6.0]];
        let y = naive_attention(&q, &k, &v, 2);
        for row in y {
            assert!((row[0] - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn erf_series_matches_known_values() {
        assert_eq!(naive_erf(0.0), 0.0);
        assert!((naive_erf(1.0) - 0.842_700_792_949_714_9).abs() < 1e-15);
        assert!((naive_erf(-0.5) + 0.520_499_877_813_046_5).abs() < 1e-15);
        assert!((naive_erf(3.0) - 0.999_977_909_503_001_4).abs() < 1e-15);
        assert_eq!(naive_erf(7.0), 1.0);
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff(|t| t[0] * t[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let c = finite_diff(|_| 4.2, &[1.0, -2.0], 1e-5);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert!((rel_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
        assert!((rel_error(1.0, 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn qk_only_keeps_output_width() {
        let cfg = AttentionConfig::new(6, 3, 2).with_targets(OverlapTargets::QK);
        let mut rng = Rng::new(5);
        let w = AttentionWeights::random(&cfg, 0.5, &mut rng);
        let x = rows_of(&random_tokens(4, 6, &mut rng));
        let y = naive_mohsa(&x, &w, &cfg);
        assert_eq!((y.len(), y[0].len()), (4, 6));
    }

    #[test]
    fn small_sweep_coverage() {
        let cases = SweepSpec::small().cases();
        assert!(cases.len() >= 100);
        for targets in OverlapTargets::ALL {
            for heads in 1..=3 {
                for pick in 0..4 {
                    assert!(
                        cases.iter().any(|c| {
                            let hd = c.cfg.dim / c.cfg.heads;
                            let o = [0, 1, hd / 2, hd][pick];
                            c.cfg.targets == targets && c.cfg.heads == heads && c.cfg.overlap == o
                        }),
                        "{targets} h={heads} pick={pick}"
                    );
                }
            }
        }
        assert!(cases.iter().all(|c| c.tokens <= 6 && c.cfg.dim <= 12));
    }
}
