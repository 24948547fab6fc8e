//! Vision Transformer encoder with MOHSA layers.
//!
//! `images [B, 3, H, W]` are cut into `patch x patch` squares, linearly
//! embedded, prefixed with a learned class token and offset by a learned
//! position table. Each of the `depth` layers applies
//! `x + attn(LN(x))` then `x + FFN(LN(x))` (pre-norm), where layer `l` uses
//! overlap `o_l` from the configured schedule. A final layer norm and a
//! linear head read out the class token.

use std::fmt::Write as _;

use crate::attention::{
    mhsa_reference, mohsa_forward, AttentionConfig, AttentionParams, OverlapTargets, ScaleMode,
};
use crate::error::{Error, Result, TensorError};
use crate::graph::{Graph, Var};
use crate::kv::KvReader;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::schedule::{parse_policy, OverlapSchedule, SchedulePolicy};
use crate::tensor::Tensor;

/// Layer-norm epsilon used throughout the encoder.
pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub policy: SchedulePolicy,
    pub targets: OverlapTargets,
    pub drop_path_rate: f64,
    pub scale_mode: ScaleMode,
}

impl ModelConfig {
    fn base(image_size: usize, patch_size: usize, dim: usize, depth: usize, heads: usize) -> Self {
        Self {
            image_size,
            patch_size,
            dim,
            depth,
            heads,
            mlp_ratio: 4,
            num_classes: 10,
            policy: SchedulePolicy::default(),
            targets: OverlapTargets::QKV,
            drop_path_rate: 0.0,
            scale_mode: ScaleMode::Widened,
        }
    }

    /// ViT-Tiny: dim 192, 12 heads, 12 layers, patch 16 at 224 px.
    pub fn vit_tiny(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::base(224, 16, 192, 12, 12)
        }
    }

    /// ViT-Small: dim 384, 12 heads, 12 layers, patch 16 at 224 px.
    pub fn vit_small(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::base(224, 16, 384, 12, 12)
        }
    }

    /// Desk-scale model for 32 px inputs: dim 96, 6 heads, 6 layers, patch 4.
    pub fn vit_micro() -> Self {
        Self::base(32, 4, 96, 6, 6)
    }

    /// Small enough for end-to-end finite differences.
    pub fn tiny_test() -> Self {
        Self {
            mlp_ratio: 2,
            num_classes: 3,
            ..Self::base(8, 4, 8, 2, 2)
        }
    }

    pub fn with_policy(mut self, policy: SchedulePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_targets(mut self, targets: OverlapTargets) -> Self {
        self.targets = targets;
        self
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patches plus the class token.
    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp_ratio * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 || self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "patch_size {} must divide image_size {}",
                self.patch_size, self.image_size
            ));
        }
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("heads {} must divide dim {}", self.heads, self.dim));
        }
        if self.depth == 0 || self.mlp_ratio == 0 || self.num_classes == 0 {
            return bad("depth, mlp_ratio and num_classes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return bad(format!("drop_path_rate {} outside [0, 1)", self.drop_path_rate));
        }
        if !self.targets.qk && !self.targets.v {
            return bad("overlap targets must include qk or v".into());
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<OverlapSchedule> {
        Ok(self.policy.build(self.depth, self.head_dim())?)
    }

    /// Attention config of each layer, in order.
    pub fn attention_configs(&self) -> Result<Vec<AttentionConfig>> {
        Ok(self
            .schedule()?
            .dims()
            .iter()
            .map(|&o| {
                AttentionConfig::new(self.dim, self.heads, o)
                    .with_targets(self.targets)
                    .with_scale_mode(self.scale_mode)
            })
            .collect())
    }

    /// Parses the `key = value` config file format. Unknown keys are errors.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut r = KvReader::new(text)?;
        let policy = match r.raw("policy") {
            Some(p) => parse_policy(&p)?,
            None => SchedulePolicy::default(),
        };
        let cfg = Self {
            image_size: r.required("image_size")?,
            patch_size: r.required("patch_size")?,
            dim: r.required("dim")?,
            depth: r.required("depth")?,
            heads: r.required("heads")?,
            mlp_ratio: r.required("mlp_ratio")?,
            num_classes: r.required("num_classes")?,
            policy,
            targets: r.optional("targets", OverlapTargets::QKV)?,
            drop_path_rate: r.optional("drop_path_rate", 0.0)?,
            scale_mode: r.optional("scale_mode", ScaleMode::Widened)?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "image_size = {}", self.image_size);
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "depth = {}", self.depth);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "mlp_ratio = {}", self.mlp_ratio);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "policy = {}", self.policy);
        let _ = writeln!(s, "targets = {}", self.targets);
        let _ = writeln!(s, "drop_path_rate = {}", self.drop_path_rate);
        let _ = writeln!(s, "scale_mode = {}", self.scale_mode);
        s
    }
}

/// Arrays of one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<P> {
    pub norm1_gamma: P,
    pub norm1_beta: P,
    pub attn: AttentionParams<P>,
    pub norm2_gamma: P,
    pub norm2_beta: P,
    pub fc1_w: P,
    pub fc1_b: P,
    pub fc2_w: P,
    pub fc2_b: P,
}

/// Every learnable array of the model, generic over storage like
/// [`AttentionParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub patch_w: P,
    pub patch_b: P,
    pub cls_token: P,
    pub pos_embed: P,
    pub layers: Vec<LayerParams<P>>,
    pub norm_gamma: P,
    pub norm_beta: P,
    pub head_w: P,
    pub head_b: P,
}

pub type ModelWeights<T> = ModelParams<Tensor<T>>;

impl<P> ModelParams<P> {
    /// Visits `(name, value)` in canonical order (the checkpoint order).
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a P)) {
        f("patch_embed.w", &self.patch_w);
        f("patch_embed.b", &self.patch_b);
        f("cls_token", &self.cls_token);
        f("pos_embed", &self.pos_embed);
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}.");
            f(&format!("{p}norm1.gamma"), &l.norm1_gamma);
            f(&format!("{p}norm1.beta"), &l.norm1_beta);
            l.attn.visit(&mut |n, v| f(&format!("{p}attn.{n}"), v));
            f(&format!("{p}norm2.gamma"), &l.norm2_gamma);
            f(&format!("{p}norm2.beta"), &l.norm2_beta);
            f(&format!("{p}mlp.fc1_w"), &l.fc1_w);
            f(&format!("{p}mlp.fc1_b"), &l.fc1_b);
            f(&format!("{p}mlp.fc2_w"), &l.fc2_w);
            f(&format!("{p}mlp.fc2_b"), &l.fc2_b);
        }
        f("norm.gamma", &self.norm_gamma);
        f("norm.beta", &self.norm_beta);
        f("head.w", &self.head_w);
        f("head.b", &self.head_b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut P)) {
        f("patch_embed.w", &mut self.patch_w);
        f("patch_embed.b", &mut self.patch_b);
        f("cls_token", &mut self.cls_token);
        f("pos_embed", &mut self.pos_embed);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{i}.");
            f(&format!("{p}norm1.gamma"), &mut l.norm1_gamma);
            f(&format!("{p}norm1.beta"), &mut l.norm1_beta);
            l.attn.visit_mut(&mut |n, v| f(&format!("{p}attn.{n}"), v));
            f(&format!("{p}norm2.gamma"), &mut l.norm2_gamma);
            f(&format!("{p}norm2.beta"), &mut l.norm2_beta);
            f(&format!("{p}mlp.fc1_w"), &mut l.fc1_w);
            f(&format!("{p}mlp.fc1_b"), &mut l.fc1_b);
            f(&format!("{p}mlp.fc2_w"), &mut l.fc2_w);
            f(&format!("{p}mlp.fc2_b"), &mut l.fc2_b);
        }
        f("norm.gamma", &mut self.norm_gamma);
        f("norm.beta", &mut self.norm_beta);
        f("head.w", &mut self.head_w);
        f("head.b", &mut self.head_b);
    }

    /// Maps every entry, calling `f` in canonical order.
    pub fn try_map<Q, E>(
        &self,
        f: &mut dyn FnMut(&str, &P) -> std::result::Result<Q, E>,
    ) -> std::result::Result<ModelParams<Q>, E> {
        let patch_w = f("patch_embed.w", &self.patch_w)?;
        let patch_b = f("patch_embed.b", &self.patch_b)?;
        let cls_token = f("cls_token", &self.cls_token)?;
        let pos_embed = f("pos_embed", &self.pos_embed)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}.");
            let mut g = |n: &str, v: &P| f(&format!("{p}{n}"), v);
            layers.push(LayerParams {
                norm1_gamma: g("norm1.gamma", &l.norm1_gamma)?,
                norm1_beta: g("norm1.beta", &l.norm1_beta)?,
                attn: l.attn.try_map(&mut |n, v| g(&format!("attn.{n}"), v))?,
                norm2_gamma: g("norm2.gamma", &l.norm2_gamma)?,
                norm2_beta: g("norm2.beta", &l.norm2_beta)?,
                fc1_w: g("mlp.fc1_w", &l.fc1_w)?,
                fc1_b: g("mlp.fc1_b", &l.fc1_b)?,
                fc2_w: g("mlp.fc2_w", &l.fc2_w)?,
                fc2_b: g("mlp.fc2_b", &l.fc2_b)?,
            });
        }
        Ok(ModelParams {
            patch_w,
            patch_b,
            cls_token,
            pos_embed,
            layers,
            norm_gamma: f("norm.gamma", &self.norm_gamma)?,
            norm_beta: f("norm.beta", &self.norm_beta)?,
            head_w: f("head.w", &self.head_w)?,
            head_b: f("head.b", &self.head_b)?,
        })
    }

    /// Entries as `(name, &value)` in canonical order.
    pub fn entries(&self) -> Vec<(String, &P)> {
        let mut v = Vec::new();
        self.visit(&mut |n, p| v.push((n.to_string(), p)));
        v
    }
}

impl ModelParams<Vec<usize>> {
    /// Shape of every array for `cfg`.
    pub fn shapes(cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.dim;
        let hidden = cfg.hidden_dim();
        let layers = cfg
            .attention_configs()?
            .iter()
            .map(|ac| LayerParams {
                norm1_gamma: vec![d],
                norm1_beta: vec![d],
                attn: AttentionParams::shapes(ac),
                norm2_gamma: vec![d],
                norm2_beta: vec![d],
                fc1_w: vec![d, hidden],
                fc1_b: vec![hidden],
                fc2_w: vec![hidden, d],
                fc2_b: vec![d],
            })
            .collect();
        Ok(Self {
            patch_w: vec![cfg.patch_dim(), d],
            patch_b: vec![d],
            cls_token: vec![d],
            pos_embed: vec![cfg.tokens(), d],
            layers,
            norm_gamma: vec![d],
            norm_beta: vec![d],
            head_w: vec![d, cfg.num_classes],
            head_b: vec![cfg.num_classes],
        })
    }
}

impl<T: Scalar> ModelWeights<T> {
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    /// Fails with a configuration error naming the first mismatching array.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let shapes = ModelParams::shapes(cfg)?;
        let expected: Vec<(String, Vec<usize>)> = shapes
            .entries()
            .into_iter()
            .map(|(n, s)| (n, s.clone()))
            .collect();
        let actual: Vec<(String, Vec<usize>)> = self
            .entries()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != actual.len() {
            return Err(Error::Config(format!(
                "model has {} arrays, config expects {}",
                actual.len(),
                expected.len()
            )));
        }
        for ((en, es), (an, ash)) in expected.iter().zip(&actual) {
            if en != an || es != ash {
                return Err(Error::Config(format!(
                    "array {an} {ash:?} does not match expected {en} {es:?}"
                )));
            }
        }
        Ok(())
    }

    /// Registers every array on `graph`.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> ModelParams<Var> {
        self.try_map::<_, std::convert::Infallible>(&mut |_, t| {
            Ok(if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            })
        })
        .unwrap()
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        self.try_map::<_, std::convert::Infallible>(&mut |_, t| Ok(t.cast()))
            .unwrap()
    }
}

fn is_bias_like(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with("_b") || name.ends_with(".beta")
}

/// Deterministic initialisation: truncated normal (std 0.02, cut at 2 sigma)
/// for weight matrices, the class token and the position table; zeros for
/// biases and norm shifts; ones for norm scales.
pub fn init_weights<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights<T>> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    ModelParams::shapes(cfg)?.try_map(&mut |name, shape| {
        Ok(if name.ends_with(".gamma") {
            Tensor::ones(shape.clone())
        } else if is_bias_like(name) {
            Tensor::zeros(shape.clone())
        } else {
            crate::attention::trunc_normal(shape, &mut rng)
        })
    })
}

/// `[B, 3, H, W] -> [B, (H/p)*(W/p), 3*p*p]`; patches row-major over the
/// grid, features ordered channel, row, column.
pub fn patchify<T: Scalar>(images: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || !s[2].is_multiple_of(patch) || !s[3].is_multiple_of(patch) {
        return Err(TensorError::Shape {
            op: "patchify",
            lhs: s.to_vec(),
            rhs: vec![patch],
        }
        .into());
    }
    let (b, h, w) = (s[0], s[2], s[3]);
    let (gh, gw) = (h / patch, w / patch);
    let pd = 3 * patch * patch;
    let src = images.data();
    let mut out = Vec::with_capacity(b * gh * gw * pd);
    for n in 0..b {
        for gy in 0..gh {
            for gx in 0..gw {
                for c in 0..3 {
                    for py in 0..patch {
                        let row = ((n * 3 + c) * h + gy * patch + py) * w + gx * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(vec![b, gh * gw, pd], out)?)
}

fn check_images<T: Scalar>(images: &Tensor<T>, cfg: &ModelConfig) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size {
        return Err(TensorError::Shape {
            op: "vit forward",
            lhs: s.to_vec(),
            rhs: vec![0, 3, cfg.image_size, cfg.image_size],
        }
        .into());
    }
    Ok(())
}

/// Drop-path (stochastic depth) rate of 0-based layer `i`, rising linearly
/// from 0 to `drop_path_rate`.
pub fn drop_path_rate_at(cfg: &ModelConfig, i: usize) -> f64 {
    if cfg.depth <= 1 {
        cfg.drop_path_rate
    } else {
        cfg.drop_path_rate * i as f64 / (cfg.depth - 1) as f64
    }
}

fn drop_path<T: Scalar>(g: &mut Graph<T>, x: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = 1.0 - rate;
    let b = g.shape(x)[0];
    let factors = (0..b)
        .map(|_| T::of_f64(if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 }))
        .collect();
    Ok(g.scale_leading(x, factors)?)
}

/// Logits `[B, num_classes]`. Passing `train_rng` enables drop-path.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    images: &Tensor<T>,
    w: &ModelParams<Var>,
    cfg: &ModelConfig,
    mut train_rng: Option<&mut Rng>,
) -> Result<Var> {
    check_images(images, cfg)?;
    let eps = T::of_f64(LN_EPS);
    let patches = g.constant(patchify(images, cfg.patch_size)?);
    let mut x = g.matmul(patches, w.patch_w)?;
    x = g.add_suffix(x, w.patch_b)?;
    x = g.prepend_row(x, w.cls_token)?;
    x = g.add_suffix(x, w.pos_embed)?;
    for (i, (layer, ac)) in w.layers.iter().zip(cfg.attention_configs()?).enumerate() {
        let rate = drop_path_rate_at(cfg, i);
        let h = g.layer_norm(x, layer.norm1_gamma, layer.norm1_beta, eps)?;
        let a = mohsa_forward(g, h, &layer.attn, &ac)?;
        let a = drop_path(g, a, rate, train_rng.as_deref_mut())?;
        x = g.add(x, a)?;
        let h = g.layer_norm(x, layer.norm2_gamma, layer.norm2_beta, eps)?;
        let mut f = g.matmul(h, layer.fc1_w)?;
        f = g.add_suffix(f, layer.fc1_b)?;
        f = g.gelu(f)?;
        f = g.matmul(f, layer.fc2_w)?;
        f = g.add_suffix(f, layer.fc2_b)?;
        let f = drop_path(g, f, rate, train_rng.as_deref_mut())?;
        x = g.add(x, f)?;
    }
    x = g.layer_norm(x, w.norm_gamma, w.norm_beta, eps)?;
    let cls = g.select_row(x, 0)?;
    let logits = g.matmul(cls, w.head_w)?;
    Ok(g.add_suffix(logits, w.head_b)?)
}

/// Inference on plain tensors.
pub fn forward_tensor<T: Scalar>(
    images: &Tensor<T>,
    w: &ModelWeights<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = w.bind(&mut g, false);
    let out = forward(&mut g, images, &bound, cfg, None)?;
    Ok(g.value(out).clone())
}

/// Mean label-smoothed cross-entropy; labels out of range are data errors.
pub fn loss<T: Scalar>(g: &mut Graph<T>, logits: Var, labels: &[usize], smoothing: f64) -> Result<Var> {
    let classes = g.value(logits).last_dim();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    Ok(g.cross_entropy(logits, labels, T::of_f64(smoothing))?)
}

/// Plain-MHSA ViT evaluated directly on tensors. Matches [`forward_tensor`]
/// bitwise for an all-zero schedule.
pub fn forward_reference<T: Scalar>(
    images: &Tensor<T>,
    w: &ModelWeights<T>,
    cfg: &ModelConfig,
) -> Result<Tensor<T>> {
    check_images(images, cfg)?;
    let eps = T::of_f64(LN_EPS);
    let b = images.shape()[0];
    let d = cfg.dim;
    let x = patchify(images, cfg.patch_size)?
        .matmul(&w.patch_w)?
        .add_suffix(&w.patch_b)?;
    let n = cfg.num_patches();
    let mut data = Vec::with_capacity(b * (n + 1) * d);
    for item in x.data().chunks_exact(n * d) {
        data.extend_from_slice(w.cls_token.data());
        data.extend_from_slice(item);
    }
    let mut x = Tensor::new(vec![b, n + 1, d], data)?.add_suffix(&w.pos_embed)?;
    for (layer, ac) in w.layers.iter().zip(cfg.attention_configs()?) {
        let h = x.layer_norm(&layer.norm1_gamma, &layer.norm1_beta, eps)?;
        x = x.add(&mhsa_reference(&h, &layer.attn, &ac)?)?;
        let h = x.layer_norm(&layer.norm2_gamma, &layer.norm2_beta, eps)?;
        let f = h
            .matmul(&layer.fc1_w)?
            .add_suffix(&layer.fc1_b)?
            .gelu()?
            .matmul(&layer.fc2_w)?
            .add_suffix(&layer.fc2_b)?;
        x = x.add(&f)?;
    }
    let x = x.layer_norm(&w.norm_gamma, &w.norm_beta, eps)?;
    let mut cls = Vec::with_capacity(b * d);
    for item in x.data().chunks_exact((n + 1) * d) {
        cls.extend_from_slice(&item[..d]);
    }
    Ok(Tensor::new(vec![b, d], cls)?
        .matmul(&w.head_w)?
        .add_suffix(&w.head_b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::FixedOverlap;

    fn images(cfg: &ModelConfig, b: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let n = b * 3 * cfg.image_size * cfg.image_size;
        let data: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        Tensor::from_f64(vec![b, 3, cfg.image_size, cfg.image_size], &data).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::tiny_test();
        let a = init_weights::<f32>(&cfg, 9).unwrap();
        let b = init_weights::<f32>(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = init_weights::<f32>(&cfg, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vit_tiny_shapes() {
        let cfg = ModelConfig::vit_tiny(1000);
        assert_eq!(cfg.tokens(), 197);
        let w = init_weights::<f32>(&cfg, 0).unwrap();
        w.check_shapes(&cfg).unwrap();
        assert_eq!(w.patch_w.shape(), &[768, 192]);
        assert_eq!(w.pos_embed.shape(), &[197, 192]);
        assert_eq!(w.layers.len(), 12);
        assert_eq!(w.layers[0].attn.qkv_w.shape(), &[192, 576]);
        assert_eq!(w.layers[0].attn.proj_w.shape(), &[192, 192]);
        assert_eq!(w.layers[0].fc1_w.shape(), &[192, 768]);
        assert_eq!(w.head_w.shape(), &[192, 1000]);
        // per-layer projection tracks the schedule
        let inc = cfg.with_policy(parse_policy("inc-0 (2)").unwrap());
        let w = init_weights::<f32>(&inc, 0).unwrap();
        for (l, o) in w.layers.iter().zip(inc.schedule().unwrap().dims()) {
            assert_eq!(l.attn.proj_w.shape(), &[12 * (16 + 2 * o), 192]);
        }
    }

    #[test]
    fn trunc_normal_statistics() {
        let cfg = ModelConfig::vit_tiny(10);
        let w = init_weights::<f64>(&cfg, 1).unwrap();
        let m = w.layers[0].attn.qkv_w.data();
        let n = m.len() as f64;
        let mean = m.iter().sum::<f64>() / n;
        let std = (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        // std of N(0, s^2) truncated at +-2s: s * sqrt(1 - 4 phi(2) / (2 Phi(2) - 1))
        let phi2 = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mass = 0.954_499_736_103_641_6;
        let want = 0.02 * (1.0 - 4.0 * phi2 / mass).sqrt();
        let se = want / n.sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}");
        // standard error of a sample std is about std / sqrt(2n)
        assert!((std - want).abs() < 3.0 * want / (2.0 * n).sqrt(), "std {std} want {want}");
        assert!(m.iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn forward_shape_and_errors() {
        let cfg = ModelConfig::tiny_test();
        let w = init_weights::<f64>(&cfg, 3).unwrap();
        let y = forward_tensor(&images(&cfg, 1, 0), &w, &cfg).unwrap();
        assert_eq!(y.shape(), &[1, 3]);
        assert!(y.all_finite());
        let wrong = Tensor::<f64>::zeros(vec![1, 3, 12, 12]);
        assert!(matches!(forward_tensor(&wrong, &w, &cfg), Err(Error::Tensor(_))));
    }

    #[test]
    fn zero_schedule_matches_reference_bitwise() {
        for targets in OverlapTargets::ALL {
            let cfg = ModelConfig::tiny_test().with_targets(targets);
            let w = init_weights::<f32>(&cfg, 4).unwrap();
            let x = images(&cfg, 2, 1).cast::<f32>();
            assert_eq!(
                forward_tensor(&x, &w, &cfg).unwrap(),
                forward_reference(&x, &w, &cfg).unwrap()
            );
        }
    }

    #[test]
    fn overlap_changes_output() {
        let cfg = ModelConfig::tiny_test().with_policy(SchedulePolicy::Fixed(FixedOverlap::Value(1)));
        let w = init_weights::<f64>(&cfg, 4).unwrap();
        let x = images(&cfg, 1, 1);
        assert!(forward_reference(&x, &w, &cfg).is_err());
        assert!(forward_tensor(&x, &w, &cfg).is_ok());
    }

    #[test]
    fn patchify_layout() {
        // 1 image, 4x4, patch 2: patch (0,1) channel 0 is pixels (0,2),(0,3),(1,2),(1,3)
        let data: Vec<f64> = (0..48).map(|v| v as f64).collect();
        let img = Tensor::<f64>::from_f64(vec![1, 3, 4, 4], &data).unwrap();
        let p = patchify(&img, 2).unwrap();
        assert_eq!(p.shape(), &[1, 4, 12]);
        assert_eq!(&p.data()[12..16], &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(&p.data()[16..20], &[18.0, 19.0, 22.0, 23.0]);
    }

    #[test]
    fn config_file_roundtrip_and_errors() {
        let cfg = ModelConfig::vit_micro().with_policy(parse_policy("inc-1 (3)").unwrap());
        let back = ModelConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(back, cfg);
        let extra = format!("{}colour = blue\n", cfg.to_kv_string());
        assert!(ModelConfig::from_kv_str(&extra).unwrap_err().to_string().contains("colour"));
        let bad = cfg.to_kv_string().replace("heads = 6", "heads = 5");
        assert!(ModelConfig::from_kv_str(&bad).is_err());
    }

    #[test]
    fn loss_label_range() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(vec![1, 3]));
        assert!(matches!(loss(&mut g, z, &[3], 0.1), Err(Error::Data(_))));
        let l = loss(&mut g, z, &[2], 0.0).unwrap();
        assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);
    }
}
