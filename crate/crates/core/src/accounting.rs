//! Closed-form parameter and multiply-accumulate counts.
//!
//! MACs count one multiply-add as one operation and cover the matrix
//! products only: patch embedding, the Q/K/V projection, attention scores,
//! the attention-weighted sum, the output projection, the two FFN layers and
//! the classifier head. Softmax, layer norm, GELU and bias additions are not
//! counted.

use std::fmt;

use crate::attention::AttentionConfig;
use crate::error::Result;
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostItem {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    /// `embed`, then `layers.{i}.attn` and `layers.{i}.ffn` per layer, then `head`.
    pub breakdown: Vec<CostItem>,
}

fn attn_params(ac: &AttentionConfig) -> u64 {
    let d = ac.dim as u64;
    let mut n = d * 3 * d + ac.proj_in() as u64 * d;
    if ac.qkv_bias {
        n += 3 * d;
    }
    if ac.proj_bias {
        n += d;
    }
    n
}

fn attn_macs(ac: &AttentionConfig, tokens: u64) -> u64 {
    let d = ac.dim as u64;
    let h = ac.heads as u64;
    let (dq, dv) = (ac.qk_width() as u64, ac.v_width() as u64);
    tokens * d * 3 * d + h * tokens * tokens * dq + h * tokens * tokens * dv + tokens * h * dv * d
}

/// Full report for `cfg` evaluated at `image_size` pixels.
///
/// Parameters always use `cfg.image_size` (the position table is sized by
/// it); MACs use the token count implied by `image_size`.
pub fn cost_report(cfg: &ModelConfig, image_size: usize) -> Result<CostReport> {
    cfg.validate()?;
    let d = cfg.dim as u64;
    let hidden = cfg.hidden_dim() as u64;
    let classes = cfg.num_classes as u64;
    let patch_dim = cfg.patch_dim() as u64;
    let grid = (image_size / cfg.patch_size) as u64;
    let patches = grid * grid;
    let tokens = patches + 1;

    let mut items = Vec::with_capacity(2 * cfg.depth + 2);
    items.push(CostItem {
        name: "embed".into(),
        params: patch_dim * d + d + d + cfg.tokens() as u64 * d,
        macs: patches * patch_dim * d,
    });
    for (i, ac) in cfg.attention_configs()?.iter().enumerate() {
        items.push(CostItem {
            name: format!("layers.{i}.attn"),
            params: 2 * d + attn_params(ac),
            macs: attn_macs(ac, tokens),
        });
        items.push(CostItem {
            name: format!("layers.{i}.ffn"),
            params: 2 * d + d * hidden + hidden + hidden * d + d,
            macs: 2 * tokens * d * hidden,
        });
    }
    items.push(CostItem {
        name: "head".into(),
        params: 2 * d + d * classes + classes,
        macs: d * classes,
    });
    Ok(CostReport {
        params: items.iter().map(|c| c.params).sum(),
        macs: items.iter().map(|c| c.macs).sum(),
        breakdown: items,
    })
}

/// Number of learnable scalars.
pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    Ok(cost_report(cfg, cfg.image_size)?.params)
}

/// Multiply-accumulates for one image of `image_size` pixels.
pub fn estimate_flops(cfg: &ModelConfig, image_size: usize) -> Result<u64> {
    Ok(cost_report(cfg, image_size)?.macs)
}

/// `5.7M`: millions with one decimal.
pub fn format_millions(n: u64) -> String {
    format!("{:.1}M", n as f64 / 1e6)
}

/// `1.3G`: billions with one decimal.
pub fn format_giga(n: u64) -> String {
    format!("{:.1}G", n as f64 / 1e9)
}

impl CostReport {
    pub const CSV_HEADER: &'static str = "params,macs,params_m,gflops";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.1},{:.1}",
            self.params,
            self.macs,
            self.params as f64 / 1e6,
            self.macs as f64 / 1e9
        )
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .breakdown
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(9);
        writeln!(f, "{:<w$}  {:>14}  {:>16}", "component", "params", "macs")?;
        for c in &self.breakdown {
            writeln!(f, "{:<w$}  {:>14}  {:>16}", c.name, c.params, c.macs)?;
        }
        writeln!(f, "{:<w$}  {:>14}  {:>16}", "total", self.params, self.macs)?;
        write!(
            f,
            "{:<w$}  {:>14}  {:>16}",
            "",
            format_millions(self.params),
            format_giga(self.macs)
        )
    }
}
