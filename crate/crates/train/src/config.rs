//! Training run configuration (`key = value` files).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mohsa_core::kv::KvReader;

use crate::error::{read_text, Result, TrainError};

/// Where training data comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    /// Directory holding the CIFAR-10 binary batches.
    Cifar10(PathBuf),
    Synthetic,
}

impl std::fmt::Display for DatasetSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetSource::Cifar10(p) => write!(f, "{}", p.display()),
            DatasetSource::Synthetic => f.write_str("SYNTHETIC"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub dataset: DatasetSource,
    /// Model config file; relative paths resolve against the train file.
    pub model: Option<PathBuf>,
    pub output: PathBuf,
    pub label_smoothing: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub grad_clip: f64,
    /// Random 4-pixel-padded crops and horizontal flips.
    pub augment: bool,
    /// Use at most this many training / validation samples (0 = all).
    pub train_limit: usize,
    pub val_limit: usize,
    pub synthetic_train: usize,
    pub synthetic_val: usize,
    pub synthetic_noise: f64,
    pub eval_batch_size: usize,
    /// Write real elapsed seconds to the metrics file instead of 0.
    pub record_wall_time: bool,
}

/// Linear scaling of 5e-4 at batch 512.
pub fn default_base_lr(batch_size: usize) -> f64 {
    0.0005 * batch_size as f64 / 512.0
}

impl TrainConfig {
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut r = KvReader::new(text)?;
        let batch_size: usize = r.required("batch_size")?;
        let dataset = match r.required::<String>("dataset")?.as_str() {
            s if s.eq_ignore_ascii_case("synthetic") => DatasetSource::Synthetic,
            s => DatasetSource::Cifar10(PathBuf::from(s)),
        };
        let cfg = Self {
            epochs: r.required("epochs")?,
            warmup_epochs: r.required("warmup_epochs")?,
            batch_size,
            base_lr: r.optional("base_lr", default_base_lr(batch_size))?,
            weight_decay: r.required("weight_decay")?,
            seed: r.required("seed")?,
            dataset,
            model: r.raw("model").map(PathBuf::from),
            output: PathBuf::from(r.required::<String>("output")?),
            label_smoothing: r.optional("label_smoothing", 0.1)?,
            grad_clip: r.optional("grad_clip", 5.0)?,
            augment: r.optional("augment", true)?,
            train_limit: r.optional("train_limit", 0)?,
            val_limit: r.optional("val_limit", 0)?,
            synthetic_train: r.optional("synthetic_train", 2000)?,
            synthetic_val: r.optional("synthetic_val", 500)?,
            synthetic_noise: r.optional("synthetic_noise", 0.1)?,
            eval_batch_size: r.optional("eval_batch_size", 256)?,
            record_wall_time: r.optional("record_wall_time", false)?,
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative `model` path resolves against the
    /// file's directory; `dataset` and `output` stay relative to the
    /// working directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_kv_str(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.model = cfg
            .model
            .map(|m| if m.is_relative() { base.join(m) } else { m });
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("weight_decay and grad_clip must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if !(self.synthetic_noise >= 0.0) {
            return bad("synthetic_noise must be non-negative".into());
        }
        Ok(())
    }

    /// Canonical `key = value` form (stored in checkpoints).
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "warmup_epochs = {}", self.warmup_epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dataset = {}", self.dataset);
        if let Some(m) = &self.model {
            let _ = writeln!(s, "model = {}", m.display());
        }
        let _ = writeln!(s, "output = {}", self.output.display());
        let _ = writeln!(s, "label_smoothing = {}", self.label_smoothing);
        let _ = writeln!(s, "grad_clip = {}", self.grad_clip);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "train_limit = {}", self.train_limit);
        let _ = writeln!(s, "val_limit = {}", self.val_limit);
        let _ = writeln!(s, "synthetic_train = {}", self.synthetic_train);
        let _ = writeln!(s, "synthetic_val = {}", self.synthetic_val);
        let _ = writeln!(s, "synthetic_noise = {}", self.synthetic_noise);
        let _ = writeln!(s, "eval_batch_size = {}", self.eval_batch_size);
        let _ = writeln!(s, "record_wall_time = {}", self.record_wall_time);
        s
    }
}

/// Model config from a preset name (`vit-tiny`, `vit-small`, `vit-micro`,
/// `tiny-test`) or a `key = value` file.
pub fn load_model_config(spec: &str) -> Result<mohsa_core::ModelConfig> {
    use mohsa_core::ModelConfig;
    match spec.to_ascii_lowercase().as_str() {
        "vit-tiny" => Ok(ModelConfig::vit_tiny(1000)),
        "vit-small" => Ok(ModelConfig::vit_small(1000)),
        "vit-micro" => Ok(ModelConfig::vit_micro()),
        "tiny-test" => Ok(ModelConfig::tiny_test()),
        _ => Ok(ModelConfig::from_kv_str(&read_text(Path::new(spec))?)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "epochs = 3\nwarmup_epochs = 1\nbatch_size = 128\nweight_decay = 0.05\nseed = 1\ndataset = SYNTHETIC\noutput = out\n";

    #[test]
    fn defaults_and_roundtrip() {
        let c = TrainConfig::from_kv_str(MIN).unwrap();
        assert_eq!(c.base_lr, 0.000125);
        assert_eq!(c.dataset, DatasetSource::Synthetic);
        assert_eq!(TrainConfig::from_kv_str(&c.to_kv_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        let warm = MIN.replace("warmup_epochs = 1", "warmup_epochs = 4");
        assert!(TrainConfig::from_kv_str(&warm).is_err());
        let zero = MIN.replace("batch_size = 128", "batch_size = 0");
        assert!(TrainConfig::from_kv_str(&zero).is_err());
        let unknown = format!("{MIN}colour = red\n");
        assert!(TrainConfig::from_kv_str(&unknown).is_err());
    }
}
