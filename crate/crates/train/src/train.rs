//! Training loop and evaluation.

use std::path::PathBuf;
use std::time::Instant;

use mohsa_core::model::{self, forward, forward_tensor};
use mohsa_core::{count_params, init_weights, Error as CoreError, Graph, ModelConfig, ModelWeights, Rng, TensorError};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetSource, TrainConfig};
use crate::data::{load_cifar10, Dataset, SyntheticSpec};
use crate::error::{write_file, Result, TrainError};
use crate::metrics::{to_csv, MetricsRecord, Split};
use crate::optim::{adamw_step, clip_grad_norm, lr_at, AdamState, AdamWConfig};

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

#[derive(Debug)]
pub struct TrainData {
    pub train: Dataset,
    pub val: Dataset,
}

/// Loads the splits named by `cfg` and checks them against `model`.
pub fn load_data(cfg: &TrainConfig, model: &ModelConfig) -> Result<TrainData> {
    let data = match &cfg.dataset {
        DatasetSource::Synthetic => {
            let spec = SyntheticSpec::new(model.num_classes, model.image_size, cfg.synthetic_noise);
            TrainData {
                train: spec.generate(cfg.seed, cfg.synthetic_train, 0)?,
                val: spec.generate(cfg.seed, cfg.synthetic_val, 1)?,
            }
        }
        DatasetSource::Cifar10(dir) => {
            if model.image_size != 32 || model.num_classes != 10 {
                return Err(TrainError::Config(format!(
                    "CIFAR-10 needs image_size 32 and num_classes 10, model has {} and {}",
                    model.image_size, model.num_classes
                )));
            }
            let c = load_cifar10(dir)?;
            TrainData {
                train: c.train,
                val: c.test,
            }
        }
    };
    Ok(TrainData {
        train: data.train.truncated(cfg.train_limit),
        val: data.val.truncated(cfg.val_limit),
    })
}

/// Mean cross-entropy and top-1 accuracy of `weights` over `data`.
///
/// Batches are visited in order and per-sample losses are accumulated in
/// `f64` in sample order, so the result does not depend on threading.
pub fn evaluate_weights(
    weights: &ModelWeights<f32>,
    cfg: &ModelConfig,
    data: &Dataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(TrainError::Data("cannot evaluate on an empty dataset".into()));
    }
    if data.image_size() != cfg.image_size {
        return Err(TrainError::Data(format!(
            "images are {} px, the model expects {}",
            data.image_size(),
            cfg.image_size
        )));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = data.batch(chunk, None)?;
        let logits = forward_tensor(&x, weights, cfg)?;
        let c = logits.last_dim();
        for (row, &y) in logits.data().chunks_exact(c).zip(&labels) {
            if y >= c {
                return Err(TrainError::Data(format!("label {y} out of range for {c} classes")));
            }
            let mut best = 0;
            for j in 1..c {
                if row[j] > row[best] {
                    best = j;
                }
            }
            correct += (best == y) as usize;
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
            let lse = m + row.iter().map(|&v| (v as f64 - m).exp()).sum::<f64>().ln();
            loss_sum += lse - row[y] as f64;
        }
    }
    let n = data.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(TrainError::Numeric("evaluation loss is not finite".into()));
    }
    Ok((loss, correct as f64 / n))
}

/// Evaluates a checkpoint without modifying it.
pub fn evaluate(ck: &Checkpoint<f32>, data: &Dataset, split: Split, batch_size: usize) -> Result<MetricsRecord> {
    ck.weights.check_shapes(&ck.model).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let (loss, acc) = evaluate_weights(&ck.weights, &ck.model, data, batch_size)?;
    Ok(MetricsRecord {
        epoch: ck.epoch,
        split,
        loss,
        acc,
        lr: 0.0,
        wall_seconds: 0.0,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub param_count: u64,
}

/// Loads the data named in `cfg` and trains.
pub fn train(cfg: &TrainConfig, model: &ModelConfig) -> Result<TrainOutcome> {
    let data = load_data(cfg, model)?;
    train_on(cfg, model, &data, &mut |_| {})
}

fn numeric_at(epoch: usize, step: usize) -> impl Fn(CoreError) -> TrainError {
    move |e| match e {
        CoreError::Tensor(TensorError::NonFinite { .. }) => {
            TrainError::Numeric(format!("epoch {epoch}, step {step}: {e}"))
        }
        other => other.into(),
    }
}

fn decays(name: &str, rank: usize) -> bool {
    rank >= 2 && name != "pos_embed"
}

/// Trains `model` on `data`, writing metrics and checkpoints under
/// `cfg.output`. `progress` sees every record as it is produced.
///
/// Runs are deterministic: the shuffle, augmentation and drop-path streams
/// are derived from the seed and the epoch number.
pub fn train_on(
    cfg: &TrainConfig,
    model: &ModelConfig,
    data: &TrainData,
    progress: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if data.train.is_empty() || data.val.is_empty() {
        return Err(TrainError::Data("training and validation splits must be non-empty".into()));
    }
    let start = Instant::now();
    let mut weights: ModelWeights<f32> = init_weights(model, cfg.seed)?;
    let param_count = count_params(model)?;
    let enumerated = weights.param_count() as u64;
    if enumerated != param_count {
        return Err(TrainError::Config(format!(
            "instantiated model has {enumerated} parameters, accounting says {param_count}"
        )));
    }
    let decay: Vec<bool> = weights
        .entries()
        .iter()
        .map(|(n, t)| decays(n, t.rank()))
        .collect();
    let mut states: Vec<AdamState> = weights.entries().iter().map(|(_, t)| AdamState::new(t.numel())).collect();
    let adam = AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    };
    let n = data.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let out_dir = cfg.output.clone();
    let metrics_path = out_dir.join(METRICS_FILE);
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    let best_checkpoint = out_dir.join(BEST_CHECKPOINT);
    let train_echo = cfg.to_kv_string();

    let mut records = Vec::with_capacity(2 * cfg.epochs);
    let mut best_acc = f64::NEG_INFINITY;
    let mut t = 0u64;
    let mut lr = 0.0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::derive(cfg.seed, 1_000 + epoch as u64).shuffle(&mut order);
        let mut aug_rng = Rng::derive(cfg.seed, 2_000 + epoch as u64);
        let mut drop_rng = Rng::derive(cfg.seed, 3_000 + epoch as u64);
        for (s, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let step = (epoch - 1) * steps_per_epoch + s;
            let wrap = numeric_at(epoch, step);
            lr = lr_at(step, total_steps, warmup_steps, cfg.base_lr);
            let (x, labels) = data.train.batch(chunk, cfg.augment.then_some(&mut aug_rng))?;
            let mut g = Graph::new();
            let wv = weights.bind(&mut g, true);
            let logits = forward(&mut g, &x, &wv, model, Some(&mut drop_rng)).map_err(&wrap)?;
            let loss = model::loss(&mut g, logits, &labels, cfg.label_smoothing).map_err(&wrap)?;
            g.backward(loss).map_err(|e| wrap(e.into()))?;
            let mut grads: Vec<Vec<f32>> = wv
                .entries()
                .iter()
                .map(|(_, &v)| g.grad_or_zeros(v).into_data())
                .collect();
            let norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(TrainError::Numeric(format!(
                    "epoch {epoch}, step {step}: gradient norm is not finite"
                )));
            }
            t += 1;
            let mut k = 0;
            weights.visit_mut(&mut |_, p| {
                adamw_step(p.data_mut(), &grads[k], &mut states[k], t, lr, &adam, decay[k]);
                k += 1;
            });
        }
        let wall = if cfg.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        };
        for (split, set) in [(Split::Train, &data.train), (Split::Val, &data.val)] {
            let (loss, acc) = evaluate_weights(&weights, model, set, cfg.eval_batch_size)?;
            let rec = MetricsRecord {
                epoch,
                split,
                loss,
                acc,
                lr,
                wall_seconds: wall,
            };
            progress(&rec);
            records.push(rec);
        }
        write_file(&metrics_path, to_csv(&records).as_bytes())?;
        let val_acc = records.last().map_or(0.0, |r| r.acc);
        let ck = Checkpoint {
            model: model.clone(),
            weights: weights.clone(),
            train_echo: train_echo.clone(),
            epoch,
        };
        if val_acc > best_acc {
            best_acc = val_acc;
            ck.save(&best_checkpoint)?;
        }
        if epoch == cfg.epochs {
            ck.save(&final_checkpoint)?;
        }
    }
    Ok(TrainOutcome {
        records,
        metrics_path,
        final_checkpoint,
        best_checkpoint,
        param_count,
    })
}
