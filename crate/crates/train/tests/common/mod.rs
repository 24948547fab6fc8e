#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mohsa_core::ModelConfig;
use mohsa_train::{load_model_config, SyntheticSpec, TrainConfig};

pub fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn model(name: &str) -> ModelConfig {
    let p = configs_dir().join("models").join(format!("{name}.cfg"));
    load_model_config(p.to_str().unwrap()).unwrap()
}

/// Two-layer 16 px model used by the synthetic runs.
pub fn small_model() -> ModelConfig {
    model("synthetic")
}

/// A short synthetic run writing to `out`.
pub fn quick_cfg(out: &Path, epochs: usize, seed: u64) -> TrainConfig {
    let text = format!(
        "epochs = {epochs}\nwarmup_epochs = 1\nbatch_size = 32\nbase_lr = 0.002\nweight_decay = 0.05\n\
         seed = {seed}\ndataset = SYNTHETIC\noutput = {}\nsynthetic_train = 192\nsynthetic_val = 64\n",
        out.display()
    );
    TrainConfig::from_kv_str(&text).unwrap()
}

/// Writes a CIFAR-10 layout directory of 32 px synthetic images.
pub fn fake_cifar(dir: &Path, train: usize, test: usize, seed: u64) {
    let spec = SyntheticSpec::new(10, 32, 0.2);
    mohsa_train::write_cifar10_dir(
        dir,
        &spec.generate(seed, train, 0).unwrap(),
        &spec.generate(seed, test, 1).unwrap(),
    )
    .unwrap();
}

pub struct ProtocolRun {
    pub name: String,
    pub csv: String,
    pub deterministic: bool,
    pub train_records: usize,
    pub val_records: usize,
    pub first_train_loss: f64,
    pub last_train_loss: f64,
    pub last_val_acc: f64,
}

impl ProtocolRun {
    pub fn loss_ratio(&self) -> f64 {
        self.last_train_loss / self.first_train_loss
    }
}

/// Trains the two ViT-Micro CIFAR-10 configs (o = 0 and fixed 1) on
/// `data_dir`, each twice, and collects what the protocol checks need.
pub fn cifar_protocol(data_dir: &Path, train_limit: usize, val_limit: usize) -> Vec<ProtocolRun> {
    use mohsa_train::metrics::parse_csv;
    use mohsa_train::Split;

    let work = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for name in ["o0", "fixed1"] {
        let path = configs_dir().join("train").join(format!("cifar10-{name}.cfg"));
        let mut tc = TrainConfig::from_file(&path).unwrap();
        tc.dataset = mohsa_train::DatasetSource::Cifar10(data_dir.to_path_buf());
        tc.train_limit = train_limit;
        tc.val_limit = val_limit;
        let model = load_model_config(tc.model.as_ref().unwrap().to_str().unwrap()).unwrap();
        let data = mohsa_train::load_data(&tc, &model).unwrap();
        let mut csvs = Vec::new();
        for rerun in 0..2 {
            tc.output = work.path().join(format!("{name}-{rerun}"));
            let out = mohsa_train::train_on(&tc, &model, &data, &mut |_| {}).unwrap();
            csvs.push(std::fs::read(&out.metrics_path).unwrap());
        }
        let csv = String::from_utf8(csvs[0].clone()).unwrap();
        let recs = parse_csv(&csv).unwrap();
        let train: Vec<_> = recs.iter().filter(|r| r.split == Split::Train).collect();
        let val: Vec<_> = recs.iter().filter(|r| r.split == Split::Val).collect();
        runs.push(ProtocolRun {
            name: name.to_string(),
            deterministic: csvs[0] == csvs[1],
            train_records: train.len(),
            val_records: val.len(),
            first_train_loss: train[0].loss,
            last_train_loss: train[train.len() - 1].loss,
            last_val_acc: val[val.len() - 1].acc,
            csv,
        });
    }
    runs
}
