//! Training harness for MOHSA Vision Transformers: datasets, the AdamW
//! training loop, checkpoints, metrics files and SVG curves. The `mohsa`
//! binary wraps these as subcommands.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod plot;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{load_model_config, DatasetSource, TrainConfig};
pub use data::{load_cifar10, synthetic_dataset, write_cifar10_dir, Dataset, SyntheticSpec};
pub use error::{Result, TrainError};
pub use metrics::{MetricsRecord, Split};
pub use optim::{adamw_step, lr_at};
pub use plot::render_curves;
pub use train::{evaluate, evaluate_weights, load_data, train, train_on, TrainData, TrainOutcome};
