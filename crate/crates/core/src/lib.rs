//! Multi-overlapped-head self-attention (MOHSA) for Vision Transformers.
//!
//! * [`tensor`] and [`graph`]: a small dense tensor engine with reverse-mode
//!   gradients, generic over the [`Scalar`] element type.
//! * [`schedule`]: per-layer overlap dimensions from named policies.
//! * [`attention`]: MHSA and MOHSA layers.
//! * [`model`]: a ViT encoder built from MOHSA layers.
//! * [`accounting`]: exact parameter and MAC counts.
//! * [`oracle`]: independent scalar-loop references and finite differences.
//!
//! Training runs in `f32`; references and gradient checks use `f64`. The
//! aliases at the crate root name both instantiations.

pub mod accounting;
pub mod attention;
pub mod error;
pub mod graph;
pub mod kv;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;

pub use accounting::{cost_report, count_params, estimate_flops, CostItem, CostReport};
pub use attention::{
    mhsa_reference, mohsa_forward, mohsa_forward_tensor, shape_report, AttentionConfig,
    AttentionParams, AttentionWeights, OverlapTargets, ScaleMode, ShapeReport,
};
pub use error::{Error, Result, ScheduleError, TensorError};
pub use graph::{Graph, Var};
pub use model::{init_weights, ModelConfig, ModelParams, ModelWeights};
pub use rng::Rng;
pub use scalar::Scalar;
pub use schedule::{build_schedule, parse_policy, FixedOverlap, OverlapSchedule, SchedulePolicy};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type AttentionWeights32 = AttentionWeights<f32>;
pub type AttentionWeights64 = AttentionWeights<f64>;
pub type ModelWeights32 = ModelWeights<f32>;
pub type ModelWeights64 = ModelWeights<f64>;
