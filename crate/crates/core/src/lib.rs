//! Desk-scale sparse mixture-of-experts engine.
//!
//! The crate miniaturizes a multimodal MoE pipeline so its mechanisms can
//! be exercised and audited end to end on a laptop:
//!
//! - [`numkit`]: dense f64 kernels, analytic VJPs, finite-difference oracle
//! - [`tokens`]: modality-tagged tokens, synthetic features, adapters,
//!   unified-sequence assembly
//! - [`moe`]: soft router, top-k dispatch, gated-MLP experts, block stack
//! - [`objective`]: cross-entropy, expert balancing loss, total objective
//! - [`trainer`]: two-stage training, AdamW, schedules, checkpoints
//! - [`mvcs`]: maximum-voxel-coverage keyframe sampling with blur-aware
//!   view refinement
//! - [`analytics`]: routing-trace statistics (distributions, load balance,
//!   pathways) and report export
//!
//! Everything is deterministic given one master seed: random draws derive
//! from labeled streams ([`rng`]) and kernels reduce in fixed order.

pub mod analytics;
pub mod error;
pub mod model;
pub mod moe;
pub mod mvcs;
pub mod numkit;
pub mod objective;
pub mod parallel;
pub mod rng;
pub mod tokens;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
