//! Clip-parallel inference for video denoisers with temporal layers.
//!
//! A video latent `[F, H, W, C]` is split along the frame axis into `N`
//! clips, one per worker. Temporal convolution, group normalization and
//! dual-scope attention exchange just enough context between workers that
//! the concatenated outputs match a single-process run.

pub mod app;
pub mod config;
pub mod metrics;
pub mod ops;
pub mod parallel;
pub mod pipeline;
pub mod tensor;
pub mod transport;

pub use config::{ConfigError, RunConfig, TransportKind};
pub use metrics::{LayerKind, MetricsReport, WorkerMetrics};
pub use parallel::{partition, ClipPlan};
pub use pipeline::{build_model, denoise, eps_theta, run_inproc, Mode, Model, ModelConfig, SyncMode};
pub use tensor::{Dims, LatentTensor};
