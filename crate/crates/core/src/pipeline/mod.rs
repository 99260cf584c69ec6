//! The toy denoiser: a stack of blocks evaluated either in one process or
//! by `N` clip-parallel workers, and the denoising loop around it.

mod model;
mod runner;
mod traffic;

pub use model::{build_model, Block, DenoiseConfig, Model, ModelConfig, SyncMode};
pub use runner::{denoise, eps_theta, run_inproc, worker_denoise, worker_eps, worker_run, Mode, RunOutput};
pub use traffic::{predicted_total_bytes, predicted_worker_bytes};

use crate::config::ConfigError;
use crate::ops::OpError;
use crate::parallel::ParallelError;
use crate::tensor::TensorError;
use crate::transport::TransportError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Parallel(#[from] ParallelError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("worker {worker}: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("worker {0} panicked")]
    WorkerPanic(usize),
}

impl From<TransportError> for PipelineError {
    fn from(e: TransportError) -> Self {
        PipelineError::Parallel(ParallelError::Transport(e))
    }
}

impl PipelineError {
    /// Whether the failure came from messaging rather than configuration.
    pub fn is_transport(&self) -> bool {
        match self {
            PipelineError::Parallel(ParallelError::Transport(_) | ParallelError::Protocol(_)) => true,
            PipelineError::Worker { source, .. } => source.is_transport(),
            PipelineError::WorkerPanic(_) => true,
            _ => false,
        }
    }
}
