//! Frame-axis partitioning and the distributed forms of the temporal layers.
//!
//! Each worker owns `F / N` consecutive frames. Before a temporal layer runs,
//! [`sync_contexts`] fetches what the layer needs from the other clips:
//! trailing frames of the previous clip (`c_pre`), leading frames of the
//! next clip (`c_post`), and a payload gathered from every worker
//! (`c_global`). Group normalization runs its own two gather rounds.

mod context;
mod layers;
mod plan;

pub use context::{sync_contexts, zero_contexts, GlobalPayload, LayerHaloSpec, TemporalContext};
pub use layers::{attention_parallel, conv_parallel, group_norm_local, group_norm_parallel};
pub use plan::{partition, ClipPlan};

use crate::ops::OpError;
use crate::tensor::TensorError;
use crate::transport::TransportError;

#[derive(Debug, thiserror::Error)]
pub enum ParallelError {
    #[error("partition: {0}")]
    Partition(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
