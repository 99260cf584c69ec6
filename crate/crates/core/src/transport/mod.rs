//! Point-to-point messaging between workers and the collectives built on it.
//!
//! Two backends implement [`Transport`]: an in-process mesh of rendezvous
//! channels and a TCP mesh between OS processes. Both are driven by
//! [`Comm`], which executes the same operation programs that
//! [`validate_schedule`] checks for deadlock freedom.

mod comm;
mod constraint;
mod envelope;
mod inproc;
mod schedule;
pub mod tcp;

use std::fmt;

pub use comm::{Comm, HaloPair};
pub use constraint::ChannelConstraint;
pub use envelope::{
    make_tag, pack_bytes, split_tag, unpack_bytes, unwords, words, Envelope, MsgType, COORDINATOR, ENVELOPE_MAGIC,
    HEADER_LEN,
};
pub use inproc::{InProcEndpoint, InProcMesh};
pub use schedule::{
    literal_pair_exchange_ops, pair_exchange_ops, ring_all_gather_ops, validate_schedule, Op, OpKind, Schedule, Verdict,
};

/// Collective stage a transfer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub enum Stage {
    /// All-gather of global payloads.
    T1,
    /// Halo swap inside pairs `(i, i + 1)`, `i` even.
    T2,
    /// Halo swap inside pairs `(i, i + 1)`, `i` odd.
    T3,
    /// Process setup and result collection.
    Control,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("worker {rank} cannot address peer {peer} in a world of {world}")]
    InvalidPeer { rank: usize, peer: usize, world: usize },
    #[error("tag mismatch from worker {src}: expected {expected:#x}, got {actual:#x}")]
    TagMismatch { src: usize, expected: u64, actual: u64 },
    #[error("message type mismatch from worker {src}: expected {expected:?}, got {actual:?}")]
    TypeMismatch {
        src: usize,
        expected: MsgType,
        actual: MsgType,
    },
    #[error("payload of {actual} floats from worker {src}, expected {expected}")]
    PayloadSize { src: usize, expected: usize, actual: usize },
    #[error("peer {peer} disconnected: {detail}")]
    Disconnected { peer: usize, detail: String },
    #[error("timed out waiting on peer {peer}")]
    Timeout { peer: usize },
    #[error("wire format: {0}")]
    Wire(String),
    #[error("handshake: {0}")]
    Handshake(String),
    #[error("exclusivity violated: {0}")]
    Exclusivity(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker {worker}, stage {stage}, round {round}: {source}")]
    InStage {
        worker: usize,
        stage: Stage,
        round: usize,
        #[source]
        source: Box<TransportError>,
    },
}

impl TransportError {
    pub(crate) fn in_stage(self, worker: usize, stage: Stage, round: usize) -> Self {
        match self {
            e @ TransportError::InStage { .. } => e,
            e => TransportError::InStage {
                worker,
                stage,
                round,
                source: Box::new(e),
            },
        }
    }

    /// Whether the error is a protocol violation rather than a link failure.
    pub fn is_protocol(&self) -> bool {
        match self {
            TransportError::InStage { source, .. } => source.is_protocol(),
            TransportError::TagMismatch { .. }
            | TransportError::TypeMismatch { .. }
            | TransportError::PayloadSize { .. }
            | TransportError::InvalidPeer { .. } => true,
            _ => false,
        }
    }
}

/// One endpoint per worker. `send` completes once the message is handed to
/// the peer (rendezvous for the in-process backend, kernel buffer for TCP);
/// messages between a fixed pair arrive in order.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn world_size(&self) -> usize;
    fn send(&mut self, env: Envelope) -> Result<(), TransportError>;
    /// Next message from `src`, in send order.
    fn recv(&mut self, src: usize) -> Result<Envelope, TransportError>;

    fn check_peer(&self, peer: usize) -> Result<(), TransportError> {
        if peer == self.rank() || peer >= self.world_size() {
            return Err(TransportError::InvalidPeer {
                rank: self.rank(),
                peer,
                world: self.world_size(),
            });
        }
        Ok(())
    }
}
