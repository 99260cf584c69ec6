//! Single-process reference forms of every layer type.
//!
//! The distributed operators in [`crate::parallel`] call the same inner
//! kernels as these, which is what makes single-worker runs bitwise equal to
//! the references.

mod attention;
mod conv;
mod norm;
mod spatial;

pub use attention::{
    attention_full, attention_full_scores, build_global_index_set, build_local_window, dual_scope_reference,
    dual_scope_reference_instrumented, AttentionParams, AttentionStats, DualScopeConfig,
};
pub(crate) use attention::{dual_scope_core, KvWindow};
pub(crate) use conv::conv_with_source;
pub use conv::{temporal_conv, ConvKernel};
pub use norm::{group_norm, GroupNormParams, GroupStats};
pub use spatial::{spatial_stub, SpatialStub};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum OpError {
    #[error("invalid layer parameters: {0}")]
    Params(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

/// `out = W x` for a row-major `C x C` matrix, accumulated in f64.
pub(crate) fn matvec(w: &[f32], x: &[f32], out: &mut [f32]) {
    let c = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(c)) {
        let acc: f64 = row.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum();
        *o = acc as f32;
    }
}
