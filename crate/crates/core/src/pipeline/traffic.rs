use std::collections::BTreeMap;

use super::{Model, SyncMode};
use crate::metrics::LayerKind;
use crate::ops::build_global_index_set;
use crate::parallel::ClipPlan;
use crate::tensor::Dims;

/// Bytes each worker is expected to send per layer kind over
/// `evaluations` noise predictions, derived from the exchange rules alone:
/// halos go to each neighbour once, group statistics and global frames
/// travel a ring in which worker `i` forwards every payload except the one
/// owned by worker `i + 1`.
pub fn predicted_worker_bytes(
    model: &Model,
    dims: Dims,
    plan: &ClipPlan,
    sync: SyncMode,
    evaluations: usize,
) -> Vec<BTreeMap<LayerKind, u64>> {
    let n = plan.workers();
    let frame_bytes = 4 * dims.frame_len() as u64;
    let cfg = model.dual_scope();
    let groups = model.config.norm_groups as u64;
    let radius = model.blocks.first().map_or(0, |b| b.conv.radius()) as u64;
    let mut owned = vec![0u64; n];
    if n > 1 {
        for f in build_global_index_set(plan.frames(), cfg.n_global).unwrap_or_default() {
            owned[plan.owner(f)] += 1;
        }
    }
    let reps = (evaluations * model.blocks.len()) as u64;
    (0..n)
        .map(|i| {
            let neighbours = (i > 0) as u64 + (i + 1 < n) as u64;
            let forwarded: u64 = (0..n).filter(|&j| j != (i + 1) % n).map(|j| owned[j]).sum();
            let mut m = BTreeMap::new();
            let halo = |frames: u64| neighbours * frames * frame_bytes;
            let conv = if sync.conv { halo(radius) } else { 0 };
            let norm = if sync.group_norm {
                2 * (n as u64 - 1) * groups * 4
            } else {
                0
            };
            let attn = if sync.attention {
                halo(cfg.halo() as u64) + forwarded * frame_bytes
            } else {
                0
            };
            m.insert(LayerKind::Conv, reps * conv);
            m.insert(LayerKind::GroupNorm, reps * norm);
            m.insert(LayerKind::Attention, reps * attn);
            m
        })
        .collect()
}

/// Sum of [`predicted_worker_bytes`] over workers and layer kinds.
pub fn predicted_total_bytes(model: &Model, dims: Dims, plan: &ClipPlan, sync: SyncMode, evaluations: usize) -> u64 {
    predicted_worker_bytes(model, dims, plan, sync, evaluations)
        .iter()
        .flat_map(|m| m.values())
        .sum()
}
