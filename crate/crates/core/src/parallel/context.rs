use super::{ClipPlan, ParallelError};
use crate::metrics::LayerKind;
use crate::ops::build_global_index_set;
use crate::tensor::{concat_frames, slice_frames, Dims, FrameRange, LatentTensor};
use crate::transport::{Comm, TransportError};

/// What a layer gathers from every worker in T1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalPayload {
    None,
    /// The frames of `build_global_index_set(F, count)`; each worker
    /// contributes the members inside its own range.
    Frames {
        count: usize,
    },
}

/// Context requirements of one temporal layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerHaloSpec {
    pub kind: LayerKind,
    /// Frames fetched from each neighbouring clip.
    pub halo: usize,
    pub global: GlobalPayload,
}

impl LayerHaloSpec {
    pub fn conv(radius: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            halo: radius,
            global: GlobalPayload::None,
        }
    }

    pub fn attention(n_local: usize, n_global: usize) -> Self {
        Self {
            kind: LayerKind::Attention,
            halo: n_local / 2,
            global: GlobalPayload::Frames { count: n_global },
        }
    }

    pub fn group_norm() -> Self {
        Self {
            kind: LayerKind::GroupNorm,
            halo: 0,
            global: GlobalPayload::None,
        }
    }

    /// A neighbour's clip must hold the whole halo.
    pub fn check(&self, plan: &ClipPlan) -> Result<(), ParallelError> {
        if plan.workers() > 1 && self.halo > plan.clip_frames() {
            return Err(ParallelError::Partition(format!(
                "{} halo of {} frames exceeds the {}-frame clip",
                self.kind.name(),
                self.halo,
                plan.clip_frames()
            )));
        }
        if let GlobalPayload::Frames { count } = self.global {
            build_global_index_set(plan.frames(), count)?;
        }
        Ok(())
    }

    /// 16-bit digest carried in halo tags: workers disagreeing on the layer
    /// spec see a tag mismatch instead of silently mixing data.
    pub fn digest(&self) -> u16 {
        let global = match self.global {
            GlobalPayload::None => 0,
            GlobalPayload::Frames { count } => count + 1,
        };
        let text = format!("{}:{}:{}", self.kind.name(), self.halo, global);
        let h = crate::config::fnv1a64(text.as_bytes());
        (h ^ (h >> 16) ^ (h >> 32) ^ (h >> 48)) as u16
    }
}

/// Per-layer context of one worker. Frame-empty tensors stand for absent
/// neighbours and unused payloads.
#[derive(Debug, Clone)]
pub struct TemporalContext {
    pub c_pre: LatentTensor,
    pub c_post: LatentTensor,
    pub c_global: LatentTensor,
}

impl TemporalContext {
    pub fn empty(dims: Dims) -> Self {
        Self {
            c_pre: LatentTensor::empty_like(dims),
            c_post: LatentTensor::empty_like(dims),
            c_global: LatentTensor::empty_like(dims),
        }
    }
}

fn own_global_indices(plan: &ClipPlan, rank: usize, count: usize) -> Result<Vec<usize>, ParallelError> {
    let range = plan.range(rank);
    Ok(build_global_index_set(plan.frames(), count)?
        .into_iter()
        .filter(|&f| range.contains(f))
        .collect())
}

fn frames_from(
    dims: Dims,
    payload: Vec<f32>,
    expected_frames: usize,
    src: usize,
) -> Result<LatentTensor, ParallelError> {
    let expected = expected_frames * dims.frame_len();
    if payload.len() != expected {
        return Err(TransportError::PayloadSize {
            src,
            expected,
            actual: payload.len(),
        }
        .into());
    }
    Ok(if expected_frames == 0 {
        LatentTensor::empty_like(dims)
    } else {
        LatentTensor::from_vec(dims.with_frames(expected_frames), payload)?
    })
}

/// Collective context exchange for one layer: T1 gathers the global payload,
/// T2 and T3 swap halos between neighbours. Every worker must call this for
/// the same layer in the same order.
pub fn sync_contexts(
    comm: &mut Comm,
    plan: &ClipPlan,
    spec: &LayerHaloSpec,
    v_in: &LatentTensor,
) -> Result<TemporalContext, ParallelError> {
    let rank = comm.rank();
    let n = plan.workers();
    if comm.world_size() != n {
        return Err(ParallelError::Protocol(format!(
            "plan for {n} workers on a {}-worker transport",
            comm.world_size()
        )));
    }
    spec.check(plan)?;
    let dims = v_in.dims();
    let mut ctx = TemporalContext::empty(dims);
    let range = plan.range(rank);

    if let GlobalPayload::Frames { count } = spec.global {
        let mine = own_global_indices(plan, rank, count)?;
        let mut payload = Vec::with_capacity(mine.len() * dims.frame_len());
        for &f in &mine {
            payload.extend_from_slice(v_in.frame(f - range.start));
        }
        let parts = comm.all_gather(0, payload)?;
        let mut frames = Vec::with_capacity(parts.len());
        for (src, part) in parts.into_iter().enumerate() {
            let expect = own_global_indices(plan, src, count)?.len();
            let t = frames_from(dims, part, expect, src)?;
            if expect > 0 {
                frames.push(t);
            }
        }
        if !frames.is_empty() {
            ctx.c_global = concat_frames(&frames)?;
        }
    }

    if spec.halo > 0 && n > 1 {
        let h = spec.halo;
        let trailing = slice_frames(v_in, FrameRange::new(range.len - h, h))?;
        let leading = slice_frames(v_in, FrameRange::new(0, h))?;
        let (pre, post) = comm.exchange_halos(spec.digest(), trailing.as_slice(), leading.as_slice())?;
        if let Some(p) = pre {
            ctx.c_pre = frames_from(dims, p, h, rank - 1)?;
        }
        if let Some(p) = post {
            ctx.c_post = frames_from(dims, p, h, rank + 1)?;
        }
    }
    comm.metrics_mut().traffic_mut(spec.kind).sync_calls += 1;
    Ok(ctx)
}

/// Context with the same shapes [`sync_contexts`] would produce, zero-filled
/// and obtained without any traffic. Used to ablate a layer's synchronization.
pub fn zero_contexts(
    plan: &ClipPlan,
    rank: usize,
    spec: &LayerHaloSpec,
    v_in: &LatentTensor,
) -> Result<TemporalContext, ParallelError> {
    spec.check(plan)?;
    let dims = v_in.dims();
    let zeros = |frames: usize| -> Result<LatentTensor, ParallelError> {
        Ok(if frames == 0 {
            LatentTensor::empty_like(dims)
        } else {
            LatentTensor::zeros(dims.with_frames(frames))?
        })
    };
    let mut ctx = TemporalContext::empty(dims);
    if let GlobalPayload::Frames { count } = spec.global {
        // Own members stay real; only the remote ones are blanked.
        let range = plan.range(rank);
        let mut frames = Vec::new();
        for f in build_global_index_set(plan.frames(), count)? {
            frames.push(if range.contains(f) {
                slice_frames(v_in, FrameRange::new(f - range.start, 1))?
            } else {
                zeros(1)?
            });
        }
        if !frames.is_empty() {
            ctx.c_global = concat_frames(&frames)?;
        }
    }
    if spec.halo > 0 && plan.workers() > 1 {
        ctx.c_pre = zeros(if rank > 0 { spec.halo } else { 0 })?;
        ctx.c_post = zeros(if rank + 1 < plan.workers() { spec.halo } else { 0 })?;
    }
    Ok(ctx)
}

pub(crate) fn neighbourhood(v_in: &LatentTensor, ctx: &TemporalContext) -> Result<LatentTensor, ParallelError> {
    let parts: Vec<LatentTensor> = [&ctx.c_pre, v_in, &ctx.c_post]
        .into_iter()
        .filter(|t| t.frames() > 0)
        .cloned()
        .collect();
    Ok(concat_frames(&parts)?)
}
