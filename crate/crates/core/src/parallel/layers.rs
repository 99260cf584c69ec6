use super::context::neighbourhood;
use super::{ClipPlan, ParallelError, TemporalContext};
use crate::metrics::LayerKind;
use crate::ops::{
    conv_with_source, dual_scope_core, AttentionParams, AttentionStats, ConvKernel, DualScopeConfig, GroupNormParams,
    GroupStats, KvWindow,
};
use crate::tensor::LatentTensor;
use crate::transport::{Comm, TransportError};

fn check_halo(
    name: &str,
    plan: &ClipPlan,
    rank: usize,
    ctx: &TemporalContext,
    halo: usize,
) -> Result<(), ParallelError> {
    let n = plan.workers();
    let want_pre = if rank > 0 && n > 1 { halo } else { 0 };
    let want_post = if rank + 1 < n { halo } else { 0 };
    if ctx.c_pre.frames() != want_pre || ctx.c_post.frames() != want_post {
        return Err(ParallelError::Protocol(format!(
            "{name} on worker {rank} needs halos ({want_pre}, {want_post}), context has ({}, {})",
            ctx.c_pre.frames(),
            ctx.c_post.frames()
        )));
    }
    Ok(())
}

/// Temporal convolution of one clip over `c_pre ‖ clip ‖ c_post`. Zero
/// padding applies only where a context is absent, i.e. at the video ends.
pub fn conv_parallel(
    plan: &ClipPlan,
    rank: usize,
    v_in: &LatentTensor,
    ctx: &TemporalContext,
    kern: &ConvKernel,
) -> Result<LatentTensor, ParallelError> {
    check_halo("conv", plan, rank, ctx, kern.radius())?;
    let pre = ctx.c_pre.frames() as isize;
    let clip = v_in.frames() as isize;
    let post = ctx.c_post.frames() as isize;
    Ok(conv_with_source(v_in.frames(), v_in.dims(), kern, |f| {
        if f < 0 {
            (f >= -pre).then(|| ctx.c_pre.frame((pre + f) as usize))
        } else if f < clip {
            Some(v_in.frame(f as usize))
        } else {
            (f - clip < post).then(|| ctx.c_post.frame((f - clip) as usize))
        }
    }))
}

fn gather_group_stats(comm: &mut Comm, collective: u8, local: Vec<f32>) -> Result<Vec<f32>, ParallelError> {
    let groups = local.len();
    let parts = comm.all_gather(collective, local)?;
    let n = parts.len() as f64;
    let mut sums = vec![0.0f64; groups];
    for (src, part) in parts.iter().enumerate() {
        if part.len() != groups {
            return Err(TransportError::PayloadSize {
                src,
                expected: groups,
                actual: part.len(),
            }
            .into());
        }
        for (s, &v) in sums.iter_mut().zip(part) {
            *s += v as f64;
        }
    }
    Ok(sums.into_iter().map(|s| (s / n) as f32).collect())
}

/// Group normalization with statistics of the whole video, in two gather
/// rounds: per-clip means are averaged into the global mean, then per-clip
/// mean squared deviations from that global mean are averaged into the
/// global variance. Averaging per-clip variances instead would miss the
/// spread between clip means.
pub fn group_norm_parallel(
    comm: &mut Comm,
    v_in: &LatentTensor,
    p: &GroupNormParams,
) -> Result<LatentTensor, ParallelError> {
    let means = gather_group_stats(comm, 0, GroupStats::means(v_in, p))?;
    let vars = gather_group_stats(comm, 1, GroupStats::mean_sq_dev(v_in, p, &means))?;
    comm.metrics_mut().traffic_mut(LayerKind::GroupNorm).sync_calls += 1;
    Ok(GroupStats::normalize(v_in, p, &means, &vars))
}

/// Group normalization from the clip's own statistics only (sync ablated).
pub fn group_norm_local(v_in: &LatentTensor, p: &GroupNormParams) -> LatentTensor {
    crate::ops::group_norm(v_in, p)
}

/// Dual-scope attention for one clip: keys and values come from the local
/// window (clip plus halos) followed by the gathered global frames.
#[allow(clippy::too_many_arguments)]
pub fn attention_parallel(
    plan: &ClipPlan,
    rank: usize,
    v_in: &LatentTensor,
    ctx: &TemporalContext,
    t: f64,
    p: &AttentionParams,
    cfg: &DualScopeConfig,
) -> Result<(LatentTensor, AttentionStats), ParallelError> {
    cfg.validate()?;
    if plan.workers() > 1 {
        check_halo("attention", plan, rank, ctx, cfg.halo())?;
    }
    if ctx.c_global.frames() != cfg.n_global {
        return Err(ParallelError::Protocol(format!(
            "attention expects {} global frames, context has {}",
            cfg.n_global,
            ctx.c_global.frames()
        )));
    }
    let start = plan.range(rank).start;
    let local = neighbourhood(v_in, ctx)?;
    let window = KvWindow {
        frames: &local,
        first_frame: start - ctx.c_pre.frames(),
    };
    Ok(dual_scope_core(
        start,
        v_in.frames(),
        window,
        &ctx.c_global,
        plan.frames(),
        t,
        p,
        cfg,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{dual_scope_reference, group_norm, temporal_conv};
    use crate::parallel::{partition, sync_contexts, LayerHaloSpec};
    use crate::tensor::{concat_frames, max_abs_diff, tensor_from_seed, Dims};
    use crate::transport::InProcMesh;
    use std::sync::Arc;
    use std::thread;

    fn spmd<T: Send + 'static>(
        x: &LatentTensor,
        n: usize,
        f: impl Fn(&mut Comm, &ClipPlan, LatentTensor) -> T + Send + Sync + 'static,
    ) -> Vec<T> {
        let (clips, plan) = partition(x, n).unwrap();
        let f = Arc::new(f);
        let handles: Vec<_> = InProcMesh::build(n)
            .into_iter()
            .zip(clips)
            .map(|(ep, clip)| {
                let f = f.clone();
                thread::spawn(move || {
                    let mut comm = Comm::new(Box::new(ep));
                    f(&mut comm, &plan, clip)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = tensor_from_seed(Dims::new(8, 1, 1, 2), 3).unwrap();
        let plan = ClipPlan::new(8, 1).unwrap();
        let ctx = TemporalContext::empty(x.dims());
        let kern = ConvKernel::identity(1, 2).unwrap();
        assert_eq!(conv_parallel(&plan, 0, &x, &ctx, &kern).unwrap(), x);
    }

    #[test]
    fn conv_two_workers_match_reference() {
        let x = tensor_from_seed(Dims::new(8, 2, 1, 2), 4).unwrap();
        let kern = ConvKernel::from_seed(3, 2, 17, 0.6).unwrap();
        let k2 = kern.clone();
        let parts = spmd(&x, 2, move |comm, plan, clip| {
            let ctx = sync_contexts(comm, plan, &LayerHaloSpec::conv(1), &clip).unwrap();
            conv_parallel(plan, comm.rank(), &clip, &ctx, &k2).unwrap()
        });
        let joined = concat_frames(&parts).unwrap();
        assert!(max_abs_diff(&joined, &temporal_conv(&x, &kern)).unwrap() <= 1e-6);
    }

    #[test]
    fn conv_halo_mismatch_is_protocol_error() {
        let x = tensor_from_seed(Dims::new(4, 1, 1, 1), 4).unwrap();
        let plan = ClipPlan::new(8, 2).unwrap();
        let ctx = TemporalContext::empty(x.dims());
        let kern = ConvKernel::identity(3, 1).unwrap();
        assert!(matches!(
            conv_parallel(&plan, 1, &x, &ctx, &kern),
            Err(ParallelError::Protocol(_))
        ));
    }

    #[test]
    fn group_norm_mean_of_means() {
        // Clip means 1.0 and 3.0 average to 2.0.
        let x = LatentTensor::from_vec(Dims::new(2, 1, 1, 1), vec![1.0, 3.0]).unwrap();
        let p = GroupNormParams::plain(1, 1).unwrap();
        let out = spmd(&x, 2, move |comm, _, clip| {
            group_norm_parallel(comm, &clip, &p).unwrap()
        });
        let joined = concat_frames(&out).unwrap();
        assert!((joined.as_slice()[0] + 1.0).abs() < 1e-4);
        assert!((joined.as_slice()[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn group_norm_four_workers_match_reference() {
        let x = tensor_from_seed(Dims::new(16, 2, 2, 4), 8)
            .unwrap()
            .map(|v| 2.0 * v + 0.3);
        let p = GroupNormParams::new(2, vec![1.1, 0.9, 1.0, 1.2], vec![0.1, -0.1, 0.0, 0.2], 1e-5).unwrap();
        let p2 = p.clone();
        let out = spmd(&x, 4, move |comm, _, clip| {
            group_norm_parallel(comm, &clip, &p2).unwrap()
        });
        let joined = concat_frames(&out).unwrap();
        assert!(max_abs_diff(&joined, &group_norm(&x, &p)).unwrap() <= 1e-5);
    }

    #[test]
    fn attention_four_workers_match_reference() {
        let x = tensor_from_seed(Dims::new(64, 1, 2, 3), 12).unwrap();
        let p = AttentionParams::from_seed(3, 2, 0.6);
        let cfg = DualScopeConfig::default();
        for t in [700.0, 900.0] {
            let p2 = p.clone();
            let out = spmd(&x, 4, move |comm, plan, clip| {
                let spec = LayerHaloSpec::attention(cfg.n_local, cfg.n_global);
                let ctx = sync_contexts(comm, plan, &spec, &clip).unwrap();
                attention_parallel(plan, comm.rank(), &clip, &ctx, t, &p2, &cfg).unwrap()
            });
            for (_, stats) in &out {
                assert!(stats.max_tokens_per_query <= 33);
            }
            let joined = concat_frames(&out.into_iter().map(|(o, _)| o).collect::<Vec<_>>()).unwrap();
            let reference = dual_scope_reference(&x, t, &p, &cfg).unwrap();
            assert!(max_abs_diff(&joined, &reference).unwrap() <= 1e-5);
        }
    }
}
