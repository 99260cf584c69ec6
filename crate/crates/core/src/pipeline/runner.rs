use std::sync::Arc;
use std::thread;
use std::time::Instant;

use super::{DenoiseConfig, Model, PipelineError, SyncMode};
use crate::metrics::{LayerKind, MetricsReport, WorkerMetrics};
use crate::ops::{dual_scope_reference, group_norm, temporal_conv, AttentionStats};
use crate::parallel::{
    attention_parallel, conv_parallel, group_norm_local, group_norm_parallel, partition, sync_contexts, zero_contexts,
    ClipPlan, LayerHaloSpec,
};
use crate::tensor::{concat_frames, meter, LatentTensor};
use crate::transport::{ChannelConstraint, Comm, InProcMesh};

/// What a run evaluates: the full denoising loop, or one noise prediction
/// at a fixed timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Denoise(DenoiseConfig),
    Eps { t: f64 },
}

/// Single-process noise prediction over the whole video.
pub fn eps_theta(model: &Model, v: &LatentTensor, t: f64) -> Result<LatentTensor, PipelineError> {
    let cfg = model.dual_scope();
    let mut x = v.clone();
    for b in &model.blocks {
        let u = b.stub.apply(&x);
        let u = u.add(&temporal_conv(&u, &b.conv))?;
        let u = group_norm(&u, &b.norm);
        x = u.add(&dual_scope_reference(&u, t, &b.attention, cfg)?)?;
    }
    Ok(x)
}

/// Single-process Euler loop `x <- x - eps(x, t) / T` over the timestep grid.
pub fn denoise(model: &Model, d: &DenoiseConfig, x0: &LatentTensor) -> Result<LatentTensor, PipelineError> {
    d.validate()?;
    let mut x = x0.clone();
    for t in d.timesteps() {
        let eps = eps_theta(model, &x, t)?;
        x = x.sub_scaled(&eps, d.step_size())?;
    }
    Ok(x)
}

fn note_attention(m: &mut WorkerMetrics, stats: AttentionStats, global_bias: bool) {
    m.attention_layers += 1;
    m.global_bias_layers += global_bias as u64;
    m.max_tokens_per_query = m.max_tokens_per_query.max(stats.max_tokens_per_query as u64);
    m.score_entries_per_position = m
        .score_entries_per_position
        .max(stats.score_entries_per_position as u64);
}

/// One worker's noise prediction for its clip. Every worker must call this
/// with the same `step` and model.
pub fn worker_eps(
    comm: &mut Comm,
    plan: &ClipPlan,
    model: &Model,
    sync: SyncMode,
    clip: &LatentTensor,
    t: f64,
    step: u32,
) -> Result<LatentTensor, PipelineError> {
    let rank = comm.rank();
    let cfg = model.dual_scope();
    let conv_spec = LayerHaloSpec::conv(model.blocks.first().map_or(0, |b| b.conv.radius()));
    let attn_spec = LayerHaloSpec::attention(cfg.n_local, cfg.n_global);
    let mut x = clip.clone();
    for (i, b) in model.blocks.iter().enumerate() {
        let layer = 3 * i as u16;
        let u = b.stub.apply(&x);

        comm.set_position(step, layer, LayerKind::Conv);
        let ctx = if sync.conv {
            sync_contexts(comm, plan, &conv_spec, &u)?
        } else {
            zero_contexts(plan, rank, &conv_spec, &u)?
        };
        let u = u.add(&conv_parallel(plan, rank, &u, &ctx, &b.conv)?)?;
        drop(ctx);

        comm.set_position(step, layer + 1, LayerKind::GroupNorm);
        let u = if sync.group_norm {
            group_norm_parallel(comm, &u, &b.norm)?
        } else {
            group_norm_local(&u, &b.norm)
        };

        comm.set_position(step, layer + 2, LayerKind::Attention);
        let ctx = if sync.attention {
            sync_contexts(comm, plan, &attn_spec, &u)?
        } else {
            zero_contexts(plan, rank, &attn_spec, &u)?
        };
        let (a, stats) = attention_parallel(plan, rank, &u, &ctx, t, &b.attention, cfg)?;
        drop(ctx);
        note_attention(comm.metrics_mut(), stats, cfg.favours_global(t));
        x = u.add(&a)?;
    }
    Ok(x)
}

/// One worker's side of a run: the denoising loop or a single prediction.
pub fn worker_run(
    comm: &mut Comm,
    plan: &ClipPlan,
    model: &Model,
    sync: SyncMode,
    clip: &LatentTensor,
    mode: Mode,
) -> Result<LatentTensor, PipelineError> {
    match mode {
        Mode::Eps { t } => worker_eps(comm, plan, model, sync, clip, t, 0),
        Mode::Denoise(d) => worker_denoise(comm, plan, model, &d, sync, clip),
    }
}

pub fn worker_denoise(
    comm: &mut Comm,
    plan: &ClipPlan,
    model: &Model,
    d: &DenoiseConfig,
    sync: SyncMode,
    clip: &LatentTensor,
) -> Result<LatentTensor, PipelineError> {
    d.validate()?;
    let mut x = clip.clone();
    for (step, t) in d.timesteps().into_iter().enumerate() {
        let eps = worker_eps(comm, plan, model, sync, &x, t, step as u32)?;
        x = x.sub_scaled(&eps, d.step_size())?;
    }
    Ok(x)
}

/// Result of a multi-worker run.
#[derive(Debug)]
pub struct RunOutput {
    pub output: LatentTensor,
    pub report: MetricsReport,
    pub exclusivity_violations: usize,
}

/// Splits `x` into `workers` clips and runs one thread per worker over the
/// in-process transport. With `validating`, every channel use is checked
/// against the one-peer-at-a-time constraint.
pub fn run_inproc(
    model: &Model,
    mode: Mode,
    sync: SyncMode,
    x: &LatentTensor,
    workers: usize,
    validating: bool,
) -> Result<RunOutput, PipelineError> {
    let (clips, plan) = partition(x, workers)?;
    let constraint = validating.then(|| Arc::new(ChannelConstraint::new(workers)));
    let model = Arc::new(model.clone());
    let start = Instant::now();
    let handles: Vec<_> = InProcMesh::build(workers)
        .into_iter()
        .zip(clips)
        .map(|(ep, clip)| {
            let model = Arc::clone(&model);
            let constraint = constraint.clone();
            meter::disown(&clip);
            thread::spawn(move || {
                meter::reset();
                meter::adopt(&clip);
                let mut comm = Comm::new(Box::new(ep));
                if let Some(c) = constraint {
                    comm = comm.with_constraint(c);
                }
                let out = worker_run(&mut comm, &plan, &model, sync, &clip, mode);
                drop(clip);
                let mut metrics = comm.take_metrics();
                metrics.peak_live_elements = meter::peak();
                if let Ok(t) = &out {
                    meter::disown(t);
                }
                (out, metrics)
            })
        })
        .collect();

    let mut parts = Vec::with_capacity(workers);
    let mut report = MetricsReport::default();
    let mut first_err = None;
    for (rank, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok((Ok(t), m)) => {
                meter::adopt(&t);
                parts.push(t);
                report.workers.push(m);
            }
            Ok((Err(e), _)) => {
                // Keep the root cause: peers of a failed worker only see a
                // disconnect.
                let better = first_err
                    .as_ref()
                    .is_none_or(|(_, prev): &(usize, PipelineError)| prev.is_transport() && !e.is_transport());
                if better {
                    first_err = Some((rank, e));
                }
            }
            Err(_) => {
                first_err.get_or_insert((rank, PipelineError::WorkerPanic(rank)));
            }
        }
    }
    if let Some((worker, e)) = first_err {
        return Err(PipelineError::Worker {
            worker,
            source: Box::new(e),
        });
    }
    report.wall_nanos = start.elapsed().as_nanos() as u64;
    let exclusivity_violations = constraint.map_or(0, |c| c.violation_count());
    Ok(RunOutput {
        output: concat_frames(&parts)?,
        report,
        exclusivity_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{build_model, ModelConfig};
    use crate::tensor::{max_abs_diff, tensor_from_seed, Dims};

    fn small_model() -> Model {
        let mut cfg = ModelConfig::default();
        cfg.dual_scope.n_local = 4;
        cfg.dual_scope.n_global = 4;
        build_model(&cfg, 4)
    }

    #[test]
    fn single_worker_matches_reference_bitwise() {
        let model = small_model();
        let x = tensor_from_seed(Dims::new(16, 2, 2, 4), 3).unwrap();
        let mode = Mode::Denoise(DenoiseConfig { steps: 3 });
        let out = run_inproc(&model, mode, SyncMode::FULL, &x, 1, false).unwrap();
        let want = denoise(&model, &DenoiseConfig { steps: 3 }, &x).unwrap();
        assert_eq!(out.output, want);
    }

    #[test]
    fn four_workers_track_reference() {
        let model = small_model();
        let x = tensor_from_seed(Dims::new(16, 2, 2, 4), 3).unwrap();
        let want = eps_theta(&model, &x, 900.0).unwrap();
        let out = run_inproc(&model, Mode::Eps { t: 900.0 }, SyncMode::FULL, &x, 4, true).unwrap();
        assert!(max_abs_diff(&out.output, &want).unwrap() < 1e-5);
        assert_eq!(out.exclusivity_violations, 0);
        assert_eq!(out.report.workers.len(), 4);
        assert!(out.report.workers.iter().all(|w| w.global_bias_layers == 2));
    }

    #[test]
    fn ablated_sync_sends_nothing_for_that_layer() {
        let model = small_model();
        let x = tensor_from_seed(Dims::new(16, 2, 2, 4), 3).unwrap();
        let sync = SyncMode::FULL.without(LayerKind::Attention);
        let out = run_inproc(&model, Mode::Eps { t: 500.0 }, sync, &x, 2, false).unwrap();
        assert_eq!(out.report.bytes_for(LayerKind::Attention), 0);
        assert!(out.report.bytes_for(LayerKind::Conv) > 0);
    }

    #[test]
    fn measured_traffic_matches_prediction() {
        let model = small_model();
        let dims = Dims::new(16, 2, 2, 4);
        let x = tensor_from_seed(dims, 3).unwrap();
        for n in [1, 2, 4] {
            let out = run_inproc(&model, Mode::Eps { t: 900.0 }, SyncMode::FULL, &x, n, false).unwrap();
            let plan = ClipPlan::new(16, n).unwrap();
            let want = crate::pipeline::predicted_worker_bytes(&model, dims, &plan, SyncMode::FULL, 1);
            for (w, p) in out.report.workers.iter().zip(&want) {
                for kind in LayerKind::TEMPORAL {
                    assert_eq!(w.traffic(kind).bytes_sent, p[&kind], "n={n} worker {} {kind:?}", w.rank);
                }
            }
        }
    }
}
