mod common;

use std::thread;

use clipflow::metrics::LayerKind;
use clipflow::ops::ConvKernel;
use clipflow::parallel::{conv_parallel, partition, sync_contexts, LayerHaloSpec, ParallelError};
use clipflow::pipeline::{build_model, denoise, eps_theta, run_inproc, DenoiseConfig, Mode, ModelConfig, SyncMode};
use clipflow::tensor::{concat_frames, max_abs_diff, tensor_from_seed, Dims};
use clipflow::transport::{Comm, InProcMesh, TransportError};
use proptest::prelude::*;

fn model_for(n_local: usize, n_global: usize, blocks: usize, channels: usize) -> clipflow::Model {
    let mut cfg = ModelConfig {
        blocks,
        ..Default::default()
    };
    cfg.dual_scope.n_local = n_local;
    cfg.dual_scope.n_global = n_global;
    build_model(&cfg, channels)
}

#[test]
fn one_worker_is_bitwise_the_sequential_loop() {
    let model = model_for(8, 8, 2, 4);
    let x = tensor_from_seed(Dims::new(32, 2, 2, 4), 11).unwrap();
    let d = DenoiseConfig { steps: 4 };
    let out = run_inproc(&model, Mode::Denoise(d), SyncMode::FULL, &x, 1, false).unwrap();
    assert_eq!(out.output, denoise(&model, &d, &x).unwrap());
    assert_eq!(out.report.total_bytes(), 0);
}

#[test]
fn validating_mode_sees_no_overlap() {
    let model = model_for(4, 8, 1, 4);
    let x = tensor_from_seed(Dims::new(16, 1, 2, 4), 2).unwrap();
    for n in [2, 4, 8] {
        let out = run_inproc(&model, Mode::Eps { t: 950.0 }, SyncMode::FULL, &x, n, true).unwrap();
        assert_eq!(out.exclusivity_violations, 0, "n={n}");
    }
}

#[test]
fn non_timing_metrics_repeat_exactly() {
    let model = model_for(8, 8, 2, 4);
    let x = tensor_from_seed(Dims::new(32, 2, 2, 4), 4).unwrap();
    let run = || {
        let mut r = run_inproc(&model, Mode::Eps { t: 600.0 }, SyncMode::FULL, &x, 4, false)
            .unwrap()
            .report;
        for w in &mut r.workers {
            w.stage_nanos.clear();
        }
        r.workers
    };
    assert_eq!(run(), run());
}

#[test]
fn disabling_one_module_zeroes_only_its_traffic() {
    let model = model_for(8, 8, 2, 4);
    let x = tensor_from_seed(Dims::new(32, 2, 2, 4), 4).unwrap();
    let full = run_inproc(&model, Mode::Eps { t: 600.0 }, SyncMode::FULL, &x, 4, false).unwrap();
    let want = eps_theta(&model, &x, 600.0).unwrap();
    assert!(max_abs_diff(&full.output, &want).unwrap() < 1e-5);
    for off in LayerKind::TEMPORAL {
        let r = run_inproc(
            &model,
            Mode::Eps { t: 600.0 },
            SyncMode::FULL.without(off),
            &x,
            4,
            false,
        )
        .unwrap();
        for kind in LayerKind::TEMPORAL {
            let expect = if kind == off { 0 } else { full.report.bytes_for(kind) };
            assert_eq!(r.report.bytes_for(kind), expect, "{off:?} off, {kind:?}");
        }
        assert!(
            max_abs_diff(&r.output, &want).unwrap() > 1e-3,
            "{off:?} off still matches"
        );
    }
}

#[test]
fn mismatched_layer_spec_names_worker_and_stage() {
    let x = tensor_from_seed(Dims::new(8, 1, 1, 2), 0).unwrap();
    let (clips, plan) = partition(&x, 2).unwrap();
    let handles: Vec<_> = InProcMesh::build(2)
        .into_iter()
        .zip(clips)
        .map(|(ep, clip)| {
            thread::spawn(move || {
                let mut comm = Comm::new(Box::new(ep));
                // Worker 1 believes the kernel is wider.
                let taps = if comm.rank() == 0 { 3 } else { 5 };
                let kern = ConvKernel::identity(taps, 2).unwrap();
                let ctx = sync_contexts(&mut comm, &plan, &LayerHaloSpec::conv(kern.radius()), &clip)?;
                conv_parallel(&plan, comm.rank(), &clip, &ctx, &kern)
            })
        })
        .collect();
    let errors: Vec<String> = handles
        .into_iter()
        .filter_map(|h| h.join().unwrap().err())
        .map(|e| {
            assert!(
                matches!(e, ParallelError::Transport(TransportError::InStage { .. })),
                "{e}"
            );
            e.to_string()
        })
        .collect();
    assert!(!errors.is_empty());
    assert!(
        errors
            .iter()
            .any(|e| e.contains("tag mismatch") && e.contains("stage T2")),
        "{errors:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn partition_then_concat_is_identity(clip in 1usize..6, n in prop::sample::select(vec![1usize, 2, 3, 4, 8]), seed in 0u64..500) {
        let x = tensor_from_seed(Dims::new(clip * n, 2, 1, 3), seed).unwrap();
        let (clips, plan) = partition(&x, n).unwrap();
        prop_assert_eq!(plan.clip_frames(), clip);
        prop_assert!(clips.iter().all(|c| c.frames() == clip));
        prop_assert_eq!(concat_frames(&clips).unwrap(), x);
    }

    #[test]
    fn prediction_is_independent_of_worker_count(
        seed in 0u64..500,
        n in prop::sample::select(vec![2usize, 4]),
        t in prop::sample::select(vec![300.0f64, 900.0]),
        half in 1usize..4,
    ) {
        let f = 16;
        let model = model_for(2 * half, 4, 2, 4);
        let x = tensor_from_seed(Dims::new(f, 1, 2, 4), seed).unwrap();
        let want = eps_theta(&model, &x, t).unwrap();
        let out = run_inproc(&model, Mode::Eps { t }, SyncMode::FULL, &x, n, false).unwrap();
        prop_assert!(max_abs_diff(&out.output, &want).unwrap() <= 1e-5);
    }
}
