//! The full denoising loop on 1, 2 and 4 workers. The final latents agree to
//! accumulation error.

use clipflow::metrics::LayerKind;
use clipflow::pipeline::{build_model, run_inproc, DenoiseConfig, Mode, ModelConfig, SyncMode};
use clipflow::tensor::{max_abs_diff, tensor_from_seed, Dims};

fn main() {
    let dims = Dims::new(64, 2, 2, 4);
    let model = build_model(&ModelConfig::default(), dims.channels);
    let x = tensor_from_seed(dims, 0).unwrap();
    let mode = Mode::Denoise(DenoiseConfig { steps: 30 });

    let base = run_inproc(&model, mode, SyncMode::FULL, &x, 1, false).unwrap().output;
    for n in [2, 4] {
        let out = run_inproc(&model, mode, SyncMode::FULL, &x, n, true).unwrap();
        let per_worker: Vec<String> = LayerKind::TEMPORAL
            .iter()
            .map(|k| format!("{} {}", k.name(), out.report.workers[1].traffic(*k).bytes_sent))
            .collect();
        println!(
            "N={n}: max diff vs N=1 {:e}, exclusivity violations {}, worker 1 bytes: {}",
            max_abs_diff(&out.output, &base).unwrap(),
            out.exclusivity_violations,
            per_worker.join(", ")
        );
    }
}
