//! Wall time and traffic per worker count, with measured bytes checked
//! against the closed-form prediction.

use std::time::Instant;

use clipflow::parallel::ClipPlan;
use clipflow::pipeline::{build_model, predicted_total_bytes, run_inproc, DenoiseConfig, Mode, ModelConfig, SyncMode};
use clipflow::tensor::{tensor_from_seed, Dims};

fn main() {
    let dims = Dims::new(128, 2, 2, 32);
    let model = build_model(
        &ModelConfig {
            blocks: 4,
            ..Default::default()
        },
        dims.channels,
    );
    let d = DenoiseConfig { steps: 4 };
    let x = tensor_from_seed(dims, 0).unwrap();
    let mut base = None;
    for n in [1, 2, 4, 8] {
        let start = Instant::now();
        let out = run_inproc(&model, Mode::Denoise(d), SyncMode::FULL, &x, n, false).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let base = *base.get_or_insert(secs);
        let plan = ClipPlan::new(dims.frames, n).unwrap();
        println!(
            "N={n}: {secs:.3}s speedup {:.2}x, bytes {} (predicted {}), peak live elements per worker {}",
            base / secs,
            out.report.total_bytes(),
            predicted_total_bytes(&model, dims, &plan, SyncMode::FULL, d.steps),
            out.report.max_peak_live()
        );
    }
}
