//! Token sets of dual-scope attention and how the timestep bias shifts
//! weight between the local window and the global frames.

use clipflow::ops::{
    attention_full, build_global_index_set, build_local_window, dual_scope_reference_instrumented, AttentionParams,
    DualScopeConfig,
};
use clipflow::tensor::{max_abs_diff, tensor_from_seed, Dims};

fn main() {
    let f = 64;
    let cfg = DualScopeConfig::default();
    let w = build_local_window(16, f, cfg.n_local);
    println!("window of frame 16: {}..={} ({} frames)", w[0], w[w.len() - 1], w.len());
    println!("global set: {:?}", build_global_index_set(f, cfg.n_global).unwrap());

    let x = tensor_from_seed(Dims::new(f, 2, 2, 8), 3).unwrap();
    let p = AttentionParams::from_seed(8, 5, 0.35);
    let full = attention_full(&x, &p);
    for t in [950.0, 500.0] {
        let (out, stats) = dual_scope_reference_instrumented(&x, t, &p, &cfg).unwrap();
        println!(
            "t={t}: bias on {} tokens, {} tokens per query at most, {} score entries per position (full attention: {}), distance to full attention {:.3}",
            if cfg.favours_global(t) { "global" } else { "local" },
            stats.max_tokens_per_query,
            stats.score_entries_per_position,
            f * f,
            max_abs_diff(&out, &full).unwrap()
        );
    }

    let wide = DualScopeConfig {
        n_local: 2 * f,
        n_global: 0,
        bias: 0.0,
        ..cfg
    };
    let (out, _) = dual_scope_reference_instrumented(&x, 900.0, &p, &wide).unwrap();
    println!(
        "window covering the video, no globals, no bias: {:e}",
        max_abs_diff(&out, &full).unwrap()
    );
}
