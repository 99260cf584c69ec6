//! Library kernels against brute-force reimplementations written from the
//! definitions, with f64 arithmetic throughout.

mod common;

use clipflow::ops::{
    attention_full, build_global_index_set, build_local_window, dual_scope_reference, group_norm, temporal_conv,
    AttentionParams, ConvKernel, DualScopeConfig, GroupNormParams,
};
use clipflow::tensor::{max_abs_diff, tensor_from_seed, Dims, LatentTensor, SeededRng};
use common::RefSplitMix;
use proptest::prelude::*;

#[test]
fn splitmix_reference_stream() {
    let mut r = RefSplitMix(0);
    assert_eq!(r.next(), 0xE220_A839_7B1D_CDAF);
    let mut mine = SeededRng::new(0);
    let mut theirs = RefSplitMix(0);
    for _ in 0..1000 {
        assert_eq!(mine.next_u64(), theirs.next());
    }
}

#[test]
fn seeded_tensor_matches_reference_generator() {
    let dims = Dims::new(4, 2, 2, 3);
    let t = tensor_from_seed(dims, 7).unwrap();
    let mut r = RefSplitMix(7);
    let want: Vec<f32> = (0..dims.len()).map(|_| r.uniform()).collect();
    assert_eq!(t.as_slice(), &want[..]);
    let sum: f64 = want.iter().map(|&v| v as f64).sum();
    assert_eq!(t.checksum(), sum);
    assert!(want.iter().all(|v| (-1.0..1.0).contains(v)));
}

fn at(v: &LatentTensor, f: usize, pos: usize, ch: usize) -> f64 {
    let d = v.dims();
    v.as_slice()[(f * d.positions() + pos) * d.channels + ch] as f64
}

fn brute_conv(v: &LatentTensor, k: &ConvKernel) -> Vec<f64> {
    let d = v.dims();
    let r = (k.taps() / 2) as isize;
    let mut out = vec![];
    for f in 0..d.frames {
        for pos in 0..d.positions() {
            for o in 0..d.channels {
                let mut acc = k.bias()[o] as f64;
                for j in 0..k.taps() {
                    let src = f as isize + j as isize - r;
                    if src < 0 || src >= d.frames as isize {
                        continue;
                    }
                    for i in 0..d.channels {
                        acc += k.weight(j, o, i) as f64 * at(v, src as usize, pos, i);
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn conv_matches_brute_force() {
    for (f, taps, seed) in [(5, 1, 0), (8, 3, 1), (9, 5, 2), (3, 5, 3)] {
        let v = tensor_from_seed(Dims::new(f, 2, 3, 3), seed).unwrap();
        let k = ConvKernel::from_seed(taps, 3, seed + 50, 0.7).unwrap();
        let got = temporal_conv(&v, &k);
        for (g, w) in got.as_slice().iter().zip(brute_conv(&v, &k)) {
            assert!((*g as f64 - w).abs() < 1e-6, "{g} vs {w}");
        }
    }
}

fn brute_group_norm(v: &LatentTensor, p: &GroupNormParams) -> Vec<f64> {
    let c = v.dims().channels;
    let per = c / p.groups;
    let vals: Vec<f64> = v.as_slice().iter().map(|&x| x as f64).collect();
    let stats: Vec<(f64, f64)> = (0..p.groups)
        .map(|g| {
            let xs: Vec<f64> = vals
                .iter()
                .enumerate()
                .filter(|(i, _)| (i % c) / per == g)
                .map(|(_, &x)| x)
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            (mean, var)
        })
        .collect();
    vals.iter()
        .enumerate()
        .map(|(i, &x)| {
            let ch = i % c;
            let (mean, var) = stats[ch / per];
            p.gamma[ch] as f64 * (x - mean) / (var + p.epsilon as f64).sqrt() + p.beta[ch] as f64
        })
        .collect()
}

#[test]
fn group_norm_matches_brute_force() {
    for (groups, seed) in [(1, 0), (2, 1), (4, 2)] {
        let v = tensor_from_seed(Dims::new(6, 2, 2, 4), seed).unwrap();
        let mut r = SeededRng::new(seed + 9);
        let gamma = (0..4).map(|_| 1.0 + 0.5 * r.next_f32()).collect();
        let beta = (0..4).map(|_| r.next_f32()).collect();
        let p = GroupNormParams::new(groups, gamma, beta, 1e-5).unwrap();
        let got = group_norm(&v, &p);
        for (g, w) in got.as_slice().iter().zip(brute_group_norm(&v, &p)) {
            assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
        }
    }
}

fn matvec(w: &[f32], x: &[f64]) -> Vec<f64> {
    let c = x.len();
    (0..c)
        .map(|o| (0..c).map(|i| w[o * c + i] as f64 * x[i]).sum())
        .collect()
}

/// Attention of query frame `a` at one position over an explicit token list
/// of `(frame, bias)` pairs.
fn brute_attend(v: &LatentTensor, p: &AttentionParams, a: usize, pos: usize, tokens: &[(usize, f64)]) -> Vec<f64> {
    let c = v.dims().channels;
    let token = |f: usize| (0..c).map(|ch| at(v, f, pos, ch)).collect::<Vec<_>>();
    let q = matvec(&p.wq, &token(a));
    let logits: Vec<f64> = tokens
        .iter()
        .map(|&(f, b)| {
            let k = matvec(&p.wk, &token(f));
            q.iter().zip(&k).map(|(x, y)| x * y).sum::<f64>() / (c as f64).sqrt() + b
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut mixed = vec![0.0; c];
    for (&(f, _), w) in tokens.iter().zip(&weights) {
        for (m, x) in mixed.iter_mut().zip(matvec(&p.wv, &token(f))) {
            *m += w / total * x;
        }
    }
    matvec(&p.wo, &mixed)
}

fn brute_dual_scope(v: &LatentTensor, t: f64, p: &AttentionParams, cfg: &DualScopeConfig) -> Vec<f64> {
    let d = v.dims();
    let f = d.frames;
    let half = cfg.n_local / 2;
    let globals: Vec<usize> = (0..cfg.n_global).map(|j| j * f / cfg.n_global).collect();
    let (local_bias, global_bias) = if t > cfg.t_star {
        (0.0, cfg.bias as f64)
    } else {
        (cfg.bias as f64, 0.0)
    };
    let mut out = vec![];
    for a in 0..f {
        let lo = a.saturating_sub(half);
        let hi = (a + half).min(f - 1);
        let mut tokens: Vec<(usize, f64)> = (lo..=hi).map(|j| (j, local_bias)).collect();
        tokens.extend(globals.iter().map(|&g| (g, global_bias)));
        for pos in 0..d.positions() {
            out.extend(brute_attend(v, p, a, pos, &tokens));
        }
    }
    out
}

#[test]
fn dual_scope_matches_brute_force() {
    let p = AttentionParams::from_seed(3, 4, 0.6);
    for (f, n_local, n_global, t) in [
        (12, 4, 3, 900.0),
        (12, 4, 3, 500.0),
        (20, 8, 5, 801.0),
        (7, 16, 7, 800.0),
    ] {
        let cfg = DualScopeConfig {
            n_local,
            n_global,
            bias: 2.5,
            t_star: 800.0,
        };
        let v = tensor_from_seed(Dims::new(f, 2, 1, 3), f as u64).unwrap();
        let got = dual_scope_reference(&v, t, &p, &cfg).unwrap();
        for (g, w) in got.as_slice().iter().zip(brute_dual_scope(&v, t, &p, &cfg)) {
            assert!((*g as f64 - w).abs() < 1e-5, "F={f} t={t}: {g} vs {w}");
        }
    }
}

#[test]
fn full_attention_matches_brute_force() {
    let p = AttentionParams::from_seed(2, 8, 0.9);
    let v = tensor_from_seed(Dims::new(6, 1, 2, 2), 1).unwrap();
    let got = attention_full(&v, &p);
    let mut want = vec![];
    for a in 0..6 {
        let tokens: Vec<(usize, f64)> = (0..6).map(|j| (j, 0.0)).collect();
        for pos in 0..2 {
            want.extend(brute_attend(&v, &p, a, pos, &tokens));
        }
    }
    for (g, w) in got.as_slice().iter().zip(want) {
        assert!((*g as f64 - w).abs() < 1e-6);
    }
}

#[test]
fn window_and_global_set_examples() {
    assert_eq!(build_local_window(0, 64, 16), (0..=8).collect::<Vec<_>>());
    assert_eq!(build_local_window(63, 64, 16), (55..=63).collect::<Vec<_>>());
    assert_eq!(
        build_global_index_set(64, 16).unwrap(),
        (0..16).map(|j| 4 * j).collect::<Vec<_>>()
    );
    assert_eq!(build_global_index_set(10, 4).unwrap(), vec![0, 2, 5, 7]);
    assert!(build_global_index_set(4, 5).is_err());
}

#[test]
fn timestep_bias_switches_sides() {
    // A strong bias on one side pushes nearly all weight there.
    let cfg = DualScopeConfig {
        n_local: 2,
        n_global: 1,
        bias: 50.0,
        t_star: 800.0,
    };
    let p = AttentionParams::from_seed(2, 3, 0.5);
    let v = tensor_from_seed(Dims::new(8, 1, 1, 2), 2).unwrap();
    let favour_global = dual_scope_reference(&v, 900.0, &p, &cfg).unwrap();
    // With all weight on frame 0 (the only global frame) every query's
    // output is frame 0's value projection.
    let c = 2;
    let token0 = [at(&v, 0, 0, 0), at(&v, 0, 0, 1)];
    let want = matvec(&p.wo, &matvec(&p.wv, &token0));
    for a in 3..8 {
        for (ch, w) in want.iter().enumerate().take(c) {
            assert!((at(&favour_global, a, 0, ch) - w).abs() < 1e-6);
        }
    }
    let favour_local = dual_scope_reference(&v, 700.0, &p, &cfg).unwrap();
    assert!(max_abs_diff(&favour_local, &favour_global).unwrap() > 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_oracle_agrees_on_random_shapes(f in 1usize..10, taps in prop::sample::select(vec![1usize, 3, 5, 7]), seed in 0u64..1000) {
        let v = tensor_from_seed(Dims::new(f, 1, 2, 2), seed).unwrap();
        let k = ConvKernel::from_seed(taps, 2, seed ^ 0xff, 0.5).unwrap();
        let got = temporal_conv(&v, &k);
        for (g, w) in got.as_slice().iter().zip(brute_conv(&v, &k)) {
            prop_assert!((*g as f64 - w).abs() < 1e-6);
        }
    }

    #[test]
    fn group_norm_output_is_standardized(f in 2usize..12, seed in 0u64..1000) {
        let v = tensor_from_seed(Dims::new(f, 2, 2, 4), seed).unwrap();
        let out = group_norm(&v, &GroupNormParams::plain(2, 4).unwrap());
        for g in 0..2 {
            let xs: Vec<f64> = out.as_slice().iter().enumerate()
                .filter(|(i, _)| (i % 4) / 2 == g).map(|(_, &x)| x as f64).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assert!(mean.abs() < 1e-5);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
