use super::{matvec, OpError};
use crate::tensor::meter::Scratch;
use crate::tensor::{concat_frames, slice_frames, FrameRange, LatentTensor, SeededRng};

/// Single-head temporal attention weights; all four projections are
/// row-major `C x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    channels: usize,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
}

impl AttentionParams {
    pub fn new(channels: usize, wq: Vec<f32>, wk: Vec<f32>, wv: Vec<f32>, wo: Vec<f32>) -> Result<Self, OpError> {
        let n = channels * channels;
        if channels == 0 || [&wq, &wk, &wv, &wo].iter().any(|w| w.len() != n) {
            return Err(OpError::Params(format!(
                "attention projections must be {channels}x{channels}"
            )));
        }
        Ok(Self {
            channels,
            wq,
            wk,
            wv,
            wo,
        })
    }

    pub fn from_seed(channels: usize, seed: u64, scale: f32) -> Self {
        let mut rng = SeededRng::new(seed);
        let mut draw = || {
            (0..channels * channels)
                .map(|_| scale * rng.next_f32())
                .collect::<Vec<_>>()
        };
        let (wq, wk, wv, wo) = (draw(), draw(), draw(), draw());
        Self {
            channels,
            wq,
            wk,
            wv,
            wo,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `1 / sqrt(d)` with the head dimension equal to the channel count.
    pub fn scale(&self) -> f64 {
        1.0 / (self.channels as f64).sqrt()
    }

    pub fn param_count(&self) -> usize {
        4 * self.channels * self.channels
    }
}

/// Window, global-set and timestep-bias settings for dual-scope attention.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DualScopeConfig {
    /// Neighbouring frames per query, half on each side.
    pub n_local: usize,
    /// Uniformly strided frames shared by every query.
    pub n_global: usize,
    /// Additive logit bias.
    pub bias: f32,
    /// Above this timestep the global set is favoured, at or below it the window.
    pub t_star: f64,
}

impl Default for DualScopeConfig {
    fn default() -> Self {
        Self {
            n_local: 16,
            n_global: 16,
            bias: 10.0,
            t_star: 800.0,
        }
    }
}

impl DualScopeConfig {
    pub fn validate(&self) -> Result<(), OpError> {
        if self.n_local < 2 || !self.n_local.is_multiple_of(2) {
            return Err(OpError::Config(format!(
                "n_local must be even and >= 2, got {}",
                self.n_local
            )));
        }
        if self.bias.is_nan() || self.bias < 0.0 {
            return Err(OpError::Config(format!("bias must be >= 0, got {}", self.bias)));
        }
        Ok(())
    }

    /// Frames fetched from each neighbouring clip.
    pub fn halo(&self) -> usize {
        self.n_local / 2
    }

    pub fn favours_global(&self, t: f64) -> bool {
        t > self.t_star
    }

    /// Logit bias added to a key token at timestep `t`.
    pub fn token_bias(&self, t: f64, global_token: bool) -> f64 {
        if global_token == self.favours_global(t) {
            self.bias as f64
        } else {
            0.0
        }
    }
}

/// Frames `a - n_local/2 ..= a + n_local/2`, clamped to `[0, frames)`.
pub fn build_local_window(a: usize, frames: usize, n_local: usize) -> Vec<usize> {
    debug_assert!(a < frames);
    let half = n_local / 2;
    (a.saturating_sub(half)..=(a + half).min(frames - 1)).collect()
}

/// `floor(j * frames / n_global)` for `j = 0 .. n_global`.
pub fn build_global_index_set(frames: usize, n_global: usize) -> Result<Vec<usize>, OpError> {
    if n_global > frames {
        return Err(OpError::Config(format!(
            "global set of {n_global} frames exceeds the {frames}-frame video"
        )));
    }
    Ok((0..n_global).map(|j| j * frames / n_global).collect())
}

/// Counters reported by the attention kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct AttentionStats {
    pub queries: usize,
    /// Largest key/value list seen by any query.
    pub max_tokens_per_query: usize,
    /// Score-matrix entries materialised per spatial position.
    pub score_entries_per_position: usize,
}

/// Local key/value frames: a contiguous run of the video starting at global
/// frame `first_frame`.
pub(crate) struct KvWindow<'a> {
    pub frames: &'a LatentTensor,
    pub first_frame: usize,
}

#[derive(Clone, Copy)]
enum Bank {
    Local,
    Global,
}

#[derive(Clone, Copy)]
struct Token {
    bank: Bank,
    frame: usize,
    bias: f64,
}

fn project(v: &LatentTensor, w: &[f32]) -> Vec<f32> {
    let c = v.dims().channels;
    let mut out = vec![0.0; v.len()];
    for (src, dst) in v.as_slice().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        matvec(w, src, dst);
    }
    out
}

/// Runs softmax attention for `queries` local frames. `tokens[a]` lists the
/// keys of query `a` in concatenation order.
fn attend(
    local: &LatentTensor,
    query_offset: usize,
    query_count: usize,
    global: &LatentTensor,
    tokens: &[Vec<Token>],
    p: &AttentionParams,
) -> (LatentTensor, AttentionStats) {
    let dims = local.dims();
    let c = dims.channels;
    let positions = dims.positions();
    let frame_len = dims.frame_len();
    assert_eq!(c, p.channels, "attention channel count");

    let queries = slice_frames(local, FrameRange::new(query_offset, query_count))
        .expect("query frames lie inside the local window");
    let _proj_scratch = Scratch::new(queries.len() + 2 * (local.len() + global.len()));
    let q = project(&queries, &p.wq);
    let (k_loc, v_loc) = (project(local, &p.wk), project(local, &p.wv));
    let (k_glob, v_glob) = (project(global, &p.wk), project(global, &p.wv));
    drop(queries);

    let entries: usize = tokens.iter().map(Vec::len).sum();
    let stats = AttentionStats {
        queries: query_count,
        max_tokens_per_query: tokens.iter().map(Vec::len).max().unwrap_or(0),
        score_entries_per_position: entries,
    };

    let scale = p.scale();
    let out_dims = dims.with_frames(query_count);
    let mut out = vec![0.0f32; out_dims.len()];
    let mut mixed = vec![0.0f64; c];
    let mut mixed32 = vec![0.0f32; c];
    let _score_scratch = Scratch::new(entries);
    let mut scores = vec![0.0f64; entries];
    for pos in 0..positions {
        let mut cursor = 0;
        for (a, list) in tokens.iter().enumerate() {
            let qv = &q[a * frame_len + pos * c..a * frame_len + (pos + 1) * c];
            let row = &mut scores[cursor..cursor + list.len()];
            cursor += list.len();
            let kv = |tok: &Token| {
                let base = tok.frame * frame_len + pos * c;
                match tok.bank {
                    Bank::Local => (&k_loc[base..base + c], &v_loc[base..base + c]),
                    Bank::Global => (&k_glob[base..base + c], &v_glob[base..base + c]),
                }
            };
            let mut max = f64::NEG_INFINITY;
            for (s, tok) in row.iter_mut().zip(list) {
                let (k, _) = kv(tok);
                let dot: f64 = qv.iter().zip(k).map(|(&x, &y)| x as f64 * y as f64).sum();
                *s = scale * dot + tok.bias;
                max = max.max(*s);
            }
            let mut norm = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                norm += *s;
            }
            mixed.iter_mut().for_each(|m| *m = 0.0);
            for (s, tok) in row.iter_mut().zip(list) {
                *s /= norm;
                let (_, v) = kv(tok);
                for (m, &x) in mixed.iter_mut().zip(v) {
                    *m += *s * x as f64;
                }
            }
            for (d, &m) in mixed32.iter_mut().zip(&mixed) {
                *d = m as f32;
            }
            let base = a * frame_len + pos * c;
            matvec(&p.wo, &mixed32, &mut out[base..base + c]);
        }
    }
    (LatentTensor::wrap(out_dims, out), stats)
}

/// Dual-scope attention for the queries `query_first .. query_first + query_count`
/// (global frame indices) of a `total_frames`-frame video.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dual_scope_core(
    query_first: usize,
    query_count: usize,
    local: KvWindow<'_>,
    global: &LatentTensor,
    total_frames: usize,
    t: f64,
    p: &AttentionParams,
    cfg: &DualScopeConfig,
) -> Result<(LatentTensor, AttentionStats), OpError> {
    let local_end = local.first_frame + local.frames.frames();
    let global_bias = cfg.token_bias(t, true);
    let local_bias = cfg.token_bias(t, false);
    let mut tokens = Vec::with_capacity(query_count);
    for a in query_first..query_first + query_count {
        let window = build_local_window(a, total_frames, cfg.n_local);
        let (lo, hi) = (window[0], *window.last().unwrap());
        if lo < local.first_frame || hi >= local_end {
            return Err(OpError::Params(format!(
                "window {lo}..={hi} of frame {a} exceeds local frames {}..{local_end}",
                local.first_frame
            )));
        }
        let mut list: Vec<Token> = window
            .into_iter()
            .map(|f| Token {
                bank: Bank::Local,
                frame: f - local.first_frame,
                bias: local_bias,
            })
            .collect();
        list.extend((0..global.frames()).map(|g| Token {
            bank: Bank::Global,
            frame: g,
            bias: global_bias,
        }));
        tokens.push(list);
    }
    Ok(attend(
        local.frames,
        query_first - local.first_frame,
        query_count,
        global,
        &tokens,
        p,
    ))
}

/// Gathers the frames at `indices` into one tensor (zero frames if empty).
pub(crate) fn gather_frames(v: &LatentTensor, indices: &[usize]) -> Result<LatentTensor, OpError> {
    if indices.is_empty() {
        return Ok(LatentTensor::empty_like(v.dims()));
    }
    let parts = indices
        .iter()
        .map(|&f| slice_frames(v, FrameRange::new(f, 1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(concat_frames(&parts)?)
}

/// Full temporal self-attention: every frame attends to every frame.
pub fn attention_full(v: &LatentTensor, p: &AttentionParams) -> LatentTensor {
    let f = v.frames();
    let all: Vec<Token> = (0..f)
        .map(|frame| Token {
            bank: Bank::Local,
            frame,
            bias: 0.0,
        })
        .collect();
    let tokens = vec![all; f];
    let empty = LatentTensor::empty_like(v.dims());
    attend(v, 0, f, &empty, &tokens, p).0
}

/// Softmax probabilities of full attention at spatial position `pos`,
/// row-major `F x F` (row = query).
pub fn attention_full_scores(v: &LatentTensor, p: &AttentionParams, pos: usize) -> Vec<Vec<f64>> {
    let c = v.dims().channels;
    let f = v.frames();
    let proj = |w: &[f32]| -> Vec<Vec<f32>> {
        (0..f)
            .map(|a| {
                let mut o = vec![0.0; c];
                matvec(w, v.token(a, pos), &mut o);
                o
            })
            .collect()
    };
    let (q, k) = (proj(&p.wq), proj(&p.wk));
    q.iter()
        .map(|qa| {
            let logits: Vec<f64> = k
                .iter()
                .map(|kb| p.scale() * qa.iter().zip(kb).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        })
        .collect()
}

/// Single-process dual-scope attention over the whole video.
pub fn dual_scope_reference(
    v: &LatentTensor,
    t: f64,
    p: &AttentionParams,
    cfg: &DualScopeConfig,
) -> Result<LatentTensor, OpError> {
    dual_scope_reference_instrumented(v, t, p, cfg).map(|(out, _)| out)
}

pub fn dual_scope_reference_instrumented(
    v: &LatentTensor,
    t: f64,
    p: &AttentionParams,
    cfg: &DualScopeConfig,
) -> Result<(LatentTensor, AttentionStats), OpError> {
    cfg.validate()?;
    let f = v.frames();
    let global = gather_frames(v, &build_global_index_set(f, cfg.n_global)?)?;
    dual_scope_core(
        0,
        f,
        KvWindow {
            frames: v,
            first_frame: 0,
        },
        &global,
        f,
        t,
        p,
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{max_abs_diff, tensor_from_seed, Dims};

    #[test]
    fn local_window_examples() {
        assert_eq!(build_local_window(16, 64, 16), (8..=24).collect::<Vec<_>>());
        assert_eq!(build_local_window(0, 64, 16), (0..=8).collect::<Vec<_>>());
        assert_eq!(build_local_window(63, 64, 16), (55..=63).collect::<Vec<_>>());
        assert_eq!(build_local_window(16, 64, 16).len(), 17);
    }

    #[test]
    fn global_set_examples() {
        assert_eq!(
            build_global_index_set(32, 16).unwrap(),
            (0..16).map(|j| 2 * j).collect::<Vec<_>>()
        );
        assert_eq!(build_global_index_set(16, 16).unwrap(), (0..16).collect::<Vec<_>>());
        assert_eq!(
            build_global_index_set(24, 16).unwrap(),
            vec![0, 1, 3, 4, 6, 7, 9, 10, 12, 13, 15, 16, 18, 19, 21, 22]
        );
        assert!(build_global_index_set(8, 16).is_err());
        assert!(build_global_index_set(8, 0).unwrap().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(DualScopeConfig::default().validate().is_ok());
        for bad in [
            DualScopeConfig {
                n_local: 3,
                ..Default::default()
            },
            DualScopeConfig {
                n_local: 0,
                ..Default::default()
            },
            DualScopeConfig {
                bias: -1.0,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn bias_policy_switches_at_threshold() {
        let cfg = DualScopeConfig::default();
        assert_eq!(cfg.token_bias(900.0, true), 10.0);
        assert_eq!(cfg.token_bias(900.0, false), 0.0);
        assert_eq!(cfg.token_bias(800.0, true), 0.0);
        assert_eq!(cfg.token_bias(800.0, false), 10.0);
    }

    #[test]
    fn single_frame_attention_is_value_projection() {
        let v = tensor_from_seed(Dims::new(1, 2, 1, 3), 4).unwrap();
        let p = AttentionParams::from_seed(3, 8, 0.5);
        let out = attention_full(&v, &p);
        for pos in 0..2 {
            let mut vx = vec![0.0; 3];
            matvec(&p.wv, v.token(0, pos), &mut vx);
            let mut expect = vec![0.0; 3];
            matvec(&p.wo, &vx, &mut expect);
            for (a, b) in out.token(0, pos).iter().zip(&expect) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_query_gives_uniform_mix() {
        let v = tensor_from_seed(Dims::new(5, 1, 2, 2), 1).unwrap();
        let mut p = AttentionParams::from_seed(2, 3, 0.7);
        p.wq = vec![0.0; 4];
        let out = attention_full(&v, &p);
        for pos in 0..2 {
            let mut mean = [0.0f32; 2];
            for f in 0..5 {
                let mut vx = vec![0.0; 2];
                matvec(&p.wv, v.token(f, pos), &mut vx);
                mean[0] += vx[0] / 5.0;
                mean[1] += vx[1] / 5.0;
            }
            let mut expect = vec![0.0; 2];
            matvec(&p.wo, &mean, &mut expect);
            for f in 0..5 {
                for (a, b) in out.token(f, pos).iter().zip(&expect) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn score_rows_sum_to_one() {
        let v = tensor_from_seed(Dims::new(6, 2, 1, 3), 21).unwrap();
        let p = AttentionParams::from_seed(3, 5, 1.0);
        for row in attention_full_scores(&v, &p, 1) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_dual_scope_is_full_attention() {
        let v = tensor_from_seed(Dims::new(7, 2, 2, 2), 2).unwrap();
        let p = AttentionParams::from_seed(2, 6, 0.8);
        let cfg = DualScopeConfig {
            n_local: 12,
            n_global: 0,
            bias: 0.0,
            t_star: 800.0,
        };
        let ds = dual_scope_reference(&v, 900.0, &p, &cfg).unwrap();
        assert!(max_abs_diff(&ds, &attention_full(&v, &p)).unwrap() <= 1e-6);
    }

    #[test]
    fn timestep_changes_output() {
        let v = tensor_from_seed(Dims::new(32, 1, 2, 4), 3).unwrap();
        let p = AttentionParams::from_seed(4, 9, 0.5);
        let cfg = DualScopeConfig::default();
        let hi = dual_scope_reference(&v, 900.0, &p, &cfg).unwrap();
        let lo = dual_scope_reference(&v, 700.0, &p, &cfg).unwrap();
        assert!(max_abs_diff(&hi, &lo).unwrap() > 0.0);
    }

    #[test]
    fn token_counts_bounded() {
        let v = tensor_from_seed(Dims::new(64, 1, 1, 2), 3).unwrap();
        let p = AttentionParams::from_seed(2, 9, 0.5);
        let (_, stats) = dual_scope_reference_instrumented(&v, 500.0, &p, &DualScopeConfig::default()).unwrap();
        assert_eq!(stats.max_tokens_per_query, 33);
        assert_eq!(stats.queries, 64);
    }
}
