use super::OpError;
use crate::tensor::{LatentTensor, SeededRng};

/// Temporal convolution weights: `taps` odd, weights laid out
/// `[tap][out_channel][in_channel]`, tap `j` reading frame offset `j - radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    taps: usize,
    channels: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvKernel {
    pub fn new(taps: usize, channels: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self, OpError> {
        if taps == 0 || taps.is_multiple_of(2) {
            return Err(OpError::Params(format!("conv taps must be odd and >= 1, got {taps}")));
        }
        if weights.len() != taps * channels * channels || bias.len() != channels {
            return Err(OpError::Params(format!(
                "conv weights {}/bias {} do not match k={taps}, C={channels}",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(OpError::Params("conv weights must be finite".into()));
        }
        Ok(Self {
            taps,
            channels,
            weights,
            bias,
        })
    }

    /// Centre tap is the identity matrix, all other taps and the bias zero.
    pub fn identity(taps: usize, channels: usize) -> Result<Self, OpError> {
        let mut weights = vec![0.0; taps * channels * channels];
        let centre = taps / 2;
        for c in 0..channels {
            weights[(centre * channels + c) * channels + c] = 1.0;
        }
        Self::new(taps, channels, weights, vec![0.0; channels])
    }

    /// Random weights in `[-scale, scale)`, bias included.
    pub fn from_seed(taps: usize, channels: usize, seed: u64, scale: f32) -> Result<Self, OpError> {
        let mut rng = SeededRng::new(seed);
        let weights = (0..taps * channels * channels)
            .map(|_| scale * rng.next_f32())
            .collect();
        let bias = (0..channels).map(|_| scale * rng.next_f32()).collect();
        Self::new(taps, channels, weights, bias)
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Frames read on each side of the output frame, `(k - 1) / 2`.
    pub fn radius(&self) -> usize {
        (self.taps - 1) / 2
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight(&self, tap: usize, out: usize, inp: usize) -> f32 {
        self.weights[(tap * self.channels + out) * self.channels + inp]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Convolves `frames` output frames. `source(f)` returns the input frame at
/// signed offset `f` relative to output frame 0, or `None` where the input is
/// zero padding.
pub(crate) fn conv_with_source<'a>(
    out_frames: usize,
    dims: crate::tensor::Dims,
    kern: &ConvKernel,
    source: impl Fn(isize) -> Option<&'a [f32]>,
) -> LatentTensor {
    let c = dims.channels;
    let positions = dims.positions();
    let radius = kern.radius() as isize;
    let out_dims = dims.with_frames(out_frames);
    let mut out = vec![0.0f32; out_dims.len()];
    let mut acc = vec![0.0f64; c];
    for f in 0..out_frames {
        let taps: Vec<Option<&[f32]>> = (0..kern.taps)
            .map(|j| source(f as isize + j as isize - radius))
            .collect();
        for pos in 0..positions {
            for (o, a) in acc.iter_mut().enumerate() {
                *a = kern.bias[o] as f64;
            }
            for (j, frame) in taps.iter().enumerate() {
                let Some(frame) = frame else { continue };
                let x = &frame[pos * c..(pos + 1) * c];
                for (o, a) in acc.iter_mut().enumerate() {
                    let row = &kern.weights[(j * c + o) * c..(j * c + o + 1) * c];
                    *a += row.iter().zip(x).map(|(&w, &v)| w as f64 * v as f64).sum::<f64>();
                }
            }
            let base = (f * positions + pos) * c;
            for (dst, &a) in out[base..base + c].iter_mut().zip(&acc) {
                *dst = a as f32;
            }
        }
    }
    LatentTensor::wrap(out_dims, out)
}

/// Temporal convolution over the whole video with zero padding outside `[0, F)`.
pub fn temporal_conv(v: &LatentTensor, kern: &ConvKernel) -> LatentTensor {
    assert_eq!(v.dims().channels, kern.channels, "conv channel count");
    let frames = v.frames() as isize;
    conv_with_source(v.frames(), v.dims(), kern, |f| {
        (0..frames).contains(&f).then(|| v.frame(f as usize))
    })
}
