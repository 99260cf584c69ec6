//! Dense `[F, H, W, C]` tensors with frame-axis slicing and concatenation.
//!
//! Storage is row-major with the frame index slowest-varying, so a frame
//! range is one contiguous run of the backing vector.

mod dump;
pub mod meter;
mod rng;

use std::fmt;

pub use dump::{read_dump, read_dump_from, write_dump, write_dump_to, DUMP_MAGIC, DUMP_VERSION};
pub use rng::{derive_seed, mix64, SeededRng};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("frame range {start}..{end} outside tensor with {frames} frames")]
    Range { start: usize, end: usize, frames: usize },
    #[error("malformed tensor dump: {0}")]
    Dump(String),
}

/// Tensor extents: frames, height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    /// Spatial positions per frame (`H * W`).
    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    /// Elements per frame (`H * W * C`).
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_frames(&self, frames: usize) -> Self {
        Self { frames, ..*self }
    }

    fn validate(&self) -> Result<(), TensorError> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(TensorError::InvalidShape(format!("all dims must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.frames, self.height, self.width, self.channels
        )
    }
}

/// A contiguous run of frames, `start..start + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct FrameRange {
    pub start: usize,
    pub len: usize,
}

impl FrameRange {
    pub const fn new(start: usize, len: usize) -> Self {
        Self { start, len }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.end()
    }
}

/// Latent video tensor. Immutable once built; share it by reference.
///
/// Frame-empty tensors (`frames == 0`) exist only as the boundary contexts
/// of the first and last worker; every public constructor rejects them.
#[derive(PartialEq)]
pub struct LatentTensor {
    dims: Dims,
    data: Vec<f32>,
}

impl LatentTensor {
    pub fn from_vec(dims: Dims, data: Vec<f32>) -> Result<Self, TensorError> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(TensorError::InvalidShape(format!(
                "{} values for dims {dims} (expected {})",
                data.len(),
                dims.len()
            )));
        }
        Ok(Self::wrap(dims, data))
    }

    pub fn zeros(dims: Dims) -> Result<Self, TensorError> {
        dims.validate()?;
        Ok(Self::wrap(dims, vec![0.0; dims.len()]))
    }

    /// Element `i` is the `i`-th value of the SplitMix64 stream for `seed`.
    pub fn from_seed(dims: Dims, seed: u64) -> Result<Self, TensorError> {
        dims.validate()?;
        let mut data = vec![0.0; dims.len()];
        SeededRng::new(seed).fill(&mut data);
        Ok(Self::wrap(dims, data))
    }

    /// A tensor with zero frames but the given frame geometry.
    pub(crate) fn empty_like(dims: Dims) -> Self {
        Self::wrap(dims.with_frames(0), Vec::new())
    }

    pub(crate) fn wrap(dims: Dims, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        meter::acquire(data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.dims.frames
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.dims.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    /// Channel vector of frame `f` at spatial position `pos` (`h * W + w`).
    pub fn token(&self, f: usize, pos: usize) -> &[f32] {
        let c = self.dims.channels;
        let base = (f * self.dims.positions() + pos) * c;
        &self.data[base..base + c]
    }

    pub fn get(&self, f: usize, h: usize, w: usize, c: usize) -> f32 {
        let d = &self.dims;
        self.data[((f * d.height + h) * d.width + w) * d.channels + c]
    }

    pub fn into_vec(mut self) -> Vec<f32> {
        meter::release(self.data.len());
        std::mem::take(&mut self.data)
    }

    /// Elementwise map producing a new tensor of the same shape.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Self {
        Self::wrap(self.dims, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `self + other`, elementwise.
    pub fn add(&self, other: &LatentTensor) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a + b)
    }

    /// `self - scale * other`, elementwise.
    pub fn sub_scaled(&self, other: &LatentTensor, scale: f32) -> Result<Self, TensorError> {
        self.zip_with(other, |a, b| a - scale * b)
    }

    fn zip_with(&self, other: &LatentTensor, f: impl Fn(f32, f32) -> f32) -> Result<Self, TensorError> {
        check_same_dims(self, other)?;
        Ok(Self::wrap(
            self.dims,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// Sum of all elements, accumulated in f64.
    pub fn checksum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

impl Clone for LatentTensor {
    fn clone(&self) -> Self {
        Self::wrap(self.dims, self.data.clone())
    }
}

impl Drop for LatentTensor {
    fn drop(&mut self) {
        meter::release(self.data.len());
    }
}

impl fmt::Debug for LatentTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatentTensor")
            .field("dims", &self.dims)
            .field("checksum", &self.checksum())
            .finish()
    }
}

fn check_same_dims(a: &LatentTensor, b: &LatentTensor) -> Result<(), TensorError> {
    if a.dims != b.dims {
        return Err(TensorError::InvalidShape(format!(
            "dims differ: {} vs {}",
            a.dims, b.dims
        )));
    }
    Ok(())
}

pub fn tensor_from_seed(dims: Dims, seed: u64) -> Result<LatentTensor, TensorError> {
    LatentTensor::from_seed(dims, seed)
}

/// Copies frames `r.start .. r.end()` into a new tensor.
pub fn slice_frames(t: &LatentTensor, r: FrameRange) -> Result<LatentTensor, TensorError> {
    if r.len == 0 || r.end() > t.frames() {
        return Err(TensorError::Range {
            start: r.start,
            end: r.end(),
            frames: t.frames(),
        });
    }
    let n = t.dims.frame_len();
    let data = t.data[r.start * n..r.end() * n].to_vec();
    Ok(LatentTensor::wrap(t.dims.with_frames(r.len), data))
}

/// Joins tensors along the frame axis, preserving order.
pub fn concat_frames(parts: &[LatentTensor]) -> Result<LatentTensor, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::InvalidShape("concat of an empty list".into()))?;
    let geometry = first.dims.with_frames(0);
    let mut frames = 0;
    for p in parts {
        if p.dims.with_frames(0) != geometry {
            return Err(TensorError::InvalidShape(format!(
                "concat parts disagree on (H, W, C): {} vs {}",
                first.dims, p.dims
            )));
        }
        frames += p.frames();
    }
    let dims = geometry.with_frames(frames);
    dims.validate()?;
    let mut data = Vec::with_capacity(dims.len());
    for p in parts {
        data.extend_from_slice(&p.data);
    }
    Ok(LatentTensor::wrap(dims, data))
}

/// Largest elementwise absolute difference.
pub fn max_abs_diff(a: &LatentTensor, b: &LatentTensor) -> Result<f32, TensorError> {
    check_same_dims(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f32::max))
}

/// Number of elements whose absolute difference exceeds `tol`.
pub fn count_mismatches(a: &LatentTensor, b: &LatentTensor, tol: f32) -> Result<usize, TensorError> {
    check_same_dims(a, b)?;
    Ok(a.data
        .iter()
        .zip(&b.data)
        .filter(|(&x, &y)| (x - y).abs() > tol)
        .count())
}
