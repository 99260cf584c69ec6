use super::ParallelError;
use crate::tensor::{slice_frames, FrameRange, LatentTensor};

/// Equal frame-axis split of an `F`-frame video over `N` workers; worker `i`
/// owns `[i * F_clip, (i + 1) * F_clip)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct ClipPlan {
    workers: usize,
    frames: usize,
}

impl ClipPlan {
    pub fn new(frames: usize, workers: usize) -> Result<Self, ParallelError> {
        if workers == 0 {
            return Err(ParallelError::Partition("worker count must be >= 1".into()));
        }
        if frames == 0 || !frames.is_multiple_of(workers) {
            return Err(ParallelError::Partition(format!(
                "worker count N={workers} must divide the frame count F={frames}"
            )));
        }
        Ok(Self { workers, frames })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn clip_frames(&self) -> usize {
        self.frames / self.workers
    }

    pub fn range(&self, worker: usize) -> FrameRange {
        FrameRange::new(worker * self.clip_frames(), self.clip_frames())
    }

    pub fn ranges(&self) -> Vec<FrameRange> {
        (0..self.workers).map(|i| self.range(i)).collect()
    }

    /// Worker owning global frame `f`.
    pub fn owner(&self, f: usize) -> usize {
        f / self.clip_frames()
    }
}

/// Splits `x` into `n` clips, one per worker.
pub fn partition(x: &LatentTensor, n: usize) -> Result<(Vec<LatentTensor>, ClipPlan), ParallelError> {
    let plan = ClipPlan::new(x.frames(), n)?;
    let clips = plan
        .ranges()
        .into_iter()
        .map(|r| slice_frames(x, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((clips, plan))
}
