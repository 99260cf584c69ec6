use crate::tensor::{LatentTensor, SeededRng};

/// Per-frame stand-in for the spatial modules: `tanh(a * x + c)` with one
/// `(a, c)` pair per channel. No data crosses frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialStub {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl SpatialStub {
    pub fn from_seed(seed: u64, channels: usize) -> Self {
        let mut rng = SeededRng::new(seed);
        let scale = (0..channels).map(|_| 1.0 + 0.25 * rng.next_f32()).collect();
        let shift = (0..channels).map(|_| 0.1 * rng.next_f32()).collect();
        Self { scale, shift }
    }

    /// `a = 1, c = 0` on every channel, so the map is plain `tanh`.
    pub fn identity_affine(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn apply(&self, v: &LatentTensor) -> LatentTensor {
        assert_eq!(v.dims().channels, self.channels(), "stub channel count");
        let c = self.channels();
        let data = v
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let ch = i % c;
                (self.scale[ch] * x + self.shift[ch]).tanh()
            })
            .collect();
        LatentTensor::wrap(v.dims(), data)
    }
}

pub fn spatial_stub(v: &LatentTensor, seed: u64) -> LatentTensor {
    SpatialStub::from_seed(seed, v.dims().channels).apply(v)
}
