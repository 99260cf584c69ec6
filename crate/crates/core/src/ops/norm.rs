use super::OpError;
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNormParams {
    pub groups: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub epsilon: f32,
}

impl GroupNormParams {
    pub const DEFAULT_EPSILON: f32 = 1e-5;

    pub fn new(groups: usize, gamma: Vec<f32>, beta: Vec<f32>, epsilon: f32) -> Result<Self, OpError> {
        let c = gamma.len();
        if groups == 0 || c == 0 || !c.is_multiple_of(groups) {
            return Err(OpError::Params(format!("{groups} groups do not divide {c} channels")));
        }
        if beta.len() != c {
            return Err(OpError::Params("gamma and beta lengths differ".into()));
        }
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(OpError::Params(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            groups,
            gamma,
            beta,
            epsilon,
        })
    }

    /// `gamma = 1`, `beta = 0`.
    pub fn plain(groups: usize, channels: usize) -> Result<Self, OpError> {
        Self::new(groups, vec![1.0; channels], vec![0.0; channels], Self::DEFAULT_EPSILON)
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn group_of(&self, channel: usize) -> usize {
        channel / (self.channels() / self.groups)
    }
}

/// Per-group statistics helpers shared by the single-process and the
/// distributed normalization. Sums run in f64; results are rounded to f32
/// because that is what travels between workers.
pub struct GroupStats;

impl GroupStats {
    pub fn means(v: &LatentTensor, p: &GroupNormParams) -> Vec<f32> {
        let mut sums = vec![0.0f64; p.groups];
        let c = v.dims().channels;
        for (i, &x) in v.as_slice().iter().enumerate() {
            sums[p.group_of(i % c)] += x as f64;
        }
        let count = Self::count(v, p) as f64;
        sums.into_iter().map(|s| (s / count) as f32).collect()
    }

    /// Mean squared deviation of each group from the supplied means.
    pub fn mean_sq_dev(v: &LatentTensor, p: &GroupNormParams, means: &[f32]) -> Vec<f32> {
        let mut sums = vec![0.0f64; p.groups];
        let c = v.dims().channels;
        for (i, &x) in v.as_slice().iter().enumerate() {
            let g = p.group_of(i % c);
            let d = x as f64 - means[g] as f64;
            sums[g] += d * d;
        }
        let count = Self::count(v, p) as f64;
        sums.into_iter().map(|s| (s / count) as f32).collect()
    }

    /// Elements per group: `F * H * W * (C / g)`.
    pub fn count(v: &LatentTensor, p: &GroupNormParams) -> usize {
        v.len() / p.groups
    }

    pub fn normalize(v: &LatentTensor, p: &GroupNormParams, means: &[f32], vars: &[f32]) -> LatentTensor {
        let c = v.dims().channels;
        assert_eq!(c, p.channels(), "group norm channel count");
        let inv_std: Vec<f64> = vars
            .iter()
            .map(|&var| 1.0 / (var as f64 + p.epsilon as f64).sqrt())
            .collect();
        let data = v
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let ch = i % c;
                let g = p.group_of(ch);
                let z = (x as f64 - means[g] as f64) * inv_std[g];
                (p.gamma[ch] as f64 * z + p.beta[ch] as f64) as f32
            })
            .collect();
        LatentTensor::wrap(v.dims(), data)
    }
}

/// Group normalization with statistics over the whole tensor.
pub fn group_norm(v: &LatentTensor, p: &GroupNormParams) -> LatentTensor {
    let means = GroupStats::means(v, p);
    let vars = GroupStats::mean_sq_dev(v, p, &means);
    GroupStats::normalize(v, p, &means, &vars)
}
