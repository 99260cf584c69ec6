use crate::config::ConfigError;
use crate::metrics::LayerKind;
use crate::ops::{build_global_index_set, AttentionParams, ConvKernel, DualScopeConfig, GroupNormParams, SpatialStub};
use crate::parallel::ClipPlan;
use crate::tensor::{derive_seed, Dims, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub blocks: usize,
    pub conv_taps: usize,
    pub norm_groups: usize,
    pub dual_scope: DualScopeConfig,
    pub weight_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            conv_taps: 3,
            norm_groups: 2,
            dual_scope: DualScopeConfig::default(),
            weight_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Checks the model against a tensor shape and clip plan. The channel
    /// count is taken from `dims`.
    pub fn validate_for(&self, dims: Dims, plan: &ClipPlan) -> Result<(), ConfigError> {
        let c = dims.channels;
        if self.blocks == 0 {
            return Err(ConfigError::Constraint("blocks must be >= 1".into()));
        }
        if self.conv_taps == 0 || self.conv_taps.is_multiple_of(2) {
            return Err(ConfigError::Constraint(format!(
                "conv_taps must be odd, got {}",
                self.conv_taps
            )));
        }
        if self.norm_groups == 0 || !c.is_multiple_of(self.norm_groups) {
            return Err(ConfigError::Constraint(format!(
                "norm_groups={} must divide channels={c}",
                self.norm_groups
            )));
        }
        self.dual_scope
            .validate()
            .map_err(|e| ConfigError::Constraint(e.to_string()))?;
        build_global_index_set(dims.frames, self.dual_scope.n_global)
            .map_err(|e| ConfigError::Constraint(e.to_string()))?;
        if plan.workers() > 1 {
            let clip = plan.clip_frames();
            if self.dual_scope.halo() > clip {
                return Err(ConfigError::Constraint(format!(
                    "attention halo n_local/2={} exceeds F_clip={clip}",
                    self.dual_scope.halo()
                )));
            }
            if (self.conv_taps - 1) / 2 > clip {
                return Err(ConfigError::Constraint(format!(
                    "conv halo (k-1)/2={} exceeds F_clip={clip}",
                    (self.conv_taps - 1) / 2
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiseConfig {
    pub steps: usize,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self { steps: 30 }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps == 0 {
            return Err(ConfigError::Constraint("denoising steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Descending grid `1000 * j / T` for `j = T .. 1`.
    pub fn timesteps(&self) -> Vec<f64> {
        (1..=self.steps)
            .rev()
            .map(|j| 1000.0 * j as f64 / self.steps as f64)
            .collect()
    }

    /// Euler step size `1 / T`.
    pub fn step_size(&self) -> f32 {
        1.0 / self.steps as f32
    }
}

/// Which temporal layers exchange context. A disabled layer runs on
/// zero-filled contexts (or clip-local statistics for group norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncMode {
    pub conv: bool,
    pub group_norm: bool,
    pub attention: bool,
}

impl SyncMode {
    pub const FULL: SyncMode = SyncMode {
        conv: true,
        group_norm: true,
        attention: true,
    };
    pub const NONE: SyncMode = SyncMode {
        conv: false,
        group_norm: false,
        attention: false,
    };

    pub fn enabled(&self, kind: LayerKind) -> bool {
        match kind {
            LayerKind::Conv => self.conv,
            LayerKind::GroupNorm => self.group_norm,
            LayerKind::Attention => self.attention,
            LayerKind::Control => true,
        }
    }

    pub fn with(mut self, kind: LayerKind) -> Self {
        self.set(kind, true);
        self
    }

    pub fn without(mut self, kind: LayerKind) -> Self {
        self.set(kind, false);
        self
    }

    fn set(&mut self, kind: LayerKind, on: bool) {
        match kind {
            LayerKind::Conv => self.conv = on,
            LayerKind::GroupNorm => self.group_norm = on,
            LayerKind::Attention => self.attention = on,
            LayerKind::Control => {}
        }
    }

    pub fn disabled_list(&self) -> String {
        LayerKind::TEMPORAL
            .iter()
            .filter(|k| !self.enabled(**k))
            .map(|k| k.name())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// One block: spatial stub, residual temporal conv, group norm, residual
/// dual-scope attention.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub stub_seed: u64,
    pub stub: SpatialStub,
    pub conv: ConvKernel,
    pub norm: GroupNormParams,
    pub attention: AttentionParams,
}

impl Block {
    pub fn param_count(&self) -> usize {
        2 * self.stub.channels() + self.conv.param_count() + 2 * self.norm.channels() + self.attention.param_count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub channels: usize,
    pub blocks: Vec<Block>,
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(Block::param_count).sum()
    }

    pub fn dual_scope(&self) -> &DualScopeConfig {
        &self.config.dual_scope
    }
}

/// Draws every block's weights from seeded streams, scaled by `1/sqrt(C)`.
/// Identical on every worker for the same config.
pub fn build_model(cfg: &ModelConfig, channels: usize) -> Model {
    let c = channels;
    let scale = 1.0 / (c as f32).sqrt();
    let blocks = (0..cfg.blocks as u64)
        .map(|b| {
            let stub_seed = derive_seed(cfg.weight_seed, b, 0);
            let conv = ConvKernel::from_seed(cfg.conv_taps, c, derive_seed(cfg.weight_seed, b, 1), scale)
                .expect("conv taps validated by ModelConfig");
            let mut rng = SeededRng::new(derive_seed(cfg.weight_seed, b, 2));
            let gamma = (0..c).map(|_| 1.0 + scale * rng.next_f32()).collect();
            let beta = (0..c).map(|_| scale * rng.next_f32()).collect();
            let norm = GroupNormParams::new(cfg.norm_groups, gamma, beta, GroupNormParams::DEFAULT_EPSILON)
                .expect("groups validated by ModelConfig");
            Block {
                stub_seed,
                stub: SpatialStub::from_seed(stub_seed, c),
                conv,
                norm,
                attention: AttentionParams::from_seed(c, derive_seed(cfg.weight_seed, b, 3), scale),
            }
        })
        .collect();
    Model {
        config: cfg.clone(),
        channels,
        blocks,
    }
}
