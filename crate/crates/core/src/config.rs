//! Flat `key = value` run configuration with a canonical sorted rendering.
//!
//! ```text
//! # comments and blank lines are ignored
//! frames = 64
//! workers = 4
//! transport = inproc
//! ```
//!
//! Keys: `frames height width channels workers blocks conv_taps norm_groups
//! n_local n_global bias t_star weight_seed steps seed transport listen out
//! metrics validating sync_off`. `sync_off` is a comma list drawn from
//! `conv,group_norm,attention` naming layers whose context exchange is
//! replaced by zero-filled contexts.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::metrics::LayerKind;
use crate::ops::DualScopeConfig;
use crate::parallel::ClipPlan;
use crate::pipeline::{DenoiseConfig, ModelConfig, SyncMode};
use crate::tensor::Dims;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Value { key: String, value: String },
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("{path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Inproc,
    Tcp,
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::Inproc => "inproc",
            TransportKind::Tcp => "tcp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dims: Dims,
    pub workers: usize,
    pub model: ModelConfig,
    pub denoise: DenoiseConfig,
    pub seed: u64,
    pub transport: TransportKind,
    pub listen: Option<String>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub validating: bool,
    pub sync: SyncMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dims: Dims::new(64, 2, 2, 4),
            workers: 1,
            model: ModelConfig::default(),
            denoise: DenoiseConfig::default(),
            seed: 0,
            transport: TransportKind::Inproc,
            listen: None,
            out: None,
            metrics: None,
            validating: false,
            sync: SyncMode::FULL,
        }
    }
}

const KEYS: &[&str] = &[
    "bias",
    "blocks",
    "channels",
    "conv_taps",
    "frames",
    "height",
    "listen",
    "metrics",
    "n_global",
    "n_local",
    "norm_groups",
    "out",
    "seed",
    "steps",
    "sync_off",
    "t_star",
    "transport",
    "validating",
    "weight_seed",
    "width",
    "workers",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Value {
        key: key.into(),
        value: value.into(),
    })
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.into(),
            msg: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            msg: format!("override `{kv}` is not key=value"),
        })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "frames" => self.dims.frames = parse(key, value)?,
            "height" => self.dims.height = parse(key, value)?,
            "width" => self.dims.width = parse(key, value)?,
            "channels" => self.dims.channels = parse(key, value)?,
            "workers" => self.workers = parse(key, value)?,
            "blocks" => self.model.blocks = parse(key, value)?,
            "conv_taps" => self.model.conv_taps = parse(key, value)?,
            "norm_groups" => self.model.norm_groups = parse(key, value)?,
            "n_local" => self.model.dual_scope.n_local = parse(key, value)?,
            "n_global" => self.model.dual_scope.n_global = parse(key, value)?,
            "bias" => self.model.dual_scope.bias = parse(key, value)?,
            "t_star" => self.model.dual_scope.t_star = parse(key, value)?,
            "weight_seed" => self.model.weight_seed = parse(key, value)?,
            "steps" => self.denoise.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "transport" => {
                self.transport = match value {
                    "inproc" => TransportKind::Inproc,
                    "tcp" => TransportKind::Tcp,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                        })
                    }
                }
            }
            "listen" => self.listen = (!value.is_empty()).then(|| value.to_string()),
            "out" => self.out = (!value.is_empty()).then(|| PathBuf::from(value)),
            "metrics" => self.metrics = (!value.is_empty()).then(|| PathBuf::from(value)),
            "validating" => self.validating = parse(key, value)?,
            "sync_off" => {
                let mut sync = SyncMode::FULL;
                for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let kind = match item {
                        "conv" => LayerKind::Conv,
                        "group_norm" => LayerKind::GroupNorm,
                        "attention" => LayerKind::Attention,
                        _ => {
                            return Err(ConfigError::Value {
                                key: key.into(),
                                value: value.into(),
                            })
                        }
                    };
                    sync = sync.without(kind);
                }
                self.sync = sync;
            }
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "frames" => self.dims.frames.to_string(),
            "height" => self.dims.height.to_string(),
            "width" => self.dims.width.to_string(),
            "channels" => self.dims.channels.to_string(),
            "workers" => self.workers.to_string(),
            "blocks" => self.model.blocks.to_string(),
            "conv_taps" => self.model.conv_taps.to_string(),
            "norm_groups" => self.model.norm_groups.to_string(),
            "n_local" => self.model.dual_scope.n_local.to_string(),
            "n_global" => self.model.dual_scope.n_global.to_string(),
            "bias" => self.model.dual_scope.bias.to_string(),
            "t_star" => self.model.dual_scope.t_star.to_string(),
            "weight_seed" => self.model.weight_seed.to_string(),
            "steps" => self.denoise.steps.to_string(),
            "seed" => self.seed.to_string(),
            "transport" => self.transport.to_string(),
            "listen" => self.listen.clone().unwrap_or_default(),
            "out" => opt_path(&self.out),
            "metrics" => opt_path(&self.metrics),
            "validating" => self.validating.to_string(),
            "sync_off" => self.sync.disabled_list(),
            _ => unreachable!("every key in KEYS is rendered"),
        }
    }

    /// Every key in sorted order, one `key=value` line each.
    pub fn canonical_text(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}\n", self.value_of(k))).collect()
    }

    /// Digest exchanged in the TCP handshake.
    pub fn digest(&self) -> u64 {
        fnv1a64(self.canonical_text().as_bytes())
    }

    /// Checks every cross-module constraint up front.
    pub fn validate(&self) -> Result<ClipPlan, ConfigError> {
        let d = self.dims;
        if d.frames == 0 || d.height == 0 || d.width == 0 || d.channels == 0 {
            return Err(ConfigError::Constraint(format!(
                "all tensor dims must be >= 1, got {d}"
            )));
        }
        if self.workers == 0 {
            return Err(ConfigError::Constraint("workers must be >= 1".into()));
        }
        if !d.frames.is_multiple_of(self.workers) {
            return Err(ConfigError::Constraint(format!(
                "workers N={} must divide frames F={} (F_clip = F / N)",
                self.workers, d.frames
            )));
        }
        self.denoise.validate()?;
        let plan = ClipPlan::new(d.frames, self.workers).map_err(|e| ConfigError::Constraint(e.to_string()))?;
        self.model.validate_for(d, &plan)?;
        if self.transport == TransportKind::Tcp && self.workers > 256 {
            return Err(ConfigError::Constraint(
                "tcp transport supports at most 256 workers".into(),
            ));
        }
        Ok(plan)
    }

    pub fn dual_scope(&self) -> DualScopeConfig {
        self.model.dual_scope
    }
}
