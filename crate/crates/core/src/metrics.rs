//! Run counters and the line-delimited metrics report.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::transport::Stage;

/// Temporal layer kinds that synchronize context. `Control` covers setup
/// and result traffic that is not part of any layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    GroupNorm,
    Attention,
    Control,
}

impl LayerKind {
    pub const TEMPORAL: [LayerKind; 3] = [LayerKind::Conv, LayerKind::GroupNorm, LayerKind::Attention];

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::GroupNorm => "group_norm",
            LayerKind::Attention => "attention",
            LayerKind::Control => "control",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct TrafficCount {
    /// Sum of `payload_len` over sent envelopes.
    pub bytes_sent: u64,
    pub messages_sent: u64,
    /// Context-synchronization calls (one per layer evaluation).
    pub sync_calls: u64,
}

/// Counters collected by one worker over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, serde::Deserialize)]
pub struct WorkerMetrics {
    pub rank: usize,
    pub traffic: BTreeMap<LayerKind, TrafficCount>,
    /// Wall time spent inside T1/T2/T3 transfers, nanoseconds.
    pub stage_nanos: BTreeMap<String, u64>,
    pub peak_live_elements: u64,
    /// Largest key/value list of any attention query.
    pub max_tokens_per_query: u64,
    /// Score entries per spatial position, largest over attention calls.
    pub score_entries_per_position: u64,
    /// Attention evaluations run with the global-set bias active.
    pub global_bias_layers: u64,
    pub attention_layers: u64,
}

impl WorkerMetrics {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            ..Default::default()
        }
    }

    pub fn traffic_mut(&mut self, kind: LayerKind) -> &mut TrafficCount {
        self.traffic.entry(kind).or_default()
    }

    pub fn traffic(&self, kind: LayerKind) -> TrafficCount {
        self.traffic.get(&kind).copied().unwrap_or_default()
    }

    pub fn add_stage_time(&mut self, stage: Stage, nanos: u64) {
        *self.stage_nanos.entry(stage.to_string()).or_default() += nanos;
    }

    pub fn total_bytes(&self) -> u64 {
        self.traffic
            .iter()
            .filter(|(k, _)| **k != LayerKind::Control)
            .map(|(_, t)| t.bytes_sent)
            .sum()
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum MetricsRecord {
    Traffic {
        worker: usize,
        layer_kind: LayerKind,
        bytes: u64,
        messages: u64,
        calls: u64,
    },
    StageTime {
        worker: usize,
        stage: String,
        nanos: u64,
    },
    Memory {
        worker: usize,
        peak_live_elements: u64,
    },
    Attention {
        worker: usize,
        max_tokens_per_query: u64,
        score_entries_per_position: u64,
        global_bias_layers: u64,
        attention_layers: u64,
    },
    Run {
        workers: usize,
        transport: String,
        wall_nanos: u64,
        digest: String,
    },
    Bench {
        workers: usize,
        sync: String,
        wall_nanos: u64,
        overhead_pct: f64,
        speedup: f64,
        bytes: u64,
        predicted_bytes: u64,
        max_abs_diff_vs_oracle: f32,
    },
}

/// Merged per-worker metrics plus run-level timing.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub workers: Vec<WorkerMetrics>,
    pub wall_nanos: u64,
}

impl MetricsReport {
    pub fn records(&self) -> Vec<MetricsRecord> {
        let mut out = Vec::new();
        for w in &self.workers {
            for (kind, t) in &w.traffic {
                out.push(MetricsRecord::Traffic {
                    worker: w.rank,
                    layer_kind: *kind,
                    bytes: t.bytes_sent,
                    messages: t.messages_sent,
                    calls: t.sync_calls,
                });
            }
            for (stage, nanos) in &w.stage_nanos {
                out.push(MetricsRecord::StageTime {
                    worker: w.rank,
                    stage: stage.clone(),
                    nanos: *nanos,
                });
            }
            out.push(MetricsRecord::Memory {
                worker: w.rank,
                peak_live_elements: w.peak_live_elements,
            });
            out.push(MetricsRecord::Attention {
                worker: w.rank,
                max_tokens_per_query: w.max_tokens_per_query,
                score_entries_per_position: w.score_entries_per_position,
                global_bias_layers: w.global_bias_layers,
                attention_layers: w.attention_layers,
            });
        }
        out
    }

    pub fn bytes_for(&self, kind: LayerKind) -> u64 {
        self.workers.iter().map(|w| w.traffic(kind).bytes_sent).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.workers.iter().map(WorkerMetrics::total_bytes).sum()
    }

    pub fn max_peak_live(&self) -> u64 {
        self.workers.iter().map(|w| w.peak_live_elements).max().unwrap_or(0)
    }
}

/// Writes records as JSON lines, one per record, flushing after each.
pub fn write_records<W: Write>(mut w: W, records: &[MetricsRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}
