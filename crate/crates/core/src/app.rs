//! The `vinf` command line: `run`, `verify`, `bench`, `validate-schedule`,
//! plus the hidden `worker` entry point spawned for TCP runs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig, TransportKind};
use crate::metrics::{write_records, LayerKind, MetricsRecord, MetricsReport, WorkerMetrics};
use crate::parallel::{partition, ClipPlan};
use crate::pipeline::{
    build_model, predicted_total_bytes, run_inproc, worker_run, Mode, Model, PipelineError, SyncMode,
};
use crate::tensor::{
    concat_frames, count_mismatches, max_abs_diff, meter, read_dump, tensor_from_seed, write_dump, LatentTensor,
};
use crate::transport::tcp::{Link, Rendezvous, TcpEndpoint};
use crate::transport::{
    pack_bytes, unpack_bytes, validate_schedule, Comm, Envelope, MsgType, Schedule, TransportError, Verdict,
    COORDINATOR,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_MISMATCH: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;

const DEFAULT_LISTEN: &str = "127.0.0.1:0";
const TAG_CLIP: u64 = 2;
const TAG_RESULT: u64 = 3;
const TAG_METRICS: u64 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "vinf",
    version,
    about = "Clip-parallel evaluation of temporal denoiser layers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the denoising loop and write the final latent.
    Run(RunArgs),
    /// Compare two tensor dumps.
    Verify(VerifyArgs),
    /// Sweep worker counts and report per-module synchronization cost.
    Bench(BenchArgs),
    /// Simulate the exchange schedule under blocking rendezvous.
    ValidateSchedule(ScheduleArgs),
    /// TCP worker process; started by `run --transport tcp`.
    #[command(hide = true)]
    Worker(WorkerArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_parser = ["inproc", "tcp"])]
    pub transport: Option<String>,
    /// Coordinator address for TCP runs.
    #[arg(long, env = "VINF_LISTEN")]
    pub listen: Option<String>,
    /// Tensor dump of the final latent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Line-delimited JSON metrics.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Check every transfer against the one-peer-at-a-time rule.
    #[arg(long)]
    pub validating: bool,
}

impl ConfigArgs {
    /// File values first, then `--set`, then the dedicated flags.
    pub fn load(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            cfg.apply_override(kv)?;
        }
        if let Some(n) = self.workers {
            cfg.workers = n;
        }
        if let Some(t) = &self.transport {
            cfg.set("transport", t)?;
        }
        if let Some(l) = &self.listen {
            cfg.listen = Some(l.clone());
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(m) = &self.metrics {
            cfg.metrics = Some(m.clone());
        }
        cfg.validating |= self.validating;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f32,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Worker counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub sweep: Vec<usize>,
    /// Skip the per-module isolation runs.
    #[arg(long)]
    pub no_isolation: bool,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Check a single worker count instead of 1..=max.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub max_workers: usize,
    /// Use the ordering where both partners receive first.
    #[arg(long)]
    pub literal: bool,
}

#[derive(Debug, Args)]
pub struct WorkerArgs {
    #[arg(long)]
    pub connect: String,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    ExitCode::from(dispatch(Cli::parse()))
}

pub fn dispatch(cli: Cli) -> u8 {
    match cli.command {
        Cmd::Run(a) => cmd_run(&a.cfg),
        Cmd::Verify(a) => cmd_verify(&a.a, &a.b, a.tolerance),
        Cmd::Bench(a) => cmd_bench(&a.cfg, &a.sweep, !a.no_isolation),
        Cmd::ValidateSchedule(a) => cmd_validate_schedule(&a),
        Cmd::Worker(a) => cmd_worker(&a),
    }
}

#[derive(Debug, thiserror::Error)]
enum AppError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Pipeline(#[from] PipelineError),
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Worker(String),
    #[error("{0}")]
    Check(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => EXIT_CONFIG,
            AppError::Pipeline(PipelineError::Config(_)) => EXIT_CONFIG,
            AppError::Pipeline(_) | AppError::Transport(_) => EXIT_TRANSPORT,
            AppError::Io(_) => EXIT_CONFIG,
            AppError::Worker(_) => EXIT_TRANSPORT,
            AppError::Check(_) => EXIT_MISMATCH,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AppError {
    AppError::Io(format!("{}: {e}", path.display()))
}

fn report_failure(e: AppError) -> u8 {
    eprintln!("error: {e}");
    e.exit_code()
}

/// Output and metrics of one configured run.
pub struct RunResult {
    pub output: LatentTensor,
    pub report: MetricsReport,
    pub exclusivity_violations: usize,
}

fn mode_of(cfg: &RunConfig) -> Mode {
    Mode::Denoise(cfg.denoise)
}

/// Runs `cfg` over its configured transport.
fn execute(cfg: &RunConfig) -> Result<RunResult, AppError> {
    let plan = cfg.validate()?;
    let model = build_model(&cfg.model, cfg.dims.channels);
    let x = tensor_from_seed(cfg.dims, cfg.seed).map_err(PipelineError::from)?;
    match cfg.transport {
        TransportKind::Inproc => {
            let out = run_inproc(&model, mode_of(cfg), cfg.sync, &x, cfg.workers, cfg.validating)?;
            Ok(RunResult {
                output: out.output,
                report: out.report,
                exclusivity_violations: out.exclusivity_violations,
            })
        }
        TransportKind::Tcp => run_tcp(cfg, &plan, &x),
    }
}

fn write_outputs(cfg: &RunConfig, res: &RunResult, extra: &[MetricsRecord]) -> Result<(), AppError> {
    if let Some(p) = &cfg.out {
        write_dump(&res.output, p).map_err(|e| io_err(p, e))?;
    }
    if let Some(p) = &cfg.metrics {
        let mut records = res.report.records();
        records.extend_from_slice(extra);
        let f = File::create(p).map_err(|e| io_err(p, e))?;
        write_records(BufWriter::new(f), &records).map_err(|e| io_err(p, e))?;
    }
    Ok(())
}

pub fn cmd_run(args: &ConfigArgs) -> u8 {
    let run = || -> Result<(), AppError> {
        let cfg = args.load()?;
        let res = execute(&cfg)?;
        let record = MetricsRecord::Run {
            workers: cfg.workers,
            transport: cfg.transport.to_string(),
            wall_nanos: res.report.wall_nanos,
            digest: format!("{:016x}", cfg.digest()),
        };
        write_outputs(&cfg, &res, &[record])?;
        if res.exclusivity_violations > 0 {
            return Err(TransportError::Exclusivity(format!(
                "{} overlapping transfers recorded",
                res.exclusivity_violations
            ))
            .into());
        }
        println!(
            "workers={} transport={} frames={} steps={} wall_ms={:.1} sync_bytes={} checksum={:.9e}",
            cfg.workers,
            cfg.transport,
            cfg.dims.frames,
            cfg.denoise.steps,
            res.report.wall_nanos as f64 / 1e6,
            res.report.total_bytes(),
            res.output.checksum()
        );
        Ok(())
    };
    match run() {
        Ok(()) => EXIT_OK,
        Err(e) => report_failure(e),
    }
}

pub fn cmd_verify(a: &Path, b: &Path, tolerance: f32) -> u8 {
    let load = |p: &Path| read_dump(p).map_err(|e| io_err(p, e));
    let (ta, tb) = match (load(a), load(b)) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return report_failure(e),
    };
    if ta.dims() != tb.dims() {
        eprintln!("error: shape mismatch: {} vs {}", ta.dims(), tb.dims());
        return EXIT_CONFIG;
    }
    let diff = max_abs_diff(&ta, &tb).expect("shapes checked");
    let mismatches = count_mismatches(&ta, &tb, tolerance).expect("shapes checked");
    let ok = diff <= tolerance;
    println!(
        "max_abs_diff={diff:e} mismatches={mismatches} elements={} tolerance={tolerance:e} {}",
        ta.len(),
        if ok { "OK" } else { "FAIL" }
    );
    if ok {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    }
}

fn describe(v: &Verdict) -> String {
    match v {
        Verdict::Completed { steps, transfers } => format!("completed steps={steps} transfers={transfers}"),
        Verdict::Deadlock { cycle } => {
            let mut s: Vec<String> = cycle.iter().map(usize::to_string).collect();
            if let Some(first) = cycle.first() {
                s.push(first.to_string());
            }
            format!("deadlock wait-for cycle {}", s.join(" -> "))
        }
        Verdict::Unmatched { worker, peer } => format!("unmatched: worker {worker} waits on {peer} forever"),
        Verdict::Mismatch { worker, peer } => format!("mismatch: worker {worker} and {peer} disagree on the message"),
        Verdict::Exclusivity { log } => format!("exclusivity violated: {}", log.join("; ")),
    }
}

pub fn cmd_validate_schedule(a: &ScheduleArgs) -> u8 {
    let counts: Vec<usize> = match a.workers {
        Some(n) => vec![n],
        None => (1..=a.max_workers).collect(),
    };
    if counts.contains(&0) {
        eprintln!("error: worker count must be >= 1");
        return EXIT_CONFIG;
    }
    let mut all_ok = true;
    for n in counts {
        let schedule = if a.literal {
            Schedule::literal_pseudocode(n)
        } else {
            Schedule::shipped(n)
        };
        let verdict = validate_schedule(n, &schedule);
        all_ok &= verdict.is_completed();
        println!("N={n} {}", describe(&verdict));
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_MISMATCH
    }
}

struct BenchRow {
    workers: usize,
    label: &'static str,
    sync: SyncMode,
    wall_nanos: u64,
    bytes: u64,
    predicted: u64,
    diff: f32,
}

fn time_inproc(
    model: &Model,
    cfg: &RunConfig,
    x: &LatentTensor,
    n: usize,
    sync: SyncMode,
) -> Result<(LatentTensor, MetricsReport), AppError> {
    let start = Instant::now();
    let out = run_inproc(model, mode_of(cfg), sync, x, n, cfg.validating)?;
    let mut report = out.report;
    report.wall_nanos = start.elapsed().as_nanos() as u64;
    Ok((out.output, report))
}

/// Sweeps worker counts. For every `N > 1` the isolation rows run with no
/// synchronization, then with exactly one module synchronized, then fully
/// synchronized; a module's overhead is its row's time over the unsynchronized
/// one. Rows whose output drifts from the single-worker baseline are flagged.
pub fn cmd_bench(args: &ConfigArgs, sweep: &[usize], isolation: bool) -> u8 {
    let run = || -> Result<(), AppError> {
        let base = args.load()?;
        for &n in sweep {
            let mut c = base.clone();
            c.workers = n;
            c.validate()?;
        }
        let model = build_model(&base.model, base.dims.channels);
        let x = tensor_from_seed(base.dims, base.seed).map_err(PipelineError::from)?;
        let evaluations = base.denoise.steps;
        let (baseline, base_report) = time_inproc(&model, &base, &x, 1, SyncMode::FULL)?;
        let base_wall = base_report.wall_nanos.max(1);

        let mut rows = vec![];
        for &n in sweep {
            let plan = ClipPlan::new(base.dims.frames, n).expect("validated");
            let variants: Vec<(&'static str, SyncMode)> = if n > 1 && isolation {
                vec![
                    ("plain", SyncMode::NONE),
                    ("+conv", SyncMode::NONE.with(LayerKind::Conv)),
                    ("+group_norm", SyncMode::NONE.with(LayerKind::GroupNorm)),
                    ("+attention", SyncMode::NONE.with(LayerKind::Attention)),
                    ("full", SyncMode::FULL),
                ]
            } else {
                vec![("full", SyncMode::FULL)]
            };
            for (label, sync) in variants {
                let (out, report) = if n == 1 {
                    (baseline.clone(), base_report.clone())
                } else {
                    time_inproc(&model, &base, &x, n, sync)?
                };
                rows.push(BenchRow {
                    workers: n,
                    label,
                    sync,
                    wall_nanos: report.wall_nanos,
                    bytes: report.total_bytes(),
                    predicted: predicted_total_bytes(&model, base.dims, &plan, sync, evaluations),
                    diff: max_abs_diff(&out, &baseline).map_err(PipelineError::from)?,
                });
            }
        }

        println!(
            "{:>3} {:<12} {:>11} {:>9} {:>8} {:>12} {:>12} {:>11}  note",
            "N", "sync", "wall_ms", "overhead", "speedup", "bytes", "predicted", "diff_vs_N1"
        );
        let mut records = vec![];
        let tolerance = 1e-5 * evaluations as f32;
        for r in &rows {
            let plain = rows
                .iter()
                .find(|p| p.workers == r.workers && p.label == "plain")
                .map_or(r.wall_nanos, |p| p.wall_nanos)
                .max(1);
            let overhead = 100.0 * (r.wall_nanos as f64 - plain as f64) / plain as f64;
            let speedup = base_wall as f64 / r.wall_nanos.max(1) as f64;
            let mut notes = vec![];
            if r.bytes != r.predicted {
                notes.push("TRAFFIC-MISMATCH");
            }
            if r.diff > tolerance {
                notes.push(if r.sync == SyncMode::FULL {
                    "DIVERGED"
                } else {
                    "diverges"
                });
            }
            println!(
                "{:>3} {:<12} {:>11.1} {:>8.1}% {:>7.2}x {:>12} {:>12} {:>11.3e}  {}",
                r.workers,
                r.label,
                r.wall_nanos as f64 / 1e6,
                overhead,
                speedup,
                r.bytes,
                r.predicted,
                r.diff,
                notes.join(" ")
            );
            records.push(MetricsRecord::Bench {
                workers: r.workers,
                sync: r.label.to_string(),
                wall_nanos: r.wall_nanos,
                overhead_pct: overhead,
                speedup,
                bytes: r.bytes,
                predicted_bytes: r.predicted,
                max_abs_diff_vs_oracle: r.diff,
            });
        }
        if let Some(p) = &base.metrics {
            let f = File::create(p).map_err(|e| io_err(p, e))?;
            write_records(BufWriter::new(f), &records).map_err(|e| io_err(p, e))?;
        }
        let broken = rows
            .iter()
            .any(|r| r.bytes != r.predicted || (r.sync == SyncMode::FULL && r.diff > tolerance));
        if broken {
            return Err(AppError::Check(
                "fully synchronized run diverged or traffic off prediction".into(),
            ));
        }
        Ok(())
    };
    match run() {
        Ok(()) => EXIT_OK,
        Err(e) => report_failure(e),
    }
}

/// `--set` arguments reproducing `cfg` exactly, so spawned workers derive
/// the same digest.
fn forwarded_settings(cfg: &RunConfig) -> Vec<String> {
    cfg.canonical_text()
        .lines()
        .flat_map(|l| ["--set".to_string(), l.to_string()])
        .collect()
}

struct Children(Vec<Child>);

impl Drop for Children {
    fn drop(&mut self) {
        for c in &mut self.0 {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

fn run_tcp(cfg: &RunConfig, plan: &ClipPlan, x: &LatentTensor) -> Result<RunResult, AppError> {
    let listen = cfg.listen.clone().unwrap_or_else(|| DEFAULT_LISTEN.into());
    let rendezvous = Rendezvous::bind(listen.as_str())?;
    let addr = rendezvous.local_addr()?;
    let exe = std::env::current_exe().map_err(|e| AppError::Io(format!("current executable: {e}")))?;
    let digest = cfg.digest();
    let mut children = Children(Vec::with_capacity(cfg.workers));
    for _ in 0..cfg.workers {
        let child = Command::new(&exe)
            .arg("worker")
            .arg("--connect")
            .arg(addr.to_string())
            .args(forwarded_settings(cfg))
            .env_remove("VINF_LISTEN")
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| AppError::Worker(format!("spawning worker: {e}")))?;
        children.0.push(child);
    }
    let start = Instant::now();
    let mut links = rendezvous.accept_workers(cfg.workers, digest)?;
    let (clips, _) = partition(x, cfg.workers).map_err(PipelineError::from)?;
    for (rank, (link, clip)) in links.iter_mut().zip(&clips).enumerate() {
        link.send(&Envelope::new(
            MsgType::Control,
            TAG_CLIP,
            COORDINATOR,
            rank as u32,
            clip.as_slice().to_vec(),
        ))?;
    }
    let mut parts = Vec::with_capacity(cfg.workers);
    let mut report = MetricsReport::default();
    for (rank, link) in links.iter_mut().enumerate() {
        let collect = |link: &mut Link| -> Result<(LatentTensor, WorkerMetrics), AppError> {
            let data = link.recv_control(TAG_RESULT)?;
            let part =
                LatentTensor::from_vec(cfg.dims.with_frames(plan.clip_frames()), data).map_err(PipelineError::from)?;
            let json = unpack_bytes(&link.recv_control(TAG_METRICS)?)?;
            let metrics =
                serde_json::from_slice(&json).map_err(|e| TransportError::Wire(format!("worker metrics: {e}")))?;
            Ok((part, metrics))
        };
        let (part, metrics) = collect(link).map_err(|e| match e {
            AppError::Transport(t) => AppError::Transport(TransportError::InStage {
                worker: rank,
                stage: crate::transport::Stage::Control,
                round: 0,
                source: Box::new(t),
            }),
            other => other,
        })?;
        parts.push(part);
        report.workers.push(metrics);
    }
    report.wall_nanos = start.elapsed().as_nanos() as u64;
    for (rank, c) in children.0.iter_mut().enumerate() {
        let status = c.wait().map_err(|e| AppError::Io(format!("worker {rank}: {e}")))?;
        if !status.success() {
            return Err(AppError::Worker(format!("worker {rank} exited with {status}")));
        }
    }
    children.0.clear();
    Ok(RunResult {
        output: concat_frames(&parts).map_err(PipelineError::from)?,
        report,
        exclusivity_violations: 0,
    })
}

/// One TCP worker: join, receive the clip, run, return clip and metrics.
pub fn cmd_worker(a: &WorkerArgs) -> u8 {
    let run = || -> Result<(), AppError> {
        let cfg = a.cfg.load()?;
        let plan = cfg.validate()?;
        let model = build_model(&cfg.model, cfg.dims.channels);
        let (mut link, endpoint) = TcpEndpoint::join(a.connect.as_str(), cfg.digest())?;
        let mut comm = Comm::new(Box::new(endpoint));
        let rank = comm.rank();
        meter::reset();
        let data = link.recv_control(TAG_CLIP)?;
        let clip =
            LatentTensor::from_vec(cfg.dims.with_frames(plan.clip_frames()), data).map_err(PipelineError::from)?;
        let out = worker_run(&mut comm, &plan, &model, cfg.sync, &clip, mode_of(&cfg))?;
        drop(clip);
        let mut metrics = comm.take_metrics();
        metrics.peak_live_elements = meter::peak();
        let up = |tag, payload| Envelope::new(MsgType::Control, tag, rank as u32, COORDINATOR, payload);
        link.send(&up(TAG_RESULT, out.as_slice().to_vec()))?;
        let json = serde_json::to_vec(&metrics).expect("metrics serialize");
        link.send(&up(TAG_METRICS, pack_bytes(&json)))?;
        Ok(())
    };
    match run() {
        Ok(()) => EXIT_OK,
        Err(e) => report_failure(e),
    }
}
