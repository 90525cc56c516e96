//! Benchmark protocol: synthesize a seeded padded batch once, run warmup and
//! timed steps of one engine, and record the median step time and the
//! tracker's peak bytes. Also hosts sweeps, reports and the verify battery.

mod report;
mod synth;
pub mod verify;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::compute::ModelDims;
use crate::engine::{self, footprint, EngineConfig, Mode, PiExtents};
use crate::error::{Error, Result};
use crate::tensor::{Element, MemoryTracker, Precision};

pub use report::{emit_report, parse_json_report, write_report, CSV_COLUMNS};
pub use synth::{
    ramp_length, ramp_lengths, synth_inputs, ACOUSTIC_RAMP_PER_MILLE, LABEL_RAMP_PER_MILLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidInput(format!("unknown format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub mode: Mode,
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(rename = "T")]
    pub frames: usize,
    #[serde(rename = "U")]
    pub labels: usize,
    #[serde(rename = "H")]
    pub hidden: usize,
    #[serde(rename = "H_A")]
    pub acoustic: usize,
    #[serde(rename = "H_L")]
    pub label_dim: usize,
    #[serde(rename = "V")]
    pub vocab: usize,
    pub precision: Precision,
    pub seed: u64,
    pub warmup_steps: usize,
    pub bench_steps: usize,
    pub mem_budget_bytes: u64,
    pub allocation_ceiling_bytes: Option<u64>,
    pub worker_count: usize,
    #[serde(default)]
    pub output_format: Format,
}

impl BenchConfig {
    /// Small enough for a laptop: B=8, T=64, U=16, H=H_A=H_L=128, V=256.
    pub fn desk() -> Self {
        Self {
            mode: Mode::Batched,
            batch_size: 8,
            frames: 64,
            labels: 16,
            hidden: 128,
            acoustic: 128,
            label_dim: 128,
            vocab: 256,
            precision: Precision::F32,
            seed: 0,
            warmup_steps: 3,
            bench_steps: 100,
            mem_budget_bytes: EngineConfig::DEFAULT_BUDGET,
            allocation_ceiling_bytes: None,
            worker_count: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            output_format: Format::Csv,
        }
    }

    /// Published setting: H=1024, V=4096 at the longest inputs,
    /// T=500, U=100, B=16. Needs tens of gigabytes in batched mode.
    pub fn paper() -> Self {
        Self {
            batch_size: 16,
            frames: 500,
            labels: 100,
            hidden: 1024,
            acoustic: 1024,
            label_dim: 1024,
            vocab: 4096,
            ..Self::desk()
        }
    }

    /// Minimal dimensions for tests.
    pub fn tiny() -> Self {
        Self {
            batch_size: 2,
            frames: 6,
            labels: 3,
            hidden: 4,
            acoustic: 3,
            label_dim: 3,
            vocab: 5,
            warmup_steps: 0,
            bench_steps: 1,
            worker_count: 1,
            ..Self::desk()
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            hidden: self.hidden,
            acoustic: self.acoustic,
            label: self.label_dim,
            vocab: self.vocab,
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            mode: self.mode,
            mem_budget_bytes: self.mem_budget_bytes,
            max_parallel: EngineConfig::DEFAULT_MAX_PARALLEL,
            worker_count: self.worker_count,
            pi_extents: PiExtents::LatticeRows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("B", self.batch_size),
            ("T", self.frames),
            ("U", self.labels),
            ("H", self.hidden),
            ("H_A", self.acoustic),
            ("H_L", self.label_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidInput(format!("{name} must be positive")));
        }
        if self.vocab < 2 {
            return Err(Error::InvalidInput(format!(
                "V must be at least 2 (blank plus one label), got {}",
                self.vocab
            )));
        }
        if self.bench_steps == 0 {
            return Err(Error::InvalidInput("bench_steps must be at least 1".into()));
        }
        self.engine_config().validate()
    }

    /// Analytic sizes of the main tensors, for dry runs.
    pub fn footprint(&self) -> Footprint {
        let dims = self.model_dims();
        let (t, u1, p) = (self.frames, self.labels + 1, self.precision);
        let lengths = ramp_lengths(self);
        let max_crop = lengths
            .iter()
            .map(|&(tb, ub)| (tb, ub + 1))
            .max()
            .unwrap_or((t, u1));
        Footprint {
            batched_4d_bytes: footprint::batched_4d_bytes(self.batch_size, t, u1, &dims, p),
            sample_4d_bytes: footprint::sample_4d_bytes(t, u1, &dims, p),
            sample_3d_bytes: footprint::sample_3d_bytes(t, u1, &dims, p),
            sample_working_set_bytes: footprint::sample_working_set_bytes(t, u1, &dims, p),
            param_bytes: footprint::param_bytes(&dims, p),
            parallel_iterations: engine::compute_parallel_iterations(
                max_crop.0,
                max_crop.1,
                self.vocab,
                self.mem_budget_bytes,
            )
            .min(EngineConfig::DEFAULT_MAX_PARALLEL),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    pub batched_4d_bytes: u64,
    pub sample_4d_bytes: u64,
    pub sample_3d_bytes: u64,
    pub sample_working_set_bytes: u64,
    pub param_bytes: u64,
    pub parallel_iterations: usize,
}

impl fmt::Display for Footprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "batched z+h+dh:            {:>16} bytes",
            self.batched_4d_bytes
        )?;
        writeln!(
            f,
            "per-sample z+h+dh:         {:>16} bytes",
            self.sample_4d_bytes
        )?;
        writeln!(
            f,
            "per-sample 3D tensors:     {:>16} bytes",
            self.sample_3d_bytes
        )?;
        writeln!(
            f,
            "per-sample working set:    {:>16} bytes",
            self.sample_working_set_bytes
        )?;
        writeln!(
            f,
            "parameters:                {:>16} bytes",
            self.param_bytes
        )?;
        write!(
            f,
            "parallel iterations (DP):  {:>16}",
            self.parallel_iterations
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Oom,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::Oom => "oom",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    #[serde(flatten)]
    pub config: BenchConfig,
    /// `None` when no step completed.
    pub median_step_seconds: Option<f64>,
    pub per_step_seconds: Vec<f64>,
    /// Largest tracker peak over recorded steps, or the peak reached when an
    /// allocation was refused.
    pub peak_bytes: u64,
    pub live_bytes_after: u64,
    pub status: Status,
    /// Size of the refused allocation on `oom`.
    pub failed_alloc_bytes: Option<u64>,
    /// Batch loss of the last completed step, widened to `f64`.
    pub loss_checksum: Option<f64>,
    pub parallel_iterations: usize,
}

/// True median; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => run_typed::<f32>(cfg),
        Precision::F64 => run_typed::<f64>(cfg),
    }
}

fn run_typed<E: Element>(cfg: &BenchConfig) -> Result<BenchResult> {
    let tracker = MemoryTracker::new();
    let (batch, jp, op) = synth_inputs::<E>(cfg, &tracker)?;
    tracker.set_ceiling(cfg.allocation_ceiling_bytes);
    let engine_cfg = cfg.engine_config();

    let mut result = BenchResult {
        config: cfg.clone(),
        median_step_seconds: None,
        per_step_seconds: Vec::with_capacity(cfg.bench_steps),
        peak_bytes: 0,
        live_bytes_after: 0,
        status: Status::Ok,
        failed_alloc_bytes: None,
        loss_checksum: None,
        parallel_iterations: 1,
    };

    for step in 0..cfg.warmup_steps + cfg.bench_steps {
        let recorded = step >= cfg.warmup_steps;
        tracker.reset_peak();
        let start = Instant::now();
        let outcome = engine::run(&batch, &jp, &op, &engine_cfg);
        let elapsed = start.elapsed().as_secs_f64();
        match outcome {
            Ok(out) => {
                if recorded {
                    result.per_step_seconds.push(elapsed);
                    result.peak_bytes = result.peak_bytes.max(tracker.peak_bytes());
                }
                result.loss_checksum = Some(out.loss.widen());
                result.parallel_iterations = out.parallel_iterations;
            }
            Err(Error::OutOfMemory { requested, .. }) => {
                result.status = Status::Oom;
                result.failed_alloc_bytes = Some(requested);
                result.peak_bytes = result.peak_bytes.max(tracker.peak_bytes());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    result.median_step_seconds = median(&result.per_step_seconds);
    result.live_bytes_after = tracker.live_bytes();
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    BatchSize,
    Lengths,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch-size" | "batch_size" => Ok(SweepAxis::BatchSize),
            "lengths" => Ok(SweepAxis::Lengths),
            other => Err(Error::InvalidInput(format!("unknown sweep axis `{other}`"))),
        }
    }
}

/// One point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepValue {
    BatchSize(usize),
    Lengths { frames: usize, labels: usize },
}

impl SweepValue {
    /// Parses a comma list. Batch sizes are integers; lengths are `TxU`
    /// pairs, or a bare `T` with `U` scaled by the base ratio `U/T`.
    pub fn parse_list(axis: SweepAxis, list: &str, base: &BenchConfig) -> Result<Vec<SweepValue>> {
        let bad = |item: &str| Error::InvalidInput(format!("bad sweep value `{item}`"));
        let parse = |s: &str| s.trim().parse::<usize>().ok().filter(|&v| v > 0);
        list.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|item| match axis {
                SweepAxis::BatchSize => parse(item)
                    .map(SweepValue::BatchSize)
                    .ok_or_else(|| bad(item)),
                SweepAxis::Lengths => {
                    let (frames, labels) = match item.split_once(['x', 'X']) {
                        Some((t, u)) => (parse(t), parse(u)),
                        None => {
                            let t = parse(item);
                            let u = t.map(|t| {
                                let num = t as u128 * base.labels as u128;
                                let den = base.frames as u128;
                                (((2 * num + den) / (2 * den)) as usize).max(1)
                            });
                            (t, u)
                        }
                    };
                    match (frames, labels) {
                        (Some(frames), Some(labels)) => Ok(SweepValue::Lengths { frames, labels }),
                        _ => Err(bad(item)),
                    }
                }
            })
            .collect()
    }

    fn key(self) -> usize {
        match self {
            SweepValue::BatchSize(b) => b,
            SweepValue::Lengths { frames, labels } => frames * labels,
        }
    }

    pub fn apply(self, base: &BenchConfig) -> BenchConfig {
        let mut cfg = base.clone();
        match self {
            SweepValue::BatchSize(b) => cfg.batch_size = b,
            SweepValue::Lengths { frames, labels } => {
                cfg.frames = frames;
                cfg.labels = labels;
            }
        }
        cfg
    }
}

/// Runs one benchmark per point. An `oom` point is recorded and the sweep
/// continues; any other error aborts it.
pub fn sweep(base: &BenchConfig, values: &[SweepValue]) -> Result<Vec<BenchResult>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one value".into()));
    }
    if values.windows(2).any(|w| w[0].key() > w[1].key()) {
        return Err(Error::InvalidInput(format!(
            "sweep values must be ascending: {values:?}"
        )));
    }
    values
        .iter()
        .map(|v| run_benchmark(&v.apply(base)))
        .collect()
}
