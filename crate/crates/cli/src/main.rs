use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use transducer_core::bench::verify::{self, Scale};
use transducer_core::bench::{self, BenchConfig, Format, SweepAxis, SweepValue};
use transducer_core::engine::Mode;
use transducer_core::{Error, Precision};

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "transducer-bench",
    version,
    about = "Transducer loss benchmarks: batched vs sample-wise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time one configuration.
    Bench(BenchArgs),
    /// Time a series of batch sizes or input lengths.
    Sweep {
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma list: batch sizes, or `TxU` pairs / bare `T` for lengths.
        #[arg(long)]
        values: String,
    },
    /// Run the correctness battery.
    Verify {
        #[arg(long, value_enum, default_value_t = ScaleArg::Small)]
        scale: ScaleArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Batched,
    SampleWise,
    SampleWisePr,
    SampleWisePrDp,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Batched => Mode::Batched,
            ModeArg::SampleWise => Mode::SampleWise,
            ModeArg::SampleWisePr => Mode::SampleWisePr,
            ModeArg::SampleWisePrDp => Mode::SampleWisePrDp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    BatchSize,
    Lengths,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Small,
    Medium,
}

#[derive(Args)]
struct BenchArgs {
    /// Dimension defaults; `paper` always prints analytic sizes first.
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Batched)]
    mode: ModeArg,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    u: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    ha: Option<usize>,
    #[arg(long)]
    hl: Option<usize>,
    #[arg(long)]
    v: Option<usize>,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F32)]
    precision: PrecisionArg,
    /// Memory budget for dynamic parallelism, in bytes.
    #[arg(long)]
    mem_budget: Option<u64>,
    /// Simulated device capacity in bytes; larger allocations report `oom`.
    #[arg(long)]
    alloc_ceiling: Option<u64>,
    /// Threads for dynamic parallelism (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Report destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print analytic tensor sizes and exit without running.
    #[arg(long)]
    dry_run: bool,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        let base = match self.preset {
            PresetArg::Desk => BenchConfig::desk(),
            PresetArg::Paper => BenchConfig::paper(),
        };
        BenchConfig {
            mode: self.mode.into(),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            frames: self.t.unwrap_or(base.frames),
            labels: self.u.unwrap_or(base.labels),
            hidden: self.h.unwrap_or(base.hidden),
            acoustic: self.ha.unwrap_or(base.acoustic),
            label_dim: self.hl.unwrap_or(base.label_dim),
            vocab: self.v.unwrap_or(base.vocab),
            precision: match self.precision {
                PrecisionArg::F32 => Precision::F32,
                PrecisionArg::F64 => Precision::F64,
            },
            seed: self.seed,
            warmup_steps: self.warmup,
            bench_steps: self.steps,
            mem_budget_bytes: self.mem_budget.unwrap_or(base.mem_budget_bytes),
            allocation_ceiling_bytes: self.alloc_ceiling,
            worker_count: self.workers.unwrap_or(base.worker_count),
            output_format: match self.format {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            },
        }
    }

    /// Prints analytic sizes when asked to or when running the paper preset.
    /// Returns true when the run should stop there.
    fn preflight(&self, configs: &[BenchConfig]) -> bool {
        if self.dry_run || self.preset == PresetArg::Paper {
            for cfg in configs {
                eprintln!(
                    "{} B={} T={} U={} H={} H_A={} H_L={} V={} {}",
                    cfg.mode,
                    cfg.batch_size,
                    cfg.frames,
                    cfg.labels,
                    cfg.hidden,
                    cfg.acoustic,
                    cfg.label_dim,
                    cfg.vocab,
                    cfg.precision
                );
                eprintln!("{}", cfg.footprint());
            }
        }
        self.dry_run
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidShape(_) | Error::InvalidInput(_) | Error::InstanceTooLarge { .. } => {
            EXIT_USAGE
        }
        Error::NumericDegeneracy(_) => EXIT_NUMERIC,
        Error::Io(_) | Error::Report(_) => EXIT_IO,
        Error::OutOfMemory { .. } => EXIT_VERIFY,
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Bench(args) => {
            let cfg = args.config();
            cfg.validate()?;
            if args.preflight(std::slice::from_ref(&cfg)) {
                return Ok(ExitCode::SUCCESS);
            }
            let result = bench::run_benchmark(&cfg)?;
            bench::write_report(&[result], cfg.output_format, args.out.as_deref())?;
        }
        Command::Sweep {
            bench: args,
            axis,
            values,
        } => {
            let base = args.config();
            base.validate()?;
            let axis = match axis {
                AxisArg::BatchSize => SweepAxis::BatchSize,
                AxisArg::Lengths => SweepAxis::Lengths,
            };
            let points = SweepValue::parse_list(axis, &values, &base)?;
            let configs: Vec<_> = points.iter().map(|p| p.apply(&base)).collect();
            if args.preflight(&configs) {
                return Ok(ExitCode::SUCCESS);
            }
            let results = bench::sweep(&base, &points)?;
            bench::write_report(&results, base.output_format, args.out.as_deref())?;
        }
        Command::Verify { scale } => {
            let scale = match scale {
                ScaleArg::Small => Scale::Small,
                ScaleArg::Medium => Scale::Medium,
            };
            let report = verify::verify(scale);
            print!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(EXIT_VERIFY));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
