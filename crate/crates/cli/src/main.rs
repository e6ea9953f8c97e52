//! Command-line surface of the compression workbench.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, malformed inputs,
//! spec violations), 2 runtime failure (training divergence, numeric or IO
//! failure mid-run).

mod commands;

pub(crate) use lwtf_cli::{bench, checkpoint, config, crc32, dataset_io, fmtnum, runlog};

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "lwtf", version, about = "talking-face generator compression workbench")]
pub struct Cli {
    /// Worker threads for the kernels (defaults to the physical cores;
    /// 1 guarantees the serial determinism contracts).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
pub struct SpecArgs {
    /// Canonical spec name (wav2lip_full, wav2lip_toy) or a spec file path.
    #[arg(long)]
    pub spec: String,
    /// Channel multiplier applied to every interior width.
    #[arg(long, default_value_t = 1.0)]
    pub mult: f64,
    /// Remove all residual blocks.
    #[arg(long)]
    pub no_residual: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a generator with fresh seeded weights and save a checkpoint.
    Build {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print exact parameter and MAC counts for a spec.
    Count {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Generate the seeded synthetic audio-visual dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        identities: usize,
        #[arg(long, default_value_t = 12)]
        clips: usize,
        #[arg(long, default_value_t = 24)]
        clip_len: usize,
    },
    /// Train the audio-visual sync expert on contrastive pairs.
    TrainExpert {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        steps: usize,
    },
    /// Adversarial pretraining of the full-capacity teacher.
    TrainTeacher {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        expert: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runlog: Option<PathBuf>,
    },
    /// Non-adversarial knowledge distillation of the compact student.
    Distill {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Ablation: train against ground truth without the teacher.
        #[arg(long)]
        no_kd: bool,
        /// Lip-sync loss schedule: all | mid.
        #[arg(long)]
        sync_schedule: Option<String>,
        #[arg(long)]
        switch_fraction: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runlog: Option<PathBuf>,
    },
    /// Collect activation statistics on the held-out calibration pool.
    Calibrate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// minmax or percentile:<p>
        #[arg(long, default_value = "percentile:99.99")]
        method: String,
        #[arg(long, default_value_t = 1024)]
        frames: usize,
    },
    /// Attach a precision assignment and calibration to a checkpoint.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// Preset (student_mix, teacher_mix, all_int8, all_fp16, all_fp32)
        /// or an assignment file path.
        #[arg(long)]
        assignment: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the assignment as a text map.
        #[arg(long)]
        out_assignment: Option<PathBuf>,
    },
    /// Layer-wise INT8/FP16 boundary sensitivity sweep.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// suffix_fp16 (default) or prefix_fp16.
        #[arg(long, default_value = "suffix_fp16")]
        assignment_axis: String,
        #[arg(long, default_value_t = 256)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        runlog: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: proxy-FID, SSIM/PSNR, sync proxies, counts.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        expert: PathBuf,
        #[arg(long, default_value_t = 256)]
        frames: usize,
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        runlog: Option<PathBuf>,
    },
    /// Median-of-iterations latency measurement on the host CPU.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long)]
        runlog: Option<PathBuf>,
    },
    /// Aggregate run-log evaluation records into the fixed-column CSV.
    Report {
        #[arg(long)]
        runlog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Validation failures exit 1; runtime failures exit 2.
pub enum CmdError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CmdError {
    fn code(&self) -> u8 {
        match self {
            CmdError::Validation(_) => 1,
            CmdError::Runtime(_) => 2,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            CmdError::Validation(e) | CmdError::Runtime(e) => e,
        }
    }
}

pub type CmdResult = Result<(), CmdError>;

pub fn validation(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Validation(e.into())
}

pub fn runtime(e: impl Into<anyhow::Error>) -> CmdError {
    CmdError::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's help/version "errors" are successes.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let threads = cli.threads.unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    });
    lwtf_core::runtime::set_threads(threads);

    match commands::dispatch(cli.cmd, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error());
            ExitCode::from(e.code())
        }
    }
}
