use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "dpn", version, about = "Dual path networks: architecture, complexity, verification and training")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Directory that receives all file outputs.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an architecture and print its stage layout.
    Arch(ArchArgs),
    /// Per-layer parameters and multiply-adds, checked against published totals for presets.
    Complexity(ComplexityArgs),
    /// Equivalence and reproduction checks.
    #[command(subcommand)]
    Verify(Verify),
    /// Central finite-difference checks of every differentiable op in 64-bit.
    Gradcheck(GradcheckArgs),
    /// Train on synthetic blobs or a folder of PPM/PGM images.
    Train(TrainArgs),
    /// Top-1/top-5 accuracy of a checkpoint.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
enum Verify {
    /// Split (slice/concat) vs dual (two-path) block realizations agree.
    DualVsSplit {
        /// Number of seeds, starting at --seed.
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Residual recurrence matches the densely connected unroll with shared features.
    ResidualVsDense {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Number of recurrence steps K.
        #[arg(long, default_value_t = 16)]
        steps: usize,
        /// State dimension.
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, value_enum, default_value_t = Precision::F64)]
        precision: Precision,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// All published parameter, multiply-add and savings figures.
    Table1 {
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Args, Debug)]
struct ArchArgs {
    /// Preset name.
    #[arg(value_name = "ARCH")]
    arch: Option<String>,
    /// Architecture spec file; takes precedence over the preset.
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Input resolution used for the spatial extents.
    #[arg(long, default_value_t = 224)]
    hw: usize,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug)]
struct ComplexityArgs {
    #[arg(value_name = "ARCH")]
    arch: Option<String>,
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 224)]
    hw: usize,
    /// Relative tolerance on both totals; defaults to 0.02 for params and 0.03 for madds.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Random shapes per op.
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// `synthetic`, or a `relative_path,label` manifest CSV.
    #[arg(long, default_value = "synthetic")]
    data: String,
    /// Image root for a manifest; defaults to the manifest's directory.
    #[arg(long, value_name = "DIR")]
    root: Option<PathBuf>,
    /// Synthetic sample count.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Image side length after preprocessing.
    #[arg(long, default_value_t = 32)]
    hw: usize,
    /// How folder images of a different size are fitted.
    #[arg(long, value_enum, default_value_t = Policy::Exact)]
    policy: Policy,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Preset name.
    #[arg(long, default_value = "dpn-toy")]
    arch: String,
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Overrides the classifier width of the architecture.
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Epochs at which the learning rate drops by 10x, comma separated.
    #[arg(long, value_delimiter = ',')]
    steps: Option<Vec<usize>>,
    #[arg(long)]
    no_crop: bool,
    #[arg(long)]
    no_flip: bool,
    /// Recompute BN running statistics over the training set after training.
    #[arg(long)]
    refine_bn: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long, value_name = "FILE")]
    checkpoint: PathBuf,
    #[arg(long, default_value = "dpn-toy")]
    arch: String,
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    /// Global pooling before the classifier; defaults to the architecture's.
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Table,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Precision {
    F32,
    F64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Policy {
    Exact,
    Crop,
    Resize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum PoolingArg {
    Avg,
    Meanmax,
}

/// Final verdict of a command; decides the last word of the summary line and the exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Pass,
    Fail,
}

pub struct Outcome {
    pub summary: String,
    pub status: Status,
}

const EXIT_VERIFY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = !matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if usage {
                println!("dpn: usage error FAIL");
                ExitCode::from(EXIT_USAGE)
            } else {
                println!("dpn: OK");
                ExitCode::SUCCESS
            };
        }
    };
    let verb = match &cli.command {
        Command::Arch(_) => "arch",
        Command::Complexity(_) => "complexity",
        Command::Verify(_) => "verify",
        Command::Gradcheck(_) => "gradcheck",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
    };
    match commands::run(cli) {
        Ok(out) => {
            let word = match out.status {
                Status::Ok => "OK",
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
            };
            println!("{} {word}", out.summary);
            if out.status == Status::Fail {
                ExitCode::from(EXIT_VERIFY)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            println!("{verb}: error FAIL");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
