//! Command-line surface for frequency-decomposition preprocessing
//! experiments on phantom cohorts.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fdp", version, about = "Frequency-decomposition preprocessing for reconstruction-based anomaly detection")]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "FDP_THREADS")]
    pub threads: Option<usize>,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded phantom dataset.
    Phantom(PhantomArgs),
    /// Train the prior context bank and the reconstructor.
    Train(TrainArgs),
    /// Write anomaly maps, reconstructions and slice panels.
    Detect(DetectArgs),
    /// Threshold on validation, report metrics on test.
    Evaluate(EvaluateArgs),
    /// Run the FRM/HFSup, cutoff and context-count sweeps.
    Ablate(AblateArgs),
    /// Frequency-domain analyses of a dataset.
    Analyze(AnalyzeArgs),
    /// Render the contexts of a trained bank.
    FrmInspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Cohort seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

/// Overrides for the FDP and training sections of the run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub contexts: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub frm_seed: Option<u64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub m_frm: Option<f64>,
    #[arg(long)]
    pub m_hfsup: Option<f64>,
    #[arg(long)]
    pub no_frm: bool,
    #[arg(long)]
    pub no_hfsup: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub filter_kernel: Option<usize>,
    #[arg(long)]
    pub erosion_iters: Option<usize>,
    #[arg(long)]
    pub grid_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Sweep {
    FrmHfsup,
    MFrm,
    MHfsup,
    Contexts,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict to these sweeps (repeatable); all by default.
    #[arg(long, value_enum)]
    pub only: Vec<Sweep>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub analysis: Analysis,
}

#[derive(Debug, Args)]
pub struct AnalysisIo {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Analysis {
    /// Best DICE of |I_h| against lesion masks across cutoffs.
    FreqSweep {
        #[command(flatten)]
        io: AnalysisIo,
        /// Comma-separated m values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Band-wise dispersion of healthy vs lesioned slices.
    Dispersion {
        #[command(flatten)]
        io: AnalysisIo,
        /// Comma-separated band edges.
        #[arg(long, value_delimiter = ',')]
        bands: Option<Vec<f64>>,
    },
    /// Explained-variance ratios of healthy low-frequency vectors.
    Pca {
        #[command(flatten)]
        io: AnalysisIo,
        #[arg(long)]
        m: Option<f64>,
    },
    /// Levina–Bickel intrinsic dimension of healthy low-frequency vectors.
    IntrinsicDim {
        #[command(flatten)]
        io: AnalysisIo,
        #[arg(long)]
        m: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// An invocation problem the user can fix; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// `2` for usage errors anywhere in the chain, `1` otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        2
    } else {
        1
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    commands::dispatch(cli)
}
