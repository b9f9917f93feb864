use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use paired_adjust::experiment::TransformSpec;
use paired_adjust::{Setting, StudyMode, Target, VarianceFlavor};

#[derive(Debug, Parser)]
#[command(
    name = "paired-adjust",
    version,
    about = "Regression-assisted inference for paired randomized experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Master seed for every random stream.
    #[arg(long, global = true, env = "PAIRED_ADJUST_SEED")]
    pub seed: Option<u64>,

    /// Interval level is 1 - alpha.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,

    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Also write the table as CSV.
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,

    /// TOML or JSON file with defaults; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores). Never changes results.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the effect from an observed paired experiment.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo study on generated samples.
    Simulate(SimulateArgs),
    /// Enumerate every assignment of a small science table.
    Enumerate(EnumerateArgs),
    /// Generate a synthetic science table.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV with columns pair,unit,z,y,x1..xP.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Transform for within-pair differences, e.g. `identity`, `power:2`, `log@1,3`.
    #[arg(long)]
    pub f: Option<TransformSpec>,
    /// Transform for centered pair levels.
    #[arg(long)]
    pub g: Option<TransformSpec>,
    #[arg(long, value_enum)]
    pub target: Option<TargetArg>,
    /// classical, hc2 or hc3.
    #[arg(long)]
    pub flavor: Option<VarianceFlavor>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub setting: Option<Setting>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of generated samples.
    #[arg(long = "S", alias = "samples")]
    pub samples: Option<usize>,
    /// Randomizations per sample (SATE studies).
    #[arg(long = "B", alias = "randomizations")]
    pub randomizations: Option<usize>,
    /// sate-study or pate-study.
    #[arg(long)]
    pub mode: Option<StudyMode>,
    #[arg(long)]
    pub f: Option<TransformSpec>,
    #[arg(long)]
    pub g: Option<TransformSpec>,
    #[arg(long)]
    pub flavor: Option<VarianceFlavor>,
    /// Write binned estimator draws as CSV.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    /// Science-table CSV with columns pair,unit,[w*],[x*],r_t,r_c.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Largest number of pairs to enumerate.
    #[arg(long)]
    pub cap: Option<usize>,
    #[arg(long)]
    pub f: Option<TransformSpec>,
    #[arg(long)]
    pub g: Option<TransformSpec>,
    #[arg(long)]
    pub flavor: Option<VarianceFlavor>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub setting: Option<Setting>,
    /// Also reveal one random assignment and write the observed experiment CSV.
    #[arg(long)]
    pub observed: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum TargetArg {
    Sate,
    Pate,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Sate => Target::Sate,
            TargetArg::Pate => Target::Pate,
        }
    }
}
