use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ltn-ctrl", version, about = "Data-driven controllers for linear-threshold networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a random open-loop dataset from a scenario or system file.
    Collect(CollectArgs),
    /// Build the data matrices and report per-node ranks.
    CheckData(CheckDataArgs),
    /// Solve the LMI program and write the gains.
    Synthesize(SynthesizeArgs),
    /// Run stored gains against the plant.
    ClosedLoop(ClosedLoopArgs),
    /// Collect, synthesize and simulate in one go.
    CaseStudy(CaseStudyArgs),
    /// Write the LMI program as a sparse-triplet JSON file.
    ExportSdp(ExportSdpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    Rodent,
    Arousal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    Ff,
    Integral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VertexModeArg {
    Full,
    Reduced,
}

/// Where the plant comes from.
#[derive(Debug, Clone, Args)]
pub struct SystemSource {
    /// Built-in scenario (ignored when --system is given).
    #[arg(value_enum)]
    pub scenario: Option<ScenarioArg>,
    /// System JSON file.
    #[arg(long, value_name = "FILE")]
    pub system: Option<PathBuf>,
    /// Seed for randomly generated scenarios.
    #[arg(long)]
    pub seed_system: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct DataOptions {
    #[arg(long = "td", value_name = "INT")]
    pub t_d: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed_data: u64,
    /// State sampling box, LO:HI.
    #[arg(long, value_name = "LO:HI")]
    pub x_box: Option<String>,
    /// Input sampling box, LO:HI.
    #[arg(long, value_name = "LO:HI")]
    pub u_box: Option<String>,
}

/// Alpha and s, from a system file or `alpha=..,s=..`.
#[derive(Debug, Clone, Args)]
pub struct MetaSource {
    #[arg(long, value_name = "alpha=A,s=S", conflicts_with = "system")]
    pub system_meta: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub system: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DesignOptions {
    #[arg(long, value_enum, default_value = "ff")]
    pub controller: ControllerArg,
    /// Defaults to full for n <= 8 and reduced above.
    #[arg(long, value_enum)]
    pub vertex_mode: Option<VertexModeArg>,
}

#[derive(Debug, Clone, Args)]
pub struct LoopOptions {
    #[arg(long, default_value_t = 2)]
    pub seed_init: u64,
    #[arg(long, default_value_t = 3)]
    pub seed_noise: u64,
    /// `none` or `uniform:LO:HI`.
    #[arg(long, default_value = "none")]
    pub disturbance: String,
    #[arg(long, default_value_t = 2000)]
    pub horizon: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub tol: f64,
    /// Comma-separated reference state.
    #[arg(long, value_name = "CSV-list")]
    pub reference: Option<String>,
    /// Comma-separated initial state (default: seeded draw from the box).
    #[arg(long, value_name = "CSV-list")]
    pub x0: Option<String>,
    /// Clamp an inadmissible --x0 into the box instead of failing.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub data: DataOptions,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckDataArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub meta: MetaSource,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub meta: MetaSource,
    #[command(flatten)]
    pub design: DesignOptions,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClosedLoopArgs {
    #[command(flatten)]
    pub source: SystemSource,
    /// Result JSON written by `synthesize`.
    #[arg(long, value_name = "FILE")]
    pub result: PathBuf,
    #[command(flatten)]
    pub run: LoopOptions,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CaseStudyArgs {
    #[command(flatten)]
    pub source: SystemSource,
    #[command(flatten)]
    pub data: DataOptions,
    #[command(flatten)]
    pub design: DesignOptions,
    #[command(flatten)]
    pub run: LoopOptions,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportSdpArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub meta: MetaSource,
    #[command(flatten)]
    pub design: DesignOptions,
    /// Output file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}
