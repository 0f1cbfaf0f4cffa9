//! `latent-unmix` command-line front-end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_unmix::model::FamilyKind;
use latent_unmix::observations::ObservationFamily;
use serde::Serialize;

pub const THREADS_ENV: &str = "LATENT_UNMIX_THREADS";

#[derive(Parser)]
#[command(name = "latent-unmix", version, about = "Identifiability checks and moment-based estimation for latent-tree models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jacobian-rank identifiability check for one cell or a whole table.
    Check(CheckArgs),
    /// Mixing matrix of an observation family, exported as CSV and JSON.
    Mixing(MixingArgs),
    /// Samples a corpus from a parameter file or seeded random parameters.
    Simulate(SimulateArgs),
    /// Recovers parameters from exact moments (parameter file) or a corpus.
    Estimate(EstimateArgs),
    /// Compares estimated parameters with the truth up to state permutation.
    Eval(EvalArgs),
    /// Checks a parameter file.
    Validate(ValidateArgs),
    /// Prints the sentence/tree hypergraph of a family at one length.
    Hypergraph(HypergraphArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

/// Projections for thin-triple families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaMode {
    /// `η = e1` together with `η = 1`.
    Table,
    /// `η = 1` only.
    Ones,
    /// A seeded random `η = τ` only.
    Random,
    /// `η = 1` and `η = τ`.
    Both,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct LengthArgs {
    /// Single sentence length.
    #[arg(long = "L", conflicts_with_all = ["l_min", "l_max"])]
    #[serde(rename = "L")]
    pub l: Option<usize>,
    #[arg(long = "L-min")]
    #[serde(rename = "L_min")]
    pub l_min: Option<usize>,
    #[arg(long = "L-max")]
    #[serde(rename = "L_max")]
    pub l_max: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct CheckArgs {
    /// Model families; several (comma-separated) in table mode.
    #[arg(long, value_delimiter = ',', required = true)]
    pub family: Vec<FamilyKind>,
    /// Observation families; table mode defaults to all six table columns.
    #[arg(long, value_delimiter = ',')]
    pub obs: Vec<ObservationFamily>,
    /// Hidden states (ignored by dependency families).
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub lengths: LengthArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random parameter draws per cell.
    #[arg(long, default_value_t = 3)]
    pub draws: usize,
    #[arg(long, value_enum, default_value_t = EtaMode::Table)]
    pub eta_mode: EtaMode,
    /// Sweep each (family, obs) cell over single lengths and report the
    /// smallest identifiable one.
    #[arg(long)]
    pub table: bool,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct MixingArgs {
    #[arg(long, default_value = "pcfg-ie")]
    pub family: FamilyKind,
    #[arg(long, default_value = "all-thin-triples")]
    pub obs: ObservationFamily,
    #[command(flatten)]
    #[serde(flatten)]
    pub lengths: LengthArgs,
    /// Output prefix; writes `<prefix>.csv` and `<prefix>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip the numerical rank (an SVD of the dense matrix).
    #[arg(long)]
    pub no_rank: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Parameter file; random parameters are drawn from `--seed` otherwise.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "input")]
    pub family: Option<FamilyKind>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub lengths: LengthArgs,
    /// Sentences per length.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus path.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the generating parameters.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EstimateArgs {
    /// `pcfg-ie`, `dep-ies` or `hmm`.
    #[arg(long)]
    pub family: FamilyKind,
    /// Parameter file (exact moments) or corpus (empirical moments).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Hidden states; taken from the parameter file when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    /// Vocabulary size; inferred from the input when omitted.
    #[arg(long)]
    pub d: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub lengths: LengthArgs,
    /// Seed of the random projection `τ`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = EtaMode::Both)]
    pub eta_mode: EtaMode,
    /// DEP-IES validation tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Ground-truth parameter file; adds a match report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    /// Estimate output or parameter file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct HypergraphArgs {
    #[arg(long)]
    pub family: FamilyKind,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub l: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| output::usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Check(a) => commands::check(&a),
        Command::Mixing(a) => commands::mixing(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Hypergraph(a) => commands::hypergraph(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = output::classify(&e);
            eprintln!("error[{category}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
