//! `gravity`: batch front-end for gravity-core.
//!
//! Every command computes all of its outputs in memory and only then writes
//! them, together with a `manifest.json`, into `--out`. Exit codes: 0 on
//! success, 1 on any input or processing error, 2 when the PPML fit did not
//! converge (artifacts are still written).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gravity_core::inference::ClusterDim;
use gravity_core::panel::{Basis, Instrument};
use gravity_core::restatement::DiffAxis;

#[derive(Debug, Parser)]
#[command(name = "gravity", version, about = "Gravity estimation for bilateral portfolio holdings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a holdings table and write it in canonical form.
    Ingest(IngestArgs),
    /// Great-circle distances from a coordinate file.
    Distance(DistanceArgs),
    /// PPML estimation with clustered standard errors.
    Estimate(EstimateArgs),
    /// Holdings by distance bin.
    Bins(BinsArgs),
    /// Allocation shares by counterparty group.
    Shares(SharesArgs),
    /// Top destinations and the reporter edges into them.
    Topk(TopkArgs),
    /// Nationality minus residency differences.
    RestateDiff(RestateDiffArgs),
    /// Synthetic panel with known elasticities.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Residency,
    Nationality,
    Cpis,
}

impl From<BasisArg> for Basis {
    fn from(b: BasisArg) -> Self {
        match b {
            BasisArg::Residency => Basis::ResidencyRestated,
            BasisArg::Nationality => Basis::NationalityRestated,
            BasisArg::Cpis => Basis::ResidencyCpis,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InstrumentArg {
    Debt,
    Equity,
    /// Debt plus equity; analytics only.
    Total,
}

impl From<InstrumentArg> for Instrument {
    fn from(i: InstrumentArg) -> Self {
        match i {
            InstrumentArg::Debt => Instrument::Debt,
            InstrumentArg::Equity => Instrument::Equity,
            InstrumentArg::Total => Instrument::Total,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpecArg {
    Baseline,
    Timevarying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClusterArg {
    Pair,
    Reporter,
    Counterparty,
}

impl From<ClusterArg> for ClusterDim {
    fn from(c: ClusterArg) -> Self {
        match c {
            ClusterArg::Pair => ClusterDim::Pair,
            ClusterArg::Reporter => ClusterDim::Reporter,
            ClusterArg::Counterparty => ClusterDim::Counterparty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    BySource,
    ByDestination,
}

impl From<AxisArg> for DiffAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::BySource => DiffAxis::BySource,
            AxisArg::ByDestination => DiffAxis::ByDestination,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TagArg {
    /// US, China, other.
    UsChinaOther,
    /// Counterparty group.
    Groups,
    /// A single tag.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExcludedBucketArg {
    Separate,
    Row,
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long, env = "GRAVITY_OUT")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GeoArgs {
    /// Precomputed `reporter,counterparty,dist_km` table.
    #[arg(long, env = "GRAVITY_DISTANCES", conflicts_with = "cities")]
    pub distances: Option<PathBuf>,
    /// `country,lat,lon` coordinates; distances are computed.
    #[arg(long, env = "GRAVITY_CITIES")]
    pub cities: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    /// `country,group[,exclude]` membership file.
    #[arg(long, env = "GRAVITY_GROUPS")]
    pub groups: PathBuf,
    /// Reporters moved out of their group into a residual bucket.
    #[arg(long, env = "GRAVITY_EXCLUDE_REPORTER", num_args = 1.., value_delimiter = ',')]
    pub exclude_reporter: Vec<String>,
    /// Where excluded reporters go.
    #[arg(long, env = "GRAVITY_EXCLUDED_BUCKET", value_enum, default_value = "separate")]
    pub excluded_bucket: ExcludedBucketArg,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw holdings table.
    #[arg(long, env = "GRAVITY_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "GRAVITY_BASIS", value_enum)]
    pub basis: BasisArg,
    #[arg(long, env = "GRAVITY_DELIMITER", default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, env = "GRAVITY_COL_YEAR", default_value = "year")]
    pub col_year: String,
    #[arg(long, env = "GRAVITY_COL_REPORTER", default_value = "reporter")]
    pub col_reporter: String,
    #[arg(long, env = "GRAVITY_COL_COUNTERPARTY", default_value = "counterparty")]
    pub col_counterparty: String,
    #[arg(long, env = "GRAVITY_COL_INSTRUMENT", default_value = "instrument")]
    pub col_instrument: String,
    #[arg(long, env = "GRAVITY_COL_VALUE", default_value = "value_usd_mn")]
    pub col_value: String,
    #[arg(long, env = "GRAVITY_FIRST_YEAR", default_value_t = 2007)]
    pub first_year: i32,
    #[arg(long, env = "GRAVITY_LAST_YEAR", default_value_t = 2017)]
    pub last_year: i32,
    /// Keep the table as reported instead of adding zeros for absent pairs.
    #[arg(long, env = "GRAVITY_NO_ZERO_FILL")]
    pub no_zero_fill: bool,
    /// Treat recorded-missing cells as zero.
    #[arg(long, env = "GRAVITY_MISSING_AS_ZERO")]
    pub missing_as_zero: bool,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long, env = "GRAVITY_CITIES")]
    pub cities: PathBuf,
    /// Restrict to the countries of this canonical panel.
    #[arg(long, env = "GRAVITY_PANEL")]
    pub panel: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Canonical panel.
    #[arg(long, env = "GRAVITY_PANEL")]
    pub panel: PathBuf,
    #[arg(long, env = "GRAVITY_BASIS", value_enum, default_value = "nationality")]
    pub basis: BasisArg,
    #[arg(long, env = "GRAVITY_INSTRUMENT", value_enum, default_value = "debt")]
    pub instrument: InstrumentArg,
    #[arg(long, env = "GRAVITY_SPEC", value_enum, default_value = "baseline")]
    pub spec: SpecArg,
    #[arg(long, env = "GRAVITY_BASE_YEAR", default_value_t = 2007)]
    pub base_year: i32,
    /// Adds rest-of-world interactions to the time-varying specification.
    #[arg(long, env = "GRAVITY_INCLUDE_ROW")]
    pub include_row: bool,
    #[arg(long, env = "GRAVITY_CLUSTER", value_enum, default_value = "pair")]
    pub cluster: ClusterArg,
    #[command(flatten)]
    pub groups: GroupArgs,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long, env = "GRAVITY_MAX_ITER", default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, env = "GRAVITY_TOL", default_value_t = 1e-9)]
    pub tol: f64,
    /// Fail on separated observations instead of dropping them.
    #[arg(long, env = "GRAVITY_STRICT_SEPARATION")]
    pub strict_separation: bool,
    #[arg(long, env = "GRAVITY_LEVEL", default_value_t = 0.95)]
    pub level: f64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct BinsArgs {
    #[arg(long, env = "GRAVITY_PANEL")]
    pub panel: PathBuf,
    #[command(flatten)]
    pub groups: GroupArgs,
    #[command(flatten)]
    pub geo: GeoArgs,
    #[arg(long, env = "GRAVITY_BIN_WIDTH", default_value_t = 2000.0)]
    pub bin_width: f64,
    #[arg(long, env = "GRAVITY_N_BINS", default_value_t = 10)]
    pub n_bins: usize,
    #[arg(long, env = "GRAVITY_TAGS", value_enum, default_value = "us-china-other")]
    pub tags: TagArg,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SharesArgs {
    #[arg(long, env = "GRAVITY_PANEL")]
    pub panel: PathBuf,
    #[command(flatten)]
    pub groups: GroupArgs,
    /// Every year when omitted.
    #[arg(long, env = "GRAVITY_YEAR")]
    pub year: Option<i32>,
    #[arg(long, env = "GRAVITY_INSTRUMENT", value_enum, default_value = "debt")]
    pub instrument: InstrumentArg,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct TopkArgs {
    #[arg(long, env = "GRAVITY_PANEL")]
    pub panel: PathBuf,
    #[arg(long, env = "GRAVITY_YEAR")]
    pub year: i32,
    #[arg(long, env = "GRAVITY_INSTRUMENT", value_enum, default_value = "debt")]
    pub instrument: InstrumentArg,
    #[arg(long, short = 'k', env = "GRAVITY_K", default_value_t = 10)]
    pub k: usize,
    /// Only these reporters.
    #[arg(long, env = "GRAVITY_REPORTERS", num_args = 1.., value_delimiter = ',')]
    pub reporters: Vec<String>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct RestateDiffArgs {
    #[arg(long, env = "GRAVITY_RESIDENCY")]
    pub residency: PathBuf,
    #[arg(long, env = "GRAVITY_NATIONALITY")]
    pub nationality: PathBuf,
    #[arg(long, env = "GRAVITY_YEAR")]
    pub year: i32,
    #[arg(long, env = "GRAVITY_INSTRUMENT", value_enum, default_value = "debt")]
    pub instrument: InstrumentArg,
    #[arg(long, short = 'k', env = "GRAVITY_K", default_value_t = 10)]
    pub k: usize,
    #[arg(long, env = "GRAVITY_AXIS", value_enum, default_value = "by-source")]
    pub axis: AxisArg,
    /// `HAVEN:TARGET` pairs for the pass-through heuristic.
    #[arg(long, env = "GRAVITY_PASSTHROUGH", num_args = 1.., value_delimiter = ',')]
    pub passthrough: Vec<String>,
    /// Entities the heuristic is applied to; all when omitted.
    #[arg(long, env = "GRAVITY_ENTITY", num_args = 1.., value_delimiter = ',')]
    pub entity: Vec<String>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, env = "GRAVITY_N_REPORTERS", default_value_t = 50)]
    pub n_reporters: usize,
    #[arg(long, env = "GRAVITY_N_COUNTERPARTIES", default_value_t = 100)]
    pub n_counterparties: usize,
    #[arg(long, env = "GRAVITY_FIRST_YEAR", default_value_t = 2013)]
    pub first_year: i32,
    #[arg(long, env = "GRAVITY_LAST_YEAR", default_value_t = 2017)]
    pub last_year: i32,
    #[arg(long, env = "GRAVITY_INSTRUMENT", value_enum, default_value = "debt")]
    pub instrument: InstrumentArg,
    #[arg(long, env = "GRAVITY_BASIS", value_enum, default_value = "nationality")]
    pub basis: BasisArg,
    #[arg(long, env = "GRAVITY_BETA_ASEAN", default_value_t = -1.0, allow_hyphen_values = true)]
    pub beta_asean: f64,
    #[arg(long, env = "GRAVITY_BETA_OECD", default_value_t = -0.5, allow_hyphen_values = true)]
    pub beta_oecd: f64,
    #[arg(long, env = "GRAVITY_BETA_ROW", default_value_t = -0.8, allow_hyphen_values = true)]
    pub beta_row: f64,
    #[arg(long, env = "GRAVITY_ZERO_INFLATION", default_value_t = 0.4)]
    pub zero_inflation: f64,
    #[arg(long, env = "GRAVITY_BASE_MEAN", default_value_t = 20.0)]
    pub base_mean: f64,
    #[arg(long, env = "GRAVITY_SEED", default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

/// What a successful command reports back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => {
            eprintln!("warning: estimation did not converge; artifacts written");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
