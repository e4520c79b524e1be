#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Demand-response auctions: clinching, VCG and market clearing.
#[derive(Debug, Parser)]
#[command(name = "flexclinch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one mechanism on an instance file.
    Run(RunArgs),
    /// Sweep one user's reported omega under MCA and market clearing.
    SweepCheat(SweepCheatArgs),
    /// Measure MCA welfare loss over a list of price steps.
    SweepEpsilon(SweepEpsilonArgs),
    /// Run MCA at every DR event of a synthetic day.
    SimulateDay(SimulateDayArgs),
    /// Run the distributed protocol simulation and audit its trace.
    Protocol(ProtocolArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mechanism {
    Mca,
    Vcg,
    MarketClearing,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for populations and overlay ids.
    #[arg(long, default_value_t = 17)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Ration with `(bid - prior) * D / sum(bid)` instead of residual demand.
    #[arg(long)]
    pub compat_line11: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = Mechanism::Mca)]
    pub mechanism: Mechanism,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Evaluate the reward of the with-user VCG term at the others' total only.
    #[arg(long)]
    pub compat_eq6: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PopulationArgs {
    /// Instance file; omega values are multiplied by each omega_f.
    /// Without one, a population is drawn from the seed.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// Users in a drawn population.
    #[arg(long, default_value_t = flexclinch::scenario::DEFAULT_USERS)]
    pub users: usize,
    /// DR-event slot whose omega family a drawn population uses.
    #[arg(long, default_value_t = 17)]
    pub slot: usize,
}

#[derive(Debug, Args)]
pub struct SweepCheatArgs {
    #[command(flatten)]
    pub population: PopulationArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub omega_f: Vec<f64>,
    /// Index of the misreporting user.
    #[arg(long, default_value_t = 0)]
    pub cheater: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    /// The grid spans omega_real / span to omega_real * span.
    #[arg(long, default_value_t = 10.0)]
    pub grid_span: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepEpsilonArgs {
    #[command(flatten)]
    pub population: PopulationArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001,0.0001,0.00001")]
    pub epsilon_list: Vec<f64>,
    /// Scale of the omega family; only the first value is used.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub omega_f: Vec<f64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SimulateDayArgs {
    #[arg(long, default_value_t = flexclinch::scenario::DEFAULT_USERS)]
    pub users: usize,
    /// DR-event slots; pass `--events` with no value for none.
    #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "11,17")]
    pub events: Vec<usize>,
    /// Scale of the omega families; only the first value is used.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub omega_f: Vec<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[command(flatten)]
    pub population: PopulationArgs,
    /// Scale of the omega family for a drawn population.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub omega_f: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub epsilon: f64,
    /// Audit an existing trace log instead of running the protocol.
    #[arg(long)]
    pub audit: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

/// How a command ended when it did not fail outright.
pub enum Status {
    Ok,
    /// A checked property or equivalence did not hold.
    PropertyFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLEXCLINCH_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => commands::run(args),
        Command::SweepCheat(args) => commands::sweep_cheat(args),
        Command::SweepEpsilon(args) => commands::sweep_epsilon(args),
        Command::SimulateDay(args) => commands::simulate_day(args),
        Command::Protocol(args) => commands::protocol(args),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::PropertyFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<flexclinch::Error>() {
                Some(flexclinch::Error::IterationCap { .. } | flexclinch::Error::ProtocolStall { .. }) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}
