//! `jacobi-rl`: matrix generation, diagonalization, training and benchmarking.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, Mode};

#[derive(Debug, Parser)]
#[command(
    name = "jacobi-rl",
    version,
    about = "Jacobi diagonalization as a game"
)]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true, env = "JACOBI_RL_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write random symmetric matrices in the text format.
    Gen(GenArgs),
    /// Diagonalize one matrix file with a chosen policy.
    Diag(DiagArgs),
    /// Run self-play training rounds.
    Train(TrainArgs),
    /// Benchmark fixed sweep options against an agent.
    Bench(BenchArgs),
    /// Export transition statistics from a sweep-episode log.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Train/eval split such as `750:250`.
    #[arg(long)]
    pub split: Option<String>,
    /// Entries are drawn uniformly from `[-scale, scale]` before symmetrizing.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    pub matrix: PathBuf,
    /// `maxelem`, `option:<0-7>` or `checkpoint:<path>`.
    #[arg(long, default_value = "maxelem")]
    pub policy: String,
    #[arg(long)]
    pub threshold_rel: Option<f64>,
    /// Average the two triangles of an asymmetric input instead of rejecting it.
    #[arg(long)]
    pub symmetrize: bool,
    /// Write the pivot (or option) sequence here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub games: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub simulations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub threshold_rel: Option<f64>,
    /// Sweep-head checkpoint driving the agent column.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Add a network-free search agent.
    #[arg(long)]
    pub search_only: bool,
    #[arg(long)]
    pub simulations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// JSON-lines episode log of sweep-game episodes.
    #[arg(long)]
    pub episodes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Process exit status for an error chain.
fn exit_code(err: &anyhow::Error) -> u8 {
    use jacobi_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::NonConvergence { .. } => 2,
                E::Io(_)
                | E::MissingCheckpoint(_)
                | E::CorruptFile(_)
                | E::VersionMismatch { .. } => 4,
                E::Config(_)
                | E::Parse { .. }
                | E::InvalidMatrix(_)
                | E::SizeExceedsMax { .. }
                | E::DimensionMismatch { .. } => 3,
                _ => 1,
            };
        }
        if cause.is::<ConfigError>() {
            return 3;
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let result = (|| -> anyhow::Result<()> {
        let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
        if let Some(seed) = cli.seed {
            cfg.seed = seed;
        }
        match &cli.command {
            Command::Gen(a) => commands::gen(&cfg, a),
            Command::Diag(a) => commands::diag(&cfg, a),
            Command::Train(a) => commands::train(cfg, a),
            Command::Bench(a) => commands::bench(cfg, a),
            Command::Export(a) => commands::export(a),
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
