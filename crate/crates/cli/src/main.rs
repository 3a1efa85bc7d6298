mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Host-to-device communication rewriting and evolutionary search.
#[derive(Parser, Debug)]
#[command(name = "commfuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract the communication graph of a CUDA source file.
    Analyze {
        source: PathBuf,
        /// Where to write the graph as JSON [default: <source name>.graph.json in the working directory]
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Convert a host-driven program into an annotated device-initiated seed.
    Fastpath {
        #[arg(long)]
        config: PathBuf,
        source: PathBuf,
        /// Output directory [default: <run dir>/fastpath]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the evolutionary search from one or more seeds.
    Evolve(EvolveArgs),
    /// Query a candidate store.
    Inspect(InspectArgs),
    /// Re-render the report of a run from its store and checkpoint.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
}

#[derive(Args, Debug)]
pub struct EvolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Seed program; repeat for several islands [default: <run dir>/fastpath/seed.cu]
    #[arg(long = "seed")]
    pub seeds: Vec<PathBuf>,
    /// Directive for the seeds [default: <seed stem>_directive.yaml, then the conservative directive]
    #[arg(long)]
    pub directive: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Require an existing checkpoint and continue from it.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many generations are complete.
    #[arg(long)]
    pub stop_after: Option<u32>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Store directory; taken from --config when omitted.
    #[arg(long, required_unless_present = "config")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print one record in full.
    #[arg(long)]
    pub id: Option<String>,
    /// Nearest stored candidates to this program file.
    #[arg(long)]
    pub knn: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Directive used when embedding the --knn file.
    #[arg(long)]
    pub directive: Option<PathBuf>,
    #[arg(long)]
    pub min_score: Option<f64>,
    #[arg(long)]
    pub keyword: Option<String>,
    /// Generation range `a..b` (inclusive) or a single generation.
    #[arg(long)]
    pub generations: Option<String>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Print a summarizer digest of the matching records.
    #[arg(long)]
    pub digest: bool,
    /// Revalidate the log and drop an interrupted final line.
    #[arg(long)]
    pub rebuild_index: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { source, json } => commands::analyze(&source, json.as_deref()),
        Command::Fastpath { config, source, out } => commands::fastpath(&config, &source, out.as_deref()),
        Command::Evolve(a) => commands::evolve(&a),
        Command::Inspect(a) => commands::inspect(&a),
        Command::Report { config, run_id } => commands::report(&config, run_id.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
