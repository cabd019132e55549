//! Command-line front end for the bevplace library: generate demo worlds,
//! build place databases from capture manifests, and query or evaluate
//! them. Usage errors exit with 1, data errors with 2.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::ModeArg;
use error::CliResult;

#[derive(Parser)]
#[command(name = "bevplace-cli", version, about = "BEV place recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PipelineArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured BEV builder.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Fuse LiDAR clouds from the manifest; requires a [lidar] config
    /// section.
    #[arg(long)]
    fuse: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Build a place database from a capture manifest.
    BuildDb {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Manifest of places: `id x y yaw views... [cloud]` per line.
        #[arg(long)]
        manifest: PathBuf,
        /// Output database file.
        #[arg(long)]
        db: PathBuf,
    },
    /// Retrieve the closest database places for each manifest entry.
    Query {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Database file written by build-db.
        #[arg(long)]
        db: PathBuf,
        /// Manifest of query captures.
        #[arg(long)]
        manifest: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        /// Matches to report per query (default from config).
        #[arg(long)]
        topn: Option<usize>,
    },
    /// Score retrieval quality of a query manifest against a database.
    Eval {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Database file written by build-db.
        #[arg(long)]
        db: PathBuf,
        /// Manifest of query captures with ground-truth poses.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the report CSVs.
        #[arg(long)]
        out: PathBuf,
        /// Distance under which a match counts as correct.
        #[arg(long)]
        criterion_meters: Option<f64>,
    },
    /// Generate a synthetic world with matching manifests and config.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// World seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of database places (each gets one revisit query).
        #[arg(long, default_value_t = 9)]
        places: usize,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::BuildDb {
            pipeline,
            manifest,
            db,
        } => commands::build_db::run(
            &pipeline.config,
            &manifest,
            &db,
            pipeline.mode,
            pipeline.fuse,
        ),
        Command::Query {
            pipeline,
            db,
            manifest,
            out,
            topn,
        } => commands::query::run(
            &pipeline.config,
            &db,
            &manifest,
            &out,
            topn,
            pipeline.mode,
            pipeline.fuse,
        ),
        Command::Eval {
            pipeline,
            db,
            manifest,
            out,
            criterion_meters,
        } => commands::eval::run(
            &pipeline.config,
            &db,
            &manifest,
            &out,
            criterion_meters,
            pipeline.mode,
            pipeline.fuse,
        ),
        Command::Synth { out, seed, places } => commands::synth::run(&out, seed, places),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(parse_error) => {
            // Help and version requests land here too and must stay
            // successful; genuine usage errors exit 1.
            let code = if parse_error.use_stderr() { 1 } else { 0 };
            let _ = parse_error.print();
            std::process::exit(code);
        }
    };
    if let Err(error) = run(cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
