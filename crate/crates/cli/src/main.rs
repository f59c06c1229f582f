//! `destin`: sequence benchmark, MNIST pipeline, snapshot inspection and data checks.

mod inspect;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::run::Failure;

#[derive(Parser)]
#[command(name = "destin", version, about = "Recurrent clustering hierarchies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
pub struct Common {
    /// TOML run configuration; missing sections use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overwrite outputs written by an earlier run.
    #[arg(long)]
    pub force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Binary sequence detection over a grid of lengths and centroid counts.
    Seqbench {
        #[command(flatten)]
        common: Common,
    },
    /// Train a hierarchy on MNIST, featurise, train the ensemble and report.
    Mnist {
        #[command(flatten)]
        common: Common,
        /// Directory holding the four uncompressed IDX files.
        #[arg(long, env = "DESTIN_DATA_DIR", default_value = "data/mnist")]
        data_dir: PathBuf,
        /// hierarchy, featurize, classify, evaluate or all.
        #[arg(long, default_value = "all")]
        stage: String,
        /// Use the full-size profile (15k hierarchy images, 60k/10k, 11 members).
        #[arg(long)]
        full_scale: bool,
    },
    /// Summarise a node, hierarchy or classifier snapshot.
    Inspect { snapshot: PathBuf },
    /// Check the MNIST files against their published digests.
    VerifyData {
        #[arg(long, env = "DESTIN_DATA_DIR", default_value = "data/mnist")]
        data_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Seqbench { common } => run::seqbench(&common),
        Command::Mnist {
            common,
            data_dir,
            stage,
            full_scale,
        } => run::mnist(&common, &data_dir, &stage, full_scale),
        Command::Inspect { snapshot } => inspect::inspect(&snapshot),
        Command::VerifyData { data_dir } => run::verify_data(&data_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, message }) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
