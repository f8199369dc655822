use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shiftgate_core::pipeline::{cmd_all, run_stage, PipelineConfig, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "shiftgate", version, about = "Dataset-shift identification and curation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or import the internal and external datasets.
    Synth(Common),
    /// Train the per-class detectors and the classifier.
    Train(Common),
    /// Score every external sample.
    Score(Common),
    /// Cluster each class's scores.
    Cluster(Common),
    /// Replay the classifier as top groups are dropped.
    Quantify(Common),
    /// Dataset distance per drop scenario.
    Otdd(Common),
    /// Assemble report.json and thumbnails.
    Report(Common),
    /// Every stage in order.
    All(Common),
    /// Serve a finished run over HTTP.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = shiftgate_service::DEFAULT_PORT)]
        port: u16,
    },
}

fn load(c: &Common) -> Result<PipelineConfig, PipelineError> {
    Ok(PipelineConfig::load(&c.config)?.with_overrides(c.seed, c.out.clone()))
}

fn run(command: Command) -> Result<(), PipelineError> {
    let stage = |c: &Common, s: Stage| run_stage(&load(c)?, s);
    match command {
        Command::Synth(c) => stage(&c, Stage::Synth),
        Command::Train(c) => stage(&c, Stage::Train),
        Command::Score(c) => stage(&c, Stage::Score),
        Command::Cluster(c) => stage(&c, Stage::Cluster),
        Command::Quantify(c) => stage(&c, Stage::Quantify),
        Command::Otdd(c) => stage(&c, Stage::Otdd),
        Command::Report(c) => stage(&c, Stage::Report),
        Command::All(c) => cmd_all(&load(&c)?),
        Command::Serve { common, port } => {
            let cfg = load(&common)?;
            let dir = cfg.out_dir()?.to_path_buf();
            shiftgate_service::serve_blocking(dir, port).map_err(|e| PipelineError::Runtime(format!("server: {e}")))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
