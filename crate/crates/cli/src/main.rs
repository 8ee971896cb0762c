//! `slu` — staged spoken language understanding recipes from the command
//! line.
//!
//! ```text
//! slu run       --config exp.json --workdir work           # stages 1-6
//! slu run       --config exp.json --workdir work --stage 2 --stop-stage 4
//! slu prepare|stats|tokenize|train|decode|score ...        # one stage
//! slu synth     --config exp.json --workdir work           # corpus only
//! slu sweep-snr --config exp.json --workdir work           # SE -> SLU sweep
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 stage-precondition error,
//! 4 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slu_core::config::{load_config, ExperimentConfig};
use slu_core::recipes::{run_stages, sweep_snr, StagePlan};
use slu_core::synth::synth_corpus;
use slu_core::Error;

#[derive(Parser)]
#[command(name = "slu", version, about = "Desk-scale spoken language understanding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Working directory for stage artifacts.
    #[arg(long)]
    workdir: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run stages start..=stop of the recipe.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// First stage to run (1-6).
        #[arg(long, default_value_t = 1)]
        stage: usize,
        /// Last stage to run (1-6).
        #[arg(long = "stop-stage", default_value_t = 6)]
        stop_stage: usize,
    },
    /// Stage 1: generate or ingest the corpus.
    Prepare(CommonArgs),
    /// Stage 2: global feature statistics.
    Stats(CommonArgs),
    /// Stage 3: vocabulary, BPE, and target construction.
    Tokenize(CommonArgs),
    /// Stage 4: model training.
    Train(CommonArgs),
    /// Stage 5: beam-search decoding of the eval splits.
    Decode(CommonArgs),
    /// Stage 6: metric reports.
    Score(CommonArgs),
    /// Generate a synthetic corpus under <workdir>/synth without stage gating.
    Synth(CommonArgs),
    /// SNR sweep of the speech-enhancement -> SLU pipeline.
    SweepSnr(CommonArgs),
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut config = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run_single_stage(common: &CommonArgs, stage: usize) -> Result<(), Error> {
    let config = load(common)?;
    run_stages(&StagePlan::new(stage, stage, &common.workdir), &config)
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            common,
            stage,
            stop_stage,
        } => {
            let config = load(&common)?;
            run_stages(&StagePlan::new(stage, stop_stage, &common.workdir), &config)
        }
        Command::Prepare(c) => run_single_stage(&c, 1),
        Command::Stats(c) => run_single_stage(&c, 2),
        Command::Tokenize(c) => run_single_stage(&c, 3),
        Command::Train(c) => run_single_stage(&c, 4),
        Command::Decode(c) => run_single_stage(&c, 5),
        Command::Score(c) => run_single_stage(&c, 6),
        Command::Synth(c) => {
            let config = load(&c)?;
            let mut spec = config.data.synth.clone();
            spec.task = config.task;
            let out_dir = c.workdir.join("synth");
            let manifest = synth_corpus(&spec, config.seed, &out_dir)?;
            let total: usize = manifest.splits.values().map(Vec::len).sum();
            println!(
                "wrote {total} utterances to {}",
                out_dir.join("manifest.jsonl").display()
            );
            Ok(())
        }
        Command::SweepSnr(c) => {
            let config = load(&c)?;
            let csv = sweep_snr(&c.workdir, &config)?;
            println!("wrote {}", csv.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
