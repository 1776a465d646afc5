//! `tcen` command-line front end: data generation, the two training stages,
//! the noiser, decoding, scoring and the ablation runs.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "tcen", version, about = "End-to-end speech translation with tandem CTC encoders")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run config (as echoed by any command); built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; the resolved config is written here.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by `gen-data`.
    #[arg(long)]
    data: PathBuf,
    /// Noisy MT corpus written by `noise-corpus`.
    #[arg(long)]
    noisy: Option<PathBuf>,
    #[arg(long, default_value = "tcen")]
    variant: tcen::pipeline::Variant,
    /// Checkpoint whose parameters initialize the model.
    #[arg(long, conflicts_with = "resume")]
    init: Option<PathBuf>,
    /// Checkpoint written by an interrupted run of the same stage.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Save a resumable checkpoint every this many steps (0: only at the end).
    #[arg(long, default_value_t = 0)]
    checkpoint_every: usize,
    /// Stop after this many steps; continue later with `--resume`.
    #[arg(long)]
    until: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic ASR/MT/ST corpora and vocabularies.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Stage 1: CTC on speech plus MT on clean and noisy text.
    Pretrain(StageArgs),
    /// Train a CTC path model on the ASR corpus and fit the noiser to its paths.
    TrainNoiser {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Replace the sources of an MT corpus with noiser output.
    NoiseCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Noiser written by `train-noiser`.
        #[arg(long)]
        noiser: PathBuf,
        /// MT corpus to noise; defaults to `mt.jsonl` in the data directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Stage 2: ST with ASR and MT.
    Finetune(StageArgs),
    /// Beam-search translation of an ST corpus.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// ST corpus to translate; defaults to `test.jsonl` in the data directory.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// BLEU of a hypothesis file, plus dev token accuracy when a model is given.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// One hypothesis per line, space-separated target words.
        #[arg(long)]
        hyps: PathBuf,
        /// ST corpus holding the references; defaults to `test.jsonl`.
        #[arg(long)]
        refs: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Merge eval logs into one CSV of accuracy curves.
    Curves {
        #[command(flatten)]
        common: Common,
        /// `label=path/to/eval_log.csv`, repeatable.
        #[arg(long = "log", required = true)]
        logs: Vec<String>,
    },
    /// Run system variants end to end on freshly generated data.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Repeatable; defaults to the full system and its three ablations.
        #[arg(long = "variant")]
        variants: Vec<tcen::pipeline::Variant>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::Pretrain(args) => commands::train(&args, tcen::training::Stage::Pretrain),
        Command::Finetune(args) => commands::train(&args, tcen::training::Stage::Finetune),
        Command::TrainNoiser { common, data } => commands::train_noiser(&common, &data),
        Command::NoiseCorpus {
            common,
            data,
            noiser,
            input,
        } => commands::noise_corpus(&common, &data, &noiser, input.as_deref()),
        Command::Decode {
            common,
            data,
            model,
            input,
        } => commands::decode(&common, &data, &model, input.as_deref()),
        Command::Evaluate {
            common,
            data,
            hyps,
            refs,
            model,
        } => commands::evaluate(&common, &data, &hyps, refs.as_deref(), model.as_deref()),
        Command::Curves { common, logs } => commands::curves(&common, &logs),
        Command::Ablate { common, variants } => commands::ablate(&common, &variants),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
