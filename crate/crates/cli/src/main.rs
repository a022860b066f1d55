use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use motion_language::dataset::SplitName;
use motion_language_cli::config::{ModelKind, RunConfig};
use motion_language_cli::{cmd_evaluate, cmd_export_contexts, cmd_generate, cmd_prepare, cmd_train, EvaluateOptions, GenerateOptions};

/// Motion ↔ language sequence models.
#[derive(Debug, Parser)]
#[command(name = "motionlang", version)]
struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (prepare, train, evaluate) or file (generate,
    /// export-contexts).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse a dataset release and write model-ready splits.
    Prepare {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train a model on a prepared directory.
    Train {
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Describe motions (m2l) or synthesize motions from sentences (l2m).
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// BLEU by rank, plus chained relative performance with --l2m.
    Evaluate {
        #[arg(long)]
        m2l: PathBuf,
        #[arg(long)]
        l2m: Option<PathBuf>,
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        width: Option<usize>,
    },
    /// Write context vectors as CSV.
    ExportContexts {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prepared: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Append a 2-D PCA projection.
        #[arg(long)]
        pca: bool,
    },
}

fn out_file(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out.clone().context("no output file (pass --out)")
}

fn prepared(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.prepared.clone())
        .context("no prepared data directory (pass --prepared or set `prepared`)")
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    cfg.seed = cli.seed.or(cfg.seed);
    cfg.threads = cli.threads.or(cfg.threads);
    cfg.out = cli.out.clone().or(cfg.out);
    // Evaluation and context export fan out over the global pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads()).build_global();

    match cli.command {
        Command::Prepare { dataset } => {
            cfg.dataset = dataset.or(cfg.dataset);
            let summary = cmd_prepare(&cfg)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Train {
            model,
            prepared: dir,
            epochs,
            resume,
        } => {
            cfg.prepared = Some(prepared(&cfg, dir)?);
            cfg.model = model.or(cfg.model);
            cfg.training_epochs = epochs.or(cfg.training_epochs);
            let outcome = cmd_train(&cfg, resume.as_deref())?;
            if let Some(last) = outcome.curve.last() {
                println!("epoch {} train_loss {}", last.epoch, last.train_loss);
            }
        }
        Command::Generate {
            checkpoint,
            input,
            width,
            samples,
        } => {
            let opts = GenerateOptions {
                width: width.or(cfg.beam_width),
                samples: samples.or(cfg.samples_per_hypothesis),
                seed: cfg.seed(),
            };
            let n = cmd_generate(&checkpoint, &input, &out_file(&cfg)?, opts)?;
            println!("{n} inputs");
        }
        Command::Evaluate {
            m2l,
            l2m,
            prepared: dir,
            split,
            width,
        } => {
            let opts = EvaluateOptions {
                split,
                width: width.or(cfg.beam_width),
                seed: cfg.seed(),
            };
            let outcome = cmd_evaluate(&m2l, l2m.as_deref(), &prepared(&cfg, dir)?, cfg.out_dir()?, &opts)?;
            println!("{}", serde_json::to_string(&outcome.bleu)?);
            if let Some(rel) = outcome.relative {
                println!("{}", serde_json::to_string(&rel)?);
            }
        }
        Command::ExportContexts {
            checkpoint,
            prepared: dir,
            split,
            pca,
        } => {
            let n = cmd_export_contexts(&checkpoint, &prepared(&cfg, dir)?, split, pca, &out_file(&cfg)?)?;
            println!("{n} rows");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
