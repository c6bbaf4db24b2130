//! `voiceforge` — single entry point wiring corpus generation, training,
//! retrieval, evaluation, and the ablation harness into reproducible runs.
//!
//! Every subcommand reads `--config` (TOML, strict keys) with flag overrides,
//! derives all randomness from one `--seed`, and writes its outputs under a
//! run directory named by the resolved-config fingerprint plus the seed.
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use voiceforge::corpus::Split;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "voiceforge", version, about = "Instruction-driven voice design at desk scale")]
struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Root directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,

    /// Parallel workers for ablation cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic instruction corpus (JSON lines).
    GenData {
        /// Optional filter-rules file (JSON array of {label, pattern}).
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Train a model on a corpus and write a checkpoint.
    Train {
        /// Corpus file from gen-data; omitted: regenerate from config.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate speech tokens for one instruction.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        instruction: String,
        /// Index base path for retrieval grounding (from build-index).
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 48)]
        max_new: usize,
    },
    /// Build the retrieval repository from a corpus.
    BuildIndex {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a corpus split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Which split to score: train, held_out, or ood_paraphrase.
        #[arg(long, default_value = "held_out")]
        split: String,
        /// Ground prompts by retrieval.
        #[arg(long, default_value_t = false)]
        grounded: bool,
        /// Index base path; omitted with --grounded: build from the corpus.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Run an ablation grid; emits CSV plus a JSON mirror.
    Ablate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Grid preset: cot, text-ce, rag, model-size, or data-size.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Finite-difference gradient verification on the tiny config.
    GradCheck {
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
    },
}

fn parse_split(name: &str) -> anyhow::Result<Split> {
    match name {
        "train" => Ok(Split::Train),
        "held_out" => Ok(Split::HeldOut),
        "ood_paraphrase" => Ok(Split::OodParaphrase),
        other => anyhow::bail!("unknown split {other:?} (train, held_out, ood_paraphrase)"),
    }
}

/// Validation phase: everything that decides whether the invocation is
/// well-formed. Errors here exit with code 1.
fn resolve(cli: &Cli) -> anyhow::Result<commands::Ctx> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Command::Train {
        steps: Some(steps), ..
    } = &cli.command
    {
        cfg.train.steps = *steps;
    }
    // Cheap structural validation before any work happens.
    cfg.model.model_config(cfg.seed).validate()?;
    if let Command::Eval { split, .. } = &cli.command {
        parse_split(split)?;
    }
    if let Command::Ablate {
        grid: Some(preset), ..
    } = &cli.command
    {
        RunConfig::default().apply_grid_preset(preset)?;
    }
    Ok(commands::Ctx {
        cfg,
        out_dir: cli.out_dir.clone(),
        jobs: cli.jobs.unwrap_or(1).max(1),
    })
}

fn run(cli: &Cli, ctx: &commands::Ctx) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenData { rules } => {
            commands::gen_data(ctx, rules.as_deref())?;
        }
        Command::Train { corpus, .. } => {
            commands::train_cmd(ctx, corpus.as_deref())?;
        }
        Command::Generate {
            ckpt,
            instruction,
            index,
            max_new,
        } => {
            commands::generate_cmd(ctx, ckpt, instruction, index.as_deref(), *max_new)?;
        }
        Command::BuildIndex { corpus } => {
            commands::build_index_cmd(ctx, corpus.as_deref())?;
        }
        Command::Eval {
            ckpt,
            corpus,
            split,
            grounded,
            index,
        } => {
            commands::eval_cmd(
                ctx,
                ckpt,
                corpus.as_deref(),
                parse_split(split)?,
                *grounded,
                index.as_deref(),
            )?;
        }
        Command::Ablate { corpus, grid } => {
            commands::ablate_cmd(ctx, corpus.as_deref(), grid.as_deref())?;
        }
        Command::GradCheck { samples, h } => {
            commands::grad_check_cmd(ctx, *samples, *h)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes; anything else is a
            // validation failure.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let ctx = match resolve(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
