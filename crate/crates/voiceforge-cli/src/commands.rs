//! Subcommand implementations. Each one maps onto a library operation, reads
//! inputs from explicit paths, and writes all outputs under its own run
//! directory.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use voiceforge::corpus::{
    self, default_rules, load_rules, FilterRule, InstructionRecord, PhraseBank, Split,
};
use voiceforge::eval::{evaluate, run_ablation};
use voiceforge::model::gradcheck;
use voiceforge::model::{
    generate, load_checkpoint, save_checkpoint, AdamState, DecodeMode, Model,
};
use voiceforge::rag::VectorIndex;
use voiceforge::rng::{derive_seed, tag};
use voiceforge::sequencer::{build_prompt, parse_continuation};

use crate::config::{prepare_run_dir, RunConfig};

pub struct Ctx {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

fn load_filter_rules(path: Option<&Path>) -> anyhow::Result<Vec<FilterRule>> {
    match path {
        None => Ok(default_rules()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read rules file {}", p.display()))?;
            Ok(load_rules(&text)?)
        }
    }
}

fn read_corpus(path: &Path) -> anyhow::Result<Vec<InstructionRecord>> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("cannot open corpus {}", path.display()))?;
    Ok(corpus::read_jsonl(BufReader::new(file))?)
}

/// Corpus records: from `--corpus` when given, otherwise generated in-process
/// from the config (identical to what `gen-data` would write).
fn obtain_corpus(
    ctx: &Ctx,
    path: Option<&Path>,
    rules: &[FilterRule],
) -> anyhow::Result<Vec<InstructionRecord>> {
    match path {
        Some(p) => read_corpus(p),
        None => {
            let bank = PhraseBank::default_bank();
            Ok(corpus::generate_corpus(
                &ctx.cfg.corpus.spec(),
                ctx.cfg.corpus_seed(),
                &bank,
                rules,
            )?)
        }
    }
}

fn of_split(records: &[InstructionRecord], split: Split) -> Vec<InstructionRecord> {
    records
        .iter()
        .filter(|r| r.split == split)
        .cloned()
        .collect()
}

/// Builds the retrieval repository from a corpus: every train-phrased
/// instruction (train and held-out splits).
fn repository(records: &[InstructionRecord]) -> anyhow::Result<VectorIndex> {
    Ok(VectorIndex::build(
        records
            .iter()
            .filter(|r| r.split != Split::OodParaphrase)
            .map(|r| (r.id.clone(), r.instruction.clone())),
    )?)
}

pub fn gen_data(ctx: &Ctx, rules_path: Option<&Path>) -> anyhow::Result<PathBuf> {
    let dir = prepare_run_dir(&ctx.out_dir, "gen-data", &ctx.cfg)?;
    let rules = load_filter_rules(rules_path)?;
    let bank = PhraseBank::default_bank();
    let records = corpus::generate_corpus(
        &ctx.cfg.corpus.spec(),
        ctx.cfg.corpus_seed(),
        &bank,
        &rules,
    )?;
    let path = dir.join("corpus.jsonl");
    let mut buf = Vec::new();
    corpus::write_jsonl(&records, &mut buf)?;
    std::fs::write(&path, buf)?;
    println!(
        "wrote {} records ({} train / {} held_out / {} ood) to {}",
        records.len(),
        records.iter().filter(|r| r.split == Split::Train).count(),
        records.iter().filter(|r| r.split == Split::HeldOut).count(),
        records
            .iter()
            .filter(|r| r.split == Split::OodParaphrase)
            .count(),
        path.display()
    );
    Ok(dir)
}

pub fn train_cmd(ctx: &Ctx, corpus_path: Option<&Path>) -> anyhow::Result<PathBuf> {
    let dir = prepare_run_dir(&ctx.out_dir, "train", &ctx.cfg)?;
    let rules = default_rules();
    let records = obtain_corpus(ctx, corpus_path, &rules)?;
    let train_recs = of_split(&records, Split::Train);
    let held = of_split(&records, Split::HeldOut);

    let bank = PhraseBank::default_bank();
    let mut model = Model::new(ctx.cfg.model.model_config(ctx.cfg.seed))?;
    let mut opt = AdamState::new(&model.layout());
    let tcfg = ctx.cfg.train.train_config(ctx.cfg.seed);
    let report = voiceforge::model::train(&mut model, &mut opt, &bank, &train_recs, &held, &tcfg)?;

    let ckpt = dir.join("model.vfck");
    save_checkpoint(&model, None, &ckpt)?;

    let mut trace = Vec::new();
    for p in &report.trace {
        trace.extend_from_slice(serde_json::to_string(p)?.as_bytes());
        trace.push(b'\n');
    }
    std::fs::write(dir.join("trace.jsonl"), trace)?;
    println!(
        "trained {} steps; final train loss {:.4}, val loss {:?}; checkpoint {}",
        report.steps_run,
        report.final_train_loss,
        report.final_val_loss,
        ckpt.display()
    );
    Ok(dir)
}

pub fn build_index_cmd(ctx: &Ctx, corpus_path: Option<&Path>) -> anyhow::Result<PathBuf> {
    let dir = prepare_run_dir(&ctx.out_dir, "build-index", &ctx.cfg)?;
    let rules = default_rules();
    let records = obtain_corpus(ctx, corpus_path, &rules)?;
    let index = repository(&records)?;
    let base = dir.join("index");
    index.save(&base)?;
    println!("indexed {} instructions at {}", index.len(), base.display());
    Ok(dir)
}

#[allow(clippy::too_many_arguments)]
pub fn eval_cmd(
    ctx: &Ctx,
    ckpt: &Path,
    corpus_path: Option<&Path>,
    split: Split,
    grounded: bool,
    index_path: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    let dir = prepare_run_dir(&ctx.out_dir, "eval", &ctx.cfg)?;
    let (model, _) = load_checkpoint(ckpt)?;
    let rules = default_rules();
    let records = obtain_corpus(ctx, corpus_path, &rules)?;
    let subset = of_split(&records, split);

    let index = if grounded {
        Some(match index_path {
            Some(p) => VectorIndex::load(p)?,
            None => repository(&records)?,
        })
    } else {
        None
    };
    let opts = ctx.cfg.eval.eval_options(&ctx.cfg.rag, ctx.cfg.seed);
    let (report, outcomes) = evaluate(&model, index.as_ref(), &subset, &opts)?;

    #[derive(serde::Serialize)]
    struct EvalFile<'a> {
        split: &'a str,
        grounded: bool,
        report: &'a voiceforge::eval::EvalReport,
        records: &'a [voiceforge::eval::RecordOutcome],
    }
    let payload = serde_json::to_string_pretty(&EvalFile {
        split: split.name(),
        grounded,
        report: &report,
        records: &outcomes,
    })?;
    std::fs::write(dir.join("eval.json"), payload)?;
    println!(
        "{} ({}): aps_analog={:.4} cot_accuracy={:.4} parse_failure_rate={:.4} over {} records",
        split.name(),
        if grounded { "grounded" } else { "ungrounded" },
        report.aps_analog,
        report.cot_accuracy,
        report.parse_failure_rate,
        report.record_count
    );
    Ok(dir)
}

pub fn generate_cmd(
    ctx: &Ctx,
    ckpt: &Path,
    instruction: &str,
    index_path: Option<&Path>,
    max_new: usize,
) -> anyhow::Result<PathBuf> {
    let dir = prepare_run_dir(&ctx.out_dir, "generate", &ctx.cfg)?;
    let (model, _) = load_checkpoint(ckpt)?;
    let grounding = match index_path {
        Some(p) => {
            let index = VectorIndex::load(p)?;
            index.ground(instruction, ctx.cfg.rag.k, ctx.cfg.rag.min_score)?
        }
        None => Vec::new(),
    };
    let budget = model
        .config
        .context_length
        .saturating_sub(voiceforge::eval::GENERATION_RESERVE);
    let prompt = build_prompt(&model.vocab, instruction, &grounding, budget)?;
    let mode = if ctx.cfg.eval.temperature <= f64::EPSILON {
        DecodeMode::Greedy
    } else {
        DecodeMode::Temperature {
            tau: ctx.cfg.eval.temperature,
            seed: derive_seed(ctx.cfg.seed, &[tag("decode")]),
        }
    };
    let out = generate(&model, &prompt.ids, mode, max_new, ctx.cfg.eval.guard)?;
    let parsed = parse_continuation(&model.vocab, &out);

    #[derive(serde::Serialize)]
    struct GenFile {
        instruction: String,
        grounding: Vec<String>,
        generated_ids: Vec<u32>,
        cot: Option<Vec<(String, u8)>>,
        speech: Option<Vec<u32>>,
        decoded_levels: Option<Vec<Option<u8>>>,
    }
    let (cot, speech, decoded) = match &parsed {
        None => (None, None, None),
        Some(p) => {
            let cot = p
                .cot
                .iter()
                .map(|v| (v.attribute().name().to_string(), v.level()))
                .collect();
            let oracle = corpus::oracle_decode(&p.speech_values);
            (
                Some(cot),
                Some(p.speech_values.clone()),
                Some(oracle.levels.to_vec()),
            )
        }
    };
    let payload = serde_json::to_string_pretty(&GenFile {
        instruction: instruction.to_string(),
        grounding,
        generated_ids: out,
        cot,
        speech,
        decoded_levels: decoded,
    })?;
    std::fs::write(dir.join("generation.json"), &payload)?;
    println!("{payload}");
    Ok(dir)
}

pub fn ablate_cmd(
    ctx: &Ctx,
    corpus_path: Option<&Path>,
    preset: Option<&str>,
) -> anyhow::Result<PathBuf> {
    let mut cfg = ctx.cfg.clone();
    if let Some(p) = preset {
        cfg.apply_grid_preset(p)?;
    }
    let sub_ctx = Ctx {
        cfg: cfg.clone(),
        out_dir: ctx.out_dir.clone(),
        jobs: ctx.jobs,
    };
    let dir = prepare_run_dir(&ctx.out_dir, "ablate", &cfg)?;
    let rules = default_rules();
    let records = obtain_corpus(&sub_ctx, corpus_path, &rules)?;
    let bank = PhraseBank::default_bank();
    let acfg = cfg.ablate_config(ctx.jobs);
    let report = run_ablation(&acfg, &bank, &rules, &records)?;

    std::fs::write(dir.join("ablation.csv"), report.to_csv())?;
    std::fs::write(
        dir.join("ablation.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    print!("{}", report.to_csv());
    let failed: usize = report
        .seed_results
        .iter()
        .filter(|s| s.failed.is_some())
        .count();
    if failed > 0 {
        println!("note: {failed} run(s) failed; rows aggregate the rest");
    }
    Ok(dir)
}

pub fn grad_check_cmd(ctx: &Ctx, samples: usize, h: f64) -> anyhow::Result<PathBuf> {
    let dir = prepare_run_dir(&ctx.out_dir, "grad-check", &ctx.cfg)?;
    let mut worst = 0.0f64;
    let mut reports = Vec::new();
    for i in 0..5u64 {
        let cfg = gradcheck::tiny_config(derive_seed(ctx.cfg.seed, &[tag("gc-model"), i]));
        let seq = gradcheck::check_sequence(derive_seed(ctx.cfg.seed, &[tag("gc-seq"), i]), 12);
        let report = gradcheck::grad_check(
            &cfg,
            &seq,
            samples,
            h,
            derive_seed(ctx.cfg.seed, &[tag("gc-sample"), i]),
        )?;
        println!(
            "sequence {i}: max relative error {:.3e} at {:?}",
            report.max_rel_error, report.worst
        );
        worst = worst.max(report.max_rel_error);
        reports.push((i, report.max_rel_error));
    }
    #[derive(serde::Serialize)]
    struct GcFile {
        samples: usize,
        h: f64,
        per_sequence: Vec<(u64, f64)>,
        max_rel_error: f64,
        pass: bool,
    }
    let pass = worst < 1e-3;
    std::fs::write(
        dir.join("gradcheck.json"),
        serde_json::to_string_pretty(&GcFile {
            samples,
            h,
            per_sequence: reports,
            max_rel_error: worst,
            pass,
        })?,
    )?;
    println!("max relative error over 5 sequences: {worst:.3e}");
    if !pass {
        anyhow::bail!("gradient check failed: {worst:.3e} >= 1e-3");
    }
    Ok(dir)
}
