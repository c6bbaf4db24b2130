//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Trained models are cached and shared across
//! criteria so each distinct configuration trains exactly once per suite run.
//!
//! This suite trains real models on 2 CPU cores and takes on the order of a
//! couple of hours end to end.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use voiceforge::corpus::{
    default_rules, generate_corpus, oracle_decode, oracle_encode, CorpusSpec, InstructionRecord,
    PhraseBank, Split,
};
use voiceforge::eval::{evaluate, EvalOptions};
use voiceforge::model::gradcheck::{check_sequence, grad_check, tiny_config, DEFAULT_H};
use voiceforge::model::{train, AdamState, Model, ModelConfig, TrainConfig};
use voiceforge::rag::{cosine, TrigramEmbedder, VectorIndex};
use voiceforge::rng::Rng;
use voiceforge::schema::{AttributeId, AttributeVector};
use voiceforge::sequencer::{build_sequence, SequenceOptions, Vocabulary};

// ---------------------------------------------------------------------------
// Pinned experiment constants. Calibrated once against this implementation
// and frozen; the assertions below are the acceptance gates.
// ---------------------------------------------------------------------------

/// Corpus seed and shape shared by the training criteria.
const CORPUS_SEED: u64 = 7;
const N_TRAIN: usize = 1000;
const N_HELD_OUT: usize = 100;
const N_OOD: usize = 100;

/// Training budget for ablation cells (criteria 5-7, 11).
const ABLATION_STEPS: usize = 1200;
const ABLATION_LR: f64 = 2e-3;
const ABLATION_BATCH: usize = 8;
/// Ablation cells run a narrower model than the spec default; the full-width
/// model is exercised by criteria 3 and 4.
const ABLATION_D_MODEL: usize = 64;
const SEEDS: [u64; 3] = [1, 2, 3];

/// Criterion 3: memorization budget and target.
const MEMO_STEP_BUDGET: usize = 3000;
const MEMO_TARGET_LOSS: f64 = 0.05;

/// Criterion 4: generalization thresholds at the default configuration.
const GENERALIZATION_STEPS: usize = 3000;
const GENERALIZATION_APS: f64 = 0.90;
const GENERALIZATION_COT: f64 = 0.95;

/// Criterion 7: minimum grounded-over-ungrounded APS gap on ood paraphrases.
const RAG_GAP: f64 = 0.10;

// ---------------------------------------------------------------------------
// Shared fixtures and the trained-cell cache.
// ---------------------------------------------------------------------------

struct Base {
    bank: PhraseBank,
    train_recs: Vec<InstructionRecord>,
    held: Vec<InstructionRecord>,
    ood: Vec<InstructionRecord>,
    index: VectorIndex,
}

fn base() -> &'static Base {
    static BASE: OnceLock<Base> = OnceLock::new();
    BASE.get_or_init(|| {
        let bank = PhraseBank::default_bank();
        let rules = default_rules();
        let corpus = generate_corpus(
            &CorpusSpec {
                n_train: N_TRAIN,
                n_held_out: N_HELD_OUT,
                n_ood: N_OOD,
            },
            CORPUS_SEED,
            &bank,
            &rules,
        )
        .expect("corpus generates");
        let train_recs: Vec<_> = corpus
            .iter()
            .filter(|r| r.split == Split::Train)
            .cloned()
            .collect();
        let held: Vec<_> = corpus
            .iter()
            .filter(|r| r.split == Split::HeldOut)
            .cloned()
            .collect();
        let ood: Vec<_> = corpus
            .iter()
            .filter(|r| r.split == Split::OodParaphrase)
            .cloned()
            .collect();
        let index = VectorIndex::build(
            train_recs
                .iter()
                .chain(held.iter())
                .map(|r| (r.id.clone(), r.instruction.clone())),
        )
        .expect("index builds");
        Base {
            bank,
            train_recs,
            held,
            ood,
            index,
        }
    })
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct CellSpec {
    cot: bool,
    lambda_zero: bool,
    d_model: usize,
    n_train: usize,
    steps: usize,
    seed: u64,
}

struct CellOut {
    model: Model,
    final_train_loss: f64,
}

type CellCache = Mutex<HashMap<CellSpec, Arc<OnceLock<Arc<CellOut>>>>>;

fn cell(spec: CellSpec) -> Arc<CellOut> {
    static CACHE: OnceLock<CellCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let slot = {
        let mut map = cache.lock().unwrap();
        map.entry(spec.clone())
            .or_insert_with(|| Arc::new(OnceLock::new()))
            .clone()
    };
    slot.get_or_init(|| {
        let b = base();
        let cfg = ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: spec.d_model,
            d_ff: spec.d_model * 4,
            context_length: 512,
            vocab_size: 371,
            seed: spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(11),
        };
        let mut model = Model::new(cfg).expect("model builds");
        let mut opt = AdamState::new(&model.layout());
        let tcfg = TrainConfig {
            lr: ABLATION_LR,
            batch_size: ABLATION_BATCH,
            steps: spec.steps,
            dropout_p: 0.2,
            lambda_text: if spec.lambda_zero { 0.0 } else { 1.0 },
            seed: spec.seed,
            warmup_frac: 0.05,
            val_every: 0,
            reference_p: 0.5,
            cot_enabled: spec.cot,
            target_loss: None,
        };
        let t0 = Instant::now();
        let report = train(
            &mut model,
            &mut opt,
            &b.bank,
            &b.train_recs[..spec.n_train],
            &[],
            &tcfg,
        )
        .expect("training runs");
        println!(
            "[cell] cot={} lt0={} d={} n={} steps={} seed={}: loss {:.4} in {:.0}s",
            spec.cot,
            spec.lambda_zero,
            spec.d_model,
            spec.n_train,
            spec.steps,
            spec.seed,
            report.final_train_loss,
            t0.elapsed().as_secs_f64()
        );
        Arc::new(CellOut {
            model,
            final_train_loss: report.final_train_loss,
        })
    })
    .clone()
}

fn ablation_cell(cot: bool, lambda_zero: bool, d_model: usize, n_train: usize, seed: u64) -> Arc<CellOut> {
    cell(CellSpec {
        cot,
        lambda_zero,
        d_model,
        n_train,
        steps: ABLATION_STEPS,
        seed,
    })
}

fn held_aps(model: &Model) -> (f64, f64) {
    let b = base();
    let (report, _) = evaluate(model, None, &b.held, &EvalOptions::default()).expect("eval runs");
    (report.aps_analog, report.cot_accuracy)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

#[test]
fn c01_oracle_soundness() {
    let t0 = Instant::now();
    let mut rng = Rng::new(123);
    for _ in 0..10_000 {
        let v = AttributeVector::sample(&mut rng);
        let decoded = oracle_decode(&oracle_encode(&v));
        assert_eq!(decoded.vector(), Some(v), "round trip failed for {v:?}");
    }
    // Exhaustive one-attribute sweeps around every base level.
    let mut sweeps = 0;
    for base_level in 0..5u8 {
        let mut levels = [0u8; 9];
        for (i, a) in AttributeId::ALL.into_iter().enumerate() {
            levels[i] = base_level.min(a.level_count() - 1);
        }
        let base_vec = AttributeVector::new(levels).unwrap();
        for a in AttributeId::ALL {
            for lvl in 0..a.level_count() {
                let v = base_vec.with_level(a, lvl).unwrap();
                let decoded = oracle_decode(&oracle_encode(&v));
                assert_eq!(decoded.vector(), Some(v));
                sweeps += 1;
            }
        }
    }
    let dt = t0.elapsed();
    assert!(dt.as_secs_f64() < 5.0, "oracle soundness took {dt:?}");
    println!(
        "PASS c01 oracle soundness: 10000 random + {sweeps} sweep vectors, zero failures, {:.2}s",
        dt.as_secs_f64()
    );
}

#[test]
fn c02_gradient_correctness() {
    let mut worst = 0.0f64;
    for i in 0..5u64 {
        let cfg = tiny_config(100 + i);
        let seq = check_sequence(200 + i, 12);
        let report = grad_check(&cfg, &seq, 250, DEFAULT_H, 300 + i).expect("grad check runs");
        assert!(
            report.max_rel_error < 1e-3,
            "sequence {i}: max rel error {} at {:?}",
            report.max_rel_error,
            report.worst
        );
        worst = worst.max(report.max_rel_error);
    }
    println!("PASS c02 gradient correctness: max relative error {worst:.3e} over 5 sequences x 250 samples");
}

#[test]
fn c03_memorization_sanity() {
    let bank = PhraseBank::default_bank();
    let rules = default_rules();
    let corpus = generate_corpus(
        &CorpusSpec {
            n_train: 50,
            n_held_out: 5,
            n_ood: 5,
        },
        CORPUS_SEED + 1,
        &bank,
        &rules,
    )
    .unwrap();
    let train_recs: Vec<_> = corpus
        .iter()
        .filter(|r| r.split == Split::Train)
        .cloned()
        .collect();

    let mut model = Model::new(ModelConfig::default()).unwrap();
    let mut opt = AdamState::new(&model.layout());
    let tcfg = TrainConfig {
        steps: MEMO_STEP_BUDGET,
        target_loss: Some(MEMO_TARGET_LOSS),
        val_every: 0,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &mut opt, &bank, &train_recs, &[], &tcfg).unwrap();
    let smoothed: f64 = report
        .trace
        .iter()
        .rev()
        .take(10)
        .map(|p| p.train_loss)
        .sum::<f64>()
        / report.trace.len().min(10) as f64;
    assert!(
        smoothed < MEMO_TARGET_LOSS,
        "loss {smoothed:.4} after {} steps (budget {MEMO_STEP_BUDGET})",
        report.steps_run
    );

    let (held_in, _) = evaluate(&model, None, &train_recs, &EvalOptions::default()).unwrap();
    assert_eq!(
        held_in.aps_analog, 1.0,
        "held-in APS-analog {} != 1.0",
        held_in.aps_analog
    );
    assert_eq!(held_in.parse_failure_rate, 0.0);
    println!(
        "PASS c03 memorization: loss {smoothed:.4} at step {} (budget {MEMO_STEP_BUDGET}), held-in APS-analog 1.0",
        report.steps_run
    );
}

#[test]
fn c04_generalization() {
    let b = base();
    let out = cell(CellSpec {
        cot: true,
        lambda_zero: false,
        d_model: 128,
        n_train: N_TRAIN,
        steps: GENERALIZATION_STEPS,
        seed: 1,
    });
    let (report, _) = evaluate(&out.model, None, &b.held, &EvalOptions::default()).unwrap();
    assert!(
        report.aps_analog >= GENERALIZATION_APS,
        "held-out APS-analog {:.4} < {GENERALIZATION_APS}",
        report.aps_analog
    );
    assert!(
        report.cot_accuracy >= GENERALIZATION_COT,
        "cot accuracy {:.4} < {GENERALIZATION_COT}",
        report.cot_accuracy
    );
    println!(
        "PASS c04 generalization: held-out APS-analog {:.4} (>= {GENERALIZATION_APS}), cot accuracy {:.4} (>= {GENERALIZATION_COT}) after {GENERALIZATION_STEPS} steps",
        report.aps_analog, report.cot_accuracy
    );
}

#[test]
fn c05_cot_ablation_direction() {
    let mut with_cot = Vec::new();
    let mut without = Vec::new();
    for seed in SEEDS {
        let on = ablation_cell(true, false, ABLATION_D_MODEL, N_TRAIN, seed);
        with_cot.push(held_aps(&on.model).0);
        let off = ablation_cell(false, false, ABLATION_D_MODEL, N_TRAIN, seed);
        without.push(held_aps(&off.model).0);
    }
    let (m1, s1) = mean_std(&with_cot);
    let (m0, s0) = mean_std(&without);
    assert!(
        m1 - s1 > m0 + s0,
        "intervals overlap: with CoT {m1:.4}+/-{s1:.4} vs without {m0:.4}+/-{s0:.4}"
    );
    println!(
        "PASS c05 CoT direction: with CoT {m1:.4}+/-{s1:.4} > without {m0:.4}+/-{s0:.4} (non-overlapping, 3 seeds)"
    );
}

#[test]
fn c06_text_ce_ablation_direction() {
    let mut lt1 = Vec::new();
    let mut lt0 = Vec::new();
    for seed in SEEDS {
        let one = ablation_cell(true, false, ABLATION_D_MODEL, N_TRAIN, seed);
        lt1.push(held_aps(&one.model).0);
        let zero = ablation_cell(true, true, ABLATION_D_MODEL, N_TRAIN, seed);
        lt0.push(held_aps(&zero.model).0);
    }
    let (m1, s1) = mean_std(&lt1);
    let (m0, s0) = mean_std(&lt0);
    if m1 - s1 > m0 + s0 {
        println!(
            "PASS c06 text-CE direction: lambda=1 {m1:.4}+/-{s1:.4} > lambda=0 {m0:.4}+/-{s0:.4} (non-overlapping, 3 seeds)"
        );
    } else {
        // An honestly reported null satisfies the criterion; a significant
        // reversal would not.
        assert!(
            m0 - s0 <= m1 + s1,
            "significant reversal: lambda=0 {m0:.4}+/-{s0:.4} beats lambda=1 {m1:.4}+/-{s1:.4}"
        );
        println!(
            "PASS c06 text-CE direction: NULL RESULT at toy scale - lambda=1 {m1:.4}+/-{s1:.4} vs lambda=0 {m0:.4}+/-{s0:.4} overlap; no significant separation either way"
        );
    }
}

#[test]
fn c07_rag_ablation_direction() {
    let b = base();
    let mut grounded = Vec::new();
    let mut ungrounded = Vec::new();
    for seed in SEEDS {
        let out = ablation_cell(true, false, ABLATION_D_MODEL, N_TRAIN, seed);
        let (g, _) = evaluate(&out.model, Some(&b.index), &b.ood, &EvalOptions::default()).unwrap();
        let (u, _) = evaluate(&out.model, None, &b.ood, &EvalOptions::default()).unwrap();
        grounded.push(g.aps_analog);
        ungrounded.push(u.aps_analog);
    }
    let (mg, sg) = mean_std(&grounded);
    let (mu, su) = mean_std(&ungrounded);
    assert!(
        mg - mu >= RAG_GAP,
        "ood grounded {mg:.4}+/-{sg:.4} vs ungrounded {mu:.4}+/-{su:.4}: gap {:.4} < {RAG_GAP}",
        mg - mu
    );
    println!(
        "PASS c07 RAG direction: ood grounded {mg:.4}+/-{sg:.4} beats ungrounded {mu:.4}+/-{su:.4} by {:.1} points (>= {:.0})",
        (mg - mu) * 100.0,
        RAG_GAP * 100.0
    );
}

#[test]
fn c08_dropout_statistics() {
    let b = base();
    let vocab = Vocabulary::new(64).unwrap();
    let rec = &b.train_recs[0];
    let opts = SequenceOptions {
        dropout_p: 0.2,
        lambda_text: 1.0,
        cot_enabled: true,
        reference: None,
        context_length: 512,
    };
    let trials = 100_000u64;
    let mut kept = [0u64; 9];
    let mut pair_kept = [[0u64; 9]; 9];
    for seed in 0..trials {
        let seq = build_sequence(&vocab, rec, &opts, seed).unwrap();
        let mut present = [false; 9];
        for i in seq.segments.cot.clone() {
            let id = seq.ids[i];
            let v = voiceforge::schema::attribute_value_of_token(id).unwrap();
            present[v.attribute().index()] = true;
        }
        for a in 0..9 {
            if present[a] {
                kept[a] += 1;
            }
            for bb in 0..9 {
                if present[a] && present[bb] {
                    pair_kept[a][bb] += 1;
                }
            }
        }
    }
    let n = trials as f64;
    let mut max_rate_err = 0.0f64;
    for a in 0..9 {
        let drop_rate = 1.0 - kept[a] as f64 / n;
        max_rate_err = max_rate_err.max((drop_rate - 0.2).abs());
        assert!(
            (drop_rate - 0.2).abs() <= 0.01,
            "attribute {a} drop rate {drop_rate}"
        );
    }
    let mut max_corr = 0.0f64;
    for a in 0..9 {
        for bb in 0..9 {
            if a == bb {
                continue;
            }
            let pa = kept[a] as f64 / n;
            let pb = kept[bb] as f64 / n;
            let pab = pair_kept[a][bb] as f64 / n;
            let corr = (pab - pa * pb) / (pa * (1.0 - pa) * pb * (1.0 - pb)).sqrt();
            max_corr = max_corr.max(corr.abs());
            assert!(corr.abs() <= 0.02, "attributes {a},{bb} correlation {corr}");
        }
    }
    println!(
        "PASS c08 dropout statistics: max |rate-0.2| {max_rate_err:.4} (<= 0.01), max |pairwise corr| {max_corr:.4} (<= 0.02) over {trials} builds"
    );
}

#[test]
fn c09_retrieval_exactness() {
    let b = base();
    // Self-retrieval: every indexed text returns itself at rank 1 with unit
    // score.
    for e in b.index.entries() {
        let hits = b.index.query(&e.text, 1).unwrap();
        assert_eq!(hits[0].id, e.id, "self-retrieval rank-1 mismatch for {}", e.id);
        assert!(
            (hits[0].score - 1.0).abs() <= 1e-6,
            "self score {} for {}",
            hits[0].score,
            e.id
        );
    }

    // 500 fresh queries against an independent full scan.
    let embedder = TrigramEmbedder::default();
    let mut rng = Rng::new(4242);
    for i in 0..500u64 {
        let v = AttributeVector::sample(&mut rng);
        let mode = if i % 2 == 0 {
            voiceforge::corpus::PhraseMode::Train
        } else {
            voiceforge::corpus::PhraseMode::Ood
        };
        let q = voiceforge::corpus::render_instruction(&v, &b.bank, 9000 + i, mode).unwrap();
        let hits = b.index.query(&q, 10).unwrap();

        let qe = embedder.embed(&q).unwrap();
        let mut scan: Vec<(f64, &str)> = b
            .index
            .entries()
            .iter()
            .map(|e| (cosine(&qe, &e.embedding), e.id.as_str()))
            .collect();
        scan.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(b.1)));
        for (hit, (score, id)) in hits.iter().zip(scan.iter()) {
            assert_eq!(hit.id, *id, "query {i} disagrees with the full scan");
            assert!((hit.score - score).abs() < 1e-12);
        }
    }
    println!(
        "PASS c09 retrieval exactness: {} self-retrievals at 1.0+/-1e-6; 500 queries match the independent full scan",
        b.index.len()
    );
}

#[test]
fn c10_cli_determinism() {
    use std::path::Path;
    use std::process::Command;

    let bin = env!("CARGO_BIN_EXE_voiceforge");
    let tmp = tempfile::tempdir().unwrap();
    let cfg_body = r#"
seed = 9

[corpus]
n_train = 24
n_held_out = 6
n_ood = 6

[model]
n_layers = 1
n_heads = 2
d_model = 16
d_ff = 32
context_length = 512
speech_tokens = 64

[train]
lr = 1e-3
batch_size = 4
steps = 8
val_every = 4
reference_p = 0.5

[ablate]
seeds = [1, 2]
steps = 4
d_model = [16]
n_train = [12]
"#;
    let cfg_path = tmp.path().join("run.toml");
    std::fs::write(&cfg_path, cfg_body).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let run = |args: &[&str]| {
        let out = Command::new(bin)
            .current_dir(tmp.path())
            .args(args)
            .output()
            .expect("binary runs");
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let snapshot = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files
            .into_iter()
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect()
    };
    let find_dir = |prefix: &str| -> std::path::PathBuf {
        let runs = tmp.path().join("runs");
        std::fs::read_dir(&runs)
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
            .unwrap_or_else(|| panic!("no {prefix} run dir"))
    };

    run(&["gen-data", "--config", cfg]);
    let corpus = find_dir("gen-data").join("corpus.jsonl");
    let corpus = corpus.to_str().unwrap().to_string();
    run(&["train", "--config", cfg, "--corpus", &corpus]);
    let ckpt = find_dir("train").join("model.vfck");
    let ckpt = ckpt.to_str().unwrap().to_string();
    run(&["build-index", "--config", cfg, "--corpus", &corpus]);
    let index = find_dir("build-index").join("index");
    let index = index.to_str().unwrap().to_string();

    let all: Vec<(&str, Vec<&str>)> = vec![
        ("gen-data", vec!["gen-data", "--config", cfg]),
        ("train", vec!["train", "--config", cfg, "--corpus", &corpus]),
        (
            "build-index",
            vec!["build-index", "--config", cfg, "--corpus", &corpus],
        ),
        (
            "eval",
            vec![
                "eval",
                "--config",
                cfg,
                "--ckpt",
                &ckpt,
                "--corpus",
                &corpus,
                "--grounded",
                "--index",
                &index,
            ],
        ),
        (
            "generate",
            vec![
                "generate",
                "--config",
                cfg,
                "--ckpt",
                &ckpt,
                "--instruction",
                "Design a voice: a rumbling pitch and a tranquil mood.",
                "--index",
                &index,
            ],
        ),
        ("ablate", vec!["ablate", "--config", cfg, "--corpus", &corpus]),
        ("grad-check", vec!["grad-check", "--config", cfg, "--samples", "40"]),
    ];

    for (name, args) in &all {
        run(args);
        let dir = find_dir(name);
        let first = snapshot(&dir);
        run(args);
        let second = snapshot(&dir);
        assert_eq!(
            first.len(),
            second.len(),
            "{name}: file sets differ between runs"
        );
        for ((fa, ba), (fb, bb)) in first.iter().zip(second.iter()) {
            assert_eq!(fa, fb, "{name}: file names differ");
            assert_eq!(ba, bb, "{name}: {fa} bytes differ between identical runs");
        }
    }
    println!(
        "PASS c10 reproducibility: all 7 subcommands byte-identical across reruns under a fixed seed and config"
    );
}

#[test]
fn c11_scaling_direction() {
    // Model-size grid at fixed data; data-size grid at fixed width.
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut few = Vec::new();
    let mut many = Vec::new();
    for seed in SEEDS {
        small.push(held_aps(&ablation_cell(true, false, 32, N_TRAIN, seed).model).0);
        large.push(held_aps(&ablation_cell(true, false, 64, N_TRAIN, seed).model).0);
        few.push(held_aps(&ablation_cell(true, false, ABLATION_D_MODEL, 250, seed).model).0);
        many.push(held_aps(&ablation_cell(true, false, ABLATION_D_MODEL, N_TRAIN, seed).model).0);
    }
    let (ms, _ss) = mean_std(&small);
    let (ml, _sl) = mean_std(&large);
    let (mf, _sf) = mean_std(&few);
    let (mm, _sm) = mean_std(&many);

    let model_monotone = ml >= ms;
    let data_monotone = mm >= mf;
    assert!(
        model_monotone,
        "model grid not monotone: d32 {ms:.4} vs d64 {ml:.4} - null result must be reported"
    );
    assert!(
        data_monotone,
        "data grid not monotone: n250 {mf:.4} vs n1000 {mm:.4} - null result must be reported"
    );
    println!(
        "PASS c11 scaling direction: model d32 {ms:.4} <= d64 {ml:.4}; data n250 {mf:.4} <= n1000 {mm:.4} (3 seeds each, monotone)"
    );
}
