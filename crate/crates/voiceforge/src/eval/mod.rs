//! Oracle-based instruction-following measurement.
//!
//! For each record the model is prompted with the instruction (optionally
//! grounded by retrieval), decoded, and the generated speech tokens are run
//! through the inverse oracle. An attribute scores correct when the decoded
//! level equals the instructed level; failed oracle blocks count as wrong.
//! The mean per-attribute accuracy is reported as the APS-analog.

pub mod ablate;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{oracle_decode, InstructionRecord};
use crate::model::{generate, DecodeMode, Model};
use crate::rag::VectorIndex;
use crate::rng::fnv1a64;
use crate::schema::{AttributeId, ATTRIBUTE_COUNT};
use crate::sequencer::{build_prompt, parse_continuation};
use crate::Result;

pub use ablate::{run_ablation, AblateConfig, AblateGrid, AblationReport, CellKey, CellRow};

/// Room left in the context for the generated continuation: nine attribute
/// tokens, COT_END, SPEECH_START, 36 speech tokens, EOS.
pub const GENERATION_RESERVE: usize = 48;

/// Evaluation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: EvalDecode,
    /// Structural decoding guard (mask to segment-legal tokens).
    pub guard: bool,
    /// Retrieval depth when an index is supplied.
    pub k: usize,
    /// Minimum cosine for grounding texts.
    pub min_score: f64,
}

/// Serializable decode mode for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EvalDecode {
    Greedy,
    Temperature { tau: f64, seed: u64 },
}

impl From<EvalDecode> for DecodeMode {
    fn from(e: EvalDecode) -> DecodeMode {
        match e {
            EvalDecode::Greedy => DecodeMode::Greedy,
            EvalDecode::Temperature { tau, seed } => DecodeMode::Temperature { tau, seed },
        }
    }
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalDecode::Greedy,
            guard: true,
            k: 1,
            min_score: 0.15,
        }
    }
}

/// Accuracy of one attribute over the evaluated records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeAccuracy {
    pub attribute: AttributeId,
    pub accuracy: f64,
}

/// Outcome for one record, kept for the JSON mirror of reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub id: String,
    pub grounded: bool,
    pub parsed: bool,
    /// Decoded level per attribute in canonical order; null marks a failed
    /// oracle block.
    pub decoded: Vec<Option<u8>>,
    pub correct: Vec<bool>,
    pub cot_accuracy: f64,
}

/// Aggregate evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_attribute: Vec<AttributeAccuracy>,
    pub aps_analog: f64,
    pub cot_accuracy: f64,
    pub parse_failure_rate: f64,
    pub config_fingerprint: String,
    pub record_count: usize,
}

impl EvalReport {
    pub fn accuracy_of(&self, attribute: AttributeId) -> f64 {
        self.per_attribute[attribute.index()].accuracy
    }
}

/// Stable fingerprint of everything that shapes an evaluation.
fn fingerprint(model: &Model, opts: &EvalOptions, grounded: bool) -> String {
    let blob = format!(
        "{}|{}|{}|{}",
        serde_json::to_string(&model.config).expect("config serializes"),
        model.vocab.layout().to_json(),
        serde_json::to_string(opts).expect("options serialize"),
        grounded,
    );
    format!("{:016x}", fnv1a64(blob.as_bytes()))
}

fn evaluate_record(
    model: &Model,
    index: Option<&VectorIndex>,
    record: &InstructionRecord,
    opts: &EvalOptions,
) -> Result<RecordOutcome> {
    let grounding = match index {
        Some(idx) => idx.ground(&record.instruction, opts.k, opts.min_score)?,
        None => Vec::new(),
    };
    let budget = model.config.context_length.saturating_sub(GENERATION_RESERVE);
    let prompt = build_prompt(&model.vocab, &record.instruction, &grounding, budget)?;
    let out = generate(
        model,
        &prompt.ids,
        opts.mode.into(),
        GENERATION_RESERVE,
        opts.guard,
    )?;

    let parsed = parse_continuation(&model.vocab, &out);
    let (decoded, correct, cot_accuracy, ok) = match parsed {
        None => (
            vec![None; ATTRIBUTE_COUNT],
            vec![false; ATTRIBUTE_COUNT],
            0.0,
            false,
        ),
        Some(p) => {
            let oracle = oracle_decode(&p.speech_values);
            let mut correct = Vec::with_capacity(ATTRIBUTE_COUNT);
            for (i, a) in AttributeId::ALL.into_iter().enumerate() {
                correct.push(oracle.levels[i] == Some(record.attributes.level(a)));
            }
            // Fraction of generated CoT tokens that name an instructed
            // (attribute, level); duplicates collapse, empty CoT scores 0.
            let gen: std::collections::HashSet<_> = p.cot.iter().copied().collect();
            let cot_acc = if gen.is_empty() {
                0.0
            } else {
                let hits = gen
                    .iter()
                    .filter(|v| record.attributes.level(v.attribute()) == v.level())
                    .count();
                hits as f64 / gen.len() as f64
            };
            (oracle.levels.to_vec(), correct, cot_acc, true)
        }
    };
    Ok(RecordOutcome {
        id: record.id.clone(),
        grounded: !grounding.is_empty(),
        parsed: ok,
        decoded,
        correct,
        cot_accuracy,
    })
}

/// Evaluates records (in parallel, merged in input order) and aggregates.
/// Pass an index to ground prompts by retrieval; `None` evaluates bare
/// prompts.
pub fn evaluate(
    model: &Model,
    index: Option<&VectorIndex>,
    records: &[InstructionRecord],
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<RecordOutcome>)> {
    if records.is_empty() {
        return Err(crate::error::Error::InsufficientData(
            "no records to evaluate".into(),
        ));
    }
    let outcomes: Vec<Result<RecordOutcome>> = records
        .par_iter()
        .map(|r| evaluate_record(model, index, r, opts))
        .collect();
    let mut resolved = Vec::with_capacity(records.len());
    for o in outcomes {
        resolved.push(o?);
    }

    let n = resolved.len() as f64;
    let mut per_attribute = Vec::with_capacity(ATTRIBUTE_COUNT);
    for (i, a) in AttributeId::ALL.into_iter().enumerate() {
        let hits = resolved.iter().filter(|o| o.correct[i]).count();
        per_attribute.push(AttributeAccuracy {
            attribute: a,
            accuracy: hits as f64 / n,
        });
    }
    let aps_analog =
        per_attribute.iter().map(|a| a.accuracy).sum::<f64>() / ATTRIBUTE_COUNT as f64;
    let cot_accuracy = resolved.iter().map(|o| o.cot_accuracy).sum::<f64>() / n;
    let parse_failure_rate = resolved.iter().filter(|o| !o.parsed).count() as f64 / n;

    let report = EvalReport {
        per_attribute,
        aps_analog,
        cot_accuracy,
        parse_failure_rate,
        config_fingerprint: fingerprint(model, opts, index.is_some()),
        record_count: resolved.len(),
    };
    Ok((report, resolved))
}
