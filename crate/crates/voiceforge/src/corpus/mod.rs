//! Synthetic instruction/speech-token corpus with an invertible oracle.
//!
//! The oracle replaces a neural audio codec: it encodes an attribute vector
//! into 36 speech tokens (nine blocks of four identical tokens, one block per
//! attribute in canonical order) and decodes them back by 3-of-4 majority
//! vote. Because the code is exactly invertible, instruction following can be
//! measured without audio.

pub mod filter;
pub mod phrases;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::rng::{derive_seed, tag, Rng};
use crate::schema::{AttributeId, AttributeValue, AttributeVector, ATTRIBUTE_COUNT};
use crate::Result;

pub use filter::{
    compile_rules, default_rules, filter_caption, load_rules, FilterRule, RuleSpec, Verdict,
};
pub use phrases::{PhraseBank, PhraseMode, PhraseSet};

/// Tokens per oracle block (one block per attribute).
pub const ORACLE_BLOCK: usize = 4;

/// Oracle output length: nine blocks of four tokens.
pub const ORACLE_SPEECH_LEN: usize = ATTRIBUTE_COUNT * ORACLE_BLOCK;

/// Tokens in a block that must agree for the block to decode.
pub const ORACLE_MAJORITY: usize = 3;

/// Corpus split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    HeldOut,
    OodParaphrase,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOut => "held_out",
            Split::OodParaphrase => "ood_paraphrase",
        }
    }
}

/// One corpus record: instruction text, its attribute vector, and the oracle
/// speech tokens for that vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub id: String,
    pub instruction: String,
    pub attributes: AttributeVector,
    pub speech: Vec<u32>,
    pub split: Split,
}

/// Encodes an attribute vector into speech tokens: block `k` holds the global
/// value index of attribute `k`, repeated four times.
pub fn oracle_encode(attrs: &AttributeVector) -> Vec<u32> {
    let mut out = Vec::with_capacity(ORACLE_SPEECH_LEN);
    for v in attrs.values() {
        let g = v.global_index();
        out.extend(std::iter::repeat(g).take(ORACLE_BLOCK));
    }
    out
}

/// Per-attribute oracle decode outcome. `None` marks a failed block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleDecode {
    pub levels: [Option<u8>; ATTRIBUTE_COUNT],
}

impl OracleDecode {
    pub fn all_failed() -> OracleDecode {
        OracleDecode {
            levels: [None; ATTRIBUTE_COUNT],
        }
    }

    pub fn failed_count(&self) -> usize {
        self.levels.iter().filter(|l| l.is_none()).count()
    }

    /// Reassembles a full vector when every block decoded.
    pub fn vector(&self) -> Option<AttributeVector> {
        let mut levels = [0u8; ATTRIBUTE_COUNT];
        for (i, l) in self.levels.iter().enumerate() {
            levels[i] = (*l)?;
        }
        AttributeVector::new(levels).ok()
    }
}

/// Decodes speech tokens back to attribute levels. A block decodes when at
/// least three of its four tokens agree and the agreed value lies inside that
/// attribute's slice of the global enumeration; anything else fails that
/// attribute. A sequence of the wrong length fails everything. Failures are
/// data, not errors.
pub fn oracle_decode(speech: &[u32]) -> OracleDecode {
    if speech.len() != ORACLE_SPEECH_LEN {
        return OracleDecode::all_failed();
    }
    let mut levels = [None; ATTRIBUTE_COUNT];
    for (k, attr) in AttributeId::ALL.into_iter().enumerate() {
        let block = &speech[k * ORACLE_BLOCK..(k + 1) * ORACLE_BLOCK];
        let mut majority: Option<u32> = None;
        for &candidate in block {
            if block.iter().filter(|&&t| t == candidate).count() >= ORACLE_MAJORITY {
                majority = Some(candidate);
                break;
            }
        }
        if let Some(value) = majority {
            if let Some(av) = AttributeValue::from_global_index(value) {
                if av.attribute() == attr {
                    levels[k] = Some(av.level());
                }
            }
        }
    }
    OracleDecode { levels }
}

/// Renders a natural-language instruction for `attrs`: one phrase per
/// attribute from the mode's pool, in a seeded permutation, joined into one
/// sentence. Deterministic in `(attrs, seed, mode)`.
pub fn render_instruction(
    attrs: &AttributeVector,
    bank: &PhraseBank,
    seed: u64,
    mode: PhraseMode,
) -> Result<String> {
    let mode_tag = match mode {
        PhraseMode::Train => tag("train"),
        PhraseMode::Ood => tag("ood"),
    };
    let attr_word = attrs
        .values()
        .fold(0u64, |acc, v| acc * 64 + v.global_index() as u64);
    let mut rng = Rng::new(derive_seed(seed, &[tag("render"), mode_tag, attr_word]));

    let mut parts = Vec::with_capacity(ATTRIBUTE_COUNT);
    for v in attrs.values() {
        let variants = bank.variants(v, mode)?;
        if variants.is_empty() {
            return Err(Error::IncompletePhraseBank(format!(
                "{} level {}",
                v.attribute().name(),
                v.level()
            )));
        }
        parts.push(variants[rng.below(variants.len() as u64) as usize].clone());
    }
    rng.shuffle(&mut parts);

    let mut text = String::from("Design a voice: ");
    let last = parts.len() - 1;
    for (i, p) in parts.iter().enumerate() {
        if i == 0 {
            text.push_str(p);
        } else if i == last {
            text.push_str(" and ");
            text.push_str(p);
        } else {
            text.push_str(", ");
            text.push_str(p);
        }
    }
    text.push('.');
    Ok(text)
}

/// Corpus generation sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_held_out: usize,
    pub n_ood: usize,
}

/// Total number of distinct attribute vectors (5^6 * 2 * 4 * 8).
pub fn attribute_space_size() -> u64 {
    AttributeId::ALL
        .iter()
        .map(|a| a.level_count() as u64)
        .product()
}

/// Generates the synthetic corpus. Train and held-out vectors are sampled
/// uniformly without replacement and are mutually disjoint; ood records reuse
/// held-out vectors with ood phrasing. Every record passes the caption
/// filters and satisfies `speech == oracle_encode(attributes)`.
pub fn generate_corpus(
    spec: &CorpusSpec,
    seed: u64,
    bank: &PhraseBank,
    rules: &[FilterRule],
) -> Result<Vec<InstructionRecord>> {
    if spec.n_train == 0 || spec.n_held_out == 0 || spec.n_ood == 0 {
        return Err(Error::InvalidConfig(
            "corpus counts must all be positive".into(),
        ));
    }
    let distinct = (spec.n_train + spec.n_held_out) as u64;
    if distinct > attribute_space_size() {
        return Err(Error::CorpusTooLarge(format!(
            "{distinct} distinct vectors requested, space holds {}",
            attribute_space_size()
        )));
    }

    let mut rng = Rng::new(derive_seed(seed, &[tag("corpus")]));
    let mut seen = std::collections::HashSet::new();
    let mut train_vecs = Vec::with_capacity(spec.n_train);
    let mut held_vecs = Vec::with_capacity(spec.n_held_out);
    while train_vecs.len() < spec.n_train {
        let v = AttributeVector::sample(&mut rng);
        if seen.insert(v) {
            train_vecs.push(v);
        }
    }
    while held_vecs.len() < spec.n_held_out {
        let v = AttributeVector::sample(&mut rng);
        if seen.insert(v) {
            held_vecs.push(v);
        }
    }

    let mut records = Vec::with_capacity(spec.n_train + spec.n_held_out + spec.n_ood);
    let mut emit = |attrs: AttributeVector,
                    split: Split,
                    idx: usize,
                    mode: PhraseMode|
     -> Result<()> {
        let rec_seed = derive_seed(seed, &[tag(split.name()), idx as u64]);
        let instruction = render_instruction(&attrs, bank, rec_seed, mode)?;
        match filter_caption(&instruction, rules) {
            Verdict::Accept => {}
            Verdict::Reject(reason) => {
                return Err(Error::InvalidRecord(format!(
                    "generated instruction failed filter {reason:?}: {instruction:?}"
                )))
            }
        }
        records.push(InstructionRecord {
            id: format!("{}-{idx:05}", split.name()),
            instruction,
            attributes: attrs,
            speech: oracle_encode(&attrs),
            split,
        });
        Ok(())
    };

    for (i, v) in train_vecs.iter().enumerate() {
        emit(*v, Split::Train, i, PhraseMode::Train)?;
    }
    for (i, v) in held_vecs.iter().enumerate() {
        emit(*v, Split::HeldOut, i, PhraseMode::Train)?;
    }
    for i in 0..spec.n_ood {
        let v = held_vecs[i % held_vecs.len()];
        emit(v, Split::OodParaphrase, i, PhraseMode::Ood)?;
    }
    Ok(records)
}

/// Writes records as JSON lines.
pub fn write_jsonl<W: Write>(records: &[InstructionRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines corpus, validating each record.
pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<InstructionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: InstructionRecord = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidRecord(format!("line {}: {e}", lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
