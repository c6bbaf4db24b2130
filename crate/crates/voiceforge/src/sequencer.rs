//! Unified token sequences: vocabulary layout, training sequences, prompts.
//!
//! The vocabulary is laid out contiguously: 256 byte-level text tokens, 44
//! attribute tokens, `S` speech tokens, then seven specials. A training
//! sequence runs
//!
//! ```text
//! BOS INSTR_START <text> INSTR_END COT_START <attrs> COT_END SPEECH_START <speech> EOS
//! ```
//!
//! with per-position loss weights: text targets carry `lambda_text`, the CoT
//! and speech region carries 1.0, and everything before the text carries 0.
//! Attribute tokens are independently dropped from the CoT region with a
//! configurable probability, shortening the sequence.

use serde::{Deserialize, Serialize};

use crate::corpus::InstructionRecord;
use crate::error::Error;
use crate::rng::{derive_seed, tag, Rng};
use crate::schema::{attribute_value_of_token, AttributeValue};
use crate::Result;

/// Version of the id layout below; checkpoints refuse to load against a
/// sidecar with a different version.
pub const LAYOUT_VERSION: u32 = 1;

/// Default number of speech tokens in the vocabulary. The oracle only emits
/// values 0..44; the remainder exercises the "wrong token" space.
pub const DEFAULT_SPEECH_TOKENS: u32 = 64;

/// The seven special tokens, in id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Special {
    Bos,
    Eos,
    InstrStart,
    InstrEnd,
    CotStart,
    CotEnd,
    SpeechStart,
}

impl Special {
    pub const ALL: [Special; 7] = [
        Special::Bos,
        Special::Eos,
        Special::InstrStart,
        Special::InstrEnd,
        Special::CotStart,
        Special::CotEnd,
        Special::SpeechStart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Special::Bos => "BOS",
            Special::Eos => "EOS",
            Special::InstrStart => "INSTR_START",
            Special::InstrEnd => "INSTR_END",
            Special::CotStart => "COT_START",
            Special::CotEnd => "COT_END",
            Special::SpeechStart => "SPEECH_START",
        }
    }
}

/// Token classification under a vocabulary layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Text(u8),
    Attribute(AttributeValue),
    Speech(u32),
    Special(Special),
    Invalid,
}

/// Vocabulary layout parameterized by the speech-token count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    speech_tokens: u32,
}

impl Vocabulary {
    pub const TEXT_TOKENS: u32 = 256;
    pub const ATTR_TOKENS: u32 = 44;
    pub const SPECIALS: u32 = 7;

    pub fn new(speech_tokens: u32) -> Result<Vocabulary> {
        if speech_tokens < 44 {
            return Err(Error::InvalidConfig(format!(
                "speech token count {speech_tokens} cannot hold the 44 oracle values"
            )));
        }
        Ok(Vocabulary { speech_tokens })
    }

    pub fn speech_tokens(&self) -> u32 {
        self.speech_tokens
    }

    pub fn size(&self) -> u32 {
        Self::TEXT_TOKENS + Self::ATTR_TOKENS + self.speech_tokens + Self::SPECIALS
    }

    pub fn speech_base(&self) -> u32 {
        Self::TEXT_TOKENS + Self::ATTR_TOKENS
    }

    fn special_base(&self) -> u32 {
        self.speech_base() + self.speech_tokens
    }

    pub fn special(&self, s: Special) -> u32 {
        self.special_base() + s as u32
    }

    /// Vocabulary id for a raw speech-token value.
    pub fn speech_id(&self, value: u32) -> Result<u32> {
        if value >= self.speech_tokens {
            return Err(Error::InvalidRecord(format!(
                "speech token value {value} outside 0..{}",
                self.speech_tokens
            )));
        }
        Ok(self.speech_base() + value)
    }

    pub fn kind(&self, id: u32) -> TokenKind {
        if id < Self::TEXT_TOKENS {
            TokenKind::Text(id as u8)
        } else if id < self.speech_base() {
            match attribute_value_of_token(id) {
                Some(v) => TokenKind::Attribute(v),
                None => TokenKind::Invalid,
            }
        } else if id < self.special_base() {
            TokenKind::Speech(id - self.speech_base())
        } else if id < self.size() {
            TokenKind::Special(Special::ALL[(id - self.special_base()) as usize])
        } else {
            TokenKind::Invalid
        }
    }

    pub fn layout(&self) -> VocabularyLayout {
        VocabularyLayout {
            layout_version: LAYOUT_VERSION,
            text_tokens: Self::TEXT_TOKENS,
            attribute_tokens: Self::ATTR_TOKENS,
            speech_tokens: self.speech_tokens,
            specials: Special::ALL.iter().map(|s| s.name().to_string()).collect(),
            total: self.size(),
        }
    }
}

/// Serialized vocabulary layout, written as a JSON sidecar next to every
/// checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyLayout {
    pub layout_version: u32,
    pub text_tokens: u32,
    pub attribute_tokens: u32,
    pub speech_tokens: u32,
    pub specials: Vec<String>,
    pub total: u32,
}

impl VocabularyLayout {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("layout serializes")
    }

    pub fn from_json(s: &str) -> Result<VocabularyLayout> {
        Ok(serde_json::from_str(s)?)
    }

    /// Rebuilds the vocabulary, refusing versions or shapes this build does
    /// not understand.
    pub fn open(&self) -> Result<Vocabulary> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::VocabularyMismatch(format!(
                "layout version {} != supported {LAYOUT_VERSION}",
                self.layout_version
            )));
        }
        let v = Vocabulary::new(self.speech_tokens)?;
        let expect = v.layout();
        if *self != expect {
            return Err(Error::VocabularyMismatch(
                "layout fields disagree with this build".into(),
            ));
        }
        Ok(v)
    }
}

/// Byte-level text encoding: one token per byte, ids 0..256. Lossless.
pub fn encode_text(text: &str) -> Vec<u32> {
    text.bytes().map(|b| b as u32).collect()
}

/// Inverse of [`encode_text`] on the text block; fails on non-text ids.
pub fn decode_text(ids: &[u32]) -> Result<String> {
    let bytes = text_bytes(ids)?;
    String::from_utf8(bytes)
        .map_err(|e| Error::InvalidRecord(format!("decoded text is not UTF-8: {e}")))
}

pub fn text_bytes(ids: &[u32]) -> Result<Vec<u8>> {
    ids.iter()
        .map(|&id| {
            if id < Vocabulary::TEXT_TOKENS {
                Ok(id as u8)
            } else {
                Err(Error::InvalidRecord(format!("id {id} is not a text token")))
            }
        })
        .collect()
}

/// Content spans of a built sequence (the tokens between the specials).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segments {
    pub instruction: std::ops::Range<usize>,
    pub cot: std::ops::Range<usize>,
    pub speech: std::ops::Range<usize>,
}

/// A token sequence with per-position loss weights. `loss_weight[i]` weights
/// the prediction of `ids[i]` from position `i-1`; index 0 is never a target.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub loss_weight: Vec<f32>,
    pub segments: Segments,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Knobs for building training sequences.
#[derive(Debug, Clone)]
pub struct SequenceOptions {
    /// Independent removal probability for each CoT attribute token.
    pub dropout_p: f64,
    /// Loss weight on instruction-text targets.
    pub lambda_text: f32,
    /// When false the CoT segment is omitted entirely (COT_START directly
    /// followed by COT_END).
    pub cot_enabled: bool,
    /// Optional grounding text placed inside the instruction segment ahead of
    /// the instruction, formatted exactly like inference-time grounding.
    /// Reference bytes are conditioning only and carry zero loss weight.
    pub reference: Option<String>,
    /// Hard cap on sequence length.
    pub context_length: usize,
}

impl SequenceOptions {
    pub fn plain(context_length: usize) -> SequenceOptions {
        SequenceOptions {
            dropout_p: 0.0,
            lambda_text: 1.0,
            cot_enabled: true,
            reference: None,
            context_length,
        }
    }
}

fn push_text(ids: &mut Vec<u32>, weights: &mut Vec<f32>, text: &str, w: f32) {
    for b in text.bytes() {
        ids.push(b as u32);
        weights.push(w);
    }
}

/// Builds one training sequence for a record. Layout, dropout, and weights
/// are described at the module level. Deterministic in `(record, options,
/// seed)`.
pub fn build_sequence(
    vocab: &Vocabulary,
    record: &InstructionRecord,
    options: &SequenceOptions,
    seed: u64,
) -> Result<TokenSequence> {
    if !(0.0..1.0).contains(&options.dropout_p) {
        return Err(Error::InvalidConfig(format!(
            "dropout_p {} outside [0, 1)",
            options.dropout_p
        )));
    }
    if options.lambda_text < 0.0 {
        return Err(Error::InvalidConfig("lambda_text must be >= 0".into()));
    }

    let mut ids = Vec::with_capacity(options.context_length.min(1024));
    let mut weights = Vec::with_capacity(options.context_length.min(1024));

    ids.push(vocab.special(Special::Bos));
    weights.push(0.0);
    ids.push(vocab.special(Special::InstrStart));
    weights.push(0.0);

    let text_start = ids.len();
    if let Some(reference) = &options.reference {
        push_text(&mut ids, &mut weights, "Reference: ", 0.0);
        push_text(&mut ids, &mut weights, reference, 0.0);
        push_text(&mut ids, &mut weights, "\n", 0.0);
    }
    push_text(&mut ids, &mut weights, "Instruction: ", options.lambda_text);
    push_text(
        &mut ids,
        &mut weights,
        &record.instruction,
        options.lambda_text,
    );
    let text_end = ids.len();

    ids.push(vocab.special(Special::InstrEnd));
    weights.push(options.lambda_text);

    ids.push(vocab.special(Special::CotStart));
    weights.push(1.0);

    let cot_start = ids.len();
    if options.cot_enabled {
        let mut rng = Rng::new(derive_seed(seed, &[tag("cot-dropout")]));
        for value in record.attributes.values() {
            let keep = !rng.chance(options.dropout_p);
            if keep {
                ids.push(crate::schema::attribute_token_id(value));
                weights.push(1.0);
            }
        }
    }
    let cot_end = ids.len();

    ids.push(vocab.special(Special::CotEnd));
    weights.push(1.0);
    ids.push(vocab.special(Special::SpeechStart));
    weights.push(1.0);

    let speech_start = ids.len();
    for &value in &record.speech {
        ids.push(vocab.speech_id(value)?);
        weights.push(1.0);
    }
    let speech_end = ids.len();

    ids.push(vocab.special(Special::Eos));
    weights.push(1.0);

    if ids.len() > options.context_length {
        return Err(Error::ContextOverflow {
            len: ids.len(),
            context: options.context_length,
        });
    }

    Ok(TokenSequence {
        ids,
        loss_weight: weights,
        segments: Segments {
            instruction: text_start..text_end,
            cot: cot_start..cot_end,
            speech: speech_start..speech_end,
        },
    })
}

/// Builds an inference prompt: the sequence prefix ending immediately after
/// COT_START. Grounding texts are injected ahead of the instruction in the
/// order given (similarity order); when the prompt exceeds `max_len`,
/// grounding texts are dropped from the front of the list, never the
/// instruction.
pub fn build_prompt(
    vocab: &Vocabulary,
    instruction: &str,
    grounding: &[String],
    max_len: usize,
) -> Result<TokenSequence> {
    let mut keep = grounding.len();
    loop {
        let kept = &grounding[grounding.len() - keep..];
        let mut ids = Vec::new();
        ids.push(vocab.special(Special::Bos));
        ids.push(vocab.special(Special::InstrStart));
        let text_start = ids.len();
        for text in kept {
            for b in "Reference: ".bytes() {
                ids.push(b as u32);
            }
            for b in text.bytes() {
                ids.push(b as u32);
            }
            ids.push(b'\n' as u32);
        }
        for b in "Instruction: ".bytes() {
            ids.push(b as u32);
        }
        for b in instruction.bytes() {
            ids.push(b as u32);
        }
        let text_end = ids.len();
        ids.push(vocab.special(Special::InstrEnd));
        ids.push(vocab.special(Special::CotStart));

        if ids.len() <= max_len {
            let n = ids.len();
            return Ok(TokenSequence {
                loss_weight: vec![0.0; n],
                segments: Segments {
                    instruction: text_start..text_end,
                    cot: n..n,
                    speech: n..n,
                },
                ids,
            });
        }
        if keep == 0 {
            return Err(Error::ContextOverflow {
                len: ids.len(),
                context: max_len,
            });
        }
        keep -= 1;
    }
}

/// A full training sequence parsed back by its special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSequence {
    pub instruction_bytes: Vec<u8>,
    pub cot: Vec<AttributeValue>,
    pub speech_values: Vec<u32>,
}

/// Strictly parses a complete sequence; `None` when the special-token
/// skeleton is malformed or a segment holds tokens of the wrong class.
pub fn parse_sequence(vocab: &Vocabulary, ids: &[u32]) -> Option<ParsedSequence> {
    let mut it = ids.iter().copied().peekable();
    if it.next()? != vocab.special(Special::Bos) {
        return None;
    }
    if it.next()? != vocab.special(Special::InstrStart) {
        return None;
    }
    let mut instruction_bytes = Vec::new();
    loop {
        let id = it.next()?;
        if id == vocab.special(Special::InstrEnd) {
            break;
        }
        match vocab.kind(id) {
            TokenKind::Text(b) => instruction_bytes.push(b),
            _ => return None,
        }
    }
    if it.next()? != vocab.special(Special::CotStart) {
        return None;
    }
    let tail: Vec<u32> = it.collect();
    let cont = parse_continuation(vocab, &tail)?;
    Some(ParsedSequence {
        instruction_bytes,
        cot: cont.cot,
        speech_values: cont.speech_values,
    })
}

/// The part of a sequence the model generates at inference time (everything
/// after COT_START).
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedContinuation {
    pub cot: Vec<AttributeValue>,
    pub speech_values: Vec<u32>,
    pub terminated: bool,
}

/// Parses a generated continuation: attribute tokens, COT_END, SPEECH_START,
/// speech tokens, then EOS (or running out of budget). `None` on any
/// structural violation.
pub fn parse_continuation(vocab: &Vocabulary, ids: &[u32]) -> Option<ParsedContinuation> {
    let mut it = ids.iter().copied();
    let mut cot = Vec::new();
    loop {
        let id = it.next()?;
        if id == vocab.special(Special::CotEnd) {
            break;
        }
        match vocab.kind(id) {
            TokenKind::Attribute(v) => cot.push(v),
            _ => return None,
        }
    }
    if it.next()? != vocab.special(Special::SpeechStart) {
        return None;
    }
    let mut speech_values = Vec::new();
    let mut terminated = false;
    for id in it {
        if id == vocab.special(Special::Eos) {
            terminated = true;
            break;
        }
        match vocab.kind(id) {
            TokenKind::Speech(v) => speech_values.push(v),
            _ => return None,
        }
    }
    Some(ParsedContinuation {
        cot,
        speech_values,
        terminated,
    })
}
