//! Autoregressive decoding with an optional structural guard.
//!
//! The guard masks each step's logits to the tokens that are legal for the
//! current segment: after COT_START only attribute tokens (in canonical
//! attribute order, each attribute at most once) or COT_END; after COT_END
//! only SPEECH_START; after SPEECH_START only speech tokens or EOS. With the
//! guard on, any checkpoint — trained or not — produces a parseable
//! continuation. The guard can be disabled to observe raw behavior.

use super::net::{forward_one, forward_prompt, KvCache};
use super::Model;
use crate::rng::{derive_seed, tag, Rng};
use crate::schema::AttributeValue;
use crate::sequencer::{Special, TokenKind};
use crate::Result;

/// Decoding mode. Temperature zero degenerates to greedy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Temperature { tau: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
enum GuardState {
    Cot { next_attr: usize },
    AwaitSpeechStart,
    Speech,
}

fn initial_state(model: &Model, prompt: &[u32]) -> GuardState {
    for &id in prompt.iter().rev() {
        if let TokenKind::Special(s) = model.vocab.kind(id) {
            return match s {
                Special::CotEnd => GuardState::AwaitSpeechStart,
                Special::SpeechStart => GuardState::Speech,
                _ => GuardState::Cot { next_attr: 0 },
            };
        }
    }
    GuardState::Cot { next_attr: 0 }
}

fn allowed_ids(model: &Model, state: GuardState) -> Vec<u32> {
    let v = &model.vocab;
    match state {
        GuardState::Cot { next_attr } => {
            let mut ids = Vec::with_capacity(45);
            for g in 0..crate::schema::ATTRIBUTE_VALUE_COUNT as u32 {
                let av = AttributeValue::from_global_index(g).unwrap();
                if av.attribute().index() >= next_attr {
                    ids.push(crate::schema::attribute_token_id(av));
                }
            }
            ids.push(v.special(Special::CotEnd));
            ids
        }
        GuardState::AwaitSpeechStart => vec![v.special(Special::SpeechStart)],
        GuardState::Speech => {
            let base = v.speech_base();
            let mut ids: Vec<u32> = (base..base + v.speech_tokens()).collect();
            ids.push(v.special(Special::Eos));
            ids
        }
    }
}

fn advance(model: &Model, state: GuardState, token: u32) -> GuardState {
    match (state, model.vocab.kind(token)) {
        (GuardState::Cot { .. }, TokenKind::Attribute(av)) => GuardState::Cot {
            next_attr: av.attribute().index() + 1,
        },
        (GuardState::Cot { .. }, TokenKind::Special(Special::CotEnd)) => {
            GuardState::AwaitSpeechStart
        }
        (GuardState::AwaitSpeechStart, TokenKind::Special(Special::SpeechStart)) => {
            GuardState::Speech
        }
        (s, _) => s,
    }
}

/// Greedy pick: maximum logit, ties broken by the lowest token id.
fn argmax(logits: &[f32], candidates: &[u32]) -> u32 {
    let mut best = candidates[0];
    let mut best_v = logits[best as usize];
    for &c in &candidates[1..] {
        let lv = logits[c as usize];
        if lv > best_v {
            best = c;
            best_v = lv;
        }
    }
    best
}

fn sample(logits: &[f32], candidates: &[u32], tau: f64, rng: &mut Rng) -> u32 {
    let mut maxv = f64::NEG_INFINITY;
    for &c in candidates {
        maxv = maxv.max(logits[c as usize] as f64);
    }
    let mut probs: Vec<f64> = candidates
        .iter()
        .map(|&c| ((logits[c as usize] as f64 - maxv) / tau).exp())
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let mut dart = rng.next_f64();
    for (i, &p) in probs.iter().enumerate() {
        dart -= p;
        if dart <= 0.0 {
            return candidates[i];
        }
    }
    *candidates.last().unwrap()
}

/// Generates a continuation of the prompt, returning only the new tokens
/// (including the terminating EOS when one is produced). Decoding stops at
/// EOS, after `max_new` tokens, or when the context is exhausted.
pub fn generate(
    model: &Model,
    prompt: &[u32],
    mode: DecodeMode,
    max_new: usize,
    structural_guard: bool,
) -> Result<Vec<u32>> {
    let layout = model.layout();
    let mut cache: KvCache<f32> = KvCache::new(&model.config);
    let mut logits = forward_prompt(&model.config, &layout, &model.params, prompt, &mut cache)?;

    let mut rng = match mode {
        DecodeMode::Temperature { seed, .. } => Rng::new(derive_seed(seed, &[tag("decode")])),
        DecodeMode::Greedy => Rng::new(0),
    };
    let eos = model.vocab.special(Special::Eos);
    let mut state = initial_state(model, prompt);
    let mut out = Vec::with_capacity(max_new);

    let all_ids: Vec<u32> = (0..model.vocab.size()).collect();
    for _ in 0..max_new {
        let candidates = if structural_guard {
            allowed_ids(model, state)
        } else {
            all_ids.clone()
        };
        let token = match mode {
            DecodeMode::Greedy => argmax(&logits, &candidates),
            DecodeMode::Temperature { tau, .. } => {
                if tau <= f64::EPSILON {
                    argmax(&logits, &candidates)
                } else {
                    sample(&logits, &candidates, tau, &mut rng)
                }
            }
        };
        out.push(token);
        if token == eos {
            break;
        }
        state = advance(model, state, token);
        let pos = cache.len();
        if pos >= model.config.context_length {
            break;
        }
        logits = forward_one(&model.config, &layout, &model.params, token, pos, &mut cache)?;
    }
    Ok(out)
}
