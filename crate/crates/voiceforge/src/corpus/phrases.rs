//! Phrase bank: natural-language fragments for every attribute value.
//!
//! Each (attribute, level) owns two disjoint variant pools: `train` phrases
//! used for in-domain instructions and `ood` phrases used for paraphrase
//! stress tests. Phrases are chosen so that an instruction can be parsed back
//! to its attribute vector by scanning: within an attribute, no phrase of one
//! level contains a phrase of another level (word-boundary aware), and no
//! phrase belongs to two values.

use crate::error::Error;
use crate::schema::{AttributeId, AttributeValue};
use crate::Result;

/// Variant selection pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhraseMode {
    Train,
    Ood,
}

/// Variant pools for one attribute value.
#[derive(Debug, Clone)]
pub struct PhraseSet {
    pub train: Vec<String>,
    pub ood: Vec<String>,
}

/// Phrases for all 44 attribute values, indexed by global value index.
#[derive(Debug, Clone)]
pub struct PhraseBank {
    sets: Vec<Option<PhraseSet>>,
}

impl PhraseBank {
    /// Builds a bank from per-value pools; invariants are checked eagerly.
    pub fn new(entries: Vec<(AttributeValue, PhraseSet)>) -> Result<PhraseBank> {
        let mut sets: Vec<Option<PhraseSet>> = vec![None; crate::schema::ATTRIBUTE_VALUE_COUNT];
        for (v, set) in entries {
            sets[v.global_index() as usize] = Some(set);
        }
        let bank = PhraseBank { sets };
        bank.validate()?;
        Ok(bank)
    }

    /// The built-in bank covering every value.
    pub fn default_bank() -> PhraseBank {
        let mut entries = Vec::new();
        for a in AttributeId::ALL {
            let table = default_table(a);
            assert_eq!(table.len(), a.level_count() as usize);
            for (lvl, (train, ood)) in table.iter().enumerate() {
                let v = AttributeValue::new(a, lvl as u8).expect("level in range");
                entries.push((
                    v,
                    PhraseSet {
                        train: train.iter().map(|s| s.to_string()).collect(),
                        ood: ood.iter().map(|s| s.to_string()).collect(),
                    },
                ));
            }
        }
        PhraseBank::new(entries).expect("default bank is valid")
    }

    pub fn set(&self, v: AttributeValue) -> Result<&PhraseSet> {
        self.sets[v.global_index() as usize]
            .as_ref()
            .ok_or_else(|| {
                Error::IncompletePhraseBank(format!(
                    "{} level {}",
                    v.attribute().name(),
                    v.level()
                ))
            })
    }

    pub fn variants(&self, v: AttributeValue, mode: PhraseMode) -> Result<&[String]> {
        let set = self.set(v)?;
        Ok(match mode {
            PhraseMode::Train => &set.train,
            PhraseMode::Ood => &set.ood,
        })
    }

    /// Scans `text` for this value's phrases (either pool), word-boundary
    /// aware.
    pub fn mentions(&self, text: &str, v: AttributeValue) -> bool {
        if let Some(set) = &self.sets[v.global_index() as usize] {
            set.train
                .iter()
                .chain(set.ood.iter())
                .any(|p| contains_bounded(text, p))
        } else {
            false
        }
    }

    /// Recovers the attribute vector mentioned by `text`, or `None` when any
    /// attribute is missing or mentioned at more than one level.
    pub fn recover(&self, text: &str) -> Option<crate::schema::AttributeVector> {
        let mut levels = [0u8; crate::schema::ATTRIBUTE_COUNT];
        for (i, a) in AttributeId::ALL.into_iter().enumerate() {
            let mut found: Option<u8> = None;
            for lvl in 0..a.level_count() {
                let v = AttributeValue::new(a, lvl).ok()?;
                if self.mentions(text, v) {
                    if found.is_some() {
                        return None;
                    }
                    found = Some(lvl);
                }
            }
            levels[i] = found?;
        }
        crate::schema::AttributeVector::new(levels).ok()
    }

    fn validate(&self) -> Result<()> {
        let mut all: Vec<(String, u32)> = Vec::new();
        for (g, set) in self.sets.iter().enumerate() {
            let Some(set) = set else { continue };
            let v = AttributeValue::from_global_index(g as u32).unwrap();
            if set.train.len() < 3 || set.ood.len() < 2 {
                return Err(Error::IncompletePhraseBank(format!(
                    "{} level {} needs >=3 train and >=2 ood variants",
                    v.attribute().name(),
                    v.level()
                )));
            }
            for p in set.train.iter().chain(set.ood.iter()) {
                if p.is_empty() {
                    return Err(Error::IncompletePhraseBank("empty phrase".into()));
                }
                all.push((p.clone(), g as u32));
            }
            for t in &set.train {
                if set.ood.contains(t) {
                    return Err(Error::IncompletePhraseBank(format!(
                        "phrase {t:?} appears in both train and ood pools"
                    )));
                }
            }
        }
        // No phrase may belong to two values, and within an attribute no
        // phrase of one level may appear inside a phrase of another level.
        for (i, (pa, ga)) in all.iter().enumerate() {
            for (pb, gb) in all.iter().skip(i + 1) {
                if ga == gb && pa == pb {
                    return Err(Error::IncompletePhraseBank(format!(
                        "duplicate phrase {pa:?}"
                    )));
                }
                if ga != gb && pa == pb {
                    return Err(Error::IncompletePhraseBank(format!(
                        "phrase {pa:?} maps to two values"
                    )));
                }
                let va = AttributeValue::from_global_index(*ga).unwrap();
                let vb = AttributeValue::from_global_index(*gb).unwrap();
                if va.attribute() == vb.attribute()
                    && va.level() != vb.level()
                    && (contains_bounded(pa, pb) || contains_bounded(pb, pa))
                {
                    return Err(Error::IncompletePhraseBank(format!(
                        "ambiguous phrases {pa:?} / {pb:?} across levels of {}",
                        va.attribute().name()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

/// Substring search requiring non-word (or edge) context on both sides, so
/// "male voice" is not found inside "female voice".
pub fn contains_bounded(text: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let t = text.as_bytes();
    let n = needle.as_bytes();
    let mut start = 0;
    while start + n.len() <= t.len() {
        match text[start..].find(needle) {
            None => return false,
            Some(off) => {
                let i = start + off;
                let left_ok = i == 0 || !is_word_byte(t[i - 1]) || !is_word_byte(n[0]);
                let end = i + n.len();
                let right_ok =
                    end == t.len() || !is_word_byte(t[end]) || !is_word_byte(n[n.len() - 1]);
                if left_ok && right_ok {
                    return true;
                }
                start = i + 1;
            }
        }
    }
    false
}

/// Marker terms per level, used to build the default contradiction filter
/// rules. Each marker is either a bare level stem (globally unique across the
/// bank) or an anchored compound, so a single well-formed instruction never
/// carries markers of two levels of the same attribute.
pub fn contradiction_markers(attribute: AttributeId) -> &'static [&'static [&'static str]] {
    match attribute {
        AttributeId::PitchMean => &[
            &["rumbling", "bass"],
            &["lowered", "low-pitched", "deep"],
            &["mid-range"],
            &["elevated", "high-pitched"],
            &["piercing", "shrill"],
        ],
        AttributeId::PitchStd => &[
            &["monotone", "flat"],
            &["subdued", "subtle"],
            &["balanced"],
            &["animated", "lively"],
            &["sweeping", "wild"],
        ],
        AttributeId::EnergyMean => &[
            &["depleted", "faint"],
            &["mellow", "low-energy"],
            &["moderate"],
            &["vigorous", "energetic"],
            &["explosive", "fierce"],
        ],
        AttributeId::EnergyStd => &[
            &["unwavering", "steady"],
            &["smoothed", "gentle"],
            &["middling"],
            &["surging", "punchy"],
            &["turbulent", "stormy", "volcanic"],
        ],
        AttributeId::SpeakingRate => &[
            &["crawling", "glacial"],
            &["leisurely", "unhurried"],
            &["measured"],
            &["hurried", "brisk"],
            &["breakneck", "racing"],
        ],
        AttributeId::Loudness => &[
            &["whispered", "whisper", "hushed"],
            &["muffled", "quiet"],
            &["mid-level"],
            &["amplified", "loud", "loudly"],
            &["thunderous", "booming", "deafening"],
        ],
        AttributeId::Gender => &[
            &["male voice", "man's voice", "male timbre", "masculine", "male-voiced"],
            &[
                "female voice",
                "woman's voice",
                "female timbre",
                "feminine",
                "female-voiced",
            ],
        ],
        AttributeId::Age => &[
            &["child", "kid", "childlike"],
            &["youthful", "teenage"],
            &["midlife", "middle-aged"],
            &["elderly", "senior"],
        ],
        AttributeId::Emotion => &[
            &["neutral", "impassive"],
            &["cheerful", "happy", "joyful"],
            &["sorrowful", "sad", "mournful"],
            &["furious", "angry", "irate"],
            &["fearful", "anxious", "frightened"],
            &["surprised", "surprise", "astonished"],
            &["tranquil", "calm", "serene"],
            &["disgusted", "disgust", "revolted"],
        ],
    }
}

type LevelPhrases = (&'static [&'static str], &'static [&'static str]);

// Variant scheme per value, with S the level's stem word, N the attribute
// noun, and N2 a secondary noun: train pools are {"a S N", "S N", "a S N2"},
// ood pools are {"N so S", "S-N"}. Stems are long words unique across the
// whole bank, so a train-mode and an ood-mode rendering of the same vector
// share stem+noun character trigrams no matter which variants the seeds pick,
// while renderings of different levels share only the noun — the margin the
// retrieval layer depends on. The ood forms break the exact train byte
// sequences (reordering or hyphenating the core) so paraphrases stay novel to
// a byte-level reader.
fn default_table(attribute: AttributeId) -> &'static [LevelPhrases] {
    match attribute {
        AttributeId::PitchMean => &[
            (
                &["a rumbling pitch", "rumbling pitch", "a rumbling tone"],
                &["pitch so rumbling", "rumbling-pitch"],
            ),
            (
                &["a lowered pitch", "lowered pitch", "a lowered tone"],
                &["pitch so lowered", "lowered-pitch"],
            ),
            (
                &["a mid-range pitch", "mid-range pitch", "a mid-range tone"],
                &["pitch so mid-range", "mid-range-pitch"],
            ),
            (
                &["an elevated pitch", "elevated pitch", "an elevated tone"],
                &["pitch so elevated", "elevated-pitch"],
            ),
            (
                &["a piercing pitch", "piercing pitch", "a piercing tone"],
                &["pitch so piercing", "piercing-pitch"],
            ),
        ],
        AttributeId::PitchStd => &[
            (
                &["a monotone melody", "monotone melody", "a monotone tune"],
                &["melody so monotone", "monotone-melody"],
            ),
            (
                &["a subdued melody", "subdued melody", "a subdued tune"],
                &["melody so subdued", "subdued-melody"],
            ),
            (
                &["a balanced melody", "balanced melody", "a balanced tune"],
                &["melody so balanced", "balanced-melody"],
            ),
            (
                &["an animated melody", "animated melody", "an animated tune"],
                &["melody so animated", "animated-melody"],
            ),
            (
                &["a sweeping melody", "sweeping melody", "a sweeping tune"],
                &["melody so sweeping", "sweeping-melody"],
            ),
        ],
        AttributeId::EnergyMean => &[
            (
                &["a depleted energy", "depleted energy", "a depleted drive"],
                &["energy so depleted", "depleted-energy"],
            ),
            (
                &["a mellow energy", "mellow energy", "a mellow drive"],
                &["energy so mellow", "mellow-energy"],
            ),
            (
                &["a moderate energy", "moderate energy", "a moderate drive"],
                &["energy so moderate", "moderate-energy"],
            ),
            (
                &["a vigorous energy", "vigorous energy", "a vigorous drive"],
                &["energy so vigorous", "vigorous-energy"],
            ),
            (
                &["an explosive energy", "explosive energy", "an explosive drive"],
                &["energy so explosive", "explosive-energy"],
            ),
        ],
        AttributeId::EnergyStd => &[
            (
                &["an unwavering force", "unwavering force", "an unwavering flow"],
                &["force so unwavering", "unwavering-force"],
            ),
            (
                &["a smoothed force", "smoothed force", "a smoothed flow"],
                &["force so smoothed", "smoothed-force"],
            ),
            (
                &["a middling force", "middling force", "a middling flow"],
                &["force so middling", "middling-force"],
            ),
            (
                &["a surging force", "surging force", "a surging flow"],
                &["force so surging", "surging-force"],
            ),
            (
                &["a turbulent force", "turbulent force", "a turbulent flow"],
                &["force so turbulent", "turbulent-force"],
            ),
        ],
        AttributeId::SpeakingRate => &[
            (
                &["a crawling pace", "crawling pace", "a crawling tempo"],
                &["pace so crawling", "crawling-pace"],
            ),
            (
                &["a leisurely pace", "leisurely pace", "a leisurely tempo"],
                &["pace so leisurely", "leisurely-pace"],
            ),
            (
                &["a measured pace", "measured pace", "a measured tempo"],
                &["pace so measured", "measured-pace"],
            ),
            (
                &["a hurried pace", "hurried pace", "a hurried tempo"],
                &["pace so hurried", "hurried-pace"],
            ),
            (
                &["a breakneck pace", "breakneck pace", "a breakneck tempo"],
                &["pace so breakneck", "breakneck-pace"],
            ),
        ],
        AttributeId::Loudness => &[
            (
                &["a whispered volume", "whispered volume", "a whispered sound"],
                &["volume so whispered", "whispered-volume"],
            ),
            (
                &["a muffled volume", "muffled volume", "a muffled sound"],
                &["volume so muffled", "muffled-volume"],
            ),
            (
                &["a mid-level volume", "mid-level volume", "a mid-level sound"],
                &["volume so mid-level", "mid-level-volume"],
            ),
            (
                &["an amplified volume", "amplified volume", "an amplified sound"],
                &["volume so amplified", "amplified-volume"],
            ),
            (
                &["a thunderous volume", "thunderous volume", "a thunderous sound"],
                &["volume so thunderous", "thunderous-volume"],
            ),
        ],
        AttributeId::Gender => &[
            (
                &["a male voice", "a man's voice", "a male timbre"],
                &["male voice overall", "a male-voiced tone"],
            ),
            (
                &["a female voice", "a woman's voice", "a female timbre"],
                &["female voice overall", "a female-voiced tone"],
            ),
        ],
        AttributeId::Age => &[
            (
                &["a child's voice", "a childlike voice", "a child speaker"],
                &["a voice so childlike", "child-voiced"],
            ),
            (
                &["a youthful voice", "youthful voice", "a youthful speaker"],
                &["a voice so youthful", "youthful-voiced"],
            ),
            (
                &["a midlife voice", "midlife voice", "a middle-aged voice"],
                &["a voice in midlife", "midlife-voiced"],
            ),
            (
                &["an elderly voice", "elderly voice", "an elderly speaker"],
                &["a voice so elderly", "elderly-voiced"],
            ),
        ],
        AttributeId::Emotion => &[
            (
                &["a neutral mood", "neutral mood", "a neutral manner"],
                &["a mood so neutral", "neutral-mood"],
            ),
            (
                &["a cheerful mood", "cheerful mood", "a cheerful manner"],
                &["a mood so cheerful", "cheerful-mood"],
            ),
            (
                &["a sorrowful mood", "sorrowful mood", "a sorrowful manner"],
                &["a mood so sorrowful", "sorrowful-mood"],
            ),
            (
                &["a furious mood", "furious mood", "a furious manner"],
                &["a mood so furious", "furious-mood"],
            ),
            (
                &["a fearful mood", "fearful mood", "a fearful manner"],
                &["a mood so fearful", "fearful-mood"],
            ),
            (
                &["a surprised mood", "surprised mood", "a surprised manner"],
                &["a mood so surprised", "surprised-mood"],
            ),
            (
                &["a tranquil mood", "tranquil mood", "a tranquil manner"],
                &["a mood so tranquil", "tranquil-mood"],
            ),
            (
                &["a disgusted mood", "disgusted mood", "a disgusted manner"],
                &["a mood so disgusted", "disgusted-mood"],
            ),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::AttributeVector;

    #[test]
    fn default_bank_is_valid_and_complete() {
        let bank = PhraseBank::default_bank();
        for a in AttributeId::ALL {
            for lvl in 0..a.level_count() {
                let v = AttributeValue::new(a, lvl).unwrap();
                let set = bank.set(v).unwrap();
                assert!(set.train.len() >= 3);
                assert!(set.ood.len() >= 2);
            }
        }
    }

    #[test]
    fn bounded_containment_respects_word_edges() {
        assert!(contains_bounded("a deep pitch, a calm mood", "a deep pitch"));
        assert!(!contains_bounded("a female timbre", "male timbre"));
        assert!(!contains_bounded("female-sounding", "male-sounding"));
        assert!(!contains_bounded("childish", "child"));
        assert!(contains_bounded("a child's voice", "a child's voice"));
    }

    #[test]
    fn phrases_stay_within_caption_charset_and_length() {
        let bank = PhraseBank::default_bank();
        for a in AttributeId::ALL {
            for lvl in 0..a.level_count() {
                let v = AttributeValue::new(a, lvl).unwrap();
                let set = bank.set(v).unwrap();
                for p in set.train.iter().chain(set.ood.iter()) {
                    assert!(
                        p.bytes().all(|b| b.is_ascii_lowercase()
                            || b.is_ascii_digit()
                            || b == b' '
                            || b == b'-'
                            || b == b'\''),
                        "phrase {p:?} has characters outside the caption set"
                    );
                    assert!(p.len() <= 20, "phrase {p:?} too long ({}), budget is 20", p.len());
                }
            }
        }
    }

    #[test]
    fn marker_tables_are_level_exclusive_on_phrases() {
        // A phrase may only carry markers of its own level; otherwise a
        // well-formed instruction could trip a contradiction rule.
        let bank = PhraseBank::default_bank();
        for a in AttributeId::ALL {
            let markers = contradiction_markers(a);
            assert_eq!(markers.len(), a.level_count() as usize);
            for lvl in 0..a.level_count() {
                let v = AttributeValue::new(a, lvl).unwrap();
                let set = bank.set(v).unwrap();
                for p in set.train.iter().chain(set.ood.iter()) {
                    for (other, mset) in markers.iter().enumerate() {
                        if other == lvl as usize {
                            continue;
                        }
                        for m in mset.iter() {
                            assert!(
                                !contains_bounded(p, m),
                                "{} phrase {p:?} carries level-{other} marker {m:?}",
                                a.name()
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn markers_do_not_hit_other_attributes() {
        let bank = PhraseBank::default_bank();
        for a in AttributeId::ALL {
            let markers = contradiction_markers(a);
            for b in AttributeId::ALL {
                if a == b {
                    continue;
                }
                for lvl in 0..b.level_count() {
                    let v = AttributeValue::new(b, lvl).unwrap();
                    let set = bank.set(v).unwrap();
                    for p in set.train.iter().chain(set.ood.iter()) {
                        for mset in markers.iter() {
                            for m in mset.iter() {
                                assert!(
                                    !contains_bounded(p, m),
                                    "{} marker {m:?} fires on {} phrase {p:?}",
                                    a.name(),
                                    b.name()
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn recover_reads_back_a_known_text() {
        let bank = PhraseBank::default_bank();
        let v = AttributeVector::new([0, 1, 2, 3, 4, 0, 1, 2, 3]).unwrap();
        let mut parts: Vec<String> = Vec::new();
        for val in v.values() {
            parts.push(bank.variants(val, PhraseMode::Train).unwrap()[0].clone());
        }
        let text = format!("Design a voice: {}.", parts.join(", "));
        assert_eq!(bank.recover(&text), Some(v));
    }
}
