//! Voice-attribute universe: identifiers, discrete values, quantile bins.
//!
//! Nine attributes control a voice: six prosodic dimensions discretized into
//! five bins each, plus gender (2), age (4), and emotion (8). The canonical
//! attribute order below is fixed; token layouts, oracle block order, and
//! instruction rendering all depend on it.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Number of attributes.
pub const ATTRIBUTE_COUNT: usize = 9;

/// Number of distinct (attribute, level) pairs: 6*5 + 2 + 4 + 8.
pub const ATTRIBUTE_VALUE_COUNT: usize = 44;

/// First vocabulary id of the attribute-token block (the byte-level text
/// block occupies ids 0..256).
pub const ATTR_TOKEN_BASE: u32 = 256;

/// One voice attribute. Declaration order is the canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeId {
    PitchMean,
    PitchStd,
    EnergyMean,
    EnergyStd,
    SpeakingRate,
    Loudness,
    Gender,
    Age,
    Emotion,
}

impl AttributeId {
    /// All attributes in canonical order.
    pub const ALL: [AttributeId; ATTRIBUTE_COUNT] = [
        AttributeId::PitchMean,
        AttributeId::PitchStd,
        AttributeId::EnergyMean,
        AttributeId::EnergyStd,
        AttributeId::SpeakingRate,
        AttributeId::Loudness,
        AttributeId::Gender,
        AttributeId::Age,
        AttributeId::Emotion,
    ];

    /// Position in canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<AttributeId> {
        AttributeId::ALL.get(i).copied()
    }

    /// Number of discrete levels this attribute takes.
    pub fn level_count(self) -> u8 {
        match self {
            AttributeId::Gender => 2,
            AttributeId::Age => 4,
            AttributeId::Emotion => 8,
            _ => 5,
        }
    }

    /// The six continuous prosodic dimensions are the ones that go through
    /// bin fitting; gender/age/emotion are categorical.
    pub fn is_prosodic(self) -> bool {
        self.index() < 6
    }

    /// Offset of this attribute's first (attribute, level) pair in the
    /// 44-entry global enumeration.
    pub fn value_offset(self) -> u32 {
        let mut off = 0u32;
        for a in AttributeId::ALL {
            if a == self {
                return off;
            }
            off += a.level_count() as u32;
        }
        unreachable!()
    }

    pub fn name(self) -> &'static str {
        match self {
            AttributeId::PitchMean => "pitch_mean",
            AttributeId::PitchStd => "pitch_std",
            AttributeId::EnergyMean => "energy_mean",
            AttributeId::EnergyStd => "energy_std",
            AttributeId::SpeakingRate => "speaking_rate",
            AttributeId::Loudness => "loudness",
            AttributeId::Gender => "gender",
            AttributeId::Age => "age",
            AttributeId::Emotion => "emotion",
        }
    }

    /// Human-readable label for a level of this attribute.
    pub fn level_name(self, level: u8) -> &'static str {
        const PROSODIC: [&str; 5] = ["very_low", "low", "medium", "high", "very_high"];
        const GENDER: [&str; 2] = ["male", "female"];
        const AGE: [&str; 4] = ["child", "youth", "middle_aged", "elderly"];
        const EMOTION: [&str; 8] = [
            "neutral",
            "happy",
            "sad",
            "angry",
            "fearful",
            "surprised",
            "calm",
            "disgusted",
        ];
        match self {
            AttributeId::Gender => GENDER[level as usize],
            AttributeId::Age => AGE[level as usize],
            AttributeId::Emotion => EMOTION[level as usize],
            _ => PROSODIC[level as usize],
        }
    }
}

/// One (attribute, level) pair. `level` is always within the attribute's
/// range by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttributeValue {
    attribute: AttributeId,
    level: u8,
}

impl AttributeValue {
    pub fn new(attribute: AttributeId, level: u8) -> Result<AttributeValue> {
        if level >= attribute.level_count() {
            return Err(Error::InvalidRecord(format!(
                "level {level} out of range for {}",
                attribute.name()
            )));
        }
        Ok(AttributeValue { attribute, level })
    }

    pub fn attribute(self) -> AttributeId {
        self.attribute
    }

    pub fn level(self) -> u8 {
        self.level
    }

    /// Index into the 44-entry enumeration of all (attribute, level) pairs,
    /// ordered by canonical attribute order then level.
    pub fn global_index(self) -> u32 {
        self.attribute.value_offset() + self.level as u32
    }

    pub fn from_global_index(g: u32) -> Option<AttributeValue> {
        if g >= ATTRIBUTE_VALUE_COUNT as u32 {
            return None;
        }
        for a in AttributeId::ALL {
            let off = a.value_offset();
            if g < off + a.level_count() as u32 {
                return Some(AttributeValue {
                    attribute: a,
                    level: (g - off) as u8,
                });
            }
        }
        None
    }
}

/// Maps an attribute value into the contiguous 44-token attribute block of
/// the vocabulary. Bijective; [`attribute_value_of_token`] is the inverse.
pub fn attribute_token_id(v: AttributeValue) -> u32 {
    ATTR_TOKEN_BASE + v.global_index()
}

/// Inverse of [`attribute_token_id`]; `None` for ids outside the block.
pub fn attribute_value_of_token(id: u32) -> Option<AttributeValue> {
    id.checked_sub(ATTR_TOKEN_BASE)
        .and_then(AttributeValue::from_global_index)
}

/// A complete assignment: one level per attribute, canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "AttributeVectorRepr", into = "AttributeVectorRepr")]
pub struct AttributeVector {
    levels: [u8; ATTRIBUTE_COUNT],
}

impl AttributeVector {
    pub fn new(levels: [u8; ATTRIBUTE_COUNT]) -> Result<AttributeVector> {
        for (i, &lvl) in levels.iter().enumerate() {
            let attr = AttributeId::ALL[i];
            if lvl >= attr.level_count() {
                return Err(Error::InvalidRecord(format!(
                    "level {lvl} out of range for {}",
                    attr.name()
                )));
            }
        }
        Ok(AttributeVector { levels })
    }

    pub fn level(&self, attribute: AttributeId) -> u8 {
        self.levels[attribute.index()]
    }

    pub fn value(&self, attribute: AttributeId) -> AttributeValue {
        AttributeValue {
            attribute,
            level: self.level(attribute),
        }
    }

    /// Values in canonical order.
    pub fn values(&self) -> impl Iterator<Item = AttributeValue> + '_ {
        AttributeId::ALL.into_iter().map(|a| self.value(a))
    }

    pub fn with_level(mut self, attribute: AttributeId, level: u8) -> Result<AttributeVector> {
        if level >= attribute.level_count() {
            return Err(Error::InvalidRecord(format!(
                "level {level} out of range for {}",
                attribute.name()
            )));
        }
        self.levels[attribute.index()] = level;
        Ok(self)
    }

    /// Uniform draw over the full attribute space.
    pub fn sample(rng: &mut crate::rng::Rng) -> AttributeVector {
        let mut levels = [0u8; ATTRIBUTE_COUNT];
        for (i, a) in AttributeId::ALL.into_iter().enumerate() {
            levels[i] = rng.below(a.level_count() as u64) as u8;
        }
        AttributeVector { levels }
    }

    /// Number of attributes where `self` and `other` differ.
    pub fn distance(&self, other: &AttributeVector) -> usize {
        self.levels
            .iter()
            .zip(other.levels.iter())
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Serialized form: a fixed-order map of attribute name to level.
#[derive(Serialize, Deserialize)]
struct AttributeVectorRepr {
    pitch_mean: u8,
    pitch_std: u8,
    energy_mean: u8,
    energy_std: u8,
    speaking_rate: u8,
    loudness: u8,
    gender: u8,
    age: u8,
    emotion: u8,
}

impl TryFrom<AttributeVectorRepr> for AttributeVector {
    type Error = Error;
    fn try_from(r: AttributeVectorRepr) -> Result<AttributeVector> {
        AttributeVector::new([
            r.pitch_mean,
            r.pitch_std,
            r.energy_mean,
            r.energy_std,
            r.speaking_rate,
            r.loudness,
            r.gender,
            r.age,
            r.emotion,
        ])
    }
}

impl From<AttributeVector> for AttributeVectorRepr {
    fn from(v: AttributeVector) -> AttributeVectorRepr {
        AttributeVectorRepr {
            pitch_mean: v.levels[0],
            pitch_std: v.levels[1],
            energy_mean: v.levels[2],
            energy_std: v.levels[3],
            speaking_rate: v.levels[4],
            loudness: v.levels[5],
            gender: v.levels[6],
            age: v.levels[7],
            emotion: v.levels[8],
        }
    }
}

/// Bin edges for one prosodic attribute: four strictly increasing values that
/// split the real line into five half-open bins. A measurement equal to an
/// edge falls into the bin above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinBoundaries {
    pub attribute: AttributeId,
    pub edges: [f64; 4],
}

impl BinBoundaries {
    pub fn new(attribute: AttributeId, edges: [f64; 4]) -> Result<BinBoundaries> {
        if !attribute.is_prosodic() {
            return Err(Error::InvalidConfig(format!(
                "{} is categorical, not binned",
                attribute.name()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidMeasurement);
        }
        if !edges.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidConfig(
                "bin edges must be strictly increasing".into(),
            ));
        }
        Ok(BinBoundaries { attribute, edges })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("boundaries serialize")
    }

    pub fn from_json(s: &str) -> Result<BinBoundaries> {
        let b: BinBoundaries = serde_json::from_str(s)?;
        BinBoundaries::new(b.attribute, b.edges)
    }
}

/// Linear-interpolation quantile of an already-sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Fits 5-bin boundaries from empirical measurements: the 20/40/60/80
/// percentiles under the linear-interpolation quantile definition. Coinciding
/// edges are repaired by nudging the upper edge up by the smallest
/// representable amount; if every sample is identical there is nothing to
/// repair toward and the distribution is rejected.
pub fn fit_bin_boundaries(samples: &[f64], attribute: AttributeId) -> Result<BinBoundaries> {
    if !attribute.is_prosodic() {
        return Err(Error::InvalidConfig(format!(
            "{} is categorical, not binned",
            attribute.name()
        )));
    }
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidMeasurement);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateDistribution);
    }
    let mut edges = [0.0f64; 4];
    for (i, q) in [0.2, 0.4, 0.6, 0.8].into_iter().enumerate() {
        edges[i] = quantile_sorted(&sorted, q);
    }
    for i in 1..4 {
        if edges[i] <= edges[i - 1] {
            edges[i] = edges[i - 1].next_up();
        }
    }
    BinBoundaries::new(attribute, edges)
}

/// Maps a continuous measurement to a discrete level: the number of edges
/// that do not exceed the value, so boundary values fall into the upper bin.
pub fn discretize(value: f64, bounds: &BinBoundaries) -> Result<AttributeValue> {
    if !value.is_finite() {
        return Err(Error::InvalidMeasurement);
    }
    let level = bounds.edges.iter().filter(|&&e| e <= value).count() as u8;
    AttributeValue::new(bounds.attribute, level)
}
