//! Rule-based caption filtering.
//!
//! Captions are rejected when any rule's regular expression matches; the
//! reported reason is the first matching rule's label. The default rule set
//! catches empty captions, characters outside the caption charset, and
//! contradictory attribute mentions (two different levels of one attribute in
//! the same caption). Rules can also be loaded from a user-supplied JSON file.

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::phrases::contradiction_markers;
use crate::error::Error;
use crate::schema::AttributeId;
use crate::Result;

/// One compiled filter rule.
#[derive(Debug, Clone)]
pub struct FilterRule {
    pub label: String,
    pub pattern: Regex,
}

impl FilterRule {
    pub fn new(label: &str, pattern: &str) -> Result<FilterRule> {
        let re = Regex::new(pattern).map_err(|e| Error::InvalidRule {
            label: label.to_string(),
            message: e.to_string(),
        })?;
        Ok(FilterRule {
            label: label.to_string(),
            pattern: re,
        })
    }
}

/// Serialized rule form for the rules file: a JSON array of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSpec {
    pub label: String,
    pub pattern: String,
}

/// Filter outcome. Rejections carry the first matching rule's label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(String),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// Applies rules in order; rejects on the first match.
pub fn filter_caption(text: &str, rules: &[FilterRule]) -> Verdict {
    for rule in rules {
        if rule.pattern.is_match(text) {
            return Verdict::Reject(rule.label.clone());
        }
    }
    Verdict::Accept
}

/// Compiles rules from their serialized form.
pub fn compile_rules(specs: &[RuleSpec]) -> Result<Vec<FilterRule>> {
    specs
        .iter()
        .map(|s| FilterRule::new(&s.label, &s.pattern))
        .collect()
}

/// Loads a rules file: a JSON array of `{"label", "pattern"}` objects.
pub fn load_rules(json: &str) -> Result<Vec<FilterRule>> {
    let specs: Vec<RuleSpec> = serde_json::from_str(json)?;
    compile_rules(&specs)
}

/// The built-in rule set.
pub fn default_rules() -> Vec<FilterRule> {
    let mut rules = Vec::new();
    rules.push(FilterRule::new("empty caption", r"^\s*$").expect("static rule"));
    rules.push(
        FilterRule::new("illegal character", r"[^A-Za-z0-9 ,.:;'!?()-]").expect("static rule"),
    );
    for a in AttributeId::ALL {
        let pattern = contradiction_pattern(a);
        rules.push(
            FilterRule::new("contradictory attribute", &pattern).expect("generated rule"),
        );
    }
    rules
}

/// Serializable form of the default rules, for writing a starter rules file.
pub fn default_rule_specs() -> Vec<RuleSpec> {
    default_rules()
        .into_iter()
        .map(|r| RuleSpec {
            label: r.label,
            pattern: r.pattern.as_str().to_string(),
        })
        .collect()
}

/// One caption mentioning markers of two different levels of `attribute` is
/// contradictory. The regex is the alternation over all ordered cross-level
/// marker pairs.
fn contradiction_pattern(attribute: AttributeId) -> String {
    let markers = contradiction_markers(attribute);
    let mut branches = Vec::new();
    for (i, set_a) in markers.iter().enumerate() {
        for (j, set_b) in markers.iter().enumerate() {
            if i == j {
                continue;
            }
            for a in set_a.iter() {
                for b in set_b.iter() {
                    branches.push(format!(
                        r"\b{}\b[\s\S]*\b{}\b",
                        regex::escape(a),
                        regex::escape(b)
                    ));
                }
            }
        }
    }
    format!("(?:{})", branches.join("|"))
}
