//! JSON extraction, ordered regex corrections and the guardrail hook.

use std::collections::BTreeSet;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::clean_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostprocessFlag {
    JsonExtracted,
    JsonFallbackRaw,
    CorrectionsApplied,
    GuardrailFlagged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extracted {
    pub text: String,
    pub from_json: bool,
}

/// Reads `description` from the first JSON object in `raw` that has a
/// non-empty string under that key. Otherwise returns the cleaned raw text.
pub fn extract_json(raw: &str) -> Extracted {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            if let Some(serde_json::Value::String(d)) = map.get("description") {
                let text = clean_text(d);
                if !text.is_empty() {
                    return Extracted { text, from_json: true };
                }
            }
        }
    }
    Extracted {
        text: clean_text(raw),
        from_json: false,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionRule {
    pub rule_id: String,
    pub pattern: String,
    pub replacement: String,
    #[serde(skip)]
    compiled: Option<Regex>,
}

impl PartialEq for CorrectionRule {
    fn eq(&self, other: &Self) -> bool {
        (&self.rule_id, &self.pattern, &self.replacement) == (&other.rule_id, &other.pattern, &other.replacement)
    }
}

#[derive(Debug, Error)]
pub enum CorrectionError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrections file is not a JSON array of rules: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("rule {rule_id}: bad pattern: {source}")]
    Pattern {
        rule_id: String,
        #[source]
        source: regex::Error,
    },
    #[error("rule {rule_id} is not idempotent on {probe:?}")]
    NotIdempotent { rule_id: String, probe: String },
    #[error("duplicate rule id {0}")]
    DuplicateId(String),
}

// Probe texts for the load-time idempotence check, besides each rule's own
// replacement.
const PROBES: [&str; 6] = [
    "The ytd dist amt for the the account , in USD .",
    "Unique id of the acct as stored in the DB",
    "Customer E-mail address; SSN is masked",
    "a an the",
    "",
    "Year to date distribution amount.",
];

impl CorrectionRule {
    pub fn new(rule_id: &str, pattern: &str, replacement: &str) -> Result<Self, CorrectionError> {
        let compiled = Regex::new(pattern).map_err(|source| CorrectionError::Pattern {
            rule_id: rule_id.to_string(),
            source,
        })?;
        Ok(Self {
            rule_id: rule_id.to_string(),
            pattern: pattern.to_string(),
            replacement: replacement.to_string(),
            compiled: Some(compiled),
        })
    }

    fn regex(&self) -> &Regex {
        self.compiled.as_ref().expect("rules are compiled at construction")
    }

    pub fn apply(&self, text: &str) -> Option<String> {
        let re = self.regex();
        re.is_match(text).then(|| re.replace_all(text, self.replacement.as_str()).into_owned())
    }

    fn apply_or_keep(&self, text: &str) -> String {
        self.apply(text).unwrap_or_else(|| text.to_string())
    }

    pub fn check_idempotent<'a>(&self, probes: impl IntoIterator<Item = &'a str>) -> Result<(), CorrectionError> {
        let check = |probe: &str| {
            let once = self.apply_or_keep(probe);
            if self.apply_or_keep(&once) == once {
                Ok(())
            } else {
                Err(CorrectionError::NotIdempotent {
                    rule_id: self.rule_id.clone(),
                    probe: probe.to_string(),
                })
            }
        };
        if !self.replacement.contains('$') {
            check(&self.replacement)?;
        }
        probes.into_iter().try_for_each(check)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionSet {
    rules: Vec<CorrectionRule>,
}

impl CorrectionSet {
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/corrections.json")).expect("shipped corrections are valid")
    }

    pub fn load(path: &Path) -> Result<Self, CorrectionError> {
        let body = std::fs::read_to_string(path).map_err(|source| CorrectionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&body)
    }

    pub fn parse(body: &str) -> Result<Self, CorrectionError> {
        #[derive(Deserialize)]
        struct Raw {
            rule_id: String,
            pattern: String,
            replacement: String,
        }
        let raw: Vec<Raw> = serde_json::from_str(body)?;
        let mut rules = Vec::with_capacity(raw.len());
        for r in raw {
            rules.push(CorrectionRule::new(&r.rule_id, &r.pattern, &r.replacement)?);
        }
        Self::from_rules(rules)
    }

    pub fn from_rules(rules: Vec<CorrectionRule>) -> Result<Self, CorrectionError> {
        let mut ids = BTreeSet::new();
        for r in &rules {
            if !ids.insert(r.rule_id.clone()) {
                return Err(CorrectionError::DuplicateId(r.rule_id.clone()));
            }
            r.check_idempotent(PROBES)?;
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[CorrectionRule] {
        &self.rules
    }

    /// Applies every rule in file order; returns the text and the ids of the
    /// rules that matched.
    pub fn apply(&self, text: &str) -> (String, Vec<String>) {
        let mut out = text.to_string();
        let mut applied = Vec::new();
        for rule in &self.rules {
            if let Some(next) = rule.apply(&out) {
                out = next;
                applied.push(rule.rule_id.clone());
            }
        }
        (out, applied)
    }
}

pub fn apply_corrections(text: &str, rules: &CorrectionSet) -> (String, Vec<String>) {
    rules.apply(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "term", rename_all = "snake_case")]
pub enum GuardrailVerdict {
    Pass,
    Flagged(String),
}

pub trait Guardrail: Send + Sync {
    fn check(&self, text: &str) -> GuardrailVerdict;
}

/// Whole-word, case-insensitive scan for blocked terms.
#[derive(Debug, Clone)]
pub struct WordlistGuardrail {
    terms: Vec<(String, Regex)>,
}

impl WordlistGuardrail {
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../data/guardrail_wordlist.txt"))
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    /// One term per line; blank lines and `#` comments are ignored.
    pub fn parse(body: &str) -> Self {
        Self::new(body.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')))
    }

    pub fn new<'a>(terms: impl IntoIterator<Item = &'a str>) -> Self {
        let terms = terms
            .into_iter()
            .map(|t| {
                let re = Regex::new(&format!(r"(?i)\b{}\b", regex::escape(t))).expect("escaped term");
                (t.to_string(), re)
            })
            .collect();
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl Guardrail for WordlistGuardrail {
    fn check(&self, text: &str) -> GuardrailVerdict {
        self.terms
            .iter()
            .find(|(_, re)| re.is_match(text))
            .map_or(GuardrailVerdict::Pass, |(t, _)| GuardrailVerdict::Flagged(t.clone()))
    }
}

pub fn guardrail_check(text: &str, guardrail: &dyn Guardrail) -> GuardrailVerdict {
    guardrail.check(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Processed {
    pub text: String,
    pub flags: BTreeSet<PostprocessFlag>,
    pub applied_rules: Vec<String>,
    pub guardrail: GuardrailVerdict,
}

/// extract_json, then corrections, then the guardrail.
pub fn postprocess(raw: &str, corrections: &CorrectionSet, guardrail: &dyn Guardrail) -> Processed {
    let mut flags = BTreeSet::new();
    let extracted = extract_json(raw);
    flags.insert(if extracted.from_json {
        PostprocessFlag::JsonExtracted
    } else {
        PostprocessFlag::JsonFallbackRaw
    });
    let (text, applied_rules) = corrections.apply(&extracted.text);
    let text = clean_text(&text);
    if !applied_rules.is_empty() {
        flags.insert(PostprocessFlag::CorrectionsApplied);
    }
    let verdict = guardrail.check(&text);
    if matches!(verdict, GuardrailVerdict::Flagged(_)) {
        flags.insert(PostprocessFlag::GuardrailFlagged);
    }
    Processed {
        text,
        flags,
        applied_rules,
        guardrail: verdict,
    }
}
