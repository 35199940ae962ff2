//! Abbreviation expansion for column and table names.
//!
//! Each token of a name is looked up in a curated dictionary. Tokens with a
//! single candidate expand directly. Tokens with several candidates go
//! through [`disambiguate_token`], and a tie between the two best candidates
//! leaves the token exactly as written so the language model can interpret
//! it from the rest of the prompt.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{tokenize_name, TokenizeError};

const BUILTIN_DICTIONARY: &str = include_str!("../data/abbreviations.jsonl");

// Function words never count as co-occurrence evidence.
const STOPWORDS: &[&str] = &["a", "an", "and", "by", "for", "in", "of", "on", "per", "the", "to"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionCandidate {
    pub expansion: String,
    #[serde(default)]
    pub domains: Vec<String>,
    pub priority: i64,
}

/// On-disk form of a dictionary entry. `priority` defaults to the position
/// of the candidate in its list.
#[derive(Debug, Clone, Deserialize)]
pub struct DictionaryEntry {
    pub abbr: String,
    pub candidates: Vec<RawCandidate>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RawCandidate {
    pub expansion: String,
    #[serde(default)]
    pub domains: Vec<String>,
    #[serde(default)]
    pub priority: Option<i64>,
}

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("empty abbreviation key")]
    EmptyKey,
    #[error("abbreviation {0:?} has no candidates")]
    NoCandidates(String),
    #[error("abbreviation {key:?} has an empty expansion")]
    EmptyExpansion { key: String },
    #[error("abbreviation {key:?} lists expansion {expansion:?} twice")]
    DuplicateExpansion { key: String, expansion: String },
    #[error("abbreviation {key:?} uses priority {priority} twice")]
    DuplicatePriority { key: String, priority: i64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AbbreviationDictionary {
    entries: BTreeMap<String, Vec<ExpansionCandidate>>,
}

impl AbbreviationDictionary {
    /// The dictionary shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_DICTIONARY).expect("shipped dictionary is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DictionaryError> {
        let body = fs::read_to_string(path).map_err(|source| DictionaryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&body)
    }

    /// Accepts a JSON array of entries, JSON-lines entries, or a single JSON
    /// object mapping each abbreviation to its candidate list.
    pub fn parse(body: &str) -> Result<Self, DictionaryError> {
        let trimmed = body.trim_start();
        let entries: Vec<DictionaryEntry> = if trimmed.starts_with('[') {
            serde_json::from_str(trimmed).map_err(|e| DictionaryError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        } else if let Ok(map) = serde_json::from_str::<BTreeMap<String, Vec<RawCandidate>>>(trimmed) {
            map.into_iter()
                .map(|(abbr, candidates)| DictionaryEntry { abbr, candidates })
                .collect()
        } else {
            let mut out = Vec::new();
            for (i, line) in body.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                out.push(serde_json::from_str(line).map_err(|e| DictionaryError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
            out
        };
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<DictionaryEntry>) -> Result<Self, DictionaryError> {
        let mut dict: BTreeMap<String, Vec<ExpansionCandidate>> = BTreeMap::new();
        for entry in entries {
            let key = entry.abbr.trim().to_lowercase();
            if key.is_empty() {
                return Err(DictionaryError::EmptyKey);
            }
            if entry.candidates.is_empty() {
                return Err(DictionaryError::NoCandidates(key));
            }
            let slot = dict.entry(key.clone()).or_default();
            let offset = slot.len() as i64;
            for (i, raw) in entry.candidates.into_iter().enumerate() {
                let expansion = raw.expansion.split_whitespace().collect::<Vec<_>>().join(" ");
                if expansion.is_empty() {
                    return Err(DictionaryError::EmptyExpansion { key });
                }
                let priority = raw.priority.unwrap_or(offset + i as i64);
                if slot.iter().any(|c| c.expansion.eq_ignore_ascii_case(&expansion)) {
                    return Err(DictionaryError::DuplicateExpansion { key, expansion });
                }
                if slot.iter().any(|c| c.priority == priority) {
                    return Err(DictionaryError::DuplicatePriority { key, priority });
                }
                slot.push(ExpansionCandidate {
                    expansion,
                    domains: raw.domains.iter().map(|d| d.trim().to_lowercase()).collect(),
                    priority,
                });
            }
            slot.sort_by_key(|c| c.priority);
        }
        Ok(Self { entries: dict })
    }

    pub fn get(&self, token: &str) -> Option<&[ExpansionCandidate]> {
        self.entries.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ExpansionCandidate])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Where a name lives, plus any words already known to describe it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionContext {
    pub table_name: String,
    pub data_source: String,
    /// Extra words treated like resolved sibling expansions (for example
    /// the expanded table name).
    #[serde(default)]
    pub sibling_tokens: Vec<String>,
}

impl ExpansionContext {
    pub fn new(table_name: impl Into<String>, data_source: impl Into<String>) -> Self {
        Self {
            table_name: table_name.into(),
            data_source: data_source.into(),
            sibling_tokens: Vec::new(),
        }
    }
}

/// Signals available when choosing between candidates for one token.
#[derive(Debug, Clone, Default)]
pub struct DisambiguationSignals {
    pub data_source: String,
    pub table_tokens: HashSet<String>,
    pub sibling_words: HashSet<String>,
}

impl DisambiguationSignals {
    pub fn from_context(ctx: &ExpansionContext) -> Self {
        let table_tokens = tokenize_name(&ctx.table_name)
            .map(|t| t.tokens.into_iter().collect())
            .unwrap_or_default();
        let mut signals = Self {
            data_source: ctx.data_source.trim().to_lowercase(),
            table_tokens,
            sibling_words: HashSet::new(),
        };
        for word in &ctx.sibling_tokens {
            signals.add_sibling_text(word);
        }
        signals
    }

    pub fn add_sibling_text(&mut self, text: &str) {
        self.sibling_words
            .extend(text.split_whitespace().map(str::to_lowercase));
    }

    /// +2 per distinct domain tag naming the data source or a table-name
    /// token, +1 per distinct content word of the expansion already present
    /// in a resolved sibling expansion.
    pub fn score(&self, candidate: &ExpansionCandidate) -> u32 {
        let domains: HashSet<&str> = candidate.domains.iter().map(String::as_str).collect();
        let domain_hits = domains
            .iter()
            .filter(|d| (!self.data_source.is_empty() && **d == self.data_source) || self.table_tokens.contains(**d))
            .count() as u32;
        let words: HashSet<String> = candidate
            .expansion
            .split_whitespace()
            .map(str::to_lowercase)
            .filter(|w| !STOPWORDS.contains(&w.as_str()))
            .collect();
        let cooccur = words.iter().filter(|w| self.sibling_words.contains(*w)).count() as u32;
        2 * domain_hits + cooccur
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disambiguation {
    Chosen { candidate: ExpansionCandidate, score: u32 },
    Inconclusive { top_score: u32 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpandError {
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("disambiguation of {token:?} needs at least two candidates, got {count}")]
    TooFewCandidates { token: String, count: usize },
}

/// Picks the strictly best-scoring candidate. Equal top scores are
/// inconclusive; priority never breaks a tie.
pub fn disambiguate_token(
    token: &str,
    candidates: &[ExpansionCandidate],
    signals: &DisambiguationSignals,
) -> Result<Disambiguation, ExpandError> {
    if candidates.len() < 2 {
        return Err(ExpandError::TooFewCandidates {
            token: token.to_string(),
            count: candidates.len(),
        });
    }
    let mut scored: Vec<(u32, &ExpansionCandidate)> =
        candidates.iter().map(|c| (signals.score(c), c)).collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0));
    let (best, second) = (scored[0].0, scored[1].0);
    if best == second {
        return Ok(Disambiguation::Inconclusive { top_score: best });
    }
    Ok(Disambiguation::Chosen {
        candidate: scored[0].1.clone(),
        score: best,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum TokenOutcome {
    Expanded(String),
    AmbiguousKept,
    UnknownKept,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenExpansion {
    pub token: String,
    pub outcome: TokenOutcome,
}

impl TokenExpansion {
    pub fn rendered(&self) -> &str {
        match &self.outcome {
            TokenOutcome::Expanded(text) => text,
            _ => &self.token,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionResult {
    pub raw: String,
    pub per_token: Vec<TokenExpansion>,
    pub expanded_name: String,
}

impl ExpansionResult {
    pub fn ambiguous_tokens(&self) -> impl Iterator<Item = &str> {
        self.per_token
            .iter()
            .filter(|t| t.outcome == TokenOutcome::AmbiguousKept)
            .map(|t| t.token.as_str())
    }
}

/// Expands every token of `name`. Single-candidate tokens resolve first so
/// that ambiguous tokens, handled left to right afterwards, can use their
/// expansions as co-occurrence evidence.
pub fn expand_name(
    name: &str,
    ctx: &ExpansionContext,
    dict: &AbbreviationDictionary,
) -> Result<ExpansionResult, ExpandError> {
    let tokens = tokenize_name(name)?.tokens;
    let mut outcomes: Vec<Option<TokenOutcome>> = vec![None; tokens.len()];

    for (slot, token) in outcomes.iter_mut().zip(&tokens) {
        match dict.get(token) {
            None => *slot = Some(TokenOutcome::UnknownKept),
            Some([only]) => *slot = Some(TokenOutcome::Expanded(only.expansion.clone())),
            Some(_) => {}
        }
    }

    let base = DisambiguationSignals::from_context(ctx);
    for i in 0..tokens.len() {
        if outcomes[i].is_some() {
            continue;
        }
        let mut signals = base.clone();
        for (j, outcome) in outcomes.iter().enumerate() {
            if let (true, Some(TokenOutcome::Expanded(text))) = (j != i, outcome) {
                signals.add_sibling_text(text);
            }
        }
        let candidates = dict.get(&tokens[i]).unwrap_or_default();
        outcomes[i] = Some(match disambiguate_token(&tokens[i], candidates, &signals)? {
            Disambiguation::Chosen { candidate, .. } => TokenOutcome::Expanded(candidate.expansion),
            Disambiguation::Inconclusive { .. } => TokenOutcome::AmbiguousKept,
        });
    }

    let per_token: Vec<TokenExpansion> = tokens
        .into_iter()
        .zip(outcomes)
        .map(|(token, outcome)| TokenExpansion {
            token,
            outcome: outcome.expect("every token resolved"),
        })
        .collect();
    let expanded_name = per_token
        .iter()
        .map(TokenExpansion::rendered)
        .collect::<Vec<_>>()
        .join(" ");
    Ok(ExpansionResult {
        raw: name.to_string(),
        per_token,
        expanded_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(expansion: &str, domains: &[&str], priority: i64) -> ExpansionCandidate {
        ExpansionCandidate {
            expansion: expansion.into(),
            domains: domains.iter().map(|d| d.to_string()).collect(),
            priority,
        }
    }

    #[test]
    fn expands_the_reference_names() {
        let dict = AbbreviationDictionary::builtin();
        let ctx = ExpansionContext::default();
        for (raw, want) in [
            ("ytd_dist_amt", "year to date distribution amount"),
            ("opt_ctr_exp_d", "option contract expiration date"),
            ("shr_exp_d", "share expiration date"),
        ] {
            assert_eq!(expand_name(raw, &ctx, &dict).unwrap().expanded_name, want);
        }
    }

    #[test]
    fn unknown_tokens_pass_through() {
        let dict = AbbreviationDictionary::builtin();
        let r = expand_name("zz_amt", &ExpansionContext::default(), &dict).unwrap();
        assert_eq!(r.expanded_name, "zz amount");
        assert_eq!(r.per_token[0].outcome, TokenOutcome::UnknownKept);
        assert_eq!(r.per_token[1].outcome, TokenOutcome::Expanded("amount".into()));
    }

    #[test]
    fn empty_name_is_an_error() {
        let dict = AbbreviationDictionary::builtin();
        assert_eq!(
            expand_name("", &ExpansionContext::default(), &dict),
            Err(ExpandError::Tokenize(TokenizeError::Empty))
        );
    }

    #[test]
    fn domain_tag_on_data_source_wins() {
        // expiration scores +2 from the trading source, expense scores 0.
        let candidates = [cand("expiration", &["trading"], 0), cand("expense", &["ledger"], 1)];
        let signals = DisambiguationSignals::from_context(&ExpansionContext::new("opt_pos", "trading"));
        match disambiguate_token("exp", &candidates, &signals).unwrap() {
            Disambiguation::Chosen { candidate, score } => {
                assert_eq!(candidate.expansion, "expiration");
                assert_eq!(score, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_token_counts_as_domain() {
        let candidates = [cand("expiration", &["trading"], 0), cand("expense", &["ledger"], 1)];
        let signals = DisambiguationSignals::from_context(&ExpansionContext::new("gl_ledger_dtl", "lake"));
        let d = disambiguate_token("exp", &candidates, &signals).unwrap();
        assert!(matches!(d, Disambiguation::Chosen { candidate, .. } if candidate.expansion == "expense"));
    }

    #[test]
    fn zero_signals_is_inconclusive_even_with_priorities() {
        let candidates = [cand("expiration", &[], 0), cand("expense", &[], 1)];
        let d = disambiguate_token("exp", &candidates, &DisambiguationSignals::default()).unwrap();
        assert_eq!(d, Disambiguation::Inconclusive { top_score: 0 });
    }

    #[test]
    fn sibling_cooccurrence_breaks_the_tie() {
        // "xd" resolves to "expiration date"; "date" co-occurs, "day" does not.
        let dict = AbbreviationDictionary::parse(
            r#"{"xd": [{"expansion": "expiration date"}], "d": [{"expansion": "date"}, {"expansion": "day"}]}"#,
        )
        .unwrap();
        let r = expand_name("xd_d", &ExpansionContext::default(), &dict).unwrap();
        assert_eq!(r.expanded_name, "expiration date date");
        assert_eq!(r.per_token[1].outcome, TokenOutcome::Expanded("date".into()));
    }

    #[test]
    fn ambiguous_tokens_are_kept() {
        let dict = AbbreviationDictionary::builtin();
        let r = expand_name("curr_bal_amt", &ExpansionContext::new("t", "s"), &dict).unwrap();
        // "current" gets nothing from "balance amount"; neither candidate scores.
        assert_eq!(r.per_token[0].outcome, TokenOutcome::AmbiguousKept);
        assert_eq!(r.expanded_name, "curr balance amount");
        let r = expand_name("curr_bal_amt", &ExpansionContext::new("t", "ledger"), &dict).unwrap();
        assert_eq!(r.expanded_name, "current balance amount");
    }

    #[test]
    fn later_ambiguous_tokens_see_earlier_choices() {
        let dict = AbbreviationDictionary::parse(
            r#"[{"abbr": "a", "candidates": [{"expansion": "alpha fund", "domains": ["src"]}, {"expansion": "apple"}]},
                {"abbr": "b", "candidates": [{"expansion": "beta fund"}, {"expansion": "banana"}]}]"#,
        )
        .unwrap();
        let r = expand_name("a_b", &ExpansionContext::new("t", "src"), &dict).unwrap();
        assert_eq!(r.expanded_name, "alpha fund beta fund");
    }

    #[test]
    fn too_few_candidates_is_a_caller_error() {
        let err = disambiguate_token("x", &[cand("x", &[], 0)], &DisambiguationSignals::default());
        assert!(matches!(err, Err(ExpandError::TooFewCandidates { count: 1, .. })));
    }

    #[test]
    fn loads_all_three_file_shapes() {
        let map = AbbreviationDictionary::parse(r#"{"YTD": [{"expansion": "year to date"}]}"#).unwrap();
        assert_eq!(map.len(), 1);
        assert_eq!(map.get("ytd").unwrap()[0].expansion, "year to date");
        let arr = AbbreviationDictionary::parse(
            r#"[{"abbr": "ytd", "candidates": [{"expansion": "year to date", "domains": [], "priority": 3}]}]"#,
        )
        .unwrap();
        assert_eq!(arr.get("YTD").unwrap()[0].priority, 3);
        let lines = AbbreviationDictionary::parse(
            "{\"abbr\": \"a\", \"candidates\": [{\"expansion\": \"x\"}]}\n\n{\"abbr\": \"b\", \"candidates\": [{\"expansion\": \"y\"}]}\n",
        )
        .unwrap();
        assert_eq!(lines.len(), 2);
    }

    #[test]
    fn rejects_duplicates_and_bad_entries() {
        let dup_prio = r#"[{"abbr": "a", "candidates": [{"expansion": "x", "priority": 1}, {"expansion": "y", "priority": 1}]}]"#;
        assert!(matches!(
            AbbreviationDictionary::parse(dup_prio),
            Err(DictionaryError::DuplicatePriority { priority: 1, .. })
        ));
        let dup_exp = r#"[{"abbr": "a", "candidates": [{"expansion": "x"}, {"expansion": "X"}]}]"#;
        assert!(matches!(
            AbbreviationDictionary::parse(dup_exp),
            Err(DictionaryError::DuplicateExpansion { .. })
        ));
        assert!(matches!(
            AbbreviationDictionary::parse(r#"[{"abbr": " ", "candidates": [{"expansion": "x"}]}]"#),
            Err(DictionaryError::EmptyKey)
        ));
        assert!(matches!(
            AbbreviationDictionary::parse(r#"[{"abbr": "a", "candidates": []}]"#),
            Err(DictionaryError::NoCandidates(_))
        ));
        assert!(matches!(
            AbbreviationDictionary::parse("{\"abbr\": \"a\", \"candidates\": [{\"expansion\": \"x\"}]}\nnope\n"),
            Err(DictionaryError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn two_hundred_entry_dictionary_lookups() {
        // Sidecar answers are produced alongside the entries, independently
        // of the loader.
        let mut body = String::new();
        let mut answers = Vec::new();
        for i in 0..200 {
            let key = format!("K{i:03}");
            let exp = format!("expansion number {i}");
            body.push_str(&format!(
                "{{\"abbr\": \"{key}\", \"candidates\": [{{\"expansion\": \"  {exp} \"}}]}}\n"
            ));
            answers.push((key.to_lowercase(), exp));
        }
        let dict = AbbreviationDictionary::parse(&body).unwrap();
        assert_eq!(dict.len(), 200);
        for (key, exp) in [0, 17, 99, 150, 199].map(|i| answers[i].clone()) {
            assert_eq!(dict.get(&key).unwrap()[0].expansion, exp);
        }
    }

    #[test]
    fn builtin_dictionary_is_normalized() {
        let dict = AbbreviationDictionary::builtin();
        assert!(dict.len() > 80);
        for (key, candidates) in dict.iter() {
            assert_eq!(key, key.to_lowercase());
            assert!(!candidates.is_empty());
            let prios: HashSet<i64> = candidates.iter().map(|c| c.priority).collect();
            assert_eq!(prios.len(), candidates.len());
        }
    }

    fn tied_dictionary() -> AbbreviationDictionary {
        AbbreviationDictionary::parse(
            r#"[{"abbr": "p", "candidates": [{"expansion": "pear", "domains": ["s1"]}, {"expansion": "plum", "domains": ["s1"]}, {"expansion": "peach"}]},
                {"abbr": "q", "candidates": [{"expansion": "quince"}, {"expansion": "quark"}]},
                {"abbr": "k", "candidates": [{"expansion": "kiwi"}]}]"#,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn expansion_is_deterministic_and_covers_every_token(
            name in "(ytd|dist|amt|cd|curr|sec|p|q|k|zz|[a-z]{1,3})(_(ytd|dist|amt|cd|curr|sec|p|q|k|zz|[a-z]{1,3})){0,4}",
            source in "(s1|ledger|trading|banking|x)",
        ) {
            let mut dict = AbbreviationDictionary::builtin();
            for (k, v) in tied_dictionary().entries {
                dict.entries.insert(k, v);
            }
            let ctx = ExpansionContext::new("tbl", source);
            let a = expand_name(&name, &ctx, &dict).unwrap();
            let b = expand_name(&name, &ctx, &dict).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.per_token.len(), tokenize_name(&name).unwrap().tokens.len());

            // No invention: every expanded word comes from a candidate of that token.
            for t in &a.per_token {
                if let TokenOutcome::Expanded(text) = &t.outcome {
                    let cands = dict.get(&t.token).unwrap();
                    prop_assert!(cands.iter().any(|c| &c.expansion == text));
                }
            }
            // "p" under source s1 ties pear/plum at 2; "q" always ties at 0.
            for t in &a.per_token {
                if t.token == "q" || (t.token == "p" && ctx.data_source == "s1") {
                    prop_assert_eq!(&t.outcome, &TokenOutcome::AmbiguousKept);
                }
            }
        }
    }
}
