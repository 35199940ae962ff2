//! Chat prompt assembly for column and table descriptions.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{ColumnAsset, TableAsset};
use crate::expander::ExpansionResult;
use crate::retrieval::RetrievalOutcome;
use crate::text::{clean_text, tokenize_name};

pub const COLUMN_TEMPLATE_ID: &str = "column_system_v1";
pub const TABLE_TEMPLATE_ID: &str = "table_system_v1";
const COLUMN_SYSTEM: &str = include_str!("../templates/column_system_v1.txt");
const TABLE_SYSTEM: &str = include_str!("../templates/table_system_v1.txt");

pub const DEFAULT_TOKEN_BUDGET: usize = 4096;
pub const DEFAULT_COLUMN_LIMIT: usize = 25;
const PRIMARY_KEY_CAP: usize = 5;
// Example texts are never cut below this many words.
const MIN_EXAMPLE_WORDS: usize = 8;

pub const DEFAULT_AUDIT_COLUMNS: [&str; 6] =
    ["created_by", "updated_by", "created_ts", "updated_ts", "load_ts", "etl_batch_id"];

pub const DEFAULT_QUESTIONS: [&str; 3] = [
    "What business entity or event does this table represent, and at what grain?",
    "What key information do its columns capture?",
    "How would an analyst typically use this table?",
];

/// ceil(whitespace words * 1.3)
pub fn estimate_tokens(text: &str) -> usize {
    (text.split_whitespace().count() * 13).div_ceil(10)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotTurn {
    pub user_content: String,
    pub assistant_content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: String,
    pub system_instructions: String,
    pub fewshot_turns: Vec<FewShotTurn>,
    pub user_message: String,
    pub token_estimate: usize,
    pub prompt_hash: String,
}

impl PromptBundle {
    pub fn new(
        template_id: &str,
        system_instructions: String,
        fewshot_turns: Vec<FewShotTurn>,
        user_message: String,
    ) -> Self {
        let mut b = Self {
            template_id: template_id.to_string(),
            system_instructions,
            fewshot_turns,
            user_message,
            token_estimate: 0,
            prompt_hash: String::new(),
        };
        b.refresh();
        b
    }

    fn refresh(&mut self) {
        let mut est = estimate_tokens(&self.system_instructions) + estimate_tokens(&self.user_message);
        let mut h = Sha256::new();
        for part in [&self.template_id, &self.system_instructions] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        for t in &self.fewshot_turns {
            est += estimate_tokens(&t.user_content) + estimate_tokens(&t.assistant_content);
            for part in [&t.user_content, &t.assistant_content] {
                h.update((part.len() as u64).to_le_bytes());
                h.update(part.as_bytes());
            }
        }
        h.update((self.user_message.len() as u64).to_le_bytes());
        h.update(self.user_message.as_bytes());
        self.token_estimate = est;
        self.prompt_hash = hex::encode(h.finalize());
    }

    /// Role-labelled messages in send order.
    pub fn messages(&self) -> Vec<(&'static str, &str)> {
        let mut out = vec![("system", self.system_instructions.as_str())];
        for t in &self.fewshot_turns {
            out.push(("user", t.user_content.as_str()));
            out.push(("assistant", t.assistant_content.as_str()));
        }
        out.push(("user", self.user_message.as_str()));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("prompt needs {estimate} tokens after trimming, budget is {budget}")]
    OverBudget { estimate: usize, budget: usize },
    #[error("expected {expected} answers, got {got}")]
    AnswerCount { expected: usize, got: usize },
    #[error("question set is empty")]
    NoQuestions,
    #[error("stitch order is not a permutation of the questions")]
    BadStitchOrder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableQuestionSet {
    pub questions: Vec<String>,
    pub stitch_order: Vec<usize>,
}

impl Default for TableQuestionSet {
    fn default() -> Self {
        Self::in_order(DEFAULT_QUESTIONS.iter().map(|q| q.to_string()).collect()).expect("non-empty")
    }
}

impl TableQuestionSet {
    pub fn in_order(questions: Vec<String>) -> Result<Self, PromptError> {
        let order = (0..questions.len()).collect();
        Self::new(questions, order)
    }

    pub fn new(questions: Vec<String>, stitch_order: Vec<usize>) -> Result<Self, PromptError> {
        if questions.is_empty() {
            return Err(PromptError::NoQuestions);
        }
        let mut seen = vec![false; questions.len()];
        if stitch_order.len() != questions.len()
            || !stitch_order.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true))
        {
            return Err(PromptError::BadStitchOrder);
        }
        Ok(Self { questions, stitch_order })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditList(pub Vec<String>);

impl Default for AuditList {
    fn default() -> Self {
        Self(DEFAULT_AUDIT_COLUMNS.iter().map(|s| s.to_string()).collect())
    }
}

impl AuditList {
    /// Matches the whole name or a `_`-separated suffix, compared on the
    /// tokenized form so camel-case spellings match too.
    pub fn matches(&self, column_name: &str) -> bool {
        let Ok(t) = tokenize_name(column_name) else { return false };
        let joined = t.tokens.join("_");
        self.0.iter().any(|term| {
            let term = term.to_lowercase();
            joined == term || joined.ends_with(&format!("_{term}"))
        })
    }
}

fn column_facts(column_name: &str, expanded: Option<&str>, table: &str, source: &str) -> String {
    let mut s = format!("Column name: {column_name}\n");
    if let Some(e) = expanded {
        s.push_str(&format!("Expanded name: {e}\n"));
    }
    s.push_str(&format!("Table: {table}\nData source: {source}"));
    s
}

pub fn answer_json(text: &str) -> String {
    serde_json::json!({ "description": text }).to_string()
}

fn truncate_words(text: &str, words: usize) -> String {
    text.split_whitespace().take(words).collect::<Vec<_>>().join(" ")
}

/// Column prompt with one user/assistant turn pair per retrieved example.
/// Over budget, the longest example text is halved until none can shrink,
/// then examples are dropped from the end.
pub fn build_column_prompt(
    column: &ColumnAsset,
    expansion: &ExpansionResult,
    retrieval: &RetrievalOutcome,
    glossary_terms: &[String],
    budget: usize,
) -> Result<PromptBundle, PromptError> {
    let mut user = column_facts(
        &column.column_name,
        Some(&expansion.expanded_name),
        &column.table_name,
        &column.data_source,
    );
    if let Some(c) = column.comment.as_deref().map(clean_text).filter(|c| !c.is_empty()) {
        user.push_str(&format!("\nComment: {c}"));
    }
    if !glossary_terms.is_empty() {
        user.push_str(&format!("\nGlossary terms: {}", glossary_terms.join("; ")));
    }
    user.push_str("\nDescribe this column.");

    let mut texts: Vec<String> = retrieval.examples.iter().map(|e| e.example_text.clone()).collect();
    let make = |texts: &[String]| {
        let turns = retrieval
            .examples
            .iter()
            .zip(texts)
            .map(|(e, text)| FewShotTurn {
                user_content: column_facts(&e.key.column_name, None, &e.key.table_name, &e.key.data_source)
                    + "\nDescribe this column.",
                assistant_content: answer_json(text),
            })
            .collect();
        PromptBundle::new(COLUMN_TEMPLATE_ID, COLUMN_SYSTEM.to_string(), turns, user.clone())
    };

    let mut bundle = make(&texts);
    while bundle.token_estimate > budget {
        let longest = texts
            .iter()
            .enumerate()
            .map(|(i, t)| (t.split_whitespace().count(), i))
            .filter(|(n, _)| *n > MIN_EXAMPLE_WORDS)
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        match longest {
            Some((n, i)) => texts[i] = truncate_words(&texts[i], (n / 2).max(MIN_EXAMPLE_WORDS)),
            None if !texts.is_empty() => {
                texts.pop();
            }
            None => {
                return Err(PromptError::OverBudget {
                    estimate: bundle.token_estimate,
                    budget,
                })
            }
        }
        bundle = make(&texts);
    }
    Ok(bundle)
}

/// Picks the columns shown in a table prompt: drop audit columns, then
/// important ones, up to five primary keys in physical order, the most
/// popular, and a random sample of the describable rest. Primary keys beyond
/// the first five are not added by the later steps.
pub fn select_table_columns<R: Rng + ?Sized>(
    table: &TableAsset,
    limit: usize,
    audit: &AuditList,
    rng: &mut R,
) -> Vec<ColumnAsset> {
    let cols: Vec<&ColumnAsset> = table.columns.iter().filter(|c| !audit.matches(&c.column_name)).collect();
    let mut chosen: Vec<usize> = Vec::new();
    let mut seen = HashSet::new();
    let mut take = |i: usize, chosen: &mut Vec<usize>| {
        if seen.insert(i) {
            chosen.push(i);
        }
    };

    for (i, c) in cols.iter().enumerate() {
        if c.is_important {
            take(i, &mut chosen);
        }
    }
    for (i, _) in cols.iter().enumerate().filter(|(_, c)| c.is_primary_key).take(PRIMARY_KEY_CAP) {
        take(i, &mut chosen);
    }
    let mut ranked: Vec<(u32, usize)> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_primary_key)
        .filter_map(|(i, c)| c.popularity_rank.map(|r| (r, i)))
        .collect();
    ranked.sort();
    for (_, i) in ranked {
        if chosen.len() >= limit {
            break;
        }
        take(i, &mut chosen);
    }
    if chosen.len() < limit {
        let leftovers: Vec<usize> = (0..cols.len())
            .filter(|i| !chosen.contains(i) && !cols[*i].is_primary_key && cols[*i].example_text().is_some())
            .collect();
        let mut sample: Vec<usize> = leftovers.choose_multiple(rng, limit - chosen.len()).copied().collect();
        sample.sort_unstable();
        for i in sample {
            take(i, &mut chosen);
        }
    }
    chosen.truncate(limit);
    chosen.into_iter().map(|i| cols[i].clone()).collect()
}

/// A column shown in a table prompt with the description to present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescribedColumn {
    pub column_name: String,
    pub description: String,
}

/// One bundle per question, all sharing the same table context block. Over
/// budget, columns are dropped from the end of `selected` first.
pub fn build_table_prompt(
    table: &TableAsset,
    expansion: &ExpansionResult,
    selected: &[DescribedColumn],
    questions: &TableQuestionSet,
    context: Option<&str>,
    budget: usize,
) -> Result<Vec<PromptBundle>, PromptError> {
    let context = context.map(clean_text).filter(|c| !c.is_empty());
    let build = |cols: &[DescribedColumn]| -> Vec<PromptBundle> {
        let mut block = format!(
            "Table name: {}\nExpanded table name: {}\nData source: {}",
            table.table_name, expansion.expanded_name, table.data_source
        );
        if let Some(c) = &context {
            block.push_str(&format!("\nBusiness context: {c}"));
        }
        if !cols.is_empty() {
            block.push_str("\nColumns:");
            for c in cols {
                block.push_str(&format!("\n- {}: {}", c.column_name, clean_text(&c.description)));
            }
        }
        questions
            .questions
            .iter()
            .map(|q| {
                PromptBundle::new(
                    TABLE_TEMPLATE_ID,
                    TABLE_SYSTEM.to_string(),
                    Vec::new(),
                    format!("{block}\nQuestion: {q}"),
                )
            })
            .collect()
    };
    let mut n = selected.len();
    loop {
        let bundles = build(&selected[..n]);
        let worst = bundles.iter().map(|b| b.token_estimate).max().unwrap_or(0);
        if worst <= budget {
            return Ok(bundles);
        }
        if n == 0 {
            return Err(PromptError::OverBudget { estimate: worst, budget });
        }
        n -= 1;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalInfo {
    pub data_source: Option<String>,
    pub update_frequency: Option<String>,
}

pub fn physical_sentence(p: &PhysicalInfo) -> Option<String> {
    let src = p.data_source.as_deref().map(str::trim).filter(|s| !s.is_empty());
    let freq = p.update_frequency.as_deref().map(str::trim).filter(|s| !s.is_empty());
    match (src, freq) {
        (Some(s), Some(f)) => Some(format!("This table is sourced from {s} and is updated {f}.")),
        (Some(s), None) => Some(format!("This table is sourced from {s}.")),
        (None, Some(f)) => Some(format!("This table is updated {f}.")),
        (None, None) => None,
    }
}

/// Joins the cleaned answers in stitch order as paragraphs and appends the
/// physical-information sentence. Empty answers are skipped.
pub fn stitch_table_description(
    answers: &[String],
    questions: &TableQuestionSet,
    physical: &PhysicalInfo,
) -> Result<String, PromptError> {
    if answers.len() != questions.questions.len() {
        return Err(PromptError::AnswerCount {
            expected: questions.questions.len(),
            got: answers.len(),
        });
    }
    let paragraphs: Vec<String> = questions
        .stitch_order
        .iter()
        .map(|&i| clean_text(&answers[i]))
        .filter(|a| !a.is_empty())
        .chain(physical_sentence(physical))
        .collect();
    Ok(paragraphs.join("\n\n"))
}
