//! Rouge-1, copy detection, embedding similarity and steward-feedback
//! reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, embed, EmbedError, EmbeddingProvider};
use crate::gateway::GenerationRecord;
use crate::http::{agent, post_json, HttpFailure};
use crate::retry::RetryPolicy;
use crate::review::{DecisionError, ReviewDecision, ReviewLabel};
use crate::text::word_tokens;

/// Copy threshold on Rouge-1 F1; a score must exceed it.
pub const COPY_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Rouge1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

/// Clipped unigram overlap on lowercase whitespace tokens.
pub fn rouge1(candidate: &str, reference: &str) -> Rouge1Score {
    let c = word_tokens(candidate);
    let r = word_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return Rouge1Score::default();
    }
    let rc = counts(&r);
    let overlap: usize = counts(&c)
        .into_iter()
        .map(|(t, n)| n.min(rc.get(t).copied().unwrap_or(0)))
        .sum();
    Rouge1Score {
        precision: overlap as f64 / c.len() as f64,
        recall: overlap as f64 / r.len() as f64,
        f1: 2.0 * overlap as f64 / (c.len() + r.len()) as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum CopySource {
    Example(usize),
    Comment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyCheck {
    pub copied: bool,
    pub best_source: Option<CopySource>,
    pub best_score: f64,
}

/// The prompt texts a generation might have copied from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInputs {
    pub example_texts: Vec<String>,
    #[serde(default)]
    pub comment: Option<String>,
}

pub fn detect_copy(generation: &str, inputs: &PromptInputs) -> CopyCheck {
    let sources = inputs
        .example_texts
        .iter()
        .enumerate()
        .map(|(i, t)| (CopySource::Example(i), t.as_str()))
        .chain(inputs.comment.as_deref().map(|c| (CopySource::Comment, c)));
    let mut best: Option<(CopySource, f64)> = None;
    for (src, text) in sources {
        let f1 = rouge1(generation, text).f1;
        if best.as_ref().is_none_or(|(_, b)| f1 > *b) {
            best = Some((src, f1));
        }
    }
    match best {
        Some((src, score)) => CopyCheck {
            copied: score > COPY_THRESHOLD,
            best_source: Some(src),
            best_score: score,
        },
        None => CopyCheck {
            copied: false,
            best_source: None,
            best_score: 0.0,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CopyCounts {
    pub total_instances: usize,
    pub copied: usize,
    /// copied / total_instances, 0 when empty.
    pub fraction_copied: f64,
    /// The same ratio on a 0..100 scale.
    pub percent_copied: f64,
}

impl CopyCounts {
    pub fn new(total_instances: usize, copied: usize) -> Self {
        let fraction_copied = if total_instances == 0 {
            0.0
        } else {
            copied as f64 / total_instances as f64
        };
        Self {
            total_instances,
            copied,
            fraction_copied,
            percent_copied: fraction_copied * 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CopyReport {
    #[serde(flatten)]
    pub all: CopyCounts,
    /// Restricted to generations whose retrieval found an exact match.
    pub exact_match: CopyCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyInstance {
    pub generated_text: String,
    pub inputs: PromptInputs,
    pub exact_match_found: bool,
}

pub fn copy_report<'a>(instances: impl IntoIterator<Item = &'a CopyInstance>) -> CopyReport {
    let (mut total, mut copied, mut ex_total, mut ex_copied) = (0, 0, 0, 0);
    for inst in instances {
        let hit = detect_copy(&inst.generated_text, &inst.inputs).copied as usize;
        total += 1;
        copied += hit;
        if inst.exact_match_found {
            ex_total += 1;
            ex_copied += hit;
        }
    }
    CopyReport {
        all: CopyCounts::new(total, copied),
        exact_match: CopyCounts::new(ex_total, ex_copied),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Greedy token matching over embeddings: precision is the mean, over
/// candidate tokens, of the best cosine against any reference token (clamped
/// to [0, 1]); recall is the same from the reference side.
pub fn embed_similarity(
    candidate: &str,
    reference: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<SimilarityScore, EmbedError> {
    let c = word_tokens(candidate);
    let r = word_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return Ok(SimilarityScore::default());
    }
    let cv = embed(&c, provider)?;
    let rv = embed(&r, provider)?;
    let best_mean = |from: &[Vec<f32>], to: &[Vec<f32>]| {
        from.iter()
            .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max).clamp(0.0, 1.0))
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best_mean(&cv, &rv);
    let recall = best_mean(&rv, &cv);
    Ok(SimilarityScore {
        precision,
        recall,
        f1: harmonic(precision, recall),
    })
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("decision refers to unknown generation {0}")]
    DanglingGeneration(String),
    #[error("decision for {generation_id}: {source}")]
    InvalidDecision {
        generation_id: String,
        #[source]
        source: DecisionError,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("external scorer failed after {attempts} attempt(s): {source}")]
    Scorer {
        attempts: u32,
        #[source]
        source: HttpFailure,
    },
}

/// A steward decision keyed by the generation it judges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackInput {
    pub generation_id: String,
    #[serde(flatten)]
    pub decision: ReviewDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub generation_ref: String,
    pub generated_text: String,
    pub final_text: String,
    pub label: ReviewLabel,
    pub rouge_vs_generation: Rouge1Score,
    #[serde(default)]
    pub embed_vs_generation: Option<SimilarityScore>,
}

pub fn feedback_record(
    generation: &GenerationRecord,
    decision: &ReviewDecision,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<FeedbackRecord, EvalError> {
    decision
        .validate(&generation.processed_output)
        .map_err(|source| EvalError::InvalidDecision {
            generation_id: generation.id.clone(),
            source,
        })?;
    let embed_vs_generation = provider
        .map(|p| embed_similarity(&decision.final_text, &generation.processed_output, p))
        .transpose()?;
    Ok(FeedbackRecord {
        generation_ref: generation.id.clone(),
        generated_text: generation.processed_output.clone(),
        final_text: decision.final_text.clone(),
        label: decision.label,
        rouge_vs_generation: rouge1(&decision.final_text, &generation.processed_output),
        embed_vs_generation,
    })
}

pub fn ingest_feedback<'a>(
    decisions: &[FeedbackInput],
    generations: impl IntoIterator<Item = &'a GenerationRecord>,
    provider: Option<&dyn EmbeddingProvider>,
) -> Result<Vec<FeedbackRecord>, EvalError> {
    let by_id: HashMap<&str, &GenerationRecord> = generations.into_iter().map(|g| (g.id.as_str(), g)).collect();
    decisions
        .iter()
        .map(|d| {
            let g = by_id
                .get(d.generation_id.as_str())
                .ok_or_else(|| EvalError::DanglingGeneration(d.generation_id.clone()))?;
            feedback_record(g, &d.decision, provider)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelShare {
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub labels: BTreeMap<ReviewLabel, LabelShare>,
    /// Accepted as is or with a minor edit.
    pub acceptable_percent: f64,
    pub mean_rouge1_f1: Option<f64>,
    pub mean_embed_f1: Option<f64>,
    pub copy: CopyReport,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize<'a>(records: &[FeedbackRecord], copies: impl IntoIterator<Item = &'a CopyInstance>) -> EvalReport {
    let n = records.len();
    let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
    let labels: BTreeMap<ReviewLabel, LabelShare> = ReviewLabel::ALL
        .iter()
        .map(|&l| {
            let count = records.iter().filter(|r| r.label == l).count();
            (l, LabelShare { count, percent: pct(count) })
        })
        .collect();
    let acceptable = labels[&ReviewLabel::AcceptAsIs].count + labels[&ReviewLabel::MinorEdit].count;
    let mean_embed_f1 = if records.iter().all(|r| r.embed_vs_generation.is_some()) {
        mean(records.iter().filter_map(|r| r.embed_vs_generation.map(|s| s.f1)))
    } else {
        None
    };
    EvalReport {
        records: n,
        labels,
        acceptable_percent: pct(acceptable),
        mean_rouge1_f1: mean(records.iter().map(|r| r.rouge_vs_generation.f1)),
        mean_embed_f1,
        copy: copy_report(copies),
    }
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "Steward feedback: {} record(s)", self.records);
        for (label, share) in &self.labels {
            let _ = writeln!(s, "  {:<13} {:>6}  {:>6.2}%", label.as_str(), share.count, share.percent);
        }
        let _ = writeln!(s, "  acceptable (as is or minor edit): {:.2}%", self.acceptable_percent);
        let _ = writeln!(s, "Mean Rouge-1 F1 vs generation: {}", opt(self.mean_rouge1_f1));
        let _ = writeln!(s, "Mean embedding-similarity F1 vs generation: {}", opt(self.mean_embed_f1));
        let _ = writeln!(
            s,
            "Copy behavior (Rouge-1 F1 > {COPY_THRESHOLD}): {}/{} = {:.2}% overall, {}/{} = {:.2}% on exact matches",
            self.copy.all.copied,
            self.copy.all.total_instances,
            self.copy.all.percent_copied,
            self.copy.exact_match.copied,
            self.copy.exact_match.total_instances,
            self.copy.exact_match.percent_copied,
        );
        s
    }
}

/// Text-pair scorer behind HTTP: POST {candidate, reference} -> {score}.
pub struct ExternalScorer {
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl ExternalScorer {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        Self {
            url: url.into(),
            api_key,
            agent: agent(timeout),
            retry,
        }
    }

    pub fn score(&self, candidate: &str, reference: &str) -> Result<f64, EvalError> {
        #[derive(Serialize)]
        struct Req<'a> {
            candidate: &'a str,
            reference: &'a str,
        }
        #[derive(Deserialize)]
        struct Resp {
            score: f64,
        }
        let body = Req { candidate, reference };
        self.retry
            .run(|_| {
                post_json::<_, Resp>(&self.agent, &self.url, self.api_key.as_deref(), &body)
                    .map(|r| r.score)
                    .map_err(HttpFailure::classify)
            })
            .map_err(|e| EvalError::Scorer {
                attempts: e.attempts,
                source: e.last,
            })
    }
}
