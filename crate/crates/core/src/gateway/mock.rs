//! Deterministic chat providers for tests and offline runs.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::postprocess::extract_json;
use super::{CallError, ChatProvider};
use crate::prompt::{answer_json, PromptBundle};

/// Falls back to the subject named in the user message when a bundle has no
/// few-shot turns.
fn subject_line(bundle: &PromptBundle) -> String {
    let lines: Vec<&str> = bundle.user_message.lines().map(str::trim).collect();
    for key in ["Expanded name:", "Expanded table name:"] {
        if let Some(v) = lines.iter().find_map(|l| l.strip_prefix(key)) {
            if !v.trim().is_empty() {
                return v.trim().to_string();
            }
        }
    }
    lines.into_iter().find(|l| !l.is_empty()).unwrap_or_default().to_string()
}

/// Returns the first few-shot answer verbatim, like a model that copies its
/// examples.
#[derive(Debug, Clone, Default)]
pub struct EchoMock;

impl ChatProvider for EchoMock {
    fn model_id(&self) -> &str {
        "mock-echo"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, CallError> {
        Ok(match bundle.fewshot_turns.first() {
            Some(turn) => turn.assistant_content.clone(),
            None => answer_json(&subject_line(bundle)),
        })
    }
}

const FRAMES: [(&str, &str); 3] = [
    ("This column captures the", "value as recorded for each business record in the table."),
    ("Holds the", "associated with every entry, as maintained by the owning data source."),
    ("In business terms, this field represents the", "that analysts rely on when reviewing these records."),
];

/// Recomposes the first few-shot answer: drops every fifth word, shuffles
/// the rest with a seeded RNG and wraps them in a framing sentence. The
/// result depends only on the bundle and the seed.
#[derive(Debug, Clone)]
pub struct ParaphraseMock {
    seed: u64,
}

impl ParaphraseMock {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn paraphrase(&self, source: &str, prompt_hash: &str) -> String {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt_hash.as_bytes());
        let digest = h.finalize();
        let mut rng = ChaCha8Rng::from_seed(digest.into());

        let words: Vec<&str> = source.split_whitespace().collect();
        let mut kept: Vec<&str> = if words.len() >= 5 {
            words.iter().enumerate().filter(|(i, _)| i % 5 != 4).map(|(_, w)| *w).collect()
        } else {
            words
        };
        kept.shuffle(&mut rng);
        let (pre, post) = FRAMES[rng.random_range(0..FRAMES.len())];
        format!("{pre} {} {post}", kept.join(" "))
    }
}

impl ChatProvider for ParaphraseMock {
    fn model_id(&self) -> &str {
        "mock-paraphrase"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, CallError> {
        let source = match bundle.fewshot_turns.first() {
            Some(turn) => extract_json(&turn.assistant_content).text,
            None => subject_line(bundle),
        };
        Ok(answer_json(&self.paraphrase(&source, &bundle.prompt_hash)))
    }
}

/// Always fails with a retryable error and counts the calls.
#[derive(Debug, Default)]
pub struct DownMock {
    pub calls: std::sync::atomic::AtomicU32,
}

impl ChatProvider for DownMock {
    fn model_id(&self) -> &str {
        "mock-down"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn complete(&self, _bundle: &PromptBundle) -> Result<String, CallError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        Err(CallError::Retryable("connection refused".into()))
    }
}
