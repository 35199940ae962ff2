//! The TOML configuration file shared by the CLI and the service.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{EmbeddingProvider, HashEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use crate::expander::{AbbreviationDictionary, DictionaryError};
use crate::gateway::{
    ChatConfig, ChatProvider, CorrectionError, CorrectionSet, EchoMock, Gateway, HttpChatProvider, ParaphraseMock,
    WordlistGuardrail, DEFAULT_MAX_IN_FLIGHT,
};
use crate::index::NameText;
use crate::prompt::{AuditList, PromptError, TableQuestionSet, DEFAULT_COLUMN_LIMIT, DEFAULT_TOKEN_BUDGET};
use crate::retrieval::RetrievalConfig;
use crate::retry::RetryPolicy;

pub const CONFIG_ENV: &str = "CATALOG_SCRIBE_CONFIG";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Corrections(#[from] CorrectionError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    #[default]
    Local,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub provider: EmbeddingKind,
    pub dimension: usize,
    pub hash_seed: u64,
    pub name_text: NameText,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            provider: EmbeddingKind::Local,
            dimension: HashEmbedder::DEFAULT_DIMENSION,
            hash_seed: HashEmbedder::DEFAULT_SEED,
            name_text: NameText::Spaced,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationKind {
    #[default]
    Echo,
    Paraphrase,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSettings {
    pub provider: GenerationKind,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    /// Used by the HTTP provider; LLM_* environment variables take precedence.
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            provider: GenerationKind::Echo,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            retry: RetryPolicy::default(),
            temperature: 0.2,
            max_tokens: 256,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptSettings {
    pub token_budget: usize,
    pub column_limit: usize,
    pub audit_columns: Vec<String>,
    pub questions: Vec<String>,
    /// Defaults to question order.
    pub stitch_order: Option<Vec<usize>>,
}

impl Default for PromptSettings {
    fn default() -> Self {
        let q = TableQuestionSet::default();
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
            column_limit: DEFAULT_COLUMN_LIMIT,
            audit_columns: AuditList::default().0,
            questions: q.questions,
            stitch_order: None,
        }
    }
}

impl PromptSettings {
    pub fn question_set(&self) -> Result<TableQuestionSet, PromptError> {
        match &self.stitch_order {
            Some(order) => TableQuestionSet::new(self.questions.clone(), order.clone()),
            None => TableQuestionSet::in_order(self.questions.clone()),
        }
    }

    pub fn audit_list(&self) -> AuditList {
        AuditList(self.audit_columns.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSettings {
    pub dictionary: Option<PathBuf>,
    pub corrections: Option<PathBuf>,
    pub wordlist: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub bind: String,
    pub catalog: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub journal: PathBuf,
    /// Requests must carry `Authorization: Bearer <token>` when set.
    pub bearer_token: Option<String>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            catalog: None,
            index: None,
            journal: PathBuf::from("reviews.journal"),
            bearer_token: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub embedding: EmbeddingSettings,
    pub retrieval: RetrievalConfig,
    pub generation: GenerationSettings,
    pub prompt: PromptSettings,
    pub paths: PathSettings,
    pub service: ServiceSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            embedding: EmbeddingSettings::default(),
            retrieval: RetrievalConfig::default(),
            generation: GenerationSettings::default(),
            prompt: PromptSettings::default(),
            paths: PathSettings::default(),
            service: ServiceSettings::default(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let body = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Config = toml::from_str(&body).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the file named by CATALOG_SCRIBE_CONFIG, or the defaults.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.embedding.dimension == 0 {
            return Err(ConfigError::Invalid("embedding.dimension must be positive".into()));
        }
        if self.retrieval.top_k == 0 {
            return Err(ConfigError::Invalid("retrieval.top_k must be at least 1".into()));
        }
        self.prompt.question_set()?;
        Ok(())
    }

    /// sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn dictionary(&self) -> Result<AbbreviationDictionary, ConfigError> {
        Ok(match &self.paths.dictionary {
            Some(p) => AbbreviationDictionary::load(p)?,
            None => AbbreviationDictionary::builtin(),
        })
    }

    pub fn embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        Ok(match self.embedding.provider {
            EmbeddingKind::Local => Arc::new(HashEmbedder::new(self.embedding.dimension, self.embedding.hash_seed)),
            EmbeddingKind::Remote => Arc::new(RemoteEmbedder::new(
                RemoteEmbedderConfig::from_env().map_err(|e| ConfigError::Invalid(e.to_string()))?,
            )),
        })
    }

    pub fn chat_provider(&self, kind: GenerationKind) -> Result<Arc<dyn ChatProvider>, ConfigError> {
        Ok(match kind {
            GenerationKind::Echo => Arc::new(EchoMock),
            GenerationKind::Paraphrase => Arc::new(ParaphraseMock::new(self.seed)),
            GenerationKind::Http => {
                let g = &self.generation;
                let mut chat = ChatConfig::from_env().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if std::env::var_os("LLM_TEMPERATURE").is_none() {
                    chat.temperature = g.temperature;
                }
                chat.max_tokens = g.max_tokens;
                chat.timeout_secs = g.timeout_secs;
                Arc::new(HttpChatProvider::new(chat))
            }
        })
    }

    pub fn gateway(&self, kind: GenerationKind) -> Result<Gateway, ConfigError> {
        let corrections = match &self.paths.corrections {
            Some(p) => CorrectionSet::load(p)?,
            None => CorrectionSet::builtin(),
        };
        let guardrail = match &self.paths.wordlist {
            Some(p) => WordlistGuardrail::load(p).map_err(|source| ConfigError::Io { path: p.clone(), source })?,
            None => WordlistGuardrail::builtin(),
        };
        Ok(Gateway::new(self.chat_provider(kind)?)
            .with_retry(self.generation.retry)
            .with_corrections(corrections)
            .with_guardrail(Arc::new(guardrail))
            .with_max_in_flight(self.generation.max_in_flight))
    }
}
