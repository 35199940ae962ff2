//! End-to-end column and table description runs.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Catalog, ColumnAsset, ColumnKey, TableAsset, TableKey};
use crate::embedding::EmbeddingProvider;
use crate::eval::{detect_copy, CopyCheck, CopyInstance, PromptInputs};
use crate::expander::{expand_name, AbbreviationDictionary, ExpandError, ExpansionContext, ExpansionResult};
use crate::gateway::{generation_id, GenerateError, Gateway, GenerationRecord};
use crate::index::FlatIndex;
use crate::prompt::{
    build_column_prompt, build_table_prompt, select_table_columns, stitch_table_description, AuditList,
    DescribedColumn, PhysicalInfo, PromptBundle, PromptError, TableQuestionSet,
};
use crate::retrieval::{RetrievalConfig, RetrievalError, RetrievalOutcome, Retriever};
use crate::text::clean_text;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown column {0}")]
    UnknownColumn(ColumnKey),
    #[error("unknown table {0}")]
    UnknownTable(TableKey),
    #[error("table {0} has no columns to describe")]
    EmptyTable(TableKey),
    #[error(transparent)]
    Expand(#[from] ExpandError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

impl PipelineError {
    /// True when the failure came from the chat provider.
    pub fn is_provider(&self) -> bool {
        matches!(self, PipelineError::Generate(_))
    }
}

/// Everything a column run produced, enough to recompute copy detection
/// offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRun {
    pub asset: ColumnKey,
    pub expansion: ExpansionResult,
    pub retrieval: RetrievalOutcome,
    pub prompt_hash: String,
    pub token_estimate: usize,
    pub prompt_inputs: PromptInputs,
    pub generation: GenerationRecord,
    pub copy: CopyCheck,
}

impl ColumnRun {
    pub fn copy_instance(&self) -> CopyInstance {
        CopyInstance {
            generated_text: self.generation.processed_output.clone(),
            inputs: self.prompt_inputs.clone(),
            exact_match_found: self.retrieval.exact_match_found,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedColumn {
    pub column_name: String,
    pub description: String,
    /// True when the description was generated during this run.
    pub generated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRun {
    pub asset: TableKey,
    pub expansion: ExpansionResult,
    pub selected: Vec<SelectedColumn>,
    pub column_runs: Vec<ColumnRun>,
    pub prompts: Vec<PromptBundle>,
    pub answers: Vec<GenerationRecord>,
    pub description: String,
    /// Combined record for the stitched description.
    pub generation: GenerationRecord,
}

#[derive(Debug, Clone)]
pub struct PipelineSettings {
    pub retrieval: RetrievalConfig,
    pub token_budget: usize,
    pub column_limit: usize,
    pub audit: AuditList,
    pub questions: TableQuestionSet,
    pub seed: u64,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            token_budget: crate::prompt::DEFAULT_TOKEN_BUDGET,
            column_limit: crate::prompt::DEFAULT_COLUMN_LIMIT,
            audit: AuditList::default(),
            questions: TableQuestionSet::default(),
            seed: crate::config::DEFAULT_SEED,
        }
    }
}

impl PipelineSettings {
    pub fn from_config(cfg: &crate::config::Config) -> Result<Self, PromptError> {
        Ok(Self {
            retrieval: cfg.retrieval,
            token_budget: cfg.prompt.token_budget,
            column_limit: cfg.prompt.column_limit,
            audit: cfg.prompt.audit_list(),
            questions: cfg.prompt.question_set()?,
            seed: cfg.seed,
        })
    }
}

pub struct Pipeline<'a> {
    catalog: &'a Catalog,
    dictionary: &'a AbbreviationDictionary,
    retriever: Retriever<'a>,
    gateway: &'a Gateway,
    settings: PipelineSettings,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        catalog: &'a Catalog,
        index: &'a FlatIndex,
        embedder: &'a dyn EmbeddingProvider,
        dictionary: &'a AbbreviationDictionary,
        gateway: &'a Gateway,
        settings: PipelineSettings,
    ) -> Result<Self, PipelineError> {
        let retriever = Retriever::new(index, embedder, &catalog.columns, dictionary, settings.retrieval)?;
        Ok(Self {
            catalog,
            dictionary,
            retriever,
            gateway,
            settings,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        self.catalog
    }

    pub fn expand_column(&self, column: &ColumnAsset) -> Result<ExpansionResult, ExpandError> {
        let ctx = ExpansionContext::new(&column.table_name, &column.data_source);
        expand_name(&column.column_name, &ctx, self.dictionary)
    }

    pub fn describe_column(&self, column: &ColumnAsset) -> Result<ColumnRun, PipelineError> {
        let expansion = self.expand_column(column)?;
        let retrieval = self.retriever.retrieve(column)?;
        let bundle = build_column_prompt(column, &expansion, &retrieval, &[], self.settings.token_budget)?;
        let generation = self.gateway.run(&bundle)?;
        let prompt_inputs = PromptInputs {
            example_texts: retrieval.examples.iter().map(|e| e.example_text.clone()).collect(),
            comment: column.comment.as_deref().map(clean_text).filter(|c| !c.is_empty()),
        };
        let copy = detect_copy(&generation.processed_output, &prompt_inputs);
        Ok(ColumnRun {
            asset: column.key(),
            expansion,
            retrieval,
            prompt_hash: bundle.prompt_hash,
            token_estimate: bundle.token_estimate,
            prompt_inputs,
            generation,
            copy,
        })
    }

    pub fn describe_column_key(&self, key: &ColumnKey) -> Result<ColumnRun, PipelineError> {
        let column = self
            .catalog
            .column(key)
            .ok_or_else(|| PipelineError::UnknownColumn(key.clone()))?;
        self.describe_column(column)
    }

    /// Columns without a curated description, in catalog order.
    pub fn undescribed(&self) -> impl Iterator<Item = &'a ColumnAsset> {
        self.catalog.columns.iter().filter(|c| !c.has_description())
    }

    /// Runs every column in parallel; results keep the input order.
    pub fn describe_columns(&self, columns: &[&ColumnAsset]) -> Vec<Result<ColumnRun, PipelineError>> {
        columns.par_iter().map(|c| self.describe_column(c)).collect()
    }

    fn table_rng(&self, key: &TableKey) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.settings.seed.to_le_bytes());
        h.update(key.table_name.as_bytes());
        h.update([0]);
        h.update(key.data_source.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    pub fn describe_table(&self, key: &TableKey, context: Option<&str>) -> Result<TableRun, PipelineError> {
        let table = self
            .catalog
            .table(key)
            .ok_or_else(|| PipelineError::UnknownTable(key.clone()))?;
        self.describe_table_asset(table, context)
    }

    pub fn describe_table_asset(&self, table: &TableAsset, context: Option<&str>) -> Result<TableRun, PipelineError> {
        let key = table.key();
        let mut rng = self.table_rng(&key);
        let chosen = select_table_columns(table, self.settings.column_limit, &self.settings.audit, &mut rng);
        if chosen.is_empty() {
            return Err(PipelineError::EmptyTable(key));
        }

        let needs: Vec<&ColumnAsset> = chosen.iter().filter(|c| !c.has_description()).collect();
        let mut column_runs = Vec::new();
        for r in self.describe_columns(&needs) {
            column_runs.push(r?);
        }
        let selected: Vec<SelectedColumn> = chosen
            .iter()
            .map(|c| match column_runs.iter().find(|r| r.asset == c.key()) {
                Some(run) => SelectedColumn {
                    column_name: c.column_name.clone(),
                    description: run.generation.processed_output.clone(),
                    generated: true,
                },
                None => SelectedColumn {
                    column_name: c.column_name.clone(),
                    description: c.description.clone().unwrap_or_default(),
                    generated: false,
                },
            })
            .collect();

        let expansion = expand_name(
            &table.table_name,
            &ExpansionContext::new(&table.table_name, &table.data_source),
            self.dictionary,
        )?;
        let described: Vec<DescribedColumn> = selected
            .iter()
            .map(|s| DescribedColumn {
                column_name: s.column_name.clone(),
                description: s.description.clone(),
            })
            .collect();
        let context = context.or(table.business_context.as_deref());
        let prompts = build_table_prompt(
            table,
            &expansion,
            &described,
            &self.settings.questions,
            context,
            self.settings.token_budget,
        )?;
        let mut answers = Vec::with_capacity(prompts.len());
        for p in &prompts {
            answers.push(self.gateway.run(p)?);
        }
        let texts: Vec<String> = answers.iter().map(|a| a.processed_output.clone()).collect();
        let physical = PhysicalInfo {
            data_source: Some(table.data_source.clone()),
            update_frequency: table.update_frequency.clone(),
        };
        let description = stitch_table_description(&texts, &self.settings.questions, &physical)?;
        let generation = combine(&answers, &description, self.gateway);
        Ok(TableRun {
            asset: key,
            expansion,
            selected,
            column_runs,
            prompts,
            answers,
            description,
            generation,
        })
    }
}

/// Owned inputs for a [`Pipeline`], for callers that outlive a single borrow
/// scope such as the service and the Python bindings.
pub struct Engine {
    pub catalog: Catalog,
    pub index: FlatIndex,
    pub embedder: std::sync::Arc<dyn EmbeddingProvider>,
    pub dictionary: AbbreviationDictionary,
    pub gateway: Gateway,
    pub settings: PipelineSettings,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Reads a catalog, guessing the format from the extension (JSONL otherwise).
pub fn open_catalog(path: &std::path::Path) -> Result<Catalog, crate::catalog::CatalogError> {
    let format = crate::catalog::CatalogFormat::from_path(path).unwrap_or(crate::catalog::CatalogFormat::Jsonl);
    let (catalog, report) = crate::catalog::load_catalog(path, format)?;
    if !report.rejected.is_empty() {
        tracing::warn!(rejected = report.rejected.len(), path = %path.display(), "catalog rows rejected");
    }
    Ok(catalog)
}

impl Engine {
    /// Loads the catalog and either loads the index at `index` or builds one
    /// in memory.
    pub fn from_config(
        cfg: &crate::config::Config,
        catalog: &std::path::Path,
        index: Option<&std::path::Path>,
        generation: crate::config::GenerationKind,
    ) -> Result<Self, EngineError> {
        let catalog = open_catalog(catalog)?;
        let embedder = cfg.embedder()?;
        let index = match index {
            Some(p) => crate::index::load_index_for(p, embedder.as_ref())?,
            None => crate::index::build_index(&catalog.columns, embedder.as_ref(), cfg.embedding.name_text)?,
        };
        Ok(Self {
            catalog,
            index,
            embedder,
            dictionary: cfg.dictionary()?,
            gateway: cfg.gateway(generation)?,
            settings: PipelineSettings::from_config(cfg)?,
        })
    }

    pub fn pipeline(&self) -> Result<Pipeline<'_>, PipelineError> {
        Pipeline::new(
            &self.catalog,
            &self.index,
            self.embedder.as_ref(),
            &self.dictionary,
            &self.gateway,
            self.settings.clone(),
        )
    }
}

fn combine(answers: &[GenerationRecord], description: &str, gateway: &Gateway) -> GenerationRecord {
    let mut h = Sha256::new();
    for a in answers {
        h.update(a.prompt_hash.as_bytes());
    }
    let prompt_hash = hex::encode(h.finalize());
    let raw_output = serde_json::to_string(&answers.iter().map(|a| &a.raw_output).collect::<Vec<_>>())
        .expect("strings serialize");
    let model_id = gateway.model_id().to_string();
    let flags: BTreeSet<_> = answers.iter().flat_map(|a| a.postprocess_flags.iter().copied()).collect();
    GenerationRecord {
        id: generation_id(&prompt_hash, &model_id, &raw_output),
        prompt_hash,
        model_id,
        raw_output,
        processed_output: description.to_string(),
        postprocess_flags: flags,
        applied_rules: answers.iter().flat_map(|a| a.applied_rules.iter().cloned()).collect(),
        guardrail_term: answers.iter().find_map(|a| a.guardrail_term.clone()),
        latency_ms: answers.iter().map(|a| a.latency_ms).sum(),
        created_at: gateway.clock().now(),
    }
}
