//! Few-shot example selection: nearest names from the flat index, exact-name
//! tiers first, otherwise a greedy LCS cover of the query's tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ColumnAsset, ColumnKey};
use crate::embedding::{embed_one, EmbeddingProvider};
use crate::expander::{expand_name, AbbreviationDictionary, ExpansionContext};
use crate::index::{FlatIndex, IndexError, DEFAULT_TOP_K};
use crate::text::{clean_text, tokenize_name, word_tokens, TokenizeError};

pub const MAX_EXAMPLES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchTier {
    ExactSameTable,
    ExactSameSource,
    ExactOther,
    Partial,
}

impl MatchTier {
    pub fn is_exact(self) -> bool {
        self != MatchTier::Partial
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub key: ColumnKey,
    pub example_text: String,
    pub match_tier: MatchTier,
    pub similarity_distance: f64,
    /// Query tokens this example accounts for, in query order.
    pub covered_tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalOutcome {
    pub query: ColumnKey,
    pub query_tokens: Vec<String>,
    pub examples: Vec<FewShotExample>,
    pub exact_match_found: bool,
    pub uncovered_tokens: Vec<String>,
}

/// A search hit resolved to its catalog entry.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub column: &'a ColumnAsset,
    pub distance: f64,
    pub rank: usize,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query name cannot be tokenized: {0}")]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

impl From<crate::embedding::EmbedError> for RetrievalError {
    fn from(e: crate::embedding::EmbedError) -> Self {
        RetrievalError::Index(IndexError::Embed(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LcsMatch {
    pub length: usize,
    /// Indices into `a` of one maximal alignment, leftmost on `a`.
    pub positions: Vec<usize>,
}

/// Word-level longest common subsequence with the alignment on `a`.
pub fn lcs<T: PartialEq>(a: &[T], b: &[T]) -> LcsMatch {
    let (n, m) = (a.len(), b.len());
    // dp[i][j] = LCS length of a[i..] and b[j..]
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            dp[i][j] = if a[i] == b[j] {
                dp[i + 1][j + 1] + 1
            } else {
                dp[i + 1][j].max(dp[i][j + 1])
            };
        }
    }
    let mut positions = Vec::with_capacity(dp[0][0]);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if a[i] == b[j] {
            positions.push(i);
            i += 1;
            j += 1;
        } else if dp[i][j + 1] == dp[i][j] {
            j += 1;
        } else {
            i += 1;
        }
    }
    LcsMatch {
        length: dp[0][0],
        positions,
    }
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    lcs(a, b).length
}

fn name_tokens(name: &str) -> Vec<String> {
    tokenize_name(name).map(|t| t.tokens).unwrap_or_default()
}

fn tier_for(query: &ColumnAsset, candidate: &ColumnAsset) -> MatchTier {
    if candidate.table_name == query.table_name {
        MatchTier::ExactSameTable
    } else if candidate.data_source == query.data_source {
        MatchTier::ExactSameSource
    } else {
        MatchTier::ExactOther
    }
}

fn example_text(column: &ColumnAsset) -> Option<String> {
    column.example_text().map(clean_text).filter(|t| !t.is_empty())
}

/// Candidates whose tokenized name equals the query's, best tier first,
/// nearest first within a tier. At most three.
pub fn select_exact(query: &ColumnAsset, candidates: &[Candidate<'_>]) -> Vec<FewShotExample> {
    let wanted = name_tokens(&query.column_name);
    if wanted.is_empty() {
        return Vec::new();
    }
    let mut exact: Vec<(MatchTier, &Candidate<'_>, String)> = candidates
        .iter()
        .filter(|c| c.column.key() != query.key() && name_tokens(&c.column.column_name) == wanted)
        .filter_map(|c| example_text(c.column).map(|t| (tier_for(query, c.column), c, t)))
        .collect();
    exact.sort_by(|x, y| {
        x.0.cmp(&y.0)
            .then(x.1.distance.total_cmp(&y.1.distance))
            .then(x.1.rank.cmp(&y.1.rank))
    });
    exact
        .into_iter()
        .take(MAX_EXAMPLES)
        .map(|(tier, c, text)| FewShotExample {
            key: c.column.key(),
            example_text: text,
            match_tier: tier,
            similarity_distance: c.distance,
            covered_tokens: wanted.clone(),
        })
        .collect()
}

/// Greedy cover of `query_tokens` by LCS alignment. `candidate_tokens[i]`
/// holds the tokens of `candidates[i]`. Returns the examples and the tokens
/// left uncovered.
pub fn select_by_coverage(
    query_tokens: &[String],
    candidates: &[Candidate<'_>],
    candidate_tokens: &[Vec<String>],
) -> (Vec<FewShotExample>, Vec<String>) {
    debug_assert_eq!(candidates.len(), candidate_tokens.len());
    let usable: Vec<(usize, String)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| example_text(c.column).map(|t| (i, t)))
        .collect();

    let mut uncovered: Vec<usize> = (0..query_tokens.len()).collect();
    let mut picked: Vec<FewShotExample> = Vec::new();
    let mut taken = vec![false; candidates.len()];

    while picked.len() < MAX_EXAMPLES && !uncovered.is_empty() {
        let remaining: Vec<&String> = uncovered.iter().map(|&p| &query_tokens[p]).collect();
        let mut best: Option<(usize, &String, LcsMatch)> = None;
        for (i, text) in &usable {
            if taken[*i] {
                continue;
            }
            let cand: Vec<&String> = candidate_tokens[*i].iter().collect();
            let m = lcs(&remaining, &cand);
            if m.length == 0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bi, _, bm)) => {
                    let (c, b) = (&candidates[*i], &candidates[*bi]);
                    m.length > bm.length
                        || (m.length == bm.length
                            && (c.distance, c.rank) < (b.distance, b.rank))
                }
            };
            if better {
                best = Some((*i, text, m));
            }
        }
        let Some((i, text, m)) = best else { break };
        taken[i] = true;
        let newly: Vec<usize> = m.positions.iter().map(|&p| uncovered[p]).collect();
        uncovered.retain(|p| !newly.contains(p));
        picked.push(FewShotExample {
            key: candidates[i].column.key(),
            example_text: text.clone(),
            match_tier: MatchTier::Partial,
            similarity_distance: candidates[i].distance,
            covered_tokens: newly.iter().map(|&p| query_tokens[p].clone()).collect(),
        });
    }

    // Coverage stalled: spend the free slots on the nearest names.
    if !uncovered.is_empty() {
        for (i, text) in &usable {
            if picked.len() >= MAX_EXAMPLES {
                break;
            }
            if taken[*i] {
                continue;
            }
            taken[*i] = true;
            picked.push(FewShotExample {
                key: candidates[*i].column.key(),
                example_text: text.clone(),
                match_tier: MatchTier::Partial,
                similarity_distance: candidates[*i].distance,
                covered_tokens: Vec::new(),
            });
        }
    }
    let uncovered = uncovered.into_iter().map(|p| query_tokens[p].clone()).collect();
    (picked, uncovered)
}

/// Which word units the coverage step compares.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageTokens {
    /// Tokens of the physical name, abbreviations included.
    #[default]
    Raw,
    /// Words of the expanded name on both sides.
    Expanded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub coverage_tokens: CoverageTokens,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            coverage_tokens: CoverageTokens::Raw,
        }
    }
}

/// Shared state for answering retrieval queries against one catalog.
pub struct Retriever<'a> {
    index: &'a FlatIndex,
    provider: &'a dyn EmbeddingProvider,
    lookup: HashMap<ColumnKey, &'a ColumnAsset>,
    dictionary: &'a AbbreviationDictionary,
    config: RetrievalConfig,
}

impl<'a> Retriever<'a> {
    pub fn new(
        index: &'a FlatIndex,
        provider: &'a dyn EmbeddingProvider,
        columns: impl IntoIterator<Item = &'a ColumnAsset>,
        dictionary: &'a AbbreviationDictionary,
        config: RetrievalConfig,
    ) -> Result<Self, RetrievalError> {
        index.check_provider(provider)?;
        Ok(Self {
            index,
            provider,
            lookup: columns.into_iter().map(|c| (c.key(), c)).collect(),
            dictionary,
            config,
        })
    }

    pub fn config(&self) -> RetrievalConfig {
        self.config
    }

    fn coverage_view(&self, column: &ColumnAsset) -> Vec<String> {
        match self.config.coverage_tokens {
            CoverageTokens::Raw => name_tokens(&column.column_name),
            CoverageTokens::Expanded => {
                let ctx = ExpansionContext::new(&column.table_name, &column.data_source);
                expand_name(&column.column_name, &ctx, self.dictionary)
                    .map(|r| word_tokens(&r.expanded_name))
                    .unwrap_or_default()
            }
        }
    }

    /// Nearest indexed columns to the query name, self excluded, resolved
    /// against the catalog.
    pub fn candidates(&self, query: &ColumnAsset) -> Result<Vec<Candidate<'a>>, RetrievalError> {
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        let text = self.index.name_text().render(&query.column_name);
        let vector = embed_one(&text, self.provider)?;
        let self_key = query.key();
        let hits = self.index.search(&vector, self.config.top_k.max(1))?;
        Ok(hits
            .into_iter()
            .filter(|h| h.key != self_key)
            .filter_map(|h| {
                self.lookup.get(&h.key).map(|column| Candidate {
                    column,
                    distance: h.distance,
                    rank: h.rank,
                })
            })
            .collect())
    }

    pub fn retrieve(&self, query: &ColumnAsset) -> Result<RetrievalOutcome, RetrievalError> {
        let raw_tokens = tokenize_name(&query.column_name)?.tokens;
        let candidates = self.candidates(query)?;
        let exact = select_exact(query, &candidates);
        if !exact.is_empty() {
            return Ok(RetrievalOutcome {
                query: query.key(),
                query_tokens: raw_tokens,
                examples: exact,
                exact_match_found: true,
                uncovered_tokens: Vec::new(),
            });
        }
        let query_tokens = match self.config.coverage_tokens {
            CoverageTokens::Raw => raw_tokens,
            CoverageTokens::Expanded => self.coverage_view(query),
        };
        let cand_tokens: Vec<Vec<String>> = candidates.iter().map(|c| self.coverage_view(c.column)).collect();
        let (examples, uncovered_tokens) = select_by_coverage(&query_tokens, &candidates, &cand_tokens);
        Ok(RetrievalOutcome {
            query: query.key(),
            query_tokens,
            examples,
            exact_match_found: false,
            uncovered_tokens,
        })
    }
}

/// One-shot retrieval with default settings.
pub fn retrieve_fewshot(
    query: &ColumnAsset,
    index: &FlatIndex,
    provider: &dyn EmbeddingProvider,
    columns: &[ColumnAsset],
    k: usize,
) -> Result<RetrievalOutcome, RetrievalError> {
    let dict = AbbreviationDictionary::builtin();
    let config = RetrievalConfig {
        top_k: k,
        ..RetrievalConfig::default()
    };
    Retriever::new(index, provider, columns, &dict, config)?.retrieve(query)
}
