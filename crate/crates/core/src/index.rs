//! Flat (exhaustive-scan) index over unit-norm column-name vectors.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ColumnAsset, ColumnKey};
use crate::embedding::{embed, EmbedError, EmbeddingProvider};
use crate::text::spaced_name;

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TOP_K: usize = 100;
const BUILD_BATCH: usize = 256;

/// Which rendering of a column name gets embedded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameText {
    /// Separators replaced by spaces: `ytd_dist_amt` -> `ytd dist amt`.
    #[default]
    Spaced,
    /// The physical name verbatim.
    Raw,
}

impl NameText {
    pub fn render(self, column_name: &str) -> String {
        match self {
            NameText::Spaced => {
                let s = spaced_name(column_name);
                if s.is_empty() {
                    column_name.to_string()
                } else {
                    s
                }
            }
            NameText::Raw => column_name.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: ColumnKey,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dimension: usize,
    provider_id: String,
    name_text: NameText,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub key: ColumnKey,
    pub distance: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector has dimension {got}, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index was built with provider {stored:?}, not {requested:?}")]
    ProviderMismatch { stored: String, requested: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("stored vector for {0} is not unit-norm")]
    NotNormalized(ColumnKey),
    #[error("index build aborted after {indexed} of {total} columns: {source}")]
    BuildAborted {
        indexed: usize,
        total: usize,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index file format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt index file: {0}")]
    Corrupt(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Squared L2 distance accumulated in f64, strictly in component order.
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = *x as f64 - *y as f64;
        acc += d * d;
    }
    acc
}

impl FlatIndex {
    pub fn new(dimension: usize, provider_id: impl Into<String>, name_text: NameText) -> Self {
        Self {
            dimension,
            provider_id: provider_id.into(),
            name_text,
            entries: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn name_text(&self) -> NameText {
        self.name_text
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Appends a vector, which must already be unit-norm within 1e-6.
    pub fn push(&mut self, key: ColumnKey, vector: Vec<f32>) -> Result<(), IndexError> {
        if vector.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: vector.len(),
            });
        }
        let norm = vector.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(IndexError::NotNormalized(key));
        }
        self.entries.push(IndexEntry { key, vector });
        Ok(())
    }

    /// The `k` nearest entries by L2 distance, ascending, ties in insertion
    /// order. This is an exhaustive scan.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if query.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: query.len(),
            });
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (squared_l2(query, &e.vector), i))
            .collect();
        let k = k.min(scored.len());
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, by_distance);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_distance);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (d2, i))| SearchHit {
                key: self.entries[i].key.clone(),
                distance: d2.sqrt(),
                rank: rank + 1,
            })
            .collect())
    }

    pub fn check_provider(&self, provider: &dyn EmbeddingProvider) -> Result<(), IndexError> {
        if provider.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: provider.dimension(),
            });
        }
        if provider.provider_id() != self.provider_id {
            return Err(IndexError::ProviderMismatch {
                stored: self.provider_id.clone(),
                requested: provider.provider_id().to_string(),
            });
        }
        Ok(())
    }
}

/// Indexes every column that has a description or comment to offer as a
/// few-shot answer.
pub fn build_index<'a>(
    columns: impl IntoIterator<Item = &'a ColumnAsset>,
    provider: &dyn EmbeddingProvider,
    name_text: NameText,
) -> Result<FlatIndex, IndexError> {
    let eligible: Vec<&ColumnAsset> = columns.into_iter().filter(|c| c.example_text().is_some()).collect();
    let mut index = FlatIndex::new(provider.dimension(), provider.provider_id(), name_text);
    for batch in eligible.chunks(BUILD_BATCH) {
        let texts: Vec<String> = batch.iter().map(|c| name_text.render(&c.column_name)).collect();
        let vectors = embed(&texts, provider).map_err(|source| IndexError::BuildAborted {
            indexed: index.len(),
            total: eligible.len(),
            source,
        })?;
        for (col, v) in batch.iter().zip(vectors) {
            index.push(col.key(), v)?;
        }
    }
    Ok(index)
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format_version: u32,
    dimension: usize,
    provider_id: String,
    name_text: NameText,
    count: usize,
}

/// Layout: one JSON header line, then per entry a little-endian u32 length,
/// the key as JSON, and `dimension` little-endian f32 values.
pub fn save_index(index: &FlatIndex, path: &Path) -> Result<(), IndexError> {
    let io = |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    let header = IndexHeader {
        format_version: INDEX_FORMAT_VERSION,
        dimension: index.dimension,
        provider_id: index.provider_id.clone(),
        name_text: index.name_text,
        count: index.entries.len(),
    };
    let mut line = serde_json::to_vec(&header).expect("header serializes");
    line.push(b'\n');
    out.write_all(&line).map_err(io)?;
    for e in &index.entries {
        let key = serde_json::to_vec(&e.key).expect("key serializes");
        out.write_all(&(key.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&key).map_err(io)?;
        for x in &e.vector {
            out.write_all(&x.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn load_index(path: &Path) -> Result<FlatIndex, IndexError> {
    let io = |source| IndexError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io)?);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(io)?;
    let raw: serde_json::Value =
        serde_json::from_str(&line).map_err(|e| IndexError::Corrupt(format!("header: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| IndexError::Corrupt("header lacks format_version".into()))?;
    if version != INDEX_FORMAT_VERSION as u64 {
        return Err(IndexError::VersionMismatch {
            found: version as u32,
            expected: INDEX_FORMAT_VERSION,
        });
    }
    let header: IndexHeader =
        serde_json::from_value(raw).map_err(|e| IndexError::Corrupt(format!("header: {e}")))?;
    if header.dimension == 0 {
        return Err(IndexError::Corrupt("zero dimension".into()));
    }

    let truncated = |what: &str, i: usize| IndexError::Corrupt(format!("truncated in {what} of entry {i}"));
    let mut index = FlatIndex::new(header.dimension, header.provider_id, header.name_text);
    let mut vec_buf = vec![0u8; header.dimension * 4];
    for i in 0..header.count {
        let mut len = [0u8; 4];
        reader.read_exact(&mut len).map_err(|_| truncated("key length", i))?;
        let mut key = vec![0u8; u32::from_le_bytes(len) as usize];
        reader.read_exact(&mut key).map_err(|_| truncated("key", i))?;
        let key: ColumnKey =
            serde_json::from_slice(&key).map_err(|e| IndexError::Corrupt(format!("entry {i} key: {e}")))?;
        reader.read_exact(&mut vec_buf).map_err(|_| truncated("vector", i))?;
        let vector = vec_buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        index.entries.push(IndexEntry { key, vector });
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(io)? != 0 {
        return Err(IndexError::Corrupt("trailing bytes after last entry".into()));
    }
    Ok(index)
}

/// Loads an index and refuses it unless it was built by `provider`.
pub fn load_index_for(path: &Path, provider: &dyn EmbeddingProvider) -> Result<FlatIndex, IndexError> {
    let index = load_index(path)?;
    index.check_provider(provider)?;
    Ok(index)
}

/// Ordering helper shared with callers that merge hit lists.
pub fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.rank.cmp(&b.rank))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        crate::embedding::normalize(v).unwrap()
    }

    fn random_index(n: usize, dim: usize, seed: u64) -> FlatIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = FlatIndex::new(dim, "test", NameText::Spaced);
        for i in 0..n {
            idx.push(ColumnKey::new(format!("c{i}"), "t", "s"), random_unit(&mut rng, dim)).unwrap();
        }
        idx
    }

    // Independent oracle: naive distance per entry, full stable sort.
    fn brute_force(idx: &FlatIndex, q: &[f32], k: usize) -> Vec<(String, f64)> {
        let mut all: Vec<(String, f64)> = idx
            .entries()
            .iter()
            .map(|e| {
                let d: f64 = e
                    .vector
                    .iter()
                    .zip(q)
                    .fold(0.0, |acc, (a, b)| acc + (*a as f64 - *b as f64).powi(2));
                (e.key.column_name.clone(), d.sqrt())
            })
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        all.truncate(k);
        all
    }

    #[test]
    fn matches_brute_force_top_100() {
        let idx = random_index(200, 16, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let q = random_unit(&mut rng, 16);
            let hits = idx.search(&q, 100).unwrap();
            let oracle = brute_force(&idx, &q, 100);
            let got: Vec<(String, f64)> = hits.iter().map(|h| (h.key.column_name.clone(), h.distance)).collect();
            assert_eq!(got, oracle);
            assert!(hits.iter().enumerate().all(|(i, h)| h.rank == i + 1));
        }
    }

    #[test]
    fn stored_vector_query_ranks_first_at_zero() {
        let idx = random_index(50, 8, 3);
        let q = idx.entries()[17].vector.clone();
        let hits = idx.search(&q, 5).unwrap();
        assert_eq!(hits[0].key.column_name, "c17");
        assert_eq!(hits[0].distance, 0.0);
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn k_larger_than_index_returns_everything() {
        let idx = random_index(7, 4, 4);
        assert_eq!(idx.search(&idx.entries()[0].vector, 100).unwrap().len(), 7);
        let empty = FlatIndex::new(4, "test", NameText::Spaced);
        assert!(empty.search(&[1.0, 0.0, 0.0, 0.0], 3).unwrap().is_empty());
    }

    #[test]
    fn ties_keep_insertion_order() {
        let mut idx = FlatIndex::new(2, "test", NameText::Spaced);
        for name in ["a", "b", "c"] {
            idx.push(ColumnKey::new(name, "t", "s"), vec![1.0, 0.0]).unwrap();
        }
        let names: Vec<String> = idx
            .search(&[0.0, 1.0], 3)
            .unwrap()
            .into_iter()
            .map(|h| h.key.column_name)
            .collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn rejects_bad_queries_and_vectors() {
        let mut idx = random_index(3, 4, 5);
        assert!(matches!(idx.search(&[1.0, 0.0], 1), Err(IndexError::DimensionMismatch { .. })));
        assert!(matches!(idx.search(&[1.0, 0.0, 0.0, 0.0], 0), Err(IndexError::ZeroK)));
        assert!(matches!(
            idx.push(ColumnKey::new("x", "t", "s"), vec![2.0, 0.0, 0.0, 0.0]),
            Err(IndexError::NotNormalized(_))
        ));
    }

    #[test]
    fn l2_order_equals_reverse_cosine_order() {
        let idx = random_index(300, 12, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_unit(&mut rng, 12);
            let by_l2: Vec<String> = idx.search(&q, 300).unwrap().into_iter().map(|h| h.key.column_name).collect();
            let mut by_cos: Vec<(String, f64)> = idx
                .entries()
                .iter()
                .map(|e| (e.key.column_name.clone(), crate::embedding::cosine(&q, &e.vector)))
                .collect();
            by_cos.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            // Allow swaps only where cosines are equal to float precision.
            for (i, (name, _)) in by_cos.iter().enumerate() {
                if by_l2[i] != *name {
                    let j = by_l2.iter().position(|n| n == name).unwrap();
                    assert!((by_cos[i].1 - by_cos[j].1).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn build_skips_undescribable_columns() {
        let cols = vec![
            ColumnAsset::new("ytd_dist_amt", "t", "s").with_description("Year to date distribution amount"),
            ColumnAsset::new("acct_id", "t", "s").with_comment("account"),
            ColumnAsset::new("bare_col", "t", "s"),
            ColumnAsset::new("blank", "t", "s").with_description("  "),
        ];
        let e = HashEmbedder::new(32, 1);
        let idx = build_index(&cols, &e, NameText::Spaced).unwrap();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.provider_id(), e.provider_id());
        let empty = build_index(&cols[2..], &e, NameText::Spaced).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.bin");
        let idx = random_index(40, 8, 8);
        save_index(&idx, &p).unwrap();
        assert_eq!(load_index(&p).unwrap(), idx);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_index(&p), Err(IndexError::Corrupt(_))));

        let empty = FlatIndex::new(8, "test", NameText::Raw);
        save_index(&empty, &p).unwrap();
        assert_eq!(load_index(&p).unwrap(), empty);

        let text = String::from_utf8(std::fs::read(&p).unwrap()).unwrap().replace("\"format_version\":1", "\"format_version\":9");
        std::fs::write(&p, text).unwrap();
        assert!(matches!(load_index(&p), Err(IndexError::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn load_refuses_a_different_provider() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.bin");
        let cols = vec![ColumnAsset::new("a_b", "t", "s").with_description("x")];
        let built = build_index(&cols, &HashEmbedder::new(16, 1), NameText::Spaced).unwrap();
        save_index(&built, &p).unwrap();
        assert!(load_index_for(&p, &HashEmbedder::new(16, 1)).is_ok());
        assert!(matches!(
            load_index_for(&p, &HashEmbedder::new(32, 1)),
            Err(IndexError::DimensionMismatch { expected: 16, got: 32 })
        ));
        assert!(matches!(
            load_index_for(&p, &HashEmbedder::new(16, 2)),
            Err(IndexError::ProviderMismatch { .. })
        ));
    }
}
