//! Catalog assets, dump ingestion and snapshot persistence.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// Identity of a column inside a catalog.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnKey {
    pub column_name: String,
    pub table_name: String,
    pub data_source: String,
}

impl ColumnKey {
    pub fn new(
        column_name: impl Into<String>,
        table_name: impl Into<String>,
        data_source: impl Into<String>,
    ) -> Self {
        Self {
            column_name: column_name.into(),
            table_name: table_name.into(),
            data_source: data_source.into(),
        }
    }

    pub fn table_key(&self) -> TableKey {
        TableKey::new(&self.table_name, &self.data_source)
    }
}

impl fmt::Display for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.data_source, self.table_name, self.column_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TableKey {
    pub table_name: String,
    pub data_source: String,
}

impl TableKey {
    pub fn new(table_name: impl Into<String>, data_source: impl Into<String>) -> Self {
        Self {
            table_name: table_name.into(),
            data_source: data_source.into(),
        }
    }
}

impl fmt::Display for TableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.data_source, self.table_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnAsset {
    pub column_name: String,
    pub table_name: String,
    pub data_source: String,
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub is_important: bool,
    #[serde(default)]
    pub is_primary_key: bool,
    #[serde(default)]
    pub popularity_rank: Option<u32>,
}

impl ColumnAsset {
    pub fn new(
        column_name: impl Into<String>,
        table_name: impl Into<String>,
        data_source: impl Into<String>,
    ) -> Self {
        Self {
            column_name: column_name.into(),
            table_name: table_name.into(),
            data_source: data_source.into(),
            comment: None,
            description: None,
            is_important: false,
            is_primary_key: false,
            popularity_rank: None,
        }
    }

    pub fn with_description(mut self, text: impl Into<String>) -> Self {
        self.description = Some(text.into());
        self
    }

    pub fn with_comment(mut self, text: impl Into<String>) -> Self {
        self.comment = Some(text.into());
        self
    }

    pub fn key(&self) -> ColumnKey {
        ColumnKey::new(&self.column_name, &self.table_name, &self.data_source)
    }

    pub fn table_key(&self) -> TableKey {
        TableKey::new(&self.table_name, &self.data_source)
    }

    pub fn has_description(&self) -> bool {
        non_blank(&self.description).is_some()
    }

    /// Text usable as a few-shot answer: the curated description, else the
    /// source comment. Blank values count as absent.
    pub fn example_text(&self) -> Option<&str> {
        non_blank(&self.description).or_else(|| non_blank(&self.comment))
    }
}

fn non_blank(v: &Option<String>) -> Option<&str> {
    v.as_deref().filter(|s| !s.trim().is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableAsset {
    pub table_name: String,
    pub data_source: String,
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default)]
    pub business_context: Option<String>,
    #[serde(default)]
    pub update_frequency: Option<String>,
    /// Physical column order.
    #[serde(default)]
    pub columns: Vec<ColumnAsset>,
}

impl TableAsset {
    pub fn new(table_name: impl Into<String>, data_source: impl Into<String>) -> Self {
        Self {
            table_name: table_name.into(),
            data_source: data_source.into(),
            comment: None,
            business_context: None,
            update_frequency: None,
            columns: Vec::new(),
        }
    }

    pub fn key(&self) -> TableKey {
        TableKey::new(&self.table_name, &self.data_source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub columns: Vec<ColumnAsset>,
    pub tables: Vec<TableAsset>,
    pub source_id: String,
    pub loaded_at: DateTime<Utc>,
}

impl Catalog {
    pub fn empty(source_id: impl Into<String>) -> Self {
        Self {
            columns: Vec::new(),
            tables: Vec::new(),
            source_id: source_id.into(),
            loaded_at: Utc::now(),
        }
    }

    /// Builds a catalog from columns, synthesizing a table for every
    /// (table, source) pair not covered by `tables`. Columns are attached to
    /// their tables in the given order.
    pub fn assemble(
        source_id: impl Into<String>,
        columns: Vec<ColumnAsset>,
        mut tables: Vec<TableAsset>,
    ) -> Self {
        let mut position: HashMap<TableKey, usize> = HashMap::new();
        for (i, t) in tables.iter_mut().enumerate() {
            t.columns.clear();
            position.insert(t.key(), i);
        }
        for col in &columns {
            let key = col.table_key();
            let idx = *position.entry(key.clone()).or_insert_with(|| {
                tables.push(TableAsset::new(key.table_name, key.data_source));
                tables.len() - 1
            });
            tables[idx].columns.push(col.clone());
        }
        Self {
            columns,
            tables,
            source_id: source_id.into(),
            loaded_at: Utc::now(),
        }
    }

    pub fn column(&self, key: &ColumnKey) -> Option<&ColumnAsset> {
        self.columns.iter().find(|c| c.key() == *key)
    }

    pub fn table(&self, key: &TableKey) -> Option<&TableAsset> {
        self.tables.iter().find(|t| t.key() == *key)
    }

    /// Hash lookup over the columns, for repeated resolution.
    pub fn column_lookup(&self) -> HashMap<ColumnKey, &ColumnAsset> {
        self.columns.iter().map(|c| (c.key(), c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CatalogFormat {
    Csv,
    Jsonl,
}

impl CatalogFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            _ => None,
        }
    }
}

impl FromStr for CatalogFormat {
    type Err = CatalogError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" | "ndjson" => Ok(Self::Jsonl),
            other => Err(CatalogError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown catalog format {0:?} (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("header is missing required fields: {}", .0.join(", "))]
    MissingFields(Vec<String>),
    #[error("snapshot format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// 1-based line number in the input file (the CSV header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub parsed: usize,
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

const REQUIRED: [&str; 3] = ["column_name", "table_name", "data_source"];

#[derive(Debug, Deserialize)]
struct CsvRow {
    column_name: String,
    table_name: String,
    data_source: String,
    #[serde(default)]
    comment: Option<String>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    is_important: Option<String>,
    #[serde(default)]
    is_primary_key: Option<String>,
    #[serde(default)]
    popularity_rank: Option<String>,
}

fn opt_text(v: Option<String>) -> Option<String> {
    v.filter(|s| !s.is_empty())
}

fn parse_flag(v: Option<&str>, field: &str) -> Result<bool, String> {
    match v.map(str::trim).unwrap_or("") {
        "" | "0" | "false" | "FALSE" | "False" => Ok(false),
        "1" | "true" | "TRUE" | "True" => Ok(true),
        other => Err(format!("{field}: expected 0 or 1, got {other:?}")),
    }
}

impl CsvRow {
    fn into_asset(self) -> Result<ColumnAsset, String> {
        let popularity_rank = match self.popularity_rank.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(v) => Some(
                v.parse::<u32>()
                    .map_err(|_| format!("popularity_rank: expected a non-negative integer, got {v:?}"))?,
            ),
        };
        Ok(ColumnAsset {
            is_important: parse_flag(self.is_important.as_deref(), "is_important")?,
            is_primary_key: parse_flag(self.is_primary_key.as_deref(), "is_primary_key")?,
            column_name: self.column_name,
            table_name: self.table_name,
            data_source: self.data_source,
            comment: opt_text(self.comment),
            description: opt_text(self.description),
            popularity_rank,
        })
    }
}

/// One JSON-lines record. Lines without a `record` tag are columns.
#[derive(Debug, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum JsonRecord {
    Column(ColumnAsset),
    Table(TableRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TableRecord {
    table_name: String,
    data_source: String,
    #[serde(default)]
    comment: Option<String>,
    #[serde(default)]
    business_context: Option<String>,
    #[serde(default)]
    update_frequency: Option<String>,
}

impl From<TableRecord> for TableAsset {
    fn from(r: TableRecord) -> Self {
        TableAsset {
            table_name: r.table_name,
            data_source: r.data_source,
            comment: r.comment,
            business_context: r.business_context,
            update_frequency: r.update_frequency,
            columns: Vec::new(),
        }
    }
}

/// Enforces the per-record invariants while a dump is streamed in.
struct Admission {
    seen: HashSet<ColumnKey>,
    ranks: HashSet<(TableKey, u32)>,
    columns: Vec<ColumnAsset>,
    report: LoadReport,
}

impl Admission {
    fn new() -> Self {
        Self {
            seen: HashSet::new(),
            ranks: HashSet::new(),
            columns: Vec::new(),
            report: LoadReport::default(),
        }
    }

    fn reject(&mut self, line: u64, reason: impl Into<String>) {
        let reason = reason.into();
        warn!(line, %reason, "rejected catalog record");
        self.report.rejected.push(Rejection { line, reason });
    }

    fn offer(&mut self, line: u64, col: ColumnAsset) {
        if col.column_name.trim().is_empty() {
            return self.reject(line, "empty column_name");
        }
        if col.table_name.trim().is_empty() {
            return self.reject(line, "empty table_name");
        }
        let key = col.key();
        if self.seen.contains(&key) {
            return self.reject(line, format!("duplicate key {key}; first occurrence kept"));
        }
        if let Some(rank) = col.popularity_rank {
            if !self.ranks.insert((col.table_key(), rank)) {
                return self.reject(
                    line,
                    format!("popularity_rank {rank} already used in table {}", col.table_key()),
                );
            }
        }
        self.seen.insert(key);
        self.report.accepted += 1;
        self.columns.push(col);
    }
}

fn open(path: &Path) -> Result<File, CatalogError> {
    File::open(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a catalog dump. Bad records are skipped and listed in the report;
/// only file-level problems are errors.
pub fn load_catalog(path: &Path, format: CatalogFormat) -> Result<(Catalog, LoadReport), CatalogError> {
    let source_id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (columns, tables, report) = match format {
        CatalogFormat::Csv => load_csv(path)?,
        CatalogFormat::Jsonl => load_jsonl(path)?,
    };
    Ok((Catalog::assemble(source_id, columns, tables), report))
}

fn load_csv(path: &Path) -> Result<(Vec<ColumnAsset>, Vec<TableAsset>, LoadReport), CatalogError> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(BufReader::new(open(path)?));
    let headers = reader.headers()?.clone();
    let missing: Vec<String> = REQUIRED
        .iter()
        .filter(|f| !headers.iter().any(|h| h.trim() == **f))
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CatalogError::MissingFields(missing));
    }
    let mut admission = Admission::new();
    for record in reader.records() {
        admission.report.parsed += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                admission.reject(line, e.to_string());
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match record.deserialize::<CsvRow>(Some(&headers)) {
            Ok(row) => match row.into_asset() {
                Ok(col) => admission.offer(line, col),
                Err(reason) => admission.reject(line, reason),
            },
            Err(e) => admission.reject(line, e.to_string()),
        }
    }
    Ok((admission.columns, Vec::new(), admission.report))
}

fn load_jsonl(path: &Path) -> Result<(Vec<ColumnAsset>, Vec<TableAsset>, LoadReport), CatalogError> {
    let reader = BufReader::new(open(path)?);
    let mut admission = Admission::new();
    let mut tables: Vec<TableAsset> = Vec::new();
    let mut table_keys = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|source| CatalogError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        admission.report.parsed += 1;
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                admission.reject(line_no, format!("invalid JSON: {e}"));
                continue;
            }
        };
        let value = match value {
            serde_json::Value::Object(mut map) => {
                map.entry("record").or_insert_with(|| "column".into());
                serde_json::Value::Object(map)
            }
            _ => {
                admission.reject(line_no, "expected a JSON object");
                continue;
            }
        };
        match serde_json::from_value::<JsonRecord>(value) {
            Ok(JsonRecord::Column(col)) => admission.offer(line_no, col),
            Ok(JsonRecord::Table(t)) => {
                if t.table_name.trim().is_empty() {
                    admission.reject(line_no, "empty table_name");
                } else if !table_keys.insert(TableKey::new(&t.table_name, &t.data_source)) {
                    admission.reject(line_no, "duplicate table record; first occurrence kept");
                } else {
                    admission.report.accepted += 1;
                    tables.push(t.into());
                }
            }
            Err(e) => {
                let msg = e.to_string();
                let reason = REQUIRED
                    .iter()
                    .find(|f| msg.contains(&format!("missing field `{f}`")))
                    .map(|f| format!("missing required field {f}"))
                    .unwrap_or(msg);
                admission.reject(line_no, reason);
            }
        }
    }
    Ok((admission.columns, tables, admission.report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCounts {
    pub columns: usize,
    pub tables: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub source_id: String,
    pub loaded_at: DateTime<Utc>,
    pub counts: SnapshotCounts,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum SnapshotRecord {
    Column(ColumnAsset),
    Table {
        #[serde(flatten)]
        table: TableRecord,
        column_names: Vec<String>,
    },
}

/// Writes a JSON-lines snapshot: a header line followed by column records
/// and then table records (tables reference their columns by name).
pub fn save_snapshot(catalog: &Catalog, path: &Path) -> Result<(), CatalogError> {
    let io_err = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let header = SnapshotHeader {
        format_version: SNAPSHOT_FORMAT_VERSION,
        source_id: catalog.source_id.clone(),
        loaded_at: catalog.loaded_at,
        counts: SnapshotCounts {
            columns: catalog.columns.len(),
            tables: catalog.tables.len(),
        },
    };
    write_json_line(&mut out, &header).map_err(io_err)?;
    for col in &catalog.columns {
        write_json_line(&mut out, &SnapshotRecord::Column(col.clone())).map_err(io_err)?;
    }
    for t in &catalog.tables {
        let record = SnapshotRecord::Table {
            table: TableRecord {
                table_name: t.table_name.clone(),
                data_source: t.data_source.clone(),
                comment: t.comment.clone(),
                business_context: t.business_context.clone(),
                update_frequency: t.update_frequency.clone(),
            },
            column_names: t.columns.iter().map(|c| c.column_name.clone()).collect(),
        };
        write_json_line(&mut out, &record).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub(crate) fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

/// Writes the catalog as a JSON-lines dump readable by [`load_catalog`]:
/// table records first, then one line per column.
pub fn save_jsonl(catalog: &Catalog, path: &Path) -> Result<(), CatalogError> {
    let io = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for t in &catalog.tables {
        let record = serde_json::json!({
            "record": "table",
            "table_name": t.table_name,
            "data_source": t.data_source,
            "comment": t.comment,
            "business_context": t.business_context,
            "update_frequency": t.update_frequency,
        });
        write_json_line(&mut out, &record).map_err(io)?;
    }
    for c in &catalog.columns {
        write_json_line(&mut out, c).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_snapshot(path: &Path) -> Result<Catalog, CatalogError> {
    let reader = BufReader::new(open(path)?);
    let mut lines = reader.lines();
    let io_err = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let first = lines
        .next()
        .ok_or_else(|| CatalogError::CorruptSnapshot("missing header".into()))?
        .map_err(io_err)?;
    let raw: serde_json::Value = serde_json::from_str(&first)
        .map_err(|e| CatalogError::CorruptSnapshot(format!("header: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CatalogError::CorruptSnapshot("header lacks format_version".into()))?;
    if version != SNAPSHOT_FORMAT_VERSION as u64 {
        return Err(CatalogError::VersionMismatch {
            found: version as u32,
            expected: SNAPSHOT_FORMAT_VERSION,
        });
    }
    let header: SnapshotHeader = serde_json::from_value(raw)
        .map_err(|e| CatalogError::CorruptSnapshot(format!("header: {e}")))?;

    let mut columns = Vec::with_capacity(header.counts.columns);
    let mut tables = Vec::with_capacity(header.counts.tables);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        let record: SnapshotRecord = serde_json::from_str(&line)
            .map_err(|e| CatalogError::CorruptSnapshot(format!("record {}: {e}", i + 1)))?;
        match record {
            SnapshotRecord::Column(c) => columns.push(c),
            SnapshotRecord::Table { table, column_names } => tables.push((table, column_names)),
        }
    }
    if columns.len() != header.counts.columns || tables.len() != header.counts.tables {
        return Err(CatalogError::CorruptSnapshot(format!(
            "header announces {} columns / {} tables, found {} / {}",
            header.counts.columns,
            header.counts.tables,
            columns.len(),
            tables.len()
        )));
    }

    let lookup: HashMap<ColumnKey, &ColumnAsset> = columns.iter().map(|c| (c.key(), c)).collect();
    let mut assembled = Vec::with_capacity(tables.len());
    for (record, names) in tables {
        let mut table: TableAsset = record.into();
        for name in names {
            let key = ColumnKey::new(name, &table.table_name, &table.data_source);
            let col = lookup.get(&key).ok_or_else(|| {
                CatalogError::CorruptSnapshot(format!("table references unknown column {key}"))
            })?;
            table.columns.push((*col).clone());
        }
        assembled.push(table);
    }
    Ok(Catalog {
        columns,
        tables: assembled,
        source_id: header.source_id,
        loaded_at: header.loaded_at,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const HEADER: &str =
        "column_name,table_name,data_source,comment,description,is_important,is_primary_key,popularity_rank\n";

    #[test]
    fn loads_three_row_csv() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}ytd_dist_amt,dist,lake,<b>ytd</b>,Year to date distribution amount,1,0,1\n\
             acct_id,dist,lake,,,0,1,\n\
             shr_exp_d,opts,wh,share expiry,,0,0,3\n"
        );
        let p = write(&dir, "c.csv", &body);
        let (cat, report) = load_catalog(&p, CatalogFormat::Csv).unwrap();
        assert_eq!(cat.columns.len(), 3);
        assert_eq!(report.parsed, 3);
        assert_eq!(report.accepted, 3);
        assert!(report.rejected.is_empty());
        assert_eq!(cat.tables.len(), 2);
        let first = &cat.columns[0];
        assert!(first.is_important);
        assert_eq!(first.popularity_rank, Some(1));
        assert_eq!(cat.columns[1].comment, None);
        assert!(cat.columns[1].is_primary_key);
        // synthesized tables keep physical order
        let dist = cat.table(&TableKey::new("dist", "lake")).unwrap();
        assert_eq!(dist.columns[0].column_name, "ytd_dist_amt");
        assert_eq!(dist.columns[1].column_name, "acct_id");
    }

    #[test]
    fn rejects_bad_rows_and_keeps_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER},t,s,,,0,0,\n\
             a,t,s,,,0,0,\n\
             a,t,s,,second,0,0,\n\
             b,t,s,,,2,0,\n\
             c,t,s,,,0,0,x\n"
        );
        let p = write(&dir, "c.csv", &body);
        let (cat, report) = load_catalog(&p, CatalogFormat::Csv).unwrap();
        assert_eq!(cat.columns.len(), 1);
        assert_eq!(cat.columns[0].description, None, "first occurrence wins");
        assert_eq!(report.parsed, 5);
        assert_eq!(report.parsed, report.accepted + report.rejected.len());
        let lines: Vec<u64> = report.rejected.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 4, 5, 6]);
        assert!(report.rejected[0].reason.contains("column_name"));
        assert!(report.rejected[1].reason.contains("duplicate"));
    }

    #[test]
    fn duplicate_popularity_rank_in_table_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}a,t,s,,,0,0,1\nb,t,s,,,0,0,1\nc,u,s,,,0,0,1\n");
        let p = write(&dir, "c.csv", &body);
        let (cat, report) = load_catalog(&p, CatalogFormat::Csv).unwrap();
        assert_eq!(cat.columns.len(), 2);
        assert_eq!(report.rejected.len(), 1);
    }

    #[test]
    fn missing_required_header_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.csv", "column_name,comment\na,b\n");
        match load_catalog(&p, CatalogFormat::Csv) {
            Err(CatalogError::MissingFields(f)) => assert_eq!(f, vec!["table_name", "data_source"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreadable_file_and_unknown_format() {
        assert!(matches!(
            load_catalog(Path::new("/nonexistent/c.csv"), CatalogFormat::Csv),
            Err(CatalogError::Io { .. })
        ));
        assert!(matches!("xml".parse::<CatalogFormat>(), Err(CatalogError::UnknownFormat(_))));
        assert_eq!("JSONL".parse::<CatalogFormat>().unwrap(), CatalogFormat::Jsonl);
    }

    #[test]
    fn jsonl_with_table_records() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"record":"table","table_name":"t","data_source":"s","update_frequency":"daily"}
{"column_name":"a","table_name":"t","data_source":"s","description":"A"}
{"column_name":"b","table_name":"u","data_source":"s"}
not json
{"column_name":"c","data_source":"s"}
"#;
        let p = write(&dir, "c.jsonl", body);
        let (cat, report) = load_catalog(&p, CatalogFormat::Jsonl).unwrap();
        assert_eq!(cat.columns.len(), 2);
        assert_eq!(cat.tables.len(), 2);
        assert_eq!(cat.tables[0].update_frequency.as_deref(), Some("daily"));
        assert_eq!(cat.tables[0].columns.len(), 1);
        assert_eq!(report.parsed, 5);
        assert_eq!(report.accepted, 3);
        assert_eq!(report.rejected.len(), 2);
        assert_eq!(report.rejected[1].line, 5);
        assert!(report.rejected[1].reason.contains("table_name"));
    }

    #[test]
    fn empty_catalog_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.jsonl");
        let cat = Catalog::empty("nothing");
        save_snapshot(&cat, &p).unwrap();
        assert_eq!(load_snapshot(&p).unwrap(), cat);
    }

    #[test]
    fn bumped_version_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.jsonl");
        let mut cat = Catalog::empty("x");
        cat.columns.push(ColumnAsset::new("a", "t", "s"));
        let cat = Catalog::assemble("x", cat.columns, vec![]);
        save_snapshot(&cat, &p).unwrap();
        let body = std::fs::read_to_string(&p).unwrap().replacen(
            "\"format_version\":1",
            "\"format_version\":2",
            1,
        );
        std::fs::write(&p, body).unwrap();
        assert!(matches!(
            load_snapshot(&p),
            Err(CatalogError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn truncated_snapshot_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("snap.jsonl");
        let cols = vec![ColumnAsset::new("a", "t", "s"), ColumnAsset::new("b", "t", "s")];
        save_snapshot(&Catalog::assemble("x", cols, vec![]), &p).unwrap();
        let body = std::fs::read_to_string(&p).unwrap();
        let cut: Vec<&str> = body.lines().take(2).collect();
        std::fs::write(&p, cut.join("\n")).unwrap();
        assert!(matches!(load_snapshot(&p), Err(CatalogError::CorruptSnapshot(_))));
    }
}
