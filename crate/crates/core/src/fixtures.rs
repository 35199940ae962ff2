//! Synthetic catalogs with known answers.
//!
//! Column and table names are built only from dictionary abbreviations that
//! have a single expansion, so the expected expanded name of every column is
//! known without running the expander. Each planted duplicate is an
//! undescribed copy of a described column, placed in the twin table (same
//! table name, other data source). Its expected first few-shot example is
//! the original.

use std::collections::HashSet;
use std::path::Path;

use chrono::{TimeZone, Utc};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{save_jsonl, Catalog, CatalogError, ColumnAsset, ColumnKey, TableAsset};
use crate::expander::AbbreviationDictionary;
use crate::jsonl::{write_jsonl, JsonlError};

pub const SOURCES: [&str; 4] = ["lakehouse", "warehouse", "crm", "ledger"];
const FREQUENCIES: [&str; 4] = ["daily", "weekly", "monthly", "intraday"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub columns: usize,
    pub tables: usize,
    /// Planted duplicates, counted within `columns`.
    pub duplicates: usize,
    pub seed: u64,
}

impl FixtureSpec {
    /// One planted duplicate per ten columns.
    pub fn new(columns: usize, tables: usize, seed: u64) -> Self {
        Self {
            columns,
            tables,
            duplicates: columns / 10,
            seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("{columns} column(s) need at least one table")]
    NoTables { columns: usize },
    #[error("{0} duplicates need at least two tables")]
    NoTwins(usize),
    #[error("could only plant {planted} of {wanted} duplicates")]
    TooManyDuplicates { wanted: usize, planted: usize },
    #[error("could not find {wanted} distinct names for table {table}")]
    NamesExhausted { table: String, wanted: usize },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cannot write fixture: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedExpansion {
    pub column: ColumnKey,
    pub expanded_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactTarget {
    pub query: ColumnKey,
    pub expected_first: ColumnKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub spec: FixtureSpec,
    pub catalog: Catalog,
    pub expected_expansions: Vec<ExpectedExpansion>,
    pub exact_targets: Vec<ExactTarget>,
}

/// Single-expansion abbreviations of the shipped dictionary, sorted.
pub fn vocabulary() -> Vec<(String, String)> {
    let dict = AbbreviationDictionary::builtin();
    let mut v: Vec<(String, String)> = dict
        .iter()
        .filter_map(|(abbr, cands)| match cands {
            [only] => Some((abbr.to_string(), only.expansion.clone())),
            _ => None,
        })
        .collect();
    v.sort();
    v
}

struct Name {
    raw: String,
    expanded: String,
}

fn random_name(rng: &mut ChaCha8Rng, vocab: &[(String, String)], min: usize, max: usize) -> Name {
    let n = rng.random_range(min..=max);
    let picks: Vec<&(String, String)> = (0..n).map(|_| vocab.choose(rng).expect("vocabulary")).collect();
    Name {
        raw: picks.iter().map(|p| p.0.as_str()).collect::<Vec<_>>().join("_"),
        expanded: picks.iter().map(|p| p.1.as_str()).collect::<Vec<_>>().join(" "),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().collect::<String>() + c.as_str())
        .unwrap_or_default()
}

fn describe(rng: &mut ChaCha8Rng, col: &str, table: &str, source: &str) -> String {
    match rng.random_range(0..4) {
        0 => format!("{} of the {table} record.", capitalize(col)),
        1 => format!("The {col} recorded for each {table} entry."),
        2 => format!("{} as reported by the {source} system.", capitalize(col)),
        _ => format!("{} captured when the {table} row is loaded, used for reporting and reconciliation.", capitalize(col)),
    }
}

pub fn make_fixture(spec: FixtureSpec) -> Result<Fixture, FixtureError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let vocab = vocabulary();
    let fixed_time = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut catalog = Catalog::empty(format!("fixture-{}", spec.seed));
    catalog.loaded_at = fixed_time;

    if spec.columns == 0 {
        return Ok(Fixture {
            spec,
            catalog,
            expected_expansions: Vec::new(),
            exact_targets: Vec::new(),
        });
    }
    if spec.tables == 0 {
        return Err(FixtureError::NoTables { columns: spec.columns });
    }
    if spec.duplicates > 0 && spec.tables < 2 {
        return Err(FixtureError::NoTwins(spec.duplicates));
    }

    // Tables come in twins: 2k and 2k+1 share a name, in different sources.
    let mut table_names: Vec<Name> = Vec::new();
    let mut used = HashSet::new();
    while table_names.len() < spec.tables.div_ceil(2) {
        let n = random_name(&mut rng, &vocab, 2, 2);
        if used.insert(n.raw.clone()) {
            table_names.push(n);
        }
    }
    let mut tables: Vec<TableAsset> = (0..spec.tables)
        .map(|j| {
            let pair = j / 2;
            let mut t = TableAsset::new(&table_names[pair].raw, SOURCES[(pair + j % 2) % SOURCES.len()]);
            t.update_frequency = Some(FREQUENCIES[pair % FREQUENCIES.len()].to_string());
            t
        })
        .collect();

    let regular = spec.columns - spec.duplicates;
    let mut expansions: Vec<Vec<String>> = vec![Vec::new(); spec.tables];
    let mut names_in: Vec<HashSet<String>> = vec![HashSet::new(); spec.tables];
    let mut ranks: Vec<u32> = vec![0; spec.tables];
    for i in 0..regular {
        let j = i % spec.tables;
        let mut tries = 0;
        let name = loop {
            let n = random_name(&mut rng, &vocab, 2, 3);
            if names_in[j].insert(n.raw.clone()) {
                break n;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(FixtureError::NamesExhausted {
                    table: tables[j].table_name.clone(),
                    wanted: i / spec.tables + 1,
                });
            }
        };
        let t = &tables[j];
        let table_exp = &table_names[j / 2].expanded;
        let mut col = ColumnAsset::new(&name.raw, &t.table_name, &t.data_source);
        let text = describe(&mut rng, &name.expanded, table_exp, &t.data_source);
        match rng.random_range(0..10) {
            0 => col.comment = Some(format!("<p>{}</p>", name.expanded)),
            1 | 2 => {
                col.comment = Some(name.expanded.clone());
                col.description = Some(text);
            }
            _ => col.description = Some(text),
        }
        col.is_primary_key = t.columns.is_empty();
        col.is_important = rng.random_bool(0.1);
        if rng.random_bool(0.3) {
            ranks[j] += 1;
            col.popularity_rank = Some(ranks[j]);
        }
        tables[j].columns.push(col);
        expansions[j].push(name.expanded);
    }

    // Plant duplicates into twin tables.
    let mut originals: Vec<(usize, usize)> = (0..spec.tables)
        .filter(|j| (j ^ 1) < spec.tables)
        .flat_map(|j| (0..tables[j].columns.len()).map(move |c| (j, c)))
        .collect();
    originals.shuffle(&mut rng);
    let mut exact_targets = Vec::new();
    for (j, c) in originals {
        if exact_targets.len() == spec.duplicates {
            break;
        }
        let twin = j ^ 1;
        let orig = tables[j].columns[c].clone();
        if !orig.has_description() || !names_in[twin].insert(orig.column_name.clone()) {
            continue;
        }
        let dup = ColumnAsset::new(&orig.column_name, &tables[twin].table_name, &tables[twin].data_source);
        exact_targets.push(ExactTarget {
            query: dup.key(),
            expected_first: orig.key(),
        });
        let exp = expansions[j][c].clone();
        tables[twin].columns.push(dup);
        expansions[twin].push(exp);
    }
    if exact_targets.len() < spec.duplicates {
        return Err(FixtureError::TooManyDuplicates {
            wanted: spec.duplicates,
            planted: exact_targets.len(),
        });
    }

    let mut expected_expansions = Vec::with_capacity(spec.columns);
    for (t, exps) in tables.iter().zip(&expansions) {
        for (c, e) in t.columns.iter().zip(exps) {
            catalog.columns.push(c.clone());
            expected_expansions.push(ExpectedExpansion {
                column: c.key(),
                expanded_name: e.clone(),
            });
        }
    }
    catalog.tables = tables;
    Ok(Fixture {
        spec,
        catalog,
        expected_expansions,
        exact_targets,
    })
}

pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const EXPANSIONS_FILE: &str = "expected_expansions.jsonl";
pub const EXACT_FILE: &str = "exact_matches.jsonl";
pub const SPEC_FILE: &str = "fixture.json";

pub fn write_fixture(fixture: &Fixture, dir: &Path) -> Result<(), FixtureError> {
    std::fs::create_dir_all(dir)?;
    save_jsonl(&fixture.catalog, &dir.join(CATALOG_FILE))?;
    write_jsonl(&dir.join(EXPANSIONS_FILE), &fixture.expected_expansions)?;
    write_jsonl(&dir.join(EXACT_FILE), &fixture.exact_targets)?;
    let spec = serde_json::to_string_pretty(&fixture.spec).expect("spec serializes");
    std::fs::write(dir.join(SPEC_FILE), spec + "\n")?;
    Ok(())
}

/// A 40-column table for the column-selection hierarchy: 4 audit columns,
/// 6 important, 5 primary keys, 10 ranked (one of them also important) and
/// 16 others, 3 of which have no text.
pub fn selection_table() -> TableAsset {
    // (name, pk, important, rank, has_text)
    const LAYOUT: [(&str, bool, bool, Option<u32>, bool); 40] = [
        ("acct_id", true, false, None, true),
        ("cust_id", true, false, None, true),
        ("ord_nbr", true, false, None, true),
        ("trd_dt", true, false, None, true),
        ("created_by", false, false, None, true),
        ("src_id", true, false, None, true),
        ("tot_amt", false, true, None, true),
        ("pymt_amt", false, true, Some(1), true),
        ("mkt_val", false, true, None, true),
        ("nav_val", false, true, None, true),
        ("cpn_pct", false, true, None, true),
        ("yld_pct", false, true, None, true),
        ("prc_amt", false, false, Some(4), true),
        ("qty_cnt", false, false, Some(2), true),
        ("ccy_cd", false, false, Some(7), true),
        ("eff_dt", false, false, Some(3), true),
        ("mat_dt", false, false, Some(10), true),
        ("ord_typ", false, false, Some(5), true),
        ("brk_nm", false, false, Some(9), true),
        ("trd_flg", false, false, Some(6), true),
        ("updated_ts", false, true, None, true),
        ("sttl_dt", false, false, Some(8), true),
        ("cmsn_amt", false, false, None, true),
        ("lmt_px", false, false, None, true),
        ("hld_qty", false, false, None, false),
        ("prtf_id", false, false, None, true),
        ("pln_nm", false, false, None, true),
        ("contrib_amt", false, false, None, true),
        ("wt_pct", false, false, None, false),
        ("adj_amt", false, false, None, true),
        ("load_ts", false, false, None, true),
        ("inv_nbr", false, false, None, true),
        ("ptcp_cnt", false, false, None, true),
        ("prin_amt", false, false, None, true),
        ("orig_dt", false, false, None, false),
        ("prev_val", false, false, None, true),
        ("upd_ts", false, false, None, true),
        ("lst_upd_dt", false, false, None, true),
        ("grp_nm", false, false, None, true),
        ("etl_batch_id", false, false, None, true),
    ];
    let mut t = TableAsset::new("trd_hld", "lakehouse");
    for (name, pk, important, rank, text) in LAYOUT {
        let mut c = ColumnAsset::new(name, "trd_hld", "lakehouse");
        c.is_primary_key = pk;
        c.is_important = important;
        c.popularity_rank = rank;
        if text {
            c.description = Some(format!("Description of {name}."));
        }
        t.columns.push(c);
    }
    t
}

/// Two-token column names drawn from the vocabulary, all described, in
/// tables of 20.
pub fn coverage_corpus(size: usize, seed: u64) -> Vec<ColumnAsset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = vocabulary();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let n = random_name(&mut rng, &vocab, 2, 2);
        if seen.insert(n.raw.clone()) {
            let table = format!("cov_{}", out.len() / 20);
            out.push(ColumnAsset::new(&n.raw, table, "lakehouse").with_description(capitalize(&n.expanded) + "."));
        }
    }
    out
}

/// Query names made by joining two or three distinct corpus names, never
/// equal to a corpus name.
pub fn coverage_queries(corpus: &[ColumnAsset], count: usize, seed: u64) -> Vec<ColumnAsset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: HashSet<&str> = corpus.iter().map(|c| c.column_name.as_str()).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count && corpus.len() >= 3 {
        let k = rng.random_range(2..=3);
        let parts: Vec<&ColumnAsset> = corpus.choose_multiple(&mut rng, k).collect();
        let name = parts.iter().map(|c| c.column_name.as_str()).collect::<Vec<_>>().join("_");
        if !names.contains(name.as_str()) && seen.insert(name.clone()) {
            out.push(ColumnAsset::new(name, "queries", "lakehouse"));
        }
    }
    out
}
