//! Python bindings. Structured results cross the boundary as plain dicts
//! and lists built from the serde representation.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use scribe_core::catalog::{ColumnKey, TableKey};
use scribe_core::config::{Config, GenerationKind};
use scribe_core::embedding::HashEmbedder;
use scribe_core::expander::{AbbreviationDictionary, ExpansionContext};
use scribe_core::fixtures::{make_fixture as core_make_fixture, write_fixture, FixtureSpec};
use scribe_core::pipeline::Engine as CoreEngine;

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn tokenize_name(name: &str) -> PyResult<Vec<String>> {
    scribe_core::text::tokenize_name(name).map(|t| t.tokens).map_err(value_err)
}

/// Expands an abbreviated column name with the built-in dictionary.
#[pyfunction]
#[pyo3(signature = (name, table_name = "", data_source = ""))]
fn expand_name(py: Python<'_>, name: &str, table_name: &str, data_source: &str) -> PyResult<Py<PyAny>> {
    let dict = AbbreviationDictionary::builtin();
    let ctx = ExpansionContext::new(table_name, data_source);
    let result = scribe_core::expander::expand_name(name, &ctx, &dict).map_err(value_err)?;
    to_py(py, &result)
}

/// Returns (length, positions into `a` of one maximal alignment).
#[pyfunction]
fn lcs(a: Vec<String>, b: Vec<String>) -> (usize, Vec<usize>) {
    let m = scribe_core::retrieval::lcs(&a, &b);
    (m.length, m.positions)
}

/// Returns (precision, recall, f1).
#[pyfunction]
fn rouge1(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let s = scribe_core::eval::rouge1(candidate, reference);
    (s.precision, s.recall, s.f1)
}

/// Greedy token-embedding similarity under the local hash embedder.
#[pyfunction]
fn embed_similarity(candidate: &str, reference: &str) -> PyResult<(f64, f64, f64)> {
    let s = scribe_core::eval::embed_similarity(candidate, reference, &HashEmbedder::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((s.precision, s.recall, s.f1))
}

/// Generates a synthetic catalog; writes it to `out` when given and returns
/// the catalog as a dict.
#[pyfunction]
#[pyo3(signature = (columns, tables, seed, duplicates = None, out = None))]
fn make_fixture(
    py: Python<'_>,
    columns: usize,
    tables: usize,
    seed: u64,
    duplicates: Option<usize>,
    out: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let mut spec = FixtureSpec::new(columns, tables, seed);
    if let Some(d) = duplicates {
        spec.duplicates = d;
    }
    let fixture = core_make_fixture(spec).map_err(value_err)?;
    if let Some(dir) = out {
        write_fixture(&fixture, &dir).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    }
    to_py(py, &fixture.catalog)
}

#[pyclass(frozen)]
struct Engine {
    inner: CoreEngine,
}

#[pymethods]
impl Engine {
    /// `mock` is "echo", "paraphrase" or None for the configured provider.
    #[new]
    #[pyo3(signature = (catalog, index = None, config = None, mock = Some("echo".to_string())))]
    fn new(catalog: PathBuf, index: Option<PathBuf>, config: Option<PathBuf>, mock: Option<String>) -> PyResult<Self> {
        let cfg = match config {
            Some(p) => Config::load(&p).map_err(value_err)?,
            None => Config::default(),
        };
        let kind = match mock.as_deref() {
            Some("echo") => GenerationKind::Echo,
            Some("paraphrase") => GenerationKind::Paraphrase,
            Some(other) => return Err(PyValueError::new_err(format!("unknown mock {other:?}"))),
            None => cfg.generation.provider,
        };
        let inner = CoreEngine::from_config(&cfg, &catalog, index.as_deref(), kind).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.catalog.columns.len()
    }

    fn undescribed(&self) -> PyResult<Vec<(String, String, String)>> {
        let pipeline = self.inner.pipeline().map_err(value_err)?;
        Ok(pipeline
            .undescribed()
            .map(|c| (c.column_name.clone(), c.table_name.clone(), c.data_source.clone()))
            .collect())
    }

    fn describe_column(&self, py: Python<'_>, column_name: &str, table_name: &str, data_source: &str) -> PyResult<Py<PyAny>> {
        let key = ColumnKey::new(column_name, table_name, data_source);
        let run = py
            .detach(|| self.inner.pipeline()?.describe_column_key(&key))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &run)
    }

    #[pyo3(signature = (table_name, data_source, business_context = None))]
    fn describe_table(
        &self,
        py: Python<'_>,
        table_name: &str,
        data_source: &str,
        business_context: Option<&str>,
    ) -> PyResult<Py<PyAny>> {
        let key = TableKey::new(table_name, data_source);
        let run = py
            .detach(|| self.inner.pipeline()?.describe_table(&key, business_context))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        to_py(py, &run)
    }
}

#[pymodule]
fn catalog_scribe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tokenize_name, m)?)?;
    m.add_function(wrap_pyfunction!(expand_name, m)?)?;
    m.add_function(wrap_pyfunction!(lcs, m)?)?;
    m.add_function(wrap_pyfunction!(rouge1, m)?)?;
    m.add_function(wrap_pyfunction!(embed_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(make_fixture, m)?)?;
    m.add_class::<Engine>()?;
    Ok(())
}
