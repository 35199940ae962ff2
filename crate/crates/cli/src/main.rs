use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scribe_core::catalog::TableKey;
use scribe_core::config::{Config, EmbeddingKind, GenerationKind};
use scribe_core::eval::{ingest_feedback, summarize, CopyInstance, FeedbackInput, FeedbackRecord};
use scribe_core::fixtures::{make_fixture, write_fixture, FixtureSpec};
use scribe_core::gateway::GenerationRecord;
use scribe_core::index::{build_index, save_index};
use scribe_core::jsonl::read_jsonl;
use scribe_core::pipeline::{open_catalog, ColumnRun, Engine, EngineError, PipelineError};

#[derive(Parser)]
#[command(name = "catalog-scribe", version, about = "Generate catalog column and table descriptions")]
struct Cli {
    /// Config file; defaults to $CATALOG_SCRIBE_CONFIG, then built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embedding index over described columns.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Description generation.
    #[command(subcommand)]
    Generate(GenerateCmd),
    /// Offline evaluation of generations against steward feedback.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Synthetic catalogs with ground truth.
    #[command(subcommand)]
    Fixtures(FixturesCmd),
    /// Run the HTTP review service.
    Serve,
}

#[derive(Subcommand)]
enum IndexCmd {
    Build {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        provider: Option<ProviderArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Local,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum MockArg {
    Echo,
    Paraphrase,
}

#[derive(Args)]
struct RunArgs {
    /// Use a deterministic mock instead of the configured provider.
    #[arg(long, value_enum)]
    mock: Option<MockArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum GenerateCmd {
    /// Describe every column that lacks a description.
    Columns {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Describe one table and print the stitched text.
    Table {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        source: String,
        /// File with business context to add to every question prompt.
        #[arg(long)]
        context: Option<PathBuf>,
        /// Built in memory when omitted.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Print the full run as JSON instead of text.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    Run {
        /// JSONL of column runs or generation records.
        #[arg(long)]
        generations: PathBuf,
        /// JSONL of decisions keyed by generation_id, or exported feedback records.
        #[arg(long)]
        feedback: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FixturesCmd {
    Make {
        #[arg(long)]
        columns: usize,
        #[arg(long)]
        tables: usize,
        #[arg(long)]
        seed: u64,
        /// Planted duplicates; defaults to one per ten columns.
        #[arg(long)]
        duplicates: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code 1 for bad input, 2 for provider failures.
enum Failure {
    Input(anyhow::Error),
    Provider(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

type CliResult = Result<(), Failure>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub total: usize,
    pub generated: usize,
    pub copied: usize,
    pub errored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub catalog_digest: String,
    pub index_digest: String,
    pub seed: u64,
    pub model_id: String,
    pub output: PathBuf,
    pub counts: RunCounts,
    pub wall_time_ms: u64,
}

fn file_digest(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::from_env()?,
    })
}

fn generation_kind(cfg: &Config, run: &RunArgs) -> GenerationKind {
    match run.mock {
        Some(MockArg::Echo) => GenerationKind::Echo,
        Some(MockArg::Paraphrase) => GenerationKind::Paraphrase,
        None => cfg.generation.provider,
    }
}

fn engine(cfg: &Config, catalog: &Path, index: Option<&Path>, kind: GenerationKind) -> Result<Engine, Failure> {
    Engine::from_config(cfg, catalog, index, kind).map_err(|e| match e {
        EngineError::Config(_) | EngineError::Catalog(_) | EngineError::Index(_) | EngineError::Prompt(_) => {
            Failure::Input(e.into())
        }
    })
}

fn pipeline_failure(e: PipelineError) -> Failure {
    if e.is_provider() {
        Failure::Provider(e.into())
    } else {
        Failure::Input(e.into())
    }
}

fn index_build(mut cfg: Config, catalog: &Path, out: &Path, provider: Option<ProviderArg>) -> CliResult {
    match provider {
        Some(ProviderArg::Local) => cfg.embedding.provider = EmbeddingKind::Local,
        Some(ProviderArg::Remote) => cfg.embedding.provider = EmbeddingKind::Remote,
        None => {}
    }
    let catalog = open_catalog(catalog)?;
    let embedder = cfg.embedder()?;
    let index = build_index(&catalog.columns, embedder.as_ref(), cfg.embedding.name_text).map_err(|e| {
        let provider_side = matches!(e, scribe_core::index::IndexError::BuildAborted { .. } | scribe_core::index::IndexError::Embed(_));
        if provider_side {
            Failure::Provider(e.into())
        } else {
            Failure::Input(e.into())
        }
    })?;
    if index.is_empty() {
        eprintln!("warning: no described columns to index; writing an empty index");
    }
    save_index(&index, out)?;
    println!("indexed {} of {} columns into {}", index.len(), catalog.columns.len(), out.display());
    Ok(())
}

fn generate_columns(mut cfg: Config, catalog_path: &Path, index_path: &Path, out: &Path, run: &RunArgs) -> CliResult {
    let started = Instant::now();
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    let kind = generation_kind(&cfg, run);
    let engine = engine(&cfg, catalog_path, Some(index_path), kind)?;
    let pipeline = engine.pipeline().map_err(pipeline_failure)?;
    let todo: Vec<_> = pipeline.undescribed().collect();
    let results = pipeline.describe_columns(&todo);

    let mut body = String::new();
    let mut counts = RunCounts {
        total: todo.len(),
        generated: 0,
        copied: 0,
        errored: 0,
    };
    let mut provider_errors = 0;
    for (col, r) in todo.iter().zip(results) {
        match r {
            Ok(run) => {
                counts.generated += 1;
                counts.copied += usize::from(run.copy.copied);
                body.push_str(&serde_json::to_string(&run)?);
                body.push('\n');
            }
            Err(e) => {
                counts.errored += 1;
                provider_errors += usize::from(e.is_provider());
                eprintln!("error: {}: {e}", col.key());
            }
        }
    }
    std::fs::write(out, body).with_context(|| format!("cannot write {}", out.display()))?;

    let config_digest = cfg.digest();
    let catalog_digest = file_digest(catalog_path)?;
    let index_digest = file_digest(index_path)?;
    let model_id = engine.gateway.model_id().to_string();
    let mut h = Sha256::new();
    for part in [&config_digest, &catalog_digest, &index_digest, &model_id] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    let manifest = RunManifest {
        run_id: format!("run-{}", &hex::encode(h.finalize())[..16]),
        config_digest,
        catalog_digest,
        index_digest,
        seed: cfg.seed,
        model_id,
        output: out.to_path_buf(),
        counts: counts.clone(),
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    let mpath = manifest_path(out);
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("cannot write {}", mpath.display()))?;
    println!(
        "generated {} of {} columns ({} copied, {} errored); manifest {}",
        counts.generated,
        counts.total,
        counts.copied,
        counts.errored,
        mpath.display()
    );
    if provider_errors > 0 {
        return Err(Failure::Provider(anyhow!("{provider_errors} column(s) failed at the provider")));
    }
    if counts.errored > 0 {
        return Err(Failure::Input(anyhow!("{} column(s) could not be described", counts.errored)));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn generate_table(
    mut cfg: Config,
    catalog: &Path,
    table: &str,
    source: &str,
    context: Option<&Path>,
    index: Option<&Path>,
    json: bool,
    run: &RunArgs,
) -> CliResult {
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    let context = context
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())))
        .transpose()?;
    let kind = generation_kind(&cfg, run);
    let engine = engine(&cfg, catalog, index, kind)?;
    let pipeline = engine.pipeline().map_err(pipeline_failure)?;
    let key = TableKey::new(table, source);
    let result = pipeline
        .describe_table(&key, context.as_deref().map(str::trim))
        .map_err(pipeline_failure)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&result)?);
        return Ok(());
    }
    println!("{}\n", result.description);
    println!("trace:");
    println!("  table name expanded: {}", result.expansion.expanded_name);
    for s in &result.selected {
        let origin = if s.generated { "generated" } else { "curated" };
        println!("  column {} ({origin})", s.column_name);
    }
    for (p, a) in result.prompts.iter().zip(&result.answers) {
        println!("  prompt {} -> {}", &p.prompt_hash[..12], a.id);
    }
    Ok(())
}

fn eval_run(cfg: Config, generations: &Path, feedback: &Path, out: &Path) -> CliResult {
    let lines: Vec<serde_json::Value> = read_jsonl(generations)?;
    let mut records: Vec<GenerationRecord> = Vec::new();
    let mut copies: Vec<CopyInstance> = Vec::new();
    for v in lines {
        if v.get("generation").is_some() {
            let run: ColumnRun = serde_json::from_value(v).context("bad column run")?;
            copies.push(run.copy_instance());
            records.push(run.generation);
        } else {
            records.push(serde_json::from_value(v).context("bad generation record")?);
        }
    }
    let fb: Vec<serde_json::Value> = read_jsonl(feedback)?;
    let embedder = cfg.embedder()?;
    let feedback_records: Vec<FeedbackRecord> = if fb.iter().all(|v| v.get("generation_ref").is_some()) {
        fb.into_iter()
            .map(serde_json::from_value)
            .collect::<Result<_, _>>()
            .context("bad feedback record")?
    } else {
        let inputs: Vec<FeedbackInput> = fb
            .into_iter()
            .map(serde_json::from_value)
            .collect::<Result<_, _>>()
            .context("bad decision line")?;
        ingest_feedback(&inputs, &records, Some(embedder.as_ref()))?
    };
    let report = summarize(&feedback_records, &copies);
    std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", out.display()))?;
    print!("{}", report.render_text());
    Ok(())
}

fn fixtures_make(columns: usize, tables: usize, seed: u64, duplicates: Option<usize>, out: &Path) -> CliResult {
    let mut spec = FixtureSpec::new(columns, tables, seed);
    if let Some(d) = duplicates {
        spec.duplicates = d;
    }
    let fixture = make_fixture(spec)?;
    write_fixture(&fixture, out)?;
    println!(
        "wrote {} columns in {} tables ({} planted duplicates) to {}",
        fixture.catalog.columns.len(),
        fixture.catalog.tables.len(),
        fixture.exact_targets.len(),
        out.display()
    );
    Ok(())
}

fn serve(cfg: Config) -> CliResult {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(scribe_service::serve(cfg))?;
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Index(IndexCmd::Build { catalog, out, provider }) => index_build(cfg, &catalog, &out, provider),
        Command::Generate(GenerateCmd::Columns {
            catalog,
            index,
            out,
            run,
        }) => generate_columns(cfg, &catalog, &index, &out, &run),
        Command::Generate(GenerateCmd::Table {
            catalog,
            table,
            source,
            context,
            index,
            json,
            run,
        }) => generate_table(cfg, &catalog, &table, &source, context.as_deref(), index.as_deref(), json, &run),
        Command::Eval(EvalCmd::Run {
            generations,
            feedback,
            out,
        }) => eval_run(cfg, &generations, &feedback, &out),
        Command::Fixtures(FixturesCmd::Make {
            columns,
            tables,
            seed,
            duplicates,
            out,
        }) => fixtures_make(columns, tables, seed, duplicates, &out),
        Command::Serve => serve(cfg),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Provider(e)) => {
            eprintln!("provider error: {e:#}");
            ExitCode::from(2)
        }
    }
}
