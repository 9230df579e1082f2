//! `pagetrace generate CONFIG`
//!
//! ```toml
//! [pipeline]              # pipeline keys, see pagetrace_core::config
//! rng_seed = 7
//! trace_format = "v2"
//!
//! [run]
//! documents_root = "docs" # one sub-directory of page images per document
//! output = "out/train.jsonl"
//! questions_per_document = 2
//! workers = 4
//! failure_rate_ceiling = 0.05
//! extraction_log_dir = "out/extraction"
//! prompts_dir = "prompts"
//!
//! [backend]
//! kind = "scripted"       # or "http"
//! fixture = "fixture.json"
//! ```
//!
//! Relative paths resolve against the config file's directory. A manifest is
//! written to `<output>.manifest.json` whenever the output path is known.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Args;
use pagetrace_core::backend::{ChatBackend, HttpBackend, HttpConfig, RetryPolicy, ScriptedBackend, SyntheticConfig};
use pagetrace_core::config::validate_config;
use pagetrace_core::pipeline::{run_document, DocumentOutcome, PipelineContext, StageCounts, StageError};
use pagetrace_core::prompts::PromptTemplates;
use pagetrace_core::tracegen::JsonlWriter;
use pagetrace_core::{load_document, DocumentRef, PipelineConfig};
use serde::{Deserialize, Serialize};

use super::{print_json, write_json};
use crate::{CliError, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Pipeline config (TOML).
    pub config: PathBuf,
    /// Print the run manifest as JSON on stdout.
    #[arg(long)]
    pub json: bool,
}

fn default_questions() -> usize {
    2
}
fn default_workers() -> usize {
    1
}
fn default_ceiling() -> f64 {
    0.05
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub documents_root: PathBuf,
    pub output: PathBuf,
    #[serde(default = "default_questions")]
    pub questions_per_document: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_ceiling")]
    pub failure_rate_ceiling: f64,
    #[serde(default)]
    pub extraction_log_dir: Option<PathBuf>,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Http,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Scripted: fixture JSON. Without one every request is answered by the
    /// synthetic responder.
    pub fixture: Option<PathBuf>,
    pub synthetic_seed: u64,
    pub synthetic_fail_rate: f64,
    /// HTTP: OpenAI-compatible base URL.
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_parallel: usize,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let policy = RetryPolicy::default();
        Self {
            kind: BackendKind::Scripted,
            fixture: None,
            synthetic_seed: 0,
            synthetic_fail_rate: 0.0,
            base_url: None,
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 600,
            max_parallel: policy.max_parallel,
            max_attempts: policy.max_attempts,
            base_backoff_ms: policy.base_backoff.as_millis() as u64,
            max_backoff_ms: policy.max_backoff.as_millis() as u64,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateFile {
    #[serde(default)]
    pipeline: toml::Table,
    run: RunSection,
    #[serde(default)]
    backend: BackendSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct Outputs {
    pub jsonl: Option<PathBuf>,
    pub manifest: PathBuf,
    pub extraction_logs: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub status: &'static str,
    pub exit_code: i32,
    pub message: Option<String>,
    /// The config file as parsed, plus the resolved pipeline settings.
    pub config: serde_json::Value,
    pub pipeline: Option<PipelineConfig>,
    pub rng_seed: Option<u64>,
    pub questions_per_document: usize,
    pub counts: StageCounts,
    pub failure_rate: f64,
    pub failure_rate_ceiling: f64,
    pub errors: Vec<StageError>,
    pub wall_time_secs: f64,
    pub outputs: Outputs,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

struct Prepared {
    pipeline: PipelineConfig,
    run: RunSection,
    backend: BackendSection,
    templates: PromptTemplates,
}

fn prepare(raw: &toml::Table, base: &Path) -> Result<Prepared, String> {
    let file: GenerateFile = toml::Value::Table(raw.clone()).try_into().map_err(|e: toml::de::Error| e.message().to_string())?;
    let pipeline = validate_config(&file.pipeline).map_err(|e| e.to_string())?;
    let mut run = file.run;
    if run.questions_per_document == 0 {
        return Err("run.questions_per_document must be at least 1".into());
    }
    if run.workers == 0 {
        return Err("run.workers must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&run.failure_rate_ceiling) {
        return Err("run.failure_rate_ceiling must be in [0, 1]".into());
    }
    run.documents_root = resolve(base, &run.documents_root);
    run.output = resolve(base, &run.output);
    run.extraction_log_dir = run.extraction_log_dir.map(|p| resolve(base, &p));
    run.prompts_dir = run.prompts_dir.map(|p| resolve(base, &p));
    let mut backend = file.backend;
    backend.fixture = backend.fixture.map(|p| resolve(base, &p));
    if backend.kind == BackendKind::Http && backend.base_url.is_none() {
        return Err("backend.base_url is required for kind = \"http\"".into());
    }
    if backend.max_parallel == 0 || backend.max_attempts == 0 {
        return Err("backend.max_parallel and backend.max_attempts must be at least 1".into());
    }
    if !(0.0..=1.0).contains(&backend.synthetic_fail_rate) {
        return Err("backend.synthetic_fail_rate must be in [0, 1]".into());
    }
    let templates = match &run.prompts_dir {
        Some(dir) => PromptTemplates::load_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?,
        None => PromptTemplates::default(),
    };
    Ok(Prepared { pipeline, run, backend, templates })
}

fn make_backend(b: &BackendSection) -> Result<(Box<dyn ChatBackend>, RetryPolicy), String> {
    match b.kind {
        BackendKind::Scripted => {
            let backend = match &b.fixture {
                Some(path) => ScriptedBackend::from_fixture_file(path).map_err(|e| format!("{}: {e}", path.display()))?,
                None => ScriptedBackend::synthetic(SyntheticConfig {
                    seed: b.synthetic_seed,
                    fail_rate: b.synthetic_fail_rate,
                    ..SyntheticConfig::default()
                }),
            };
            Ok((Box::new(backend), RetryPolicy::immediate(b.max_attempts, b.max_parallel)))
        }
        BackendKind::Http => {
            let cfg = HttpConfig {
                base_url: b.base_url.clone().unwrap_or_default(),
                api_key_env: b.api_key_env.clone(),
                timeout: Duration::from_secs(b.timeout_secs),
            };
            let policy = RetryPolicy {
                max_attempts: b.max_attempts,
                base_backoff: Duration::from_millis(b.base_backoff_ms),
                max_backoff: Duration::from_millis(b.max_backoff_ms),
                max_parallel: b.max_parallel,
            };
            Ok((Box::new(HttpBackend::new(&cfg)), policy))
        }
    }
}

/// Sub-directories of `root`, sorted by name, each loaded as a document.
pub fn discover_documents(root: &Path) -> Result<Vec<DocumentRef>, String> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| format!("{}: {e}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(format!("{}: no document directories", root.display()));
    }
    dirs.iter().map(|d| load_document(d).map_err(|e| e.to_string())).collect()
}

fn run_all(
    docs: &[DocumentRef],
    prepared: &Prepared,
    backend: &dyn ChatBackend,
    policy: &RetryPolicy,
) -> Result<Vec<DocumentOutcome>, String> {
    let ctx = PipelineContext {
        cfg: &prepared.pipeline,
        templates: &prepared.templates,
        backend,
        policy,
        image_root: Some(&prepared.run.documents_root),
    };
    let per_doc = prepared.run.questions_per_document;
    let one = |(i, doc): (usize, &DocumentRef)| {
        tracing::info!(doc = doc.doc_id(), pages = doc.page_count(), "document started");
        run_document(doc, i as u64, per_doc, &ctx)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(prepared.run.workers)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(pool.install(|| docs.par_iter().enumerate().map(one).collect()))
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(docs.iter().enumerate().map(one).collect())
    }
}

#[derive(Serialize)]
struct ExtractionLogLine<'a> {
    question_index: usize,
    question: &'a pagetrace_core::Question,
    branch: pagetrace_core::answer::Branch,
    ranked_pages: Vec<u32>,
    records: &'a [pagetrace_core::extract::EvidenceRecord],
}

fn write_extraction_log(dir: &Path, outcome: &DocumentOutcome) -> Result<(), String> {
    let path = dir.join(format!("{}.extraction.jsonl", outcome.doc_id));
    let mut w = JsonlWriter::create(&path).map_err(|e| e.to_string())?;
    for (i, o) in outcome.outcomes.iter().enumerate() {
        w.write(&ExtractionLogLine {
            question_index: i,
            question: &o.question,
            branch: o.branch,
            ranked_pages: o.ranked.page_indices().collect(),
            records: &o.records,
        })
        .map_err(|e| e.to_string())?;
    }
    w.finish().map_err(|e| e.to_string())
}

/// Runs the whole command and returns the manifest; the caller decides how
/// to report it. `None` when the config could not be read far enough to know
/// where the manifest goes.
pub fn generate(config_path: &Path) -> (i32, Option<RunManifest>, Option<String>) {
    let started = Instant::now();
    let base = config_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = match fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => return (EXIT_USAGE, None, Some(format!("{}: {e}", config_path.display()))),
    };
    let raw: toml::Table = match toml::from_str(&text) {
        Ok(t) => t,
        Err(e) => return (EXIT_USAGE, None, Some(format!("{}: {}", config_path.display(), e.message()))),
    };
    let config_json = serde_json::to_value(&raw).unwrap_or(serde_json::Value::Null);
    let output = raw
        .get("run")
        .and_then(|r| r.get("output"))
        .and_then(|o| o.as_str())
        .map(|o| resolve(&base, Path::new(o)));

    let manifest = |status, exit_code, message: Option<String>| RunManifest {
        status,
        exit_code,
        message,
        config: config_json.clone(),
        pipeline: None,
        rng_seed: None,
        questions_per_document: 0,
        counts: StageCounts::default(),
        failure_rate: 0.0,
        failure_rate_ceiling: default_ceiling(),
        errors: Vec::new(),
        wall_time_secs: 0.0,
        outputs: Outputs { jsonl: None, manifest: output.as_deref().map(manifest_path).unwrap_or_default(), extraction_logs: None },
    };

    let prepared = match prepare(&raw, &base) {
        Ok(p) => p,
        Err(msg) => {
            let m = manifest("config_error", EXIT_USAGE, Some(msg.clone()));
            return (EXIT_USAGE, output.is_some().then_some(m), Some(msg));
        }
    };
    let mut m = manifest("running", EXIT_OK, None);
    m.pipeline = Some(prepared.pipeline.clone());
    m.rng_seed = Some(prepared.pipeline.rng_seed);
    m.questions_per_document = prepared.run.questions_per_document;
    m.failure_rate_ceiling = prepared.run.failure_rate_ceiling;

    let fail = |mut m: RunManifest, msg: String| {
        m.status = "runtime_error";
        m.exit_code = EXIT_RUNTIME;
        m.message = Some(msg.clone());
        m.wall_time_secs = started.elapsed().as_secs_f64();
        (EXIT_RUNTIME, Some(m), Some(msg))
    };

    if let Some(parent) = prepared.run.output.parent() {
        if let Err(e) = fs::create_dir_all(parent) {
            return fail(m, format!("{}: {e}", parent.display()));
        }
    }
    let docs = match discover_documents(&prepared.run.documents_root) {
        Ok(d) => d,
        Err(e) => return fail(m, e),
    };
    let (backend, policy) = match make_backend(&prepared.backend) {
        Ok(b) => b,
        Err(e) => return fail(m, e),
    };
    let outcomes = match run_all(&docs, &prepared, backend.as_ref(), &policy) {
        Ok(o) => o,
        Err(e) => return fail(m, e),
    };

    let mut writer = match JsonlWriter::create(&prepared.run.output) {
        Ok(w) => w,
        Err(e) => return fail(m, e.to_string()),
    };
    for outcome in &outcomes {
        m.counts += outcome.counts;
        m.errors.extend(outcome.errors.iter().cloned());
        for ex in outcome.examples() {
            if let Err(e) = writer.write(ex) {
                return fail(m, e.to_string());
            }
        }
    }
    if let Err(e) = writer.finish() {
        return fail(m, e.to_string());
    }
    m.outputs.jsonl = Some(prepared.run.output.clone());

    if let Some(dir) = &prepared.run.extraction_log_dir {
        let written = fs::create_dir_all(dir)
            .map_err(|e| format!("{}: {e}", dir.display()))
            .and_then(|_| outcomes.iter().try_for_each(|o| write_extraction_log(dir, o)));
        if let Err(e) = written {
            return fail(m, e);
        }
        m.outputs.extraction_logs = Some(dir.clone());
    }

    m.failure_rate = m.counts.failure_rate();
    m.wall_time_secs = started.elapsed().as_secs_f64();
    if m.failure_rate > prepared.run.failure_rate_ceiling {
        let msg = format!(
            "failure rate {:.3} exceeds the ceiling {:.3}",
            m.failure_rate, prepared.run.failure_rate_ceiling
        );
        m.status = "failure_ceiling_exceeded";
        m.exit_code = EXIT_RUNTIME;
        m.message = Some(msg.clone());
        return (EXIT_RUNTIME, Some(m), Some(msg));
    }
    m.status = "ok";
    (EXIT_OK, Some(m), None)
}

pub fn run(args: &GenerateArgs) -> Result<i32, CliError> {
    let (code, manifest, message) = generate(&args.config);
    if let Some(m) = &manifest {
        if !m.outputs.manifest.as_os_str().is_empty() {
            if let Some(parent) = m.outputs.manifest.parent() {
                let _ = fs::create_dir_all(parent);
            }
            write_json(&m.outputs.manifest, m)?;
        }
        if args.json {
            print_json(m)?;
        } else if code == EXIT_OK {
            println!(
                "{} examples from {} documents ({} questions, {} failed) -> {}",
                m.counts.examples,
                m.counts.documents,
                m.counts.questions_requested,
                m.counts.failures,
                m.outputs.jsonl.as_deref().unwrap_or(Path::new("")).display()
            );
        }
    }
    if let Some(msg) = message {
        eprintln!("pagetrace generate: {msg}");
        tracing::error!(exit_code = code, %msg, "generate finished with errors");
    }
    Ok(code)
}
