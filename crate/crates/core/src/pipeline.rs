//! End-to-end orchestration over a run directory.
//!
//! ```text
//! <run>/config.json
//!       schemas.norm.json
//!       01_linking.jsonl
//!       02_examples.jsonl
//!       03_scores.jsonl
//!       04_predictions.jsonl  pred.sql
//!       05_eval.json
//!       report.txt
//!       analysis/
//!       llm_cache.jsonl       (unless `cache_file` points elsewhere)
//! ```
//!
//! Every stage works per test case and appends a case's records as soon as
//! they exist, then rewrites its file in dataset order. A case already
//! present in a stage file is reused; a case that failed hard is absent and
//! is retried on the next invocation.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, VariantRow};
use crate::dataset::{self, DatasetError, SchemaDb, TestCase};
use crate::eval::{self, DifficultyRules, EvalOutcome, Report};
use crate::generation::{self, GeneratedExample, GenerationError, DEFAULT_EXAMPLES};
use crate::inference::{self, Prediction, PredictionStatus};
use crate::llm::{
    cosine, Backend, HashBackend, HttpBackend, HttpConfig, LlmClient, LlmError, ModelParams, ResponseCache,
    ScriptedBackend,
};
use crate::scoring::{self, ScoredExample, WeightConfig, DEFAULT_FALLBACK_K, DEFAULT_THETA};

pub const CONFIG_FILE: &str = "config.json";
pub const SCHEMAS_FILE: &str = "schemas.norm.json";
pub const LINKING_FILE: &str = "01_linking.jsonl";
pub const EXAMPLES_FILE: &str = "02_examples.jsonl";
pub const SCORES_FILE: &str = "03_scores.jsonl";
pub const PREDICTIONS_FILE: &str = "04_predictions.jsonl";
pub const PRED_SQL_FILE: &str = "pred.sql";
pub const EVAL_FILE: &str = "05_eval.json";
pub const REPORT_FILE: &str = "report.txt";
pub const ANALYSIS_DIR: &str = "analysis";
pub const CACHE_FILE: &str = "llm_cache.jsonl";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage order: {} is missing; run the `{stage}` stage first", missing.display())]
    StageOrder { missing: PathBuf, stage: &'static str },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl PipelineError {
    /// 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::StageOrder { .. }
            | PipelineError::Dataset(_)
            | PipelineError::Llm(LlmError::Config(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// OpenAI-compatible endpoint.
    Http(HttpConfig),
    /// Canned responses from a JSON script (see [`ScriptedBackend`]).
    Scripted { script: PathBuf },
    /// Hash-derived responses; useful only for smoke runs.
    Hash {
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Recorded responses only; any cache miss is an error.
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    #[serde(flatten)]
    pub params: ModelParams,
    /// Overrides the run-wide backend for this stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendConfig>,
}

impl StageConfig {
    fn new(model: &str, temperature: f64) -> Self {
        StageConfig {
            params: ModelParams::new(model, temperature),
            backend: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Leave the reasoning line out of every example in the final prompt.
    #[serde(default)]
    pub no_reasoning: bool,
    /// Pass every parseable generated example to inference.
    #[serde(default)]
    pub no_filtering: bool,
    /// Skip schema linking; the generation prompt's linking slot stays empty.
    #[serde(default)]
    pub no_schema_linking: bool,
    /// Zero-shot: no examples are generated or shown.
    #[serde(default)]
    pub no_examples: bool,
}

impl Ablation {
    pub fn named(name: &str) -> Option<Self> {
        let mut a = Ablation::default();
        match name {
            "full" => {}
            "no_reasoning" => a.no_reasoning = true,
            "no_filtering" => a.no_filtering = true,
            "no_schema_linking" => a.no_schema_linking = true,
            "no_examples" => a.no_examples = true,
            _ => return None,
        }
        Some(a)
    }
}

pub const ABLATIONS: [&str; 5] = ["full", "no_reasoning", "no_filtering", "no_schema_linking", "no_examples"];

pub const DEFAULT_MODEL: &str = "gpt-4o-2024-08-06";
pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-3-small";

fn default_n() -> usize {
    DEFAULT_EXAMPLES
}
fn default_theta() -> f64 {
    DEFAULT_THETA
}
fn default_fallback() -> Option<usize> {
    Some(DEFAULT_FALLBACK_K)
}
fn default_parallelism() -> usize {
    4
}
fn default_timeout() -> u64 {
    30_000
}
fn default_embedding_model() -> String {
    DEFAULT_EMBEDDING_MODEL.to_string()
}
fn default_generation() -> StageConfig {
    StageConfig::new(DEFAULT_MODEL, 1.0)
}
fn default_zero_temp() -> StageConfig {
    StageConfig::new(DEFAULT_MODEL, 0.0)
}
fn default_sweep() -> Vec<f64> {
    analysis::unit_thresholds()
}
fn default_census() -> Vec<f64> {
    analysis::CENSUS_THRESHOLDS.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Spider `tables.json`.
    pub tables_file: PathBuf,
    /// Spider `dev.json` (or any file of the same shape).
    pub questions_file: PathBuf,
    /// Directory holding `<db_id>/<db_id>.sqlite`.
    pub db_dir: PathBuf,
    pub backend: BackendConfig,
    #[serde(default = "default_generation")]
    pub generation: StageConfig,
    #[serde(default = "default_zero_temp")]
    pub scoring: StageConfig,
    #[serde(default = "default_zero_temp")]
    pub inference: StageConfig,
    #[serde(default = "default_embedding_model")]
    pub embedding_model: String,
    #[serde(default = "default_n")]
    pub n_examples: usize,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default)]
    pub weights: WeightConfig,
    /// Top-k selected when nothing clears the threshold; `None` disables.
    #[serde(default = "default_fallback")]
    pub fallback_k: Option<usize>,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Only the first `limit` test cases.
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    /// Response cache; defaults to `<run>/llm_cache.jsonl`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_file: Option<PathBuf>,
    #[serde(default)]
    pub difficulty: DifficultyRules,
    #[serde(default = "default_census")]
    pub census_thresholds: Vec<f64>,
    #[serde(default = "default_sweep")]
    pub sweep_thresholds: Vec<f64>,
}

impl RunConfig {
    pub fn new(tables_file: PathBuf, questions_file: PathBuf, db_dir: PathBuf, backend: BackendConfig) -> Self {
        RunConfig {
            tables_file,
            questions_file,
            db_dir,
            backend,
            generation: default_generation(),
            scoring: default_zero_temp(),
            inference: default_zero_temp(),
            embedding_model: default_embedding_model(),
            n_examples: default_n(),
            theta: default_theta(),
            weights: WeightConfig::equal(),
            fallback_k: default_fallback(),
            ablation: Ablation::default(),
            parallelism: default_parallelism(),
            limit: None,
            seed: 0,
            timeout_ms: default_timeout(),
            cache_file: None,
            difficulty: DifficultyRules::default(),
            census_thresholds: default_census(),
            sweep_thresholds: default_sweep(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=10.0).contains(&self.theta) {
            return Err(PipelineError::Config(format!("theta {} outside [0, 10]", self.theta)));
        }
        self.weights
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.parallelism == 0 {
            return Err(PipelineError::Config("parallelism must be at least 1".into()));
        }
        if self.n_examples == 0 {
            return Err(PipelineError::Config("n_examples must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(PipelineError::Config("timeout_ms must be positive".into()));
        }
        if self.fallback_k == Some(0) {
            return Err(PipelineError::Config("fallback_k must be positive (or null to disable)".into()));
        }
        if self
            .census_thresholds
            .iter()
            .chain(&self.sweep_thresholds)
            .any(|t| !(0.0..=10.0).contains(t))
        {
            return Err(PipelineError::Config("analysis thresholds must lie in [0, 10]".into()));
        }
        Ok(())
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

/// One client per stage. Clients may share a backend and a cache.
pub struct Clients {
    pub generation: Arc<LlmClient>,
    pub scoring: Arc<LlmClient>,
    pub inference: Arc<LlmClient>,
    pub embedding: Arc<LlmClient>,
}

impl Clients {
    /// Every stage through one backend and cache.
    pub fn shared(backend: Arc<dyn Backend>, cache: Option<Arc<ResponseCache>>) -> Self {
        let client = Arc::new(LlmClient::new(backend, cache));
        Clients {
            generation: client.clone(),
            scoring: client.clone(),
            inference: client.clone(),
            embedding: client,
        }
    }

    fn build(config: &RunConfig, cache: Arc<ResponseCache>) -> Result<Self, PipelineError> {
        let make = |bc: &BackendConfig| -> Result<Arc<LlmClient>, PipelineError> {
            let backend: Arc<dyn Backend> = match bc {
                BackendConfig::Http(h) => Arc::new(HttpBackend::new(h.clone())?),
                BackendConfig::Scripted { script } => {
                    let mut b = ScriptedBackend::from_json_file(script)?;
                    if b.seed == 0 {
                        b.seed = config.seed;
                    }
                    Arc::new(b)
                }
                BackendConfig::Hash { seed } => Arc::new(HashBackend::new(seed.unwrap_or(config.seed))),
                BackendConfig::Replay => return Ok(Arc::new(LlmClient::replay(cache.clone()))),
            };
            Ok(Arc::new(LlmClient::new(backend, Some(cache.clone()))))
        };
        let default = make(&config.backend)?;
        let pick = |s: &StageConfig| match &s.backend {
            Some(b) => make(b),
            None => Ok(default.clone()),
        };
        Ok(Clients {
            generation: pick(&config.generation)?,
            scoring: pick(&config.scoring)?,
            inference: pick(&config.inference)?,
            embedding: default.clone(),
        })
    }

    /// Backend calls summed over distinct clients.
    pub fn backend_calls(&self) -> u64 {
        let mut seen: Vec<*const LlmClient> = Vec::new();
        let mut total = 0;
        for c in [&self.generation, &self.scoring, &self.inference, &self.embedding] {
            let p = Arc::as_ptr(c);
            if !seen.contains(&p) {
                seen.push(p);
                total += c.backend_calls();
            }
        }
        total
    }
}

/// Per-link record of `01_linking.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkingRecord {
    pub test_case_id: usize,
    pub linked_elements: String,
    pub referenced_tables: Vec<String>,
    pub failed: bool,
    /// Linking was ablated away.
    #[serde(default)]
    pub skipped: bool,
}

trait CaseRecord {
    fn case_id(&self) -> usize;
}

impl CaseRecord for LinkingRecord {
    fn case_id(&self) -> usize {
        self.test_case_id
    }
}
impl CaseRecord for GeneratedExample {
    fn case_id(&self) -> usize {
        self.test_case_id
    }
}
impl CaseRecord for ScoredExample {
    fn case_id(&self) -> usize {
        self.example.test_case_id
    }
}
impl CaseRecord for Prediction {
    fn case_id(&self) -> usize {
        self.test_case_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub computed: usize,
    pub reused: usize,
    pub failed: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub stages: Vec<StageSummary>,
    pub report: Option<Report>,
}

impl RunSummary {
    pub fn failed_cases(&self) -> usize {
        self.stages.iter().map(|s| s.failed.len()).sum()
    }

    /// 0 when every case went through, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failed_cases() > 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub outcomes: Vec<EvalOutcome>,
    pub report: Report,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) => log::warn!("{}:{}: skipping unreadable line: {e}", path.display(), i + 1),
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, content: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Runs one case-level stage with reuse, append-as-you-go, and a final
/// rewrite in dataset order.
fn run_case_stage<R, F>(
    pool: &rayon::ThreadPool,
    stage: &str,
    path: &Path,
    cases: &[TestCase],
    complete: impl Fn(usize, &[R]) -> bool,
    compute: F,
) -> Result<(Vec<R>, StageSummary), PipelineError>
where
    R: CaseRecord + Serialize + DeserializeOwned + Send + Clone,
    F: Fn(&TestCase) -> Result<Vec<R>, String> + Sync,
{
    let mut by_case: BTreeMap<usize, Vec<R>> = BTreeMap::new();
    if path.exists() {
        for r in read_jsonl::<R>(path)? {
            by_case.entry(r.case_id()).or_default().push(r);
        }
    }
    by_case.retain(|id, recs| complete(*id, recs));
    let todo: Vec<&TestCase> = cases.iter().filter(|c| !by_case.contains_key(&c.id)).collect();
    let reused = cases.len() - todo.len();

    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let sink = Mutex::new(file);
    let results: Vec<(usize, Result<Vec<R>, String>)> = pool.install(|| {
        todo.par_iter()
            .map(|case| {
                let res = compute(case);
                if let Ok(recs) = &res {
                    let mut f = sink.lock().expect("stage sink");
                    if let Err(e) = f.write_all(jsonl(recs).as_bytes()).and_then(|_| f.flush()) {
                        log::warn!("{}: append failed: {e}", path.display());
                    }
                }
                (case.id, res)
            })
            .collect()
    });
    drop(sink);

    let mut failed = Vec::new();
    let mut computed = 0;
    for (id, res) in results {
        match res {
            Ok(recs) => {
                computed += 1;
                by_case.insert(id, recs);
            }
            Err(msg) => {
                log::error!("{stage}: case {id}: {msg}");
                failed.push((id, msg));
            }
        }
    }
    let ordered: Vec<R> = cases
        .iter()
        .filter_map(|c| by_case.remove(&c.id))
        .flatten()
        .collect();
    write_atomic(path, &jsonl(&ordered))?;
    Ok((
        ordered,
        StageSummary {
            stage: stage.to_string(),
            computed,
            reused,
            failed,
        },
    ))
}

fn group<R: CaseRecord + Clone>(records: &[R]) -> HashMap<usize, Vec<R>> {
    let mut m: HashMap<usize, Vec<R>> = HashMap::new();
    for r in records {
        m.entry(r.case_id()).or_default().push(r.clone());
    }
    m
}

/// A pipeline bound to one run directory.
pub struct Runner {
    pub config: RunConfig,
    pub run_dir: PathBuf,
    pub clients: Clients,
    pool: rayon::ThreadPool,
}

impl Runner {
    /// Builds clients from the configuration.
    pub fn new(config: RunConfig, run_dir: &Path) -> Result<Self, PipelineError> {
        config.validate()?;
        let cache_path = config.cache_file.clone().unwrap_or_else(|| run_dir.join(CACHE_FILE));
        let cache = match config.backend {
            BackendConfig::Replay => ResponseCache::open_read_only(&cache_path)?,
            _ => {
                fs::create_dir_all(run_dir).map_err(|e| io_err(run_dir, e))?;
                ResponseCache::open(&cache_path)?
            }
        };
        let clients = Clients::build(&config, Arc::new(cache))?;
        Self::with_clients(config, run_dir, clients)
    }

    /// Uses caller-supplied clients (tests, custom backends).
    pub fn with_clients(config: RunConfig, run_dir: &Path, clients: Clients) -> Result<Self, PipelineError> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Runner {
            config,
            run_dir: run_dir.to_path_buf(),
            clients,
            pool,
        })
    }

    /// Loads the configuration stored in an existing run directory.
    pub fn open(run_dir: &Path) -> Result<Self, PipelineError> {
        let cfg = run_dir.join(CONFIG_FILE);
        if !cfg.exists() {
            return Err(PipelineError::StageOrder {
                missing: cfg,
                stage: "ingest",
            });
        }
        Self::new(RunConfig::from_file(&cfg)?, run_dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    fn require(&self, name: &str, stage: &'static str) -> Result<PathBuf, PipelineError> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::StageOrder { missing: p, stage })
        }
    }

    /// Removes every stage artifact (the response cache is kept).
    pub fn clear(&self) -> Result<(), PipelineError> {
        for name in [
            SCHEMAS_FILE,
            LINKING_FILE,
            EXAMPLES_FILE,
            SCORES_FILE,
            PREDICTIONS_FILE,
            PRED_SQL_FILE,
            EVAL_FILE,
            REPORT_FILE,
        ] {
            let p = self.path(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            }
        }
        let a = self.path(ANALYSIS_DIR);
        if a.exists() {
            fs::remove_dir_all(&a).map_err(|e| io_err(&a, e))?;
        }
        Ok(())
    }

    /// Validates the dataset and writes `config.json` and
    /// `schemas.norm.json`. A different configuration already in the
    /// directory is an error unless `force`, which also discards old
    /// artifacts.
    pub fn ingest(&self, force: bool) -> Result<StageSummary, PipelineError> {
        fs::create_dir_all(&self.run_dir).map_err(|e| io_err(&self.run_dir, e))?;
        let cfg_path = self.path(CONFIG_FILE);
        let text = self.config.to_json();
        if cfg_path.exists() {
            let old = fs::read_to_string(&cfg_path).map_err(|e| io_err(&cfg_path, e))?;
            if old != text {
                if !force {
                    return Err(PipelineError::Config(format!(
                        "{} holds a different configuration; use --force or a new run directory",
                        cfg_path.display()
                    )));
                }
                self.clear()?;
            }
        }
        if force {
            self.clear()?;
        }
        let schemas = dataset::load_schemas(&self.config.tables_file, &self.config.db_dir)?;
        let cases = dataset::load_testcases(&self.config.questions_file, &schemas)?;
        write_atomic(&cfg_path, &text)?;
        dataset::write_normalized(&self.path(SCHEMAS_FILE), &schemas)?;
        let n = self.config.limit.map_or(cases.len(), |l| l.min(cases.len()));
        Ok(StageSummary {
            stage: "ingest".into(),
            computed: n,
            reused: 0,
            failed: Vec::new(),
        })
    }

    /// Schemas and the (limited) test cases, from the ingested snapshot.
    pub fn load_inputs(&self) -> Result<(HashMap<String, SchemaDb>, Vec<TestCase>), PipelineError> {
        let schemas = dataset::read_normalized(&self.require(SCHEMAS_FILE, "ingest")?)?;
        let mut cases = dataset::load_testcases(&self.config.questions_file, &schemas)?;
        if let Some(l) = self.config.limit {
            cases.truncate(l);
        }
        let map = schemas.into_iter().map(|s| (s.db_id.clone(), s)).collect();
        Ok((map, cases))
    }

    /// Schema linking then example generation.
    pub fn generate(&self) -> Result<Vec<StageSummary>, PipelineError> {
        let (schemas, cases) = self.load_inputs()?;
        let ab = self.config.ablation;
        let gen = &self.config.generation;
        let link_params = ModelParams {
            temperature: 0.0,
            ..gen.params.clone()
        };
        let (links, s1) = run_case_stage(
            &self.pool,
            "linking",
            &self.path(LINKING_FILE),
            &cases,
            |_, r: &[LinkingRecord]| r.len() == 1,
            |case| {
                if ab.no_schema_linking || ab.no_examples {
                    return Ok(vec![LinkingRecord {
                        test_case_id: case.id,
                        linked_elements: String::new(),
                        referenced_tables: Vec::new(),
                        failed: false,
                        skipped: true,
                    }]);
                }
                let db = &schemas[&case.db_id];
                let l = generation::link_schema(&self.clients.generation, &link_params, case, db)
                    .map_err(|e| e.to_string())?;
                Ok(vec![LinkingRecord {
                    test_case_id: l.test_case_id,
                    linked_elements: l.linked_elements,
                    referenced_tables: l.referenced_tables,
                    failed: l.failed,
                    skipped: false,
                }])
            },
        )?;
        let links = group(&links);
        let n = self.config.n_examples;
        let (_, s2) = run_case_stage(
            &self.pool,
            "generation",
            &self.path(EXAMPLES_FILE),
            &cases,
            |_, r: &[GeneratedExample]| r.len() == n,
            |case| {
                if ab.no_examples {
                    return Ok(Vec::new());
                }
                let Some(link) = links.get(&case.id).and_then(|v| v.first()) else {
                    return Err("no schema linking record".into());
                };
                let db = &schemas[&case.db_id];
                match generation::generate_examples(
                    &self.clients.generation,
                    &gen.params,
                    case,
                    db,
                    &link.linked_elements,
                    n,
                ) {
                    Ok(v) => Ok(v),
                    Err(GenerationError::Failed { raw }) => {
                        log::warn!("case {}: no parseable example in generation output", case.id);
                        Ok((0..n).map(|i| GeneratedExample::stub(case.id, i, &raw)).collect())
                    }
                    Err(e) => Err(e.to_string()),
                }
            },
        )?;
        Ok(vec![s1, s2])
    }

    /// Judge, combine, filter, fall back.
    pub fn score(&self) -> Result<StageSummary, PipelineError> {
        let examples: Vec<GeneratedExample> = read_jsonl(&self.require(EXAMPLES_FILE, "generate")?)?;
        let (_, cases) = self.load_inputs()?;
        let examples = group(&examples);
        let counts: HashMap<usize, usize> = examples.iter().map(|(k, v)| (*k, v.len())).collect();
        let cfg = &self.config;
        let (_, s) = run_case_stage(
            &self.pool,
            "scoring",
            &self.path(SCORES_FILE),
            &cases,
            |id, r: &[ScoredExample]| counts.get(&id) == Some(&r.len()),
            |case| {
                if cfg.ablation.no_examples {
                    return Ok(Vec::new());
                }
                let Some(exs) = examples.get(&case.id) else {
                    return Err("no generated examples".into());
                };
                let fallback = if cfg.ablation.no_filtering { None } else { cfg.fallback_k };
                let (mut scored, _) = scoring::score_examples(
                    &self.clients.scoring,
                    &cfg.scoring.params,
                    &case.question,
                    exs,
                    &cfg.weights,
                    cfg.theta,
                    fallback,
                )
                .map_err(|e| e.to_string())?;
                if cfg.ablation.no_filtering {
                    for s in &mut scored {
                        s.selected = true;
                    }
                }
                Ok(scored)
            },
        )?;
        Ok(s)
    }

    fn scored_by_case(&self) -> Result<HashMap<usize, Vec<ScoredExample>>, PipelineError> {
        let scored: Vec<ScoredExample> = read_jsonl(&self.require(SCORES_FILE, "score")?)?;
        Ok(group(&scored))
    }

    /// Final prompts and `pred.sql`.
    pub fn infer(&self) -> Result<StageSummary, PipelineError> {
        let scored = self.scored_by_case()?;
        let (schemas, cases) = self.load_inputs()?;
        let cfg = &self.config;
        let (preds, s) = run_case_stage(
            &self.pool,
            "inference",
            &self.path(PREDICTIONS_FILE),
            &cases,
            |_, r: &[Prediction]| r.len() == 1,
            |case| {
                let empty = Vec::new();
                let list = match scored.get(&case.id) {
                    Some(v) => v,
                    None if cfg.ablation.no_examples => &empty,
                    None => return Err("no scored examples".into()),
                };
                let fallback = list.iter().any(|s| s.fallback);
                inference::infer_sql(
                    &self.clients.inference,
                    &cfg.inference.params,
                    case,
                    &schemas[&case.db_id],
                    list,
                    !cfg.ablation.no_reasoning,
                    fallback,
                )
                .map(|p| vec![p])
                .map_err(|e| e.to_string())
            },
        )?;
        let by_id: HashMap<usize, &Prediction> = preds.iter().map(|p| (p.test_case_id, p)).collect();
        let lines: String = cases
            .iter()
            .map(|c| by_id.get(&c.id).map_or("", |p| p.sql.as_str()).to_string() + "\n")
            .collect();
        write_atomic(&self.path(PRED_SQL_FILE), &lines)?;
        Ok(s)
    }

    /// Grades `pred.sql` from this run, or an external file with one query
    /// per line in dataset order.
    pub fn evaluate(&self, external_pred: Option<&Path>) -> Result<EvalFile, PipelineError> {
        let (schemas, cases) = self.load_inputs()?;
        let pred_path = match external_pred {
            Some(p) => p.to_path_buf(),
            None => self.require(PRED_SQL_FILE, "infer")?,
        };
        let text = fs::read_to_string(&pred_path).map_err(|e| io_err(&pred_path, e))?;
        let preds: Vec<&str> = text.lines().collect();
        if preds.len() != cases.len() {
            return Err(PipelineError::Config(format!(
                "{} has {} lines for {} test cases",
                pred_path.display(),
                preds.len(),
                cases.len()
            )));
        }
        let fallback: HashMap<usize, bool> = if external_pred.is_none() && self.path(PREDICTIONS_FILE).exists() {
            read_jsonl::<Prediction>(&self.path(PREDICTIONS_FILE))?
                .into_iter()
                .map(|p| (p.test_case_id, p.fallback_used))
                .collect()
        } else {
            HashMap::new()
        };
        let cfg = &self.config;
        let outcomes: Vec<EvalOutcome> = self.pool.install(|| {
            cases
                .par_iter()
                .zip(preds.par_iter())
                .map(|(case, pred)| {
                    eval::evaluate_case(
                        case,
                        pred,
                        &schemas[&case.db_id],
                        &cfg.difficulty,
                        cfg.timeout_ms,
                        fallback.get(&case.id).copied().unwrap_or(false),
                    )
                })
                .collect()
        });
        let file = EvalFile {
            report: eval::aggregate(&outcomes),
            outcomes,
        };
        write_atomic(
            &self.path(EVAL_FILE),
            &(serde_json::to_string_pretty(&file).expect("eval serializes") + "\n"),
        )?;
        Ok(file)
    }

    /// Renders `report.txt` from `05_eval.json`.
    pub fn report(&self) -> Result<Report, PipelineError> {
        let path = self.require(EVAL_FILE, "evaluate")?;
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let file: EvalFile = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
        write_atomic(&self.path(REPORT_FILE), &file.report.render_text())?;
        Ok(file.report)
    }

    /// All stages in order.
    pub fn run(&self, force: bool) -> Result<RunSummary, PipelineError> {
        let mut summary = RunSummary::default();
        summary.stages.push(self.ingest(force)?);
        summary.stages.extend(self.generate()?);
        summary.stages.push(self.score()?);
        summary.stages.push(self.infer()?);
        self.evaluate(None)?;
        summary.report = Some(self.report()?);
        Ok(summary)
    }

    /// Re-infers and re-grades every case under another weight vector and
    /// threshold, reusing the recorded judge components.
    pub fn evaluate_variant(&self, weights: &WeightConfig, theta: f64) -> Result<Report, PipelineError> {
        let scored = self.scored_by_case()?;
        let (schemas, cases) = self.load_inputs()?;
        let cfg = &self.config;
        let outcomes: Result<Vec<EvalOutcome>, PipelineError> = self.pool.install(|| {
            cases
            .par_iter()
            .map(|case| {
                let db = &schemas[&case.db_id];
                let mut list: Vec<ScoredExample> = Vec::new();
                for s in scored.get(&case.id).into_iter().flatten() {
                    let mut s = s.clone();
                    s.score = s.score.reweighted(weights).map_err(|e| PipelineError::Config(e.to_string()))?;
                    list.push(s);
                }
                let mut list =
                    scoring::filter_by_threshold(list, theta).map_err(|e| PipelineError::Config(e.to_string()))?;
                if cfg.ablation.no_filtering {
                    list.iter_mut().for_each(|s| s.selected = true);
                }
                let fired = match (cfg.ablation.no_filtering, cfg.fallback_k) {
                    (false, Some(k)) => scoring::fallback_selection(&mut list, k),
                    _ => false,
                };
                let pred = inference::infer_sql(
                    &self.clients.inference,
                    &cfg.inference.params,
                    case,
                    db,
                    &list,
                    !cfg.ablation.no_reasoning,
                    fired,
                )
                .map_err(|e| match e {
                    inference::InferenceError::Llm(l) => PipelineError::Llm(l),
                    other => PipelineError::Config(other.to_string()),
                })?;
                let sql = if pred.status == PredictionStatus::Ok { pred.sql.as_str() } else { "" };
                Ok(eval::evaluate_case(case, sql, db, &cfg.difficulty, cfg.timeout_ms, fired))
            })
            .collect()
        });
        Ok(eval::aggregate(&outcomes?))
    }

    /// Census, similarity bins, correlation, threshold sweep and weight
    /// grid, written under `analysis/`.
    pub fn analyze(&self) -> Result<AnalysisOutput, PipelineError> {
        let scored = self.scored_by_case()?;
        let eval_path = self.require(EVAL_FILE, "evaluate")?;
        let eval_file: EvalFile = serde_json::from_str(&fs::read_to_string(&eval_path).map_err(|e| io_err(&eval_path, e))?)
            .map_err(|e| io_err(&eval_path, e))?;
        let (_, cases) = self.load_inputs()?;
        let cfg = &self.config;
        let embed = &self.clients.embedding;

        // (case, rel, cosine, selected) per scored example, in dataset order.
        let mut rows: Vec<(usize, f64, f64, bool)> = Vec::new();
        for case in &cases {
            let Some(list) = scored.get(&case.id) else { continue };
            let q = embed.embed(&case.question, &cfg.embedding_model)?;
            for s in list {
                let cos = if s.example.parse_ok {
                    cosine(&q, &embed.embed(&s.example.question, &cfg.embedding_model)?)?
                } else {
                    f64::NAN
                };
                rows.push((case.id, s.score.rel, cos, s.selected));
            }
        }
        let items: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.2)).collect();
        let census = analysis::score_census(&items, &cfg.census_thresholds);

        let finite: Vec<f64> = rows.iter().map(|r| r.2).filter(|c| c.is_finite()).collect();
        let normalized = analysis::min_max_normalize(&finite);
        let ex_of: HashMap<usize, bool> = eval_file
            .outcomes
            .iter()
            .filter(|o| !o.gold_invalid)
            .map(|o| (o.test_case_id, o.ex))
            .collect();
        let mut pairs = Vec::new();
        let mut k = 0;
        for r in &rows {
            if !r.2.is_finite() {
                continue;
            }
            let x = normalized[k];
            k += 1;
            if let (true, Some(ex)) = (r.3, ex_of.get(&r.0)) {
                pairs.push((x, *ex));
            }
        }
        let bins = analysis::similarity_ex_bins(&pairs);

        let sweep = analysis::threshold_sweep(&cfg.sweep_thresholds, &cfg.weights, |w, t| self.evaluate_variant(w, t))?;
        let grid = analysis::weight_grid(&analysis::default_weight_grid(), cfg.theta, |w, t| {
            self.evaluate_variant(w, t)
        })?;
        let sweep_census = analysis::score_census(&items, &cfg.sweep_thresholds);
        // Thresholds that retain nothing have no mean cosine and drop out.
        let (xs, ys): (Vec<f64>, Vec<f64>) = sweep_census
            .rows
            .iter()
            .zip(&sweep)
            .filter_map(|(c, v)| Some((c.mean_cosine?, v.ex_overall()?)))
            .unzip();
        let corr = analysis::correlation(&xs, &ys).ok();

        let out = AnalysisOutput {
            census,
            bins,
            correlation: corr,
            sweep,
            grid,
        };
        out.write(&self.path(ANALYSIS_DIR))?;
        Ok(out)
    }

    /// Reruns the pipeline once per ablation into
    /// `analysis/ablations/<name>/`, sharing this run's clients.
    pub fn ablation_grid(&self, names: &[&str]) -> Result<Vec<(String, Report)>, PipelineError> {
        let mut out = Vec::new();
        for name in names {
            let ab = Ablation::named(name).ok_or_else(|| PipelineError::Config(format!("unknown ablation {name}")))?;
            let mut cfg = self.config.clone();
            cfg.ablation = ab;
            let dir = self.path(ANALYSIS_DIR).join("ablations").join(name);
            let clients = Clients {
                generation: self.clients.generation.clone(),
                scoring: self.clients.scoring.clone(),
                inference: self.clients.inference.clone(),
                embedding: self.clients.embedding.clone(),
            };
            let sub = Runner::with_clients(cfg, &dir, clients)?;
            let s = sub.run(false)?;
            out.push((name.to_string(), s.report.expect("run produces a report")));
        }
        let mut csv = String::from("ablation,easy,medium,hard,extra,all\n");
        for (name, r) in &out {
            csv.push_str(name);
            for b in &r.buckets {
                csv.push(',');
                if let Some(ex) = b.ex {
                    csv.push_str(&format!("{ex:.1}"));
                }
            }
            csv.push('\n');
        }
        write_atomic(&self.path(ANALYSIS_DIR).join("ablations.csv"), &csv)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOutput {
    pub census: analysis::ScoreCensus,
    pub bins: analysis::SimilarityBins,
    pub correlation: Option<f64>,
    pub sweep: Vec<VariantRow>,
    pub grid: Vec<VariantRow>,
}

impl AnalysisOutput {
    fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let files = [
            ("census.csv", analysis::census_csv(&self.census)),
            ("similarity_bins.csv", analysis::bins_csv(&self.bins)),
            ("similarity_bins.dat", analysis::bins_dat(&self.bins)),
            ("threshold_sweep.csv", analysis::variants_csv(&self.sweep)),
            ("threshold_sweep.dat", analysis::sweep_dat(&self.sweep)),
            ("weight_grid.csv", analysis::variants_csv(&self.grid)),
            (
                "analysis.md",
                analysis::markdown_report(&self.census, &self.bins, self.correlation, &self.sweep, &self.grid),
            ),
            (
                "analysis.json",
                serde_json::to_string_pretty(self).expect("analysis serializes") + "\n",
            ),
        ];
        for (name, body) in files {
            write_atomic(&dir.join(name), &body)?;
        }
        Ok(())
    }
}
