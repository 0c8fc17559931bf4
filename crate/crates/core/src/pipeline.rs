//! End-to-end orchestration: planner -> generator -> validator -> checker
//! per item, full trace persistence, and bounded-parallel split runs.
//!
//! Traces are always persisted, success or not; they are the audit substrate
//! and the replay oracle. Under a deterministic backend (scripted queues or
//! strict cache replay) every wall-clock field in the trace is zeroed, so a
//! replayed run reproduces its traces and predictions byte for byte.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench_io::{BenchmarkSplit, SchemaStore, TaskItem};
use crate::checker::{run_checker, CheckerConfig, CheckerStep};
use crate::db::SqliteDb;
use crate::generator::{back_link, build_s_core, generate_sub_sql, synthesize_initial, CandidateStage, SqlCandidate};
use crate::llm::{AgentTag, BackendKind, LlmGateway, LlmRequest, LlmResponse};
use crate::planner::{plan, PlanResult};
use crate::prompts;
use crate::schema::{DbSchema, SchemaSubset};
use crate::validator::{validate, ValidationOutcome};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub planner: bool,
    pub human_cot: bool,
    pub validator: bool,
    pub checker: bool,
    pub checker_config: CheckerConfig,
    pub max_subquestions: usize,
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            planner: true,
            human_cot: true,
            validator: true,
            checker: true,
            checker_config: CheckerConfig::default(),
            max_subquestions: crate::planner::DEFAULT_MAX_SUBQUESTIONS,
            parallelism: 1,
        }
    }
}

impl RunConfig {
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(self).unwrap_or_default().as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// One LLM exchange as it happened, in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCallRecord {
    pub agent_tag: AgentTag,
    pub system_prompt: String,
    pub user_prompt: String,
    pub response_text: String,
    pub backend: BackendKind,
}

/// Gateway wrapper that logs every call made while processing one item.
struct RecordingGateway<'a> {
    inner: &'a dyn LlmGateway,
    calls: Mutex<Vec<LlmCallRecord>>,
}

impl<'a> RecordingGateway<'a> {
    fn new(inner: &'a dyn LlmGateway) -> Self {
        RecordingGateway { inner, calls: Mutex::new(Vec::new()) }
    }

    fn into_calls(self) -> Vec<LlmCallRecord> {
        self.calls.into_inner().unwrap()
    }
}

impl LlmGateway for RecordingGateway<'_> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let result = self.inner.complete(request);
        let (response_text, backend) = match &result {
            Ok(r) => (r.text.clone(), r.backend),
            Err(e) => (format!("<error: {e}>"), self.inner.kind()),
        };
        self.calls.lock().unwrap().push(LlmCallRecord {
            agent_tag: request.agent_tag,
            system_prompt: request.system_prompt.clone(),
            user_prompt: request.user_prompt.clone(),
            response_text,
            backend,
        });
        result
    }

    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }

    fn deterministic(&self) -> bool {
        self.inner.deterministic()
    }
}

/// Complete per-item record of the workflow: every stage artifact, every
/// LLM call, every warning.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub item_id: String,
    pub plan: PlanResult,
    pub sub_candidates: Vec<SqlCandidate>,
    pub s_core: SchemaSubset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<SqlCandidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationOutcome>,
    pub checker_steps: Vec<CheckerStep>,
    #[serde(rename = "final")]
    pub final_candidate: Option<SqlCandidate>,
    pub warnings: Vec<String>,
    pub llm_calls: Vec<LlmCallRecord>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PipelineTrace {
    /// The SQL this item predicts, flattened to one line for the
    /// predictions file. Only line breaks are replaced; literal content
    /// (including trailing spaces) is preserved.
    pub fn prediction_line(&self) -> String {
        match &self.final_candidate {
            Some(c) => c.sql.replace(['\r', '\n'], " "),
            None => String::new(),
        }
    }
}

/// Run the four-agent workflow for one item, honoring the ablation gates.
pub fn run_item(
    item: &TaskItem,
    schema: &DbSchema,
    db: Option<&SqliteDb>,
    config: &RunConfig,
    llm: &dyn LlmGateway,
) -> PipelineTrace {
    let recorder = RecordingGateway::new(llm);
    let deterministic = llm.deterministic();
    let mut warnings: Vec<String> = Vec::new();
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut failure: Option<String> = None;
    let evidence = item.evidence.as_deref();

    // Planner
    let stage_start = Instant::now();
    let plan_result = if config.planner {
        plan(&item.question, evidence, schema, config.max_subquestions, &recorder, &mut warnings)
    } else {
        PlanResult::passthrough(&item.question, schema)
    };
    timings.insert("planner".into(), stage_start.elapsed().as_secs_f64() * 1e3);

    // Generator: one sub-SQL per sub-question, back-linked subsets, merge.
    let stage_start = Instant::now();
    let mut scratch = Vec::new();
    let mut sub_candidates: Vec<SqlCandidate> = Vec::new();
    let mut pairs = Vec::new();
    let mut subsets: Vec<SchemaSubset> = Vec::new();
    for sub_q in &plan_result.sub_questions {
        match generate_sub_sql(
            sub_q,
            &plan_result.s_initial,
            schema,
            evidence,
            config.human_cot,
            &recorder,
            &mut scratch,
            &mut warnings,
        ) {
            Ok(candidate) => {
                subsets.push(back_link(&candidate, schema, &recorder, &mut scratch, &mut warnings));
                pairs.push((sub_q.clone(), candidate.clone()));
                sub_candidates.push(candidate);
            }
            Err(e) => warnings.push(format!("sub-question {}: {e}", sub_q.index)),
        }
    }
    let s_core = build_s_core(&subsets, schema);

    let initial = if pairs.is_empty() {
        failure = Some("generation produced no candidates".to_string());
        None
    } else {
        match synthesize_initial(
            &item.question,
            evidence,
            &pairs,
            &s_core,
            schema,
            config.human_cot,
            &recorder,
            &mut scratch,
            &mut warnings,
        ) {
            Ok(candidate) => Some(candidate),
            Err(e) => {
                failure = Some(e.to_string());
                None
            }
        }
    };
    timings.insert("generator".into(), stage_start.elapsed().as_secs_f64() * 1e3);

    // Validator
    let stage_start = Instant::now();
    let validation = match (&initial, config.validator) {
        (Some(initial_candidate), true) => validate(
            &item.question,
            evidence,
            initial_candidate,
            schema,
            db,
            &recorder,
            &mut scratch,
            &mut warnings,
        ),
        _ => None,
    };
    let selected = validation
        .as_ref()
        .map(|v| v.selected.clone())
        .or_else(|| initial.clone());
    timings.insert("validator".into(), stage_start.elapsed().as_secs_f64() * 1e3);

    // Checker
    let stage_start = Instant::now();
    let mut checker_steps: Vec<CheckerStep> = Vec::new();
    let final_candidate = match selected {
        Some(candidate) if config.checker => match db {
            Some(db) => {
                let (final_c, steps) = run_checker(
                    &item.question,
                    db,
                    &s_core,
                    schema,
                    &candidate,
                    &config.checker_config,
                    &recorder,
                    &mut scratch,
                    &mut warnings,
                );
                checker_steps = steps;
                Some(final_c)
            }
            None => {
                warnings.push("checker: no database handle; skipping".to_string());
                Some(candidate.promoted(CandidateStage::Final))
            }
        },
        Some(candidate) => Some(candidate.promoted(CandidateStage::Final)),
        None => {
            // Best available when synthesis failed: the last sub candidate.
            sub_candidates.last().map(|c| c.promoted(CandidateStage::Final))
        }
    };
    timings.insert("checker".into(), stage_start.elapsed().as_secs_f64() * 1e3);

    if deterministic {
        for v in timings.values_mut() {
            *v = 0.0;
        }
    }

    PipelineTrace {
        item_id: item.item_id.clone(),
        plan: plan_result,
        sub_candidates,
        s_core,
        initial,
        validation,
        checker_steps,
        final_candidate,
        warnings,
        llm_calls: recorder.into_calls(),
        timings_ms: timings,
        failure,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub backend: BackendKind,
    pub deterministic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    pub config: RunConfig,
    pub config_sha256: String,
    pub prompt_sha256: BTreeMap<String, String>,
    pub item_count: usize,
    pub created_unix_ms: u128,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub items: usize,
    pub failures: usize,
}

/// Run a whole split with bounded parallelism. Writes
/// `traces/<item_id>.json`, `predictions.txt` (one `item_id<TAB>sql` line
/// per item, sorted by item_id), and `manifest.json` under `run_dir`.
/// Individual item failures are recorded in their traces; the run finishes.
pub fn run_split(
    split: &BenchmarkSplit,
    store: &SchemaStore,
    config: &RunConfig,
    llm: &(dyn LlmGateway + Sync),
    run_dir: &Path,
    model: Option<String>,
) -> Result<RunSummary> {
    let traces_dir = run_dir.join("traces");
    fs::create_dir_all(&traces_dir).map_err(|e| Error::io(&traces_dir, e))?;

    let queue: Mutex<VecDeque<usize>> = Mutex::new((0..split.items.len()).collect());
    let predictions: Mutex<Vec<(String, String)>> = Mutex::new(Vec::new());
    let failures: Mutex<usize> = Mutex::new(0);
    let io_errors: Mutex<Vec<String>> = Mutex::new(Vec::new());

    let width = config.parallelism.max(1);
    std::thread::scope(|scope| {
        for _ in 0..width {
            scope.spawn(|| {
                let mut worker_dbs: HashMap<String, Option<SqliteDb>> = HashMap::new();
                loop {
                    let index = match queue.lock().unwrap().pop_front() {
                        Some(i) => i,
                        None => break,
                    };
                    let item = &split.items[index];
                    let Some(schema) = store.schema(&item.db_id) else {
                        io_errors.lock().unwrap().push(format!("{}: no schema loaded", item.item_id));
                        continue;
                    };
                    let db = worker_dbs
                        .entry(item.db_id.clone())
                        .or_insert_with(|| {
                            store.db_file(&item.db_id).and_then(|p| SqliteDb::open_read_only(p).ok())
                        })
                        .as_ref();

                    let trace = run_item(item, schema, db, config, llm);
                    if trace.failure.is_some() {
                        *failures.lock().unwrap() += 1;
                    }
                    let trace_path = traces_dir.join(format!("{}.json", sanitize_file_name(&item.item_id)));
                    match serde_json::to_string_pretty(&trace) {
                        Ok(json) => {
                            if let Err(e) = fs::write(&trace_path, json + "\n") {
                                io_errors.lock().unwrap().push(format!("{}: {e}", trace_path.display()));
                            }
                        }
                        Err(e) => io_errors.lock().unwrap().push(format!("{}: {e}", item.item_id)),
                    }
                    predictions.lock().unwrap().push((item.item_id.clone(), trace.prediction_line()));
                }
            });
        }
    });

    let io_errors = io_errors.into_inner().unwrap();
    if !io_errors.is_empty() {
        return Err(Error::invalid(format!("run aborted by I/O errors: {}", io_errors.join("; "))));
    }

    let mut predictions = predictions.into_inner().unwrap();
    predictions.sort_by(|a, b| a.0.cmp(&b.0));
    let mut predictions_text = String::new();
    for (item_id, sql) in &predictions {
        predictions_text.push_str(&format!("{item_id}\t{sql}\n"));
    }
    let predictions_path = run_dir.join("predictions.txt");
    fs::write(&predictions_path, predictions_text).map_err(|e| Error::io(&predictions_path, e))?;

    let manifest = RunManifest {
        backend: llm.kind(),
        deterministic: llm.deterministic(),
        model,
        config: config.clone(),
        config_sha256: config.sha256(),
        prompt_sha256: prompts::hashes(),
        item_count: split.items.len(),
        created_unix_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0),
    };
    let manifest_path = run_dir.join("manifest.json");
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(&manifest_path, manifest_json + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    let failures = failures.into_inner().unwrap();
    Ok(RunSummary { run_dir: run_dir.to_path_buf(), items: split.items.len(), failures })
}

/// Read back the predictions file of a run directory.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, String)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((id, sql)) => out.push((id.to_string(), sql.to_string())),
            None => {
                return Err(Error::invalid(format!(
                    "{}:{}: expected '<item_id>\\t<sql>'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    Ok(out)
}

fn sanitize_file_name(name: &str) -> String {
    name.chars().map(|c| if c.is_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}
