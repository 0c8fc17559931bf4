//! Fourth agent: format trimming followed by a bounded execute-and-repair
//! loop. Execution feedback, retrieved stored values, and the focused
//! schema drive each repair; the iteration bound guarantees termination and
//! the final SQL is returned as-is even if it never passed.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::db::{CellValue, ExecResult, SqliteDb};
use crate::generator::{CandidateStage, SqlCandidate};
use crate::llm::{extract_block, AgentTag, BlockKind, LlmGateway, LlmRequest};
use crate::planner::PromptExchange;
use crate::prompts;
use crate::schema::{render_schema, DbSchema, SchemaSubset, SchemaView};
use crate::sqlast;

const EXEC_ROW_CAP: usize = 1_000;
const PREVIEW_ROWS: usize = 5;
const PREVIEW_CHARS: usize = 2_000;
const DISTINCT_VALUE_SCAN_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerConfig {
    pub max_try_time: usize,
    pub top_k_values: usize,
    pub exec_timeout_ms: u64,
    pub flag_empty_result: bool,
    pub flag_scalar_zero: bool,
    pub flag_contains_null: bool,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        CheckerConfig {
            max_try_time: 3,
            top_k_values: 5,
            exec_timeout_ms: 30_000,
            flag_empty_result: true,
            flag_scalar_zero: true,
            flag_contains_null: true,
        }
    }
}

/// What one execution of the candidate produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecOutcome {
    Pass,
    Error { err: String },
    Suspicious { preview: String },
}

/// A value retrieved from the database for repair context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedValue {
    pub table: String,
    pub column: String,
    pub value: String,
    pub score: f64,
}

/// One loop-body execution: what ran, what came back, what the refiner did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckerStep {
    pub iteration: usize,
    pub sql_before: String,
    pub exec_outcome: ExecOutcome,
    pub retrieved_values: Vec<RetrievedValue>,
    pub sql_after: String,
}

fn exchange(request: &LlmRequest, response_text: &str) -> PromptExchange {
    PromptExchange {
        agent_tag: request.agent_tag,
        system_prompt: request.system_prompt.clone(),
        user_prompt: request.user_prompt.clone(),
        response: response_text.to_string(),
    }
}

/// Trim the SQL under the minimization and minimal-usability principles.
/// A deterministic pre-pass strips trailing semicolons and duplicate
/// projection columns before the model sees it; an unusable model answer
/// passes the pre-passed SQL through unchanged.
pub fn reduce_format(
    question: &str,
    sql_pre: &SqlCandidate,
    s_core: &SchemaSubset,
    schema: &DbSchema,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> SqlCandidate {
    let mut sql = sqlast::strip_trailing_semicolons(&sql_pre.sql).to_string();
    if let Some(deduped) = sqlast::dedupe_projection(&sql) {
        warnings.push("reduce_format: dropped duplicate projection columns".to_string());
        sql = deduped;
    }

    let user_prompt = format!(
        "{}\nQuestion: {question}\nSQL:\n{sql}\n",
        render_schema(schema, SchemaView::Subset(s_core))
    );
    let request = LlmRequest::new(AgentTag::CheckerTrim, prompts::CHECKER_TRIM, user_prompt);
    let passthrough = |warnings: &mut Vec<String>, reason: &str| {
        warnings.push(format!("reduce_format: {reason}; passing SQL through"));
        SqlCandidate { sql: sql.clone(), origin: AgentTag::CheckerTrim, ..sql_pre.clone() }
    };

    let response = match llm.complete(&request) {
        Ok(r) => r,
        Err(e) => return passthrough(warnings, &format!("llm call failed ({e})")),
    };
    exchanges.push(exchange(&request, &response.text));
    let trimmed = match extract_block(&response.text, BlockKind::Sql) {
        Ok(t) => t,
        Err(_) => return passthrough(warnings, "unextractable model output"),
    };
    if !sqlast::parses(&trimmed) {
        return passthrough(warnings, "trimmed SQL does not parse");
    }
    SqlCandidate { sql: trimmed, origin: AgentTag::CheckerTrim, ..sql_pre.clone() }
}

/// Execute and classify: engine failure, suspicious result (empty, scalar
/// zero, or a NULL cell — each rule individually switchable), or pass. The
/// raw result rides along for downstream context.
pub fn exec_tool(sql: &str, db: &SqliteDb, config: &CheckerConfig) -> (ExecOutcome, ExecResult) {
    let result = db.execute_bounded(sql, Duration::from_millis(config.exec_timeout_ms), EXEC_ROW_CAP);
    if !result.ok {
        let err = result.err.clone().unwrap_or_else(|| "unknown error".to_string());
        return (ExecOutcome::Error { err }, result);
    }
    let suspicious = |preview: String| ExecOutcome::Suspicious { preview };
    if config.flag_empty_result && result.rows.is_empty() {
        return (suspicious(result.preview(PREVIEW_ROWS, PREVIEW_CHARS)), result);
    }
    if config.flag_scalar_zero && result.rows.len() == 1 && result.rows[0].len() == 1 {
        if let Some(v) = result.rows[0][0].as_f64() {
            if v == 0.0 {
                return (suspicious(result.preview(PREVIEW_ROWS, PREVIEW_CHARS)), result);
            }
        }
    }
    if config.flag_contains_null
        && result.rows.iter().any(|row| row.iter().any(|c| matches!(c, CellValue::Null)))
    {
        return (suspicious(result.preview(PREVIEW_ROWS, PREVIEW_CHARS)), result);
    }
    (ExecOutcome::Pass, result)
}

/// Character-trigram Dice similarity on trim+casefold normalized strings.
/// Exact normalized equality scores 1.0; everything else stays below it.
pub fn value_similarity(literal: &str, stored: &str) -> f64 {
    let norm = |s: &str| s.trim().to_lowercase();
    let a = norm(literal);
    let b = norm(stored);
    if a == b {
        return 1.0;
    }
    let trigrams = |s: &str| -> BTreeSet<String> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() < 3 {
            return BTreeSet::new();
        }
        chars.windows(3).map(|w| w.iter().collect()).collect()
    };
    let ta = trigrams(&a);
    let tb = trigrams(&b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let common = ta.intersection(&tb).count();
    let dice = 2.0 * common as f64 / (ta.len() + tb.len()) as f64;
    // distinct strings stay strictly below an exact match
    dice.min(1.0 - 1e-9)
}

/// Retrieve the top-k stored values most relevant to the SQL's string
/// literals, scanning every TEXT-typed column of the focused schema.
/// Returned values are byte-exact copies of what the database stores.
pub fn value_retrieve(
    sql: &str,
    s_core: &SchemaSubset,
    schema: &DbSchema,
    db: &SqliteDb,
    k: usize,
) -> Vec<RetrievedValue> {
    let literals = sqlast::string_literals(sql);
    if literals.is_empty() {
        return vec![];
    }
    let mut scored: Vec<RetrievedValue> = Vec::new();
    for (table, column) in s_core.pairs() {
        let Some(col_def) = schema.table(table).and_then(|t| t.column(column)) else {
            continue;
        };
        let ty = col_def.declared_type.to_uppercase();
        if !(ty.contains("TEXT") || ty.contains("CHAR") || ty.contains("CLOB")) {
            continue;
        }
        let Ok(values) = db.distinct_text_values(table, column, DISTINCT_VALUE_SCAN_CAP) else {
            continue;
        };
        for value in values {
            let best = literals
                .iter()
                .map(|lit| value_similarity(lit, &value))
                .fold(0.0f64, f64::max);
            if best > 0.0 {
                scored.push(RetrievedValue {
                    table: table.to_string(),
                    column: column.to_string(),
                    value,
                    score: best,
                });
            }
        }
    }
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.table.cmp(&b.table))
            .then_with(|| a.column.cmp(&b.column))
            .then_with(|| a.value.cmp(&b.value))
    });
    scored.truncate(k);
    scored
}

/// One repair round: hand the model the question, current SQL, focused
/// schema, execution feedback, and retrieved values. An unextractable
/// answer returns the input unchanged; the loop bound caps the damage.
pub fn refine(
    question: &str,
    sql: &str,
    s_core: &SchemaSubset,
    schema: &DbSchema,
    err: Option<&str>,
    res_preview: Option<&str>,
    vals: &[RetrievedValue],
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> String {
    let mut feedback = String::new();
    if let Some(err) = err {
        feedback.push_str(&format!("Execution error:\n{err}\n"));
    }
    if let Some(res) = res_preview {
        feedback.push_str(&format!("Suspicious result:\n{res}\n"));
    }
    let mut values_block = String::new();
    if !vals.is_empty() {
        values_block.push_str("Relevant stored values:\n");
        for v in vals {
            values_block.push_str(&format!(
                "  {}.{} = {}\n",
                v.table,
                v.column,
                serde_json::to_string(&v.value).unwrap_or_else(|_| v.value.clone())
            ));
        }
    }
    let user_prompt = format!(
        "{}\nQuestion: {question}\nSQL:\n{sql}\n{feedback}{values_block}",
        render_schema(schema, SchemaView::Subset(s_core))
    );
    let request = LlmRequest::new(AgentTag::CheckerRefine, prompts::CHECKER_REFINE, user_prompt);
    let response = match llm.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("refine: llm call failed ({e}); SQL unchanged"));
            return sql.to_string();
        }
    };
    exchanges.push(exchange(&request, &response.text));
    match extract_block(&response.text, BlockKind::Sql) {
        Ok(repaired) => repaired,
        Err(_) => {
            warnings.push("refine: unextractable model output; SQL unchanged".to_string());
            sql.to_string()
        }
    }
}

/// The full checker pass: trim once, then execute-and-repair until the
/// query passes or the iteration budget runs out. Each non-passing
/// execution contributes one [`CheckerStep`]; the final candidate is
/// returned either way.
#[allow(clippy::too_many_arguments)]
pub fn run_checker(
    question: &str,
    db: &SqliteDb,
    s_core: &SchemaSubset,
    schema: &DbSchema,
    sql_pre: &SqlCandidate,
    config: &CheckerConfig,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> (SqlCandidate, Vec<CheckerStep>) {
    let mut current = reduce_format(question, sql_pre, s_core, schema, llm, exchanges, warnings);
    let mut steps = Vec::new();
    let mut count = 0;
    while count < config.max_try_time {
        let (outcome, _result) = exec_tool(&current.sql, db, config);
        if outcome == ExecOutcome::Pass {
            break;
        }
        let vals = value_retrieve(&current.sql, s_core, schema, db, config.top_k_values);
        let (err, res_preview) = match &outcome {
            ExecOutcome::Error { err } => (Some(err.as_str()), None),
            ExecOutcome::Suspicious { preview } => (None, Some(preview.as_str())),
            ExecOutcome::Pass => unreachable!(),
        };
        let repaired = refine(
            question,
            &current.sql,
            s_core,
            schema,
            err,
            res_preview,
            &vals,
            llm,
            exchanges,
            warnings,
        );
        steps.push(CheckerStep {
            iteration: count,
            sql_before: current.sql.clone(),
            exec_outcome: outcome,
            retrieved_values: vals,
            sql_after: repaired.clone(),
        });
        current.sql = repaired;
        count += 1;
    }
    (current.promoted(CandidateStage::Final), steps)
}
