//! Second agent: drafts one sub-SQL per sub-question, back-links each draft
//! to the (table, column) pairs it actually uses, merges those subsets into
//! the focused schema, and synthesizes the initial SQL from the full set of
//! sub-question/sub-SQL pairs.
//!
//! Back-linking here is deterministic first: an AST walk resolves every
//! reference exactly and costs nothing. The LLM inference path remains as
//! the fallback for SQL the parser cannot digest.

use serde::{Deserialize, Serialize};

use crate::llm::{extract_block, AgentTag, BlockKind, LlmGateway, LlmRequest};
use crate::planner::{PromptExchange, SubQuestion};
use crate::prompts;
use crate::schema::{close_over_keys, merge_subsets, render_schema, validate_against, DbSchema, SchemaSubset, SchemaView};
use crate::sqlast;
use crate::{Error, Result};

/// How far along the pipeline a candidate has come. Transitions only move
/// forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateStage {
    Sub,
    Initial,
    Validated,
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlCandidate {
    pub sql: String,
    pub stage: CandidateStage,
    pub origin: AgentTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_index: Option<usize>,
}

impl SqlCandidate {
    pub fn new(sql: impl Into<String>, stage: CandidateStage, origin: AgentTag) -> Self {
        SqlCandidate { sql: sql.into(), stage, origin, sub_index: None }
    }

    /// Move the candidate forward to `stage`. Panics on a backward move;
    /// stage regressions are always a pipeline bug.
    pub fn promoted(&self, stage: CandidateStage) -> Self {
        assert!(stage >= self.stage, "stage must move forward: {:?} -> {:?}", self.stage, stage);
        SqlCandidate { stage, ..self.clone() }
    }
}

fn exchange(request: &LlmRequest, response_text: &str) -> PromptExchange {
    PromptExchange {
        agent_tag: request.agent_tag,
        system_prompt: request.system_prompt.clone(),
        user_prompt: request.user_prompt.clone(),
        response: response_text.to_string(),
    }
}

fn evidence_block(evidence: Option<&str>) -> String {
    match evidence {
        Some(e) if !e.is_empty() => format!("Evidence: {e}\n"),
        _ => String::new(),
    }
}

/// Ask once, retry once on extraction failure, and return the extracted SQL.
fn complete_sql(
    request: &LlmRequest,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> Result<String> {
    let mut last_err = None;
    for attempt in 0..2 {
        match llm.complete(request) {
            Ok(response) => {
                exchanges.push(exchange(request, &response.text));
                match extract_block(&response.text, BlockKind::Sql) {
                    Ok(sql) => return Ok(sql),
                    Err(e) => {
                        if attempt == 0 {
                            warnings.push(format!("{}: extraction failed, retrying once", request.agent_tag));
                        }
                        last_err = Some(e);
                    }
                }
            }
            Err(e) => {
                if attempt == 0 {
                    warnings.push(format!("{}: llm call failed, retrying once", request.agent_tag));
                }
                last_err = Some(e);
            }
        }
    }
    Err(Error::Generation(format!(
        "{}: no SQL after retry: {}",
        request.agent_tag,
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Generate one sub-SQL for a sub-question against the pruned schema.
/// `human_cot` selects the staged reasoning instructions; disabling it uses
/// the plain zero-shot wording instead.
pub fn generate_sub_sql(
    sub_q: &SubQuestion,
    s_initial: &SchemaSubset,
    schema: &DbSchema,
    evidence: Option<&str>,
    human_cot: bool,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> Result<SqlCandidate> {
    let instructions = if human_cot { prompts::GEN_SUBSQL } else { prompts::GEN_ZEROSHOT };
    let user_prompt = format!(
        "{}\n{}Question: {}\n",
        render_schema(schema, SchemaView::Subset(s_initial)),
        evidence_block(evidence),
        sub_q.text
    );
    let request = LlmRequest::new(AgentTag::GenSubsql, instructions, user_prompt);
    let sql = complete_sql(&request, llm, exchanges, warnings)?;
    let mut candidate = SqlCandidate::new(sql, CandidateStage::Sub, AgentTag::GenSubsql);
    candidate.sub_index = Some(sub_q.index);
    Ok(candidate)
}

/// Extract the (table, column) pairs a sub-SQL references. The AST walk is
/// the primary path; when the SQL does not parse, an LLM inference step is
/// asked for the pairs instead. Both failing yields the empty subset, which
/// simply contributes nothing to the merge.
pub fn back_link(
    candidate: &SqlCandidate,
    schema: &DbSchema,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> SchemaSubset {
    debug_assert_eq!(candidate.stage, CandidateStage::Sub);
    match sqlast::referenced_pairs(&candidate.sql, schema) {
        Ok(subset) => {
            let (validated, dropped) = validate_against(&subset, schema);
            warnings.extend(dropped.iter().map(|w| format!("back_link: {w}")));
            validated
        }
        Err(parse_err) => {
            warnings.push(format!("back_link: ast walk failed ({parse_err}); asking model"));
            back_link_via_llm(&candidate.sql, schema, llm, exchanges, warnings)
        }
    }
}

fn back_link_via_llm(
    sql: &str,
    schema: &DbSchema,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> SchemaSubset {
    let user_prompt = format!("{}\nSQL:\n{}\n", render_schema(schema, SchemaView::All), sql);
    let request = LlmRequest::new(AgentTag::GenBacklink, prompts::GEN_BACKLINK, user_prompt);
    let response = match llm.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("back_link: llm fallback failed ({e}); empty subset"));
            return SchemaSubset::new();
        }
    };
    exchanges.push(exchange(&request, &response.text));
    let parsed = extract_block(&response.text, BlockKind::Json)
        .ok()
        .and_then(|json| serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&json).ok());
    let Some(map) = parsed else {
        warnings.push("back_link: unparseable llm fallback answer; empty subset".to_string());
        return SchemaSubset::new();
    };
    let mut subset = SchemaSubset::new();
    for (table, columns) in &map {
        if let serde_json::Value::Array(cols) = columns {
            for col in cols.iter().filter_map(|c| c.as_str()) {
                subset.insert(table, col);
            }
        }
    }
    let (validated, dropped) = validate_against(&subset, schema);
    warnings.extend(dropped.iter().map(|w| format!("back_link: {w}")));
    validated
}

/// Merge the back-linked subsets into the focused schema, then close it over
/// keys exactly like planner pruning does.
pub fn build_s_core(subsets: &[SchemaSubset], schema: &DbSchema) -> SchemaSubset {
    close_over_keys(&merge_subsets(subsets), schema)
}

/// Synthesize the initial SQL from every (sub-question, sub-SQL) pair. On
/// extraction failure after one retry, a lone sub-SQL is promoted to the
/// initial candidate; with several sub-SQLs the item fails with a
/// generation error.
pub fn synthesize_initial(
    question: &str,
    evidence: Option<&str>,
    pairs: &[(SubQuestion, SqlCandidate)],
    s_core: &SchemaSubset,
    schema: &DbSchema,
    human_cot: bool,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> Result<SqlCandidate> {
    let mut pair_text = String::new();
    for (i, (sub_q, candidate)) in pairs.iter().enumerate() {
        pair_text.push_str(&format!("Sub-question {}: {}\nSub-SQL {}: {}\n", i + 1, sub_q.text, i + 1, candidate.sql));
    }
    let instructions = if human_cot { prompts::GEN_MERGE } else { prompts::GEN_ZEROSHOT };
    let user_prompt = format!(
        "{}\n{}{}Question: {}\n",
        render_schema(schema, SchemaView::Subset(s_core)),
        pair_text,
        evidence_block(evidence),
        question
    );
    let request = LlmRequest::new(AgentTag::GenMerge, instructions, user_prompt);
    match complete_sql(&request, llm, exchanges, warnings) {
        Ok(sql) => Ok(SqlCandidate::new(sql, CandidateStage::Initial, AgentTag::GenMerge)),
        Err(e) => {
            if pairs.len() == 1 {
                warnings.push("synthesize: extraction failed; promoting the lone sub-SQL".to_string());
                Ok(pairs[0].1.promoted(CandidateStage::Initial))
            } else {
                Err(e)
            }
        }
    }
}
