//! First agent: prune the full schema down to the question-relevant subset
//! and decompose the question into target/condition sub-questions.
//!
//! Both operations degrade instead of failing: an unusable pruning answer
//! falls back to the full schema, an unusable decomposition falls back to a
//! single composite sub-question equal to the whole question. An item never
//! aborts here.

use serde::{Deserialize, Serialize};

use crate::llm::{extract_block, AgentTag, BlockKind, LlmGateway, LlmRequest};
use crate::prompts;
use crate::schema::{close_over_keys, render_schema, validate_against, DbSchema, SchemaSubset, SchemaView};

pub const DEFAULT_MAX_SUBQUESTIONS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubQuestionKind {
    Target,
    Condition,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubQuestion {
    pub index: usize,
    pub text: String,
    pub kind: SubQuestionKind,
}

/// One prompt/response exchange, kept for the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptExchange {
    pub agent_tag: AgentTag,
    pub system_prompt: String,
    pub user_prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub s_initial: SchemaSubset,
    pub sub_questions: Vec<SubQuestion>,
    pub raw_prompts: Vec<PromptExchange>,
}

impl PlanResult {
    /// The degenerate plan used when the planner is disabled: full schema,
    /// one composite sub-question.
    pub fn passthrough(question: &str, schema: &DbSchema) -> Self {
        PlanResult {
            s_initial: SchemaSubset::full(schema),
            sub_questions: vec![composite(question)],
            raw_prompts: vec![],
        }
    }
}

fn composite(question: &str) -> SubQuestion {
    SubQuestion { index: 0, text: question.to_string(), kind: SubQuestionKind::Composite }
}

fn question_block(question: &str, evidence: Option<&str>) -> String {
    match evidence {
        Some(e) if !e.is_empty() => format!("Question: {question}\nEvidence: {e}\n"),
        _ => format!("Question: {question}\n"),
    }
}

/// Prune the schema to the question-relevant subset. Always returns a subset
/// that validates against `schema` and satisfies PK/FK closure; anything the
/// model gets wrong degrades to the full schema with a warning.
pub fn prune_schema(
    question: &str,
    evidence: Option<&str>,
    schema: &DbSchema,
    llm: &dyn LlmGateway,
    warnings: &mut Vec<String>,
) -> (SchemaSubset, Vec<PromptExchange>) {
    let user_prompt = format!("{}\n{}", render_schema(schema, SchemaView::All), question_block(question, evidence));
    let request = LlmRequest::new(AgentTag::PlannerPrune, prompts::PLANNER_PRUNE, user_prompt);

    let mut exchanges = Vec::new();
    let full = || close_over_keys(&SchemaSubset::full(schema), schema);

    let response = match llm.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("prune: llm call failed ({e}); using full schema"));
            return (full(), exchanges);
        }
    };
    exchanges.push(PromptExchange {
        agent_tag: AgentTag::PlannerPrune,
        system_prompt: request.system_prompt.clone(),
        user_prompt: request.user_prompt.clone(),
        response: response.text.clone(),
    });

    let parsed = extract_block(&response.text, BlockKind::Json)
        .ok()
        .and_then(|json| serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&json).ok());
    let Some(map) = parsed else {
        warnings.push("prune: unparseable model answer; using full schema".to_string());
        return (full(), exchanges);
    };

    let mut subset = SchemaSubset::new();
    for (table, columns) in &map {
        if let serde_json::Value::Array(cols) = columns {
            for col in cols {
                if let serde_json::Value::String(name) = col {
                    subset.insert(table, name);
                }
            }
        }
    }
    let (validated, dropped) = validate_against(&subset, schema);
    warnings.extend(dropped.iter().map(|w| format!("prune: {w}")));
    if validated.is_empty() {
        warnings.push("prune: nothing valid retained; using full schema".to_string());
        return (full(), exchanges);
    }
    (close_over_keys(&validated, schema), exchanges)
}

/// Decompose the question along its targets and conditions. Never returns an
/// empty list; every failure collapses to the single composite sub-question.
pub fn decompose(
    question: &str,
    evidence: Option<&str>,
    s_initial: &SchemaSubset,
    schema: &DbSchema,
    max_subq: usize,
    llm: &dyn LlmGateway,
    warnings: &mut Vec<String>,
) -> (Vec<SubQuestion>, Vec<PromptExchange>) {
    let user_prompt = format!(
        "{}\n{}",
        render_schema(schema, SchemaView::Subset(s_initial)),
        question_block(question, evidence)
    );
    let request = LlmRequest::new(AgentTag::PlannerDecompose, prompts::PLANNER_DECOMPOSE, user_prompt);

    let mut exchanges = Vec::new();
    let response = match llm.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("decompose: llm call failed ({e}); using composite question"));
            return (vec![composite(question)], exchanges);
        }
    };
    exchanges.push(PromptExchange {
        agent_tag: AgentTag::PlannerDecompose,
        system_prompt: request.system_prompt.clone(),
        user_prompt: request.user_prompt.clone(),
        response: response.text.clone(),
    });

    let parsed = extract_block(&response.text, BlockKind::Json)
        .ok()
        .and_then(|json| serde_json::from_str::<Vec<serde_json::Value>>(&json).ok());
    let Some(values) = parsed else {
        warnings.push("decompose: unparseable model answer; using composite question".to_string());
        return (vec![composite(question)], exchanges);
    };

    let mut texts: Vec<String> = values
        .into_iter()
        .filter_map(|v| match v {
            serde_json::Value::String(s) if !s.trim().is_empty() => Some(s),
            _ => None,
        })
        .collect();
    if texts.is_empty() {
        warnings.push("decompose: empty decomposition; using composite question".to_string());
        return (vec![composite(question)], exchanges);
    }
    if texts.len() > max_subq {
        warnings.push(format!("decompose: {} sub-questions truncated to {max_subq}", texts.len()));
        texts.truncate(max_subq);
    }

    let sub_questions = texts
        .into_iter()
        .enumerate()
        .map(|(index, text)| {
            let kind = if text.trim_start().to_lowercase().starts_with("condition") {
                SubQuestionKind::Condition
            } else {
                SubQuestionKind::Target
            };
            SubQuestion { index, text, kind }
        })
        .collect();
    (sub_questions, exchanges)
}

/// Full planner pass: prune, then decompose against the pruned schema.
pub fn plan(
    question: &str,
    evidence: Option<&str>,
    schema: &DbSchema,
    max_subq: usize,
    llm: &dyn LlmGateway,
    warnings: &mut Vec<String>,
) -> PlanResult {
    let (s_initial, mut raw_prompts) = prune_schema(question, evidence, schema, llm, warnings);
    let (sub_questions, mut decompose_prompts) =
        decompose(question, evidence, &s_initial, schema, max_subq, llm, warnings);
    raw_prompts.append(&mut decompose_prompts);
    PlanResult { s_initial, sub_questions, raw_prompts }
}
