//! Third agent: back-translate the initial SQL into a natural language
//! explanation, check it against the question, correct on a mismatch, and
//! pick the better of the two candidates with execution results in hand.
//!
//! Deterministic pre-rules run before any selection vote: a candidate that
//! executes beats one that errors, two failures keep the initial, and
//! identical results keep the corrected candidate (it additionally passed
//! semantic review). Only genuinely divergent results reach the model.
//! Verdict parsing fails open — the checker downstream still guards
//! executability, so parse noise must not discard valid queries.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::db::SqliteDb;
use crate::eval::{rows_equivalent, ExSemantics};
use crate::generator::{CandidateStage, SqlCandidate};
use crate::llm::{extract_block, AgentTag, BlockKind, LlmGateway, LlmRequest};
use crate::planner::PromptExchange;
use crate::prompts;
use crate::schema::{render_schema, DbSchema, SchemaView};

const SELECT_ROW_CAP: usize = 1_000;
const SELECT_TIMEOUT_MS: u64 = 30_000;
const PREVIEW_ROWS: usize = 5;
const PREVIEW_CHARS: usize = 2_000;

/// Execution summary kept in the trace: no wall times, bounded preview.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecSummary {
    pub ok: bool,
    pub row_count: usize,
    pub truncated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<String>,
    pub preview: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorBasis {
    pub initial: ExecSummary,
    pub validated: ExecSummary,
    /// Which deterministic pre-rule decided, or "llm_vote".
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_vote: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub explanation: String,
    pub consistent: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected: Option<SqlCandidate>,
    pub selected: SqlCandidate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector_basis: Option<SelectorBasis>,
}

fn exchange(request: &LlmRequest, response_text: &str) -> PromptExchange {
    PromptExchange {
        agent_tag: request.agent_tag,
        system_prompt: request.system_prompt.clone(),
        user_prompt: request.user_prompt.clone(),
        response: response_text.to_string(),
    }
}

/// Translate the initial SQL into a natural language explanation. Empty
/// model output means validation is skipped for the item.
pub fn back_translate(
    candidate: &SqlCandidate,
    schema: &DbSchema,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> String {
    debug_assert_eq!(candidate.stage, CandidateStage::Initial);
    let user_prompt = format!("{}\nSQL:\n{}\n", render_schema(schema, SchemaView::All), candidate.sql);
    let request = LlmRequest::new(AgentTag::ValidatorTranslate, prompts::VALIDATOR_TRANSLATE, user_prompt);
    match llm.complete(&request) {
        Ok(response) => {
            exchanges.push(exchange(&request, &response.text));
            response.text.trim().to_string()
        }
        Err(e) => {
            warnings.push(format!("back_translate: llm call failed ({e})"));
            String::new()
        }
    }
}

#[derive(Deserialize)]
struct Verdict {
    consistent: bool,
    #[serde(default)]
    corrected_sql: Option<String>,
}

/// Compare the explanation against the question; on an inconsistency, take
/// the model's corrected SQL as a stage=validated candidate. Unparseable
/// verdicts are treated as consistent (fail-open) with a warning.
pub fn check_and_correct(
    question: &str,
    evidence: Option<&str>,
    candidate: &SqlCandidate,
    explanation: &str,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> (bool, Option<SqlCandidate>) {
    let evidence_block = match evidence {
        Some(e) if !e.is_empty() => format!("Evidence: {e}\n"),
        _ => String::new(),
    };
    let user_prompt = format!(
        "Question: {question}\n{evidence_block}SQL:\n{}\nExplanation of the SQL:\n{explanation}\n",
        candidate.sql
    );
    let request = LlmRequest::new(AgentTag::ValidatorVerdict, prompts::VALIDATOR_VERDICT, user_prompt);
    let response = match llm.complete(&request) {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("verdict: llm call failed ({e}); keeping initial"));
            return (true, None);
        }
    };
    exchanges.push(exchange(&request, &response.text));

    let verdict = extract_block(&response.text, BlockKind::Json)
        .ok()
        .and_then(|json| serde_json::from_str::<Verdict>(&json).ok());
    match verdict {
        Some(Verdict { consistent: true, .. }) => (true, None),
        Some(Verdict { consistent: false, corrected_sql }) => match corrected_sql {
            Some(sql) if !sql.trim().is_empty() => {
                let corrected =
                    SqlCandidate::new(sql.trim(), CandidateStage::Validated, AgentTag::ValidatorVerdict);
                (false, Some(corrected))
            }
            _ => {
                warnings.push("verdict: inconsistent but no corrected SQL; keeping initial".to_string());
                (false, None)
            }
        },
        None => {
            warnings.push("verdict: unparseable; failing open to consistent".to_string());
            (true, None)
        }
    }
}

fn summarize(result: &crate::db::ExecResult) -> ExecSummary {
    ExecSummary {
        ok: result.ok,
        row_count: result.rows.len(),
        truncated: result.truncated,
        err: result.err.clone(),
        preview: result.preview(PREVIEW_ROWS, PREVIEW_CHARS),
    }
}

/// Choose between the initial and corrected candidate. Pre-rules first; the
/// model only votes on genuinely divergent executions. Without an execution
/// harness the corrected candidate wins by default.
pub fn binary_select(
    question: &str,
    initial: &SqlCandidate,
    validated: &SqlCandidate,
    db: Option<&SqliteDb>,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> (SqlCandidate, Option<SelectorBasis>) {
    let Some(db) = db else {
        warnings.push("binary_select: no execution harness; picking validated".to_string());
        return (validated.clone(), None);
    };
    let timeout = Duration::from_millis(SELECT_TIMEOUT_MS);
    let initial_res = db.execute_bounded(&initial.sql, timeout, SELECT_ROW_CAP);
    let validated_res = db.execute_bounded(&validated.sql, timeout, SELECT_ROW_CAP);
    let mut basis = SelectorBasis {
        initial: summarize(&initial_res),
        validated: summarize(&validated_res),
        rule: String::new(),
        llm_vote: None,
    };

    let pick = |winner: &SqlCandidate, rule: &str, basis: &mut SelectorBasis| {
        basis.rule = rule.to_string();
        winner.clone()
    };

    match (initial_res.ok, validated_res.ok) {
        (true, false) => return (pick(initial, "only_initial_executes", &mut basis), Some(basis)),
        (false, true) => return (pick(validated, "only_validated_executes", &mut basis), Some(basis)),
        (false, false) => return (pick(initial, "both_fail", &mut basis), Some(basis)),
        (true, true) => {}
    }
    if rows_equivalent(&initial_res.rows, &validated_res.rows, false, ExSemantics::Multiset) {
        return (pick(validated, "identical_results", &mut basis), Some(basis));
    }

    let user_prompt = format!(
        "Question: {question}\n\nQuery A:\n{}\nResult A (first {PREVIEW_ROWS} rows):\n{}\nQuery B:\n{}\nResult B (first {PREVIEW_ROWS} rows):\n{}\n",
        initial.sql,
        initial_res.preview(PREVIEW_ROWS, PREVIEW_CHARS),
        validated.sql,
        validated_res.preview(PREVIEW_ROWS, PREVIEW_CHARS),
    );
    let request = LlmRequest::new(AgentTag::ValidatorSelect, prompts::VALIDATOR_SELECT, user_prompt);
    let vote = match llm.complete(&request) {
        Ok(response) => {
            exchanges.push(exchange(&request, &response.text));
            parse_vote(&response.text)
        }
        Err(e) => {
            warnings.push(format!("binary_select: vote call failed ({e}); picking validated"));
            None
        }
    };
    basis.rule = "llm_vote".to_string();
    match vote {
        Some('A') => {
            basis.llm_vote = Some("A".to_string());
            (pick(initial, "llm_vote", &mut basis), Some(basis))
        }
        Some('B') => {
            basis.llm_vote = Some("B".to_string());
            (pick(validated, "llm_vote", &mut basis), Some(basis))
        }
        _ => {
            warnings.push("binary_select: unparseable vote; picking validated".to_string());
            basis.llm_vote = Some("unparseable".to_string());
            (pick(validated, "llm_vote", &mut basis), Some(basis))
        }
    }
}

fn parse_vote(text: &str) -> Option<char> {
    for token in text.split(|c: char| !c.is_ascii_alphanumeric()) {
        match token {
            "A" | "a" => return Some('A'),
            "B" | "b" => return Some('B'),
            "" => continue,
            _ => continue,
        }
    }
    None
}

/// Run the whole validation stage for one item. `None` means the stage was
/// skipped (empty back-translation) and the initial candidate passes
/// through untouched.
pub fn validate(
    question: &str,
    evidence: Option<&str>,
    initial: &SqlCandidate,
    schema: &DbSchema,
    db: Option<&SqliteDb>,
    llm: &dyn LlmGateway,
    exchanges: &mut Vec<PromptExchange>,
    warnings: &mut Vec<String>,
) -> Option<ValidationOutcome> {
    let explanation = back_translate(initial, schema, llm, exchanges, warnings);
    if explanation.is_empty() {
        warnings.push("validator: empty back-translation; skipping validation".to_string());
        return None;
    }
    let (consistent, corrected) =
        check_and_correct(question, evidence, initial, &explanation, llm, exchanges, warnings);
    match (&consistent, corrected) {
        (true, _) => Some(ValidationOutcome {
            explanation,
            consistent: true,
            corrected: None,
            selected: initial.clone(),
            selector_basis: None,
        }),
        (false, Some(corrected)) => {
            let (selected, basis) =
                binary_select(question, initial, &corrected, db, llm, exchanges, warnings);
            Some(ValidationOutcome {
                explanation,
                consistent: false,
                corrected: Some(corrected),
                selected,
                selector_basis: basis,
            })
        }
        (false, None) => Some(ValidationOutcome {
            explanation,
            consistent: false,
            corrected: None,
            selected: initial.clone(),
            selector_basis: None,
        }),
    }
}
