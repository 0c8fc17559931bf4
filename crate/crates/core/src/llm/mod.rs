//! The single abstraction every agent talks to a language model through.
//!
//! Three backends share one trait: a live OpenAI-compatible HTTP client, a
//! JSON-lines transcript cache that can replay runs with zero network, and a
//! scripted stub that makes agent behavior fully deterministic in tests.

mod cache;
mod live;
mod scripted;

pub use cache::CacheBackend;
pub use live::{LiveBackend, LiveConfig};
pub use scripted::ScriptedBackend;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which agent step issued a request. The scripted backend queues responses
/// per tag, the cache keys on it, and ablation tests count calls by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentTag {
    PlannerPrune,
    PlannerDecompose,
    GenSubsql,
    GenBacklink,
    GenMerge,
    ValidatorTranslate,
    ValidatorVerdict,
    ValidatorSelect,
    CheckerTrim,
    CheckerRefine,
}

impl AgentTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentTag::PlannerPrune => "planner_prune",
            AgentTag::PlannerDecompose => "planner_decompose",
            AgentTag::GenSubsql => "gen_subsql",
            AgentTag::GenBacklink => "gen_backlink",
            AgentTag::GenMerge => "gen_merge",
            AgentTag::ValidatorTranslate => "validator_translate",
            AgentTag::ValidatorVerdict => "validator_verdict",
            AgentTag::ValidatorSelect => "validator_select",
            AgentTag::CheckerTrim => "checker_trim",
            AgentTag::CheckerRefine => "checker_refine",
        }
    }

    /// The owning agent, as used by ablation gating.
    pub fn agent(&self) -> &'static str {
        match self {
            AgentTag::PlannerPrune | AgentTag::PlannerDecompose => "planner",
            AgentTag::GenSubsql | AgentTag::GenBacklink | AgentTag::GenMerge => "generator",
            AgentTag::ValidatorTranslate | AgentTag::ValidatorVerdict | AgentTag::ValidatorSelect => "validator",
            AgentTag::CheckerTrim | AgentTag::CheckerRefine => "checker",
        }
    }
}

impl std::fmt::Display for AgentTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub agent_tag: AgentTag,
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
}

impl LlmRequest {
    /// Temperature is 0 unless a caller explicitly overrides it.
    pub fn new(agent_tag: AgentTag, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        LlmRequest {
            agent_tag,
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Live,
    Cache,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    pub latency_ms: f64,
    pub backend: BackendKind,
}

/// A chat-completion backend. Safe for concurrent invocation.
pub trait LlmGateway: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse>;

    fn kind(&self) -> BackendKind;

    /// True when identical inputs are guaranteed identical outputs (scripted
    /// queues and strict cache replay). The pipeline zeroes wall-clock
    /// fields in traces under a deterministic backend so reruns are
    /// byte-identical.
    fn deterministic(&self) -> bool;
}

impl<T: LlmGateway + ?Sized> LlmGateway for &T {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        (**self).complete(request)
    }
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
}

impl<T: LlmGateway + ?Sized> LlmGateway for std::sync::Arc<T> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        (**self).complete(request)
    }
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }
    fn deterministic(&self) -> bool {
        (**self).deterministic()
    }
}

/// What kind of payload to pull out of a model response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Json,
    Sql,
}

/// Extract the payload from a model response that may wrap it in prose or
/// code fences.
///
/// The first well-formed fenced block of the requested kind wins. Without a
/// fence, JSON falls back to parsing the whole text, and SQL falls back to
/// the text from the first SELECT/WITH keyword to the end. Anything else is
/// an extraction error; the caller decides the fallback.
pub fn extract_block(text: &str, kind: BlockKind) -> Result<String> {
    for (info, body) in fenced_blocks(text) {
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        match kind {
            BlockKind::Json => {
                let tagged = info.eq_ignore_ascii_case("json") || info.is_empty();
                if tagged && serde_json::from_str::<serde_json::Value>(body).is_ok() {
                    return Ok(body.to_string());
                }
            }
            BlockKind::Sql => {
                if info.eq_ignore_ascii_case("sql") {
                    return Ok(body.to_string());
                }
                if info.is_empty() && starts_with_query_keyword(body) {
                    return Ok(body.to_string());
                }
            }
        }
    }
    match kind {
        BlockKind::Json => {
            let trimmed = text.trim();
            if !trimmed.is_empty() && serde_json::from_str::<serde_json::Value>(trimmed).is_ok() {
                Ok(trimmed.to_string())
            } else {
                Err(Error::Extraction("no JSON payload found".into()))
            }
        }
        BlockKind::Sql => match first_query_keyword(text) {
            Some(pos) => Ok(text[pos..].trim().to_string()),
            None => Err(Error::Extraction("no SQL payload found".into())),
        },
    }
}

/// All ``` fenced blocks as (info string, body), in order of appearance.
fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let info_end = after.find('\n').unwrap_or(after.len());
        let info = after[..info_end].trim().to_string();
        let body_start = (info_end + 1).min(after.len());
        let body_zone = &after[body_start..];
        match body_zone.find("```") {
            Some(end) => {
                out.push((info, body_zone[..end].to_string()));
                rest = &body_zone[end + 3..];
            }
            None => break,
        }
    }
    out
}

fn starts_with_query_keyword(text: &str) -> bool {
    let upper = text.trim_start().to_ascii_uppercase();
    upper.starts_with("SELECT") || upper.starts_with("WITH")
}

/// Byte offset of the first SELECT or WITH keyword at a word boundary.
fn first_query_keyword(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let upper = text.to_ascii_uppercase();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    for kw in ["SELECT", "WITH"] {
        let mut from = 0;
        while let Some(rel) = upper[from..].find(kw) {
            let pos = from + rel;
            let before_ok = pos == 0 || !is_word(bytes[pos - 1]);
            let after = pos + kw.len();
            let after_ok = after >= bytes.len() || !is_word(bytes[after]);
            if before_ok && after_ok {
                // Prefer the earliest keyword of either kind.
                return Some(match first_query_keyword_other(text, kw, pos) {
                    Some(other) if other < pos => other,
                    _ => pos,
                });
            }
            from = pos + 1;
        }
    }
    None
}

fn first_query_keyword_other(text: &str, found_kw: &str, found_pos: usize) -> Option<usize> {
    let other = if found_kw == "SELECT" { "WITH" } else { "SELECT" };
    let bytes = text.as_bytes();
    let upper = text.to_ascii_uppercase();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut from = 0;
    while let Some(rel) = upper[from..].find(other) {
        let pos = from + rel;
        if pos >= found_pos {
            return None;
        }
        let before_ok = pos == 0 || !is_word(bytes[pos - 1]);
        let after = pos + other.len();
        let after_ok = after >= bytes.len() || !is_word(bytes[after]);
        if before_ok && after_ok {
            return Some(pos);
        }
        from = pos + 1;
    }
    None
}
