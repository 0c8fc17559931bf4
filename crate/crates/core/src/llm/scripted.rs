//! Deterministic stand-in for the model: replays authored responses.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::sync::Mutex;

use super::{AgentTag, BackendKind, LlmGateway, LlmRequest, LlmResponse};
use crate::{Error, Result};

/// Queues one or more responses per agent tag and pops them in FIFO order.
/// Every call is logged so tests can assert call counts per agent.
#[derive(Default)]
pub struct ScriptedBackend {
    queues: Mutex<BTreeMap<AgentTag, VecDeque<String>>>,
    log: Mutex<Vec<AgentTag>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, tag: AgentTag, response: impl Into<String>) {
        self.queues.lock().unwrap().entry(tag).or_default().push_back(response.into());
    }

    /// Builder-style variant of [`push`](Self::push).
    pub fn with_response(self, tag: AgentTag, response: impl Into<String>) -> Self {
        self.push(tag, response);
        self
    }

    /// Tags of every completed call, in order.
    pub fn calls(&self) -> Vec<AgentTag> {
        self.log.lock().unwrap().clone()
    }

    pub fn call_count(&self, tag: AgentTag) -> usize {
        self.log.lock().unwrap().iter().filter(|t| **t == tag).count()
    }

    /// Responses still queued across all tags.
    pub fn remaining(&self) -> usize {
        self.queues.lock().unwrap().values().map(|q| q.len()).sum()
    }

    /// Load a script from a JSONL file of `{"agent_tag": ..., "text": ...}`
    /// lines, queued in file order.
    pub fn from_jsonl(path: &std::path::Path) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Line {
            agent_tag: AgentTag,
            text: String,
        }
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let backend = ScriptedBackend::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(line)
                .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            backend.push(parsed.agent_tag, parsed.text);
        }
        Ok(backend)
    }
}

impl LlmGateway for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        self.log.lock().unwrap().push(request.agent_tag);
        let mut queues = self.queues.lock().unwrap();
        let text = queues
            .get_mut(&request.agent_tag)
            .and_then(|q| q.pop_front())
            .ok_or_else(|| Error::ScriptExhausted(request.agent_tag.as_str().to_string()))?;
        Ok(LlmResponse { text, usage: None, latency_ms: 0.0, backend: BackendKind::Scripted })
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn deterministic(&self) -> bool {
        true
    }
}
