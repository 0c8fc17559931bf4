//! Transcript cache: append-only JSON-lines, human-inspectable so fixture
//! transcripts can be authored by hand. In strict-replay mode (no inner
//! backend) a miss is an error, which is what makes replayed runs
//! byte-deterministic with zero network.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendKind, LlmGateway, LlmRequest, LlmResponse};
use crate::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key_hash: String,
    model: String,
    request: LlmRequest,
    response: LlmResponse,
}

pub struct CacheBackend {
    path: PathBuf,
    model: String,
    entries: Mutex<HashMap<String, LlmResponse>>,
    file: Mutex<File>,
    inner: Option<Box<dyn LlmGateway>>,
}

impl CacheBackend {
    /// Open (or create) a cache file. With `inner = None` the cache is in
    /// strict-replay mode and misses fail; otherwise misses delegate to the
    /// inner backend and the exchange is appended.
    pub fn open(path: &Path, model: &str, inner: Option<Box<dyn LlmGateway>>) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| {
                    Error::invalid(format!("bad cache line {} in {}: {}", lineno + 1, path.display(), e))
                })?;
                entries.insert(parsed.key_hash, parsed.response);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(CacheBackend {
            path: path.to_path_buf(),
            model: model.to_string(),
            entries: Mutex::new(entries),
            file: Mutex::new(file),
            inner,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Content hash of (agent_tag, system prompt, user prompt, model name).
    pub fn key_hash(model: &str, request: &LlmRequest) -> String {
        let mut hasher = Sha256::new();
        let key = serde_json::json!([
            request.agent_tag.as_str(),
            request.system_prompt,
            request.user_prompt,
            model,
        ]);
        hasher.update(key.to_string().as_bytes());
        format!("{:x}", hasher.finalize())
    }

    fn store(&self, key: String, request: &LlmRequest, response: &LlmResponse) -> Result<()> {
        let line = CacheLine {
            key_hash: key.clone(),
            model: self.model.clone(),
            request: request.clone(),
            response: response.clone(),
        };
        let mut file = self.file.lock().unwrap();
        let json = serde_json::to_string(&line).map_err(|e| Error::invalid(format!("cache serialize: {e}")))?;
        writeln!(file, "{json}").map_err(|e| Error::io(&self.path, e))?;
        self.entries.lock().unwrap().insert(key, response.clone());
        Ok(())
    }
}

impl LlmGateway for CacheBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let key = Self::key_hash(&self.model, request);
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            let mut resp = hit.clone();
            resp.backend = BackendKind::Cache;
            return Ok(resp);
        }
        match &self.inner {
            Some(inner) => {
                // Responses are branded as cache-owned on the way out so the
                // populating run and its strict replay produce identical
                // artifacts.
                let mut resp = inner.complete(request)?;
                resp.backend = BackendKind::Cache;
                self.store(key, request, &resp)?;
                Ok(resp)
            }
            None => Err(Error::ReplayMiss(key)),
        }
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Cache
    }

    fn deterministic(&self) -> bool {
        // Always: strict replay is deterministic by construction, and a
        // write-through run normalizes its artifacts (zeroed wall-clock
        // fields) so the later replay is byte-comparable against them.
        true
    }
}
