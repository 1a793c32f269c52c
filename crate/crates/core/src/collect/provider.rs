use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dataset::{LlmCondition, PromptVariant};
use crate::stats::rng::{stable_hash, substream_seed};

/// Everything a provider may key its answer on. Live providers only read
/// `prompt`, `model` and `temperature`.
#[derive(Debug, Clone, Copy)]
pub struct ProviderRequest<'a> {
    pub claim_id: &'a str,
    pub condition: LlmCondition,
    pub variant: PromptVariant,
    pub slot: usize,
    pub attempt: u32,
    pub prompt: &'a str,
    pub model: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderReply {
    pub text: String,
    /// Provider-reported model id, response id and similar.
    #[serde(default)]
    pub metadata: std::collections::BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying after a pause (timeouts, 5xx, dropped connections).
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("rate limited by provider")]
    RateLimited { retry_after: Option<Duration> },
    /// Not worth retrying (bad credentials, malformed request, no network access).
    #[error("provider unreachable: {0}")]
    Unreachable(String),
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ProviderRequest<'_>) -> Result<ProviderReply, ProviderError>;
    /// Requests that reached the provider (cache hits excluded).
    fn calls(&self) -> usize;
}

/// Refuses every request; for replaying a complete cache.
#[derive(Debug, Default)]
pub struct DisabledProvider {
    calls: AtomicUsize,
}

impl Provider for DisabledProvider {
    fn name(&self) -> &str {
        "disabled"
    }

    fn complete(&self, _: &ProviderRequest<'_>) -> Result<ProviderReply, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Err(ProviderError::Unreachable("provider disabled; cache miss".into()))
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// How the mock answers when no scripted reply matches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockFallback {
    Constant(String),
    /// Pseudo-random rating derived from the seed and the request coordinates.
    Seeded(u64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockScriptFile {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    default: Option<String>,
    #[serde(default)]
    responses: Vec<MockEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockEntry {
    claim_id: String,
    condition: LlmCondition,
    #[serde(default)]
    variant: Option<PromptVariant>,
    replies: Vec<String>,
}

/// Deterministic provider answering from a script keyed by (claim, condition).
///
/// A scripted list of replies is indexed by `slot + attempt`, wrapping around, so a
/// list `["<refusal>", "3"]` makes the first slot refuse once and then answer 3.
/// Entries with a variant take precedence over variant-less ones.
#[derive(Debug)]
pub struct MockProvider {
    script: HashMap<(String, LlmCondition, Option<PromptVariant>), Vec<String>>,
    fallback: MockFallback,
    calls: AtomicUsize,
}

#[derive(Debug, thiserror::Error)]
pub enum MockScriptError {
    #[error("cannot read mock script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid mock script: {0}")]
    Parse(String),
}

impl MockProvider {
    pub fn new(fallback: MockFallback) -> Self {
        Self {
            script: HashMap::new(),
            fallback,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn constant(reply: &str) -> Self {
        Self::new(MockFallback::Constant(reply.to_string()))
    }

    pub fn with_script(
        mut self,
        claim_id: &str,
        condition: LlmCondition,
        variant: Option<PromptVariant>,
        replies: Vec<String>,
    ) -> Self {
        assert!(!replies.is_empty(), "scripted reply list must not be empty");
        self.script
            .insert((claim_id.to_string(), condition, variant), replies);
        self
    }

    /// Parses a TOML script; `fallback_seed` applies when the file names neither
    /// `seed` nor `default`.
    pub fn from_toml(text: &str, fallback_seed: u64) -> Result<Self, MockScriptError> {
        let f: MockScriptFile =
            toml::from_str(text).map_err(|e| MockScriptError::Parse(e.to_string()))?;
        let fallback = match (f.default, f.seed) {
            (Some(d), _) => MockFallback::Constant(d),
            (None, Some(s)) => MockFallback::Seeded(s),
            (None, None) => MockFallback::Seeded(fallback_seed),
        };
        let mut m = MockProvider::new(fallback);
        for e in f.responses {
            if e.replies.is_empty() {
                return Err(MockScriptError::Parse(format!(
                    "empty reply list for {} {}",
                    e.claim_id, e.condition
                )));
            }
            m = m.with_script(&e.claim_id, e.condition, e.variant, e.replies);
        }
        Ok(m)
    }

    pub fn from_path(path: &Path, fallback_seed: u64) -> Result<Self, MockScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| MockScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, fallback_seed)
    }

    fn reply_for(&self, r: &ProviderRequest<'_>) -> String {
        let scripted = self
            .script
            .get(&(r.claim_id.to_string(), r.condition, Some(r.variant)))
            .or_else(|| self.script.get(&(r.claim_id.to_string(), r.condition, None)));
        if let Some(list) = scripted {
            return list[(r.slot + r.attempt as usize) % list.len()].clone();
        }
        match &self.fallback {
            MockFallback::Constant(s) => s.clone(),
            MockFallback::Seeded(seed) => {
                let h = substream_seed(
                    *seed ^ stable_hash(r.claim_id),
                    stable_hash(r.condition.as_str()) ^ r.variant.number() as u64,
                    r.slot as u64,
                    r.attempt as u64,
                );
                (1 + h % 6).to_string()
            }
        }
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ProviderRequest<'_>) -> Result<ProviderReply, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(ProviderReply {
            text: self.reply_for(request),
            metadata: Default::default(),
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

#[cfg(feature = "http")]
pub use http::HttpProvider;

#[cfg(feature = "http")]
mod http {
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::{Provider, ProviderError, ProviderReply, ProviderRequest};

    /// Chat-completion endpoint speaking the common `messages`/`choices` JSON shape.
    pub struct HttpProvider {
        agent: ureq::Agent,
        endpoint: String,
        api_key: Option<String>,
        calls: AtomicUsize,
    }

    impl HttpProvider {
        pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into();
            Self {
                agent,
                endpoint: endpoint.to_string(),
                api_key,
                calls: AtomicUsize::new(0),
            }
        }
    }

    pub(crate) fn request_body(r: &ProviderRequest<'_>) -> Value {
        json!({
            "model": r.model,
            "temperature": r.temperature,
            "messages": [{ "role": "user", "content": r.prompt }],
        })
    }

    pub(crate) fn parse_body(body: &Value) -> Result<ProviderReply, ProviderError> {
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Transient(format!("unexpected response shape: {body}")))?;
        let mut metadata = BTreeMap::new();
        for key in ["id", "model", "system_fingerprint"] {
            if let Some(v) = body.get(key).and_then(Value::as_str) {
                metadata.insert(key.to_string(), v.to_string());
            }
        }
        if let Some(v) = body.pointer("/choices/0/finish_reason").and_then(Value::as_str) {
            metadata.insert("finish_reason".into(), v.to_string());
        }
        Ok(ProviderReply {
            text: text.to_string(),
            metadata,
        })
    }

    impl Provider for HttpProvider {
        fn name(&self) -> &str {
            "http"
        }

        fn complete(&self, r: &ProviderRequest<'_>) -> Result<ProviderReply, ProviderError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            let mut req = self.agent.post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = match req.send_json(request_body(r)) {
                Ok(resp) => resp,
                Err(ureq::Error::Timeout(_)) => return Err(ProviderError::Transient("timeout".into())),
                Err(ureq::Error::Io(e)) => return Err(ProviderError::Transient(e.to_string())),
                Err(e) => return Err(ProviderError::Unreachable(e.to_string())),
            };
            let status = resp.status().as_u16();
            if status == 429 {
                let retry_after = resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<u64>().ok())
                    .map(Duration::from_secs);
                return Err(ProviderError::RateLimited { retry_after });
            }
            if status >= 500 {
                return Err(ProviderError::Transient(format!("HTTP {status}")));
            }
            if status >= 400 {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(ProviderError::Unreachable(format!("HTTP {status}: {body}")));
            }
            let body: Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| ProviderError::Transient(e.to_string()))?;
            parse_body(&body)
        }

        fn calls(&self) -> usize {
            self.calls.load(Ordering::Relaxed)
        }
    }

}
