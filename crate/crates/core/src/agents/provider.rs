//! Completion providers.
//!
//! Every agentic step goes through [`AgentProvider::complete`]. Two
//! implementations ship: [`RemoteProvider`] for OpenAI-compatible chat
//! endpoints and [`MockProvider`], a scripted table replayed
//! deterministically for tests and offline runs.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    StageA,
    StageB,
    Judge,
    Annotate,
    Mutate,
    Reseed,
    Feedback,
    MetaSummarize,
    MetaUpdate,
    MetaRecommend,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::StageA => "stage_a",
            Role::StageB => "stage_b",
            Role::Judge => "judge",
            Role::Annotate => "annotate",
            Role::Mutate => "mutate",
            Role::Reseed => "reseed",
            Role::Feedback => "feedback",
            Role::MetaSummarize => "meta_summarize",
            Role::MetaUpdate => "meta_update",
            Role::MetaRecommend => "meta_recommend",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Request<'a> {
    pub role: Role,
    /// Independent call stream (e.g. one per island). Scripted responses
    /// are counted per channel so concurrent streams stay deterministic.
    pub channel: &'a str,
    pub prompt: &'a str,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider request failed: {0}")]
    Transport(String),
    #[error("provider returned an unusable response: {0}")]
    BadResponse(String),
    #[error("no scripted response for role `{role}` on channel `{channel}`")]
    NoScript { role: String, channel: String },
    #[error("provider configuration error: {0}")]
    Config(String),
    #[error("provider failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<ProviderError> },
}

pub trait AgentProvider: Send + Sync {
    fn complete(&self, req: &Request<'_>) -> Result<String, ProviderError>;

    /// Resumable internal state, if any.
    fn checkpoint(&self) -> Option<serde_json::Value> {
        None
    }

    fn restore(&self, _state: &serde_json::Value) -> Result<(), ProviderError> {
        Ok(())
    }
}

impl<P: AgentProvider + ?Sized> AgentProvider for &P {
    fn complete(&self, req: &Request<'_>) -> Result<String, ProviderError> {
        (**self).complete(req)
    }
}

impl<P: AgentProvider + ?Sized> AgentProvider for Box<P> {
    fn complete(&self, req: &Request<'_>) -> Result<String, ProviderError> {
        (**self).complete(req)
    }

    fn checkpoint(&self) -> Option<serde_json::Value> {
        (**self).checkpoint()
    }

    fn restore(&self, state: &serde_json::Value) -> Result<(), ProviderError> {
        (**self).restore(state)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            backoff: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            backoff: Duration::ZERO,
        }
    }
}

/// Call `provider`, retrying up to the policy's attempt budget with
/// exponential backoff.
pub fn complete_with_retry(
    provider: &dyn AgentProvider,
    req: &Request<'_>,
    policy: RetryPolicy,
) -> Result<String, ProviderError> {
    let attempts = policy.attempts.max(1);
    let mut last = None;
    for attempt in 0..attempts {
        match provider.complete(req) {
            Ok(text) => return Ok(text),
            Err(e) => {
                log::warn!(
                    "{} call on `{}` failed (attempt {}): {e}",
                    req.role,
                    req.channel,
                    attempt + 1
                );
                last = Some(e);
            }
        }
        if attempt + 1 < attempts && !policy.backoff.is_zero() {
            std::thread::sleep(policy.backoff * 2u32.pow(attempt));
        }
    }
    Err(ProviderError::Exhausted {
        attempts,
        last: Box::new(last.expect("at least one attempt")),
    })
}

// ---------------------------------------------------------------------------
// Scripted mock

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exhaustion {
    #[default]
    RepeatLast,
    Cycle,
    Error,
}

/// One scripted rule. A request matches when its role equals `role` and,
/// if set, its channel equals `channel` and its prompt contains every
/// `contains` string. The n-th match on a channel gets `responses[n]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    pub role: Role,
    #[serde(default)]
    pub channel: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
    #[serde(default)]
    pub not_contains: Vec<String>,
    #[serde(default)]
    pub responses: Vec<String>,
    /// Files whose contents are appended to `responses`, relative to the
    /// script file.
    #[serde(default)]
    pub response_files: Vec<PathBuf>,
    #[serde(default)]
    pub on_exhausted: Option<Exhaustion>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub on_exhausted: Exhaustion,
    #[serde(default, rename = "rule")]
    pub rules: Vec<ScriptRule>,
}

impl MockScript {
    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Self, ProviderError> {
        let mut script: MockScript = toml::from_str(text).map_err(|e| ProviderError::Config(e.to_string()))?;
        for rule in &mut script.rules {
            for f in std::mem::take(&mut rule.response_files) {
                let path = match base_dir {
                    Some(d) if f.is_relative() => d.join(&f),
                    _ => f.clone(),
                };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
                rule.responses.push(text);
            }
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }
}

impl ScriptRule {
    pub fn new(role: Role, responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            role,
            channel: None,
            contains: Vec::new(),
            not_contains: Vec::new(),
            responses: responses.into_iter().map(Into::into).collect(),
            response_files: Vec::new(),
            on_exhausted: None,
        }
    }

    pub fn on_channel(mut self, channel: &str) -> Self {
        self.channel = Some(channel.to_string());
        self
    }

    pub fn when_contains(mut self, needle: &str) -> Self {
        self.contains.push(needle.to_string());
        self
    }

    pub fn unless_contains(mut self, needle: &str) -> Self {
        self.not_contains.push(needle.to_string());
        self
    }

    pub fn exhausted(mut self, mode: Exhaustion) -> Self {
        self.on_exhausted = Some(mode);
        self
    }

    fn matches(&self, req: &Request<'_>) -> bool {
        self.role == req.role
            && self.channel.as_deref().is_none_or(|c| c == req.channel)
            && self.contains.iter().all(|n| req.prompt.contains(n.as_str()))
            && !self.not_contains.iter().any(|n| req.prompt.contains(n.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    pub channel: String,
    /// Per-(role, channel) call index.
    pub step: usize,
    pub temperature: f64,
    pub prompt: String,
    pub response: Result<String, String>,
}

#[derive(Debug, Default)]
struct MockState {
    rule_counters: HashMap<(usize, String), usize>,
    call_counters: HashMap<(Role, String), usize>,
    transcript: Vec<TranscriptEntry>,
}

#[derive(Debug, Default)]
pub struct MockProvider {
    script: MockScript,
    state: Mutex<MockState>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            state: Mutex::default(),
        }
    }

    /// Transcript ordered by (channel, role, step), which is independent of
    /// thread scheduling.
    pub fn transcript(&self) -> Vec<TranscriptEntry> {
        let mut t = self.state.lock().unwrap().transcript.clone();
        t.sort_by(|a, b| (&a.channel, a.role, a.step).cmp(&(&b.channel, b.role, b.step)));
        t
    }

    pub fn calls(&self, role: Role) -> usize {
        let st = self.state.lock().unwrap();
        st.call_counters
            .iter()
            .filter(|((r, _), _)| *r == role)
            .map(|(_, n)| n)
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct MockCheckpoint {
    rules: Vec<(usize, String, usize)>,
    calls: Vec<(Role, String, usize)>,
}

impl AgentProvider for MockProvider {
    fn complete(&self, req: &Request<'_>) -> Result<String, ProviderError> {
        let mut st = self.state.lock().unwrap();
        let call_key = (req.role, req.channel.to_string());
        let step = *st.call_counters.get(&call_key).unwrap_or(&0);
        st.call_counters.insert(call_key, step + 1);

        let result = match self.script.rules.iter().position(|r| r.matches(req)) {
            None => Err(ProviderError::NoScript {
                role: req.role.to_string(),
                channel: req.channel.to_string(),
            }),
            Some(idx) => {
                let rule = &self.script.rules[idx];
                let key = (idx, req.channel.to_string());
                let n = *st.rule_counters.get(&key).unwrap_or(&0);
                st.rule_counters.insert(key, n + 1);
                let len = rule.responses.len();
                let mode = rule.on_exhausted.unwrap_or(self.script.on_exhausted);
                match (len, mode) {
                    (0, _) => Err(ProviderError::BadResponse(format!(
                        "rule {idx} for `{}` has no responses",
                        req.role
                    ))),
                    (_, _) if n < len => Ok(rule.responses[n].clone()),
                    (_, Exhaustion::RepeatLast) => Ok(rule.responses[len - 1].clone()),
                    (_, Exhaustion::Cycle) => Ok(rule.responses[n % len].clone()),
                    (_, Exhaustion::Error) => Err(ProviderError::Transport(format!(
                        "script for `{}` exhausted after {len} responses",
                        req.role
                    ))),
                }
            }
        };
        st.transcript.push(TranscriptEntry {
            role: req.role,
            channel: req.channel.to_string(),
            step,
            temperature: req.temperature,
            prompt: req.prompt.to_string(),
            response: result.clone().map_err(|e| e.to_string()),
        });
        result
    }

    fn checkpoint(&self) -> Option<serde_json::Value> {
        let st = self.state.lock().unwrap();
        let mut rules: Vec<_> = st.rule_counters.iter().map(|((i, c), n)| (*i, c.clone(), *n)).collect();
        rules.sort();
        let mut calls: Vec<_> = st.call_counters.iter().map(|((r, c), n)| (*r, c.clone(), *n)).collect();
        calls.sort();
        serde_json::to_value(MockCheckpoint { rules, calls }).ok()
    }

    fn restore(&self, state: &serde_json::Value) -> Result<(), ProviderError> {
        let cp: MockCheckpoint = serde_json::from_value(state.clone())
            .map_err(|e| ProviderError::Config(format!("mock checkpoint: {e}")))?;
        let mut st = self.state.lock().unwrap();
        st.rule_counters = cp.rules.into_iter().map(|(i, c, n)| ((i, c), n)).collect();
        st.call_counters = cp.calls.into_iter().map(|(r, c, n)| ((r, c), n)).collect();
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Remote provider

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://host/v1`.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub system_prompt: Option<String>,
}

fn default_key_env() -> String {
    "COMMFUSE_API_KEY".into()
}

fn default_timeout() -> u64 {
    600
}

pub struct RemoteProvider {
    config: RemoteConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        if config.endpoint.trim().is_empty() || config.model.trim().is_empty() {
            return Err(ProviderError::Config("endpoint and model are required".into()));
        }
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self { config, agent, api_key })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl AgentProvider for RemoteProvider {
    fn complete(&self, req: &Request<'_>) -> Result<String, ProviderError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let system = self
            .config
            .system_prompt
            .clone()
            .unwrap_or_else(|| format!("You are the {} agent of a GPU kernel optimization pipeline.", req.role));
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": req.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": req.prompt},
            ],
        });
        let mut call = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(&body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or_else(|| ProviderError::BadResponse("empty completion".into()))
    }
}
