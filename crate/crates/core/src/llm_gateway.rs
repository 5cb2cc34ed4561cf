//! Chat-completion gateway over pluggable backends with token and cost
//! accounting.
//!
//! Two backends ship with the tool: an OpenAI-compatible HTTP endpoint and a
//! deterministic replay backend driven by a script of tagged responses. The
//! replay backend is what makes end-to-end runs reproducible: a run with the
//! same script and repo state produces the same transcript, byte for byte.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn wire(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

/// Accounting phase, derived from the step tag: summary generation is
/// metered separately but counts toward the grand total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Summarization,
    UpgradeLoop,
}

/// One completed call: messages in, completion out, plus accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatExchange {
    pub tag: String,
    pub phase: Phase,
    pub messages: Vec<ChatMessage>,
    pub completion: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub backend_id: String,
    pub wall_time_ms: u64,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("replay script exhausted at step '{step}'")]
    ReplayExhausted { step: String },
    #[error("replay tag mismatch: script expects '{expected_tag}', got '{got_tag}'")]
    ReplayMismatch { expected_tag: String, got_tag: String },
    #[error("invalid replay script at line {line}: {reason}")]
    InvalidScript { line: usize, reason: String },
    #[error("api key environment variable '{0}' is not set")]
    MissingApiKey(String),
}

/// ceil(character count / 4); used whenever the backend does not report
/// token usage.
pub fn estimate_tokens(text: &str) -> u64 {
    let chars = text.chars().count() as u64;
    chars.div_ceil(4)
}

pub struct BackendReply {
    pub text: String,
    /// (prompt_tokens, completion_tokens) when the backend reports usage.
    pub usage: Option<(u64, u64)>,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, tag: &str, messages: &[ChatMessage]) -> Result<BackendReply, GatewayError>;
}

// ---------------------------------------------------------------------------
// Replay backend

struct ReplayEntry {
    tag: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    response: String,
}

/// Deterministic stand-in: returns scripted responses keyed by an ordered
/// sequence of step tags. Strictly sequential; fails loudly on exhaustion
/// or tag mismatch.
pub struct ReplayBackend {
    entries: Vec<ReplayEntry>,
    cursor: Mutex<usize>,
}

impl ReplayBackend {
    /// Parses the line-delimited script format:
    /// `tag<TAB>prompt_tokens<TAB>completion_tokens<TAB>base64(response)`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_script(text: &str) -> Result<Self, GatewayError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(GatewayError::InvalidScript {
                    line: lineno,
                    reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let prompt_tokens = fields[1].parse().map_err(|_| GatewayError::InvalidScript {
                line: lineno,
                reason: "prompt token count is not an integer".into(),
            })?;
            let completion_tokens = fields[2].parse().map_err(|_| GatewayError::InvalidScript {
                line: lineno,
                reason: "completion token count is not an integer".into(),
            })?;
            let raw = B64.decode(fields[3]).map_err(|e| GatewayError::InvalidScript {
                line: lineno,
                reason: format!("bad base64 payload: {e}"),
            })?;
            let response = String::from_utf8(raw).map_err(|_| GatewayError::InvalidScript {
                line: lineno,
                reason: "response is not valid UTF-8".into(),
            })?;
            entries.push(ReplayEntry {
                tag: fields[0].to_string(),
                prompt_tokens,
                completion_tokens,
                response,
            });
        }
        Ok(ReplayBackend { entries, cursor: Mutex::new(0) })
    }

    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::BackendUnreachable(format!("replay script {}: {e}", path.display())))?;
        Self::from_script(&text)
    }

    /// Serializes entries back into script lines; used by tests and fixtures.
    pub fn render_script(entries: &[(String, u64, u64, String)]) -> String {
        let mut out = String::new();
        for (tag, p, c, response) in entries {
            out.push_str(&format!("{tag}\t{p}\t{c}\t{}\n", B64.encode(response)));
        }
        out
    }
}

impl Backend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, tag: &str, _messages: &[ChatMessage]) -> Result<BackendReply, GatewayError> {
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let Some(entry) = self.entries.get(*cursor) else {
            return Err(GatewayError::ReplayExhausted { step: tag.to_string() });
        };
        if entry.tag != tag {
            return Err(GatewayError::ReplayMismatch {
                expected_tag: entry.tag.clone(),
                got_tag: tag.to_string(),
            });
        }
        *cursor += 1;
        Ok(BackendReply {
            text: entry.response.clone(),
            usage: Some((entry.prompt_tokens, entry.completion_tokens)),
        })
    }
}

// ---------------------------------------------------------------------------
// HTTP backend (OpenAI-compatible chat completions wire shape)

pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key_env: String,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: api_key_env.into(),
            client: reqwest::blocking::Client::new(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        "http"
    }

    fn complete(&self, _tag: &str, messages: &[ChatMessage]) -> Result<BackendReply, GatewayError> {
        let key = std::env::var(&self.api_key_env)
            .map_err(|_| GatewayError::MissingApiKey(self.api_key_env.clone()))?;
        let body = WireRequest {
            model: &self.model,
            messages: messages
                .iter()
                .map(|m| WireMessage { role: m.role.wire(), content: &m.content })
                .collect(),
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(key)
            .json(&body)
            .send()
            .map_err(|e| GatewayError::BackendUnreachable(e.to_string()))?;
        if !resp.status().is_success() {
            let status = resp.status();
            let text = resp.text().unwrap_or_default();
            return Err(GatewayError::BackendUnreachable(format!("HTTP {status}: {text}")));
        }
        let parsed: WireResponse = resp
            .json()
            .map_err(|e| GatewayError::BackendUnreachable(format!("bad response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| GatewayError::BackendUnreachable("response has no choices".into()))?;
        Ok(BackendReply {
            text,
            usage: parsed.usage.map(|u| (u.prompt_tokens, u.completion_tokens)),
        })
    }
}

// ---------------------------------------------------------------------------
// Meter and gateway

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PriceTable {
    /// USD per prompt token.
    pub prompt: f64,
    /// USD per completion token.
    pub completion: f64,
}

/// Token totals, accumulated atomically per phase.
#[derive(Default)]
pub struct UsageMeter {
    summarization_prompt: AtomicU64,
    summarization_completion: AtomicU64,
    loop_prompt: AtomicU64,
    loop_completion: AtomicU64,
    calls: AtomicU64,
}

impl UsageMeter {
    fn record(&self, phase: Phase, prompt: u64, completion: u64) {
        match phase {
            Phase::Summarization => {
                self.summarization_prompt.fetch_add(prompt, Ordering::Relaxed);
                self.summarization_completion.fetch_add(completion, Ordering::Relaxed);
            }
            Phase::UpgradeLoop => {
                self.loop_prompt.fetch_add(prompt, Ordering::Relaxed);
                self.loop_completion.fetch_add(completion, Ordering::Relaxed);
            }
        }
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self, prices: PriceTable) -> UsageReport {
        let sp = self.summarization_prompt.load(Ordering::Relaxed);
        let sc = self.summarization_completion.load(Ordering::Relaxed);
        let lp = self.loop_prompt.load(Ordering::Relaxed);
        let lc = self.loop_completion.load(Ordering::Relaxed);
        let total_prompt = sp + lp;
        let total_completion = sc + lc;
        UsageReport {
            summarization_prompt_tokens: sp,
            summarization_completion_tokens: sc,
            loop_prompt_tokens: lp,
            loop_completion_tokens: lc,
            total_prompt_tokens: total_prompt,
            total_completion_tokens: total_completion,
            total_tokens: total_prompt + total_completion,
            total_calls: self.calls.load(Ordering::Relaxed),
            cost_usd: total_prompt as f64 * prices.prompt + total_completion as f64 * prices.completion,
        }
    }
}

/// Totals plus the per-phase breakdown; summarization tokens are part of the
/// grand total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct UsageReport {
    pub summarization_prompt_tokens: u64,
    pub summarization_completion_tokens: u64,
    pub loop_prompt_tokens: u64,
    pub loop_completion_tokens: u64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub total_tokens: u64,
    pub total_calls: u64,
    pub cost_usd: f64,
}

impl UsageReport {
    pub fn summarization_tokens(&self) -> u64 {
        self.summarization_prompt_tokens + self.summarization_completion_tokens
    }
    pub fn loop_tokens(&self) -> u64 {
        self.loop_prompt_tokens + self.loop_completion_tokens
    }
}

/// Uniform entry point used by every agent role. Records each exchange in a
/// journal that the orchestrator drains into transcript steps, which keeps
/// meter totals and per-step token sums equal by construction.
pub struct Gateway {
    backend: Box<dyn Backend>,
    meter: UsageMeter,
    journal: Mutex<Vec<ChatExchange>>,
    drain_cursor: Mutex<usize>,
    prices: PriceTable,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, prices: PriceTable) -> Self {
        Gateway {
            backend,
            meter: UsageMeter::default(),
            journal: Mutex::new(Vec::new()),
            drain_cursor: Mutex::new(0),
            prices,
        }
    }

    pub fn replay_from_file(script: &Path, prices: PriceTable) -> Result<Self, GatewayError> {
        Ok(Gateway::new(Box::new(ReplayBackend::from_file(script)?), prices))
    }

    pub fn complete(&self, tag: &str, messages: &[ChatMessage]) -> Result<ChatExchange, GatewayError> {
        let started = Instant::now();
        let reply = self.backend.complete(tag, messages)?;
        let wall_time_ms = started.elapsed().as_millis() as u64;
        let (prompt_tokens, completion_tokens) = reply.usage.unwrap_or_else(|| {
            let prompt: u64 = messages.iter().map(|m| estimate_tokens(&m.content)).sum();
            (prompt, estimate_tokens(&reply.text))
        });
        let phase = phase_of_tag(tag);
        self.meter.record(phase, prompt_tokens, completion_tokens);
        let exchange = ChatExchange {
            tag: tag.to_string(),
            phase,
            messages: messages.to_vec(),
            completion: reply.text,
            prompt_tokens,
            completion_tokens,
            backend_id: self.backend.id().to_string(),
            wall_time_ms,
        };
        self.journal.lock().expect("journal poisoned").push(exchange.clone());
        Ok(exchange)
    }

    pub fn usage_report(&self) -> UsageReport {
        self.meter.snapshot(self.prices)
    }

    /// Exchanges recorded since the previous drain, in call order.
    pub fn drain_exchanges(&self) -> Vec<ChatExchange> {
        let journal = self.journal.lock().expect("journal poisoned");
        let mut cursor = self.drain_cursor.lock().expect("cursor poisoned");
        let out = journal[*cursor..].to_vec();
        *cursor = journal.len();
        out
    }

    /// Full journal, for tests that assert over prompt contents.
    pub fn journal(&self) -> Vec<ChatExchange> {
        self.journal.lock().expect("journal poisoned").clone()
    }
}

fn phase_of_tag(tag: &str) -> Phase {
    if tag.starts_with("summarize") {
        Phase::Summarization
    } else {
        Phase::UpgradeLoop
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script(entries: &[(&str, u64, u64, &str)]) -> String {
        ReplayBackend::render_script(
            &entries
                .iter()
                .map(|(t, p, c, r)| (t.to_string(), *p, *c, r.to_string()))
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn replay_returns_scripted_text_then_exhausts() {
        let backend = ReplayBackend::from_script(&script(&[("control:initial", 10, 5, "hello")])).unwrap();
        let gw = Gateway::new(Box::new(backend), PriceTable::default());
        let ex = gw.complete("control:initial", &[ChatMessage::user("hi")]).unwrap();
        assert_eq!(ex.completion, "hello");
        assert_eq!((ex.prompt_tokens, ex.completion_tokens), (10, 5));
        let err = gw.complete("control:initial", &[ChatMessage::user("hi")]).unwrap_err();
        assert!(matches!(err, GatewayError::ReplayExhausted { .. }));
    }

    #[test]
    fn replay_tag_mismatch_fails_loudly() {
        let backend = ReplayBackend::from_script(&script(&[("code:edit", 1, 1, "x")])).unwrap();
        let gw = Gateway::new(Box::new(backend), PriceTable::default());
        let err = gw.complete("control:initial", &[]).unwrap_err();
        match err {
            GatewayError::ReplayMismatch { expected_tag, got_tag } => {
                assert_eq!(expected_tag, "code:edit");
                assert_eq!(got_tag, "control:initial");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn meter_totals_and_cost() {
        let backend = ReplayBackend::from_script(&script(&[
            ("summarize:a", 1000, 500, "s"),
            ("control:initial", 2000, 100, "i"),
            ("code:edit", 10, 10, "e"),
        ]))
        .unwrap();
        let gw = Gateway::new(Box::new(backend), PriceTable { prompt: 1e-6, completion: 2e-6 });
        gw.complete("summarize:a", &[]).unwrap();
        gw.complete("control:initial", &[]).unwrap();
        gw.complete("code:edit", &[]).unwrap();
        let report = gw.usage_report();
        assert_eq!(report.total_prompt_tokens, 3010);
        assert_eq!(report.total_completion_tokens, 610);
        assert_eq!(report.total_calls, 3);
        assert!((report.cost_usd - 0.00423).abs() < 1e-12);
        // phase split: summarization tokens included in the grand total
        assert_eq!(report.summarization_prompt_tokens, 1000);
        assert_eq!(report.loop_prompt_tokens, 2010);
        assert_eq!(
            report.total_tokens,
            report.summarization_tokens() + report.loop_tokens()
        );
    }

    #[test]
    fn empty_meter_reports_zeroes() {
        let gw = Gateway::new(
            Box::new(ReplayBackend::from_script("").unwrap()),
            PriceTable::default(),
        );
        let report = gw.usage_report();
        assert_eq!(report.total_tokens, 0);
        assert_eq!(report.total_calls, 0);
        assert_eq!(report.cost_usd, 0.0);
    }

    #[test]
    fn estimator_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abc"), 1);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn script_parse_errors_are_located() {
        for bad in ["only\tthree\tfields", "t\tx\t2\tZm9v", "t\t1\t2\t!!!"] {
            let err = ReplayBackend::from_script(bad).map(|_| ()).unwrap_err();
            assert!(matches!(err, GatewayError::InvalidScript { line: 1, .. }));
        }
    }
}
