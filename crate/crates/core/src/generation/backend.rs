//! Chat-completion backends: a fixture-driven mock and an HTTP client.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{from_artifact_str, to_artifact_string};

/// Persona key used for completions without a perspective prompt.
pub const NORMAL_PERSONA: &str = "normal";
/// Persona key used for the aggregation call.
pub const AGGREGATOR_PERSONA: &str = "aggregator";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no fixture response for persona `{persona}`, question `{question}`")]
    FixtureMiss { persona: String, question: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: usize,
        body: String,
    },
    #[error("malformed completion response: {0}")]
    Malformed(String),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

/// One chat-completion call.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    /// Perspective name, [`NORMAL_PERSONA`] or [`AGGREGATOR_PERSONA`].
    pub persona: &'a str,
    pub question_id: &'a str,
    pub system_prompt: &'a str,
    pub user_prompt: &'a str,
    /// Candidate texts being fused; empty except for aggregation calls.
    pub samples: &'a [String],
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError>;

    /// Upper bound on requests worth issuing concurrently.
    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Responses keyed by persona, then question id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixture {
    pub responses: BTreeMap<String, BTreeMap<String, String>>,
}

impl MockFixture {
    pub fn insert(&mut self, persona: &str, question: &str, text: &str) {
        self.responses
            .entry(persona.to_string())
            .or_default()
            .insert(question.to_string(), text.to_string());
    }

    pub fn get(&self, persona: &str, question: &str) -> Option<&str> {
        self.responses
            .get(persona)?
            .get(question)
            .map(String::as_str)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        from_artifact_str("mock_fixture", &text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_artifact(&self) -> String {
        to_artifact_string("mock_fixture", self).expect("fixture serializes")
    }
}

/// Replays fixture texts. Aggregation calls without a fixture entry return
/// the most frequent sample (earliest wins ties), which echoes a single
/// sample unchanged.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    fixture: MockFixture,
}

impl MockBackend {
    pub fn new(fixture: MockFixture) -> Self {
        Self { fixture }
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        if let Some(text) = self.fixture.get(request.persona, request.question_id) {
            return Ok(text.to_string());
        }
        if request.persona == AGGREGATOR_PERSONA && !request.samples.is_empty() {
            return Ok(majority(request.samples).to_string());
        }
        Err(BackendError::FixtureMiss {
            persona: request.persona.to_string(),
            question: request.question_id.to_string(),
        })
    }

    fn max_concurrency(&self) -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

fn majority(samples: &[String]) -> &str {
    let mut best = &samples[0];
    let mut best_count = 0;
    for s in samples {
        let count = samples.iter().filter(|t| *t == s).count();
        if count > best_count {
            best = s;
            best_count = count;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Mock fixture file.
    pub fixture: Option<PathBuf>,
    /// Chat-completions URL, e.g. `https://host/v1/chat/completions`.
    pub endpoint: Option<String>,
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_concurrent: usize,
    pub backoff_base_secs: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            fixture: None,
            endpoint: None,
            model: None,
            api_key_env: None,
            temperature: 0.7,
            timeout_secs: 60.0,
            max_retries: 3,
            max_concurrent: 4,
            backoff_base_secs: 0.5,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        match self.kind {
            BackendKind::Mock if self.fixture.is_none() => Err(BackendError::Config(
                "mock backend requires `fixture`".into(),
            )),
            BackendKind::Http if self.endpoint.is_none() || self.model.is_none() => Err(
                BackendError::Config("http backend requires `endpoint` and `model`".into()),
            ),
            BackendKind::Http if self.max_concurrent == 0 => Err(BackendError::Config(
                "max_concurrent must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Builds the backend; relative fixture paths resolve against `base_dir`.
    pub fn build(&self, base_dir: &Path) -> Result<Box<dyn Backend>, BackendError> {
        self.validate()?;
        match self.kind {
            BackendKind::Mock => {
                let path = base_dir.join(self.fixture.as_ref().expect("validated"));
                Ok(Box::new(MockBackend::new(MockFixture::load(&path)?)))
            }
            BackendKind::Http => Ok(Box::new(HttpBackend::new(self)?)),
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    released: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permit lock");
        while *free == 0 {
            free = self.released.wait(free).expect("permit lock");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock") += 1;
        self.0.released.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// OpenAI-style chat-completions client with exponential backoff on
/// transport errors, 429 and 5xx responses.
#[derive(Debug)]
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key_env: Option<String>,
    temperature: f64,
    max_retries: u32,
    backoff_base: Duration,
    max_concurrent: usize,
    permits: Permits,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: cfg.endpoint.clone().unwrap_or_default(),
            model: cfg.model.clone().unwrap_or_default(),
            api_key_env: cfg.api_key_env.clone(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            backoff_base: Duration::from_secs_f64(cfg.backoff_base_secs.max(0.0)),
            max_concurrent: cfg.max_concurrent.max(1),
            permits: Permits::new(cfg.max_concurrent.max(1)),
        })
    }

    /// Request body for one completion. An empty system prompt sends no
    /// system message at all.
    pub fn request_body(&self, request: &CompletionRequest<'_>) -> serde_json::Value {
        let mut messages = Vec::with_capacity(2);
        if !request.system_prompt.is_empty() {
            messages.push(ChatMessage {
                role: "system",
                content: request.system_prompt,
            });
        }
        messages.push(ChatMessage {
            role: "user",
            content: request.user_prompt,
        });
        serde_json::to_value(ChatRequest {
            model: &self.model,
            messages,
            temperature: self.temperature,
        })
        .expect("request serializes")
    }

    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::MissingApiKey(var.clone())),
        }
    }
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fail(BackendError),
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let key = self.api_key()?;
        let body = self.request_body(request);
        let _permit = self.permits.acquire();
        let mut attempt = 0u32;
        loop {
            let attempts = attempt as usize + 1;
            let mut call = self.client.post(&self.endpoint).json(&body);
            if let Some(k) = &key {
                call = call.bearer_auth(k);
            }
            let outcome = match call.send() {
                Err(e) => Attempt::Retry(BackendError::Transport {
                    attempts,
                    message: e.to_string(),
                }),
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().unwrap_or_default();
                    if status.is_success() {
                        match parse_completion(&text) {
                            Ok(content) => Attempt::Done(content),
                            Err(e) => Attempt::Fail(e),
                        }
                    } else {
                        let err = BackendError::Status {
                            status: status.as_u16(),
                            attempts,
                            body: text.chars().take(500).collect(),
                        };
                        if status.as_u16() == 429 || status.is_server_error() {
                            Attempt::Retry(err)
                        } else {
                            Attempt::Fail(err)
                        }
                    }
                }
            };
            match outcome {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.max_retries => return Err(e),
                Attempt::Retry(_) => {
                    std::thread::sleep(self.backoff_base * 2u32.pow(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrent
    }
}

/// Extracts the first choice's message content.
pub fn parse_completion(body: &str) -> Result<String, BackendError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::Malformed("no choices[0].message.content".into()))?;
    if content.trim().is_empty() {
        return Err(BackendError::Malformed("empty completion".into()));
    }
    Ok(content)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(persona: &'a str, q: &'a str, samples: &'a [String]) -> CompletionRequest<'a> {
        CompletionRequest {
            persona,
            question_id: q,
            system_prompt: "sys",
            user_prompt: "user",
            samples,
        }
    }

    #[test]
    fn mock_returns_fixture_text() {
        let mut f = MockFixture::default();
        f.insert("optimist", "Q1", "great outlook");
        let b = MockBackend::new(f);
        assert_eq!(
            b.complete(&req("optimist", "Q1", &[])).unwrap(),
            "great outlook"
        );
        assert!(matches!(
            b.complete(&req("optimist", "Q2", &[])),
            Err(BackendError::FixtureMiss { .. })
        ));
    }

    #[test]
    fn mock_aggregator_takes_majority_and_echoes_single_sample() {
        let b = MockBackend::default();
        let one = vec!["only".to_string()];
        assert_eq!(
            b.complete(&req(AGGREGATOR_PERSONA, "q", &one)).unwrap(),
            "only"
        );
        let three = vec!["a".to_string(), "b".to_string(), "b".to_string()];
        assert_eq!(
            b.complete(&req(AGGREGATOR_PERSONA, "q", &three)).unwrap(),
            "b"
        );
        let tie = vec!["a".to_string(), "b".to_string()];
        assert_eq!(
            b.complete(&req(AGGREGATOR_PERSONA, "q", &tie)).unwrap(),
            "a"
        );
    }

    #[test]
    fn fixture_roundtrips() {
        let mut f = MockFixture::default();
        f.insert("normal", "q1", "fine");
        let back: MockFixture = from_artifact_str("mock_fixture", &f.to_artifact()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::default().validate().is_err());
        let http = BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some("http://x".into()),
            ..BackendConfig::default()
        };
        assert!(http.validate().is_err());
        let http = BackendConfig {
            model: Some("m".into()),
            ..http
        };
        assert!(http.validate().is_ok());
    }

    #[test]
    fn wire_format_omits_empty_system_prompt() {
        let cfg = BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some("http://x".into()),
            model: Some("qwen-turbo-latest".into()),
            temperature: 0.0,
            ..BackendConfig::default()
        };
        let b = HttpBackend::new(&cfg).unwrap();
        let mut r = req("normal", "q", &[]);
        r.system_prompt = "";
        let body = b.request_body(&r);
        assert_eq!(
            body,
            serde_json::json!({
                "model": "qwen-turbo-latest",
                "messages": [{"role": "user", "content": "user"}],
                "temperature": 0.0
            })
        );
        let body = b.request_body(&req("optimist", "q", &[]));
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["role"], "user");
    }

    #[test]
    fn parses_first_choice() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}},{"message":{"content":"no"}}]}"#;
        assert_eq!(parse_completion(body).unwrap(), "hi");
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
        assert!(parse_completion("not json").is_err());
    }

    #[test]
    fn missing_api_key_is_reported() {
        let cfg = BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some("http://127.0.0.1:9".into()),
            model: Some("m".into()),
            api_key_env: Some("MPF_TEST_KEY_THAT_IS_NOT_SET".into()),
            ..BackendConfig::default()
        };
        let b = HttpBackend::new(&cfg).unwrap();
        assert_eq!(
            b.complete(&req("normal", "q", &[])).unwrap_err(),
            BackendError::MissingApiKey("MPF_TEST_KEY_THAT_IS_NOT_SET".into())
        );
    }
}
