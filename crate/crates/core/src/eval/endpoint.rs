use std::collections::HashMap;
use std::fmt;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::prompt::{item_block, WINDOW_MARKER};
use crate::digest::{derive_seed, sha256_hex};
use crate::error::{Error, Result};
use crate::qa::{QaFormat, QaItem, MCQ_LABELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Chat-completions URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer credential.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    /// Retries after the first attempt on transient failures.
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: "default".to_string(),
            api_key_env: "CANQA_API_KEY".to_string(),
            temperature: 0.0,
            max_tokens: 512,
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".to_string(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".to_string(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EndpointError {
    /// Worth retrying: timeouts, connection failures, 429 and 5xx.
    Transient(String),
    /// Rejected credential.
    Auth(String),
    /// Any other failure; retrying will not help.
    Fatal(String),
}

impl fmt::Display for EndpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointError::Transient(m) => write!(f, "transient endpoint failure: {m}"),
            EndpointError::Auth(m) => write!(f, "endpoint rejected the credential: {m}"),
            EndpointError::Fatal(m) => write!(f, "endpoint failure: {m}"),
        }
    }
}

/// A chat-completion backend. Implementations must be callable from several
/// threads at once.
pub trait ChatEndpoint: Sync {
    fn complete(&self, messages: &[ChatMessage]) -> std::result::Result<String, EndpointError>;
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// True for loopback hosts, which may be used without a credential.
pub fn is_local_url(url: &str) -> bool {
    let Ok(uri) = url.parse::<ureq::http::Uri>() else { return false };
    matches!(uri.host(), Some("localhost" | "127.0.0.1" | "[::1]" | "::1"))
}

/// Blocking HTTP client for OpenAI-style chat-completion servers.
pub struct HttpEndpoint {
    config: EndpointConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpEndpoint")
            .field("url", &self.config.url)
            .field("model", &self.config.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpEndpoint {
    /// Read the credential from the configured environment variable.
    ///
    /// A non-loopback URL without a credential is a configuration error.
    pub fn from_config(config: &EndpointConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.trim().is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: &EndpointConfig, api_key: Option<String>) -> Result<Self> {
        let local = is_local_url(&config.url);
        if !local && config.url.parse::<ureq::http::Uri>().map(|u| u.host().is_none()).unwrap_or(true) {
            return Err(Error::Config(format!("endpoint url {:?} is not a valid http(s) url", config.url)));
        }
        if api_key.is_none() && !local {
            return Err(Error::Config(format!(
                "no credential for remote endpoint {}: set the {} environment variable",
                config.url, config.api_key_env
            )));
        }
        let mut builder = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false);
        if local {
            builder = builder.proxy(None);
        }
        Ok(Self { config: config.clone(), api_key, agent: builder.build().into() })
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn complete(&self, messages: &[ChatMessage]) -> std::result::Result<String, EndpointError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut request = self.agent.post(&self.config.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| match e {
            ureq::Error::BadUri(m) => EndpointError::Fatal(format!("bad url: {m}")),
            other => EndpointError::Transient(other.to_string()),
        })?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(EndpointError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => return Err(EndpointError::Transient(format!("HTTP {status}"))),
            _ => return Err(EndpointError::Fatal(format!("HTTP {status}"))),
        }
        let parsed: ChatResponse =
            response.body_mut().read_json().map_err(|e| EndpointError::Fatal(format!("unreadable response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| EndpointError::Fatal("response has no choice content".to_string()))
    }
}

/// Deterministic stand-in endpoint for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    /// Always the ground truth.
    Echo,
    /// Always a wrong label.
    Anti,
    /// Uniform over the label set, seeded per prompt.
    Random(u64),
    /// Always this option letter on MCQ; `True` on TF.
    Fixed(char),
}

impl std::str::FromStr for MockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "echo" => Ok(MockMode::Echo),
            "anti" => Ok(MockMode::Anti),
            "random" => Ok(MockMode::Random(0)),
            _ => {
                if let Some(seed) = lower.strip_prefix("random:") {
                    return seed
                        .parse()
                        .map(MockMode::Random)
                        .map_err(|_| Error::Argument(format!("bad mock seed in {s:?}")));
                }
                if let Some(letter) = lower.strip_prefix("fixed:") {
                    let c = letter.trim().to_ascii_uppercase();
                    if let Some(ch) = c.chars().next().filter(|ch| c.len() == 1 && MCQ_LABELS.contains(ch)) {
                        return Ok(MockMode::Fixed(ch));
                    }
                }
                Err(Error::Argument(format!("unknown mock mode {s:?} (echo, anti, random[:seed], fixed:<A-D>)")))
            }
        }
    }
}

/// Answers prompts built from known items according to a [`MockMode`].
/// Prompts for unknown items get an unparseable reply.
#[derive(Debug, Clone)]
pub struct MockEndpoint {
    mode: MockMode,
    answers: HashMap<String, (String, QaFormat)>,
}

fn target_key(user_text: &str) -> Option<String> {
    let start = user_text.rfind(WINDOW_MARKER)?;
    let tail = &user_text[start..];
    let end = tail.rfind("\n\nAnswer: ")?;
    Some(sha256_hex(&tail.as_bytes()[..end]))
}

impl MockEndpoint {
    pub fn new(mode: MockMode, items: &[QaItem]) -> Self {
        let answers =
            items.iter().map(|i| (sha256_hex(item_block(i).as_bytes()), (i.answer.clone(), i.format))).collect();
        Self { mode, answers }
    }

    fn reply(&self, key: &str, answer: &str, format: QaFormat) -> String {
        let labels = format.labels();
        let label = match self.mode {
            MockMode::Echo => answer.to_string(),
            MockMode::Anti => {
                let pos = labels.iter().position(|l| *l == answer).unwrap_or(0);
                labels[(pos + 1) % labels.len()].to_string()
            }
            MockMode::Random(seed) => {
                let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, &["mock", key]));
                labels[rng.random_range(0..labels.len())].to_string()
            }
            MockMode::Fixed(letter) => match format {
                QaFormat::Mcq => letter.to_string(),
                QaFormat::Tf => "True".to_string(),
            },
        };
        format!("Answer: {label}")
    }
}

impl ChatEndpoint for MockEndpoint {
    fn complete(&self, messages: &[ChatMessage]) -> std::result::Result<String, EndpointError> {
        let user = messages.iter().rev().find(|m| m.role == "user").map(|m| m.content.as_str()).unwrap_or("");
        let found = target_key(user).and_then(|k| self.answers.get(&k).map(|a| (k, a)));
        Ok(match found {
            Some((key, (answer, format))) => self.reply(&key, answer, *format),
            None => "I cannot determine that from the window.".to_string(),
        })
    }
}
