//! The live provider: one HTTP round-trip per proposal to a
//! chat-completions-style endpoint.
//!
//! The request carries the system and user texts as two messages; the reply's
//! first choice content is returned verbatim for fenced-block extraction
//! upstream. The API key comes exclusively from the `TDD_GOVERNOR_API_KEY`
//! environment variable — it is never read from config files and never
//! appears in logs, audit records, or error messages.

use super::{Provider, ProviderError, ProviderRequest, ProviderResponse};
use serde::{Deserialize, Serialize};
use std::time::Duration;

/// The only place the engine will look for credentials.
pub const API_KEY_ENV: &str = "TDD_GOVERNOR_API_KEY";

const BODY_EXCERPT_LIMIT: usize = 400;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpProviderConfig {
    /// Endpoint base, e.g. `https://api.example.com/v1`. The provider
    /// appends `/chat/completions`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
}

fn default_timeout() -> u64 {
    60
}

impl HttpProviderConfig {
    /// Config with the serde defaults: temperature 0, 60-second timeout.
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> HttpProviderConfig {
        HttpProviderConfig {
            base_url: base_url.into(),
            model: model.into(),
            temperature: 0.0,
            timeout_seconds: default_timeout(),
        }
    }
}

pub struct HttpProvider {
    cfg: HttpProviderConfig,
    agent: ureq::Agent,
    api_key: String,
}

impl std::fmt::Debug for HttpProvider {
    // Hand-written so the API key can never leak through `{:?}`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("cfg", &self.cfg)
            .field("api_key", &"<redacted>")
            .finish_non_exhaustive()
    }
}

impl HttpProvider {
    /// Construct with the key from the environment. Fails fast when the
    /// variable is unset so a misconfigured run dies before any phase work.
    pub fn new(cfg: HttpProviderConfig) -> Result<HttpProvider, ProviderError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(cfg, key)
    }

    /// Construct with an explicit key (tests; `None` reproduces the unset
    /// environment).
    pub fn with_api_key(
        cfg: HttpProviderConfig,
        api_key: Option<String>,
    ) -> Result<HttpProvider, ProviderError> {
        let api_key = api_key
            .ok_or_else(|| ProviderError::MissingApiKey { var: API_KEY_ENV.to_string() })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_seconds)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(HttpProvider { cfg, agent, api_key })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'))
    }
}

/// Wire shapes for the chat-completions exchange. Only the fields the
/// engine needs are modeled; unknown response fields are ignored.
#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [WireMessage<'a>; 2],
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

impl Provider for HttpProvider {
    fn request(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let body = serde_json::to_string(&WireRequest {
            model: &self.cfg.model,
            temperature: self.cfg.temperature,
            messages: [
                WireMessage { role: "system", content: &req.bundle.system_text },
                WireMessage { role: "user", content: &req.bundle.user_text },
            ],
        })
        .expect("wire request always serializes");

        let result = self
            .agent
            .post(self.endpoint())
            .header("authorization", format!("Bearer {}", self.api_key))
            .header("content-type", "application/json")
            .send(body.as_str());

        let mut response = match result {
            Ok(response) => response,
            Err(ureq::Error::Timeout(_)) => {
                return Err(ProviderError::Timeout { seconds: self.cfg.timeout_seconds })
            }
            Err(e) => return Err(ProviderError::Transport { detail: e.to_string() }),
        };

        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transport { detail: e.to_string() })?;

        if !(200..300).contains(&status) {
            let mut body_excerpt = text;
            if body_excerpt.len() > BODY_EXCERPT_LIMIT {
                let cut = (0..=BODY_EXCERPT_LIMIT)
                    .rev()
                    .find(|i| body_excerpt.is_char_boundary(*i))
                    .unwrap_or(0);
                body_excerpt.truncate(cut);
                body_excerpt.push('…');
            }
            return Err(ProviderError::Http { status, body_excerpt });
        }

        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::MalformedResponse { detail: e.to_string() })?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::MalformedResponse {
                detail: "response carried no choices".to_string(),
            })?;

        Ok(ProviderResponse { text: content, provider_meta: format!("http model={}", self.cfg.model) })
    }

    fn describe(&self) -> String {
        format!("http:{} model={}", self.cfg.base_url, self.cfg.model)
    }
}
