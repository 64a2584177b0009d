//! Chat-completion adapters for OpenAI-compatible and Anthropic endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, BackendKind, ChatBackend, ChatRequest, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Openai,
    Anthropic,
}

impl Provider {
    fn default_base_url(self) -> &'static str {
        match self {
            Provider::Openai => "https://api.openai.com/v1",
            Provider::Anthropic => "https://api.anthropic.com/v1",
        }
    }

    fn default_key_env(self) -> &'static str {
        match self {
            Provider::Openai => "OPENAI_API_KEY",
            Provider::Anthropic => "ANTHROPIC_API_KEY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub provider: Provider,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    /// Provider model id; defaults to the request's model label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl HttpConfig {
    pub fn new(provider: Provider) -> Self {
        Self {
            provider,
            base_url: None,
            api_key_env: None,
            model: None,
            timeout_secs: default_timeout(),
        }
    }

    pub fn key_env(&self) -> &str {
        self.api_key_env
            .as_deref()
            .unwrap_or_else(|| self.provider.default_key_env())
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// Fails with [`LlmError::AuthMissing`] when the configured key variable
    /// is unset or empty.
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let var = config.key_env().to_string();
        let api_key = std::env::var(&var)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(LlmError::AuthMissing(var))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
        })
    }

    fn url(&self, path: &str) -> String {
        let base = self
            .config
            .base_url
            .as_deref()
            .unwrap_or_else(|| self.config.provider.default_base_url());
        format!("{}/{path}", base.trim_end_matches('/'))
    }

    fn model<'a>(&'a self, request: &'a ChatRequest) -> &'a str {
        self.config.model.as_deref().unwrap_or(&request.model_label)
    }

    fn post(&self, request: &ChatRequest) -> Result<(u16, String), ureq::Error> {
        let (url, body) = match self.config.provider {
            Provider::Openai => (self.url("chat/completions"), openai_body(self.model(request), request)),
            Provider::Anthropic => (self.url("messages"), anthropic_body(self.model(request), request)),
        };
        let builder = self.agent.post(&url);
        let builder = match self.config.provider {
            Provider::Openai => builder.header("Authorization", &format!("Bearer {}", self.api_key)),
            Provider::Anthropic => builder
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", "2023-06-01"),
        };
        let mut resp = builder.send_json(&body)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string()?;
        Ok((status, text))
    }
}

fn openai_body(model: &str, request: &ChatRequest) -> Value {
    let mut messages = Vec::new();
    if let Some(system) = &request.system_text {
        messages.push(json!({"role": "system", "content": system}));
    }
    messages.push(json!({"role": "user", "content": request.user_text}));
    json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    })
}

fn anthropic_body(model: &str, request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
        "messages": [{"role": "user", "content": request.user_text}],
    });
    if let Some(system) = &request.system_text {
        body["system"] = json!(system);
    }
    body
}

/// Pulls the reply text out of a provider's JSON response.
fn extract_text(provider: Provider, body: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(body)
        .map_err(|e| BackendError::Other(format!("unparseable provider response: {e}")))?;
    let text = match provider {
        Provider::Openai => value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string),
        Provider::Anthropic => value["content"].as_array().map(|blocks| {
            blocks
                .iter()
                .filter(|b| b["type"] == "text")
                .filter_map(|b| b["text"].as_str())
                .collect::<String>()
        }),
    };
    text.ok_or_else(|| BackendError::Other("provider response has no text content".into()))
}

/// 408, 409, 429 and 5xx are retried; other non-2xx statuses are final.
fn classify_status(status: u16, body: &str) -> Option<BackendError> {
    if (200..300).contains(&status) {
        return None;
    }
    let message: String = body.chars().take(500).collect();
    if matches!(status, 408 | 409 | 429) || status >= 500 {
        Some(BackendError::Transient(format!("status {status}: {message}")))
    } else {
        Some(BackendError::Fatal { status, message })
    }
}

impl ChatBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn send(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let (status, body) = self
            .post(request)
            .map_err(|e| BackendError::Transient(format!("transport error: {e}")))?;
        if let Some(err) = classify_status(status, &body) {
            return Err(err);
        }
        extract_text(self.config.provider, &body)
    }
}
