//! OpenAI-compatible chat-completions adapter.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::adapter::{AdapterError, AdapterRequest, ModelAdapter};
use super::ConfigError;

pub const DEFAULT_HTTP_TIMEOUT_MS: u64 = 60_000;
const DEFAULT_TRANSPORT_RETRIES: u32 = 2;

/// Settings read from a model's `settings` object.
///
/// `url` is the full chat-completions endpoint. `model` defaults to the
/// model id. The API key, if any, is read from the environment variable
/// named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HttpChatSettings {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub transport_retries: u32,
}

fn default_retries() -> u32 {
    DEFAULT_TRANSPORT_RETRIES
}

#[derive(Debug)]
pub struct HttpChatAdapter {
    client: reqwest::blocking::Client,
    url: String,
    model_name: String,
    api_key: Option<String>,
    temperature: f64,
    transport_retries: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatAdapter {
    pub fn from_settings(
        model_id: &str,
        settings: &serde_json::Map<String, serde_json::Value>,
        timeout: Duration,
    ) -> Result<Self, ConfigError> {
        let bad = |message: String| ConfigError::Adapter { model: model_id.to_string(), message };
        let parsed: HttpChatSettings =
            serde_json::from_value(serde_json::Value::Object(settings.clone())).map_err(|e| bad(e.to_string()))?;
        let api_key = match &parsed.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| bad(format!("environment variable {var} is not set")))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| bad(e.to_string()))?;
        Ok(HttpChatAdapter {
            client,
            url: parsed.url,
            model_name: parsed.model.unwrap_or_else(|| model_id.to_string()),
            api_key,
            temperature: parsed.temperature,
            transport_retries: parsed.transport_retries,
        })
    }

    fn send_once(&self, prompt: &str) -> Result<String, (bool, String)> {
        let body = json!({
            "model": self.model_name,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((retryable, format!("HTTP {status}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (false, "response has no message content".to_string()))
    }
}

impl ModelAdapter for HttpChatAdapter {
    fn complete(&self, request: &AdapterRequest<'_>) -> Result<String, AdapterError> {
        let mut last = String::new();
        for attempt in 0..=self.transport_retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(250 << attempt.min(6)));
            }
            match self.send_once(request.prompt) {
                Ok(text) => return Ok(text),
                Err((retryable, message)) => {
                    tracing::warn!(model = request.model, item = request.item, %message, "chat request failed");
                    last = message;
                    if !retryable {
                        break;
                    }
                }
            }
        }
        Err(AdapterError::Transport { model: request.model.to_string(), message: last })
    }
}
