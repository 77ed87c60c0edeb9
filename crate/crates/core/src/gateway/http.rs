//! JSON-over-HTTP transport.
//!
//! `POST {base}/chat`  body [`WireChatRequest`]  -> [`WireChatResponse`]
//! `POST {base}/score` body [`WireScoreRequest`] -> [`WireScoreResponse`]
//!
//! Every request carries an `Idempotency-Key` header (the request digest) and,
//! when a key is configured, `Authorization: Bearer <key>`.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{Capability, ChatRequest, ScoreRequest, ScoreResult, Transport, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireChatRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireChatResponse {
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScoreRequest {
    pub model: String,
    pub prompt: String,
    pub continuation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireScoreResponse {
    pub logprob_sum: f64,
    pub token_count: u32,
}

impl WireChatRequest {
    pub fn from_request(model: &str, request: &ChatRequest) -> Self {
        Self {
            model: model.to_string(),
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage { role: m.role.as_str().to_string(), content: m.content.clone() })
                .collect(),
            temperature: request.params.temperature,
            max_tokens: request.params.max_tokens,
        }
    }
}

pub struct HttpTransport {
    client: Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    capability: Capability,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("capability", &self.capability)
            .finish_non_exhaustive()
    }
}

impl HttpTransport {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, capability: Capability, timeout: Duration) -> Result<Self, TransportError> {
        let client = Client::builder().timeout(timeout).build().map_err(|e| TransportError::Fatal(e.to_string()))?;
        Ok(Self {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            capability,
        })
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, path: &str, body: &B, key: &str) -> Result<R, TransportError> {
        let mut req = self
            .client
            .post(format!("{}/{path}", self.base_url))
            .header("Idempotency-Key", key)
            .json(body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            return Err(TransportError::Auth(status.to_string()));
        }
        if status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT || status.is_server_error() {
            return Err(TransportError::Transient(status.to_string()));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TransportError::Fatal(format!("{status}: {body}")));
        }
        resp.json::<R>().map_err(|e| TransportError::Fatal(format!("malformed response: {e}")))
    }
}

impl Transport for HttpTransport {
    fn describe(&self) -> String {
        format!("http-{}({}, {})", self.capability, self.base_url, self.model)
    }

    fn supports(&self, capability: Capability) -> bool {
        self.capability == capability
    }

    fn chat(&self, request: &ChatRequest, key: &str) -> Result<String, TransportError> {
        let body = WireChatRequest::from_request(&self.model, request);
        let resp: WireChatResponse = self.post("chat", &body, key)?;
        Ok(resp.completion)
    }

    fn score(&self, request: &ScoreRequest, key: &str) -> Result<ScoreResult, TransportError> {
        let body = WireScoreRequest {
            model: self.model.clone(),
            prompt: request.prompt.clone(),
            continuation: request.continuation.clone(),
        };
        let resp: WireScoreResponse = self.post("score", &body, key)?;
        Ok(ScoreResult { logprob_sum: resp.logprob_sum, token_count: resp.token_count })
    }
}
