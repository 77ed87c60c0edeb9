use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Capability, DefaultPolicy, Gateway, GatewayError, HttpTransport, MockTable, MockTransport, RetryPolicy, Transport};

pub const ENV_BASE_URL: &str = "LEXLAB_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "LEXLAB_LLM_API_KEY";
pub const ENV_MODEL: &str = "LEXLAB_LLM_MODEL";
pub const ENV_SCORE_BASE_URL: &str = "LEXLAB_SCORE_BASE_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackendKind {
    HttpChat,
    HttpScore,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockConfig {
    /// JSONL table; see [`MockTable::from_jsonl`].
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default = "default_policy")]
    pub default_policy: DefaultPolicy,
}

fn default_policy() -> DefaultPolicy {
    DefaultPolicy::Error
}

fn default_limit() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

/// Backend description as stored in a config file. Secrets are never stored
/// here: `auth_env` names the environment variable holding the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_limit")]
    pub concurrency_limit: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub mock: Option<MockConfig>,
}

impl BackendConfig {
    pub fn mock(table: Option<PathBuf>, default_policy: DefaultPolicy) -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: "mock".into(),
            auth_env: None,
            retry: RetryPolicy::no_backoff(1),
            concurrency_limit: default_limit(),
            timeout_secs: default_timeout(),
            mock: Some(MockConfig { table, default_policy }),
        }
    }

    /// Chat or scoring backend from `LEXLAB_LLM_*` variables.
    pub fn from_env(kind: BackendKind) -> Result<Self, GatewayError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let endpoint = match kind {
            BackendKind::HttpScore => var(ENV_SCORE_BASE_URL).or_else(|| var(ENV_BASE_URL)),
            BackendKind::HttpChat => var(ENV_BASE_URL),
            BackendKind::Mock => return Ok(Self::mock(None, DefaultPolicy::Echo)),
        };
        let endpoint = endpoint.ok_or_else(|| GatewayError::Config(format!("{ENV_BASE_URL} is not set")))?;
        Ok(Self {
            kind,
            endpoint: Some(endpoint),
            model_name: var(ENV_MODEL).unwrap_or_default(),
            auth_env: Some(ENV_API_KEY.to_string()),
            retry: RetryPolicy::default(),
            concurrency_limit: default_limit(),
            timeout_secs: default_timeout(),
            mock: None,
        })
    }

    pub fn from_json(s: &str) -> Result<Self, GatewayError> {
        serde_json::from_str(s).map_err(|e| GatewayError::Config(e.to_string()))
    }

    pub fn connect(&self) -> Result<Gateway, GatewayError> {
        if self.concurrency_limit == 0 {
            return Err(GatewayError::Config("concurrency_limit must be positive".into()));
        }
        let transport: Arc<dyn Transport> = match self.kind {
            BackendKind::Mock => {
                let mock = self.mock.clone().unwrap_or(MockConfig { table: None, default_policy: DefaultPolicy::Error });
                let table = match &mock.table {
                    Some(path) => {
                        let f = std::fs::File::open(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
                        MockTable::from_jsonl(std::io::BufReader::new(f)).map_err(GatewayError::Config)?
                    }
                    None => MockTable::new(),
                };
                Arc::new(MockTransport::new(table, mock.default_policy))
            }
            BackendKind::HttpChat | BackendKind::HttpScore => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| GatewayError::Config("HTTP backends need an endpoint".into()))?;
                let api_key = match &self.auth_env {
                    Some(name) => Some(std::env::var(name).map_err(|_| GatewayError::Config(format!("environment variable {name} is not set")))?),
                    None => None,
                };
                let capability = if self.kind == BackendKind::HttpChat { Capability::Chat } else { Capability::Score };
                Arc::new(
                    HttpTransport::new(&endpoint, &self.model_name, api_key, capability, Duration::from_secs(self.timeout_secs))
                        .map_err(|e| GatewayError::Config(e.to_string()))?,
                )
            }
        };
        Ok(Gateway::new(transport, self.retry, self.concurrency_limit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_needs_no_endpoint() {
        let cfg = BackendConfig::from_json(r#"{"kind": "MOCK", "mock": {"default_policy": {"policy": "echo"}}}"#).unwrap();
        let gw = cfg.connect().unwrap();
        assert!(gw.supports(Capability::Chat) && gw.supports(Capability::Score));
    }

    #[test]
    fn http_needs_endpoint() {
        let cfg = BackendConfig::from_json(r#"{"kind": "HTTP_CHAT", "model_name": "m"}"#).unwrap();
        assert!(matches!(cfg.connect(), Err(GatewayError::Config(_))));
    }

    #[test]
    fn chat_only_backend_refuses_scoring() {
        let cfg = BackendConfig::from_json(r#"{"kind": "HTTP_CHAT", "endpoint": "http://127.0.0.1:9", "model_name": "m"}"#).unwrap();
        let gw = cfg.connect().unwrap();
        assert!(matches!(
            gw.score_continuation("p", "c"),
            Err(GatewayError::CapabilityError { capability: Capability::Score, .. })
        ));
    }
}
