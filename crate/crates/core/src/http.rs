//! Blocking JSON-over-HTTP client shared by the external scorer, the embedding
//! endpoint and the generation endpoint.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("{url} answered with status {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("cannot decode response from {url}: {message}")]
    Decode { url: String, message: String },
}

impl HttpError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, HttpError::Transport { message, .. } if message.contains("timeout") || message.contains("timed out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default)]
    pub auth_header: Option<String>,
    #[serde(default)]
    pub auth_value: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub retries: u32,
}

fn default_timeout_secs() -> f64 {
    30.0
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            auth_header: None,
            auth_value: None,
            timeout_secs: default_timeout_secs(),
            retries: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl JsonEndpoint {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        JsonEndpoint { config, agent }
    }

    pub fn url(&self) -> &str {
        &self.config.url
    }

    /// POSTs `body` and decodes the JSON answer. Transport failures and 5xx answers
    /// are retried up to the configured count; 4xx answers fail immediately.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        body: &Req,
        extra_headers: &[(&str, &str)],
    ) -> Result<Resp, HttpError> {
        let url = &self.config.url;
        let attempts = self.config.retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            let mut req = self.agent.post(url);
            if let (Some(h), Some(v)) = (&self.config.auth_header, &self.config.auth_value) {
                req = req.header(h.as_str(), v.as_str());
            }
            for (h, v) in extra_headers {
                req = req.header(*h, *v);
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (200..300).contains(&status) {
                        return resp.body_mut().read_json::<Resp>().map_err(|e| {
                            HttpError::Decode {
                                url: url.clone(),
                                message: e.to_string(),
                            }
                        });
                    }
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    let err = HttpError::Status {
                        url: url.clone(),
                        status,
                        body: text,
                    };
                    if status < 500 {
                        return Err(err);
                    }
                    last = Some(err);
                }
                Err(e) => {
                    last = Some(HttpError::Transport {
                        url: url.clone(),
                        attempts: attempt,
                        message: e.to_string(),
                    });
                }
            }
            log::debug!("attempt {attempt}/{attempts} to {url} failed");
        }
        Err(last.expect("at least one attempt"))
    }
}
