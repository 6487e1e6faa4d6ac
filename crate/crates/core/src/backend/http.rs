use std::fmt;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::BackendDescriptor;
use crate::error::{Error, Result};

const BACKOFF_BASE: Duration = Duration::from_millis(50);
const BACKOFF_CAP: Duration = Duration::from_secs(2);

/// Blocking JSON client with bounded retries. 5xx and transport failures are
/// retried; 4xx is returned at once.
pub(crate) struct HttpClient {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
    max_retries: u32,
}

impl fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpClient")
            .field("base", &self.base)
            .field("authenticated", &self.token.is_some())
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

enum Attempt<R> {
    Done(R),
    Retry(String),
}

impl HttpClient {
    pub(crate) fn new(descriptor: &BackendDescriptor) -> Result<Self> {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(descriptor.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(HttpClient {
            agent,
            base: descriptor.endpoint.trim_end_matches('/').to_string(),
            token: descriptor.auth_token()?,
            max_retries: descriptor.max_retries,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub(crate) fn post_json<B: Serialize, R: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R> {
        // Compact bytes; the protocol is specified as exact JSON.
        let bytes = serde_json::to_vec(body)?;
        self.with_retries(path, || {
            let mut req = self
                .agent
                .post(self.url(path))
                .header("Content-Type", "application/json");
            if let Some(t) = &self.token {
                req = req.header("Authorization", format!("Bearer {t}"));
            }
            req.send(&bytes[..])
        })
    }

    pub(crate) fn get_json<R: DeserializeOwned>(&self, path: &str) -> Result<R> {
        self.with_retries(path, || {
            let mut req = self.agent.get(self.url(path));
            if let Some(t) = &self.token {
                req = req.header("Authorization", format!("Bearer {t}"));
            }
            req.call()
        })
    }

    fn with_retries<R, F>(&self, path: &str, send: F) -> Result<R>
    where
        R: DeserializeOwned,
        F: Fn() -> std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    {
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = BACKOFF_BASE * 2u32.pow(attempt - 1);
                std::thread::sleep(backoff.min(BACKOFF_CAP));
                log::debug!("retrying {path} (attempt {})", attempt + 1);
            }
            match self.attempt(send()) {
                Ok(Attempt::Done(r)) => return Ok(r),
                Ok(Attempt::Retry(msg)) => last = msg,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Transport {
            endpoint: self.url(path),
            attempts,
            message: last,
        })
    }

    fn attempt<R: DeserializeOwned>(
        &self,
        sent: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<Attempt<R>> {
        let mut resp = match sent {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        let status = resp.status().as_u16();
        let body = match resp.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => return Ok(Attempt::Retry(e.to_string())),
        };
        match status {
            200..=299 => serde_json::from_str(&body)
                .map(Attempt::Done)
                .map_err(|e| Error::Capability(format!("unexpected response body: {e}"))),
            400..=499 => Err(Error::Rejected {
                status,
                message: error_message(&body),
            }),
            _ => Ok(Attempt::Retry(format!(
                "status {status}: {}",
                error_message(&body)
            ))),
        }
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
        .unwrap_or_else(|| body.chars().take(200).collect())
}
