//! Blocking JSON-over-HTTP client shared by the external perceiver, editor
//! and scorer backends.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure classes of an external call. Routing and fallback logic match on
/// these, so each is reported distinctly.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExternalError {
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl ExternalError {
    fn retryable(&self) -> bool {
        !matches!(self, ExternalError::Malformed(_))
    }
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    1
}

fn default_in_flight() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    /// Additional attempts after the first failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            max_in_flight: default_in_flight(),
        }
    }
}

/// Counting semaphore bounding concurrent requests per endpoint.
struct Permits {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.available.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

const MAX_RESPONSE_BYTES: u64 = 256 * 1024 * 1024;

pub struct JsonClient {
    agent: ureq::Agent,
    config: EndpointConfig,
    permits: Permits,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient").field("config", &self.config).finish()
    }
}

impl JsonClient {
    pub fn new(config: EndpointConfig) -> Self {
        let timeout = Duration::from_secs_f64(config.timeout_secs.max(0.001));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let permits = Permits::new(config.max_in_flight);
        Self {
            agent,
            config,
            permits,
        }
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// POSTs `body` and decodes the JSON reply, retrying transport failures
    /// and 5xx replies up to the configured count.
    pub fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ExternalError> {
        let mut last = None;
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * (1 << attempt.min(5))));
            }
            match self.attempt(body) {
                Ok(v) => return Ok(v),
                Err(e) if e.retryable() => {
                    log::debug!("{} attempt {} failed: {e}", self.config.url, attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| ExternalError::Unavailable(self.config.url.clone())))
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ExternalError> {
        let _permit = self.permits.acquire();
        let url = &self.config.url;
        let mut resp = self.agent.post(url).send_json(body).map_err(|e| classify(url, e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ExternalError::Unavailable(format!("{url} returned HTTP {status}")));
        }
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_RESPONSE_BYTES)
            .read_to_vec()
            .map_err(|e| classify(url, e))?;
        serde_json::from_slice(&bytes).map_err(|e| ExternalError::Malformed(format!("{url}: {e}")))
    }
}

fn classify(url: &str, err: ureq::Error) -> ExternalError {
    match err {
        ureq::Error::Timeout(t) => ExternalError::Timeout(format!("{url}: {t}")),
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock => {
            ExternalError::Timeout(format!("{url}: {e}"))
        }
        ureq::Error::Json(e) => ExternalError::Malformed(format!("{url}: {e}")),
        other => ExternalError::Unavailable(format!("{url}: {other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn dead_endpoint_is_unavailable() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let port = listener.local_addr().unwrap().port();
        drop(listener);
        let mut cfg = EndpointConfig::new(format!("http://127.0.0.1:{port}/score"));
        cfg.retries = 0;
        cfg.timeout_secs = 2.0;
        let client = JsonClient::new(cfg);
        let r: Result<serde_json::Value, _> = client.post_json(&serde_json::json!({"x": 1}));
        assert!(matches!(r, Err(ExternalError::Unavailable(_))), "{r:?}");
    }

    #[test]
    fn permits_bound_concurrency() {
        let permits = Arc::new(Permits::new(2));
        let active = Arc::new(Mutex::new((0usize, 0usize)));
        std::thread::scope(|s| {
            for _ in 0..6 {
                let permits = permits.clone();
                let active = active.clone();
                s.spawn(move || {
                    let _p = permits.acquire();
                    {
                        let mut a = active.lock().unwrap();
                        a.0 += 1;
                        a.1 = a.1.max(a.0);
                    }
                    std::thread::sleep(Duration::from_millis(20));
                    active.lock().unwrap().0 -= 1;
                });
            }
        });
        assert!(active.lock().unwrap().1 <= 2);
    }
}
