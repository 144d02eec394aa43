//! Small blocking HTTP helper shared by the remote encoder and the live
//! executors.
//!
//! Transport failures, timeouts, and 5xx responses are retried with
//! exponential backoff; 4xx responses are terminal because repeating a bad
//! request cannot fix it.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

/// Retries after the first attempt for retryable failures.
pub const DEFAULT_RETRIES: u32 = 2;
/// Backoff before retry `n` is `BACKOFF_BASE_MS << n` milliseconds.
const BACKOFF_BASE_MS: u64 = 200;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("HTTP {status} from {url}")]
    Status { status: u16, url: String },
    #[error("request to {url} failed after {attempts} attempts: {detail}")]
    Transport { url: String, attempts: u32, detail: String },
    #[error("malformed response from {url}: {detail}")]
    Malformed { url: String, detail: String },
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(true)
        .build()
        .new_agent()
}

fn is_retryable(err: &ureq::Error) -> bool {
    match err {
        ureq::Error::StatusCode(code) => *code >= 500,
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::HostNotFound => true,
        _ => false,
    }
}

fn run_with_retry<F>(url: &str, retries: u32, mut attempt: F) -> Result<Value, HttpError>
where
    F: FnMut() -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
{
    let mut last_detail = String::new();
    for round in 0..=retries {
        if round > 0 {
            std::thread::sleep(Duration::from_millis(BACKOFF_BASE_MS << (round - 1)));
        }
        match attempt() {
            Ok(mut response) => {
                return response.body_mut().read_json::<Value>().map_err(|e| {
                    HttpError::Malformed { url: url.to_string(), detail: e.to_string() }
                });
            }
            Err(err) if is_retryable(&err) => {
                last_detail = err.to_string();
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(HttpError::Status { status: code, url: url.to_string() });
            }
            Err(err) => {
                return Err(HttpError::Transport {
                    url: url.to_string(),
                    attempts: round + 1,
                    detail: err.to_string(),
                });
            }
        }
    }
    Err(HttpError::Transport { url: url.to_string(), attempts: retries + 1, detail: last_detail })
}

/// POSTs `body` as JSON and parses the JSON response. `bearer` becomes an
/// `Authorization` header when present.
pub fn post_json(
    url: &str,
    body: &Value,
    timeout: Duration,
    retries: u32,
    bearer: Option<&str>,
) -> Result<Value, HttpError> {
    let agent = agent(timeout);
    run_with_retry(url, retries, || {
        let mut req = agent.post(url);
        if let Some(token) = bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        req.send_json(body)
    })
}

/// GETs `url` with query parameters and parses the JSON response.
pub fn get_json(
    url: &str,
    params: &[(&str, &str)],
    timeout: Duration,
    retries: u32,
) -> Result<Value, HttpError> {
    let agent = agent(timeout);
    run_with_retry(url, retries, || {
        let mut req = agent.get(url);
        for (k, v) in params {
            req = req.query(*k, *v);
        }
        req.call()
    })
}
