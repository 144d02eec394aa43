//! Live backends: chat-completion endpoints, a snippet-search service, a
//! best-of-n reranking wrapper, and the opt-in code runner.
//!
//! Credentials never appear in configuration files or flags; they are read
//! from the environment at call time (`ATLAS_API_KEY` for model endpoints,
//! `ATLAS_SEARCH_KEY` and `ATLAS_SEARCH_CX` for search). All failures come
//! back as plain strings; the executor folds them into `ERROR:`
//! observations so an episode never aborts on a backend problem.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::net;
use crate::pool::ModelSpec;

use super::{CandidateScorer, TaskContext};

pub const API_KEY_VAR: &str = "ATLAS_API_KEY";
pub const SEARCH_KEY_VAR: &str = "ATLAS_SEARCH_KEY";
pub const SEARCH_CX_VAR: &str = "ATLAS_SEARCH_CX";
pub const SEARCH_RESULT_COUNT: usize = 3;

/// Endpoints and HTTP behavior for live execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Chat endpoint per model name; a model's own endpoint field is the
    /// fallback when missing here.
    pub endpoints: BTreeMap<String, String>,
    pub search_endpoint: Option<String>,
    /// Candidates drawn by the best-of-n reranking tool.
    pub prm_samples: usize,
    pub timeout_ms: u64,
    /// Extra attempts after a retryable failure (5xx, timeout, transport).
    pub retries: u32,
}

impl Default for LiveConfig {
    fn default() -> LiveConfig {
        LiveConfig {
            endpoints: BTreeMap::new(),
            search_endpoint: None,
            prm_samples: 5,
            timeout_ms: 30_000,
            retries: net::DEFAULT_RETRIES,
        }
    }
}

impl LiveConfig {
    pub fn endpoint_for(&self, model: &ModelSpec) -> Option<String> {
        self.endpoints.get(&model.name).cloned().or_else(|| model.endpoint.clone())
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// One chat-completion round trip. Returns (content, input tokens, output
/// tokens), trusting the endpoint's usage block and falling back to word
/// counts when it is absent.
pub fn chat(
    config: &LiveConfig,
    endpoint: &str,
    model: &str,
    input: &str,
) -> Result<(String, u64, u64), String> {
    let body = json!({
        "model": model,
        "messages": [{"role": "user", "content": input}],
    });
    let key = std::env::var(API_KEY_VAR).ok();
    let response = net::post_json(endpoint, &body, config.timeout(), config.retries, key.as_deref())
        .map_err(|e| e.to_string())?;
    let content = response
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("malformed chat response from {endpoint}: no message content"))?
        .to_string();
    let in_tokens =
        response.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or_else(|| word_count(input));
    let out_tokens = response
        .pointer("/usage/completion_tokens")
        .and_then(Value::as_u64)
        .unwrap_or_else(|| word_count(&content));
    Ok((content, in_tokens, out_tokens))
}

/// Snippet search: GET with key, engine id, query, and a fixed result count,
/// answering with the top snippets joined by newlines. Token counts are word
/// counts; the search service itself bills no model tokens.
pub fn search(config: &LiveConfig, query: &str) -> Result<(String, u64, u64), String> {
    let endpoint = config
        .search_endpoint
        .as_deref()
        .ok_or_else(|| "no search endpoint configured".to_string())?;
    let key =
        std::env::var(SEARCH_KEY_VAR).map_err(|_| format!("{SEARCH_KEY_VAR} is not set"))?;
    let cx = std::env::var(SEARCH_CX_VAR).map_err(|_| format!("{SEARCH_CX_VAR} is not set"))?;
    let num = SEARCH_RESULT_COUNT.to_string();
    let params: [(&str, &str); 4] = [("key", &key), ("cx", &cx), ("q", query), ("num", &num)];
    let response = net::get_json(endpoint, &params, config.timeout(), config.retries)
        .map_err(|e| e.to_string())?;
    let items = response.get("items").and_then(Value::as_array);
    let snippets: Vec<&str> = items
        .map(|items| {
            items
                .iter()
                .take(SEARCH_RESULT_COUNT)
                .filter_map(|item| {
                    item.get("snippet").and_then(Value::as_str).or_else(|| {
                        item.get("title").and_then(Value::as_str)
                    })
                })
                .collect()
        })
        .unwrap_or_default();
    let text = if snippets.is_empty() { "NO RESULTS".to_string() } else { snippets.join("\n") };
    let (in_tokens, out_tokens) = (word_count(query), word_count(&text));
    Ok((text, in_tokens, out_tokens))
}

/// Draws `prm_samples` candidates from the model in parallel, scores each,
/// and returns the best-scoring one (ties to the earliest), with token
/// counts summed across every successful call since each was really made.
pub fn best_of_n(
    config: &LiveConfig,
    endpoint: &str,
    model: &str,
    input: &str,
    task: &TaskContext,
    scorer: &dyn CandidateScorer,
) -> Result<(String, u64, u64), String> {
    let samples = config.prm_samples.max(1);
    let mut slots: Vec<Option<Result<(String, u64, u64), String>>> = Vec::new();
    slots.resize_with(samples, || None);
    std::thread::scope(|scope| {
        for slot in slots.iter_mut() {
            scope.spawn(move || {
                *slot = Some(chat(config, endpoint, model, input));
            });
        }
    });

    let mut best: Option<(usize, f64, String)> = None;
    let mut in_tokens = 0u64;
    let mut out_tokens = 0u64;
    let mut first_error: Option<String> = None;
    for (index, slot) in slots.into_iter().enumerate() {
        match slot.expect("scoped thread fills its slot") {
            Ok((content, i, o)) => {
                in_tokens += i;
                out_tokens += o;
                let score = scorer.score(&content, task);
                if best.as_ref().map_or(true, |(_, b, _)| score > *b) {
                    best = Some((index, score, content));
                }
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    match best {
        Some((_, _, content)) => Ok((content, in_tokens, out_tokens)),
        None => Err(first_error.unwrap_or_else(|| "no candidates drawn".to_string())),
    }
}

/// Pipes the snippet into the configured command's stdin and reports stdout,
/// or a structured error text carrying the exit status and stderr. The
/// process is killed at the deadline.
pub fn run_code(command: &[String], timeout_ms: u64, snippet: &str) -> Result<(String, u64, u64), String> {
    let Some((program, args)) = command.split_first() else {
        return Err("code command is empty".to_string());
    };
    let mut child = std::process::Command::new(program)
        .args(args)
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot start {program:?}: {e}"))?;
    if let Some(mut stdin) = child.stdin.take() {
        // A closed pipe just means the program ignored its input.
        let _ = stdin.write_all(snippet.as_bytes());
    }

    let deadline = std::time::Instant::now() + Duration::from_millis(timeout_ms);
    loop {
        match child.try_wait().map_err(|e| format!("wait on {program:?} failed: {e}"))? {
            Some(_) => break,
            None if std::time::Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("{program:?} timed out after {timeout_ms}ms"));
            }
            None => std::thread::sleep(Duration::from_millis(10)),
        }
    }
    let output =
        child.wait_with_output().map_err(|e| format!("collect output of {program:?}: {e}"))?;
    let stdout = String::from_utf8_lossy(&output.stdout).into_owned();
    let text = if output.status.success() {
        stdout
    } else {
        let stderr = String::from_utf8_lossy(&output.stderr);
        format!("ERROR REPORT: exit status {}\n{}", output.status, stderr.trim())
    };
    Ok((text.clone(), word_count(snippet), word_count(&text)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_lookup_prefers_explicit_map() {
        let mut config = LiveConfig::default();
        config.endpoints.insert("m".into(), "http://a/chat".into());
        let mut spec = ModelSpec::new("m");
        spec.endpoint = Some("http://b/chat".into());
        assert_eq!(config.endpoint_for(&spec), Some("http://a/chat".into()));
        config.endpoints.clear();
        assert_eq!(config.endpoint_for(&spec), Some("http://b/chat".into()));
        spec.endpoint = None;
        assert_eq!(config.endpoint_for(&spec), None);
    }

    #[test]
    fn code_runner_reports_stdout_and_failures() {
        let echo = vec!["cat".to_string()];
        let (text, i, o) = run_code(&echo, 5_000, "hello code world").unwrap();
        assert_eq!(text, "hello code world");
        assert_eq!(i, 3);
        assert_eq!(o, 3);

        let fail = vec!["sh".to_string(), "-c".to_string(), "echo boom >&2; exit 3".to_string()];
        let (text, _, _) = run_code(&fail, 5_000, "x").unwrap();
        assert!(text.starts_with("ERROR REPORT: exit status"), "{text}");
        assert!(text.contains("boom"));

        let missing = vec!["definitely-not-a-real-binary-xyz".to_string()];
        assert!(run_code(&missing, 5_000, "x").is_err());
    }

    #[test]
    fn code_runner_kills_at_deadline() {
        let sleepy = vec!["sleep".to_string(), "5".to_string()];
        let started = std::time::Instant::now();
        let err = run_code(&sleepy, 200, "").unwrap_err();
        assert!(err.contains("timed out"), "{err}");
        assert!(started.elapsed() < Duration::from_secs(3));
    }
}
