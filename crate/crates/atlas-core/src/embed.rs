//! Query encoders: map text to fixed-dimension vectors.
//!
//! Two variants ship behind one config type. The hashed bag-of-words encoder
//! is the offline default: whitespace tokens are hashed into `dim` buckets
//! with a seeded FNV-1a, counted, and optionally L2-normalized. It is
//! deterministic, platform-stable, and order-insensitive, which is exactly
//! what clustering and tests need without a network. The remote encoder
//! forwards texts to an embedding service and returns its vectors verbatim.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::net::{self, HttpError};
use crate::rng::fnv1a64;

/// A query embedding; components are always finite.
pub type EmbeddingVector = Vec<f64>;

/// Smallest allowed hashed dimension; below this, bucket collisions destroy
/// the signal the router depends on.
pub const MIN_HASHED_DIM: usize = 8;

fn default_true() -> bool {
    true
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    4
}

/// Encoder selection and parameters, serializable into profiles and
/// checkpoints so routing stays self-contained.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncoderConfig {
    Hashed {
        dim: usize,
        seed: u64,
        #[serde(default = "default_true")]
        normalize: bool,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
    },
}

impl EncoderConfig {
    /// The hashed default used when no encoder is configured explicitly.
    pub fn default_hashed(seed: u64) -> EncoderConfig {
        EncoderConfig::Hashed { dim: 64, seed, normalize: true }
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("query is empty after trimming")]
    EmptyQuery,
    #[error("hashed dimension {dim} is below the minimum {MIN_HASHED_DIM}")]
    DimensionTooSmall { dim: usize },
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("embedding service response malformed: {0}")]
    Malformed(String),
    #[error("batch item {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
    #[error("embedding cache at {path}: {detail}")]
    Cache { path: String, detail: String },
}

fn hashed_encode(dim: usize, seed: u64, normalize: bool, text: &str) -> Vec<f64> {
    let mut values = vec![0.0f64; dim];
    for token in text.split_whitespace() {
        let bucket = (fnv1a64(seed, token.as_bytes()) % dim as u64) as usize;
        values[bucket] += 1.0;
    }
    if normalize {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
    }
    values
}

fn parse_remote_vectors(response: &serde_json::Value, expected: usize) -> Result<Vec<Vec<f64>>, EmbedError> {
    let data = response
        .get("data")
        .and_then(|d| d.as_array())
        .ok_or_else(|| EmbedError::Malformed("missing \"data\" array".into()))?;
    if data.len() != expected {
        return Err(EmbedError::Malformed(format!(
            "expected {expected} embeddings, got {}",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(data.len());
    for item in data {
        let raw = item
            .get("embedding")
            .and_then(|e| e.as_array())
            .ok_or_else(|| EmbedError::Malformed("entry missing \"embedding\" array".into()))?;
        let mut vector = Vec::with_capacity(raw.len());
        for v in raw {
            let x = v
                .as_f64()
                .ok_or_else(|| EmbedError::Malformed("non-numeric embedding component".into()))?;
            if !x.is_finite() {
                return Err(EmbedError::Malformed("non-finite embedding component".into()));
            }
            vector.push(x);
        }
        if vector.is_empty() {
            return Err(EmbedError::Malformed("empty embedding vector".into()));
        }
        out.push(vector);
    }
    Ok(out)
}

fn remote_encode_chunk(
    endpoint: &str,
    model: &str,
    timeout_ms: u64,
    texts: &[&str],
) -> Result<Vec<Vec<f64>>, EmbedError> {
    let body = serde_json::json!({ "model": model, "input": texts });
    let bearer = std::env::var("ATLAS_API_KEY").ok();
    let response = net::post_json(
        endpoint,
        &body,
        Duration::from_millis(timeout_ms),
        net::DEFAULT_RETRIES,
        bearer.as_deref(),
    )?;
    parse_remote_vectors(&response, texts.len())
}

/// Encodes one query. Deterministic for the hashed variant; the remote
/// variant returns the service's vector verbatim.
pub fn encode(config: &EncoderConfig, query: &str) -> Result<EmbeddingVector, EmbedError> {
    if query.trim().is_empty() {
        return Err(EmbedError::EmptyQuery);
    }
    match config {
        EncoderConfig::Hashed { dim, seed, normalize } => {
            if *dim < MIN_HASHED_DIM {
                return Err(EmbedError::DimensionTooSmall { dim: *dim });
            }
            Ok(hashed_encode(*dim, *seed, *normalize, query))
        }
        EncoderConfig::Remote { endpoint, model, timeout_ms, .. } => {
            let mut vectors = remote_encode_chunk(endpoint, model, *timeout_ms, &[query])?;
            Ok(vectors.remove(0))
        }
    }
}

/// Texts per remote request; the service protocol takes a list per call.
const REMOTE_CHUNK: usize = 64;

/// Encodes a batch, preserving order. Element `i` equals `encode(queries[i])`;
/// the first failure is reported with its index. Remote requests run on up to
/// `max_in_flight` worker threads.
pub fn batch_encode(
    config: &EncoderConfig,
    queries: &[&str],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    for (index, q) in queries.iter().enumerate() {
        if q.trim().is_empty() {
            return Err(EmbedError::Batch { index, source: Box::new(EmbedError::EmptyQuery) });
        }
    }
    match config {
        EncoderConfig::Hashed { .. } => queries
            .iter()
            .enumerate()
            .map(|(index, q)| {
                encode(config, q)
                    .map_err(|e| EmbedError::Batch { index, source: Box::new(e) })
            })
            .collect(),
        EncoderConfig::Remote { endpoint, model, timeout_ms, max_in_flight } => {
            if queries.is_empty() {
                return Ok(Vec::new());
            }
            let chunks: Vec<(usize, &[&str])> = queries
                .chunks(REMOTE_CHUNK)
                .enumerate()
                .map(|(i, c)| (i * REMOTE_CHUNK, c))
                .collect();
            let workers = (*max_in_flight).max(1).min(chunks.len());
            let next = std::sync::atomic::AtomicUsize::new(0);
            let results: Vec<std::sync::Mutex<Option<Result<Vec<Vec<f64>>, EmbedError>>>> =
                chunks.iter().map(|_| std::sync::Mutex::new(None)).collect();
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                        if i >= chunks.len() {
                            break;
                        }
                        let (_, texts) = chunks[i];
                        let result = remote_encode_chunk(endpoint, model, *timeout_ms, texts);
                        *results[i].lock().unwrap() = Some(result);
                    });
                }
            });
            let mut out = Vec::with_capacity(queries.len());
            for (i, slot) in results.into_iter().enumerate() {
                let (start, _) = chunks[i];
                match slot.into_inner().unwrap().expect("worker filled every slot") {
                    Ok(vectors) => out.extend(vectors),
                    Err(e) => {
                        return Err(EmbedError::Batch { index: start, source: Box::new(e) })
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Content key for the embeddings cache: hex SHA-256 of the text.
pub fn cache_key(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    text_hash: String,
    vector: Vec<f64>,
}

/// On-disk embedding cache, one JSON object per line keyed by content hash.
#[derive(Default, Debug)]
pub struct EmbeddingCache {
    entries: BTreeMap<String, Vec<f64>>,
    dirty: bool,
}

impl EmbeddingCache {
    /// Loads a cache file; a missing file yields an empty cache.
    pub fn load(path: &Path) -> Result<EmbeddingCache, EmbedError> {
        let mut cache = EmbeddingCache::default();
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cache),
            Err(e) => {
                return Err(EmbedError::Cache {
                    path: path.display().to_string(),
                    detail: e.to_string(),
                })
            }
        };
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| EmbedError::Cache {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| EmbedError::Cache {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", lineno + 1),
            })?;
            cache.entries.insert(parsed.text_hash, parsed.vector);
        }
        Ok(cache)
    }

    /// Writes all entries back, sorted by hash for stable diffs.
    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let mut buf = Vec::new();
        for (text_hash, vector) in &self.entries {
            let line = serde_json::to_string(&CacheLine {
                text_hash: text_hash.clone(),
                vector: vector.clone(),
            })
            .expect("cache line serialization cannot fail");
            buf.extend_from_slice(line.as_bytes());
            buf.push(b'\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| EmbedError::Cache {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        file.write_all(&buf).map_err(|e| EmbedError::Cache {
            path: path.display().to_string(),
            detail: e.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True when entries were added since load.
    pub fn dirty(&self) -> bool {
        self.dirty
    }

    /// Returns the cached vector for `text` or encodes and caches it.
    pub fn get_or_encode(
        &mut self,
        config: &EncoderConfig,
        text: &str,
    ) -> Result<EmbeddingVector, EmbedError> {
        let key = cache_key(text);
        if let Some(hit) = self.entries.get(&key) {
            return Ok(hit.clone());
        }
        let vector = encode(config, text)?;
        self.entries.insert(key, vector.clone());
        self.dirty = true;
        Ok(vector)
    }
}
