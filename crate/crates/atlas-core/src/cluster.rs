//! K-means clustering of query embeddings.
//!
//! Fitting uses k-means++ seeding followed by Lloyd iterations, restarted
//! `n_init` times with derived seeds; the run with the lowest final inertia
//! wins. Every iteration's inertia is recorded so callers (and tests) can
//! check that Lloyd never increases it. Empty clusters keep their previous
//! centroid, which preserves that monotonicity. All randomness flows from the
//! config seed, so a fit is bit-reproducible.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingVector;
use crate::rng::stream;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot fit {k} clusters on {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("vector {index} has dimension {got}, expected {expected}")]
    MixedDimensions { index: usize, expected: usize, got: usize },
    #[error("vector {index} has a non-finite component")]
    NonFinite { index: usize },
    #[error("vectors must have at least one dimension")]
    ZeroDimension,
    #[error("query vector has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Distance used for assignment and inertia.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    #[default]
    Euclidean,
}

/// Fit parameters; defaults follow the router's standard configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub n_init: usize,
}

impl Default for KmeansConfig {
    fn default() -> KmeansConfig {
        KmeansConfig { k: 8, seed: 0, max_iters: 1000, tol: 1e-6, n_init: 10 }
    }
}

impl KmeansConfig {
    pub fn new(k: usize, seed: u64) -> KmeansConfig {
        KmeansConfig { k, seed, ..KmeansConfig::default() }
    }
}

/// Fitted centroids plus fit metadata.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    #[serde(rename = "inertia")]
    pub final_inertia: f64,
    #[serde(default, skip_serializing)]
    pub distance: Distance,
    /// Inertia after each assignment pass of the winning restart.
    #[serde(default, skip_serializing)]
    pub inertia_trace: Vec<f64>,
}

/// Nearest-centroid result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterAssignment {
    pub cluster_id: usize,
    pub distance_to_centroid: f64,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn validate_points(vectors: &[EmbeddingVector]) -> Result<usize, ClusterError> {
    let d = vectors.first().map(Vec::len).unwrap_or(0);
    if !vectors.is_empty() && d == 0 {
        return Err(ClusterError::ZeroDimension);
    }
    for (index, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(ClusterError::MixedDimensions { index, expected: d, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ClusterError::NonFinite { index });
        }
    }
    Ok(d)
}

/// Nearest centroid for every point; ties go to the lowest cluster index.
/// Returns per-point (cluster, squared distance) and the total inertia.
fn assign_pass(points: &[EmbeddingVector], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for p in points {
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (k, c) in centroids.iter().enumerate() {
            let d2 = dist2(p, c);
            if d2 < best_d2 {
                best_d2 = d2;
                best = k;
            }
        }
        labels.push(best);
        total += best_d2;
    }
    (labels, total)
}

/// k-means++ seeding: first centroid uniform, then each next one sampled
/// proportionally to squared distance from the nearest chosen centroid.
fn plus_plus_init(
    points: &[EmbeddingVector],
    k: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())].clone());
    let mut weights: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let pick = match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            // All remaining mass is zero (every point equals a chosen
            // centroid); any point works, keep the draw deterministic.
            Err(_) => rng.random_range(0..points.len()),
        };
        let chosen = points[pick].clone();
        for (w, p) in weights.iter_mut().zip(points) {
            let d2 = dist2(p, &chosen);
            if d2 < *w {
                *w = d2;
            }
        }
        centroids.push(chosen);
    }
    centroids
}

fn lloyd_run(
    points: &[EmbeddingVector],
    d: usize,
    cfg: &KmeansConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<Vec<f64>>, f64, Vec<f64>) {
    let mut centroids = plus_plus_init(points, cfg.k, rng);
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iters {
        let (labels, inertia_now) = assign_pass(points, &centroids);
        trace.push(inertia_now);

        let mut sums = vec![vec![0.0f64; d]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &label) in points.iter().zip(&labels) {
            counts[label] += 1;
            for (s, x) in sums[label].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut max_shift2 = 0.0f64;
        for k in 0..cfg.k {
            if counts[k] == 0 {
                continue;
            }
            let mean: Vec<f64> = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            let shift2 = dist2(&mean, &centroids[k]);
            if shift2 > max_shift2 {
                max_shift2 = shift2;
            }
            centroids[k] = mean;
        }
        if max_shift2.sqrt() < cfg.tol {
            break;
        }
    }
    let (_, final_inertia) = assign_pass(points, &centroids);
    trace.push(final_inertia);
    (centroids, final_inertia, trace)
}

/// Fits `cfg.k` centroids to `vectors`, keeping the best of `cfg.n_init`
/// restarts by final inertia. Deterministic given `cfg.seed`.
pub fn fit_kmeans(vectors: &[EmbeddingVector], cfg: &KmeansConfig) -> Result<ClusterModel, ClusterError> {
    if cfg.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if vectors.len() < cfg.k {
        return Err(ClusterError::TooFewPoints { k: cfg.k, n: vectors.len() });
    }
    let d = validate_points(vectors)?;
    let mut best: Option<(Vec<Vec<f64>>, f64, Vec<f64>)> = None;
    for init in 0..cfg.n_init.max(1) {
        let mut rng = stream(cfg.seed, &[init as u64]);
        let run = lloyd_run(vectors, d, cfg, &mut rng);
        let better = match &best {
            None => true,
            Some((_, best_inertia, _)) => run.1 < *best_inertia,
        };
        if better {
            best = Some(run);
        }
    }
    let (centroids, final_inertia, inertia_trace) = best.expect("n_init is at least 1");
    Ok(ClusterModel {
        k: cfg.k,
        d,
        seed: cfg.seed,
        centroids,
        final_inertia,
        distance: Distance::Euclidean,
        inertia_trace,
    })
}

/// Nearest centroid for one vector; ties break to the lowest cluster index.
pub fn assign(model: &ClusterModel, vector: &[f64]) -> Result<ClusterAssignment, ClusterError> {
    if vector.len() != model.d {
        return Err(ClusterError::DimensionMismatch { expected: model.d, got: vector.len() });
    }
    let mut best = 0usize;
    let mut best_d2 = f64::INFINITY;
    for (k, c) in model.centroids.iter().enumerate() {
        let d2 = dist2(vector, c);
        if d2 < best_d2 {
            best_d2 = d2;
            best = k;
        }
    }
    Ok(ClusterAssignment { cluster_id: best, distance_to_centroid: best_d2.sqrt() })
}

/// Total squared distance from each vector to its nearest centroid.
pub fn inertia(model: &ClusterModel, vectors: &[EmbeddingVector]) -> Result<f64, ClusterError> {
    let mut total = 0.0;
    for v in vectors {
        let a = assign(model, v)?;
        total += a.distance_to_centroid * a.distance_to_centroid;
    }
    Ok(total)
}
