//! Training-free routing: per-(cluster, pair) statistics, the
//! accuracy-versus-cost utility, and single-shot pair selection.
//!
//! A profile is fitted once (embed the corpus, cluster it, execute pairs
//! on each query, and remember who solved what at which token cost), then
//! answers routing queries read-only: embed, find the nearest cluster, and
//! take the utility argmax over pairs with enough observations there. A
//! cluster with no usable data falls back to the globally pooled statistics,
//! and if those are empty too, to the profile's configured default pair, so
//! a decision always comes back.
//!
//! Missing statistics are treated as absent, never as zero accuracy: an
//! unexplored pair is unknown, not bad.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{assign, fit_kmeans, ClusterError, ClusterModel, KmeansConfig};
use crate::embed::{batch_encode, encode, EmbedError, EncoderConfig};
use crate::env::{Executor, TaskContext};
use crate::pool::{ModelPrice, ModelToolPair, PoolError, RoutingPool};
use crate::reward::{outcome_reward, Matcher};
use crate::rng::{label_salt, stream};

pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("cluster id {cluster_id} is out of range for k = {k}")]
    InvalidCluster { cluster_id: usize, k: usize },
    #[error("pair index {index} is out of range for {count} pairs")]
    InvalidPair { index: usize, count: usize },
    #[error("the routing pool has no pairs")]
    EmptyPool,
    #[error("invalid utility configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Encode(#[from] EmbedError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("profile file: {0}")]
    Schema(String),
    #[error("cannot access {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("profiles disagree on {0}, refusing to merge")]
    MergeMismatch(&'static str),
}

/// Observation counters for one (cluster, pair) cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub solved: u64,
    pub total: u64,
    pub in_tokens: u64,
    pub out_tokens: u64,
}

impl PairStats {
    pub fn record(&mut self, solved: bool, in_tokens: u64, out_tokens: u64) {
        self.total += 1;
        if solved {
            self.solved += 1;
        }
        self.in_tokens += in_tokens;
        self.out_tokens += out_tokens;
    }

    pub fn merge(&mut self, other: &PairStats) {
        self.solved += other.solved;
        self.total += other.total;
        self.in_tokens += other.in_tokens;
        self.out_tokens += other.out_tokens;
    }

    fn check(&self) -> Result<(), String> {
        if self.solved > self.total {
            return Err(format!("solved {} exceeds total {}", self.solved, self.total));
        }
        if self.total == 0 && (self.in_tokens != 0 || self.out_tokens != 0) {
            return Err("token sums must be zero with no observations".into());
        }
        Ok(())
    }
}

/// Fraction of observations the pair solved; absent without observations.
pub fn empirical_accuracy(stats: &PairStats) -> Option<f64> {
    if stats.total == 0 {
        return None;
    }
    Some(stats.solved as f64 / stats.total as f64)
}

/// Mean per-call currency cost: mean input tokens times the input price
/// plus mean output tokens times the output price. Absent without
/// observations.
pub fn empirical_cost(stats: &PairStats, prices: &ModelPrice) -> Option<f64> {
    if stats.total == 0 {
        return None;
    }
    let total = stats.total as f64;
    let mean_in = stats.in_tokens as f64 / total;
    let mean_out = stats.out_tokens as f64 / total;
    Some(mean_in * prices.input.units_f64() + mean_out * prices.output.units_f64())
}

/// Accuracy-cost trade-off knobs. `alpha` weighs cost against accuracy;
/// `cost_scale` divides currency cost into accuracy-comparable units (the
/// fitted default is the maximum cost observed during profiling, and 1
/// reproduces the raw-currency reading); `min_support` is the observation
/// count a pair needs in a cluster before it is eligible there.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UtilityConfig {
    pub alpha: f64,
    pub cost_scale: f64,
    pub min_support: u64,
}

impl Default for UtilityConfig {
    fn default() -> UtilityConfig {
        UtilityConfig { alpha: 0.5, cost_scale: 1.0, min_support: 1 }
    }
}

impl UtilityConfig {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(ProfileError::BadConfig(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.cost_scale.is_finite() && self.cost_scale > 0.0) {
            return Err(ProfileError::BadConfig(format!(
                "cost_scale must be positive, got {}",
                self.cost_scale
            )));
        }
        if self.min_support == 0 {
            return Err(ProfileError::BadConfig("min_support must be at least 1".into()));
        }
        Ok(())
    }
}

/// `(1 - alpha) * accuracy - alpha * cost / cost_scale`; absent without
/// observations.
pub fn utility(stats: &PairStats, prices: &ModelPrice, config: &UtilityConfig) -> Option<f64> {
    let acc = empirical_accuracy(stats)?;
    let cost = empirical_cost(stats, prices)?;
    Some((1.0 - config.alpha) * acc - config.alpha * (cost / config.cost_scale))
}

/// Where a routing decision came from and what it chose.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoutingDecision {
    #[serde(skip)]
    pub pair: ModelToolPair,
    pub model: String,
    pub tool: String,
    pub cluster_id: usize,
    /// Utility of the chosen pair; absent when the decision bottomed out at
    /// the default pair with no statistics at all.
    pub utility: Option<f64>,
    /// True when the query's own cluster had no eligible pair and pooled or
    /// default statistics decided instead.
    pub fallback_used: bool,
}

/// A fitted routing profile: the cluster geometry, the encoder that feeds
/// it, the pool it routes over, the utility configuration, and the
/// per-(cluster, pair) observation counters.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterProfile {
    cluster_model: ClusterModel,
    encoder: EncoderConfig,
    pool: RoutingPool,
    utility: UtilityConfig,
    default_pair: ModelToolPair,
    stats: BTreeMap<(usize, usize), PairStats>,
}

impl ClusterProfile {
    pub fn new(
        cluster_model: ClusterModel,
        encoder: EncoderConfig,
        pool: RoutingPool,
        utility: UtilityConfig,
        default_pair: ModelToolPair,
    ) -> Result<ClusterProfile, ProfileError> {
        utility.validate()?;
        if pool.pair_count() == 0 {
            return Err(ProfileError::EmptyPool);
        }
        let count = pool.pair_count();
        let index = pool.pair_index(default_pair);
        if index >= count {
            return Err(ProfileError::InvalidPair { index, count });
        }
        Ok(ClusterProfile {
            cluster_model,
            encoder,
            pool,
            utility,
            default_pair,
            stats: BTreeMap::new(),
        })
    }

    pub fn cluster_model(&self) -> &ClusterModel {
        &self.cluster_model
    }

    pub fn encoder(&self) -> &EncoderConfig {
        &self.encoder
    }

    pub fn pool(&self) -> &RoutingPool {
        &self.pool
    }

    pub fn utility_config(&self) -> &UtilityConfig {
        &self.utility
    }

    pub fn set_utility_config(&mut self, utility: UtilityConfig) -> Result<(), ProfileError> {
        utility.validate()?;
        self.utility = utility;
        Ok(())
    }

    pub fn default_pair(&self) -> ModelToolPair {
        self.default_pair
    }

    pub fn stats_for(&self, cluster_id: usize, pair: ModelToolPair) -> Option<&PairStats> {
        self.stats.get(&(cluster_id, self.pool.pair_index(pair)))
    }

    /// All clusters merged: the fallback statistics for out-of-distribution
    /// queries.
    pub fn pooled_stats(&self, pair_index: usize) -> PairStats {
        let mut pooled = PairStats::default();
        for ((_, p), cell) in &self.stats {
            if *p == pair_index {
                pooled.merge(cell);
            }
        }
        pooled
    }

    /// Adds one executed observation to the (cluster, pair) cell.
    pub fn record_observation(
        &mut self,
        cluster_id: usize,
        pair: ModelToolPair,
        solved: bool,
        in_tokens: u64,
        out_tokens: u64,
    ) -> Result<(), ProfileError> {
        if cluster_id >= self.cluster_model.k {
            return Err(ProfileError::InvalidCluster { cluster_id, k: self.cluster_model.k });
        }
        let index = self.pool.pair_index(pair);
        if index >= self.pool.pair_count() {
            return Err(ProfileError::InvalidPair { index, count: self.pool.pair_count() });
        }
        self.stats.entry((cluster_id, index)).or_default().record(solved, in_tokens, out_tokens);
        Ok(())
    }

    /// Folds another profile's counters into this one. Both must describe
    /// the same pool, clustering, and encoder; the merge is the associative
    /// and commutative counter sum that concurrent profiling workers rely
    /// on.
    pub fn merge(&mut self, other: &ClusterProfile) -> Result<(), ProfileError> {
        if self.pool.fingerprint() != other.pool.fingerprint() {
            return Err(ProfileError::MergeMismatch("routing pool"));
        }
        if self.cluster_model != other.cluster_model {
            return Err(ProfileError::MergeMismatch("cluster model"));
        }
        if self.encoder != other.encoder {
            return Err(ProfileError::MergeMismatch("encoder"));
        }
        for (key, cell) in &other.stats {
            self.stats.entry(*key).or_default().merge(cell);
        }
        Ok(())
    }

    /// Maximum empirical per-call cost across all cells, when any cell has
    /// observations.
    pub fn max_observed_cost(&self) -> Option<f64> {
        let mut max: Option<f64> = None;
        for ((_, index), cell) in &self.stats {
            let pair = self.pool.pair_at(*index);
            if let Some(cost) = empirical_cost(cell, self.pool.model_price(pair.model)) {
                if max.map_or(true, |m| cost > m) {
                    max = Some(cost);
                }
            }
        }
        max
    }

    fn best_pair<F>(&self, cell_of: F) -> Option<(usize, f64)>
    where
        F: Fn(usize) -> Option<PairStats>,
    {
        let mut best: Option<(usize, f64)> = None;
        for index in 0..self.pool.pair_count() {
            let Some(cell) = cell_of(index) else { continue };
            if cell.total < self.utility.min_support {
                continue;
            }
            let pair = self.pool.pair_at(index);
            let Some(value) = utility(&cell, self.pool.model_price(pair.model), &self.utility)
            else {
                continue;
            };
            // Strict improvement only, so ties keep the lowest index.
            if best.map_or(true, |(_, b)| value > b) {
                best = Some((index, value));
            }
        }
        best
    }

    fn decision(&self, index: usize, cluster_id: usize, value: Option<f64>, fallback: bool) -> RoutingDecision {
        let pair = self.pool.pair_at(index);
        let (model, tool) = self.pool.pair_names(pair);
        RoutingDecision {
            pair,
            model: model.to_string(),
            tool: tool.to_string(),
            cluster_id,
            utility: value,
            fallback_used: fallback,
        }
    }

    /// Utility argmax over the cluster's eligible pairs, ties to the lowest
    /// enumeration index. A cluster with no eligible pair falls back to the
    /// pooled statistics, then to the default pair.
    pub fn select_pair(&self, cluster_id: usize) -> Result<RoutingDecision, ProfileError> {
        if cluster_id >= self.cluster_model.k {
            return Err(ProfileError::InvalidCluster { cluster_id, k: self.cluster_model.k });
        }
        if let Some((index, value)) =
            self.best_pair(|index| self.stats.get(&(cluster_id, index)).copied())
        {
            return Ok(self.decision(index, cluster_id, Some(value), false));
        }
        if let Some((index, value)) = self.best_pair(|index| Some(self.pooled_stats(index))) {
            return Ok(self.decision(index, cluster_id, Some(value), true));
        }
        let index = self.pool.pair_index(self.default_pair);
        Ok(self.decision(index, cluster_id, None, true))
    }

    /// Single-shot routing: embed the query, find its nearest cluster, and
    /// select the best pair there.
    pub fn route_query(&self, query: &str) -> Result<RoutingDecision, ProfileError> {
        let vector = encode(&self.encoder, query)?;
        let assignment = assign(&self.cluster_model, &vector)?;
        self.select_pair(assignment.cluster_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProfileFile::from(self.clone()))
            .expect("profile serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<ClusterProfile, ProfileError> {
        let file: ProfileFile =
            serde_json::from_str(text).map_err(|e| ProfileError::Schema(e.to_string()))?;
        ClusterProfile::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProfileError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| ProfileError::Io { path: path.display().to_string(), detail: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<ClusterProfile, ProfileError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProfileError::Io { path: path.display().to_string(), detail: e.to_string() })?;
        ClusterProfile::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct StatsRow {
    cluster: usize,
    model: String,
    tool: String,
    solved: u64,
    total: u64,
    in_tokens: u64,
    out_tokens: u64,
}

#[derive(Serialize, Deserialize)]
struct DefaultPairNames {
    model: String,
    tool: String,
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    version: u32,
    cluster_model: ClusterModel,
    encoder: EncoderConfig,
    pool: RoutingPool,
    utility: UtilityConfig,
    default_pair: DefaultPairNames,
    stats: Vec<StatsRow>,
}

impl From<ClusterProfile> for ProfileFile {
    fn from(profile: ClusterProfile) -> ProfileFile {
        let stats = profile
            .stats
            .iter()
            .map(|((cluster, index), cell)| {
                let (model, tool) = profile.pool.pair_names(profile.pool.pair_at(*index));
                StatsRow {
                    cluster: *cluster,
                    model: model.to_string(),
                    tool: tool.to_string(),
                    solved: cell.solved,
                    total: cell.total,
                    in_tokens: cell.in_tokens,
                    out_tokens: cell.out_tokens,
                }
            })
            .collect();
        let (model, tool) = profile.pool.pair_names(profile.default_pair);
        let default_pair = DefaultPairNames { model: model.to_string(), tool: tool.to_string() };
        ProfileFile {
            version: PROFILE_VERSION,
            default_pair,
            cluster_model: profile.cluster_model,
            encoder: profile.encoder,
            pool: profile.pool,
            utility: profile.utility,
            stats,
        }
    }
}

impl TryFrom<ProfileFile> for ClusterProfile {
    type Error = ProfileError;

    fn try_from(file: ProfileFile) -> Result<ClusterProfile, ProfileError> {
        if file.version != PROFILE_VERSION {
            return Err(ProfileError::Schema(format!(
                "unsupported profile version {} (expected {PROFILE_VERSION})",
                file.version
            )));
        }
        let default_pair = file.pool.resolve_pair(&file.default_pair.model, &file.default_pair.tool)?;
        let mut profile = ClusterProfile::new(
            file.cluster_model,
            file.encoder,
            file.pool,
            file.utility,
            default_pair,
        )?;
        for row in file.stats {
            if row.cluster >= profile.cluster_model.k {
                return Err(ProfileError::InvalidCluster {
                    cluster_id: row.cluster,
                    k: profile.cluster_model.k,
                });
            }
            let pair = profile.pool.resolve_pair(&row.model, &row.tool)?;
            let cell = PairStats {
                solved: row.solved,
                total: row.total,
                in_tokens: row.in_tokens,
                out_tokens: row.out_tokens,
            };
            cell.check().map_err(ProfileError::Schema)?;
            let key = (row.cluster, profile.pool.pair_index(pair));
            if profile.stats.insert(key, cell).is_some() {
                return Err(ProfileError::Schema(format!(
                    "duplicate stats row for cluster {} pair {}@@{}",
                    row.cluster, row.model, row.tool
                )));
            }
        }
        Ok(profile)
    }
}

/// Which pairs profiling executes per training query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairsMode {
    /// Every pair on every query.
    All,
    /// A per-query random subset of this size.
    Sample(usize),
}

/// Profile-fitting knobs. `cost_scale: None` with `raw_cost: false` freezes
/// the maximum observed cost into the profile.
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub k: usize,
    pub seed: u64,
    pub alpha: f64,
    pub min_support: u64,
    pub raw_cost: bool,
    pub cost_scale: Option<f64>,
    pub pairs: PairsMode,
    pub default_pair: Option<(String, String)>,
}

impl FitOptions {
    pub fn new(k: usize, seed: u64) -> FitOptions {
        FitOptions {
            k,
            seed,
            alpha: 0.5,
            min_support: 1,
            raw_cost: false,
            cost_scale: None,
            pairs: PairsMode::All,
            default_pair: None,
        }
    }
}

/// Whether an observation solved the task: simulated backends say so
/// explicitly with a `SOLVED:` prefix; otherwise a known gold label is
/// checked for containment in the observation.
pub fn observation_solves(observation_text: &str, gold: Option<&str>) -> bool {
    if observation_text.starts_with("SOLVED:") {
        return true;
    }
    match gold {
        Some(gold) => outcome_reward(observation_text, gold, Matcher::Containment) == 1.0,
        None => false,
    }
}

/// End-to-end profile fitting: embed and cluster the training queries, run
/// the selected pairs on each against the executor, accumulate statistics,
/// and freeze the cost scale. Fully deterministic in `options.seed`.
pub fn fit_profile(
    tasks: &[TaskContext],
    encoder: &EncoderConfig,
    executor: &Executor,
    options: &FitOptions,
) -> Result<ClusterProfile, ProfileError> {
    let pool = executor.pool();
    let queries: Vec<&str> = tasks.iter().map(|t| t.query.as_str()).collect();
    let vectors = batch_encode(encoder, &queries)?;
    let kmeans = KmeansConfig::new(options.k, stream_seed(options.seed, "profile-kmeans"));
    let model = fit_kmeans(&vectors, &kmeans)?;
    let labels: Vec<usize> = vectors
        .iter()
        .map(|v| assign(&model, v).map(|a| a.cluster_id))
        .collect::<Result<_, _>>()?;

    let default_pair = match &options.default_pair {
        Some((model_name, tool_name)) => pool.resolve_pair(model_name, tool_name)?,
        None => pool.pair_at(0),
    };
    let utility_config = UtilityConfig {
        alpha: options.alpha,
        cost_scale: 1.0,
        min_support: options.min_support,
    };
    let mut profile =
        ClusterProfile::new(model, encoder.clone(), pool.clone(), utility_config, default_pair)?;

    let pair_count = pool.pair_count();
    for (query_index, task) in tasks.iter().enumerate() {
        let pair_indices: Vec<usize> = match options.pairs {
            PairsMode::All => (0..pair_count).collect(),
            PairsMode::Sample(n) => {
                let mut rng = stream(
                    options.seed,
                    &[label_salt("profile-pair-sample"), query_index as u64],
                );
                let mut picked =
                    rand::seq::index::sample(&mut rng, pair_count, n.min(pair_count)).into_vec();
                picked.sort_unstable();
                picked
            }
        };
        for pair_index in pair_indices {
            let mut rng = stream(
                options.seed,
                &[label_salt("profile-fit"), query_index as u64, pair_index as u64],
            );
            let pair = pool.pair_at(pair_index);
            let observation = executor.execute_pair(pair, &task.query, task, &mut rng);
            let solved = observation_solves(&observation.text, task.gold.as_deref());
            profile.record_observation(
                labels[query_index],
                pair,
                solved,
                observation.in_tokens,
                observation.out_tokens,
            )?;
        }
    }

    let cost_scale = if options.raw_cost {
        1.0
    } else {
        options
            .cost_scale
            .or_else(|| profile.max_observed_cost().filter(|c| *c > 0.0))
            .unwrap_or(1.0)
    };
    profile.set_utility_config(UtilityConfig { cost_scale, ..profile.utility })?;
    Ok(profile)
}

fn stream_seed(root: u64, label: &str) -> u64 {
    crate::rng::derive_seed(root, &[label_salt(label)])
}
