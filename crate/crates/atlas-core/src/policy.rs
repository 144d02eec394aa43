//! Routing policies over the episode action space, and the policy-gradient
//! trainer for the tabular softmax policy.
//!
//! The action space has `pair_count + 1` entries: one route action per
//! model-tool pair plus a final answer-now action. The trainable policy is a
//! logit table over compressed contexts (cluster id, route turn, did the
//! last route fail), optimized by REINFORCE with a batch-mean baseline and a
//! closed-form KL penalty toward a frozen reference distribution.
//!
//! The tabular policy samples no reasoning text of its own; the episode
//! writer inserts a fixed think block before each action so the structural
//! rules stay satisfiable. That substitution trades away learned reasoning
//! on purpose: routing behavior is the subject here, prose is not.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{assign, ClusterModel};
use crate::embed::{encode, EncoderConfig};
use crate::env::{run_episode, EpisodeOptions, EpisodeRecord, Executor, TaskContext};
use crate::profile::ClusterProfile;
use crate::reward::OptimalModelTable;
use crate::rng::{label_salt, stream};
use crate::pool::RoutingPool;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Index into the episode action space: `0..pair_count` routes to that pair,
/// `pair_count` answers now.
pub type ActionIndex = usize;

/// The compressed state a tabular policy conditions on: which query cluster
/// the episode belongs to, the current route turn, and whether the last
/// route came back unsolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyContext {
    pub cluster_id: usize,
    pub turn: usize,
    pub last_step_failed: bool,
}

/// A routing policy: given the query and episode position, pick the next
/// action. Implementations must be deterministic given the RNG state.
pub trait RoutePolicy {
    fn decide(
        &self,
        query: &str,
        turn: usize,
        last_step_failed: bool,
        rng: &mut ChaCha8Rng,
    ) -> (PolicyContext, ActionIndex);
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("context (cluster {cluster_id}, turn {turn}, failed {failed}) is outside the {contexts}-row table")]
    ContextOutOfRange { cluster_id: usize, turn: usize, failed: bool, contexts: usize },
    #[error("invalid policy parameters: {0}")]
    BadParams(String),
    #[error("invalid trainer configuration: {0}")]
    BadConfig(String),
    #[error("cannot update from an empty batch")]
    EmptyBatch,
    #[error("cannot train without tasks")]
    EmptyTasks,
    #[error("policy and reference tables have different shapes")]
    ShapeMismatch,
    #[error("checkpoint does not match: {0}")]
    CheckpointMismatch(String),
    #[error("checkpoint schema: {0}")]
    Schema(String),
    #[error("cannot access {path}: {detail}")]
    Io { path: String, detail: String },
}

/// How queries map to the cluster id inside [`PolicyContext`]: either the
/// fitted cluster geometry or, without one, a stable hash bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contexter {
    HashBucket { buckets: usize },
    Cluster { model: ClusterModel, encoder: EncoderConfig },
}

impl Contexter {
    pub fn hash(buckets: usize) -> Result<Contexter, PolicyError> {
        if buckets == 0 {
            return Err(PolicyError::BadConfig("hash contexter needs at least one bucket".into()));
        }
        Ok(Contexter::HashBucket { buckets })
    }

    pub fn cluster(model: ClusterModel, encoder: EncoderConfig) -> Contexter {
        Contexter::Cluster { model, encoder }
    }

    pub fn clusters(&self) -> usize {
        match self {
            Contexter::HashBucket { buckets } => (*buckets).max(1),
            Contexter::Cluster { model, .. } => model.k,
        }
    }

    /// Cluster id for a query. Never fails: a query the encoder rejects
    /// lands in cluster 0.
    pub fn cluster_of(&self, query: &str) -> usize {
        match self {
            Contexter::HashBucket { buckets } => {
                (label_salt(query) % (*buckets).max(1) as u64) as usize
            }
            Contexter::Cluster { model, encoder } => encode(encoder, query)
                .ok()
                .and_then(|v| assign(model, &v).ok())
                .map_or(0, |a| a.cluster_id),
        }
    }
}

/// Logit table for the trainable policy. Rows are contexts in the fixed
/// order `cluster_id * (t_max + 1) * 2 + turn * 2 + failed_flag`; columns
/// are actions (`pair_count` routes, then answer-now).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicyParams {
    pub clusters: usize,
    pub t_max: usize,
    pub actions: usize,
    pub logits: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl SoftmaxPolicyParams {
    /// A fresh table of zero logits: the uniform policy, and the usual
    /// frozen reference.
    pub fn zeros(
        clusters: usize,
        t_max: usize,
        actions: usize,
        temperature: f64,
    ) -> Result<SoftmaxPolicyParams, PolicyError> {
        let params = SoftmaxPolicyParams {
            clusters,
            t_max,
            actions,
            logits: vec![vec![0.0; actions]; clusters * (t_max + 1) * 2],
            temperature,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn contexts(&self) -> usize {
        self.clusters * (self.t_max + 1) * 2
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.clusters == 0 {
            return Err(PolicyError::BadParams("cluster count must be positive".into()));
        }
        if self.actions < 2 {
            return Err(PolicyError::BadParams(
                "need at least one route action plus the answer action".into(),
            ));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PolicyError::BadParams(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.logits.len() != self.contexts() {
            return Err(PolicyError::BadParams(format!(
                "logit table has {} rows, expected {}",
                self.logits.len(),
                self.contexts()
            )));
        }
        for row in &self.logits {
            if row.len() != self.actions {
                return Err(PolicyError::BadParams(format!(
                    "logit row has {} entries, expected {}",
                    row.len(),
                    self.actions
                )));
            }
            if row.iter().any(|l| !l.is_finite()) {
                return Err(PolicyError::BadParams("logits must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn context_index(&self, ctx: PolicyContext) -> Result<usize, PolicyError> {
        if ctx.cluster_id >= self.clusters || ctx.turn > self.t_max {
            return Err(PolicyError::ContextOutOfRange {
                cluster_id: ctx.cluster_id,
                turn: ctx.turn,
                failed: ctx.last_step_failed,
                contexts: self.contexts(),
            });
        }
        Ok(ctx.cluster_id * (self.t_max + 1) * 2 + ctx.turn * 2 + usize::from(ctx.last_step_failed))
    }
}

fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, l| m.max(l / temperature));
    let exps: Vec<f64> = logits.iter().map(|l| (l / temperature - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// The policy's categorical distribution over actions at one context:
/// `softmax(logits[ctx] / temperature)`.
pub fn action_distribution(
    params: &SoftmaxPolicyParams,
    ctx: PolicyContext,
) -> Result<Vec<f64>, PolicyError> {
    let index = params.context_index(ctx)?;
    Ok(softmax_scaled(&params.logits[index], params.temperature))
}

/// One categorical draw from [`action_distribution`]; deterministic given
/// the RNG state.
pub fn sample_action(
    params: &SoftmaxPolicyParams,
    ctx: PolicyContext,
    rng: &mut ChaCha8Rng,
) -> Result<ActionIndex, PolicyError> {
    let probs = action_distribution(params, ctx)?;
    Ok(sample_categorical(&probs, rng))
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (index, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return index;
        }
    }
    probs.len() - 1
}

/// `-sum p ln p`, with `0 ln 0 = 0`.
pub fn entropy(distribution: &[f64]) -> f64 {
    distribution.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum()
}

/// `KL(p || q) = sum p ln(p/q)`, with zero contribution where `p = 0`.
/// Infinite when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| if *qi > 0.0 { pi * (pi / qi).ln() } else { f64::INFINITY })
        .sum()
}

/// Trainer knobs. The learning rate is sized for the tabular policy, where
/// a few hundred batches must carry logits from uniform to near-greedy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub kl_beta: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> TrainerConfig {
        TrainerConfig {
            learning_rate: 0.5,
            kl_beta: 0.001,
            batch_size: 32,
            total_steps: 250,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(PolicyError::BadConfig("learning_rate must be positive".into()));
        }
        if !(self.kl_beta.is_finite() && self.kl_beta >= 0.0) {
            return Err(PolicyError::BadConfig("kl_beta must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(PolicyError::BadConfig("batch_size and total_steps must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(PolicyError::BadConfig("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Per-update training diagnostics, computed against the pre-update table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainDiagnostics {
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub mean_kl: f64,
}

/// One learning-curve row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub mean_kl: f64,
}

/// One REINFORCE-with-baseline ascent step with a KL penalty toward
/// `ref_params`, over the per-step (context, action) logs of a batch of
/// episodes. Returns the updated table and the batch diagnostics.
pub fn policy_gradient_update(
    params: &SoftmaxPolicyParams,
    batch: &[EpisodeRecord],
    ref_params: &SoftmaxPolicyParams,
    config: &TrainerConfig,
) -> Result<(SoftmaxPolicyParams, TrainDiagnostics), PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    params.validate()?;
    config.validate()?;
    if ref_params.clusters != params.clusters
        || ref_params.t_max != params.t_max
        || ref_params.actions != params.actions
    {
        return Err(PolicyError::ShapeMismatch);
    }

    let tau = params.temperature;
    let baseline = batch.iter().map(|r| r.reward.total).sum::<f64>() / batch.len() as f64;
    let scale = 1.0 / batch.len() as f64;

    let mut gradient = vec![vec![0.0f64; params.actions]; params.contexts()];
    let mut visited: BTreeMap<usize, (Vec<f64>, f64)> = BTreeMap::new();
    let mut step_count = 0usize;
    let mut entropy_sum = 0.0;
    let mut kl_sum = 0.0;

    for record in batch {
        let advantage = record.reward.total - baseline;
        for step in &record.steps {
            let index = params.context_index(step.context)?;
            if step.action >= params.actions {
                return Err(PolicyError::BadParams(format!(
                    "logged action {} is outside the {}-action space",
                    step.action, params.actions
                )));
            }
            let (probs, kl) = visited
                .entry(index)
                .or_insert_with(|| {
                    let probs = softmax_scaled(&params.logits[index], tau);
                    let ref_probs = softmax_scaled(&ref_params.logits[index], ref_params.temperature);
                    let kl = kl_divergence(&probs, &ref_probs);
                    (probs, kl)
                })
                .clone();

            step_count += 1;
            entropy_sum += entropy(&probs);
            kl_sum += kl;

            let ref_probs = softmax_scaled(&ref_params.logits[index], ref_params.temperature);
            for j in 0..params.actions {
                let indicator = if j == step.action { 1.0 } else { 0.0 };
                let pg = advantage * (indicator - probs[j]) / tau;
                // d KL / d logit_j in closed form for the softmax family.
                let kl_grad = if probs[j] > 0.0 {
                    probs[j] * ((probs[j] / ref_probs[j]).ln() - kl) / tau
                } else {
                    0.0
                };
                gradient[index][j] += scale * (pg - config.kl_beta * kl_grad);
            }
        }
    }

    let mut updated = params.clone();
    for (row, grad_row) in updated.logits.iter_mut().zip(&gradient) {
        for (logit, g) in row.iter_mut().zip(grad_row) {
            *logit += config.learning_rate * g;
        }
    }
    updated.validate()?;

    let steps = step_count.max(1) as f64;
    let diagnostics = TrainDiagnostics {
        mean_reward: baseline,
        mean_entropy: entropy_sum / steps,
        mean_kl: kl_sum / steps,
    };
    Ok((updated, diagnostics))
}

/// The trainable policy: sample from the logit table at the query's
/// compressed context.
pub struct SoftmaxRouterPolicy<'a> {
    pub params: &'a SoftmaxPolicyParams,
    pub contexter: &'a Contexter,
}

impl RoutePolicy for SoftmaxRouterPolicy<'_> {
    fn decide(
        &self,
        query: &str,
        turn: usize,
        last_step_failed: bool,
        rng: &mut ChaCha8Rng,
    ) -> (PolicyContext, ActionIndex) {
        let ctx = PolicyContext {
            cluster_id: self.contexter.cluster_of(query).min(self.params.clusters - 1),
            turn: turn.min(self.params.t_max),
            last_step_failed,
        };
        let action = sample_action(self.params, ctx, rng)
            .expect("clamped context always lies inside the table");
        (ctx, action)
    }
}

/// Uniform baseline: route to a uniformly random pair once, then answer.
pub struct RandomPolicy {
    pub pairs: usize,
}

impl RoutePolicy for RandomPolicy {
    fn decide(
        &self,
        _query: &str,
        turn: usize,
        last_step_failed: bool,
        rng: &mut ChaCha8Rng,
    ) -> (PolicyContext, ActionIndex) {
        let ctx = PolicyContext { cluster_id: 0, turn, last_step_failed };
        if turn == 0 {
            (ctx, rng.random_range(0..self.pairs))
        } else {
            (ctx, self.pairs)
        }
    }
}

/// Training-free baseline: one route through the profile's utility argmax,
/// then answer.
pub struct ClusterGreedyPolicy<'a> {
    pub profile: &'a ClusterProfile,
}

impl ClusterGreedyPolicy<'_> {
    fn greedy(&self, query: &str) -> (usize, ActionIndex) {
        match self.profile.route_query(query) {
            Ok(decision) => (decision.cluster_id, self.profile.pool().pair_index(decision.pair)),
            // A query the router cannot place answers immediately.
            Err(_) => (0, self.profile.pool().pair_count()),
        }
    }
}

impl RoutePolicy for ClusterGreedyPolicy<'_> {
    fn decide(
        &self,
        query: &str,
        turn: usize,
        last_step_failed: bool,
        _rng: &mut ChaCha8Rng,
    ) -> (PolicyContext, ActionIndex) {
        let (cluster_id, pair_action) = self.greedy(query);
        let ctx = PolicyContext { cluster_id, turn, last_step_failed };
        if turn == 0 {
            (ctx, pair_action)
        } else {
            (ctx, self.profile.pool().pair_count())
        }
    }
}

/// Exploration wrapper over the greedy router: with probability epsilon the
/// first route goes to a uniformly random pair instead. Epsilon zero makes
/// it draw-for-draw identical to [`ClusterGreedyPolicy`].
pub struct EpsilonGreedyPolicy<'a> {
    pub profile: &'a ClusterProfile,
    pub epsilon: f64,
}

impl RoutePolicy for EpsilonGreedyPolicy<'_> {
    fn decide(
        &self,
        query: &str,
        turn: usize,
        last_step_failed: bool,
        rng: &mut ChaCha8Rng,
    ) -> (PolicyContext, ActionIndex) {
        let greedy = ClusterGreedyPolicy { profile: self.profile };
        let (ctx, action) = greedy.decide(query, turn, last_step_failed, rng);
        if turn == 0 && self.epsilon > 0.0 && rng.random_bool(self.epsilon.clamp(0.0, 1.0)) {
            let pairs = self.profile.pool().pair_count();
            return (ctx, rng.random_range(0..pairs));
        }
        (ctx, action)
    }
}

/// Which policy to build, parsed from names like `random`, `cluster`,
/// `softmax`, or `epsilon:0.1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind {
    Random,
    ClusterGreedy,
    Softmax,
    EpsilonGreedy(f64),
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<PolicyKind, String> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "cluster" => Ok(PolicyKind::ClusterGreedy),
            "softmax" => Ok(PolicyKind::Softmax),
            _ => match s.strip_prefix("epsilon:") {
                Some(eps) => {
                    let eps: f64 = eps
                        .parse()
                        .map_err(|_| format!("bad epsilon in policy kind {s:?}"))?;
                    if !(0.0..=1.0).contains(&eps) {
                        return Err(format!("epsilon must be in [0, 1], got {eps}"));
                    }
                    Ok(PolicyKind::EpsilonGreedy(eps))
                }
                None => Err(format!(
                    "unknown policy kind {s:?} (expected random, cluster, softmax, or epsilon:<p>)"
                )),
            },
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PolicyKind::Random => write!(f, "random"),
            PolicyKind::ClusterGreedy => write!(f, "cluster"),
            PolicyKind::Softmax => write!(f, "softmax"),
            PolicyKind::EpsilonGreedy(eps) => write!(f, "epsilon:{eps}"),
        }
    }
}

/// Artifacts a policy may need; pass what you have, [`make_policy`] reports
/// what is missing.
#[derive(Clone, Copy, Default)]
pub struct PolicyDeps<'a> {
    pub pool: Option<&'a RoutingPool>,
    pub profile: Option<&'a ClusterProfile>,
    pub params: Option<&'a SoftmaxPolicyParams>,
    pub contexter: Option<&'a Contexter>,
}

pub fn make_policy<'a>(
    kind: PolicyKind,
    deps: PolicyDeps<'a>,
) -> Result<Box<dyn RoutePolicy + 'a>, PolicyError> {
    match kind {
        PolicyKind::Random => {
            let pool = deps
                .pool
                .or(deps.profile.map(|p| p.pool()))
                .ok_or_else(|| PolicyError::BadConfig("random policy needs a pool".into()))?;
            Ok(Box::new(RandomPolicy { pairs: pool.pair_count() }))
        }
        PolicyKind::ClusterGreedy => {
            let profile = deps
                .profile
                .ok_or_else(|| PolicyError::BadConfig("cluster policy needs a fitted profile".into()))?;
            Ok(Box::new(ClusterGreedyPolicy { profile }))
        }
        PolicyKind::EpsilonGreedy(epsilon) => {
            let profile = deps
                .profile
                .ok_or_else(|| PolicyError::BadConfig("epsilon policy needs a fitted profile".into()))?;
            Ok(Box::new(EpsilonGreedyPolicy { profile, epsilon }))
        }
        PolicyKind::Softmax => {
            let params = deps
                .params
                .ok_or_else(|| PolicyError::BadConfig("softmax policy needs trained parameters".into()))?;
            let contexter = deps
                .contexter
                .ok_or_else(|| PolicyError::BadConfig("softmax policy needs a contexter".into()))?;
            Ok(Box::new(SoftmaxRouterPolicy { params, contexter }))
        }
    }
}

/// Everything a finished training run hands back.
pub struct TrainOutcome {
    pub params: SoftmaxPolicyParams,
    pub curve: Vec<TrainRow>,
}

/// Synchronous batch training: per step, roll out `batch_size` episodes
/// against a read-only snapshot of the table, then apply one
/// [`policy_gradient_update`]. Deterministic in `config.seed`.
pub fn train_policy(
    tasks: &[TaskContext],
    executor: &Executor,
    table: Option<&OptimalModelTable>,
    contexter: &Contexter,
    config: &TrainerConfig,
    episode_options: &EpisodeOptions,
) -> Result<TrainOutcome, PolicyError> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(PolicyError::EmptyTasks);
    }
    let actions = executor.pool().pair_count() + 1;
    let mut params = SoftmaxPolicyParams::zeros(
        contexter.clusters(),
        episode_options.t_max,
        actions,
        config.temperature,
    )?;
    let ref_params = params.clone();
    let mut curve = Vec::with_capacity(config.total_steps);

    for step_index in 0..config.total_steps {
        let mut task_rng =
            stream(config.seed, &[label_salt("train-tasks"), step_index as u64]);
        let policy = SoftmaxRouterPolicy { params: &params, contexter };
        let batch: Vec<EpisodeRecord> = (0..config.batch_size)
            .map(|slot| {
                let task = &tasks[task_rng.random_range(0..tasks.len())];
                let mut episode_rng = stream(
                    config.seed,
                    &[label_salt("train-episode"), step_index as u64, slot as u64],
                );
                run_episode(&policy, task, executor, table, episode_options, &mut episode_rng)
            })
            .collect();
        drop(policy);
        let (updated, diagnostics) = policy_gradient_update(&params, &batch, &ref_params, config)?;
        params = updated;
        curve.push(TrainRow {
            step: step_index,
            mean_reward: diagnostics.mean_reward,
            mean_entropy: diagnostics.mean_entropy,
            mean_kl: diagnostics.mean_kl,
        });
    }

    Ok(TrainOutcome { params, curve })
}

/// On-disk snapshot of a trained policy, bound to the pool it was trained
/// over by fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub pool_fingerprint: String,
    pub t_max: usize,
    pub clusters: usize,
    pub actions: usize,
    pub contexter: Contexter,
    pub logits: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl PolicyCheckpoint {
    pub fn new(
        params: &SoftmaxPolicyParams,
        contexter: &Contexter,
        pool: &RoutingPool,
    ) -> PolicyCheckpoint {
        PolicyCheckpoint {
            version: CHECKPOINT_VERSION,
            pool_fingerprint: pool.fingerprint(),
            t_max: params.t_max,
            clusters: params.clusters,
            actions: params.actions,
            contexter: contexter.clone(),
            logits: params.logits.clone(),
            temperature: params.temperature,
        }
    }

    /// Validates the checkpoint against the pool it will route over and
    /// hands back usable parameters.
    pub fn resolve(self, pool: &RoutingPool) -> Result<(SoftmaxPolicyParams, Contexter), PolicyError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Schema(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.pool_fingerprint != pool.fingerprint() {
            return Err(PolicyError::CheckpointMismatch(
                "the checkpoint was trained over a different pool".into(),
            ));
        }
        if self.actions != pool.pair_count() + 1 {
            return Err(PolicyError::CheckpointMismatch(format!(
                "checkpoint has {} actions but the pool implies {}",
                self.actions,
                pool.pair_count() + 1
            )));
        }
        if self.clusters != self.contexter.clusters() {
            return Err(PolicyError::CheckpointMismatch(format!(
                "checkpoint table covers {} clusters but its contexter produces {}",
                self.clusters,
                self.contexter.clusters()
            )));
        }
        let params = SoftmaxPolicyParams {
            clusters: self.clusters,
            t_max: self.t_max,
            actions: self.actions,
            logits: self.logits,
            temperature: self.temperature,
        };
        params.validate()?;
        Ok((params, self.contexter))
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let text = serde_json::to_string_pretty(self).expect("checkpoint serialization cannot fail");
        std::fs::write(path, text)
            .map_err(|e| PolicyError::Io { path: path.display().to_string(), detail: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<PolicyCheckpoint, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Io { path: path.display().to_string(), detail: e.to_string() })?;
        serde_json::from_str(&text).map_err(|e| PolicyError::Schema(e.to_string()))
    }
}
