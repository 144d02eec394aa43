//! Routing engine for model-tool pools.
//!
//! The crate has two routing paths that share a common registry of models,
//! tools, and prices ([`pool`]):
//!
//! 1. **Training-free cluster routing.** Queries are embedded ([`embed`]),
//!    clustered with k-means ([`cluster`]), and per-(cluster, pair) accuracy
//!    and cost statistics drive a utility argmax ([`profile`]).
//! 2. **Multi-step episodic routing.** A policy emits think / route / answer
//!    actions inside a budgeted environment ([`env`]) that executes model-tool
//!    pairs against simulated or live backends, producing tagged trajectories
//!    ([`traj`]) scored by a composite reward ([`reward`]). A tabular softmax
//!    policy is trained by policy gradient with a KL anchor ([`policy`]) and
//!    compared against baselines with pass@k / self-consistency / cost
//!    metrics ([`eval`]).
//!
//! The `atlas` binary (see [`cli`]) wires both paths into reproducible
//! commands; every stochastic component is seeded through [`rng`].

pub mod cli;
pub mod cluster;
pub mod embed;
pub mod env;
pub mod eval;
pub mod net;
pub mod policy;
pub mod pool;
pub mod profile;
pub mod reward;
pub mod rng;
pub mod traj;

pub use cli::{AppConfig, RunManifest, SimFile};
pub use cluster::{assign, fit_kmeans, inertia, ClusterAssignment, ClusterModel, KmeansConfig};
pub use embed::{batch_encode, encode, EmbeddingVector, EncoderConfig};
pub use env::{
    run_episode, step, EpisodeOptions, EpisodeRecord, EpisodeState, Executor, ExecutorConfig,
    ExecutorMode, LiveConfig, Observation, SimPoolConfig, TaskContext,
};
pub use eval::{
    compare_routers, evaluate_policy, ks_up_to, majority_vote, pass_at_k, self_consistency,
    usage_report, Comparison, EvalDataset, EvalOptions, EvalRecord, MetricReport, OutcomeMatrix,
    UsageReport, UsageStats,
};
pub use policy::{
    action_distribution, entropy, kl_divergence, make_policy, policy_gradient_update,
    sample_action, train_policy, ActionIndex, Contexter, PolicyCheckpoint, PolicyContext,
    PolicyDeps, PolicyKind, RoutePolicy, SoftmaxPolicyParams, TrainDiagnostics, TrainOutcome,
    TrainRow, TrainerConfig,
};
pub use pool::{build_pool, ModelSpec, ModelToolPair, PriceSheet, RoutingPool, ToolKind, ToolSpec};
pub use profile::{
    empirical_accuracy, empirical_cost, fit_profile, observation_solves, utility, ClusterProfile,
    FitOptions, PairStats, PairsMode, RoutingDecision, UtilityConfig,
};
pub use reward::{
    composite_reward, format_reward, format_reward_text, outcome_reward, selection_reward,
    Matcher, OptimalModelTable, RewardBreakdown, RewardWeights,
};
pub use traj::{
    parse, render, render_segments, trajectory_violations, validate_structure, FormatViolation,
    Segment, Trajectory, ViolationRule,
};
