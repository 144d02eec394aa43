//! Multi-step routing environment.
//!
//! An episode starts from a query, loops policy decisions through
//! [`step`] (think, route to a model-tool pair, or answer) and ends with
//! an answer (voluntary, or forced once the route budget is spent). Routes
//! execute against the configured backend: a simulated pool with planted
//! solve probabilities, or live HTTP endpoints. Every episode produces a
//! renderable trajectory, a scored reward breakdown, and an exact cost
//! ledger, and is a pure function of its inputs plus the RNG stream it is
//! handed, so runs reproduce byte-for-byte.

pub mod calc;
mod live;
mod sim;

pub use live::LiveConfig;
pub use sim::{DomainConfig, SimPoolConfig, TokenModel};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{ActionIndex, PolicyContext, RoutePolicy};
use crate::pool::{Cost, ModelToolPair, RoutingPool, ToolKind};
use crate::reward::{
    composite_reward, format_reward, outcome_reward, selection_reward, Matcher, OptimalModelTable,
    RewardBreakdown, RewardWeights,
};
use crate::traj::{render, Segment, Trajectory};

/// Route-turn budget per episode.
pub const DEFAULT_T_MAX: usize = 4;
/// Observation cap, counted in whitespace-delimited tokens.
pub const DEFAULT_MAX_OBS_TOKENS: usize = 2048;
/// Reasoning text inserted before each action. The tabular policies carry no
/// generator, so the writer supplies a fixed think block to keep the
/// mandatory-reasoning rule satisfiable.
pub const CANONICAL_THINK: &str = "Weighing the remaining budget and prior observations before acting.";

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid executor configuration: {0}")]
    BadConfig(String),
    #[error("{what}: probability {value} is outside [0, 1]")]
    BadProbability { what: String, value: f64 },
    #[error("{what}: pair label {label:?} does not resolve in the pool")]
    BadPairLabel { what: String, label: String },
    #[error("live mode has no endpoint for model {model:?}")]
    MissingEndpoint { model: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("episode is already terminal")]
    Terminal,
    #[error("route budget of {t_max} turns is exhausted")]
    BudgetExhausted { t_max: usize },
}

/// The query being worked plus its ground truth, when known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub query_id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

/// What came back from executing one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    /// Pair label `model@@tool` that produced this observation.
    pub source: String,
    pub in_tokens: u64,
    pub out_tokens: u64,
    pub truncated: bool,
}

/// One (action, observation) record; only routes carry observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub action: Segment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
}

/// Mutable episode state: the query, the append-only context, and the count
/// of route turns taken.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub query: String,
    pub context: Vec<ContextEntry>,
    pub turn: usize,
    terminal: bool,
}

impl EpisodeState {
    pub fn new(query: impl Into<String>) -> EpisodeState {
        EpisodeState { query: query.into(), context: Vec::new(), turn: 0, terminal: false }
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Flattens the context into trajectory segments: each action verbatim,
    /// with an information block after every observed route.
    pub fn segments(&self) -> Vec<Segment> {
        let mut segments = Vec::new();
        for entry in &self.context {
            segments.push(entry.action.clone());
            if let Some(obs) = &entry.observation {
                segments.push(Segment::information(obs.text.clone()));
            }
        }
        segments
    }
}

/// A policy-chosen action in executable form.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Think(String),
    Route { pair: ModelToolPair, input: String },
    Answer(String),
}

/// Which backend routes execute against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutorMode {
    Simulated(SimPoolConfig),
    Live(LiveConfig),
}

/// Executor settings shared by both modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub mode: ExecutorMode,
    #[serde(default = "default_max_obs_tokens")]
    pub max_obs_tokens: usize,
    #[serde(default)]
    pub code_exec_enabled: bool,
    /// Command (argv) the code-interpreter tool pipes snippets into.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_command: Option<Vec<String>>,
    #[serde(default = "default_code_timeout_ms")]
    pub code_timeout_ms: u64,
}

fn default_max_obs_tokens() -> usize {
    DEFAULT_MAX_OBS_TOKENS
}

fn default_code_timeout_ms() -> u64 {
    10_000
}

impl ExecutorConfig {
    pub fn simulated(sim: SimPoolConfig) -> ExecutorConfig {
        ExecutorConfig {
            mode: ExecutorMode::Simulated(sim),
            max_obs_tokens: DEFAULT_MAX_OBS_TOKENS,
            code_exec_enabled: false,
            code_command: None,
            code_timeout_ms: default_code_timeout_ms(),
        }
    }

    pub fn live(live: LiveConfig) -> ExecutorConfig {
        ExecutorConfig {
            mode: ExecutorMode::Live(live),
            max_obs_tokens: DEFAULT_MAX_OBS_TOKENS,
            code_exec_enabled: false,
            code_command: None,
            code_timeout_ms: default_code_timeout_ms(),
        }
    }
}

/// Scores a candidate model output for the best-of-n reranking tool.
pub trait CandidateScorer: Send + Sync {
    fn score(&self, candidate: &str, task: &TaskContext) -> f64;
}

/// Token-set overlap with the gold label; 0 when no gold exists.
pub struct GoldSimilarity;

impl CandidateScorer for GoldSimilarity {
    fn score(&self, candidate: &str, task: &TaskContext) -> f64 {
        let Some(gold) = task.gold.as_deref() else {
            return 0.0;
        };
        let set = |s: &str| {
            s.to_lowercase().split_whitespace().map(str::to_string).collect::<std::collections::BTreeSet<_>>()
        };
        let a = set(candidate);
        let b = set(gold);
        if a.is_empty() && b.is_empty() {
            return 0.0;
        }
        let inter = a.intersection(&b).count() as f64;
        let union = a.union(&b).count() as f64;
        inter / union
    }
}

/// Executes pairs for episodes. Construction validates the configuration
/// against the pool; execution itself never fails: backend problems become
/// structured `ERROR:` observations so episodes always complete.
pub struct Executor {
    pool: RoutingPool,
    config: ExecutorConfig,
    warnings: Vec<String>,
    prm_scorer: Box<dyn CandidateScorer>,
}

impl Executor {
    pub fn new(pool: RoutingPool, config: ExecutorConfig) -> Result<Executor, EnvError> {
        let warnings = match &config.mode {
            ExecutorMode::Simulated(sim) => sim.validate(&pool)?,
            ExecutorMode::Live(live) => {
                for model in pool.models() {
                    if live.endpoint_for(model).is_none() {
                        return Err(EnvError::MissingEndpoint { model: model.name.clone() });
                    }
                }
                Vec::new()
            }
        };
        if config.max_obs_tokens == 0 {
            return Err(EnvError::BadConfig("max_obs_tokens must be positive".into()));
        }
        Ok(Executor { pool, config, warnings, prm_scorer: Box::new(GoldSimilarity) })
    }

    pub fn with_prm_scorer(mut self, scorer: Box<dyn CandidateScorer>) -> Executor {
        self.prm_scorer = scorer;
        self
    }

    pub fn pool(&self) -> &RoutingPool {
        &self.pool
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    /// Soft findings from configuration validation (for example a domain
    /// without a unique best pair).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Runs one pair on the input and shapes the result into an observation:
    /// tag closers neutralized, then truncated to the token cap. Backend
    /// errors come back as `ERROR:` text with zero token cost.
    pub fn execute_pair(
        &self,
        pair: ModelToolPair,
        input: &str,
        task: &TaskContext,
        rng: &mut ChaCha8Rng,
    ) -> Observation {
        let label = self.pool.pair_label(pair);
        let outcome = self.dispatch(pair, &label, input, task, rng);
        let (text, in_tokens, out_tokens) = match outcome {
            Ok(parts) => parts,
            Err(detail) => (format!("ERROR: {detail}"), 0, 0),
        };
        let sanitized = sanitize_block_text(&text);
        let (text, was_truncated) = truncate_to_words(&sanitized, self.config.max_obs_tokens);
        Observation { text, source: label, in_tokens, out_tokens, truncated: was_truncated }
    }

    fn dispatch(
        &self,
        pair: ModelToolPair,
        label: &str,
        input: &str,
        task: &TaskContext,
        rng: &mut ChaCha8Rng,
    ) -> Result<(String, u64, u64), String> {
        let tool = self.pool.tool(pair.tool);
        let model = self.pool.model(pair.model);
        match tool.kind {
            ToolKind::Calculator => calc::calculator_output(input, &tool.config)
                .map(|out| {
                    let (i, o) = (word_count(input), word_count(&out));
                    (out, i, o)
                })
                .map_err(|e| format!("calculator: {e}")),
            ToolKind::CodeInterpreter => {
                if !self.config.code_exec_enabled {
                    return Err("code execution is disabled for this run".into());
                }
                let Some(command) = &self.config.code_command else {
                    return Err("code execution is enabled but no command is configured".into());
                };
                live::run_code(command, self.config.code_timeout_ms, input)
            }
            ToolKind::Simulated => match &self.config.mode {
                ExecutorMode::Simulated(sim) => Ok(sim::simulate_pair(sim, label, task, rng)),
                ExecutorMode::Live(_) => {
                    Err(format!("pair {label} uses a simulated tool but the executor is live"))
                }
            },
            ToolKind::None | ToolKind::WebSearch | ToolKind::Prm => match &self.config.mode {
                ExecutorMode::Simulated(sim) => Ok(sim::simulate_pair(sim, label, task, rng)),
                ExecutorMode::Live(live) => {
                    let endpoint = live
                        .endpoint_for(model)
                        .ok_or_else(|| format!("no endpoint for model {:?}", model.name))?;
                    match tool.kind {
                        ToolKind::None => live::chat(live, &endpoint, &model.name, input),
                        ToolKind::WebSearch => live::search(live, input),
                        ToolKind::Prm => live::best_of_n(
                            live,
                            &endpoint,
                            &model.name,
                            input,
                            task,
                            self.prm_scorer.as_ref(),
                        ),
                        _ => unreachable!("outer match covers the remaining kinds"),
                    }
                }
            },
        }
    }
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Caps text at `max` whitespace-delimited tokens. Untouched (and flagged
/// untruncated) when already within the cap; otherwise the first `max`
/// tokens joined by single spaces.
pub fn truncate_to_words(text: &str, max: usize) -> (String, bool) {
    let count = text.split_whitespace().count();
    if count <= max {
        return (text.to_string(), false);
    }
    let kept: Vec<&str> = text.split_whitespace().take(max).collect();
    (kept.join(" "), true)
}

const CLOSER_REWRITES: [(&str, &str); 5] = [
    ("</think>", "[/think]"),
    ("</route>", "[/route]"),
    ("</search>", "[/search]"),
    ("</information>", "[/information]"),
    ("</answer>", "[/answer]"),
];

/// Neutralizes closing-tag literals so external text can sit inside a
/// trajectory block without ending it early.
pub fn sanitize_block_text(text: &str) -> String {
    let mut out = text.to_string();
    for (from, to) in CLOSER_REWRITES {
        if out.contains(from) {
            out = out.replace(from, to);
        }
    }
    out
}

/// The episode's answer given its observations: the payload of the latest
/// `SOLVED:` observation, else the latest observation text, else empty.
pub fn extract_answer(observations: &[Observation]) -> String {
    for obs in observations.iter().rev() {
        if let Some(payload) = obs.text.strip_prefix("SOLVED:") {
            return payload.trim().to_string();
        }
    }
    observations.last().map(|obs| obs.text.clone()).unwrap_or_default()
}

/// Advances the episode by one action.
///
/// Thinks append context with no observation. Routes execute the pair,
/// append the observation, and consume a turn, refused with
/// [`StepError::BudgetExhausted`] once `t_max` turns are spent. Answers
/// append and mark the episode terminal. Executor failures are embedded in
/// the observation text, never surfaced as step errors.
pub fn step(
    state: &mut EpisodeState,
    action: Action,
    executor: &Executor,
    task: &TaskContext,
    t_max: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Observation>, StepError> {
    if state.terminal {
        return Err(StepError::Terminal);
    }
    match action {
        Action::Think(text) => {
            state.context.push(ContextEntry { action: Segment::think(text), observation: None });
            Ok(None)
        }
        Action::Answer(text) => {
            state.context.push(ContextEntry { action: Segment::answer(text), observation: None });
            state.terminal = true;
            Ok(None)
        }
        Action::Route { pair, input } => {
            if state.turn >= t_max {
                return Err(StepError::BudgetExhausted { t_max });
            }
            let observation = executor.execute_pair(pair, &input, task, rng);
            let (model_name, tool_name) = executor.pool.pair_names(pair);
            state.context.push(ContextEntry {
                action: Segment::route(model_name, tool_name, sanitize_block_text(&input)),
                observation: Some(observation.clone()),
            });
            state.turn += 1;
            Ok(Some(observation))
        }
    }
}

/// One policy decision as the trainer replays it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub context: PolicyContext,
    pub action: ActionIndex,
}

/// Everything one episode produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub query_id: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub trajectory_text: String,
    pub answer: String,
    pub reward: RewardBreakdown,
    /// Whether the selection component had a table entry to check against.
    pub sel_tabulated: bool,
    pub observations: Vec<Observation>,
    pub api_calls: usize,
    pub cost: Cost,
    pub steps: Vec<StepLog>,
}

/// Episode-level knobs. `t_max` is the route budget; the matcher judges the
/// final answer against the gold label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeOptions {
    pub t_max: usize,
    pub weights: RewardWeights,
    pub matcher: Matcher,
}

impl Default for EpisodeOptions {
    fn default() -> EpisodeOptions {
        EpisodeOptions {
            t_max: DEFAULT_T_MAX,
            weights: RewardWeights::default(),
            matcher: Matcher::default(),
        }
    }
}

/// Runs one full episode: policy decisions through [`step`] until an answer,
/// with a single forced ask once the route budget is spent; a policy that
/// still insists on routing then records an empty answer. Returns the
/// complete record with rewards computed against the task's gold (when
/// present) and the optimal-model table (when given).
pub fn run_episode(
    policy: &dyn RoutePolicy,
    task: &TaskContext,
    executor: &Executor,
    table: Option<&OptimalModelTable>,
    options: &EpisodeOptions,
    rng: &mut ChaCha8Rng,
) -> EpisodeRecord {
    let pool = executor.pool();
    let answer_index = pool.pair_count();
    let mut state = EpisodeState::new(&task.query);
    let mut steps = Vec::new();
    let mut observations: Vec<Observation> = Vec::new();
    let mut cost = Cost::ZERO;
    let mut last_failed = false;

    let answer_text = loop {
        let turn = state.turn;
        let (context, action) = policy.decide(&task.query, turn, last_failed, rng);
        steps.push(StepLog { context, action });

        if action == answer_index {
            break extract_answer(&observations);
        }
        if turn >= options.t_max {
            // Budget spent and the policy routed anyway: the episode closes
            // with an empty answer rather than an executed route.
            break String::new();
        }

        let pair = pool.pair_at(action);
        step(&mut state, Action::Think(CANONICAL_THINK.into()), executor, task, options.t_max, rng)
            .expect("pre-answer think on a live episode");
        let observation = step(
            &mut state,
            Action::Route { pair, input: task.query.clone() },
            executor,
            task,
            options.t_max,
            rng,
        )
        .expect("route within budget")
        .expect("route actions observe");
        let price = pool.model_price(pair.model);
        cost += Cost::of_call(observation.in_tokens, price.input, observation.out_tokens, price.output);
        last_failed = !observation.text.starts_with("SOLVED:");
        observations.push(observation);
    };

    step(&mut state, Action::Think(CANONICAL_THINK.into()), executor, task, options.t_max, rng)
        .expect("pre-answer think on a live episode");
    step(&mut state, Action::Answer(answer_text.clone()), executor, task, options.t_max, rng)
        .expect("closing answer on a live episode");

    let trajectory = Trajectory::from_segments(state.segments());
    let fmt = format_reward(&trajectory, pool);
    let out = match &task.gold {
        Some(gold) => outcome_reward(&answer_text, gold, options.matcher),
        None => 0.0,
    };
    let (sel, sel_tabulated) = match table {
        Some(table) => {
            selection_reward(&trajectory, table, &task.query_id, options.weights.selection_penalty)
        }
        None => (0.0, false),
    };
    let reward = composite_reward(fmt, out, sel, &options.weights);
    let trajectory_text =
        render(&trajectory).expect("episode text is sanitized before it enters segments");

    EpisodeRecord {
        query_id: task.query_id.clone(),
        query: task.query.clone(),
        domain: task.domain.clone(),
        gold: task.gold.clone(),
        trajectory_text,
        answer: answer_text,
        reward,
        sel_tabulated,
        observations,
        api_calls: state.turn,
        cost,
        steps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{build_pool, ModelSpec, Price, PriceSheet, ToolSpec};
    use crate::rng::stream;

    fn planted_pool() -> RoutingPool {
        let mut prices = PriceSheet::new();
        prices.set("small", "0.0000007".parse().unwrap(), "0.0000021".parse().unwrap());
        prices.set("large", "0.000003".parse().unwrap(), "0.000009".parse().unwrap());
        build_pool(
            vec![ModelSpec::new("small"), ModelSpec::new("large")],
            vec![ToolSpec::new("sim", ToolKind::Simulated)],
            prices,
        )
        .unwrap()
    }

    fn planted_sim(best_p: f64, other_p: f64) -> SimPoolConfig {
        let mut config = SimPoolConfig::new(17);
        config.default_prob = other_p;
        config.domains.push(
            DomainConfig::new("math")
                .with_prob("large@@sim", best_p)
                .with_prob("small@@sim", other_p),
        );
        config
    }

    fn executor(best_p: f64, other_p: f64) -> Executor {
        Executor::new(planted_pool(), ExecutorConfig::simulated(planted_sim(best_p, other_p)))
            .unwrap()
    }

    fn math_task(id: &str) -> TaskContext {
        TaskContext {
            query_id: id.into(),
            query: format!("math task {id}"),
            gold: Some("42".into()),
            domain: Some("math".into()),
        }
    }

    /// Routes the planted-best pair until something solves, then answers.
    struct OraclePolicy {
        best_action: ActionIndex,
        answer_action: ActionIndex,
    }

    impl RoutePolicy for OraclePolicy {
        fn decide(
            &self,
            _query: &str,
            turn: usize,
            last_step_failed: bool,
            _rng: &mut ChaCha8Rng,
        ) -> (PolicyContext, ActionIndex) {
            let ctx = PolicyContext { cluster_id: 0, turn, last_step_failed };
            if turn > 0 && !last_step_failed {
                (ctx, self.answer_action)
            } else if turn < DEFAULT_T_MAX {
                (ctx, self.best_action)
            } else {
                (ctx, self.answer_action)
            }
        }
    }

    /// Emits a fixed decision script, then answers forever.
    struct ScriptedPolicy {
        script: Vec<ActionIndex>,
        answer_action: ActionIndex,
        cursor: std::cell::Cell<usize>,
    }

    impl ScriptedPolicy {
        fn new(script: Vec<ActionIndex>, answer_action: ActionIndex) -> ScriptedPolicy {
            ScriptedPolicy { script, answer_action, cursor: std::cell::Cell::new(0) }
        }
    }

    impl RoutePolicy for ScriptedPolicy {
        fn decide(
            &self,
            _query: &str,
            turn: usize,
            last_step_failed: bool,
            _rng: &mut ChaCha8Rng,
        ) -> (PolicyContext, ActionIndex) {
            let ctx = PolicyContext { cluster_id: 0, turn, last_step_failed };
            let i = self.cursor.get();
            self.cursor.set(i + 1);
            (ctx, self.script.get(i).copied().unwrap_or(self.answer_action))
        }
    }

    #[test]
    fn think_grows_context_without_observation() {
        let exec = executor(1.0, 0.0);
        let task = math_task("q0");
        let mut state = EpisodeState::new(&task.query);
        let mut rng = stream(1, &[]);
        let obs = step(&mut state, Action::Think("plan".into()), &exec, &task, 4, &mut rng).unwrap();
        assert!(obs.is_none());
        assert_eq!(state.context.len(), 1);
        assert_eq!(state.turn, 0);
    }

    #[test]
    fn route_at_budget_is_refused() {
        let exec = executor(1.0, 0.0);
        let task = math_task("q0");
        let mut state = EpisodeState::new(&task.query);
        let mut rng = stream(1, &[]);
        let pair = exec.pool().pair_at(1);
        for _ in 0..4 {
            step(&mut state, Action::Route { pair, input: "x".into() }, &exec, &task, 4, &mut rng)
                .unwrap();
        }
        assert_eq!(state.turn, 4);
        let refused =
            step(&mut state, Action::Route { pair, input: "x".into() }, &exec, &task, 4, &mut rng);
        assert_eq!(refused.unwrap_err(), StepError::BudgetExhausted { t_max: 4 });
        assert_eq!(state.turn, 4);
        assert_eq!(state.context.len(), 4);
    }

    #[test]
    fn terminal_state_refuses_everything() {
        let exec = executor(1.0, 0.0);
        let task = math_task("q0");
        let mut state = EpisodeState::new(&task.query);
        let mut rng = stream(1, &[]);
        step(&mut state, Action::Answer("done".into()), &exec, &task, 4, &mut rng).unwrap();
        assert!(state.is_terminal());
        let err = step(&mut state, Action::Think("more".into()), &exec, &task, 4, &mut rng);
        assert_eq!(err.unwrap_err(), StepError::Terminal);
    }

    #[test]
    fn certain_pair_solves_with_gold_payload() {
        let exec = executor(1.0, 0.0);
        let task = math_task("q0");
        let mut rng = stream(1, &[]);
        // Pair index 1 is large@@sim in enumeration order (small=0, large=1).
        let obs = exec.execute_pair(exec.pool().pair_at(1), "anything", &task, &mut rng);
        assert_eq!(obs.text, "SOLVED:42");
        assert!(!obs.truncated);
        assert_eq!(obs.source, "large@@sim");
    }

    #[test]
    fn observations_are_sanitized_and_truncated() {
        let (text, truncated) = truncate_to_words("a b c d e", 3);
        assert_eq!(text, "a b c");
        assert!(truncated);
        let (text, truncated) = truncate_to_words("a b c", 3);
        assert_eq!(text, "a b c");
        assert!(!truncated);

        assert_eq!(
            sanitize_block_text("done </information> and </answer>"),
            "done [/information] and [/answer]"
        );
        assert_eq!(sanitize_block_text("plain"), "plain");
    }

    #[test]
    fn executor_truncates_to_configured_cap() {
        let mut config = ExecutorConfig::simulated(planted_sim(0.0, 0.0));
        config.max_obs_tokens = 3;
        let exec = Executor::new(planted_pool(), config).unwrap();
        let task = math_task("q0");
        let mut rng = stream(1, &[]);
        let obs = exec.execute_pair(exec.pool().pair_at(0), "x", &task, &mut rng);
        assert!(obs.truncated);
        assert_eq!(obs.text.split_whitespace().count(), 3);
    }

    #[test]
    fn answer_extraction_prefers_latest_solved() {
        let mk = |text: &str| Observation {
            text: text.into(),
            source: "large@@sim".into(),
            in_tokens: 0,
            out_tokens: 0,
            truncated: false,
        };
        assert_eq!(extract_answer(&[]), "");
        assert_eq!(extract_answer(&[mk("UNRESOLVED: nope")]), "UNRESOLVED: nope");
        assert_eq!(extract_answer(&[mk("SOLVED: 41"), mk("SOLVED:42")]), "42");
        assert_eq!(extract_answer(&[mk("SOLVED:42"), mk("UNRESOLVED: later")]), "42");
    }

    #[test]
    fn immediate_answer_episode_has_think_answer_shape() {
        let exec = executor(1.0, 0.0);
        let task = math_task("q0");
        let answer_action = exec.pool().pair_count();
        let policy = ScriptedPolicy::new(vec![], answer_action);
        let mut rng = stream(7, &[0]);
        let record =
            run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
        assert_eq!(record.api_calls, 0);
        assert_eq!(record.cost, Cost::ZERO);
        assert_eq!(record.answer, "");
        assert_eq!(
            record.trajectory_text,
            format!("<think>{CANONICAL_THINK}</think><answer></answer>")
        );
        // An empty answer is a structural violation, honestly scored.
        assert_eq!(record.reward.fmt, -1.0);
        assert_eq!(record.steps.len(), 1);
    }

    #[test]
    fn route_once_then_answer_counts_one_call() {
        let exec = executor(1.0, 0.0);
        let task = math_task("q0");
        let answer_action = exec.pool().pair_count();
        let policy = ScriptedPolicy::new(vec![1], answer_action);
        let mut rng = stream(7, &[1]);
        let record =
            run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
        assert_eq!(record.api_calls, 1);
        assert_eq!(record.observations.len(), 1);
        assert_eq!(record.answer, "42");
        assert_eq!(record.reward.fmt, 0.0);
        assert_eq!(record.reward.out, 1.0);
        assert_eq!(record.reward.total, 1.0);
        assert_eq!(record.trajectory_text.matches("<information>").count(), 1);
    }

    #[test]
    fn stubborn_router_is_cut_off_with_empty_answer() {
        let exec = executor(0.0, 0.0);
        let task = math_task("q0");
        let answer_action = exec.pool().pair_count();
        // Routes on every ask including the forced one.
        let policy = ScriptedPolicy::new(vec![1; 10], answer_action);
        let mut rng = stream(7, &[2]);
        let record =
            run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
        assert_eq!(record.api_calls, 4);
        assert_eq!(record.steps.len(), 5);
        assert_eq!(record.answer, "");
        assert_eq!(record.reward.fmt, -1.0);
        assert_eq!(record.reward.out, 0.0);
    }

    #[test]
    fn api_calls_never_exceed_budget() {
        let exec = executor(0.3, 0.1);
        let answer_action = exec.pool().pair_count();
        for episode in 0..40u64 {
            let task = math_task(&format!("q{episode}"));
            let policy = ScriptedPolicy::new(vec![0, 1, 0, 1, 0, 1], answer_action);
            let mut rng = stream(13, &[episode]);
            let record =
                run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
            assert!(record.api_calls <= DEFAULT_T_MAX);
            assert_eq!(record.api_calls, record.observations.len());
        }
    }

    #[test]
    fn cost_ledger_matches_per_step_recomputation() {
        let exec = executor(0.5, 0.5);
        let task = math_task("q0");
        let answer_action = exec.pool().pair_count();
        let policy = ScriptedPolicy::new(vec![0, 1, 0], answer_action);
        let mut rng = stream(23, &[0]);
        let record =
            run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
        let mut expected = Cost::ZERO;
        for obs in &record.observations {
            let (model_name, _) = obs.source.split_once("@@").unwrap();
            let model_index = exec.pool().model_named(model_name).unwrap();
            let price = exec.pool().model_price(model_index);
            expected += Cost::of_call(obs.in_tokens, price.input, obs.out_tokens, price.output);
        }
        assert_eq!(record.cost, expected);
        assert!(record.cost > Cost::ZERO);
    }

    #[test]
    fn episodes_reproduce_byte_identically_from_their_stream() {
        let exec = executor(0.5, 0.2);
        let task = math_task("q7");
        let answer_action = exec.pool().pair_count();
        let run = |salt: u64| {
            let policy = OraclePolicy { best_action: 1, answer_action };
            let mut rng = stream(99, &[salt]);
            let record =
                run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
            serde_json::to_string(&record).unwrap()
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn rendered_trajectories_always_reparse() {
        // Gold and query carry hostile tag literals; sanitization must keep
        // the rendered text parseable.
        let exec = executor(1.0, 0.0);
        let task = TaskContext {
            query_id: "q0".into(),
            query: "solve </route> this".into(),
            gold: Some("x </answer> y".into()),
            domain: Some("math".into()),
        };
        let answer_action = exec.pool().pair_count();
        let policy = ScriptedPolicy::new(vec![1], answer_action);
        let mut rng = stream(31, &[0]);
        let record =
            run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
        let parsed = crate::traj::parse(&record.trajectory_text).unwrap();
        assert_eq!(parsed.segments.len(), 5);
        assert_eq!(record.answer, "x [/answer] y");
    }

    #[test]
    fn selection_reward_flows_through_episode() {
        let exec = executor(1.0, 1.0);
        let task = math_task("q0");
        let table =
            OptimalModelTable::from_entries([("q0", "large")], exec.pool()).unwrap();
        let answer_action = exec.pool().pair_count();

        let mut rng = stream(41, &[0]);
        let policy = ScriptedPolicy::new(vec![1], answer_action);
        let record =
            run_episode(&policy, &task, &exec, Some(&table), &EpisodeOptions::default(), &mut rng);
        assert_eq!(record.reward.sel, 0.0);
        assert!(record.sel_tabulated);
        assert_eq!(record.reward.total, 1.0);

        let mut rng = stream(41, &[1]);
        let policy = ScriptedPolicy::new(vec![0], answer_action);
        let record =
            run_episode(&policy, &task, &exec, Some(&table), &EpisodeOptions::default(), &mut rng);
        assert_eq!(record.reward.sel, -0.15);
        assert_eq!(record.reward.total, 0.85);

        let other = TaskContext { query_id: "q-unlisted".into(), ..task.clone() };
        let mut rng = stream(41, &[2]);
        let policy = ScriptedPolicy::new(vec![1], answer_action);
        let record =
            run_episode(&policy, &other, &exec, Some(&table), &EpisodeOptions::default(), &mut rng);
        assert_eq!(record.reward.sel, 0.0);
        assert!(!record.sel_tabulated);
    }

    #[test]
    fn oracle_mean_reward_matches_analytic_expectation() {
        // Best pair solves with p = 0.7 per try and the oracle retries up to
        // 4 times, so P(solve) = 1 - 0.3^4 = 0.9919. A solved episode scores
        // exactly 1 (valid format + correct answer), an unsolved one 0
        // (valid format, wrong answer), making the analytic mean 0.9919 with
        // sigma = sqrt(p(1-p)/1000) ~ 0.00284.
        let exec = executor(0.7, 0.1);
        let answer_action = exec.pool().pair_count();
        let policy = OraclePolicy { best_action: 1, answer_action };
        let n = 1000u64;
        let mut total = 0.0;
        for episode in 0..n {
            let task = math_task(&format!("q{episode}"));
            let mut rng = stream(2024, &[episode]);
            let record =
                run_episode(&policy, &task, &exec, None, &EpisodeOptions::default(), &mut rng);
            total += record.reward.total;
        }
        let mean = total / n as f64;
        let expected = 1.0 - 0.3f64.powi(4);
        let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sigma,
            "mean {mean} vs expected {expected} (3 sigma = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn live_mode_requires_endpoints_for_every_model() {
        let mut live = LiveConfig::default();
        live.endpoints.insert("small".into(), "http://localhost:1/v1/chat".into());
        let Err(err) = Executor::new(planted_pool(), ExecutorConfig::live(live)) else {
            panic!("construction must fail without a large endpoint");
        };
        assert!(matches!(err, EnvError::MissingEndpoint { model } if model == "large"));
    }

    #[test]
    fn simulated_tool_under_live_mode_reports_structured_error() {
        let mut live = LiveConfig::default();
        live.endpoints.insert("small".into(), "http://localhost:1/v1/chat".into());
        live.endpoints.insert("large".into(), "http://localhost:1/v1/chat".into());
        let exec = Executor::new(planted_pool(), ExecutorConfig::live(live)).unwrap();
        let task = math_task("q0");
        let mut rng = stream(1, &[]);
        let obs = exec.execute_pair(exec.pool().pair_at(0), "x", &task, &mut rng);
        assert!(obs.text.starts_with("ERROR:"), "{}", obs.text);
        assert_eq!((obs.in_tokens, obs.out_tokens), (0, 0));
    }

    #[test]
    fn code_tool_is_opt_in() {
        let mut prices = PriceSheet::new();
        prices.set("m", Price::ZERO, Price::ZERO);
        let pool = build_pool(
            vec![ModelSpec::new("m")],
            vec![ToolSpec::new("py", ToolKind::CodeInterpreter)],
            prices,
        )
        .unwrap();
        let exec =
            Executor::new(pool, ExecutorConfig::simulated(SimPoolConfig::new(1))).unwrap();
        let task = math_task("q0");
        let mut rng = stream(1, &[]);
        let obs = exec.execute_pair(exec.pool().pair_at(0), "print(1)", &task, &mut rng);
        assert!(obs.text.contains("disabled"), "{}", obs.text);
    }

    #[test]
    fn gold_similarity_scorer_is_token_jaccard() {
        let task = math_task("q0");
        let mut labeled = task.clone();
        labeled.gold = Some("the answer is 42".into());
        assert_eq!(GoldSimilarity.score("the answer is 42", &labeled), 1.0);
        assert_eq!(GoldSimilarity.score("42", &labeled), 0.25);
        assert_eq!(GoldSimilarity.score("", &labeled), 0.0);
        let mut unlabeled = task;
        unlabeled.gold = None;
        assert_eq!(GoldSimilarity.score("anything", &unlabeled), 0.0);
    }
}
