//! Command-line surface: argument parsing, configuration defaults, and the
//! orchestration that turns module operations into reproducible runs.
//!
//! Every file-writing command emits its primary outputs atomically and ends
//! by writing a run manifest next to the first output: a snapshot of the
//! resolved settings, component versions, the seed, and a SHA-256 digest per
//! emitted file. Reruns with the same seed and paths produce byte-identical
//! outputs. Secrets (API keys) are read from the environment by the live
//! backend at call time and never appear in flags, configs, or manifests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::EncoderConfig;
use crate::env::{
    DomainConfig, EpisodeOptions, Executor, ExecutorConfig, LiveConfig, SimPoolConfig, TaskContext,
};
use crate::eval::{compare_routers, EvalDataset, EvalOptions, EvalRecord};
use crate::policy::{
    make_policy, train_policy, Contexter, PolicyCheckpoint, PolicyDeps, PolicyKind, RoutePolicy,
    SoftmaxPolicyParams, TrainRow, TrainerConfig,
};
use crate::pool::{
    build_pool, ModelSpec, Price, PriceSheet, RoutingPool, ToolKind, ToolSpec,
};
use crate::profile::{fit_profile, ClusterProfile, FitOptions, PairsMode};
use crate::reward::{format_reward_text, Matcher, OptimalModelTable};
use crate::rng::{label_salt, stream};
use crate::traj::{trajectory_violations, ViolationRule};

use rand::Rng;

pub const MANIFEST_VERSION: u32 = 1;
pub const SIM_FILE_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "atlas",
    version,
    about = "Model-tool routing: fit cluster profiles, train routing policies, compare routers"
)]
pub struct Cli {
    /// Root seed for every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker cap for internal parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// JSON defaults file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Training-free routing profiles.
    Profile {
        #[command(subcommand)]
        command: ProfileCommand,
    },
    /// Route one query through a fitted profile.
    Route(RouteArgs),
    /// Train the softmax routing policy.
    Train(TrainArgs),
    /// Compare routing policies on a dataset.
    Eval(EvalArgs),
    /// Simulated pools and planted datasets.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Reward checks.
    Reward {
        #[command(subcommand)]
        command: RewardCommand,
    },
}

#[derive(Subcommand)]
enum ProfileCommand {
    /// Fit a cluster profile by executing pairs over training queries.
    Fit(ProfileFitArgs),
}

#[derive(Subcommand)]
enum SimCommand {
    /// Generate a planted simulated pool with train/test datasets.
    Gen(SimGenArgs),
}

#[derive(Subcommand)]
enum RewardCommand {
    /// Replay a trajectory fixture corpus against the format rules.
    Check(RewardCheckArgs),
}

#[derive(Args)]
struct ProfileFitArgs {
    /// Training queries (JSONL with id, query, gold, domain, matcher).
    #[arg(long)]
    data: PathBuf,
    /// Simulated pool description (pool registry plus planted probabilities).
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Pool registry for live execution; endpoints come from model specs and
    /// keys from the environment.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Number of clusters.
    #[arg(short, long)]
    k: usize,
    /// Cost weight in the utility; 0 ranks by accuracy alone.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Observations a (cluster, pair) cell needs before its utility counts.
    #[arg(long, default_value_t = 1)]
    min_support: u64,
    /// Pairs executed per training query: `all` or `sample:n`.
    #[arg(long, default_value = "all")]
    pairs: String,
    /// Keep costs in currency units instead of rescaling by the maximum.
    #[arg(long)]
    raw_cost: bool,
    /// Explicit cost normalizer; defaults to the largest observed pair cost.
    #[arg(long)]
    cost_scale: Option<f64>,
    /// Last-resort pair as model@@tool when no statistics exist anywhere.
    #[arg(long)]
    default_pair: Option<String>,
    /// Where the fitted profile lands.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RouteArgs {
    /// Fitted profile; falls back to the config file's profile path.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Query to route.
    #[arg(long)]
    query: String,
    /// Print the decision as single-line JSON.
    #[arg(long)]
    json: bool,
    /// Also write the decision (JSON) and a run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Simulated pool description.
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Pool registry for live execution.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Training queries (JSONL).
    #[arg(long)]
    data: PathBuf,
    /// Gradient steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Episodes per step.
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// KL penalty weight toward the frozen uniform reference.
    #[arg(long)]
    beta: Option<f64>,
    /// Softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
    /// Route budget per episode.
    #[arg(long)]
    t_max: Option<usize>,
    /// Context buckets when training without a fitted profile.
    #[arg(long)]
    buckets: Option<usize>,
    /// Fitted profile whose clustering provides the policy context.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Designated-optimal-model table (JSONL) enabling the selection reward.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Where the trained checkpoint lands.
    #[arg(long)]
    out: PathBuf,
    /// Learning-curve CSV; defaults to the checkpoint path with a csv
    /// extension.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation queries (JSONL).
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated policies: checkpoint paths or the built-ins `random`,
    /// `cluster`, `epsilon:<p>`.
    #[arg(long)]
    policies: String,
    /// Samples per query.
    #[arg(short, long)]
    k: Option<usize>,
    /// Simulated pool description.
    #[arg(long)]
    sim: Option<PathBuf>,
    /// Pool registry for live execution.
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Fitted profile backing the cluster and epsilon built-ins.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Designated-optimal-model table (JSONL) enabling the selection reward.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Route budget per episode.
    #[arg(long)]
    t_max: Option<usize>,
    /// Comparison CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full report JSON output.
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SimGenArgs {
    /// Output directory, created when missing.
    #[arg(long)]
    out_dir: PathBuf,
    /// Query domains.
    #[arg(long, default_value_t = 3)]
    domains: usize,
    /// Models in the pool.
    #[arg(long, default_value_t = 3)]
    models: usize,
    /// Tools in the pool.
    #[arg(long, default_value_t = 2)]
    tools: usize,
    /// Training queries.
    #[arg(long, default_value_t = 300)]
    train: usize,
    /// Held-out test queries.
    #[arg(long, default_value_t = 300)]
    test: usize,
    /// Solve probability of each domain's planted best pair.
    #[arg(long, default_value_t = 0.9)]
    p_best: f64,
    /// Solve probability of every other pair.
    #[arg(long, default_value_t = 0.3)]
    p_other: f64,
}

#[derive(Args)]
struct RewardCheckArgs {
    /// Fixture directory: pool.json plus one .txt trajectory and one
    /// .expected.json violation list per case.
    #[arg(long)]
    fixtures: PathBuf,
}

/// Defaults file loaded via `--config`. Explicit flags override these; any
/// path listed here must exist when a command starts.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Pool registry for live execution.
    pub pool: Option<PathBuf>,
    /// Simulated pool description; preferred over `pool` when both are set.
    pub sim: Option<PathBuf>,
    /// Fitted profile.
    pub profile: Option<PathBuf>,
    /// Query encoder; profile fitting defaults to the seeded hashed encoder.
    pub encoder: Option<EncoderConfig>,
    /// Trainer knobs used as the base before flag overrides.
    pub trainer: Option<TrainerConfig>,
    /// Evaluation defaults.
    pub eval: Option<EvalDefaults>,
    /// Root seed when no `--seed` flag is given.
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalDefaults {
    pub k: Option<usize>,
    pub t_max: Option<usize>,
}

/// On-disk bundle of a simulated experiment: the pool registry and the
/// planted solve probabilities that drive it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimFile {
    pub version: u32,
    pub pool: RoutingPool,
    pub sim: SimPoolConfig,
}

/// Reproducibility ledger written at the end of every file-writing run:
/// resolved settings, component versions, the seed, and a digest per output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    /// Output file name to `sha256:<hex>` of the exact bytes written.
    pub outputs: BTreeMap<String, String>,
}

struct Resolved {
    seed: u64,
    app: AppConfig,
}

/// Parses arguments (including the program name) and runs one command.
/// Returns the process exit code: 0 on success, 1 on a failed run, 2 on a
/// usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let app = load_app_config(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
    }
    let seed = cli.seed.or(app.seed).unwrap_or(0);
    let resolved = Resolved { seed, app };
    match &cli.command {
        Command::Profile { command: ProfileCommand::Fit(args) } => cmd_profile_fit(&resolved, args),
        Command::Route(args) => cmd_route(&resolved, args),
        Command::Train(args) => cmd_train(&resolved, args),
        Command::Eval(args) => cmd_eval(&resolved, args),
        Command::Sim { command: SimCommand::Gen(args) } => cmd_sim_gen(&resolved, args),
        Command::Reward { command: RewardCommand::Check(args) } => cmd_reward_check(args),
    }
}

fn load_app_config(path: Option<&Path>) -> Result<AppConfig> {
    let Some(path) = path else {
        return Ok(AppConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))?;
    let config: AppConfig = serde_json::from_str(&text)
        .with_context(|| format!("config {} is malformed", path.display()))?;
    for (what, entry) in
        [("pool", &config.pool), ("sim", &config.sim), ("profile", &config.profile)]
    {
        if let Some(p) = entry {
            if !p.exists() {
                bail!("config {} references a missing {what} file: {}", path.display(), p.display());
            }
        }
    }
    Ok(config)
}

fn require_exists(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} file not found: {}", path.display());
    }
    Ok(())
}

fn load_pool(path: &Path) -> Result<RoutingPool> {
    require_exists(path, "pool")?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read pool {}", path.display()))?;
    RoutingPool::from_json(&text).with_context(|| format!("pool {} is invalid", path.display()))
}

fn load_sim_file(path: &Path) -> Result<SimFile> {
    require_exists(path, "sim")?;
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read sim description {}", path.display()))?;
    let file: SimFile = serde_json::from_str(&text)
        .with_context(|| format!("sim description {} is malformed", path.display()))?;
    if file.version != SIM_FILE_VERSION {
        bail!(
            "sim description {} has version {} (expected {SIM_FILE_VERSION})",
            path.display(),
            file.version
        );
    }
    Ok(file)
}

fn load_dataset(path: &Path) -> Result<EvalDataset> {
    require_exists(path, "dataset")?;
    EvalDataset::load(path).with_context(|| format!("dataset {} is invalid", path.display()))
}

/// Builds the executor from `--sim` (simulated) or `--pool` (live), in that
/// order of preference, falling back to the config file's entries. Returns
/// the executor and a settings snapshot for the manifest.
fn build_executor(
    resolved: &Resolved,
    sim_flag: Option<&Path>,
    pool_flag: Option<&Path>,
) -> Result<(Executor, serde_json::Value)> {
    if sim_flag.is_some() && pool_flag.is_some() {
        bail!("pass either --sim (simulated) or --pool (live), not both");
    }
    let (sim_path, pool_path) = if sim_flag.is_some() || pool_flag.is_some() {
        (sim_flag.map(Path::to_path_buf), pool_flag.map(Path::to_path_buf))
    } else if resolved.app.sim.is_some() {
        (resolved.app.sim.clone(), None)
    } else {
        (None, resolved.app.pool.clone())
    };

    let (executor, snapshot) = if let Some(path) = sim_path {
        let file = load_sim_file(&path)?;
        let executor = Executor::new(file.pool, ExecutorConfig::simulated(file.sim))
            .with_context(|| format!("sim description {} failed validation", path.display()))?;
        let snapshot =
            serde_json::json!({ "mode": "simulated", "sim": path.display().to_string() });
        (executor, snapshot)
    } else if let Some(path) = pool_path {
        let pool = load_pool(&path)?;
        let executor = Executor::new(pool, ExecutorConfig::live(LiveConfig::default()))
            .with_context(|| format!("pool {} failed validation", path.display()))?;
        let snapshot = serde_json::json!({ "mode": "live", "pool": path.display().to_string() });
        (executor, snapshot)
    } else {
        bail!("an executor is needed: pass --sim (simulated) or --pool (live)");
    };
    for warning in executor.warnings() {
        eprintln!("warning: {warning}");
    }
    Ok((executor, snapshot))
}

fn parse_pairs_mode(text: &str) -> Result<PairsMode> {
    if text == "all" {
        return Ok(PairsMode::All);
    }
    if let Some(count) = text.strip_prefix("sample:") {
        let n: usize = count
            .parse()
            .with_context(|| format!("bad pair sample count {count:?} (want sample:<n>)"))?;
        if n == 0 {
            bail!("pair sample count must be at least 1");
        }
        return Ok(PairsMode::Sample(n));
    }
    bail!("bad --pairs value {text:?} (want `all` or `sample:<n>`)");
}

fn parse_pair_name(text: &str) -> Result<(String, String)> {
    let (model, tool) = text
        .split_once("@@")
        .with_context(|| format!("bad pair {text:?} (want model@@tool)"))?;
    if model.is_empty() || tool.is_empty() {
        bail!("bad pair {text:?} (want model@@tool)");
    }
    Ok((model.to_string(), tool.to_string()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn file_name_string(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => parent.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create directory {}", dir.display()))?;
    let name = file_name_string(path);
    if name.is_empty() {
        bail!("output path {} has no file name", path.display());
    }
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move output into place at {}", path.display()))?;
    Ok(())
}

/// Writes one output file atomically and records its digest.
fn emit(path: &Path, bytes: &[u8], outputs: &mut BTreeMap<String, String>) -> Result<()> {
    atomic_write(path, bytes)?;
    outputs.insert(file_name_string(path), format!("sha256:{}", sha256_hex(bytes)));
    Ok(())
}

fn component_versions() -> BTreeMap<String, String> {
    let mut versions = BTreeMap::new();
    versions.insert("atlas-core".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions
}

fn manifest_path(primary_output: &Path) -> PathBuf {
    primary_output.with_extension("manifest.json")
}

fn write_manifest(
    path: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    outputs: BTreeMap<String, String>,
) -> Result<()> {
    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        command: command.to_string(),
        seed,
        config,
        versions: component_versions(),
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail");
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

fn cmd_profile_fit(resolved: &Resolved, args: &ProfileFitArgs) -> Result<()> {
    require_exists(&args.data, "training data")?;
    let (executor, executor_snapshot) =
        build_executor(resolved, args.sim.as_deref(), args.pool.as_deref())?;
    let dataset = load_dataset(&args.data)?;
    let tasks: Vec<TaskContext> = dataset.records().iter().map(EvalRecord::task).collect();

    let encoder = resolved
        .app
        .encoder
        .clone()
        .unwrap_or_else(|| EncoderConfig::default_hashed(resolved.seed));
    let mut options = FitOptions::new(args.k, resolved.seed);
    options.alpha = args.alpha;
    options.min_support = args.min_support;
    options.raw_cost = args.raw_cost;
    options.cost_scale = args.cost_scale;
    options.pairs = parse_pairs_mode(&args.pairs)?;
    options.default_pair = args.default_pair.as_deref().map(parse_pair_name).transpose()?;

    let profile = fit_profile(&tasks, &encoder, &executor, &options)?;

    let mut text = profile.to_json();
    text.push('\n');
    let mut outputs = BTreeMap::new();
    emit(&args.out, text.as_bytes(), &mut outputs)?;

    let config = serde_json::json!({
        "data": args.data.display().to_string(),
        "executor": executor_snapshot,
        "encoder": encoder,
        "k": args.k,
        "alpha": args.alpha,
        "min_support": args.min_support,
        "pairs": args.pairs,
        "raw_cost": args.raw_cost,
        "cost_scale": args.cost_scale,
        "default_pair": args.default_pair,
    });
    write_manifest(&manifest_path(&args.out), "profile fit", resolved.seed, config, outputs)?;

    println!(
        "fitted {}-cluster profile over {} queries and {} pairs -> {}",
        args.k,
        tasks.len(),
        executor.pool().pair_count(),
        args.out.display()
    );
    Ok(())
}

fn cmd_route(resolved: &Resolved, args: &RouteArgs) -> Result<()> {
    let profile_path = args
        .profile
        .clone()
        .or_else(|| resolved.app.profile.clone())
        .context("route needs a profile: pass --profile or set one in the config")?;
    require_exists(&profile_path, "profile")?;
    let profile = ClusterProfile::load(&profile_path)?;
    let decision = profile.route_query(&args.query)?;

    let line = serde_json::to_string(&decision).expect("decision serialization cannot fail");
    if args.json {
        println!("{line}");
    } else {
        println!("pair      {}@@{}", decision.model, decision.tool);
        println!("cluster   {}", decision.cluster_id);
        match decision.utility {
            Some(utility) => println!("utility   {utility:.6}"),
            None => println!("utility   n/a"),
        }
        println!("fallback  {}", if decision.fallback_used { "yes" } else { "no" });
    }

    if let Some(out) = &args.out {
        let mut outputs = BTreeMap::new();
        emit(out, format!("{line}\n").as_bytes(), &mut outputs)?;
        let config = serde_json::json!({
            "profile": profile_path.display().to_string(),
            "query": args.query,
        });
        write_manifest(&manifest_path(out), "route", resolved.seed, config, outputs)?;
    }
    Ok(())
}

fn curve_csv(rows: &[TrainRow]) -> String {
    let mut out = String::from("step,mean_reward,entropy,kl\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.step, row.mean_reward, row.mean_entropy, row.mean_kl
        ));
    }
    out
}

fn cmd_train(resolved: &Resolved, args: &TrainArgs) -> Result<()> {
    require_exists(&args.data, "training data")?;
    let (executor, executor_snapshot) =
        build_executor(resolved, args.sim.as_deref(), args.pool.as_deref())?;
    let dataset = load_dataset(&args.data)?;
    let tasks: Vec<TaskContext> = dataset.records().iter().map(EvalRecord::task).collect();

    let mut trainer = resolved.app.trainer.unwrap_or_default();
    if let Some(lr) = args.lr {
        trainer.learning_rate = lr;
    }
    if let Some(beta) = args.beta {
        trainer.kl_beta = beta;
    }
    if let Some(batch) = args.batch {
        trainer.batch_size = batch;
    }
    if let Some(steps) = args.steps {
        trainer.total_steps = steps;
    }
    if let Some(temperature) = args.temperature {
        trainer.temperature = temperature;
    }
    trainer.seed = resolved.seed;

    let table = args
        .table
        .as_deref()
        .map(|path| {
            require_exists(path, "optimal-model table")?;
            OptimalModelTable::load_jsonl(path, executor.pool())
                .with_context(|| format!("table {} is invalid", path.display()))
        })
        .transpose()?;

    let contexter = match &args.profile {
        Some(path) => {
            require_exists(path, "profile")?;
            let profile = ClusterProfile::load(path)?;
            Contexter::cluster(profile.cluster_model().clone(), profile.encoder().clone())
        }
        None => Contexter::hash(args.buckets.unwrap_or(8))?,
    };

    let mut episode = EpisodeOptions::default();
    if let Some(t_max) = args.t_max {
        episode.t_max = t_max;
    }

    let outcome = train_policy(&tasks, &executor, table.as_ref(), &contexter, &trainer, &episode)?;
    let checkpoint = PolicyCheckpoint::new(&outcome.params, &contexter, executor.pool());

    let mut outputs = BTreeMap::new();
    let mut checkpoint_text =
        serde_json::to_string_pretty(&checkpoint).expect("checkpoint serialization cannot fail");
    checkpoint_text.push('\n');
    emit(&args.out, checkpoint_text.as_bytes(), &mut outputs)?;
    let curve_path = args.curve.clone().unwrap_or_else(|| args.out.with_extension("csv"));
    emit(&curve_path, curve_csv(&outcome.curve).as_bytes(), &mut outputs)?;

    let config = serde_json::json!({
        "data": args.data.display().to_string(),
        "executor": executor_snapshot,
        "trainer": trainer,
        "t_max": episode.t_max,
        "contexter": contexter,
        "table": args.table.as_ref().map(|p| p.display().to_string()),
    });
    write_manifest(&manifest_path(&args.out), "train", resolved.seed, config, outputs)?;

    let last = outcome.curve.last().expect("training always runs at least one step");
    println!(
        "trained {} steps (batch {}): mean reward {:.3}, entropy {:.3} -> {}",
        trainer.total_steps,
        trainer.batch_size,
        last.mean_reward,
        last.mean_entropy,
        args.out.display()
    );
    Ok(())
}

enum PolicyEntry {
    Kind(PolicyKind),
    Checkpoint(PathBuf),
}

fn parse_policy_entries(text: &str) -> Result<Vec<(String, PolicyEntry)>> {
    let mut entries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for raw in text.split(',') {
        let name = raw.trim();
        if name.is_empty() {
            bail!("empty policy entry in {text:?}");
        }
        if !seen.insert(name.to_string()) {
            bail!("duplicate policy entry {name:?}");
        }
        if name == "softmax" {
            bail!("a trained policy is named by its checkpoint path, not `softmax`");
        }
        let entry = match name.parse::<PolicyKind>() {
            Ok(kind) => PolicyEntry::Kind(kind),
            Err(_) => PolicyEntry::Checkpoint(PathBuf::from(name)),
        };
        entries.push((name.to_string(), entry));
    }
    if entries.is_empty() {
        bail!("no policies given");
    }
    Ok(entries)
}

fn cmd_eval(resolved: &Resolved, args: &EvalArgs) -> Result<()> {
    require_exists(&args.dataset, "dataset")?;
    let (executor, executor_snapshot) =
        build_executor(resolved, args.sim.as_deref(), args.pool.as_deref())?;
    let dataset = load_dataset(&args.dataset)?;

    let samples = args.k.or_else(|| resolved.app.eval.and_then(|e| e.k)).unwrap_or(1);
    if samples == 0 {
        bail!("--k must be at least 1");
    }
    let mut episode = EpisodeOptions::default();
    if let Some(t_max) = args.t_max.or_else(|| resolved.app.eval.and_then(|e| e.t_max)) {
        episode.t_max = t_max;
    }

    let table = args
        .table
        .as_deref()
        .map(|path| {
            require_exists(path, "optimal-model table")?;
            OptimalModelTable::load_jsonl(path, executor.pool())
                .with_context(|| format!("table {} is invalid", path.display()))
        })
        .transpose()?;

    let entries = parse_policy_entries(&args.policies)?;
    let needs_profile = entries.iter().any(|(_, entry)| {
        matches!(
            entry,
            PolicyEntry::Kind(PolicyKind::ClusterGreedy | PolicyKind::EpsilonGreedy(_))
        )
    });
    let profile = if needs_profile {
        let path = args
            .profile
            .clone()
            .or_else(|| resolved.app.profile.clone())
            .context("the cluster and epsilon policies need --profile")?;
        require_exists(&path, "profile")?;
        let profile = ClusterProfile::load(&path)?;
        if profile.pool().fingerprint() != executor.pool().fingerprint() {
            bail!("profile {} was fitted over a different pool", path.display());
        }
        Some(profile)
    } else {
        None
    };

    let mut checkpoints: Vec<(SoftmaxPolicyParams, Contexter)> = Vec::new();
    let mut kinds: Vec<(String, PolicyKind, Option<usize>)> = Vec::new();
    for (name, entry) in entries {
        match entry {
            PolicyEntry::Kind(kind) => kinds.push((name, kind, None)),
            PolicyEntry::Checkpoint(path) => {
                require_exists(&path, "policy checkpoint")?;
                let (params, contexter) = PolicyCheckpoint::load(&path)?
                    .resolve(executor.pool())
                    .with_context(|| format!("checkpoint {} cannot route this pool", path.display()))?;
                checkpoints.push((params, contexter));
                kinds.push((name, PolicyKind::Softmax, Some(checkpoints.len() - 1)));
            }
        }
    }
    let policies: Vec<(String, Box<dyn RoutePolicy + '_>)> = kinds
        .iter()
        .map(|(name, kind, checkpoint)| {
            let deps = PolicyDeps {
                pool: Some(executor.pool()),
                profile: profile.as_ref(),
                params: checkpoint.map(|i| &checkpoints[i].0),
                contexter: checkpoint.map(|i| &checkpoints[i].1),
            };
            make_policy(*kind, deps).map(|policy| (name.clone(), policy))
        })
        .collect::<Result<_, _>>()?;
    let refs: Vec<(&str, &dyn RoutePolicy)> =
        policies.iter().map(|(name, policy)| (name.as_str(), policy.as_ref())).collect();

    let t_max = episode.t_max;
    let options = EvalOptions { samples, seed: resolved.seed, episode };
    let comparison = compare_routers(&refs, &dataset, &executor, table.as_ref(), &options);
    print!("{}", comparison.to_table());

    let primary = args.out.as_ref().or(args.json.as_ref());
    if let Some(primary) = primary {
        let mut outputs = BTreeMap::new();
        if let Some(out) = &args.out {
            emit(out, comparison.to_csv().as_bytes(), &mut outputs)?;
        }
        if let Some(json_path) = &args.json {
            let reports: Vec<serde_json::Value> = comparison
                .rows
                .iter()
                .map(|(name, row)| match row {
                    Ok(report) => {
                        serde_json::to_value(report).expect("report serialization cannot fail")
                    }
                    Err(err) => {
                        serde_json::json!({ "policy": name, "error": err.to_string() })
                    }
                })
                .collect();
            let value = serde_json::json!({
                "version": 1,
                "seed": resolved.seed,
                "samples": samples,
                "reports": reports,
            });
            let mut text =
                serde_json::to_string_pretty(&value).expect("report serialization cannot fail");
            text.push('\n');
            emit(json_path, text.as_bytes(), &mut outputs)?;
        }
        let config = serde_json::json!({
            "dataset": args.dataset.display().to_string(),
            "executor": executor_snapshot,
            "policies": args.policies,
            "k": samples,
            "t_max": t_max,
            "table": args.table.as_ref().map(|p| p.display().to_string()),
            "profile": args.profile.as_ref().map(|p| p.display().to_string()),
        });
        write_manifest(&manifest_path(primary), "eval", resolved.seed, config, outputs)?;
    }

    let failed: Vec<&str> = comparison
        .rows
        .iter()
        .filter_map(|(name, row)| row.is_err().then_some(name.as_str()))
        .collect();
    if !failed.is_empty() {
        bail!("evaluation failed for: {}", failed.join(", "));
    }
    Ok(())
}

fn domain_name(index: usize) -> String {
    const NAMES: [&str; 5] = ["math", "code", "facts", "law", "finance"];
    NAMES.get(index).map(|n| n.to_string()).unwrap_or_else(|| format!("domain-{index}"))
}

fn model_name(index: usize) -> String {
    const NAMES: [&str; 5] = ["sim-small", "sim-medium", "sim-large", "sim-xl", "sim-xxl"];
    NAMES.get(index).map(|n| n.to_string()).unwrap_or_else(|| format!("sim-m{index}"))
}

fn tool_name(index: usize) -> String {
    const NAMES: [&str; 5] = ["direct", "search", "calc", "rerank", "sandbox"];
    NAMES.get(index).map(|n| n.to_string()).unwrap_or_else(|| format!("tool-{index}"))
}

fn domain_vocab(name: &str) -> Vec<String> {
    let curated: Option<[&str; 8]> = match name {
        "math" => Some([
            "integral",
            "derivative",
            "polynomial",
            "equation",
            "theorem",
            "matrix",
            "fraction",
            "limit",
        ]),
        "code" => Some([
            "function",
            "compiler",
            "refactor",
            "pointer",
            "closure",
            "iterator",
            "module",
            "stacktrace",
        ]),
        "facts" => Some([
            "capital",
            "treaty",
            "population",
            "dynasty",
            "continent",
            "census",
            "border",
            "parliament",
        ]),
        "law" => Some([
            "statute",
            "verdict",
            "appeal",
            "contract",
            "liability",
            "precedent",
            "plaintiff",
            "clause",
        ]),
        "finance" => Some([
            "dividend",
            "portfolio",
            "liquidity",
            "hedge",
            "bond",
            "equity",
            "margin",
            "yield",
        ]),
        _ => None,
    };
    match curated {
        Some(words) => words.iter().map(|w| w.to_string()).collect(),
        None => (0..8).map(|j| format!("{name}-topic-{j}")).collect(),
    }
}

fn cmd_sim_gen(resolved: &Resolved, args: &SimGenArgs) -> Result<()> {
    if args.domains == 0 || args.models == 0 || args.tools == 0 {
        bail!("domains, models, and tools must each be at least 1");
    }
    if args.train == 0 {
        bail!("at least one training query is needed");
    }
    for (what, p) in [("p-best", args.p_best), ("p-other", args.p_other)] {
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            bail!("--{what} must be a probability in [0, 1], got {p}");
        }
    }
    if args.p_best <= args.p_other {
        bail!("the planted gap requires --p-best > --p-other");
    }

    let models: Vec<ModelSpec> = (0..args.models).map(|i| ModelSpec::new(model_name(i))).collect();
    let tools: Vec<ToolSpec> =
        (0..args.tools).map(|i| ToolSpec::new(tool_name(i), ToolKind::Simulated)).collect();
    let mut prices = PriceSheet::new();
    for i in 0..args.models {
        let step = i as u64 + 1;
        prices.set(
            model_name(i),
            Price::from_pico(step * 1_000_000),
            Price::from_pico(step * 2_000_000),
        );
    }
    let pool = build_pool(models, tools, prices)?;

    let mut sim = SimPoolConfig::new(resolved.seed);
    sim.default_prob = args.p_other;
    let mut best_by_domain: BTreeMap<String, String> = BTreeMap::new();
    for d in 0..args.domains {
        let name = domain_name(d);
        let best_model = model_name(d % args.models);
        let best_tool = tool_name(0);
        let mut domain = DomainConfig::new(&name);
        for pair in pool.pairs() {
            let (model, tool) = pool.pair_names(pair);
            let p = if model == best_model && tool == best_tool { args.p_best } else { args.p_other };
            domain = domain.with_prob(pool.pair_label(pair), p);
        }
        sim.domains.push(domain);
        best_by_domain.insert(name, best_model);
    }

    let make_split = |split: &str, count: usize| -> Vec<EvalRecord> {
        (0..count)
            .map(|i| {
                let name = domain_name(i % args.domains);
                let vocab = domain_vocab(&name);
                let mut rng = stream(
                    resolved.seed,
                    &[label_salt("sim-gen-query"), label_salt(split), i as u64],
                );
                let query = (0..6)
                    .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
                    .collect::<Vec<_>>()
                    .join(" ");
                let per_domain_index = i / args.domains;
                EvalRecord {
                    id: format!("{split}-{name}-{per_domain_index}"),
                    query,
                    gold: format!("gold-{name}-{per_domain_index}"),
                    domain: Some(name),
                    matcher: Matcher::Exact,
                }
            })
            .collect()
    };
    let train = EvalDataset::new(make_split("train", args.train))?;
    let test = EvalDataset::new(make_split("test", args.test))?;

    let entries = train
        .records()
        .iter()
        .chain(test.records())
        .map(|record| {
            let domain = record.domain.as_deref().expect("generated records carry a domain");
            (record.id.clone(), best_by_domain[domain].clone())
        })
        .collect::<Vec<_>>();
    OptimalModelTable::from_entries(entries.iter().cloned(), &pool)?;
    let mut table_text = String::new();
    for (id, optimal_model) in &entries {
        table_text.push_str(
            &serde_json::to_string(&serde_json::json!({ "id": id, "optimal_model": optimal_model }))
                .expect("table line serialization cannot fail"),
        );
        table_text.push('\n');
    }

    let sim_file = SimFile { version: SIM_FILE_VERSION, pool: pool.clone(), sim: sim.clone() };
    let executor = Executor::new(pool, ExecutorConfig::simulated(sim))?;
    for warning in executor.warnings() {
        eprintln!("warning: {warning}");
    }

    let mut sim_text =
        serde_json::to_string_pretty(&sim_file).expect("sim serialization cannot fail");
    sim_text.push('\n');

    let mut outputs = BTreeMap::new();
    emit(&args.out_dir.join("sim.json"), sim_text.as_bytes(), &mut outputs)?;
    emit(&args.out_dir.join("train.jsonl"), train.to_jsonl().as_bytes(), &mut outputs)?;
    emit(&args.out_dir.join("test.jsonl"), test.to_jsonl().as_bytes(), &mut outputs)?;
    emit(&args.out_dir.join("optimal_models.jsonl"), table_text.as_bytes(), &mut outputs)?;

    let config = serde_json::json!({
        "domains": args.domains,
        "models": args.models,
        "tools": args.tools,
        "train": args.train,
        "test": args.test,
        "p_best": args.p_best,
        "p_other": args.p_other,
    });
    write_manifest(&args.out_dir.join("manifest.json"), "sim gen", resolved.seed, config, outputs)?;

    println!(
        "wrote simulated pool ({} models x {} tools, {} domains) with {}/{} train/test queries -> {}",
        args.models,
        args.tools,
        args.domains,
        args.train,
        args.test,
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ExpectedViolations {
    violations: Vec<ViolationRule>,
}

fn cmd_reward_check(args: &RewardCheckArgs) -> Result<()> {
    let dir = &args.fixtures;
    if !dir.is_dir() {
        bail!("fixture directory not found: {}", dir.display());
    }
    let pool = load_pool(&dir.join("pool.json"))?;

    let mut cases: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list {}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|path| path.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    cases.sort();
    if cases.is_empty() {
        bail!("no .txt fixtures in {}", dir.display());
    }

    let join = |rules: &[ViolationRule]| -> String {
        rules.iter().map(|r| r.as_str()).collect::<Vec<_>>().join(", ")
    };
    let mut failures: Vec<String> = Vec::new();
    for case in &cases {
        let name = case
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| case.display().to_string());
        let text = std::fs::read_to_string(case)
            .with_context(|| format!("cannot read fixture {}", case.display()))?;
        let expected_path = case.with_extension("expected.json");
        let expected_text = std::fs::read_to_string(&expected_path)
            .with_context(|| format!("fixture {name} is missing {}", expected_path.display()))?;
        let expected: ExpectedViolations = serde_json::from_str(&expected_text)
            .with_context(|| format!("expectation {} is malformed", expected_path.display()))?;

        let mut got: Vec<ViolationRule> =
            trajectory_violations(&text, &pool).into_iter().map(|v| v.rule).collect();
        got.sort();
        let mut want = expected.violations;
        want.sort();

        let reward = format_reward_text(&text, &pool);
        let reward_agrees = (reward == 0.0) == want.is_empty();
        if got == want && reward_agrees {
            println!("ok   {name}");
        } else {
            println!(
                "FAIL {name}: expected [{}], got [{}] (format reward {reward})",
                join(&want),
                join(&got)
            );
            failures.push(name);
        }
    }

    println!("{} fixtures, {} failed", cases.len(), failures.len());
    if !failures.is_empty() {
        bail!("{} of {} fixtures failed (first: {})", failures.len(), cases.len(), failures[0]);
    }
    Ok(())
}
