//! Desk-scale simulated model-tool pool.
//!
//! Each (domain, pair) combination has a solve probability; executing a pair
//! draws a Bernoulli with that probability and emits either a gold-bearing
//! `SOLVED:` observation or a distractor. Token counts come from a per-pair
//! model with uniform jitter. Everything is a pure function of the RNG
//! handed in, so a run is reproducible from its seed schedule alone.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::pool::RoutingPool;

use super::{EnvError, TaskContext};

/// Mean input/output token counts for a pair, each drawn uniformly from
/// `mean ± jitter` (clamped at zero).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenModel {
    pub mean_in: u64,
    pub mean_out: u64,
    pub jitter: u64,
}

impl Default for TokenModel {
    fn default() -> TokenModel {
        TokenModel { mean_in: 200, mean_out: 100, jitter: 20 }
    }
}

impl TokenModel {
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (u64, u64) {
        let lo_in = self.mean_in.saturating_sub(self.jitter);
        let lo_out = self.mean_out.saturating_sub(self.jitter);
        let in_tokens = rng.random_range(lo_in..=self.mean_in + self.jitter);
        let out_tokens = rng.random_range(lo_out..=self.mean_out + self.jitter);
        (in_tokens, out_tokens)
    }
}

/// One simulated query domain: solve probabilities per pair label
/// (`model@@tool`), plus templates the dataset generator expands. Pairs not
/// listed fall back to the pool-wide default probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainConfig {
    pub name: String,
    pub success_prob: BTreeMap<String, f64>,
    #[serde(default = "default_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_template: Option<String>,
}

fn default_weight() -> f64 {
    1.0
}

pub const DEFAULT_QUERY_TEMPLATE: &str = "{domain} task {index}";
pub const DEFAULT_GOLD_TEMPLATE: &str = "gold-{domain}-{index}";

fn expand(template: &str, domain: &str, index: usize) -> String {
    template.replace("{domain}", domain).replace("{index}", &index.to_string())
}

impl DomainConfig {
    pub fn new(name: impl Into<String>) -> DomainConfig {
        DomainConfig {
            name: name.into(),
            success_prob: BTreeMap::new(),
            weight: 1.0,
            query_template: None,
            gold_template: None,
        }
    }

    pub fn with_prob(mut self, pair_label: impl Into<String>, p: f64) -> DomainConfig {
        self.success_prob.insert(pair_label.into(), p);
        self
    }

    pub fn query_for(&self, index: usize) -> String {
        expand(self.query_template.as_deref().unwrap_or(DEFAULT_QUERY_TEMPLATE), &self.name, index)
    }

    pub fn gold_for(&self, index: usize) -> String {
        expand(self.gold_template.as_deref().unwrap_or(DEFAULT_GOLD_TEMPLATE), &self.name, index)
    }

    /// The pair label with the highest solve probability, ties by label
    /// order; `None` when the domain lists no pairs.
    pub fn best_pair(&self) -> Option<(&str, f64)> {
        let mut best: Option<(&str, f64)> = None;
        for (label, &p) in &self.success_prob {
            if best.map_or(true, |(_, bp)| p > bp) {
                best = Some((label, p));
            }
        }
        best
    }
}

/// Full simulated-pool description. The `seed` recorded here names the
/// schedule the pool was generated from; executors draw from the per-episode
/// stream they are handed, not from this value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPoolConfig {
    pub domains: Vec<DomainConfig>,
    #[serde(default = "default_prob")]
    pub default_prob: f64,
    #[serde(default)]
    pub token_model: BTreeMap<String, TokenModel>,
    #[serde(default)]
    pub default_tokens: TokenModel,
    pub seed: u64,
}

fn default_prob() -> f64 {
    0.1
}

impl SimPoolConfig {
    pub fn new(seed: u64) -> SimPoolConfig {
        SimPoolConfig {
            domains: Vec::new(),
            default_prob: default_prob(),
            token_model: BTreeMap::new(),
            default_tokens: TokenModel::default(),
            seed,
        }
    }

    pub fn domain(&self, name: &str) -> Option<&DomainConfig> {
        self.domains.iter().find(|d| d.name == name)
    }

    /// Solve probability for a pair label in a domain, falling back to the
    /// default for unlisted pairs or unknown domains.
    pub fn success_prob(&self, domain: Option<&str>, pair_label: &str) -> f64 {
        domain
            .and_then(|d| self.domain(d))
            .and_then(|d| d.success_prob.get(pair_label).copied())
            .unwrap_or(self.default_prob)
    }

    pub fn tokens_for(&self, pair_label: &str) -> TokenModel {
        self.token_model.get(pair_label).copied().unwrap_or(self.default_tokens)
    }

    /// Hard checks (probabilities in range, labels resolvable, weights
    /// positive) fail; soft expectations come back as warnings, notably a
    /// domain without a unique best pair.
    pub fn validate(&self, pool: &RoutingPool) -> Result<Vec<String>, EnvError> {
        let mut warnings = Vec::new();
        let check_prob = |p: f64, what: String| {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                Err(EnvError::BadProbability { what, value: p })
            } else {
                Ok(())
            }
        };
        check_prob(self.default_prob, "default_prob".into())?;
        let check_label = |label: &str, what: &str| {
            let Some((model, tool)) = label.split_once("@@") else {
                return Err(EnvError::BadPairLabel { what: what.to_string(), label: label.to_string() });
            };
            pool.resolve_pair(model, tool).map_err(|_| EnvError::BadPairLabel {
                what: what.to_string(),
                label: label.to_string(),
            })?;
            Ok(())
        };
        for domain in &self.domains {
            if !(domain.weight.is_finite() && domain.weight > 0.0) {
                return Err(EnvError::BadConfig(format!(
                    "domain {:?} weight must be positive, got {}",
                    domain.name, domain.weight
                )));
            }
            for (label, &p) in &domain.success_prob {
                check_label(label, &format!("domain {:?}", domain.name))?;
                check_prob(p, format!("domain {:?} pair {label:?}", domain.name))?;
            }
            match domain.best_pair() {
                None => warnings.push(format!("domain {:?} lists no pair probabilities", domain.name)),
                Some((_, best)) => {
                    let at_best =
                        domain.success_prob.values().filter(|&&p| p == best).count();
                    if at_best != 1 {
                        warnings.push(format!(
                            "domain {:?} has {at_best} pairs tied at the best probability {best}",
                            domain.name
                        ));
                    }
                }
            }
        }
        for label in self.token_model.keys() {
            check_label(label, "token_model")?;
        }
        Ok(warnings)
    }
}

/// A simulated pair invocation: Bernoulli success draw, then token draw.
/// Success carries the gold label so a later answer can be judged correct;
/// failure emits a distractor that deliberately lacks the `SOLVED:` prefix.
pub fn simulate_pair(
    config: &SimPoolConfig,
    pair_label: &str,
    task: &TaskContext,
    rng: &mut ChaCha8Rng,
) -> (String, u64, u64) {
    let p = config.success_prob(task.domain.as_deref(), pair_label);
    let solved = rng.random_bool(p.clamp(0.0, 1.0));
    let (in_tokens, out_tokens) = config.tokens_for(pair_label).draw(rng);
    let text = if solved {
        let payload = task.gold.as_deref().filter(|g| !g.is_empty()).unwrap_or("done");
        format!("SOLVED:{payload}")
    } else {
        format!("UNRESOLVED: {pair_label} could not complete the request")
    };
    (text, in_tokens, out_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{build_pool, ModelSpec, Price, PriceSheet, ToolKind, ToolSpec};
    use crate::rng::stream;

    fn sim_pool() -> RoutingPool {
        let mut prices = PriceSheet::new();
        prices.set("small", Price::ZERO, Price::ZERO);
        prices.set("large", Price::ZERO, Price::ZERO);
        build_pool(
            vec![ModelSpec::new("small"), ModelSpec::new("large")],
            vec![ToolSpec::new("sim", ToolKind::Simulated)],
            prices,
        )
        .unwrap()
    }

    fn task(domain: &str, gold: &str) -> TaskContext {
        TaskContext {
            query_id: "q0".into(),
            query: "question".into(),
            gold: Some(gold.into()),
            domain: Some(domain.into()),
        }
    }

    #[test]
    fn probability_lookup_falls_back_to_default() {
        let mut config = SimPoolConfig::new(7);
        config.default_prob = 0.25;
        config.domains.push(DomainConfig::new("math").with_prob("large@@sim", 0.9));
        assert_eq!(config.success_prob(Some("math"), "large@@sim"), 0.9);
        assert_eq!(config.success_prob(Some("math"), "small@@sim"), 0.25);
        assert_eq!(config.success_prob(Some("other"), "large@@sim"), 0.25);
        assert_eq!(config.success_prob(None, "large@@sim"), 0.25);
    }

    #[test]
    fn degenerate_probabilities_are_exact() {
        let mut config = SimPoolConfig::new(7);
        config.domains.push(
            DomainConfig::new("math").with_prob("large@@sim", 1.0).with_prob("small@@sim", 0.0),
        );
        for episode in 0..50u64 {
            let mut rng = stream(3, &[episode]);
            let (text, _, _) = simulate_pair(&config, "large@@sim", &task("math", "42"), &mut rng);
            assert_eq!(text, "SOLVED:42");
            let (text, _, _) = simulate_pair(&config, "small@@sim", &task("math", "42"), &mut rng);
            assert!(text.starts_with("UNRESOLVED:"), "{text}");
        }
    }

    #[test]
    fn bernoulli_frequency_tracks_probability() {
        let mut config = SimPoolConfig::new(7);
        config.domains.push(DomainConfig::new("math").with_prob("large@@sim", 0.3));
        let mut rng = stream(11, &[]);
        let t = task("math", "42");
        let n = 20_000;
        let solved = (0..n)
            .filter(|_| simulate_pair(&config, "large@@sim", &t, &mut rng).0.starts_with("SOLVED:"))
            .count();
        let freq = solved as f64 / n as f64;
        // 3 sigma for p=0.3 at n=20000 is about 0.0097.
        assert!((freq - 0.3).abs() < 0.011, "frequency {freq}");
    }

    #[test]
    fn token_draws_stay_within_jitter_band() {
        let model = TokenModel { mean_in: 100, mean_out: 50, jitter: 10 };
        let mut rng = stream(5, &[]);
        for _ in 0..500 {
            let (i, o) = model.draw(&mut rng);
            assert!((90..=110).contains(&i));
            assert!((40..=60).contains(&o));
        }
        let zero_jitter = TokenModel { mean_in: 7, mean_out: 3, jitter: 0 };
        assert_eq!(zero_jitter.draw(&mut rng), (7, 3));
    }

    #[test]
    fn same_stream_reproduces_byte_identical_draws() {
        let mut config = SimPoolConfig::new(7);
        config.domains.push(DomainConfig::new("math").with_prob("large@@sim", 0.5));
        let t = task("math", "42");
        let run = |salt: u64| {
            let mut rng = stream(9, &[salt]);
            (0..20).map(|_| simulate_pair(&config, "large@@sim", &t, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(4), run(4));
        assert_ne!(run(4), run(5));
    }

    #[test]
    fn missing_gold_emits_placeholder_payload() {
        let config = SimPoolConfig::new(7);
        let mut rng = stream(2, &[]);
        let mut t = task("math", "42");
        t.gold = None;
        let mut config1 = config.clone();
        config1.default_prob = 1.0;
        let (text, _, _) = simulate_pair(&config1, "large@@sim", &t, &mut rng);
        assert_eq!(text, "SOLVED:done");
    }

    #[test]
    fn validation_accepts_planted_config_and_warns_on_ties() {
        let pool = sim_pool();
        let mut config = SimPoolConfig::new(7);
        config.domains.push(
            DomainConfig::new("math").with_prob("large@@sim", 0.9).with_prob("small@@sim", 0.3),
        );
        assert!(config.validate(&pool).unwrap().is_empty());

        config.domains.push(
            DomainConfig::new("code").with_prob("large@@sim", 0.5).with_prob("small@@sim", 0.5),
        );
        let warnings = config.validate(&pool).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("code"));
    }

    #[test]
    fn validation_rejects_bad_probabilities_and_labels() {
        let pool = sim_pool();
        let mut config = SimPoolConfig::new(7);
        config.domains.push(DomainConfig::new("math").with_prob("large@@sim", 1.5));
        assert!(matches!(config.validate(&pool), Err(EnvError::BadProbability { .. })));

        let mut config = SimPoolConfig::new(7);
        config.domains.push(DomainConfig::new("math").with_prob("ghost@@sim", 0.5));
        assert!(matches!(config.validate(&pool), Err(EnvError::BadPairLabel { .. })));

        let mut config = SimPoolConfig::new(7);
        config.domains.push(DomainConfig::new("math").with_prob("no-separator", 0.5));
        assert!(matches!(config.validate(&pool), Err(EnvError::BadPairLabel { .. })));
    }

    #[test]
    fn templates_expand_domain_and_index() {
        let mut domain = DomainConfig::new("math");
        assert_eq!(domain.query_for(3), "math task 3");
        assert_eq!(domain.gold_for(3), "gold-math-3");
        domain.query_template = Some("compute the {index}th value".into());
        assert_eq!(domain.query_for(2), "compute the 2th value");
    }
}
