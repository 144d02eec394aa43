//! Registry of models, tools, prices, and the Cartesian pair space.
//!
//! A [`RoutingPool`] owns ordered lists of models and tools plus a
//! [`PriceSheet`]; the pair space is their Cartesian product and pair `i`
//! decomposes as `model_index * tool_count + tool_index`. That ordering is
//! load-bearing: it defines action indices for policies and tie-breaks for
//! the utility argmax, so pools are immutable once built.
//!
//! Prices are fixed-point (pico currency units per token) rather than floats
//! so cost ledgers accumulate exactly and reproduce bit-for-bit across runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Characters banned from model and tool names because the route syntax
/// `Model@@Tool:Input` gives them structural meaning and defines no escaping.
pub const RESERVED_NAME_SEQUENCES: [&str; 2] = ["@@", ":"];

/// Pico currency units per whole currency unit.
const PICO: u128 = 1_000_000_000_000;
/// Maximum digits after the decimal point in a price or cost string.
const MAX_FRACTION_DIGITS: usize = 12;

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("name must be non-empty")]
    EmptyName,
    #[error("name {name:?} contains reserved sequence {seq:?}")]
    ReservedName { name: String, seq: &'static str },
    #[error("duplicate model name {0:?}")]
    DuplicateModel(String),
    #[error("duplicate tool name {0:?}")]
    DuplicateTool(String),
    #[error("no price entry for model {0:?}")]
    MissingPrice(String),
    #[error("unknown model {0:?}")]
    UnknownModel(String),
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("invalid price {value:?}: {reason}")]
    BadPrice { value: String, reason: String },
    #[error("pool schema error: {0}")]
    Schema(String),
}

/// Nonnegative money amount with pico-unit resolution, parsed from and
/// rendered to exact decimal strings.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Price(u64);

impl Price {
    pub const ZERO: Price = Price(0);

    pub fn from_pico(pico: u64) -> Price {
        Price(pico)
    }

    pub fn pico(self) -> u64 {
        self.0
    }

    /// Value in whole currency units, for utility math and reports.
    pub fn units_f64(self) -> f64 {
        self.0 as f64 / PICO as f64
    }
}

fn parse_decimal_pico(s: &str) -> Result<u128, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty string".into());
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err("no digits".into());
    }
    if frac_part.len() > MAX_FRACTION_DIGITS {
        return Err(format!("at most {MAX_FRACTION_DIGITS} decimal places supported"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err("expected a nonnegative decimal number".into());
    }
    let int_val: u128 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| "integer part overflows".to_string())?
    };
    let mut frac_val: u128 = 0;
    if !frac_part.is_empty() {
        frac_val = frac_part.parse().map_err(|_| "fraction overflows".to_string())?;
        for _ in frac_part.len()..MAX_FRACTION_DIGITS {
            frac_val *= 10;
        }
    }
    int_val
        .checked_mul(PICO)
        .and_then(|v| v.checked_add(frac_val))
        .ok_or_else(|| "value too large".to_string())
}

fn format_decimal_pico(pico: u128) -> String {
    let int_part = pico / PICO;
    let frac_part = pico % PICO;
    if frac_part == 0 {
        return int_part.to_string();
    }
    let frac = format!("{frac_part:012}");
    format!("{int_part}.{}", frac.trim_end_matches('0'))
}

impl FromStr for Price {
    type Err = PoolError;

    fn from_str(s: &str) -> Result<Price, PoolError> {
        let pico = parse_decimal_pico(s).map_err(|reason| PoolError::BadPrice {
            value: s.to_string(),
            reason,
        })?;
        let pico = u64::try_from(pico).map_err(|_| PoolError::BadPrice {
            value: s.to_string(),
            reason: "price too large".into(),
        })?;
        Ok(Price(pico))
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_decimal_pico(u128::from(self.0)))
    }
}

impl fmt::Debug for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Price({self})")
    }
}

impl Serialize for Price {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Price {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Price, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Accumulated money amount (pico units) for episode and report ledgers.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cost(u128);

impl Cost {
    pub const ZERO: Cost = Cost(0);

    pub fn from_pico(pico: u128) -> Cost {
        Cost(pico)
    }

    pub fn pico(self) -> u128 {
        self.0
    }

    pub fn units_f64(self) -> f64 {
        self.0 as f64 / PICO as f64
    }

    /// Exact cost of one call: `in_tokens * p_in + out_tokens * p_out`.
    pub fn of_call(in_tokens: u64, p_in: Price, out_tokens: u64, p_out: Price) -> Cost {
        Cost(
            u128::from(in_tokens) * u128::from(p_in.pico())
                + u128::from(out_tokens) * u128::from(p_out.pico()),
        )
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_decimal_pico(self.0))
    }
}

impl fmt::Debug for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cost({self})")
    }
}

impl Serialize for Cost {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Cost {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Cost, D::Error> {
        let s = String::deserialize(deserializer)?;
        let pico = parse_decimal_pico(&s).map_err(serde::de::Error::custom)?;
        Ok(Cost(pico))
    }
}

/// One candidate model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>) -> ModelSpec {
        ModelSpec { name: name.into(), endpoint: None, description: String::new() }
    }
}

/// What a tool does when a pair routes through it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Calculator,
    WebSearch,
    Prm,
    CodeInterpreter,
    None,
    Simulated,
}

/// One available tool plus its kind-specific configuration.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub kind: ToolKind,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, kind: ToolKind) -> ToolSpec {
        ToolSpec { name: name.into(), kind, config: serde_json::Value::Null }
    }
}

/// Per-model input/output token prices.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct ModelPrice {
    pub input: Price,
    pub output: Price,
}

/// Price entries for every model in a pool, keyed by model name.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
pub struct PriceSheet(pub BTreeMap<String, ModelPrice>);

impl PriceSheet {
    pub fn new() -> PriceSheet {
        PriceSheet(BTreeMap::new())
    }

    pub fn set(&mut self, model: impl Into<String>, input: Price, output: Price) {
        self.0.insert(model.into(), ModelPrice { input, output });
    }

    pub fn get(&self, model: &str) -> Option<&ModelPrice> {
        self.0.get(model)
    }
}

/// One element of the pair space, stored as indices into the owning pool's
/// ordered model and tool lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelToolPair {
    pub model: usize,
    pub tool: usize,
}

/// On-disk shape of a pool definition.
#[derive(Serialize, Deserialize, Clone)]
struct PoolFile {
    version: u32,
    models: Vec<ModelSpec>,
    tools: Vec<ToolSpec>,
    prices: PriceSheet,
}

/// Immutable registry of models, tools, and prices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoolFile", into = "PoolFile")]
pub struct RoutingPool {
    models: Vec<ModelSpec>,
    tools: Vec<ToolSpec>,
    prices: PriceSheet,
    model_index: BTreeMap<String, usize>,
    tool_index: BTreeMap<String, usize>,
}

impl TryFrom<PoolFile> for RoutingPool {
    type Error = PoolError;

    fn try_from(file: PoolFile) -> Result<RoutingPool, PoolError> {
        if file.version != 1 {
            return Err(PoolError::Schema(format!(
                "unsupported pool version {} (expected 1)",
                file.version
            )));
        }
        build_pool(file.models, file.tools, file.prices)
    }
}

impl From<RoutingPool> for PoolFile {
    fn from(pool: RoutingPool) -> PoolFile {
        PoolFile { version: 1, models: pool.models, tools: pool.tools, prices: pool.prices }
    }
}

fn check_name(name: &str) -> Result<(), PoolError> {
    if name.trim().is_empty() {
        return Err(PoolError::EmptyName);
    }
    for seq in RESERVED_NAME_SEQUENCES {
        if name.contains(seq) {
            return Err(PoolError::ReservedName { name: name.to_string(), seq });
        }
    }
    Ok(())
}

/// Validates names and prices and returns an immutable pool preserving the
/// given ordering.
pub fn build_pool(
    models: Vec<ModelSpec>,
    tools: Vec<ToolSpec>,
    prices: PriceSheet,
) -> Result<RoutingPool, PoolError> {
    let mut model_index = BTreeMap::new();
    for (i, m) in models.iter().enumerate() {
        check_name(&m.name)?;
        if model_index.insert(m.name.clone(), i).is_some() {
            return Err(PoolError::DuplicateModel(m.name.clone()));
        }
    }
    let mut tool_index = BTreeMap::new();
    for (i, t) in tools.iter().enumerate() {
        check_name(&t.name)?;
        if tool_index.insert(t.name.clone(), i).is_some() {
            return Err(PoolError::DuplicateTool(t.name.clone()));
        }
    }
    for m in &models {
        if prices.get(&m.name).is_none() {
            return Err(PoolError::MissingPrice(m.name.clone()));
        }
    }
    Ok(RoutingPool { models, tools, prices, model_index, tool_index })
}

impl RoutingPool {
    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn prices(&self) -> &PriceSheet {
        &self.prices
    }

    pub fn model(&self, index: usize) -> &ModelSpec {
        &self.models[index]
    }

    pub fn tool(&self, index: usize) -> &ToolSpec {
        &self.tools[index]
    }

    /// Size of the pair space `|models| * |tools|`.
    pub fn pair_count(&self) -> usize {
        self.models.len() * self.tools.len()
    }

    /// Stable enumeration index: `model * |tools| + tool`.
    pub fn pair_index(&self, pair: ModelToolPair) -> usize {
        pair.model * self.tools.len() + pair.tool
    }

    /// Inverse of [`RoutingPool::pair_index`].
    pub fn pair_at(&self, index: usize) -> ModelToolPair {
        debug_assert!(index < self.pair_count());
        ModelToolPair { model: index / self.tools.len(), tool: index % self.tools.len() }
    }

    /// All pairs in enumeration order.
    pub fn pairs(&self) -> impl Iterator<Item = ModelToolPair> + '_ {
        (0..self.pair_count()).map(|i| self.pair_at(i))
    }

    pub fn pair_names(&self, pair: ModelToolPair) -> (&str, &str) {
        (&self.models[pair.model].name, &self.tools[pair.tool].name)
    }

    /// Renders a pair as `model@@tool` (names cannot contain the separator).
    pub fn pair_label(&self, pair: ModelToolPair) -> String {
        let (m, t) = self.pair_names(pair);
        format!("{m}@@{t}")
    }

    pub fn model_price(&self, model_index: usize) -> &ModelPrice {
        self.prices
            .get(&self.models[model_index].name)
            .expect("build_pool guarantees a price per model")
    }

    /// Looks both names up, reporting which one failed.
    pub fn resolve_pair(&self, model_name: &str, tool_name: &str) -> Result<ModelToolPair, PoolError> {
        let model = *self
            .model_index
            .get(model_name)
            .ok_or_else(|| PoolError::UnknownModel(model_name.to_string()))?;
        let tool = *self
            .tool_index
            .get(tool_name)
            .ok_or_else(|| PoolError::UnknownTool(tool_name.to_string()))?;
        Ok(ModelToolPair { model, tool })
    }

    pub fn model_named(&self, name: &str) -> Option<usize> {
        self.model_index.get(name).copied()
    }

    pub fn tool_named(&self, name: &str) -> Option<usize> {
        self.tool_index.get(name).copied()
    }

    /// Canonical JSON document (versioned), used for files and fingerprints.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pool serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<RoutingPool, PoolError> {
        serde_json::from_str(json).map_err(|e| PoolError::Schema(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form, used to tie checkpoints and
    /// profiles to the pool they were built against.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_json().as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> RoutingPool {
        let models = vec![ModelSpec::new("alpha"), ModelSpec::new("beta")];
        let tools = vec![
            ToolSpec::new("calc", ToolKind::Calculator),
            ToolSpec::new("search", ToolKind::WebSearch),
        ];
        let mut prices = PriceSheet::new();
        prices.set("alpha", "0.001".parse().unwrap(), "0.002".parse().unwrap());
        prices.set("beta", "0.0005".parse().unwrap(), "0.001".parse().unwrap());
        build_pool(models, tools, prices).unwrap()
    }

    #[test]
    fn cartesian_pair_count() {
        assert_eq!(two_by_two().pair_count(), 4);
    }

    #[test]
    fn six_by_four_has_24_pairs() {
        let models: Vec<ModelSpec> = (0..6).map(|i| ModelSpec::new(format!("m{i}"))).collect();
        let tools: Vec<ToolSpec> =
            (0..4).map(|i| ToolSpec::new(format!("t{i}"), ToolKind::Simulated)).collect();
        let mut prices = PriceSheet::new();
        for m in &models {
            prices.set(&m.name, Price::ZERO, Price::ZERO);
        }
        let pool = build_pool(models, tools, prices).unwrap();
        assert_eq!(pool.pair_count(), 24);
    }

    #[test]
    fn pair_index_is_model_major() {
        let pool = two_by_two();
        for (i, pair) in pool.pairs().enumerate() {
            assert_eq!(pool.pair_index(pair), i);
            assert_eq!(pair.model, i / 2);
            assert_eq!(pair.tool, i % 2);
            assert_eq!(pool.pair_at(i), pair);
        }
    }

    #[test]
    fn duplicate_model_rejected() {
        let models = vec![ModelSpec::new("A"), ModelSpec::new("A")];
        let mut prices = PriceSheet::new();
        prices.set("A", Price::ZERO, Price::ZERO);
        let err = build_pool(models, vec![ToolSpec::new("t", ToolKind::None)], prices).unwrap_err();
        assert!(matches!(err, PoolError::DuplicateModel(n) if n == "A"));
    }

    #[test]
    fn duplicate_tool_rejected() {
        let mut prices = PriceSheet::new();
        prices.set("m", Price::ZERO, Price::ZERO);
        let tools = vec![ToolSpec::new("t", ToolKind::None), ToolSpec::new("t", ToolKind::Prm)];
        let err = build_pool(vec![ModelSpec::new("m")], tools, prices).unwrap_err();
        assert!(matches!(err, PoolError::DuplicateTool(n) if n == "t"));
    }

    #[test]
    fn missing_price_rejected() {
        let err = build_pool(
            vec![ModelSpec::new("m")],
            vec![ToolSpec::new("t", ToolKind::None)],
            PriceSheet::new(),
        )
        .unwrap_err();
        assert!(matches!(err, PoolError::MissingPrice(n) if n == "m"));
    }

    #[test]
    fn reserved_sequences_rejected() {
        for bad in ["a@@b", "a:b", ":", "@@"] {
            let mut prices = PriceSheet::new();
            prices.set(bad, Price::ZERO, Price::ZERO);
            let err = build_pool(
                vec![ModelSpec::new(bad)],
                vec![ToolSpec::new("t", ToolKind::None)],
                prices,
            )
            .unwrap_err();
            assert!(matches!(err, PoolError::ReservedName { .. }), "{bad}");
        }
    }

    #[test]
    fn empty_name_rejected() {
        let mut prices = PriceSheet::new();
        prices.set("  ", Price::ZERO, Price::ZERO);
        let err = build_pool(
            vec![ModelSpec::new("  ")],
            vec![ToolSpec::new("t", ToolKind::None)],
            prices,
        )
        .unwrap_err();
        assert!(matches!(err, PoolError::EmptyName));
    }

    #[test]
    fn resolve_pair_reports_which_name_failed() {
        let pool = two_by_two();
        let pair = pool.resolve_pair("alpha", "calc").unwrap();
        assert_eq!(pool.pair_names(pair), ("alpha", "calc"));
        assert!(matches!(
            pool.resolve_pair("ghost", "calc").unwrap_err(),
            PoolError::UnknownModel(n) if n == "ghost"
        ));
        assert!(matches!(
            pool.resolve_pair("alpha", "ghost").unwrap_err(),
            PoolError::UnknownTool(n) if n == "ghost"
        ));
    }

    #[test]
    fn price_parse_and_display_round_trip() {
        for (s, pico) in [
            ("0", 0u64),
            ("0.001", 1_000_000_000),
            ("1", 1_000_000_000_000),
            ("2.5", 2_500_000_000_000),
            ("0.000000000001", 1),
            (".25", 250_000_000_000),
        ] {
            let p: Price = s.parse().unwrap();
            assert_eq!(p.pico(), pico, "{s}");
            let rt: Price = p.to_string().parse().unwrap();
            assert_eq!(rt, p, "{s}");
        }
        assert_eq!("0.001".parse::<Price>().unwrap().to_string(), "0.001");
        assert_eq!("2.50".parse::<Price>().unwrap().to_string(), "2.5");
    }

    #[test]
    fn price_rejects_bad_input() {
        for bad in ["", "-1", "1.2.3", "0.0000000000001", "1e-3", "abc", "."] {
            assert!(bad.parse::<Price>().is_err(), "{bad}");
        }
    }

    #[test]
    fn cost_of_call_is_exact() {
        let p_in: Price = "0.001".parse().unwrap();
        let p_out: Price = "0.002".parse().unwrap();
        let cost = Cost::of_call(100, p_in, 50, p_out);
        // 100 * 0.001 + 50 * 0.002 = 0.2
        assert_eq!(cost.to_string(), "0.2");
        assert_eq!(cost.pico(), 200_000_000_000);
    }

    #[test]
    fn pool_json_round_trip() {
        let pool = two_by_two();
        let json = pool.to_json();
        let back = RoutingPool::from_json(&json).unwrap();
        assert_eq!(back, pool);
        assert_eq!(back.fingerprint(), pool.fingerprint());
    }

    #[test]
    fn pool_json_rejects_wrong_version() {
        let json = r#"{"version":2,"models":[],"tools":[],"prices":{}}"#;
        assert!(RoutingPool::from_json(json).is_err());
    }

    #[test]
    fn tool_kind_serde_names() {
        let kinds = [
            (ToolKind::Calculator, "\"calculator\""),
            (ToolKind::WebSearch, "\"web_search\""),
            (ToolKind::Prm, "\"prm\""),
            (ToolKind::CodeInterpreter, "\"code_interpreter\""),
            (ToolKind::None, "\"none\""),
            (ToolKind::Simulated, "\"simulated\""),
        ];
        for (kind, json) in kinds {
            assert_eq!(serde_json::to_string(&kind).unwrap(), json);
        }
    }
}
