//! Episode scoring: format, outcome, and selection components and their
//! weighted sum.
//!
//! The three components are deliberately coarse. Format is all-or-nothing
//! (0 when the trajectory passes every structural check, -1 otherwise),
//! outcome is a binary answer judgment under a per-dataset matcher, and
//! selection is a flat penalty when no route in the episode touched the
//! model judged optimal for the query. The total is
//! `fmt + gamma * out + xi * sel`, and with the default weights the set of
//! reachable totals is exactly {-1.15, -1, -0.15, 0, 0.85, 1}.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::RoutingPool;
use crate::traj::{trajectory_violations, validate_structure, Segment, Trajectory};

pub const FORMAT_OK: f64 = 0.0;
pub const FORMAT_PENALTY: f64 = -1.0;
pub const DEFAULT_SELECTION_PENALTY: f64 = -0.15;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("cannot access {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("{path} line {line}: {detail}")]
    Parse { path: String, line: usize, detail: String },
    #[error("optimal model {model:?} for query {id:?} is not in the routing pool")]
    UnknownModel { id: String, model: String },
    #[error("duplicate optimal-model entry for query {id:?}")]
    DuplicateId { id: String },
    #[error("invalid reward weights: {0}")]
    BadWeights(String),
}

/// Weights of the composite reward. `gamma` scales the outcome term, `xi`
/// the selection term; the format term is unweighted. `selection_penalty`
/// is the (non-positive) value the selection component takes when the
/// optimal model was never routed to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub gamma: f64,
    pub xi: f64,
    pub selection_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> RewardWeights {
        RewardWeights { gamma: 1.0, xi: 1.0, selection_penalty: DEFAULT_SELECTION_PENALTY }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !self.gamma.is_finite() || !self.xi.is_finite() || !self.selection_penalty.is_finite() {
            return Err(RewardError::BadWeights("weights must be finite".into()));
        }
        if self.selection_penalty > 0.0 {
            return Err(RewardError::BadWeights(format!(
                "selection_penalty must be <= 0, got {}",
                self.selection_penalty
            )));
        }
        Ok(())
    }
}

/// How an answer is compared to the gold label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    #[default]
    Exact,
    Numeric,
    Containment,
}

impl std::str::FromStr for Matcher {
    type Err = String;

    fn from_str(s: &str) -> Result<Matcher, String> {
        match s {
            "exact" => Ok(Matcher::Exact),
            "numeric" => Ok(Matcher::Numeric),
            "containment" => Ok(Matcher::Containment),
            other => Err(format!("unknown matcher {other:?} (expected exact, numeric, or containment)")),
        }
    }
}

impl std::fmt::Display for Matcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Matcher::Exact => "exact",
            Matcher::Numeric => "numeric",
            Matcher::Containment => "containment",
        })
    }
}

pub const NUMERIC_TOLERANCE: f64 = 1e-6;

/// Canonical answer form: surrounding whitespace dropped, lowercased, and
/// at most one trailing period removed.
pub fn normalize_answer(text: &str) -> String {
    let trimmed = text.trim();
    let trimmed = trimmed.strip_suffix('.').unwrap_or(trimmed);
    trimmed.to_lowercase()
}

fn answers_match(matcher: Matcher, answer_norm: &str, gold_norm: &str) -> bool {
    match matcher {
        Matcher::Exact => answer_norm == gold_norm,
        Matcher::Numeric => {
            match (answer_norm.parse::<f64>(), gold_norm.parse::<f64>()) {
                (Ok(a), Ok(g)) => (a - g).abs() <= NUMERIC_TOLERANCE,
                // Non-numeric text under a numeric matcher falls back to
                // exact comparison rather than auto-failing.
                _ => answer_norm == gold_norm,
            }
        }
        Matcher::Containment => answer_norm.contains(gold_norm),
    }
}

/// Per-query map from id to the model judged optimal for it. Entries are
/// validated against the pool at construction; lookups never fail, they
/// just report absence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimalModelTable {
    entries: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct TableLine {
    id: String,
    optimal_model: String,
}

impl OptimalModelTable {
    pub fn new() -> OptimalModelTable {
        OptimalModelTable::default()
    }

    pub fn from_entries<I, S, T>(entries: I, pool: &RoutingPool) -> Result<OptimalModelTable, RewardError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut table = OptimalModelTable::new();
        for (id, model) in entries {
            table.insert_checked(id.into(), model.into(), pool)?;
        }
        Ok(table)
    }

    fn insert_checked(&mut self, id: String, model: String, pool: &RoutingPool) -> Result<(), RewardError> {
        if pool.model_named(&model).is_none() {
            return Err(RewardError::UnknownModel { id, model });
        }
        if self.entries.contains_key(&id) {
            return Err(RewardError::DuplicateId { id });
        }
        self.entries.insert(id, model);
        Ok(())
    }

    pub fn optimal_model(&self, query_id: &str) -> Option<&str> {
        self.entries.get(query_id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(id, model)| (id.as_str(), model.as_str()))
    }

    /// Reads JSONL lines of the form `{"id": ..., "optimal_model": ...}`,
    /// skipping blank lines. Every referenced model must exist in the pool
    /// and ids must be unique.
    pub fn load_jsonl(path: &Path, pool: &RoutingPool) -> Result<OptimalModelTable, RewardError> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path)
            .map_err(|e| RewardError::Io { path: display.clone(), detail: e.to_string() })?;
        let mut table = OptimalModelTable::new();
        for (index, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line
                .map_err(|e| RewardError::Io { path: display.clone(), detail: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TableLine = serde_json::from_str(&line).map_err(|e| RewardError::Parse {
                path: display.clone(),
                line: index + 1,
                detail: e.to_string(),
            })?;
            table.insert_checked(parsed.id, parsed.optimal_model, pool)?;
        }
        Ok(table)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), RewardError> {
        let display = path.display().to_string();
        let mut out = Vec::new();
        for (id, optimal_model) in &self.entries {
            let line = TableLine { id: id.clone(), optimal_model: optimal_model.clone() };
            serde_json::to_writer(&mut out, &line)
                .map_err(|e| RewardError::Io { path: display.clone(), detail: e.to_string() })?;
            out.write_all(b"\n")
                .map_err(|e| RewardError::Io { path: display.clone(), detail: e.to_string() })?;
        }
        std::fs::write(path, out)
            .map_err(|e| RewardError::Io { path: display, detail: e.to_string() })
    }
}

/// The three scored components and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub fmt: f64,
    pub out: f64,
    pub sel: f64,
    pub total: f64,
}

/// 0 when the trajectory passes every structural and pool check, -1 otherwise.
pub fn format_reward(trajectory: &Trajectory, pool: &RoutingPool) -> f64 {
    if validate_structure(trajectory, pool).is_empty() {
        FORMAT_OK
    } else {
        FORMAT_PENALTY
    }
}

/// [`format_reward`] over raw text, scoring parse failures the same way.
pub fn format_reward_text(text: &str, pool: &RoutingPool) -> f64 {
    if trajectory_violations(text, pool).is_empty() {
        FORMAT_OK
    } else {
        FORMAT_PENALTY
    }
}

/// 1 when the matcher accepts the answer against the gold label, else 0.
/// An empty gold label never matches (containment would otherwise accept
/// everything).
pub fn outcome_reward(answer: &str, gold: &str, matcher: Matcher) -> f64 {
    let answer_norm = normalize_answer(answer);
    let gold_norm = normalize_answer(gold);
    if gold_norm.is_empty() {
        return 0.0;
    }
    if answers_match(matcher, &answer_norm, &gold_norm) {
        1.0
    } else {
        0.0
    }
}

/// Selection component plus whether the query had a table entry at all.
/// 0 when any route in the trajectory used the optimal model; `penalty`
/// when none did; queries absent from the table score 0 with the flag
/// lowered so callers can count untabulated episodes.
pub fn selection_reward(
    trajectory: &Trajectory,
    table: &OptimalModelTable,
    query_id: &str,
    penalty: f64,
) -> (f64, bool) {
    let Some(optimal) = table.optimal_model(query_id) else {
        return (0.0, false);
    };
    let hit = trajectory.segments.iter().any(|segment| match segment {
        Segment::Route { model, .. } => model == optimal,
        _ => false,
    });
    (if hit { 0.0 } else { penalty }, true)
}

/// `total = fmt + gamma * out + xi * sel`, components recorded alongside.
pub fn composite_reward(fmt: f64, out: f64, sel: f64, weights: &RewardWeights) -> RewardBreakdown {
    RewardBreakdown { fmt, out, sel, total: fmt + weights.gamma * out + weights.xi * sel }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pool::{build_pool, ModelSpec, Price, PriceSheet, ToolKind, ToolSpec};
    use crate::traj::parse;
    use std::collections::BTreeSet;

    fn test_pool() -> RoutingPool {
        let mut prices = PriceSheet::new();
        prices.set("alpha", Price::ZERO, Price::ZERO);
        prices.set("beta", Price::ZERO, Price::ZERO);
        build_pool(
            vec![ModelSpec::new("alpha"), ModelSpec::new("beta")],
            vec![ToolSpec::new("calc", ToolKind::Calculator)],
            prices,
        )
        .unwrap()
    }

    #[test]
    fn default_weights_are_unit_with_standard_penalty() {
        let w = RewardWeights::default();
        assert_eq!(w.gamma, 1.0);
        assert_eq!(w.xi, 1.0);
        assert_eq!(w.selection_penalty, -0.15);
        w.validate().unwrap();
    }

    #[test]
    fn weights_validation_rejects_bad_values() {
        let positive = RewardWeights { selection_penalty: 0.1, ..RewardWeights::default() };
        assert!(positive.validate().is_err());
        let nan = RewardWeights { gamma: f64::NAN, ..RewardWeights::default() };
        assert!(nan.validate().is_err());
    }

    #[test]
    fn normalization_trims_lowercases_and_strips_one_period() {
        assert_eq!(normalize_answer("  Paris.  "), "paris");
        assert_eq!(normalize_answer("done.."), "done.");
        assert_eq!(normalize_answer("42"), "42");
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn exact_matcher_uses_normalized_comparison() {
        assert_eq!(outcome_reward("42", "42", Matcher::Exact), 1.0);
        assert_eq!(outcome_reward("  PARIS. ", "paris", Matcher::Exact), 1.0);
        assert_eq!(outcome_reward("41", "42", Matcher::Exact), 0.0);
    }

    #[test]
    fn numeric_matcher_applies_absolute_tolerance() {
        assert_eq!(outcome_reward("42.0000001", "42", Matcher::Numeric), 1.0);
        assert_eq!(outcome_reward("42.000001", "42", Matcher::Numeric), 1.0);
        assert_eq!(outcome_reward("42.1", "42", Matcher::Numeric), 0.0);
        assert_eq!(outcome_reward("1e3", "1000", Matcher::Numeric), 1.0);
        // Non-numeric text under the numeric matcher degrades to exact.
        assert_eq!(outcome_reward("forty-two", "forty-two", Matcher::Numeric), 1.0);
        assert_eq!(outcome_reward("forty-two", "42", Matcher::Numeric), 0.0);
    }

    #[test]
    fn containment_matcher_looks_for_gold_inside_answer() {
        assert_eq!(outcome_reward("Paris is the capital", "Paris", Matcher::Containment), 1.0);
        assert_eq!(outcome_reward("Lyon is lovely", "Paris", Matcher::Containment), 0.0);
    }

    #[test]
    fn empty_gold_never_matches() {
        assert_eq!(outcome_reward("anything", "", Matcher::Containment), 0.0);
        assert_eq!(outcome_reward("", "", Matcher::Exact), 0.0);
        assert_eq!(outcome_reward("x", "   . ", Matcher::Containment), 0.0);
    }

    #[test]
    fn matcher_names_round_trip() {
        for m in [Matcher::Exact, Matcher::Numeric, Matcher::Containment] {
            assert_eq!(m.to_string().parse::<Matcher>().unwrap(), m);
        }
        assert!("fuzzy".parse::<Matcher>().is_err());
    }

    #[test]
    fn format_reward_follows_structure_checks() {
        let pool = test_pool();
        let valid =
            parse("<think>t</think><route>alpha@@calc:1+1</route><information>2</information><answer>2</answer>")
                .unwrap();
        assert_eq!(format_reward(&valid, &pool), 0.0);
        assert_eq!(format_reward_text("<think>t</think>", &pool), -1.0);
        assert_eq!(
            format_reward_text(
                "<think>t</think><route>ghost@@calc:1</route><information>i</information><answer>a</answer>",
                &pool
            ),
            -1.0
        );
    }

    #[test]
    fn selection_reward_accepts_any_matching_route() {
        let pool = test_pool();
        let table = OptimalModelTable::from_entries([("q1", "beta")], &pool).unwrap();
        let both = Trajectory::from_segments(vec![
            Segment::think("t"),
            Segment::route("alpha", "calc", "x"),
            Segment::information("i"),
            Segment::route("beta", "calc", "y"),
            Segment::information("j"),
            Segment::answer("a"),
        ]);
        assert_eq!(selection_reward(&both, &table, "q1", -0.15), (0.0, true));

        let miss = Trajectory::from_segments(vec![
            Segment::think("t"),
            Segment::route("alpha", "calc", "x"),
            Segment::information("i"),
            Segment::answer("a"),
        ]);
        assert_eq!(selection_reward(&miss, &table, "q1", -0.15), (-0.15, true));
    }

    #[test]
    fn untabulated_query_scores_zero_with_flag_lowered() {
        let pool = test_pool();
        let table = OptimalModelTable::from_entries([("q1", "beta")], &pool).unwrap();
        let traj = Trajectory::from_segments(vec![Segment::think("t"), Segment::answer("a")]);
        assert_eq!(selection_reward(&traj, &table, "unknown", -0.15), (0.0, false));
    }

    #[test]
    fn no_route_at_all_is_penalized_when_tabulated() {
        let pool = test_pool();
        let table = OptimalModelTable::from_entries([("q1", "alpha")], &pool).unwrap();
        let traj = Trajectory::from_segments(vec![Segment::think("t"), Segment::answer("a")]);
        assert_eq!(selection_reward(&traj, &table, "q1", -0.15), (-0.15, true));
    }

    #[test]
    fn composite_matches_hand_computed_examples() {
        let w = RewardWeights::default();
        assert_eq!(composite_reward(0.0, 1.0, -0.15, &w).total, 0.85);
        assert_eq!(composite_reward(-1.0, 0.0, 0.0, &w).total, -1.0);
        assert_eq!(composite_reward(-1.0, 1.0, -0.15, &w).total, -0.15);
    }

    #[test]
    fn default_totals_enumerate_exactly_six_values() {
        let w = RewardWeights::default();
        let mut totals = BTreeSet::new();
        for fmt in [0.0, -1.0] {
            for out in [0.0, 1.0] {
                for sel in [0.0, -0.15] {
                    let b = composite_reward(fmt, out, sel, &w);
                    assert_eq!(b.total, fmt + out + sel);
                    totals.insert(b.total.to_bits());
                }
            }
        }
        let expected: BTreeSet<u64> =
            [-1.15f64, -1.0, -0.15, 0.0, 0.85, 1.0].iter().map(|v| v.to_bits()).collect();
        assert_eq!(totals, expected);
    }

    #[test]
    fn composite_is_linear_in_each_component() {
        let w = RewardWeights { gamma: 2.0, xi: 3.0, selection_penalty: -0.15 };
        let base = composite_reward(0.5, 0.25, -0.1, &w).total;
        assert_eq!(composite_reward(0.5 + 1.0, 0.25, -0.1, &w).total, base + 1.0);
        assert_eq!(composite_reward(0.5, 0.25 + 1.0, -0.1, &w).total - base, w.gamma);
        assert!((composite_reward(0.5, 0.25, -0.1 + 1.0, &w).total - base - w.xi).abs() < 1e-12);
    }

    #[test]
    fn table_load_validates_models_and_ids() {
        let pool = test_pool();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("optimal.jsonl");

        std::fs::write(
            &path,
            "{\"id\":\"q1\",\"optimal_model\":\"alpha\"}\n\n{\"id\":\"q2\",\"optimal_model\":\"beta\"}\n",
        )
        .unwrap();
        let table = OptimalModelTable::load_jsonl(&path, &pool).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!(table.optimal_model("q2"), Some("beta"));

        std::fs::write(&path, "{\"id\":\"q1\",\"optimal_model\":\"ghost\"}\n").unwrap();
        assert!(matches!(
            OptimalModelTable::load_jsonl(&path, &pool),
            Err(RewardError::UnknownModel { .. })
        ));

        std::fs::write(
            &path,
            "{\"id\":\"q1\",\"optimal_model\":\"alpha\"}\n{\"id\":\"q1\",\"optimal_model\":\"beta\"}\n",
        )
        .unwrap();
        assert!(matches!(
            OptimalModelTable::load_jsonl(&path, &pool),
            Err(RewardError::DuplicateId { .. })
        ));

        std::fs::write(&path, "not json\n").unwrap();
        match OptimalModelTable::load_jsonl(&path, &pool) {
            Err(RewardError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn table_round_trips_through_jsonl() {
        let pool = test_pool();
        let table =
            OptimalModelTable::from_entries([("q1", "alpha"), ("q2", "beta")], &pool).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.jsonl");
        table.save_jsonl(&path).unwrap();
        let back = OptimalModelTable::load_jsonl(&path, &pool).unwrap();
        assert_eq!(back, table);
    }
}
