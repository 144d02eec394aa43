//! Metrics and the experiment harness: accuracy, pass@k, self-consistency
//! voting, usage accounting, and side-by-side router comparison.
//!
//! pass@k uses the first-k convention: a query counts as passed when any of
//! its first k sampled outcomes passed. Self-consistency takes a majority
//! vote over the first k answers in their canonical normalized form, breaks
//! ties toward the earliest-seen answer, and only then applies the matcher.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{run_episode, EpisodeOptions, EpisodeRecord, Executor, TaskContext};
use crate::policy::RoutePolicy;
use crate::pool::Cost;
use crate::reward::{normalize_answer, outcome_reward, Matcher, OptimalModelTable};
use crate::rng::{label_salt, stream};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query {index} has only {len} outcomes, fewer than k = {k}")]
    ShortRow { index: usize, len: usize, k: usize },
    #[error("nothing to aggregate")]
    Empty,
    #[error("answers and golds disagree in length: {answers} vs {golds}")]
    LengthMismatch { answers: usize, golds: usize },
    #[error("duplicate dataset id {0:?}")]
    DuplicateId(String),
    #[error("dataset line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("cannot access {path}: {detail}")]
    Io { path: String, detail: String },
}

/// One evaluation query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub query: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default)]
    pub matcher: Matcher,
}

impl EvalRecord {
    pub fn task(&self) -> TaskContext {
        TaskContext {
            query_id: self.id.clone(),
            query: self.query.clone(),
            gold: Some(self.gold.clone()),
            domain: self.domain.clone(),
        }
    }
}

/// An ordered evaluation set with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalDataset {
    records: Vec<EvalRecord>,
}

impl EvalDataset {
    pub fn new(records: Vec<EvalRecord>) -> Result<EvalDataset, EvalError> {
        let mut seen = std::collections::BTreeSet::new();
        for record in &records {
            if !seen.insert(record.id.as_str()) {
                return Err(EvalError::DuplicateId(record.id.clone()));
            }
        }
        Ok(EvalDataset { records })
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn from_jsonl(text: &str) -> Result<EvalDataset, EvalError> {
        let mut records = Vec::new();
        for (index, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: EvalRecord = serde_json::from_str(line)
                .map_err(|e| EvalError::Parse { line: index + 1, detail: e.to_string() })?;
            records.push(record);
        }
        EvalDataset::new(records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serialization cannot fail"));
            out.push('\n');
        }
        out
    }

    pub fn load(path: &Path) -> Result<EvalDataset, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EvalError::Io { path: path.display().to_string(), detail: e.to_string() })?;
        EvalDataset::from_jsonl(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_jsonl())
            .map_err(|e| EvalError::Io { path: path.display().to_string(), detail: e.to_string() })
    }
}

/// Per-query binary outcomes, one entry per sampled run.
pub type OutcomeMatrix = Vec<Vec<bool>>;

/// Fraction of queries whose first `k` samples contain at least one pass.
pub fn pass_at_k(matrix: &[Vec<bool>], k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if matrix.is_empty() {
        return Err(EvalError::Empty);
    }
    for (index, row) in matrix.iter().enumerate() {
        if row.len() < k {
            return Err(EvalError::ShortRow { index, len: row.len(), k });
        }
    }
    let passed = matrix.iter().filter(|row| row[..k].iter().any(|o| *o)).count();
    Ok(passed as f64 / matrix.len() as f64)
}

/// Majority answer among the first `k`, voting on normalized forms and
/// breaking ties toward the earliest-seen answer. Returns the raw text of
/// the winning vote's first occurrence.
pub fn majority_vote(answers: &[String], k: usize) -> Result<&str, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if answers.len() < k {
        return Err(EvalError::ShortRow { index: 0, len: answers.len(), k });
    }
    // Insertion-ordered tally so a count tie resolves to the key seen first.
    let mut order: Vec<(String, usize, usize)> = Vec::new();
    for (position, answer) in answers[..k].iter().enumerate() {
        let key = normalize_answer(answer);
        match order.iter_mut().find(|(existing, _, _)| *existing == key) {
            Some((_, count, _)) => *count += 1,
            None => order.push((key, 1, position)),
        }
    }
    let (_, _, winner_position) = order
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .expect("k >= 1 guarantees at least one vote");
    Ok(&answers[*winner_position])
}

/// Mean self-consistency score: majority vote per query, then the matcher
/// against that query's gold.
pub fn self_consistency(
    answers: &[Vec<String>],
    golds: &[String],
    k: usize,
    matcher: Matcher,
) -> Result<f64, EvalError> {
    if answers.len() != golds.len() {
        return Err(EvalError::LengthMismatch { answers: answers.len(), golds: golds.len() });
    }
    if answers.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut correct = 0usize;
    for (row, gold) in answers.iter().zip(golds) {
        let vote = majority_vote(row, k)?;
        if outcome_reward(vote, gold, matcher) == 1.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / answers.len() as f64)
}

/// Usage numbers over one group of episodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UsageStats {
    pub episodes: usize,
    pub total_api_calls: u64,
    pub mean_api_calls: f64,
    pub median_api_calls: f64,
    pub total_cost: Cost,
    pub mean_cost: f64,
}

fn usage_stats(records: &[&EpisodeRecord]) -> UsageStats {
    let episodes = records.len();
    let total_api_calls: u64 = records.iter().map(|r| r.api_calls as u64).sum();
    let mut calls: Vec<usize> = records.iter().map(|r| r.api_calls).collect();
    calls.sort_unstable();
    let median_api_calls = if calls.len() % 2 == 1 {
        calls[calls.len() / 2] as f64
    } else {
        (calls[calls.len() / 2 - 1] + calls[calls.len() / 2]) as f64 / 2.0
    };
    let mut total_cost = Cost::ZERO;
    for record in records {
        total_cost += record.cost;
    }
    UsageStats {
        episodes,
        total_api_calls,
        mean_api_calls: total_api_calls as f64 / episodes as f64,
        median_api_calls,
        total_cost,
        mean_cost: total_cost.units_f64() / episodes as f64,
    }
}

/// API-call and cost accounting, overall and per domain. Episodes without a
/// domain tag group under `"unspecified"`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UsageReport {
    pub overall: Option<UsageStats>,
    pub per_domain: BTreeMap<String, UsageStats>,
}

pub fn usage_report(records: &[EpisodeRecord]) -> UsageReport {
    if records.is_empty() {
        return UsageReport { overall: None, per_domain: BTreeMap::new() };
    }
    let all: Vec<&EpisodeRecord> = records.iter().collect();
    let mut groups: BTreeMap<String, Vec<&EpisodeRecord>> = BTreeMap::new();
    for record in records {
        let key = record.domain.clone().unwrap_or_else(|| "unspecified".to_string());
        groups.entry(key).or_default().push(record);
    }
    UsageReport {
        overall: Some(usage_stats(&all)),
        per_domain: groups.into_iter().map(|(k, v)| (k, usage_stats(&v))).collect(),
    }
}

/// Per-domain slice of a [`MetricReport`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DomainBreakdown {
    pub queries: usize,
    pub accuracy: f64,
    pub mean_api_calls: f64,
    pub mean_cost: f64,
}

/// One policy's evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub policy: String,
    pub queries: usize,
    pub samples: usize,
    /// pass@1 by definition.
    pub accuracy: f64,
    pub pass_at: BTreeMap<usize, f64>,
    pub sc_at: BTreeMap<usize, f64>,
    pub mean_api_calls: f64,
    pub mean_cost: f64,
    pub total_cost: Cost,
    pub per_domain: BTreeMap<String, DomainBreakdown>,
}

/// The k values a report covers: powers of two up to `samples`, plus
/// `samples` itself.
pub fn ks_up_to(samples: usize) -> Vec<usize> {
    let mut ks = Vec::new();
    let mut k = 1;
    while k <= samples {
        ks.push(k);
        k *= 2;
    }
    if *ks.last().expect("samples >= 1 yields at least k = 1") != samples {
        ks.push(samples);
    }
    ks
}

/// Evaluation knobs: how many samples per query and the seed every episode
/// stream derives from.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub samples: usize,
    pub seed: u64,
    pub episode: EpisodeOptions,
}

impl Default for EvalOptions {
    fn default() -> EvalOptions {
        EvalOptions { samples: 1, seed: 0, episode: EpisodeOptions::default() }
    }
}

/// Runs `samples` episodes per query and aggregates every metric. Each
/// episode draws from its own stream keyed by policy name, query index, and
/// sample index, so reports are reproducible and policy-order independent.
pub fn evaluate_policy(
    name: &str,
    policy: &dyn RoutePolicy,
    dataset: &EvalDataset,
    executor: &Executor,
    table: Option<&OptimalModelTable>,
    options: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    if options.samples == 0 {
        return Err(EvalError::ZeroK);
    }
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }

    let mut outcomes: OutcomeMatrix = Vec::with_capacity(dataset.len());
    let mut answers: Vec<Vec<String>> = Vec::with_capacity(dataset.len());
    let mut episodes: Vec<EpisodeRecord> = Vec::with_capacity(dataset.len() * options.samples);

    for (query_index, record) in dataset.records().iter().enumerate() {
        let task = record.task();
        let episode_options = EpisodeOptions { matcher: record.matcher, ..options.episode.clone() };
        let mut row_outcomes = Vec::with_capacity(options.samples);
        let mut row_answers = Vec::with_capacity(options.samples);
        for sample in 0..options.samples {
            let mut rng = stream(
                options.seed,
                &[label_salt(name), query_index as u64, sample as u64],
            );
            let episode = run_episode(policy, &task, executor, table, &episode_options, &mut rng);
            row_outcomes.push(episode.reward.out == 1.0);
            row_answers.push(episode.answer.clone());
            episodes.push(episode);
        }
        outcomes.push(row_outcomes);
        answers.push(row_answers);
    }

    let ks = ks_up_to(options.samples);
    let mut pass_at = BTreeMap::new();
    let mut sc_at = BTreeMap::new();
    for &k in &ks {
        pass_at.insert(k, pass_at_k(&outcomes, k)?);
        let mut correct = 0usize;
        for (row, record) in answers.iter().zip(dataset.records()) {
            let vote = majority_vote(row, k)?;
            if outcome_reward(vote, &record.gold, record.matcher) == 1.0 {
                correct += 1;
            }
        }
        sc_at.insert(k, correct as f64 / dataset.len() as f64);
    }

    let usage = usage_report(&episodes);
    let overall = usage.overall.as_ref().expect("dataset is non-empty");

    let mut per_domain = BTreeMap::new();
    for (domain, stats) in &usage.per_domain {
        let mut queries = 0usize;
        let mut passed = 0usize;
        for (record, row) in dataset.records().iter().zip(&outcomes) {
            let key = record.domain.clone().unwrap_or_else(|| "unspecified".to_string());
            if key == *domain {
                queries += 1;
                if row[0] {
                    passed += 1;
                }
            }
        }
        per_domain.insert(
            domain.clone(),
            DomainBreakdown {
                queries,
                accuracy: if queries == 0 { 0.0 } else { passed as f64 / queries as f64 },
                mean_api_calls: stats.mean_api_calls,
                mean_cost: stats.mean_cost,
            },
        );
    }

    Ok(MetricReport {
        policy: name.to_string(),
        queries: dataset.len(),
        samples: options.samples,
        accuracy: pass_at[&1],
        pass_at,
        sc_at,
        mean_api_calls: overall.mean_api_calls,
        mean_cost: overall.mean_cost,
        total_cost: overall.total_cost,
        per_domain,
    })
}

/// Side-by-side evaluation. A policy that fails to evaluate keeps its error
/// in its own row; the others still report.
pub struct Comparison {
    pub rows: Vec<(String, Result<MetricReport, EvalError>)>,
}

pub fn compare_routers(
    policies: &[(&str, &dyn RoutePolicy)],
    dataset: &EvalDataset,
    executor: &Executor,
    table: Option<&OptimalModelTable>,
    options: &EvalOptions,
) -> Comparison {
    let rows = policies
        .iter()
        .map(|(name, policy)| {
            let report = evaluate_policy(name, *policy, dataset, executor, table, options);
            (name.to_string(), report)
        })
        .collect();
    Comparison { rows }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

impl Comparison {
    /// Long-format CSV: `policy,metric,k,value`, with `k` empty for metrics
    /// that have no sample dimension.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,metric,k,value\n");
        for (name, report) in &self.rows {
            match report {
                Ok(report) => {
                    out.push_str(&format!("{},accuracy,,{}\n", csv_escape(name), report.accuracy));
                    for (k, v) in &report.pass_at {
                        out.push_str(&format!("{},pass_at,{k},{v}\n", csv_escape(name)));
                    }
                    for (k, v) in &report.sc_at {
                        out.push_str(&format!("{},sc_at,{k},{v}\n", csv_escape(name)));
                    }
                    out.push_str(&format!(
                        "{},mean_api_calls,,{}\n",
                        csv_escape(name),
                        report.mean_api_calls
                    ));
                    out.push_str(&format!("{},mean_cost,,{}\n", csv_escape(name), report.mean_cost));
                    out.push_str(&format!("{},total_cost,,{}\n", csv_escape(name), report.total_cost));
                }
                Err(err) => {
                    out.push_str(&format!("{},error,,{}\n", csv_escape(name), csv_escape(&err.to_string())));
                }
            }
        }
        out
    }

    /// Fixed-width comparison table for terminal reading.
    pub fn to_table(&self) -> String {
        let ks: Vec<usize> = self
            .rows
            .iter()
            .find_map(|(_, r)| r.as_ref().ok().map(|r| r.pass_at.keys().copied().collect()))
            .unwrap_or_else(|| vec![1]);

        let mut header: Vec<String> = vec!["policy".into(), "acc".into()];
        for k in &ks {
            header.push(format!("pass@{k}"));
        }
        for k in &ks {
            header.push(format!("sc@{k}"));
        }
        header.push("calls".into());
        header.push("cost".into());

        let mut body: Vec<Vec<String>> = Vec::new();
        for (name, report) in &self.rows {
            match report {
                Ok(report) => {
                    let mut row = vec![name.clone(), format!("{:.4}", report.accuracy)];
                    for k in &ks {
                        row.push(report.pass_at.get(k).map_or("-".into(), |v| format!("{v:.4}")));
                    }
                    for k in &ks {
                        row.push(report.sc_at.get(k).map_or("-".into(), |v| format!("{v:.4}")));
                    }
                    row.push(format!("{:.2}", report.mean_api_calls));
                    row.push(format!("{:.6}", report.mean_cost));
                    body.push(row);
                }
                Err(err) => {
                    let mut row = vec![name.clone(), format!("error: {err}")];
                    row.resize(header.len(), String::new());
                    body.push(row);
                }
            }
        }

        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &body {
            for (width, cell) in widths.iter_mut().zip(row) {
                *width = (*width).max(cell.len());
            }
        }
        let render_row = |cells: &[String]| -> String {
            cells
                .iter()
                .zip(&widths)
                .map(|(cell, width)| format!("{cell:<width$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = render_row(&header);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for row in &body {
            out.push_str(&render_row(row));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DomainConfig, ExecutorConfig, SimPoolConfig};
    use crate::policy::{ClusterGreedyPolicy, RandomPolicy};
    use crate::pool::{build_pool, ModelSpec, Price, PriceSheet, RoutingPool, ToolKind, ToolSpec};
    use crate::profile::{fit_profile, FitOptions};
    use crate::embed::EncoderConfig;
    use rand::Rng;

    fn bools(rows: &[&[u8]]) -> OutcomeMatrix {
        rows.iter().map(|row| row.iter().map(|b| *b == 1).collect()).collect()
    }

    #[test]
    fn pass_at_k_hand_cases() {
        assert_eq!(pass_at_k(&bools(&[&[0, 1]]), 2).unwrap(), 1.0);
        assert_eq!(pass_at_k(&bools(&[&[0, 0], &[1, 1]]), 1).unwrap(), 0.5);
        assert_eq!(pass_at_k(&bools(&[&[0, 1], &[0, 0]]), 1).unwrap(), 0.0);
    }

    #[test]
    fn pass_at_k_matches_direct_scan() {
        let mut rng = stream(31, &[]);
        let matrix: OutcomeMatrix =
            (0..50).map(|_| (0..16).map(|_| rng.random_bool(0.3)).collect()).collect();
        for k in 1..=16 {
            let got = pass_at_k(&matrix, k).unwrap();
            let mut hits = 0usize;
            for row in &matrix {
                let mut any = false;
                for outcome in row.iter().take(k) {
                    any = any || *outcome;
                }
                if any {
                    hits += 1;
                }
            }
            assert_eq!(got, hits as f64 / 50.0, "k = {k}");
        }
    }

    #[test]
    fn pass_at_k_is_nondecreasing_in_k() {
        let mut rng = stream(32, &[]);
        for _ in 0..20 {
            let matrix: OutcomeMatrix =
                (0..30).map(|_| (0..8).map(|_| rng.random_bool(0.2)).collect()).collect();
            let mut previous = 0.0;
            for k in 1..=8 {
                let value = pass_at_k(&matrix, k).unwrap();
                assert!(value >= previous, "pass@{k} = {value} < pass@{} = {previous}", k - 1);
                previous = value;
            }
        }
    }

    #[test]
    fn pass_at_k_rejects_bad_shapes() {
        assert!(matches!(pass_at_k(&bools(&[&[1]]), 0), Err(EvalError::ZeroK)));
        assert!(matches!(pass_at_k(&[], 1), Err(EvalError::Empty)));
        let ragged = vec![vec![true, false], vec![true]];
        assert!(matches!(pass_at_k(&ragged, 2), Err(EvalError::ShortRow { index: 1, .. })));
    }

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn majority_vote_counts_and_breaks_ties_to_earliest() {
        assert_eq!(majority_vote(&strings(&["A", "A", "B"]), 3).unwrap(), "A");
        assert_eq!(majority_vote(&strings(&["A", "B"]), 2).unwrap(), "A");
        assert_eq!(majority_vote(&strings(&["B", "A", "A"]), 3).unwrap(), "A");
        // Normalized forms vote together; the raw text of the first
        // occurrence represents the group.
        assert_eq!(majority_vote(&strings(&["42.", "42", "7"]), 3).unwrap(), "42.");
        // Only the first k answers participate.
        assert_eq!(majority_vote(&strings(&["A", "B", "B"]), 1).unwrap(), "A");
        assert!(majority_vote(&strings(&["A"]), 2).is_err());
    }

    #[test]
    fn self_consistency_hand_cases() {
        let answers = vec![strings(&["A", "A", "B"])];
        let golds = vec!["A".to_string()];
        assert_eq!(self_consistency(&answers, &golds, 3, Matcher::Exact).unwrap(), 1.0);

        let answers = vec![strings(&["A", "B"])];
        assert_eq!(self_consistency(&answers, &golds, 2, Matcher::Exact).unwrap(), 1.0);
        let golds_b = vec!["B".to_string()];
        assert_eq!(self_consistency(&answers, &golds_b, 2, Matcher::Exact).unwrap(), 0.0);
    }

    #[test]
    fn majority_amplifies_above_chance_accuracy() {
        let mut rng = stream(33, &[]);
        let queries = 100;
        let gold = "right".to_string();
        let mut answers: Vec<Vec<String>> = Vec::new();
        for q in 0..queries {
            answers.push(
                (0..8)
                    .map(|s| {
                        if rng.random_bool(0.6) {
                            gold.clone()
                        } else {
                            format!("wrong-{q}-{s}")
                        }
                    })
                    .collect(),
            );
        }
        let golds = vec![gold; queries];
        let sc8 = self_consistency(&answers, &golds, 8, Matcher::Exact).unwrap();
        let pass1 = pass_at_k(
            &answers
                .iter()
                .map(|row| row.iter().map(|a| a == "right").collect())
                .collect::<OutcomeMatrix>(),
            1,
        )
        .unwrap();
        assert!(sc8 >= pass1, "sc@8 = {sc8} < pass@1 = {pass1}");
        assert!(sc8 > 0.9, "binomial majority should land near 0.99, got {sc8}");
    }

    fn hand_record(domain: Option<&str>, api_calls: usize, cost_pico: u128) -> EpisodeRecord {
        use crate::reward::RewardBreakdown;
        EpisodeRecord {
            query_id: "q".into(),
            query: "q".into(),
            domain: domain.map(|d| d.to_string()),
            gold: None,
            trajectory_text: String::new(),
            answer: String::new(),
            reward: RewardBreakdown { fmt: 0.0, out: 0.0, sel: 0.0, total: 0.0 },
            sel_tabulated: false,
            observations: Vec::new(),
            api_calls,
            cost: Cost::from_pico(cost_pico),
            steps: Vec::new(),
        }
    }

    #[test]
    fn usage_report_means_and_medians() {
        let records = vec![hand_record(Some("math"), 1, 0), hand_record(Some("math"), 3, 0)];
        let report = usage_report(&records);
        let overall = report.overall.unwrap();
        assert_eq!(overall.mean_api_calls, 2.0);
        assert_eq!(overall.median_api_calls, 2.0);
        assert_eq!(report.per_domain.len(), 1);
        assert_eq!(report.per_domain["math"].episodes, 2);

        let empty = usage_report(&[]);
        assert!(empty.overall.is_none());
        assert!(empty.per_domain.is_empty());
    }

    #[test]
    fn usage_totals_equal_raw_ledger_fold() {
        let mut rng = stream(34, &[]);
        let domains = ["math", "code", "facts"];
        let mut records = Vec::new();
        let mut total_cost: u128 = 0;
        let mut total_calls: u64 = 0;
        let mut calls_by_domain: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for _ in 0..500 {
            let domain = domains[rng.random_range(0..3)];
            let calls = rng.random_range(0..5usize);
            let cost = rng.random_range(0..10_000_000u128);
            total_cost += cost;
            total_calls += calls as u64;
            calls_by_domain.entry(domain).or_default().push(calls);
            records.push(hand_record(Some(domain), calls, cost));
        }
        let report = usage_report(&records);
        let overall = report.overall.unwrap();
        assert_eq!(overall.total_cost, Cost::from_pico(total_cost));
        assert_eq!(overall.total_api_calls, total_calls);
        assert_eq!(overall.mean_api_calls, total_calls as f64 / 500.0);
        for (domain, calls) in calls_by_domain {
            let mut sorted = calls.clone();
            sorted.sort_unstable();
            let n = sorted.len();
            let median = if n % 2 == 1 {
                sorted[n / 2] as f64
            } else {
                (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
            };
            assert_eq!(report.per_domain[domain].median_api_calls, median, "{domain}");
            assert_eq!(report.per_domain[domain].episodes, n);
        }
    }

    #[test]
    fn ks_are_powers_of_two_capped_by_samples() {
        assert_eq!(ks_up_to(16), vec![1, 2, 4, 8, 16]);
        assert_eq!(ks_up_to(6), vec![1, 2, 4, 6]);
        assert_eq!(ks_up_to(1), vec![1]);
        assert_eq!(ks_up_to(3), vec![1, 2, 3]);
    }

    #[test]
    fn dataset_round_trips_and_rejects_duplicates() {
        let text = concat!(
            r#"{"id":"a","query":"one","gold":"1","domain":"math","matcher":"numeric"}"#,
            "\n\n",
            r#"{"id":"b","query":"two","gold":"2"}"#,
            "\n",
        );
        let dataset = EvalDataset::from_jsonl(text).unwrap();
        assert_eq!(dataset.len(), 2);
        assert_eq!(dataset.records()[0].matcher, Matcher::Numeric);
        assert_eq!(dataset.records()[1].matcher, Matcher::Exact);
        assert_eq!(dataset.records()[1].domain, None);
        let back = EvalDataset::from_jsonl(&dataset.to_jsonl()).unwrap();
        assert_eq!(back, dataset);

        let dup = concat!(
            r#"{"id":"a","query":"one","gold":"1"}"#,
            "\n",
            r#"{"id":"a","query":"two","gold":"2"}"#,
            "\n"
        );
        assert!(matches!(EvalDataset::from_jsonl(dup), Err(EvalError::DuplicateId(_))));

        let bad = r#"{"id":"a","query":"one","gold":"1","matcher":"fuzzy"}"#;
        assert!(matches!(EvalDataset::from_jsonl(bad), Err(EvalError::Parse { line: 1, .. })));
    }

    fn planted_pool() -> RoutingPool {
        let mut prices = PriceSheet::new();
        for name in ["m-math", "m-code", "m-facts"] {
            prices.set(name, Price::from_pico(1_000_000), Price::from_pico(2_000_000));
        }
        build_pool(
            vec![ModelSpec::new("m-math"), ModelSpec::new("m-code"), ModelSpec::new("m-facts")],
            vec![ToolSpec::new("sim", ToolKind::Simulated)],
            prices,
        )
        .unwrap()
    }

    fn planted_executor() -> Executor {
        let mut sim = SimPoolConfig::new(5);
        sim.default_prob = 0.3;
        for (domain, best) in [("math", "m-math"), ("code", "m-code"), ("facts", "m-facts")] {
            let mut d = DomainConfig::new(domain);
            for model in ["m-math", "m-code", "m-facts"] {
                let p = if model == best { 0.9 } else { 0.3 };
                d = d.with_prob(format!("{model}@@sim"), p);
            }
            sim.domains.push(d);
        }
        Executor::new(planted_pool(), ExecutorConfig::simulated(sim)).unwrap()
    }

    fn domain_query(domain: &str, index: usize) -> String {
        let vocab: &[&str] = match domain {
            "math" => &["integral", "derivative", "algebra", "equation"],
            "code" => &["function", "compile", "debug", "refactor"],
            _ => &["capital", "history", "population", "treaty"],
        };
        (0..6).map(|i| vocab[(index + i) % vocab.len()]).collect::<Vec<_>>().join(" ")
    }

    fn planted_dataset(per_domain: usize, offset: usize) -> EvalDataset {
        let mut records = Vec::new();
        for domain in ["math", "code", "facts"] {
            for index in 0..per_domain {
                let i = offset + index;
                records.push(EvalRecord {
                    id: format!("{domain}-{i}"),
                    query: domain_query(domain, i),
                    gold: format!("gold-{domain}-{i}"),
                    domain: Some(domain.to_string()),
                    matcher: Matcher::Exact,
                });
            }
        }
        EvalDataset::new(records).unwrap()
    }

    fn planted_tasks(per_domain: usize) -> Vec<TaskContext> {
        planted_dataset(per_domain, 0).records().iter().map(EvalRecord::task).collect()
    }

    #[test]
    fn greedy_beats_random_on_the_planted_gap() {
        let executor = planted_executor();
        let tasks = planted_tasks(30);
        let encoder = EncoderConfig::default_hashed(11);
        let profile =
            fit_profile(&tasks, &encoder, &executor, &FitOptions::new(3, 2025)).unwrap();
        let dataset = planted_dataset(20, 100);

        let random = RandomPolicy { pairs: executor.pool().pair_count() };
        let greedy = ClusterGreedyPolicy { profile: &profile };
        let options = EvalOptions { samples: 1, seed: 9, ..EvalOptions::default() };
        let comparison = compare_routers(
            &[("random", &random), ("cluster", &greedy)],
            &dataset,
            &executor,
            None,
            &options,
        );
        let random_report = comparison.rows[0].1.as_ref().unwrap();
        let greedy_report = comparison.rows[1].1.as_ref().unwrap();
        assert!(
            greedy_report.accuracy > random_report.accuracy,
            "greedy {} vs random {}",
            greedy_report.accuracy,
            random_report.accuracy
        );
        // The planted gap is 0.9 vs a 0.5 uniform mixture; halfway separates.
        assert!(greedy_report.accuracy > 0.7);
        assert!(random_report.accuracy < 0.8);
        assert_eq!(greedy_report.queries, 60);
        assert!(greedy_report.per_domain.contains_key("math"));
    }

    #[test]
    fn single_policy_comparison_reduces_to_its_report() {
        let executor = planted_executor();
        let dataset = planted_dataset(5, 0);
        let random = RandomPolicy { pairs: executor.pool().pair_count() };
        let options = EvalOptions { samples: 1, seed: 3, ..EvalOptions::default() };
        let comparison =
            compare_routers(&[("random", &random)], &dataset, &executor, None, &options);
        assert_eq!(comparison.rows.len(), 1);
        let direct =
            evaluate_policy("random", &random, &dataset, &executor, None, &options).unwrap();
        assert_eq!(comparison.rows[0].1.as_ref().unwrap(), &direct);
        assert_eq!(direct.accuracy, direct.pass_at[&1]);
    }

    #[test]
    fn comparison_is_deterministic_and_order_invariant() {
        let executor = planted_executor();
        let dataset = planted_dataset(6, 0);
        let random = RandomPolicy { pairs: executor.pool().pair_count() };
        let tasks = planted_tasks(12);
        let encoder = EncoderConfig::default_hashed(11);
        let profile = fit_profile(&tasks, &encoder, &executor, &FitOptions::new(3, 1)).unwrap();
        let greedy = ClusterGreedyPolicy { profile: &profile };
        let options = EvalOptions { samples: 2, seed: 77, ..EvalOptions::default() };

        let forward = compare_routers(
            &[("random", &random), ("cluster", &greedy)],
            &dataset,
            &executor,
            None,
            &options,
        );
        let forward_again = compare_routers(
            &[("random", &random), ("cluster", &greedy)],
            &dataset,
            &executor,
            None,
            &options,
        );
        assert_eq!(forward.to_csv(), forward_again.to_csv());

        let reversed = compare_routers(
            &[("cluster", &greedy), ("random", &random)],
            &dataset,
            &executor,
            None,
            &options,
        );
        let by_name = |c: &Comparison, name: &str| -> MetricReport {
            c.rows
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, r)| r.as_ref().ok().cloned())
                .unwrap()
        };
        assert_eq!(by_name(&forward, "random"), by_name(&reversed, "random"));
        assert_eq!(by_name(&forward, "cluster"), by_name(&reversed, "cluster"));
    }

    #[test]
    fn csv_and_table_render_rows_for_every_policy() {
        let executor = planted_executor();
        let dataset = planted_dataset(3, 0);
        let random = RandomPolicy { pairs: executor.pool().pair_count() };
        let options = EvalOptions { samples: 4, seed: 5, ..EvalOptions::default() };
        let comparison =
            compare_routers(&[("random", &random)], &dataset, &executor, None, &options);
        let csv = comparison.to_csv();
        assert!(csv.starts_with("policy,metric,k,value\n"));
        assert!(csv.contains("random,accuracy,,"));
        assert!(csv.contains("random,pass_at,4,"));
        assert!(csv.contains("random,sc_at,2,"));
        assert!(csv.contains("random,total_cost,,"));
        let table = comparison.to_table();
        assert!(table.contains("pass@4"));
        assert!(table.contains("random"));
    }

    #[test]
    fn csv_escapes_awkward_fields() {
        assert_eq!(csv_escape("plain"), "plain");
        assert_eq!(csv_escape("a,b"), "\"a,b\"");
        assert_eq!(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
