//! The tagged trajectory format: parse, render, and structural validation.
//!
//! A trajectory is a flat sequence of `<think>`, `<route>`, `<information>`,
//! and `<answer>` blocks (`<search>` is accepted as an alias of `<route>`).
//! Tags are case-sensitive and never nest: a block's content runs to the
//! first closer of its own kind, and text outside any block is ignored for
//! structure but kept in `raw_text`. A route body has the shape
//! `Model@@Tool:Input`, split at the first `@@` and then the first `:` after
//! it, so inputs may contain further colons freely.
//!
//! Structural validity means all of: every tag opened and closed, every
//! route body well-formed, at least one complete think block, exactly one
//! answer block in final position, and route and information block counts
//! equal. [`parse`] reports every independent violation rather than stopping
//! at the first, because the format reward needs the full picture and
//! fixtures assert exact violation sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pool::RoutingPool;

/// One block of a trajectory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Think { text: String },
    Route { model: String, tool: String, input: String },
    Information { text: String },
    Answer { text: String },
}

impl Segment {
    pub fn think(text: impl Into<String>) -> Segment {
        Segment::Think { text: text.into() }
    }

    pub fn route(
        model: impl Into<String>,
        tool: impl Into<String>,
        input: impl Into<String>,
    ) -> Segment {
        Segment::Route { model: model.into(), tool: tool.into(), input: input.into() }
    }

    pub fn information(text: impl Into<String>) -> Segment {
        Segment::Information { text: text.into() }
    }

    pub fn answer(text: impl Into<String>) -> Segment {
        Segment::Answer { text: text.into() }
    }
}

/// Ordered segments plus the original text when parsed from one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl Trajectory {
    pub fn from_segments(segments: Vec<Segment>) -> Trajectory {
        Trajectory { segments, raw_text: None }
    }

    /// The answer block's text, when exactly the valid shape is present.
    pub fn answer_text(&self) -> Option<&str> {
        match self.segments.last() {
            Some(Segment::Answer { text }) => Some(text),
            _ => None,
        }
    }
}

/// Which structural rule a violation breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Hash)]
#[serde(rename_all = "snake_case")]
pub enum ViolationRule {
    TagIntegrity,
    InvocationSyntax,
    UnknownPair,
    MissingThink,
    AnswerCount,
    RouteInfoMismatch,
}

impl ViolationRule {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationRule::TagIntegrity => "tag_integrity",
            ViolationRule::InvocationSyntax => "invocation_syntax",
            ViolationRule::UnknownPair => "unknown_pair",
            ViolationRule::MissingThink => "missing_think",
            ViolationRule::AnswerCount => "answer_count",
            ViolationRule::RouteInfoMismatch => "route_info_mismatch",
        }
    }
}

impl std::str::FromStr for ViolationRule {
    type Err = String;

    fn from_str(s: &str) -> Result<ViolationRule, String> {
        match s {
            "tag_integrity" => Ok(ViolationRule::TagIntegrity),
            "invocation_syntax" => Ok(ViolationRule::InvocationSyntax),
            "unknown_pair" => Ok(ViolationRule::UnknownPair),
            "missing_think" => Ok(ViolationRule::MissingThink),
            "answer_count" => Ok(ViolationRule::AnswerCount),
            "route_info_mismatch" => Ok(ViolationRule::RouteInfoMismatch),
            other => Err(format!("unknown violation rule {other:?}")),
        }
    }
}

impl std::fmt::Display for ViolationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One broken rule, located by a byte span in the source text. Violations
/// derived from an already-typed trajectory use the whole-text span (or
/// `(0, 0)` when no source text exists).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormatViolation {
    pub rule: ViolationRule,
    pub span: (usize, usize),
    pub detail: String,
}

impl FormatViolation {
    fn new(rule: ViolationRule, span: (usize, usize), detail: impl Into<String>) -> FormatViolation {
        FormatViolation { rule, span, detail: detail.into() }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("{tag} content contains its own closing tag {closer:?}")]
    EmbeddedCloser { tag: &'static str, closer: &'static str },
    #[error("route model name {0:?} contains \"@@\"")]
    SeparatorInModel(String),
    #[error("route tool name {0:?} contains \":\"")]
    ColonInTool(String),
    #[error("route model and tool names must be non-empty")]
    EmptyRouteName,
}

const TAG_NAMES: [&str; 5] = ["think", "route", "search", "information", "answer"];

#[derive(Clone, Copy, PartialEq, Debug)]
enum BlockKind {
    Think,
    Route,
    Information,
    Answer,
}

fn block_kind(name: &str) -> BlockKind {
    match name {
        "think" => BlockKind::Think,
        "route" | "search" => BlockKind::Route,
        "information" => BlockKind::Information,
        "answer" => BlockKind::Answer,
        _ => unreachable!("scanner only produces known tag names"),
    }
}

struct TagToken {
    name: &'static str,
    closing: bool,
    start: usize,
    end: usize,
}

/// Earliest tag token at or after `from`. No token is a prefix of another,
/// so the earliest match is unambiguous.
fn next_tag_token(text: &str, from: usize) -> Option<TagToken> {
    let mut best: Option<TagToken> = None;
    for name in TAG_NAMES {
        for (pattern, closing) in [(format!("<{name}>"), false), (format!("</{name}>"), true)] {
            if let Some(offset) = text[from..].find(&pattern) {
                let start = from + offset;
                if best.as_ref().map_or(true, |b| start < b.start) {
                    best = Some(TagToken { name, closing, start, end: start + pattern.len() });
                }
            }
        }
    }
    best
}

fn parse_route_body(
    body: &str,
    span: (usize, usize),
    violations: &mut Vec<FormatViolation>,
) -> Option<Segment> {
    let Some((model_part, rest)) = body.split_once("@@") else {
        violations.push(FormatViolation::new(
            ViolationRule::InvocationSyntax,
            span,
            format!("route body {body:?} has no \"@@\" separator"),
        ));
        return None;
    };
    let Some((tool_part, input)) = rest.split_once(':') else {
        violations.push(FormatViolation::new(
            ViolationRule::InvocationSyntax,
            span,
            format!("route body {body:?} has no \":\" after \"@@\""),
        ));
        return None;
    };
    let model = model_part.trim();
    let tool = tool_part.trim();
    let mut ok = true;
    if model.is_empty() {
        violations.push(FormatViolation::new(
            ViolationRule::InvocationSyntax,
            span,
            "route model name is empty",
        ));
        ok = false;
    }
    if tool.is_empty() {
        violations.push(FormatViolation::new(
            ViolationRule::InvocationSyntax,
            span,
            "route tool name is empty",
        ));
        ok = false;
    }
    if input.is_empty() {
        violations.push(FormatViolation::new(
            ViolationRule::InvocationSyntax,
            span,
            "route input is empty",
        ));
        ok = false;
    }
    ok.then(|| Segment::route(model, tool, input))
}

struct ScanOutcome {
    segments: Vec<Segment>,
    violations: Vec<FormatViolation>,
}

/// Single pass over the text: extracts well-formed blocks, reports tag and
/// route-syntax problems with precise spans, then applies the document-level
/// rules over block counts (so a route with a malformed body still counts as
/// a route block for the route/information balance).
fn scan(text: &str) -> ScanOutcome {
    let mut segments = Vec::new();
    let mut violations = Vec::new();
    let mut complete_thinks = 0usize;
    let mut route_blocks = 0usize;
    let mut info_blocks = 0usize;
    let mut answer_spans: Vec<(usize, usize)> = Vec::new();
    let mut last_block_kind: Option<BlockKind> = None;
    let mut trailing_block_end = 0usize;

    let mut cursor = 0usize;
    while let Some(token) = next_tag_token(text, cursor) {
        if token.closing {
            violations.push(FormatViolation::new(
                ViolationRule::TagIntegrity,
                (token.start, token.end),
                format!("closing tag </{}> has no matching opener", token.name),
            ));
            cursor = token.end;
            continue;
        }
        let closer = format!("</{}>", token.name);
        let Some(close_offset) = text[token.end..].find(&closer) else {
            violations.push(FormatViolation::new(
                ViolationRule::TagIntegrity,
                (token.start, token.end),
                format!("tag <{}> is never closed", token.name),
            ));
            cursor = token.end;
            continue;
        };
        let content_span = (token.end, token.end + close_offset);
        let block_span = (token.start, content_span.1 + closer.len());
        let content = &text[content_span.0..content_span.1];
        let kind = block_kind(token.name);
        match kind {
            BlockKind::Think => {
                complete_thinks += 1;
                segments.push(Segment::think(content));
            }
            BlockKind::Route => {
                route_blocks += 1;
                if let Some(seg) = parse_route_body(content, block_span, &mut violations) {
                    segments.push(seg);
                }
            }
            BlockKind::Information => {
                info_blocks += 1;
                if content.is_empty() {
                    violations.push(FormatViolation::new(
                        ViolationRule::TagIntegrity,
                        block_span,
                        "<information> block is empty",
                    ));
                } else {
                    segments.push(Segment::information(content));
                }
            }
            BlockKind::Answer => {
                answer_spans.push(block_span);
                if content.is_empty() {
                    violations.push(FormatViolation::new(
                        ViolationRule::TagIntegrity,
                        block_span,
                        "<answer> block is empty",
                    ));
                } else {
                    segments.push(Segment::answer(content));
                }
            }
        }
        last_block_kind = Some(kind);
        trailing_block_end = block_span.1;
        cursor = block_span.1;
    }

    let whole = (0, text.len());
    if complete_thinks == 0 {
        violations.push(FormatViolation::new(
            ViolationRule::MissingThink,
            whole,
            "no complete <think> block",
        ));
    }
    match answer_spans.len() {
        0 => violations.push(FormatViolation::new(
            ViolationRule::AnswerCount,
            whole,
            "expected exactly one <answer> block, found 0",
        )),
        1 => {
            if last_block_kind != Some(BlockKind::Answer) || answer_spans[0].1 != trailing_block_end
            {
                violations.push(FormatViolation::new(
                    ViolationRule::AnswerCount,
                    answer_spans[0],
                    "<answer> block is not the final block",
                ));
            }
        }
        n => violations.push(FormatViolation::new(
            ViolationRule::AnswerCount,
            answer_spans[1],
            format!("expected exactly one <answer> block, found {n}"),
        )),
    }
    if route_blocks != info_blocks {
        violations.push(FormatViolation::new(
            ViolationRule::RouteInfoMismatch,
            whole,
            format!("{route_blocks} route block(s) vs {info_blocks} information block(s)"),
        ));
    }

    ScanOutcome { segments, violations }
}

/// Parses `text` into a structurally valid trajectory, or reports every
/// independent violation. Pool membership is not checked here; see
/// [`validate_structure`] and [`trajectory_violations`].
pub fn parse(text: &str) -> Result<Trajectory, Vec<FormatViolation>> {
    let outcome = scan(text);
    if outcome.violations.is_empty() {
        Ok(Trajectory { segments: outcome.segments, raw_text: Some(text.to_string()) })
    } else {
        Err(outcome.violations)
    }
}

fn render_block(tag: &'static str, closer: &'static str, content: &str, out: &mut String) -> Result<(), RenderError> {
    if content.contains(closer) {
        return Err(RenderError::EmbeddedCloser { tag, closer });
    }
    out.push('<');
    out.push_str(tag);
    out.push('>');
    out.push_str(content);
    out.push_str(closer);
    Ok(())
}

/// Canonical text for a segment list. Mechanical inverse of the parser: it
/// only rejects content the parser could not tokenize back (a closer of the
/// block's own kind, or route names that would split wrongly), so invalid
/// but renderable trajectories still round-trip into their violations.
pub fn render_segments(segments: &[Segment]) -> Result<String, RenderError> {
    let mut out = String::new();
    for segment in segments {
        match segment {
            Segment::Think { text } => render_block("think", "</think>", text, &mut out)?,
            Segment::Route { model, tool, input } => {
                if model.trim().is_empty() || tool.trim().is_empty() {
                    return Err(RenderError::EmptyRouteName);
                }
                if model.contains("@@") {
                    return Err(RenderError::SeparatorInModel(model.clone()));
                }
                if tool.contains(':') {
                    return Err(RenderError::ColonInTool(tool.clone()));
                }
                let body = format!("{model}@@{tool}:{input}");
                render_block("route", "</route>", &body, &mut out)?;
            }
            Segment::Information { text } => {
                render_block("information", "</information>", text, &mut out)?
            }
            Segment::Answer { text } => render_block("answer", "</answer>", text, &mut out)?,
        }
    }
    Ok(out)
}

/// Canonical text for a trajectory; `<search>` blocks render as `<route>`.
pub fn render(trajectory: &Trajectory) -> Result<String, RenderError> {
    render_segments(&trajectory.segments)
}

fn typed_span(trajectory: &Trajectory) -> (usize, usize) {
    (0, trajectory.raw_text.as_ref().map_or(0, String::len))
}

/// Checks the five structural rules over a typed trajectory, including pool
/// membership of every routed pair. Returns an empty list iff the trajectory
/// is fully valid. Pure: equal inputs produce equal violation lists.
pub fn validate_structure(trajectory: &Trajectory, pool: &RoutingPool) -> Vec<FormatViolation> {
    let span = typed_span(trajectory);
    let mut violations = Vec::new();
    let mut thinks = 0usize;
    let mut routes = 0usize;
    let mut infos = 0usize;
    let mut answers = 0usize;
    for segment in &trajectory.segments {
        match segment {
            Segment::Think { .. } => thinks += 1,
            Segment::Route { model, tool, input } => {
                routes += 1;
                if model.trim().is_empty() || tool.trim().is_empty() {
                    violations.push(FormatViolation::new(
                        ViolationRule::InvocationSyntax,
                        span,
                        "route model and tool names must be non-empty",
                    ));
                }
                if input.is_empty() {
                    violations.push(FormatViolation::new(
                        ViolationRule::InvocationSyntax,
                        span,
                        "route input is empty",
                    ));
                }
            }
            Segment::Information { text } => {
                infos += 1;
                if text.is_empty() {
                    violations.push(FormatViolation::new(
                        ViolationRule::TagIntegrity,
                        span,
                        "<information> block is empty",
                    ));
                }
            }
            Segment::Answer { text } => {
                answers += 1;
                if text.is_empty() {
                    violations.push(FormatViolation::new(
                        ViolationRule::TagIntegrity,
                        span,
                        "<answer> block is empty",
                    ));
                }
            }
        }
    }
    if thinks == 0 {
        violations.push(FormatViolation::new(
            ViolationRule::MissingThink,
            span,
            "no complete <think> block",
        ));
    }
    if answers != 1 {
        violations.push(FormatViolation::new(
            ViolationRule::AnswerCount,
            span,
            format!("expected exactly one <answer> block, found {answers}"),
        ));
    } else if !matches!(trajectory.segments.last(), Some(Segment::Answer { .. })) {
        violations.push(FormatViolation::new(
            ViolationRule::AnswerCount,
            span,
            "<answer> block is not the final block",
        ));
    }
    if routes != infos {
        violations.push(FormatViolation::new(
            ViolationRule::RouteInfoMismatch,
            span,
            format!("{routes} route block(s) vs {infos} information block(s)"),
        ));
    }
    for segment in &trajectory.segments {
        if let Segment::Route { model, tool, .. } = segment {
            if pool.resolve_pair(model, tool).is_err() {
                violations.push(FormatViolation::new(
                    ViolationRule::UnknownPair,
                    span,
                    format!("pair {model}@@{tool} is not in the routing pool"),
                ));
            }
        }
    }
    violations
}

/// Text of the last well-formed `<answer>` block, even when the document as
/// a whole is invalid. Scoring sums its components unconditionally, so a
/// malformed trajectory still gets its answer judged when one exists.
pub fn extract_answer_text(text: &str) -> Option<String> {
    let outcome = scan(text);
    outcome.segments.into_iter().rev().find_map(|segment| match segment {
        Segment::Answer { text } => Some(text),
        _ => None,
    })
}

/// All violations for raw text against a pool: the parser's tag, syntax, and
/// document-level findings plus pool-membership checks on whatever route
/// segments did parse. This is what the fixture corpus and the format reward
/// replay.
pub fn trajectory_violations(text: &str, pool: &RoutingPool) -> Vec<FormatViolation> {
    let outcome = scan(text);
    let mut violations = outcome.violations;
    for segment in &outcome.segments {
        if let Segment::Route { model, tool, .. } = segment {
            if pool.resolve_pair(model, tool).is_err() {
                violations.push(FormatViolation::new(
                    ViolationRule::UnknownPair,
                    (0, text.len()),
                    format!("pair {model}@@{tool} is not in the routing pool"),
                ));
            }
        }
    }
    violations
}
