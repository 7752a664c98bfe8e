//! Teacher-facing diagnostic concept maps.
//!
//! A map is a four-layer DAG, Topic -> Observation -> Understanding ->
//! Feedback, generated from the drawing specification (profile plus prompt)
//! rather than from pixels. [`validate_map`] is a pure structural check;
//! [`render_map`] emits Graphviz DOT.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::profiles::{evidence_json, CapabilityProfile, PerformanceLevel};
use crate::providers::{generate_structured, GenerationProvider, ProviderError, StructuredRequest, TemplateId};
use crate::standards::TopicSpec;
use crate::synthesis::{coverage_gaps, ids_json, ImagePromptSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Topic,
    Observation,
    Understanding,
    Feedback,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Topic, Layer::Observation, Layer::Understanding, Layer::Feedback];

    pub fn rank(self) -> u8 {
        match self {
            Layer::Topic => 0,
            Layer::Observation => 1,
            Layer::Understanding => 2,
            Layer::Feedback => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layer::Topic => "Topic",
            Layer::Observation => "Observation",
            Layer::Understanding => "Understanding",
            Layer::Feedback => "Feedback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapNode {
    pub id: String,
    pub layer: Layer,
    pub label: String,
    #[serde(default)]
    pub misconception: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEdge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptMap {
    pub nodes: Vec<MapNode>,
    pub edges: Vec<MapEdge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_ref: Option<String>,
}

pub mod rules {
    pub const NON_ADJACENT_OR_BACKWARD_EDGE: &str = "non-adjacent-or-backward-edge";
    pub const FEEDBACK_ON_CORRECT: &str = "feedback-on-correct";
    pub const TOPIC_COUNT: &str = "topic-count";
    pub const ORPHAN_OBSERVATION: &str = "orphan-observation";
    pub const ORPHAN_UNDERSTANDING: &str = "orphan-understanding";
    pub const FEEDBACK_ORPHAN: &str = "feedback-orphan";
    pub const DUPLICATE_NODE_ID: &str = "duplicate-node-id";
    pub const DANGLING_EDGE: &str = "dangling-edge";
    pub const CYCLE: &str = "cycle";
    pub const EMPTY_LABEL: &str = "empty-label";
    pub const MISCONCEPTION_OFF_UNDERSTANDING: &str = "misconception-off-understanding";
    pub const MISSING_OBSERVATION: &str = "missing-observation";
    pub const MISSING_UNDERSTANDING: &str = "missing-understanding";
    pub const OBSERVATION_COUNT: &str = "observation-count";
    pub const UNDERSTANDING_COUNT: &str = "understanding-count";
    pub const FEEDBACK_COUNT: &str = "feedback-count";
}

/// One failed rule and where it failed (a node id or `from->to`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub locus: String,
}

impl Violation {
    fn new(rule: &str, locus: impl Into<String>) -> Self {
        Self {
            rule: rule.to_string(),
            locus: locus.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}", self.rule, self.locus)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn rules(&self) -> BTreeSet<&str> {
        self.violations.iter().map(|v| v.rule.as_str()).collect()
    }
}

impl ConceptMap {
    pub fn node(&self, id: &str) -> Option<&MapNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn count(&self, layer: Layer) -> usize {
        self.nodes.iter().filter(|n| n.layer == layer).count()
    }

    pub fn misconception_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.layer == Layer::Understanding && n.misconception).count()
    }

    pub fn children<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |e| e.from == id).map(|e| e.to.as_str())
    }
}

fn has_cycle(ids: &[&str], edges: &[(&str, &str)]) -> Option<String> {
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in edges {
        adj.entry(a).or_default().push(b);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: BTreeMap<&str, u8> = ids.iter().map(|i| (*i, 0)).collect();
    for &start in ids {
        if state[start] != 0 {
            continue;
        }
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        state.insert(start, 1);
        while let Some((node, next)) = stack.pop() {
            let succ = adj.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if next < succ.len() {
                stack.push((node, next + 1));
                let s = succ[next];
                match state.get(s).copied() {
                    Some(0) => {
                        state.insert(s, 1);
                        stack.push((s, 0));
                    }
                    Some(1) => return Some(s.to_string()),
                    _ => {}
                }
            } else {
                state.insert(node, 2);
            }
        }
    }
    None
}

/// Structural validation. Violations are ordered by rule family and then
/// by position in the map; the function never fails.
pub fn validate_map(map: &ConceptMap) -> ValidationReport {
    let mut v = Vec::new();
    let mut seen = BTreeSet::new();
    for n in &map.nodes {
        if !seen.insert(n.id.as_str()) {
            v.push(Violation::new(rules::DUPLICATE_NODE_ID, &n.id));
        }
        if n.label.trim().is_empty() {
            v.push(Violation::new(rules::EMPTY_LABEL, &n.id));
        }
        if n.misconception && n.layer != Layer::Understanding {
            v.push(Violation::new(rules::MISCONCEPTION_OFF_UNDERSTANDING, &n.id));
        }
    }
    let topics = map.count(Layer::Topic);
    if topics != 1 {
        v.push(Violation::new(rules::TOPIC_COUNT, format!("{topics} topic nodes")));
    }
    if map.count(Layer::Observation) == 0 {
        v.push(Violation::new(rules::MISSING_OBSERVATION, "map"));
    }
    if map.count(Layer::Understanding) == 0 {
        v.push(Violation::new(rules::MISSING_UNDERSTANDING, "map"));
    }
    // first node with a given id wins for layer lookups
    let mut by_id: BTreeMap<&str, &MapNode> = BTreeMap::new();
    for n in &map.nodes {
        by_id.entry(n.id.as_str()).or_insert(n);
    }
    let mut live_edges = Vec::new();
    for e in &map.edges {
        let locus = format!("{}->{}", e.from, e.to);
        match (by_id.get(e.from.as_str()), by_id.get(e.to.as_str())) {
            (Some(a), Some(b)) => {
                if b.layer.rank() != a.layer.rank() + 1 {
                    v.push(Violation::new(rules::NON_ADJACENT_OR_BACKWARD_EDGE, locus));
                }
                live_edges.push((e.from.as_str(), e.to.as_str()));
            }
            _ => v.push(Violation::new(rules::DANGLING_EDGE, locus)),
        }
    }
    let ids: Vec<&str> = by_id.keys().copied().collect();
    if let Some(at) = has_cycle(&ids, &live_edges) {
        v.push(Violation::new(rules::CYCLE, at));
    }
    let parents = |id: &str| -> Vec<&MapNode> {
        live_edges.iter().filter(|(_, b)| *b == id).map(|(a, _)| by_id[a]).collect()
    };
    for n in &map.nodes {
        let ps = parents(&n.id);
        match n.layer {
            Layer::Topic => {}
            Layer::Observation => {
                if !ps.iter().any(|p| p.layer == Layer::Topic) {
                    v.push(Violation::new(rules::ORPHAN_OBSERVATION, &n.id));
                }
            }
            Layer::Understanding => {
                if !ps.iter().any(|p| p.layer == Layer::Observation) {
                    v.push(Violation::new(rules::ORPHAN_UNDERSTANDING, &n.id));
                }
            }
            Layer::Feedback => {
                if ps.is_empty() {
                    v.push(Violation::new(rules::FEEDBACK_ORPHAN, &n.id));
                }
                if ps.iter().any(|p| p.layer == Layer::Understanding && !p.misconception) {
                    v.push(Violation::new(rules::FEEDBACK_ON_CORRECT, &n.id));
                }
            }
        }
    }
    ValidationReport { violations: v }
}

/// Size limits kept separate from [`validate_map`] so small hand-built maps
/// stay structurally valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBounds {
    pub observation: (usize, usize),
    pub understanding: (usize, usize),
    pub feedback: (usize, usize),
}

impl Default for SizeBounds {
    fn default() -> Self {
        Self {
            observation: (2, 8),
            understanding: (2, 8),
            feedback: (0, 6),
        }
    }
}

pub fn check_size_bounds(map: &ConceptMap, bounds: &SizeBounds) -> Vec<Violation> {
    let mut v = Vec::new();
    for (layer, (lo, hi), rule) in [
        (Layer::Observation, bounds.observation, rules::OBSERVATION_COUNT),
        (Layer::Understanding, bounds.understanding, rules::UNDERSTANDING_COUNT),
        (Layer::Feedback, bounds.feedback, rules::FEEDBACK_COUNT),
    ] {
        let n = map.count(layer);
        if n < lo || n > hi {
            v.push(Violation::new(rule, format!("{n} {} nodes, allowed {lo}-{hi}", layer.name())));
        }
    }
    v
}

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("concept map rejected: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { violations: Vec<Violation> },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Every check a generated map must pass for `profile`.
pub fn map_violations(map: &ConceptMap, profile: &CapabilityProfile) -> Vec<Violation> {
    let mut v = validate_map(map).violations;
    v.extend(check_size_bounds(map, &SizeBounds::default()));
    for id in &profile.cannot_yet_do {
        let covered = map.nodes.iter().any(|n| {
            n.layer == Layer::Understanding && n.misconception && n.evidence_ref.as_deref() == Some(id.as_str())
        });
        if !covered {
            v.push(Violation::new("unrepresented-gap", id));
        }
    }
    v
}

const MAP_REPAIRS: usize = 1;

/// Generates the map from the drawing specification. The prompt must cover
/// the profile; a map still invalid after one repair is a hard error.
pub fn generate_map(
    topic: &TopicSpec,
    profile: &CapabilityProfile,
    prompt: &ImagePromptSpec,
    gen: &dyn GenerationProvider,
    seed: u64,
) -> Result<ConceptMap, MapError> {
    let (ucan, ucannot) = coverage_gaps(prompt, profile);
    if !ucan.is_empty() || !ucannot.is_empty() {
        return Err(MapError::Precondition(format!(
            "prompt does not cover profile {}: can {ucan:?}, cannot {ucannot:?}",
            profile.id()
        )));
    }
    let mut vars = BTreeMap::new();
    vars.insert("topic_name".to_string(), topic.topic_name.clone());
    vars.insert("code".into(), topic.code().to_string());
    vars.insert("level".into(), profile.level.value().to_string());
    vars.insert("level_name".into(), profile.level.name().into());
    vars.insert("evidence_json".into(), evidence_json(topic));
    vars.insert("can_do_json".into(), ids_json(&profile.can_do));
    vars.insert("cannot_yet_do_json".into(), ids_json(&profile.cannot_yet_do));
    vars.insert("prompt_json".into(), serde_json::to_string(prompt).expect("prompt serializes"));
    let req = StructuredRequest::new(TemplateId::ConceptMap, vars, Some(seed))?;
    let last = parking_lot::Mutex::new(Vec::new());
    let result = generate_structured(gen, req, MAP_REPAIRS, |m: &ConceptMap| {
        let v = map_violations(m, profile);
        if v.is_empty() {
            Ok(())
        } else {
            let msg = v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ");
            *last.lock() = v;
            Err(msg)
        }
    });
    match result {
        Ok(m) => Ok(m),
        Err(ProviderError::SchemaViolation { message, .. }) => {
            let violations = std::mem::take(&mut *last.lock());
            if violations.is_empty() {
                Err(MapError::Invalid {
                    violations: vec![Violation::new("schema", message)],
                })
            } else {
                Err(MapError::Invalid { violations })
            }
        }
        Err(e) => Err(e.into()),
    }
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n")
}

fn node_style(n: &MapNode) -> &'static str {
    match (n.layer, n.misconception) {
        (Layer::Topic, _) => r##"shape=ellipse, style="filled", fillcolor="#dbe4f3", color="#3b5b92""##,
        (Layer::Observation, _) => r##"style="rounded,filled", fillcolor="#f3f3f3", color="#555555""##,
        (Layer::Understanding, false) => r##"style="rounded,filled", fillcolor="#c8e6c9", color="green""##,
        (Layer::Understanding, true) => r##"style="rounded", color="red", penwidth=2"##,
        (Layer::Feedback, _) => r##"style="rounded,filled", fillcolor="#f4a6a6", color="red""##,
    }
}

/// Deterministic DOT text, one rank per layer, top to bottom.
pub fn render_map(map: &ConceptMap) -> Result<String, MapError> {
    let report = validate_map(map);
    if !report.pass() {
        return Err(MapError::Precondition(format!(
            "map fails validation: {}",
            report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
        )));
    }
    let mut out = String::from("digraph concept_map {\n  rankdir=TB;\n  node [shape=box, fontname=\"Helvetica\"];\n");
    for layer in Layer::ALL {
        let members: Vec<&MapNode> = map.nodes.iter().filter(|n| n.layer == layer).collect();
        if members.is_empty() {
            continue;
        }
        out.push_str(&format!("  subgraph layer_{} {{\n    rank=same;\n", layer.name().to_lowercase()));
        for n in members {
            out.push_str(&format!(
                "    \"{}\" [label=\"{}\", {}];\n",
                dot_escape(&n.id),
                dot_escape(&n.label),
                node_style(n)
            ));
        }
        out.push_str("  }\n");
    }
    for e in &map.edges {
        out.push_str(&format!("  \"{}\" -> \"{}\";\n", dot_escape(&e.from), dot_escape(&e.to)));
    }
    out.push_str("}\n");
    Ok(out)
}

/// Depth-first walk from the Topic, one `Layer: label` line per node, used
/// as the map's text for embedding. Nodes unreachable from the Topic follow
/// in document order.
pub fn flatten_for_embedding(map: &ConceptMap) -> String {
    let mut lines = Vec::new();
    let mut visited = BTreeSet::new();
    let mut stack: Vec<&str> = map
        .nodes
        .iter()
        .filter(|n| n.layer == Layer::Topic)
        .map(|n| n.id.as_str())
        .rev()
        .collect();
    while let Some(id) = stack.pop() {
        if !visited.insert(id) {
            continue;
        }
        if let Some(n) = map.node(id) {
            lines.push(format!("{}: {}", n.layer.name(), n.label));
        }
        let kids: Vec<&str> = map.children(id).collect();
        stack.extend(kids.into_iter().rev());
    }
    for n in &map.nodes {
        if visited.insert(n.id.as_str()) {
            lines.push(format!("{}: {}", n.layer.name(), n.label));
        }
    }
    lines.join("\n")
}

/// Whether the map has Feedback for every misconception, as expected below
/// the Advanced level.
pub fn feedback_complete(map: &ConceptMap, level: PerformanceLevel) -> bool {
    if level == PerformanceLevel::Advanced {
        return true;
    }
    map.nodes
        .iter()
        .filter(|n| n.layer == Layer::Understanding && n.misconception)
        .all(|n| {
            map.children(&n.id)
                .any(|c| map.node(c).is_some_and(|k| k.layer == Layer::Feedback))
        })
}
