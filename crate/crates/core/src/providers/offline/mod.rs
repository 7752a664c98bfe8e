//! Deterministic offline providers.
//!
//! The generator answers every template from the request variables alone:
//! curated fixtures for the bundled worked-example topics, procedural output
//! for everything else. Same request and seed, same bytes.

mod embed;
mod render;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

pub use embed::{normalize, OfflineEmbedder};
pub use render::OfflineRenderer;

use super::{GenerationProvider, ProviderError, StructuredRequest, TemplateId};
use crate::digest::derive_seed;
use crate::profiles::{default_ladder_counts, PerformanceLevel};
use crate::synthesis::{ConstraintKind, ImagePromptSpec};

#[derive(Debug, Clone, Deserialize)]
struct FixtureFile {
    topics: BTreeMap<String, TopicFixture>,
}

#[derive(Debug, Clone, Deserialize)]
struct TopicFixture {
    topic_name: String,
    evidence: Vec<EvidenceFixture>,
    mastery_order: Vec<String>,
    ladder_counts: [usize; 4],
    #[serde(default)]
    gloss: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default)]
    unified: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, Deserialize)]
struct EvidenceFixture {
    text: String,
    #[serde(default)]
    tags: Vec<String>,
    positive: Option<String>,
    negative: Option<String>,
    observation: Option<String>,
    understanding: Option<String>,
    misconception: Option<String>,
    feedback: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
struct EvidenceItem {
    id: String,
    text: String,
}

/// What the generator knows about one evidence statement while answering.
#[derive(Debug, Clone, Default)]
struct Statement {
    id: String,
    text: String,
    fixture: Option<EvidenceFixture>,
}

impl Statement {
    fn short(&self) -> String {
        short(&self.text)
    }

    fn positive(&self) -> String {
        self.fixture
            .as_ref()
            .and_then(|f| f.positive.clone())
            .unwrap_or_else(|| capitalize(&self.short()))
    }

    fn negative(&self) -> String {
        self.fixture
            .as_ref()
            .and_then(|f| f.negative.clone())
            .unwrap_or_else(|| format!("Do NOT {}", self.short()))
    }
}

/// Statement text without the "The student can" stem or final period.
fn short(text: &str) -> String {
    let t = text.trim().trim_end_matches('.');
    let lower = t.to_lowercase();
    for stem in ["the student can ", "students can ", "student can "] {
        if lower.starts_with(stem) {
            return t[stem.len()..].trim().to_string();
        }
    }
    let mut c = t.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// The offline structured-output generator.
pub struct OfflineGenerator {
    fixtures: BTreeMap<String, TopicFixture>,
}

impl Default for OfflineGenerator {
    fn default() -> Self {
        Self::new()
    }
}

fn bad_request(msg: impl Into<String>) -> ProviderError {
    ProviderError::Precondition(format!("offline generator: {}", msg.into()))
}

fn parse_json<T: serde::de::DeserializeOwned>(req: &StructuredRequest, var: &str) -> Result<T, ProviderError> {
    let raw = req.var(var).ok_or_else(|| bad_request(format!("missing variable `{var}`")))?;
    serde_json::from_str(raw).map_err(|e| bad_request(format!("variable `{var}` is not valid JSON: {e}")))
}

fn level_of(req: &StructuredRequest) -> Option<PerformanceLevel> {
    if let Some(l) = req.var("level").and_then(|v| v.parse::<u8>().ok()).and_then(PerformanceLevel::from_value) {
        return Some(l);
    }
    let name = req.var("level_name")?;
    PerformanceLevel::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(name))
}

const DECOMPOSITION_FRAMES: [(&str, &[&str]); 10] = [
    ("The student can draw the main parts of {topic} and label each one.", &["parts", "labels"]),
    ("The student can use arrows to show how matter or energy moves in {topic}.", &["arrows", "flow"]),
    ("The student can show a cause and the effect it produces in {topic}.", &["causality"]),
    ("The student can show the order of at least three stages or steps in {topic}.", &["sequence"]),
    ("The student can include the setting or surroundings where {topic} takes place.", &["setting"]),
    ("The student can draw two examples side by side to compare them.", &["comparison"]),
    ("The student can represent a pattern that repeats in {topic}.", &["pattern"]),
    ("The student can add a short caption that states the big idea: {dci}.", &["explanation"]),
    ("The student can show an amount or size with numbers or tally marks.", &["quantity"]),
    ("The student can use the drawing as a model to predict what happens next in {topic}.", &["prediction", "model"]),
];

const OPENINGS: [&str; 3] = [
    "I'm going to draw {topic}.",
    "Okay, for this picture I'm drawing {topic}.",
    "My drawing is about {topic}.",
];
const CONNECTORS: [&str; 5] = ["First,", "Next,", "Then,", "After that,", "Also,"];
const HEDGED: [&str; 4] = [
    "I'm not sure how to {s}, so I might leave that part out.",
    "I might get mixed up when I try to {s}.",
    "I don't know if I can {s} yet, so maybe I'll skip it.",
    "I think I'm supposed to {s}, but I'm not sure how.",
];
const CLOSINGS: [&str; 3] = [
    "When I'm done I'll color it in.",
    "Then I'll check that my picture makes sense.",
    "I'll finish by writing my name at the top.",
];
const EXTRA_STYLE: [&str; 3] = [
    "Keep the lines a little wobbly, like a real student drawing",
    "Use only a few colors and leave white space on the page",
    "Make the labels short and a bit uneven",
];

impl OfflineGenerator {
    pub fn new() -> Self {
        let file: FixtureFile =
            serde_json::from_str(include_str!("../../../fixtures/offline.json")).expect("bundled fixtures are valid");
        Self { fixtures: file.topics }
    }

    fn rng(&self, req: &StructuredRequest, extra: &[&str]) -> ChaCha8Rng {
        let template = req.template_id.to_string();
        let mut parts = vec![template.as_str(), req.var("code").unwrap_or("")];
        parts.extend_from_slice(extra);
        ChaCha8Rng::seed_from_u64(derive_seed(&parts, req.seed.unwrap_or(0)))
    }

    /// Fixture for `code`, but only when the request's evidence is exactly
    /// the fixture's (a truncated or edited topic falls back to procedural).
    fn matching_fixture(&self, code: &str, evidence: &[EvidenceItem]) -> Option<&TopicFixture> {
        let f = self.fixtures.get(code)?;
        let same = f.evidence.len() == evidence.len()
            && f.evidence.iter().zip(evidence).enumerate().all(|(i, (fx, ev))| {
                fx.text == ev.text && ev.id == format!("E{}", i + 1)
            });
        same.then_some(f)
    }

    fn statements(&self, req: &StructuredRequest) -> Result<(Vec<Statement>, Option<&TopicFixture>), ProviderError> {
        let items: Vec<EvidenceItem> = parse_json(req, "evidence_json")?;
        let fixture = self.matching_fixture(req.var("code").unwrap_or(""), &items);
        let out = items
            .into_iter()
            .enumerate()
            .map(|(i, e)| Statement {
                fixture: fixture.map(|f| f.evidence[i].clone()),
                id: e.id,
                text: e.text,
            })
            .collect();
        Ok((out, fixture))
    }

    fn decompose(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let code = req.var("code").unwrap_or("");
        if let Some(f) = self.fixtures.get(code) {
            let evidence: Vec<Value> = f.evidence.iter().map(|e| json!({"text": e.text, "tags": e.tags})).collect();
            return Ok(json!({"topic_name": f.topic_name, "evidence": evidence}));
        }
        let hint = req.var("topic_hint").unwrap_or("").trim();
        let topic_name = if hint.is_empty() {
            let statement = req.var("statement").unwrap_or(code);
            statement.split_whitespace().take(6).collect::<Vec<_>>().join(" ")
        } else {
            hint.to_string()
        };
        let topic_lc = topic_name.to_lowercase();
        let dci = req
            .var("dcis")
            .and_then(|d| d.split(';').next())
            .map(|d| d.split(':').next_back().unwrap_or(d).trim().to_lowercase())
            .filter(|d| !d.is_empty())
            .unwrap_or_else(|| topic_lc.clone());
        let mut rng = self.rng(req, &[]);
        let n = rng.gen_range(5..=8usize);
        let mut optional: Vec<usize> = (5..DECOMPOSITION_FRAMES.len()).collect();
        optional.shuffle(&mut rng);
        let mut chosen: Vec<usize> = (0..5).chain(optional.into_iter().take(n - 5)).collect();
        chosen.sort_unstable();
        let evidence: Vec<Value> = chosen
            .into_iter()
            .map(|i| {
                let (frame, tags) = DECOMPOSITION_FRAMES[i];
                json!({
                    "text": frame.replace("{topic}", &topic_lc).replace("{dci}", &dci),
                    "tags": tags,
                })
            })
            .collect();
        Ok(json!({"topic_name": topic_name, "evidence": evidence}))
    }

    fn profile(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let (statements, fixture) = self.statements(req)?;
        let level = level_of(req).ok_or_else(|| bad_request("profile request has no level"))?;
        let prior: BTreeSet<String> = parse_json::<Vec<String>>(req, "prior_can_do_json")?.into_iter().collect();
        let (order, counts): (Vec<String>, [usize; 4]) = match fixture {
            Some(f) => (f.mastery_order.clone(), f.ladder_counts),
            None => (
                statements.iter().map(|s| s.id.clone()).collect(),
                default_ladder_counts(statements.len()),
            ),
        };
        let k = counts[level.index()];
        let mut can: BTreeSet<String> = prior;
        for id in order.iter().take(k) {
            can.insert(id.clone());
        }
        let cannot: Vec<&String> = order.iter().filter(|id| !can.contains(*id)).collect();
        let gloss = match fixture.and_then(|f| f.gloss.get(&level.value().to_string())) {
            Some(g) => g.clone(),
            None => statements
                .iter()
                .map(|s| {
                    let text = if can.contains(&s.id) {
                        format!("Shows this reliably: {}.", s.short())
                    } else {
                        format!("Not yet: {}.", s.short())
                    };
                    (s.id.clone(), text)
                })
                .collect(),
        };
        Ok(json!({"can_do": can, "cannot_yet_do": cannot, "gloss": gloss}))
    }

    fn narrative_text(
        &self,
        rng: &mut ChaCha8Rng,
        topic: &str,
        statements: &[Statement],
        can: &BTreeSet<String>,
        cannot: &BTreeSet<String>,
    ) -> String {
        let mut parts = vec![OPENINGS[rng.gen_range(0..OPENINGS.len())].replace("{topic}", &topic.to_lowercase())];
        for (i, s) in statements.iter().filter(|s| can.contains(&s.id)).enumerate() {
            let conn = CONNECTORS[i.min(CONNECTORS.len() - 1)];
            parts.push(format!("{conn} I'll {}.", s.short()));
        }
        for s in statements.iter().filter(|s| cannot.contains(&s.id)) {
            parts.push(HEDGED[rng.gen_range(0..HEDGED.len())].replace("{s}", &s.short()));
        }
        parts.push(CLOSINGS[rng.gen_range(0..CLOSINGS.len())].to_string());
        parts.join(" ")
    }

    fn prompt_parts(
        &self,
        rng: &mut ChaCha8Rng,
        req: &StructuredRequest,
        statements: &[Statement],
        can: &BTreeSet<String>,
        cannot: &BTreeSet<String>,
    ) -> Value {
        let positive: Vec<Value> = statements
            .iter()
            .filter(|s| can.contains(&s.id))
            .map(|s| json!({"evidence_ids": [s.id], "text": s.positive()}))
            .collect();
        let negative: Vec<Value> = statements
            .iter()
            .filter(|s| cannot.contains(&s.id))
            .map(|s| json!({"evidence_ids": [s.id], "text": s.negative()}))
            .collect();
        let marker = req.var("style_marker").unwrap_or("Draw like a student");
        let hint = req.var("style_hint").unwrap_or("");
        let stylistic = vec![
            format!("{marker}, {hint}"),
            EXTRA_STYLE[rng.gen_range(0..EXTRA_STYLE.len())].to_string(),
        ];
        json!({"positive": positive, "negative": negative, "stylistic": stylistic, "exclusions": []})
    }

    fn partition(&self, req: &StructuredRequest) -> Result<(BTreeSet<String>, BTreeSet<String>), ProviderError> {
        let can: BTreeSet<String> = parse_json::<Vec<String>>(req, "can_do_json")?.into_iter().collect();
        let cannot: BTreeSet<String> = parse_json::<Vec<String>>(req, "cannot_yet_do_json")?.into_iter().collect();
        Ok((can, cannot))
    }

    fn unified(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let (statements, fixture) = self.statements(req)?;
        let (can, cannot) = self.partition(req)?;
        let level = level_of(req).ok_or_else(|| bad_request("unified request has no level"))?;
        if let Some(f) = fixture {
            let fixture_can: BTreeSet<String> =
                f.mastery_order.iter().take(f.ladder_counts[level.index()]).cloned().collect();
            if fixture_can == can {
                if let Some(doc) = f.unified.get(&level.value().to_string()) {
                    return Ok(flatten_unified(doc));
                }
            }
        }
        let mut rng = self.rng(req, &[&level.value().to_string()]);
        let topic = req.var("topic_name").unwrap_or("my topic");
        let narrative = self.narrative_text(&mut rng, topic, &statements, &can, &cannot);
        let mut doc = self.prompt_parts(&mut rng, req, &statements, &can, &cannot);
        doc["narrative"] = json!(narrative);
        doc["alignment"] = json!({
            "text": format!(
                "Each mastered statement ({}) has its own positive constraint, and each gap ({}) is drawn as an \
                 omission through a negative constraint, so the picture shows exactly what this student can do.",
                join_ids(&can),
                join_ids(&cannot)
            ),
            "covered_can": can,
            "covered_cannot": cannot,
        });
        Ok(doc)
    }

    fn narrative(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let (statements, _) = self.statements(req)?;
        let (mut can, cannot) = self.partition(req)?;
        if can.is_empty() && cannot.is_empty() {
            can = statements.iter().map(|s| s.id.clone()).collect();
        }
        let mut rng = self.rng(req, &[req.var("level").unwrap_or("")]);
        let topic = req.var("topic_name").unwrap_or("my topic");
        Ok(json!({"narrative": self.narrative_text(&mut rng, topic, &statements, &can, &cannot)}))
    }

    fn image_prompt(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let (statements, _) = self.statements(req)?;
        let conditioning = req.var("conditioning").unwrap_or("profile");
        let mut rng = self.rng(req, &[conditioning, req.var("level_name").unwrap_or("")]);
        let all: Vec<String> = statements.iter().map(|s| s.id.clone()).collect();
        let (can, cannot) = match conditioning {
            "profile" => self.partition(req)?,
            "level_only" => {
                // Knows the level but not the partition: guesses which
                // statements a student at this level has mastered.
                let level = level_of(req).ok_or_else(|| bad_request("level-only prompt has no level"))?;
                let k = default_ladder_counts(all.len())[level.index()];
                let mut shuffled = all.clone();
                shuffled.shuffle(&mut rng);
                let can: BTreeSet<String> = shuffled[..k].iter().cloned().collect();
                let cannot = all.iter().filter(|id| !can.contains(*id)).cloned().collect();
                (can, cannot)
            }
            "none" => (all.iter().cloned().collect(), BTreeSet::new()),
            other => return Err(bad_request(format!("unknown conditioning `{other}`"))),
        };
        Ok(self.prompt_parts(&mut rng, req, &statements, &can, &cannot))
    }

    fn alignment(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let (can, cannot) = self.partition(req)?;
        let prompt: ImagePromptSpec = parse_json(req, "prompt_json")?;
        let covered_can: BTreeSet<String> = can
            .iter()
            .filter(|id| prompt.refs(id, ConstraintKind::Positive).next().is_some())
            .cloned()
            .collect();
        let covered_cannot: BTreeSet<String> = cannot
            .iter()
            .filter(|id| prompt.refs(id, ConstraintKind::Negative).next().is_some())
            .cloned()
            .collect();
        let text = format!(
            "The prompt draws {} of {} mastered statements and withholds {} of {} gaps.",
            covered_can.len(),
            can.len(),
            covered_cannot.len(),
            cannot.len()
        );
        Ok(json!({"alignment": {"text": text, "covered_can": covered_can, "covered_cannot": covered_cannot}}))
    }

    fn concept_map(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let (statements, _) = self.statements(req)?;
        let (_, cannot) = self.partition(req)?;
        let level = level_of(req).ok_or_else(|| bad_request("concept-map request has no level"))?;
        let topic = req.var("topic_name").unwrap_or("Topic");
        let mut nodes = vec![json!({"id": "T", "layer": "topic", "label": topic, "misconception": false})];
        let mut edges = Vec::new();
        let mut feedback = 0;
        for (i, s) in statements.iter().enumerate() {
            let n = i + 1;
            let fx = s.fixture.as_ref();
            let gap = cannot.contains(&s.id);
            let observation = fx.and_then(|f| f.observation.clone()).unwrap_or_else(|| {
                if gap {
                    format!("Missing or unclear: {}", s.short())
                } else {
                    format!("Drawing shows: {}", s.short())
                }
            });
            let understanding = if gap {
                fx.and_then(|f| f.misconception.clone())
                    .unwrap_or_else(|| format!("Not yet able to {}", s.short()))
            } else {
                fx.and_then(|f| f.understanding.clone())
                    .unwrap_or_else(|| format!("Understands how to {}", s.short()))
            };
            nodes.push(json!({"id": format!("O{n}"), "layer": "observation", "label": observation, "misconception": false}));
            nodes.push(json!({
                "id": format!("U{n}"), "layer": "understanding", "label": understanding,
                "misconception": gap, "evidence_ref": s.id,
            }));
            edges.push(json!({"from": "T", "to": format!("O{n}")}));
            edges.push(json!({"from": format!("O{n}"), "to": format!("U{n}")}));
            if gap && level != PerformanceLevel::Advanced && feedback < 6 {
                feedback += 1;
                let label = fx
                    .and_then(|f| f.feedback.clone())
                    .unwrap_or_else(|| format!("Practice with a partner: {}", s.short()));
                nodes.push(json!({"id": format!("F{n}"), "layer": "feedback", "label": label, "misconception": false}));
                edges.push(json!({"from": format!("U{n}"), "to": format!("F{n}")}));
            }
        }
        Ok(json!({"nodes": nodes, "edges": edges}))
    }
}

fn join_ids(ids: &BTreeSet<String>) -> String {
    if ids.is_empty() {
        "none".into()
    } else {
        ids.iter().cloned().collect::<Vec<_>>().join(", ")
    }
}

/// The fixture nests prompt lists beside the narrative already; this only
/// normalizes it into the wire shape.
fn flatten_unified(doc: &Value) -> Value {
    let mut out = doc.clone();
    if out.get("exclusions").is_none() {
        out["exclusions"] = json!([]);
    }
    out
}

impl GenerationProvider for OfflineGenerator {
    fn id(&self) -> String {
        "offline-generator".into()
    }

    fn complete(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        match req.template_id {
            TemplateId::Decompose => self.decompose(req),
            TemplateId::Profile => self.profile(req),
            TemplateId::Unified => self.unified(req),
            TemplateId::Narrative => self.narrative(req),
            TemplateId::ImagePrompt => self.image_prompt(req),
            TemplateId::Alignment => self.alignment(req),
            TemplateId::ConceptMap => self.concept_map(req),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decompose_req(code: &str, seed: u64) -> StructuredRequest {
        let pe = crate::standards::bundled_standards().into_iter().find(|p| p.code == code).unwrap();
        StructuredRequest::new(TemplateId::Decompose, crate::standards::decompose_variables(&pe), Some(seed)).unwrap()
    }

    #[test]
    fn byte_identical_for_same_seed() {
        let g = OfflineGenerator::new();
        let a = serde_json::to_vec(&g.complete(&decompose_req("MS-PS1-4", 3)).unwrap()).unwrap();
        let b = serde_json::to_vec(&g.complete(&decompose_req("MS-PS1-4", 3)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn procedural_decomposition_stays_in_range() {
        let g = OfflineGenerator::new();
        for seed in 0..20 {
            let v = g.complete(&decompose_req("HS-PS3-2", seed)).unwrap();
            let n = v["evidence"].as_array().unwrap().len();
            assert!((5..=8).contains(&n), "{n}");
        }
    }

    #[test]
    fn plant_fixture_lists_eight_statements() {
        let v = OfflineGenerator::new().complete(&decompose_req("3-LS1-1", 0)).unwrap();
        let ev = v["evidence"].as_array().unwrap();
        assert_eq!(ev.len(), 8);
        assert!(ev[0]["text"].as_str().unwrap().contains("germination, growth, reproduction"));
    }

    #[test]
    fn short_strips_the_stem() {
        assert_eq!(short("The student can draw a fish."), "draw a fish");
        assert_eq!(short("Draws a fish"), "draws a fish");
    }
}
