//! Prompt templates for hosted generation models.
//!
//! Placeholders are `{name}`; every placeholder must be bound before a
//! [`StructuredRequest`](super::StructuredRequest) is built. The wording is
//! this repository's own and can be tuned without touching the pipeline.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Decompose,
    Profile,
    Unified,
    Narrative,
    ImagePrompt,
    Alignment,
    ConceptMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    EvidenceList,
    ProfileSplit,
    UnifiedOutput,
    Narrative,
    ImagePrompt,
    Alignment,
    ConceptMap,
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

pub const SYSTEM_PROMPT: &str = "You help science teachers by simulating K-12 student work. \
Always answer with a single JSON object that matches the requested shape exactly. \
Never add commentary outside the JSON.";

const DECOMPOSE: &str = r#"Performance expectation {code} (grade {grade}, band {grade_band}, domain {domain}):
"{statement}"
Curated topic: {topic_hint}
Science and engineering practices: {seps}
Disciplinary core ideas: {dcis}
Crosscutting concepts: {cccs}

Rewrite these three dimensions as 5 to 8 observable evidence statements for a drawing task.
Each statement names one concrete visual feature a teacher could point to in a student drawing
and starts with "The student can".

Answer as {"topic_name": string, "evidence": [{"text": string, "tags": [string]}]}."#;

const PROFILE: &str = r#"Topic: {topic_name} ({code})
Evidence statements (id and text):
{evidence_json}

Performance level {level} ({level_name}): {level_descriptor}
Evidence ids already mastered at the previous level (must stay mastered): {prior_can_do_json}

Split ALL evidence ids into "can_do" (mastered at this level) and "cannot_yet_do"
(specific gaps or misconceptions). Every id appears in exactly one list and both lists are non-empty.
Optionally describe how each id shows up at this level in "gloss".

Answer as {"can_do": [id], "cannot_yet_do": [id], "gloss": {id: string}}."#;

const UNIFIED: &str = r#"Topic: {topic_name} ({code}), grade {grade}, performance level {level} ({level_name}).
Evidence statements:
{evidence_json}
Can do: {can_do_json}
Cannot yet do: {cannot_yet_do_json}
Profile notes: {gloss_json}

In ONE pass produce all three of:
1. "narrative": a first-person think-aloud of the student while drawing, using grade-{grade} vocabulary.
   It must voice uncertainty (e.g. "I might", "I'm not sure") about at least one cannot-yet-do item.
2. The image prompt as constraint lists:
   "positive": [{"evidence_ids": [id], "text": string}] covering every can-do id,
   "negative": [{"evidence_ids": [id], "text": string}] with an omission or distortion for every cannot-yet-do id,
   "stylistic": [string] including the marker "{style_marker}" and the style "{style_hint}",
   "exclusions": [{"evidence_id": id, "rationale": string}] for can-do ids with no drawable feature.
   Never mention the same id in both a positive and a negative constraint.
3. "alignment": {"text": string, "covered_can": [id], "covered_cannot": [id]} explaining how the prompt matches the profile."#;

const NARRATIVE: &str = r#"Topic: {topic_name} ({code}), grade {grade}, performance level {level} ({level_name}).
Evidence statements:
{evidence_json}
Can do: {can_do_json}
Cannot yet do: {cannot_yet_do_json}

Write the student's first-person think-aloud while drawing.
Answer as {"narrative": string}."#;

const IMAGE_PROMPT: &str = r#"Topic: {topic_name} ({code}), grade {grade}.
Evidence statements:
{evidence_json}
Conditioning: {conditioning}; level: {level_name}
Can do: {can_do_json}
Cannot yet do: {cannot_yet_do_json}
Student narrative (may be empty): {narrative}

Write an image prompt for a student-like drawing as constraint lists.
Stylistic constraints must include "{style_marker}" and "{style_hint}".
Answer as {"positive": [{"evidence_ids": [id], "text": string}], "negative": [{"evidence_ids": [id], "text": string}],
"stylistic": [string], "exclusions": [{"evidence_id": id, "rationale": string}]}."#;

const ALIGNMENT: &str = r#"Topic: {topic_name} ({code}).
Can do: {can_do_json}
Cannot yet do: {cannot_yet_do_json}
Image prompt: {prompt_json}

Explain how the prompt reflects the profile.
Answer as {"alignment": {"text": string, "covered_can": [id], "covered_cannot": [id]}}."#;

const CONCEPT_MAP: &str = r#"Topic: {topic_name} ({code}), performance level {level} ({level_name}).
Evidence statements:
{evidence_json}
Can do: {can_do_json}
Cannot yet do: {cannot_yet_do_json}
Drawing specification (image prompt): {prompt_json}

Build a diagnostic concept map with four layers: Topic -> Observation -> Understanding -> Feedback.
- exactly one Topic node naming the task;
- 2-8 Observation nodes for concrete features visible in the drawing, each a child of the Topic;
- 2-8 Understanding nodes interpreting observations, with "misconception": true for every cannot-yet-do id
  (set "evidence_ref" to the id);
- 0-6 Feedback nodes with instructional next steps, attached only to misconception nodes.
Edges only go from one layer to the next.
Answer as {"nodes": [{"id": string, "layer": "topic"|"observation"|"understanding"|"feedback",
"label": string, "misconception": bool, "evidence_ref": string|null}], "edges": [{"from": id, "to": id}]}."#;

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::Decompose,
        TemplateId::Profile,
        TemplateId::Unified,
        TemplateId::Narrative,
        TemplateId::ImagePrompt,
        TemplateId::Alignment,
        TemplateId::ConceptMap,
    ];

    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Decompose => DECOMPOSE,
            TemplateId::Profile => PROFILE,
            TemplateId::Unified => UNIFIED,
            TemplateId::Narrative => NARRATIVE,
            TemplateId::ImagePrompt => IMAGE_PROMPT,
            TemplateId::Alignment => ALIGNMENT,
            TemplateId::ConceptMap => CONCEPT_MAP,
        }
    }

    pub fn schema(self) -> SchemaId {
        match self {
            TemplateId::Decompose => SchemaId::EvidenceList,
            TemplateId::Profile => SchemaId::ProfileSplit,
            TemplateId::Unified => SchemaId::UnifiedOutput,
            TemplateId::Narrative => SchemaId::Narrative,
            TemplateId::ImagePrompt => SchemaId::ImagePrompt,
            TemplateId::Alignment => SchemaId::Alignment,
            TemplateId::ConceptMap => SchemaId::ConceptMap,
        }
    }

    /// Placeholder names in order of first appearance. Only `{identifier}`
    /// spans count; JSON braces in the answer shape are ignored.
    pub fn placeholders(self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (start, end) in spans(self.text()) {
            let name = &self.text()[start + 1..end];
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        }
        out
    }

    pub fn render(self, vars: &BTreeMap<String, String>) -> String {
        let text = self.text();
        let mut out = String::with_capacity(text.len() + 256);
        let mut last = 0;
        for (start, end) in spans(text) {
            out.push_str(&text[last..start]);
            let name = &text[start + 1..end];
            match vars.get(name) {
                Some(v) => out.push_str(v),
                None => out.push_str(&text[start..=end]),
            }
            last = end + 1;
        }
        out.push_str(&text[last..]);
        out
    }
}

fn spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'}' && bytes[i + 1].is_ascii_lowercase() {
                out.push((i, j));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_skip_json_shapes() {
        let p = TemplateId::Decompose.placeholders();
        assert!(p.contains(&"statement".to_string()));
        assert!(!p.iter().any(|n| n.contains('"')));
        assert!(!p.contains(&"id".to_string()));
    }

    #[test]
    fn render_binds_every_placeholder() {
        for t in TemplateId::ALL {
            let vars: BTreeMap<String, String> =
                t.placeholders().into_iter().map(|p| (p.clone(), format!("<{p}>"))).collect();
            let rendered = t.render(&vars);
            for p in t.placeholders() {
                assert!(!rendered.contains(&format!("{{{p}}}")), "{t}: {p} left unbound");
            }
        }
    }
}
