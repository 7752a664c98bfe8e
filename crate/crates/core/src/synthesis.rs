//! Drawing-centric synthesis: one coordinated pass produces the student's
//! narrative, the constraint-structured image prompt, and the prompt-profile
//! alignment explanation; the prompt is then rendered through the image
//! provider.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::store::{BlobStore, StoreError};
use crate::digest::sha256_hex;
use crate::profiles::{evidence_json, CapabilityProfile, PerformanceLevel};
use crate::providers::{self, generate_structured, GenerationProvider, ImageProvider, ProviderError,
    StructuredRequest, TemplateId};
use crate::standards::{GradeBand, TopicSpec};

/// Grade-band drawing style descriptors appended to stylistic constraints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleTable {
    pub k2: String,
    pub g35: String,
    pub g68: String,
    pub g912: String,
}

impl Default for StyleTable {
    fn default() -> Self {
        Self {
            k2: "crayon, uneven lines, simple 2D".into(),
            g35: "marker/pencil, simple labels".into(),
            g68: "pencil sketch, labeled arrows".into(),
            g912: "pen diagram, annotations".into(),
        }
    }
}

impl StyleTable {
    pub fn style_for(&self, grade: u8) -> &str {
        match GradeBand::for_grade(grade) {
            Some(GradeBand::K2) | None => &self.k2,
            Some(GradeBand::G35) => &self.g35,
            Some(GradeBand::G68) => &self.g68,
            Some(GradeBand::G912) => &self.g912,
        }
    }
}

/// `Draw like a Grade N student` (or `Kindergarten` for grade 0).
pub fn grade_style_marker(grade: u8) -> String {
    if grade == 0 {
        "Draw like a Kindergarten student".into()
    } else {
        format!("Draw like a Grade {grade} student")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Positive,
    Negative,
    Stylistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConstraintRef {
    pub kind: ConstraintKind,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePromptSpec {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub stylistic: Vec<String>,
    pub composed: String,
    /// Evidence id to the constraints that realize it.
    pub constraint_index: BTreeMap<String, Vec<ConstraintRef>>,
    /// Can-do ids deliberately left out of the drawing, with rationale.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub exclusions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintDraft {
    pub evidence_ids: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionDraft {
    pub evidence_id: String,
    pub rationale: String,
}

fn sentence(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

fn core_text(text: &str) -> &str {
    text.trim().trim_end_matches(['.', '!', '?'])
}

/// Concatenates positives, then negatives, then stylistics. Each constraint
/// is trimmed and given a terminal period if it lacks sentence punctuation;
/// that is the only rewriting applied.
pub fn compose_prompt_text(spec: &ImagePromptSpec) -> Result<String, SynthesisError> {
    if spec.positive.is_empty() {
        return Err(SynthesisError::Precondition("image prompt has no positive constraints".into()));
    }
    if spec.stylistic.is_empty() {
        return Err(SynthesisError::Precondition("image prompt has no stylistic constraints".into()));
    }
    let all = spec.positive.iter().chain(&spec.negative).chain(&spec.stylistic);
    let mut parts = Vec::new();
    for c in all {
        if core_text(c).is_empty() {
            return Err(SynthesisError::Precondition("empty constraint text".into()));
        }
        parts.push(sentence(c));
    }
    Ok(parts.join(" "))
}

impl ImagePromptSpec {
    pub fn build(
        positive: Vec<ConstraintDraft>,
        negative: Vec<ConstraintDraft>,
        stylistic: Vec<String>,
        exclusions: Vec<ExclusionDraft>,
    ) -> Result<Self, SynthesisError> {
        let mut index: BTreeMap<String, Vec<ConstraintRef>> = BTreeMap::new();
        for (kind, list) in [(ConstraintKind::Positive, &positive), (ConstraintKind::Negative, &negative)] {
            for (i, c) in list.iter().enumerate() {
                for id in &c.evidence_ids {
                    let refs = index.entry(id.clone()).or_default();
                    let r = ConstraintRef { kind, index: i };
                    if !refs.contains(&r) {
                        refs.push(r);
                    }
                }
            }
        }
        let mut spec = Self {
            positive: positive.into_iter().map(|c| c.text.trim().to_string()).collect(),
            negative: negative.into_iter().map(|c| c.text.trim().to_string()).collect(),
            stylistic: stylistic.into_iter().map(|s| s.trim().to_string()).collect(),
            composed: String::new(),
            constraint_index: index,
            exclusions: exclusions.into_iter().map(|e| (e.evidence_id, e.rationale)).collect(),
        };
        spec.composed = compose_prompt_text(&spec)?;
        Ok(spec)
    }

    pub fn refs(&self, id: &str, kind: ConstraintKind) -> impl Iterator<Item = &ConstraintRef> {
        self.constraint_index
            .get(id)
            .into_iter()
            .flatten()
            .filter(move |r| r.kind == kind)
    }

    pub fn texts_for(&self, id: &str, kind: ConstraintKind) -> Vec<&str> {
        let list = match kind {
            ConstraintKind::Positive => &self.positive,
            ConstraintKind::Negative => &self.negative,
            ConstraintKind::Stylistic => &self.stylistic,
        };
        self.refs(id, kind).filter_map(|r| list.get(r.index).map(String::as_str)).collect()
    }

    /// Evidence ids referenced by both a positive and a negative constraint.
    pub fn contradictions(&self) -> Vec<String> {
        self.constraint_index
            .iter()
            .filter(|(_, refs)| {
                refs.iter().any(|r| r.kind == ConstraintKind::Positive)
                    && refs.iter().any(|r| r.kind == ConstraintKind::Negative)
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Structural problems independent of any profile.
    pub fn violations(&self, grade: u8) -> Vec<String> {
        let mut out = Vec::new();
        let marker = grade_style_marker(grade);
        if !self.stylistic.iter().any(|s| s.contains(&marker)) {
            out.push(format!("stylistic constraints lack the grade marker `{marker}`"));
        }
        for (id, refs) in &self.constraint_index {
            for r in refs {
                let len = match r.kind {
                    ConstraintKind::Positive => self.positive.len(),
                    ConstraintKind::Negative => self.negative.len(),
                    ConstraintKind::Stylistic => self.stylistic.len(),
                };
                if r.index >= len {
                    out.push(format!("{id}: constraint index {:?}#{} out of range", r.kind, r.index));
                }
            }
        }
        for c in self.positive.iter().chain(&self.negative).chain(&self.stylistic) {
            if !self.composed.contains(core_text(c)) {
                out.push(format!("composed prompt is missing constraint `{}`", core_text(c)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningNarrative {
    pub text: String,
    pub vocabulary_grade: u8,
}

const FIRST_PERSON: [&str; 9] = ["I", "I'm", "I'll", "I've", "I'd", "my", "me", "My", "Me"];

/// Approximate first-person test: some token is a first-person pronoun.
pub fn is_first_person(text: &str) -> bool {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .map(|t| t.replace('\u{2019}', "'"))
        .any(|t| FIRST_PERSON.contains(&t.as_str()))
}

const HEDGES: [&str; 14] = [
    "might",
    "maybe",
    "not sure",
    "don't know",
    "do not know",
    "forget",
    "not too sure",
    "i think",
    "probably",
    "can't remember",
    "confused",
    "guess",
    "not certain",
    "i wonder",
];

const STOPWORDS: [&str; 24] = [
    "student", "students", "draw", "drawing", "show", "shows", "that", "with", "from", "their", "into", "they",
    "this", "using", "such", "each", "than", "where", "when", "which", "include", "should", "about", "them",
];

fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.len() >= 4 && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

fn sentences(text: &str) -> impl Iterator<Item = &str> {
    text.split(['.', '!', '?', ';']).map(str::trim).filter(|s| !s.is_empty())
}

/// Cannot-yet-do ids that some hedged narrative sentence refers to, judged by
/// keyword overlap with the id's statement and negative constraints.
pub fn hedged_gaps(
    narrative: &str,
    prompt: &ImagePromptSpec,
    profile: &CapabilityProfile,
    topic: &TopicSpec,
) -> BTreeSet<String> {
    let hedged: Vec<String> = sentences(narrative)
        .map(str::to_lowercase)
        .filter(|s| HEDGES.iter().any(|h| s.contains(h)))
        .collect();
    let mut out = BTreeSet::new();
    for id in &profile.cannot_yet_do {
        let mut kw = BTreeSet::new();
        if let Some(e) = topic.statement(id) {
            kw.extend(keywords(&e.text));
        }
        for t in prompt.texts_for(id, ConstraintKind::Negative) {
            kw.extend(keywords(t));
        }
        if let Some(g) = profile.gloss.get(id) {
            kw.extend(keywords(g));
        }
        let mentioned = hedged.iter().any(|s| {
            let words = keywords(s);
            kw.iter().any(|k| words.contains(k))
        });
        if mentioned {
            out.insert(id.clone());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentExplanation {
    pub text: String,
    pub covered_can: BTreeSet<String>,
    pub covered_cannot: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedOutput {
    pub narrative: ReasoningNarrative,
    pub prompt: ImagePromptSpec,
    pub alignment: AlignmentExplanation,
    pub profile_ref: String,
}

/// Mechanical prompt-profile check, independent of the provider's own
/// alignment explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub profile_ref: String,
    pub uncovered_can: Vec<String>,
    pub uncovered_cannot: Vec<String>,
    /// Ids realized by both a positive and a negative constraint.
    pub contradictions: Vec<String>,
    pub pass: bool,
}

/// Can-do ids with neither a positive constraint nor an exclusion, and
/// cannot-yet-do ids without a negative constraint.
pub fn coverage_gaps(p: &ImagePromptSpec, profile: &CapabilityProfile) -> (Vec<String>, Vec<String>) {
    let uncovered_can = profile
        .can_do
        .iter()
        .filter(|id| p.refs(id, ConstraintKind::Positive).next().is_none() && !p.exclusions.contains_key(*id))
        .cloned()
        .collect();
    let uncovered_cannot = profile
        .cannot_yet_do
        .iter()
        .filter(|id| p.refs(id, ConstraintKind::Negative).next().is_none())
        .cloned()
        .collect();
    (uncovered_can, uncovered_cannot)
}

/// Checks every can-do id has a positive constraint (or an exclusion) and
/// every cannot-yet-do id a negative one. `pass` is true iff both uncovered
/// lists are empty.
pub fn verify_alignment(out: &UnifiedOutput, profile: &CapabilityProfile) -> Result<AlignmentReport, SynthesisError> {
    if out.profile_ref != profile.id() {
        return Err(SynthesisError::ProfileMismatch {
            expected: profile.id(),
            found: out.profile_ref.clone(),
        });
    }
    let p = &out.prompt;
    let (uncovered_can, uncovered_cannot) = coverage_gaps(p, profile);
    let pass = uncovered_can.is_empty() && uncovered_cannot.is_empty();
    Ok(AlignmentReport {
        profile_ref: profile.id(),
        uncovered_can,
        uncovered_cannot,
        contradictions: p.contradictions(),
        pass,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("output references profile {found}, expected {expected}")]
    ProfileMismatch { expected: String, found: String },
    #[error(
        "unified output for {profile} still violates coverage after repair: uncovered can_do {uncovered_can:?}, \
         uncovered cannot_yet_do {uncovered_cannot:?}; {}",
        other.join("; ")
    )]
    Coverage {
        profile: String,
        uncovered_can: Vec<String>,
        uncovered_cannot: Vec<String>,
        other: Vec<String>,
    },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("rendered image is not decodable: {0}")]
    Undecodable(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct AlignmentDraft {
    pub text: String,
    #[serde(default)]
    pub covered_can: Vec<String>,
    #[serde(default)]
    pub covered_cannot: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct PromptDraft {
    pub positive: Vec<ConstraintDraft>,
    #[serde(default)]
    pub negative: Vec<ConstraintDraft>,
    pub stylistic: Vec<String>,
    #[serde(default)]
    pub exclusions: Vec<ExclusionDraft>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct UnifiedDraft {
    pub narrative: String,
    #[serde(flatten)]
    pub prompt: PromptDraft,
    pub alignment: AlignmentDraft,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct NarrativeDraft {
    pub narrative: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct AlignmentOnlyDraft {
    pub alignment: AlignmentDraft,
}

impl PromptDraft {
    fn check(&self) -> Result<(), String> {
        if self.positive.is_empty() {
            return Err("positive constraint list is empty".into());
        }
        if self.stylistic.is_empty() {
            return Err("stylistic constraint list is empty".into());
        }
        let texts = self.positive.iter().chain(&self.negative).map(|c| c.text.as_str());
        if texts.chain(self.stylistic.iter().map(String::as_str)).any(|t| core_text(t).is_empty()) {
            return Err("a constraint has empty text".into());
        }
        Ok(())
    }

    /// Appends the grade marker constraint when the provider left it out.
    fn into_spec(mut self, grade: u8, style: &StyleTable) -> Result<ImagePromptSpec, SynthesisError> {
        let marker = grade_style_marker(grade);
        if !self.stylistic.iter().any(|s| s.contains(&marker)) {
            self.stylistic.push(format!("{marker}, {}", style.style_for(grade)));
        }
        ImagePromptSpec::build(self.positive, self.negative, self.stylistic, self.exclusions)
    }
}

/// How the image prompt is conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Full can/cannot partition.
    Profile,
    /// Level name only; the provider guesses what the student can do.
    LevelOnly,
    /// No profile and no level: uniformly detailed output.
    None,
}

pub(crate) fn ids_json<'a>(ids: impl IntoIterator<Item = &'a String>) -> String {
    serde_json::to_string(&ids.into_iter().collect::<Vec<_>>()).expect("ids serialize")
}

pub(crate) fn synthesis_variables(
    topic: &TopicSpec,
    grade: u8,
    level: PerformanceLevel,
    profile: Option<&CapabilityProfile>,
    style: &StyleTable,
) -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("topic_name".into(), topic.topic_name.clone());
    v.insert("code".into(), topic.code().to_string());
    v.insert("grade".into(), grade.to_string());
    v.insert("level".into(), level.value().to_string());
    v.insert("level_name".into(), level.name().into());
    v.insert("evidence_json".into(), evidence_json(topic));
    let empty = BTreeSet::new();
    let (can, cannot) = match profile {
        Some(p) => (&p.can_do, &p.cannot_yet_do),
        None => (&empty, &empty),
    };
    v.insert("can_do_json".into(), ids_json(can));
    v.insert("cannot_yet_do_json".into(), ids_json(cannot));
    let gloss = profile.map(|p| p.gloss.clone()).unwrap_or_default();
    v.insert("gloss_json".into(), serde_json::to_string(&gloss).expect("gloss serializes"));
    v.insert("style_marker".into(), grade_style_marker(grade));
    v.insert("style_hint".into(), style.style_for(grade).to_string());
    v
}

fn check_grade(topic: &TopicSpec, grade: u8) -> Result<(), SynthesisError> {
    if !topic.pe.grade_band.contains(grade) {
        return Err(SynthesisError::Precondition(format!(
            "grade {grade} is outside {}'s band {}",
            topic.code(),
            topic.pe.grade_band
        )));
    }
    Ok(())
}

fn assemble(
    narrative: String,
    prompt: ImagePromptSpec,
    alignment: AlignmentDraft,
    grade: u8,
    profile_ref: String,
) -> UnifiedOutput {
    UnifiedOutput {
        narrative: ReasoningNarrative {
            text: narrative.trim().to_string(),
            vocabulary_grade: grade,
        },
        prompt,
        alignment: AlignmentExplanation {
            text: alignment.text,
            covered_can: alignment.covered_can.into_iter().collect(),
            covered_cannot: alignment.covered_cannot.into_iter().collect(),
        },
        profile_ref,
    }
}

/// Every reason `out` is unacceptable for `profile`, grouped as
/// (uncovered can, uncovered cannot, other).
pub fn unified_violations(
    out: &UnifiedOutput,
    profile: &CapabilityProfile,
    topic: &TopicSpec,
    grade: u8,
) -> (Vec<String>, Vec<String>, Vec<String>) {
    let mut other = out.prompt.violations(grade);
    let report = match verify_alignment(out, profile) {
        Ok(r) => r,
        Err(e) => return (vec![], vec![], vec![e.to_string()]),
    };
    if !report.contradictions.is_empty() {
        other.push(format!("ids in both positive and negative constraints: {:?}", report.contradictions));
    }
    if out.narrative.text.is_empty() || !is_first_person(&out.narrative.text) {
        other.push("narrative is not first-person".into());
    }
    if hedged_gaps(&out.narrative.text, &out.prompt, profile, topic).is_empty() {
        other.push("narrative does not voice uncertainty about any cannot-yet-do item".into());
    }
    if !out.alignment.covered_can.is_subset(&profile.can_do) {
        other.push("alignment.covered_can lists ids outside can_do".into());
    }
    if !out.alignment.covered_cannot.is_subset(&profile.cannot_yet_do) {
        other.push("alignment.covered_cannot lists ids outside cannot_yet_do".into());
    }
    (report.uncovered_can, report.uncovered_cannot, other)
}

const SCHEMA_REPAIRS: usize = 1;
const COVERAGE_REPAIRS: usize = 1;

/// Unified generation: narrative, image prompt, and alignment in one call.
/// A coverage failure is re-asked once with the uncovered ids; a second
/// failure is a hard error carrying them.
pub fn generate_unified(
    topic: &TopicSpec,
    grade: u8,
    profile: &CapabilityProfile,
    gen: &dyn GenerationProvider,
    seed: u64,
    style: &StyleTable,
) -> Result<UnifiedOutput, SynthesisError> {
    check_grade(topic, grade)?;
    if profile.topic_ref != topic.code() {
        return Err(SynthesisError::Precondition(format!(
            "profile {} does not belong to topic {}",
            profile.id(),
            topic.code()
        )));
    }
    let vars = synthesis_variables(topic, grade, profile.level, Some(profile), style);
    let mut req = StructuredRequest::new(TemplateId::Unified, vars, Some(seed))?;
    let mut attempt = 0;
    loop {
        attempt += 1;
        let draft: UnifiedDraft = generate_structured(gen, req.clone(), SCHEMA_REPAIRS, |d: &UnifiedDraft| {
            if d.narrative.trim().is_empty() {
                return Err("narrative is empty".into());
            }
            d.prompt.check()
        })?;
        let prompt = draft.prompt.into_spec(grade, style)?;
        let out = assemble(draft.narrative, prompt, draft.alignment, grade, profile.id());
        let (ucan, ucannot, other) = unified_violations(&out, profile, topic, grade);
        if ucan.is_empty() && ucannot.is_empty() && other.is_empty() {
            return Ok(out);
        }
        if attempt > COVERAGE_REPAIRS {
            return Err(SynthesisError::Coverage {
                profile: profile.id(),
                uncovered_can: ucan,
                uncovered_cannot: ucannot,
                other,
            });
        }
        let mut feedback = Vec::new();
        if !ucan.is_empty() {
            feedback.push(format!("can-do ids without a positive constraint or exclusion: {ucan:?}"));
        }
        if !ucannot.is_empty() {
            feedback.push(format!("cannot-yet-do ids without a negative constraint: {ucannot:?}"));
        }
        feedback.extend(other);
        req = req.with_feedback(feedback.join("\n"));
    }
}

/// Generation strategies other than unified, kept as baselines that show
/// how separately generated parts drift apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineStrategy {
    /// Narrative, prompt, and alignment requested independently; the prompt
    /// sees only the level, not the partition.
    Independent,
    /// Narrative first, then a prompt conditioned on profile and narrative,
    /// then the alignment explanation.
    Sequential,
}

#[allow(clippy::too_many_arguments)]
fn request_prompt(
    topic: &TopicSpec,
    grade: u8,
    level: PerformanceLevel,
    profile: Option<&CapabilityProfile>,
    conditioning: Conditioning,
    narrative: &str,
    gen: &dyn GenerationProvider,
    seed: u64,
    style: &StyleTable,
) -> Result<ImagePromptSpec, SynthesisError> {
    let mut vars = synthesis_variables(topic, grade, level, profile, style);
    vars.insert(
        "conditioning".into(),
        serde_json::to_value(conditioning).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
    );
    if conditioning == Conditioning::None {
        vars.insert("level_name".into(), "unspecified".into());
    }
    vars.insert("narrative".into(), narrative.to_string());
    let req = StructuredRequest::new(TemplateId::ImagePrompt, vars, Some(seed))?;
    let draft: PromptDraft = generate_structured(gen, req, SCHEMA_REPAIRS, PromptDraft::check)?;
    draft.into_spec(grade, style)
}

fn request_narrative(
    topic: &TopicSpec,
    grade: u8,
    level: PerformanceLevel,
    profile: Option<&CapabilityProfile>,
    gen: &dyn GenerationProvider,
    seed: u64,
    style: &StyleTable,
) -> Result<String, SynthesisError> {
    let vars = synthesis_variables(topic, grade, level, profile, style);
    let req = StructuredRequest::new(TemplateId::Narrative, vars, Some(seed))?;
    let d: NarrativeDraft = generate_structured(gen, req, SCHEMA_REPAIRS, |d: &NarrativeDraft| {
        if d.narrative.trim().is_empty() {
            Err("narrative is empty".into())
        } else {
            Ok(())
        }
    })?;
    Ok(d.narrative)
}

fn request_alignment(
    topic: &TopicSpec,
    grade: u8,
    profile: &CapabilityProfile,
    prompt: &ImagePromptSpec,
    gen: &dyn GenerationProvider,
    seed: u64,
    style: &StyleTable,
) -> Result<AlignmentDraft, SynthesisError> {
    let mut vars = synthesis_variables(topic, grade, profile.level, Some(profile), style);
    vars.insert("prompt_json".into(), serde_json::to_string(prompt).expect("prompt serializes"));
    let req = StructuredRequest::new(TemplateId::Alignment, vars, Some(seed))?;
    let d: AlignmentOnlyDraft = generate_structured(gen, req, SCHEMA_REPAIRS, |_| Ok(()))?;
    Ok(d.alignment)
}

/// Runs a baseline strategy. The result is returned unchecked so callers can
/// measure how often it breaks coverage or contradicts itself.
pub fn generate_baseline(
    strategy: BaselineStrategy,
    topic: &TopicSpec,
    grade: u8,
    profile: &CapabilityProfile,
    gen: &dyn GenerationProvider,
    seed: u64,
    style: &StyleTable,
) -> Result<UnifiedOutput, SynthesisError> {
    check_grade(topic, grade)?;
    let level = profile.level;
    let narrative = request_narrative(topic, grade, level, Some(profile), gen, seed, style)?;
    let prompt = match strategy {
        BaselineStrategy::Independent => {
            request_prompt(topic, grade, level, None, Conditioning::LevelOnly, "", gen, seed.wrapping_add(1), style)?
        }
        BaselineStrategy::Sequential => request_prompt(
            topic,
            grade,
            level,
            Some(profile),
            Conditioning::Profile,
            &narrative,
            gen,
            seed.wrapping_add(1),
            style,
        )?,
    };
    let alignment = request_alignment(topic, grade, profile, &prompt, gen, seed.wrapping_add(2), style)?;
    Ok(assemble(narrative, prompt, alignment, grade, profile.id()))
}

/// Profile-free generation used as the ablation control: neither the
/// narrative nor the prompt sees the profile or the level.
pub fn generate_unprofiled(
    topic: &TopicSpec,
    grade: u8,
    level: PerformanceLevel,
    gen: &dyn GenerationProvider,
    seed: u64,
    style: &StyleTable,
) -> Result<UnifiedOutput, SynthesisError> {
    check_grade(topic, grade)?;
    let narrative = request_narrative(topic, grade, level, None, gen, seed, style)?;
    let prompt = request_prompt(topic, grade, level, None, Conditioning::None, "", gen, seed.wrapping_add(1), style)?;
    let alignment = AlignmentDraft {
        text: "Generated without a capability profile.".into(),
        covered_can: vec![],
        covered_cannot: vec![],
    };
    Ok(assemble(
        narrative,
        prompt,
        alignment,
        grade,
        format!("{}/L{}/unprofiled", topic.code(), level.value()),
    ))
}

/// Reference to a rendered drawing in the content-addressed blob store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub sha256: String,
    pub width: u32,
    pub height: u32,
    pub provider: String,
    pub seed: u64,
    pub prompt_hash: String,
}

/// Renders `prompt` and stores the bytes under their SHA-256.
pub fn render_drawing(
    prompt: &str,
    img: &dyn ImageProvider,
    style_seed: u64,
    store: &BlobStore,
) -> Result<(ImageRef, Vec<u8>), SynthesisError> {
    let bytes = providers::generate_image(img, prompt, style_seed)?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| SynthesisError::Undecodable(e.to_string()))?;
    let sha256 = store.put(&bytes)?;
    Ok((
        ImageRef {
            sha256,
            width: decoded.width(),
            height: decoded.height(),
            provider: img.id(),
            seed: style_seed,
            prompt_hash: sha256_hex(prompt.as_bytes()),
        },
        bytes,
    ))
}
