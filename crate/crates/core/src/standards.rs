//! Curated performance expectations and their decomposition into
//! observable, drawing-assessable evidence statements.
//!
//! # Standards file format
//!
//! One JSON object per line (blank lines and lines starting with `#` are
//! skipped):
//!
//! ```json
//! {"code":"3-LS1-1","grade":3,"grade_band":"G35","domain":"Life",
//!  "topic":"Life Cycle of a Flowering Plant",
//!  "statement":"Develop models to describe ...",
//!  "seps":["Developing and Using Models"],
//!  "dcis":["LS1.B: Growth and Development of Organisms"],
//!  "cccs":["Patterns"]}
//! ```
//!
//! `grade` is 0-12 (0 is kindergarten), `grade_band` one of `K2`, `G35`,
//! `G68`, `G912`, and `domain` one of `Physical`, `Life`, `EarthSpace`.
//! `topic` is optional.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::providers::{generate_structured, GenerationProvider, ProviderError, StructuredRequest, TemplateId};

pub const MIN_EVIDENCE: usize = 5;
pub const MAX_EVIDENCE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GradeBand {
    K2,
    G35,
    G68,
    G912,
}

impl GradeBand {
    pub const ALL: [GradeBand; 4] = [GradeBand::K2, GradeBand::G35, GradeBand::G68, GradeBand::G912];

    pub fn for_grade(grade: u8) -> Option<Self> {
        match grade {
            0..=2 => Some(GradeBand::K2),
            3..=5 => Some(GradeBand::G35),
            6..=8 => Some(GradeBand::G68),
            9..=12 => Some(GradeBand::G912),
            _ => None,
        }
    }

    pub fn contains(self, grade: u8) -> bool {
        Self::for_grade(grade) == Some(self)
    }

    pub fn label(self) -> &'static str {
        match self {
            GradeBand::K2 => "K-2",
            GradeBand::G35 => "3-5",
            GradeBand::G68 => "6-8",
            GradeBand::G912 => "9-12",
        }
    }

    /// Accepts `K2`/`K-2`, `G35`/`3-5`, and so on.
    pub fn parse(s: &str) -> Option<Self> {
        GradeBand::ALL
            .into_iter()
            .find(|b| s.eq_ignore_ascii_case(b.label()) || s.eq_ignore_ascii_case(&format!("{b:?}")))
    }
}

impl fmt::Display for GradeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Physical,
    Life,
    EarthSpace,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Physical, Domain::Life, Domain::EarthSpace];

    fn abbreviation(self) -> &'static str {
        match self {
            Domain::Physical => "PS",
            Domain::Life => "LS",
            Domain::EarthSpace => "ESS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| s.eq_ignore_ascii_case(&format!("{d:?}")) || s.eq_ignore_ascii_case(d.abbreviation()))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceExpectation {
    pub code: String,
    pub grade: u8,
    pub grade_band: GradeBand,
    pub domain: Domain,
    /// Curated topic label, when the topic list provides one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
    pub statement: String,
    pub seps: Vec<String>,
    pub dcis: Vec<String>,
    pub cccs: Vec<String>,
}

fn code_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(K|[1-5]|MS|HS)-(PS|LS|ESS)\d+-\d+$").expect("valid regex"))
}

impl PerformanceExpectation {
    /// Checks every record-level invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), String> {
        let caps = code_pattern()
            .captures(&self.code)
            .ok_or_else(|| format!("code `{}` does not match <grade>-<domain><n>-<n>", self.code))?;
        if self.grade > 12 {
            return Err(format!("grade {} is outside 0-12", self.grade));
        }
        if !self.grade_band.contains(self.grade) {
            return Err(format!("grade {} is not in band {}", self.grade, self.grade_band));
        }
        let prefix_ok = match &caps[1] {
            "K" => self.grade == 0,
            "MS" => (6..=8).contains(&self.grade),
            "HS" => (9..=12).contains(&self.grade),
            n => n.parse::<u8>().ok() == Some(self.grade),
        };
        if !prefix_ok {
            return Err(format!("code prefix `{}` disagrees with grade {}", &caps[1], self.grade));
        }
        if caps[2] != *self.domain.abbreviation() {
            return Err(format!("code domain `{}` disagrees with domain {}", &caps[2], self.domain));
        }
        if self.statement.trim().is_empty() {
            return Err("statement is empty".into());
        }
        for (name, list) in [("seps", &self.seps), ("dcis", &self.dcis), ("cccs", &self.cccs)] {
            if list.is_empty() || list.iter().any(|s| s.trim().is_empty()) {
                return Err(format!("{name} must be a non-empty list of non-empty entries"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceStatement {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSpec {
    pub topic_name: String,
    pub pe: PerformanceExpectation,
    pub evidence: Vec<EvidenceStatement>,
}

impl TopicSpec {
    pub fn code(&self) -> &str {
        &self.pe.code
    }

    pub fn evidence_ids(&self) -> Vec<&str> {
        self.evidence.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn statement(&self, id: &str) -> Option<&EvidenceStatement> {
        self.evidence.iter().find(|e| e.id == id)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.pe.validate()?;
        let n = self.evidence.len();
        if !(MIN_EVIDENCE..=MAX_EVIDENCE).contains(&n) {
            return Err(format!("{n} evidence statements; expected {MIN_EVIDENCE}-{MAX_EVIDENCE}"));
        }
        let mut seen = HashSet::new();
        for e in &self.evidence {
            if e.text.trim().is_empty() {
                return Err(format!("evidence {} has empty text", e.id));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(format!("duplicate evidence id {}", e.id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StandardsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: cannot parse standards record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {code}: {reason}")]
    Invalid { line: usize, code: String, reason: String },
    #[error("{code}: decomposition yielded {count} evidence statement(s), need at least {MIN_EVIDENCE}")]
    TooFewStatements { code: String, count: usize },
    #[error("{code}: invalid decomposition: {reason}")]
    InvalidTopic { code: String, reason: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

pub fn load_standards(path: &Path) -> Result<Vec<PerformanceExpectation>, StandardsError> {
    let text = std::fs::read_to_string(path).map_err(|source| StandardsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_standards(&text)
}

pub fn parse_standards(text: &str) -> Result<Vec<PerformanceExpectation>, StandardsError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let pe: PerformanceExpectation = serde_json::from_str(trimmed).map_err(|e| StandardsError::Parse {
            line,
            message: e.to_string(),
        })?;
        pe.validate().map_err(|reason| StandardsError::Invalid {
            line,
            code: pe.code.clone(),
            reason,
        })?;
        out.push(pe);
    }
    Ok(out)
}

/// Standards bundled with the crate (includes the worked-example topics).
pub fn bundled_standards() -> Vec<PerformanceExpectation> {
    parse_standards(include_str!("../fixtures/standards.jsonl")).expect("bundled standards are valid")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DecompositionDraft {
    pub topic_name: String,
    pub evidence: Vec<EvidenceDraft>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct EvidenceDraft {
    pub text: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl DecompositionDraft {
    fn check(&self) -> Result<(), String> {
        if self.topic_name.trim().is_empty() {
            return Err("topic_name is empty".into());
        }
        if let Some(i) = self.evidence.iter().position(|e| e.text.trim().is_empty()) {
            return Err(format!("evidence[{i}].text is empty"));
        }
        Ok(())
    }
}

pub(crate) fn decompose_variables(pe: &PerformanceExpectation) -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("code".into(), pe.code.clone());
    v.insert("grade".into(), pe.grade.to_string());
    v.insert("grade_band".into(), pe.grade_band.label().into());
    v.insert("domain".into(), pe.domain.to_string());
    v.insert("statement".into(), pe.statement.clone());
    v.insert("seps".into(), pe.seps.join("; "));
    v.insert("dcis".into(), pe.dcis.join("; "));
    v.insert("cccs".into(), pe.cccs.join("; "));
    v.insert("topic_hint".into(), pe.topic.clone().unwrap_or_default());
    v
}

const SCHEMA_REPAIRS: usize = 2;

/// Decomposes `pe` into 5-8 evidence statements with ids `E1`, `E2`, ...
///
/// Malformed responses are re-asked up to twice; fewer than five statements
/// gets one more re-ask; more than eight are truncated.
pub fn decompose(
    pe: &PerformanceExpectation,
    gen: &dyn GenerationProvider,
    seed: u64,
) -> Result<TopicSpec, StandardsError> {
    pe.validate().map_err(|reason| StandardsError::InvalidTopic {
        code: pe.code.clone(),
        reason,
    })?;
    let req = StructuredRequest::new(TemplateId::Decompose, decompose_variables(pe), Some(seed))?;
    let mut draft: DecompositionDraft = generate_structured(gen, req.clone(), SCHEMA_REPAIRS, DecompositionDraft::check)?;
    if draft.evidence.len() < MIN_EVIDENCE {
        let feedback = format!(
            "returned {} evidence statements; return between {MIN_EVIDENCE} and {MAX_EVIDENCE}",
            draft.evidence.len()
        );
        draft = generate_structured(gen, req.with_feedback(feedback), 0, DecompositionDraft::check)?;
        if draft.evidence.len() < MIN_EVIDENCE {
            return Err(StandardsError::TooFewStatements {
                code: pe.code.clone(),
                count: draft.evidence.len(),
            });
        }
    }
    draft.evidence.truncate(MAX_EVIDENCE);
    let topic = TopicSpec {
        topic_name: draft.topic_name.trim().to_string(),
        pe: pe.clone(),
        evidence: draft
            .evidence
            .into_iter()
            .enumerate()
            .map(|(i, e)| EvidenceStatement {
                id: format!("E{}", i + 1),
                text: e.text.trim().to_string(),
                tags: e.tags,
            })
            .collect(),
    };
    topic.validate().map_err(|reason| StandardsError::InvalidTopic {
        code: pe.code.clone(),
        reason,
    })?;
    Ok(topic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::scripted::ScriptedGenerator;
    use crate::providers::OfflineGenerator;
    use serde_json::json;

    fn k_ess3_1() -> PerformanceExpectation {
        bundled_standards().into_iter().find(|p| p.code == "K-ESS3-1").unwrap()
    }

    #[test]
    fn single_record_loads() {
        let line = serde_json::to_string(&k_ess3_1()).unwrap();
        let got = parse_standards(&line).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].code, "K-ESS3-1");
        assert_eq!(got[0].grade, 0);
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_standards("").unwrap().is_empty());
        assert!(parse_standards("\n\n# comment\n").unwrap().is_empty());
    }

    #[test]
    fn band_mismatch_names_the_code() {
        let mut pe = bundled_standards().into_iter().find(|p| p.code == "3-LS1-1").unwrap();
        pe.grade_band = GradeBand::G912;
        let text = format!("\n{}", serde_json::to_string(&pe).unwrap());
        match parse_standards(&text).unwrap_err() {
            StandardsError::Invalid { line, code, reason } => {
                assert_eq!(line, 2);
                assert_eq!(code, "3-LS1-1");
                assert!(reason.contains("band"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line() {
        let good = serde_json::to_string(&k_ess3_1()).unwrap();
        let text = format!("{good}\n{{\"code\": 3}}\n");
        assert!(matches!(parse_standards(&text), Err(StandardsError::Parse { line: 2, .. })));
    }

    #[test]
    fn code_pattern_accepts_bands() {
        for code in ["K-ESS3-1", "3-LS1-1", "MS-PS1-4", "HS-ESS1-4"] {
            assert!(code_pattern().is_match(code), "{code}");
        }
        for code in ["6-LS1-1", "K-XS1-1", "MS-PS1", "ms-ps1-4"] {
            assert!(!code_pattern().is_match(code), "{code}");
        }
    }

    #[test]
    fn empty_dimension_list_rejected() {
        let mut pe = k_ess3_1();
        pe.cccs.clear();
        assert!(pe.validate().unwrap_err().contains("cccs"));
    }

    #[test]
    fn kindergarten_decomposition_has_habitat_and_body_parts() {
        let topic = decompose(&k_ess3_1(), &OfflineGenerator::new(), 0).unwrap();
        let text: Vec<String> = topic
            .evidence
            .iter()
            .flat_map(|e| std::iter::once(e.text.to_lowercase()).chain(e.tags.iter().map(|t| t.to_lowercase())))
            .collect();
        assert!(text.iter().any(|t| t.contains("habitat")));
        assert!(text.iter().any(|t| t.contains("body parts")));
    }

    #[test]
    fn too_many_statements_truncated_to_eight() {
        let many: Vec<_> = (0..11).map(|i| json!({"text": format!("The student can draw part {i}.")})).collect();
        let gen = ScriptedGenerator::new(vec![Ok(json!({"topic_name": "T", "evidence": many}))]);
        let topic = decompose(&k_ess3_1(), &gen, 0).unwrap();
        assert_eq!(topic.evidence.len(), MAX_EVIDENCE);
        assert_eq!(topic.evidence.last().unwrap().id, "E8");
    }

    #[test]
    fn too_few_statements_reasked_once_then_fails() {
        let three = json!({"topic_name": "T", "evidence": [{"text": "a"}, {"text": "b"}, {"text": "c"}]});
        let gen = ScriptedGenerator::new(vec![Ok(three.clone()), Ok(three)]);
        let err = decompose(&k_ess3_1(), &gen, 0).unwrap_err();
        assert!(matches!(err, StandardsError::TooFewStatements { count: 3, .. }));
        assert_eq!(gen.requests().len(), 2);
    }

    #[test]
    fn malformed_output_repaired_at_most_twice() {
        let bad = json!({"evidence": "nope"});
        let gen = ScriptedGenerator::new(vec![Ok(bad.clone()), Ok(bad.clone()), Ok(bad.clone()), Ok(bad)]);
        let err = decompose(&k_ess3_1(), &gen, 0).unwrap_err();
        assert!(matches!(err, StandardsError::Provider(ProviderError::SchemaViolation { attempts: 3, .. })));
        assert_eq!(gen.requests().len(), 3);
    }
}
