//! Four-level capability profiles: per-level partitions of a topic's
//! evidence statements into mastered (`can_do`) and not-yet-mastered
//! (`cannot_yet_do`) sets. A profile is the conditioning state shared by
//! every downstream generation stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::providers::{generate_structured, GenerationProvider, ProviderError, StructuredRequest, TemplateId};
use crate::standards::TopicSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum PerformanceLevel {
    Emergent = 1,
    Developing = 2,
    Proficient = 3,
    Advanced = 4,
}

impl PerformanceLevel {
    pub const ALL: [PerformanceLevel; 4] = [
        PerformanceLevel::Emergent,
        PerformanceLevel::Developing,
        PerformanceLevel::Proficient,
        PerformanceLevel::Advanced,
    ];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(v: u8) -> Option<Self> {
        Self::ALL.get(usize::from(v).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PerformanceLevel::Emergent => "Emergent",
            PerformanceLevel::Developing => "Developing",
            PerformanceLevel::Proficient => "Proficient",
            PerformanceLevel::Advanced => "Advanced",
        }
    }

    /// Rubric descriptor for the level.
    pub fn descriptor(self) -> &'static str {
        match self {
            PerformanceLevel::Emergent => {
                "Minimal conceptual integration; partial or inaccurate representation; often lacks labels or clear spatial organization."
            }
            PerformanceLevel::Developing => {
                "Basic concept recognition with limited integration; often contains specific \"hybrid\" misconceptions (mixing scientific and intuitive ideas)."
            }
            PerformanceLevel::Proficient => {
                "Grade-appropriate reasoning with integrated three-dimensional understanding; meets the standard."
            }
            PerformanceLevel::Advanced => {
                "Sophisticated reasoning with accurate, complete representations; often includes details beyond the grade-level requirement."
            }
        }
    }

    pub fn index(self) -> usize {
        usize::from(self.value() - 1)
    }
}

impl From<PerformanceLevel> for u8 {
    fn from(l: PerformanceLevel) -> u8 {
        l.value()
    }
}

impl TryFrom<u8> for PerformanceLevel {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        Self::from_value(v).ok_or_else(|| format!("performance level must be 1-4, got {v}"))
    }
}

impl fmt::Display for PerformanceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{} ({})", self.value(), self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityProfile {
    pub topic_ref: String,
    pub level: PerformanceLevel,
    pub can_do: BTreeSet<String>,
    pub cannot_yet_do: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gloss: BTreeMap<String, String>,
}

impl CapabilityProfile {
    pub fn id(&self) -> String {
        format!("{}/L{}", self.topic_ref, self.level.value())
    }

    /// Returns every invariant violation against `topic`.
    pub fn violations(&self, topic: &TopicSpec) -> Vec<String> {
        let mut out = Vec::new();
        if self.topic_ref != topic.code() {
            out.push(format!("profile topic {} does not match {}", self.topic_ref, topic.code()));
        }
        let all: BTreeSet<String> = topic.evidence_ids().into_iter().map(str::to_string).collect();
        let overlap: Vec<_> = self.can_do.intersection(&self.cannot_yet_do).cloned().collect();
        if !overlap.is_empty() {
            out.push(format!("ids in both can_do and cannot_yet_do: {overlap:?}"));
        }
        let union: BTreeSet<String> = self.can_do.union(&self.cannot_yet_do).cloned().collect();
        let missing: Vec<_> = all.difference(&union).cloned().collect();
        if !missing.is_empty() {
            out.push(format!("ids in neither set: {missing:?}"));
        }
        let unknown: Vec<_> = union.difference(&all).cloned().collect();
        if !unknown.is_empty() {
            out.push(format!("unknown evidence ids: {unknown:?}"));
        }
        if self.can_do.is_empty() {
            out.push("can_do is empty".into());
        }
        if self.cannot_yet_do.is_empty() {
            out.push("cannot_yet_do is empty".into());
        }
        let stray: Vec<_> = self.gloss.keys().filter(|k| !union.contains(*k)).cloned().collect();
        if !stray.is_empty() {
            out.push(format!("gloss references ids outside the profile: {stray:?}"));
        }
        out
    }

    pub fn validate(&self, topic: &TopicSpec) -> Result<(), ProfileError> {
        let v = self.violations(topic);
        if v.is_empty() {
            Ok(())
        } else {
            Err(ProfileError::Invalid {
                profile: self.id(),
                violations: v,
            })
        }
    }
}

/// Profiles for all four levels, indexed by level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileLadder {
    pub profiles: BTreeMap<PerformanceLevel, CapabilityProfile>,
}

impl ProfileLadder {
    pub fn get(&self, level: PerformanceLevel) -> Option<&CapabilityProfile> {
        self.profiles.get(&level)
    }

    /// Subset chain can_do(L1) ⊆ can_do(L2) ⊆ can_do(L3) ⊆ can_do(L4).
    pub fn chain_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for pair in PerformanceLevel::ALL.windows(2) {
            let (Some(lo), Some(hi)) = (self.get(pair[0]), self.get(pair[1])) else {
                out.push(format!("missing profile for {} or {}", pair[0], pair[1]));
                continue;
            };
            let dropped: Vec<_> = lo.can_do.difference(&hi.can_do).cloned().collect();
            if !dropped.is_empty() {
                out.push(format!("{} can_do not contained in {} can_do: {dropped:?}", pair[0], pair[1]));
            }
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("profile {profile} is invalid: {}", violations.join("; "))]
    Invalid { profile: String, violations: Vec<String> },
    #[error("ladder for {topic} breaks the subset chain: {}", violations.join("; "))]
    Ladder { topic: String, violations: Vec<String> },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Default `|can_do|` per level for `n` evidence statements: `n` times
/// 1/4, 1/2, 3/4, 7/8, rounded, kept inside `[1, n-1]` and non-decreasing.
pub fn default_ladder_counts(n: usize) -> [usize; 4] {
    const FRACTIONS: [f64; 4] = [0.25, 0.5, 0.75, 0.875];
    let hi = n.saturating_sub(1).max(1);
    let mut out = [0; 4];
    let mut floor = 1;
    for (slot, f) in out.iter_mut().zip(FRACTIONS) {
        let k = ((n as f64 * f).round() as usize).clamp(1, hi).max(floor);
        *slot = k;
        floor = k;
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ProfileDraft {
    pub can_do: Vec<String>,
    pub cannot_yet_do: Vec<String>,
    #[serde(default)]
    pub gloss: BTreeMap<String, String>,
}

impl ProfileDraft {
    fn into_profile(self, topic: &TopicSpec, level: PerformanceLevel) -> CapabilityProfile {
        CapabilityProfile {
            topic_ref: topic.code().to_string(),
            level,
            can_do: self.can_do.into_iter().collect(),
            cannot_yet_do: self.cannot_yet_do.into_iter().collect(),
            gloss: self.gloss,
        }
    }
}

pub(crate) fn evidence_json(topic: &TopicSpec) -> String {
    let items: Vec<serde_json::Value> = topic
        .evidence
        .iter()
        .map(|e| serde_json::json!({"id": e.id, "text": e.text}))
        .collect();
    serde_json::to_string(&items).expect("evidence serializes")
}

pub(crate) fn profile_variables(
    topic: &TopicSpec,
    level: PerformanceLevel,
    prior: Option<&BTreeSet<String>>,
) -> BTreeMap<String, String> {
    let mut v = BTreeMap::new();
    v.insert("code".into(), topic.code().to_string());
    v.insert("topic_name".into(), topic.topic_name.clone());
    v.insert("level".into(), level.value().to_string());
    v.insert("level_name".into(), level.name().into());
    v.insert("level_descriptor".into(), level.descriptor().into());
    v.insert("evidence_json".into(), evidence_json(topic));
    let prior: Vec<&String> = prior.map(|p| p.iter().collect()).unwrap_or_default();
    v.insert("prior_can_do_json".into(), serde_json::to_string(&prior).expect("ids serialize"));
    v
}

const PROFILE_REPAIRS: usize = 1;

fn request_profile(
    topic: &TopicSpec,
    level: PerformanceLevel,
    prior: Option<&BTreeSet<String>>,
    gen: &dyn GenerationProvider,
    seed: u64,
) -> Result<CapabilityProfile, ProfileError> {
    let req = StructuredRequest::new(TemplateId::Profile, profile_variables(topic, level, prior), Some(seed))?;
    let draft: ProfileDraft = generate_structured(gen, req, PROFILE_REPAIRS, |d: &ProfileDraft| {
        let p = d.clone().into_profile(topic, level);
        let mut v = p.violations(topic);
        if let Some(prior) = prior {
            let dropped: Vec<_> = prior.difference(&p.can_do).cloned().collect();
            if !dropped.is_empty() {
                v.push(format!("previously mastered ids dropped from can_do: {dropped:?}"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v.join("; "))
        }
    })
    .map_err(|e| match e {
        ProviderError::SchemaViolation { message, .. } if prior.is_some() => ProfileError::Ladder {
            topic: topic.code().to_string(),
            violations: vec![format!("{level}: {message}")],
        },
        ProviderError::SchemaViolation { message, .. } => ProfileError::Invalid {
            profile: format!("{}/L{}", topic.code(), level.value()),
            violations: vec![message],
        },
        other => other.into(),
    })?;
    Ok(draft.into_profile(topic, level))
}

/// Builds one standalone profile. No cross-level monotonicity is imposed.
pub fn build_profile(
    topic: &TopicSpec,
    level: PerformanceLevel,
    gen: &dyn GenerationProvider,
    seed: u64,
) -> Result<CapabilityProfile, ProfileError> {
    request_profile(topic, level, None, gen, seed)
}

/// Builds all four profiles in order, passing each level's `can_do` to the
/// next so the subset chain holds.
pub fn build_profile_ladder(
    topic: &TopicSpec,
    gen: &dyn GenerationProvider,
    seed: u64,
) -> Result<ProfileLadder, ProfileError> {
    let mut profiles = BTreeMap::new();
    let mut prior: Option<BTreeSet<String>> = None;
    for level in PerformanceLevel::ALL {
        let p = request_profile(topic, level, prior.as_ref(), gen, seed)?;
        prior = Some(p.can_do.clone());
        profiles.insert(level, p);
    }
    let ladder = ProfileLadder { profiles };
    let v = ladder.chain_violations();
    if !v.is_empty() {
        return Err(ProfileError::Ladder {
            topic: topic.code().to_string(),
            violations: v,
        });
    }
    Ok(ladder)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::scripted::ScriptedGenerator;
    use crate::providers::OfflineGenerator;
    use crate::standards::{bundled_standards, decompose};
    use proptest::prelude::*;
    use serde_json::json;

    fn topic(code: &str) -> TopicSpec {
        let pe = bundled_standards().into_iter().find(|p| p.code == code).unwrap();
        decompose(&pe, &OfflineGenerator::new(), 0).unwrap()
    }

    #[test]
    fn default_counts_by_size() {
        assert_eq!(default_ladder_counts(8), [2, 4, 6, 7]);
        assert_eq!(default_ladder_counts(5), [1, 3, 4, 4]);
        assert_eq!(default_ladder_counts(6), [2, 3, 5, 5]);
        for n in 2..=8 {
            let c = default_ladder_counts(n);
            assert!(c.windows(2).all(|w| w[0] <= w[1]) && c[0] >= 1 && c[3] < n, "{n}: {c:?}");
        }
    }

    #[test]
    fn level_round_trips_through_integer() {
        for l in PerformanceLevel::ALL {
            assert_eq!(PerformanceLevel::try_from(l.value()).unwrap(), l);
            let s = serde_json::to_string(&l).unwrap();
            assert_eq!(s, l.value().to_string());
        }
        assert!(PerformanceLevel::try_from(0).is_err());
        assert!(PerformanceLevel::try_from(5).is_err());
    }

    #[test]
    fn water_cycle_developing_split() {
        let t = topic("MS-ESS2-4");
        let p = build_profile(&t, PerformanceLevel::Developing, &OfflineGenerator::new(), 0).unwrap();
        let text = |id: &String| t.statement(id).unwrap().text.to_lowercase();
        assert!(p.can_do.iter().any(|id| text(id).contains("evaporation")));
        assert!(p
            .cannot_yet_do
            .iter()
            .any(|id| text(id).contains("connect clouds to precipitation")));
    }

    #[test]
    fn partition_covers_every_id_for_five_statement_topic() {
        let gen = ScriptedGenerator::new(vec![]).with_fallback(OfflineGenerator::new());
        let mut t = topic("K-ESS3-1");
        t.evidence.truncate(5);
        for level in PerformanceLevel::ALL {
            let p = build_profile(&t, level, &gen, 3).unwrap();
            assert_eq!(p.can_do.len() + p.cannot_yet_do.len(), 5);
            assert!(p.violations(&t).is_empty());
        }
    }

    #[test]
    fn ladder_of_eight_is_two_four_six_seven() {
        let mut t = topic("MS-ESS2-4");
        t.pe.code = "MS-ESS2-5".into();
        t.evidence = (1..=8)
            .map(|i| crate::standards::EvidenceStatement {
                id: format!("E{i}"),
                text: format!("The student can draw feature {i}."),
                tags: vec![],
            })
            .collect();
        let ladder = build_profile_ladder(&t, &OfflineGenerator::new(), 0).unwrap();
        let sizes: Vec<usize> = PerformanceLevel::ALL.iter().map(|l| ladder.get(*l).unwrap().can_do.len()).collect();
        assert_eq!(sizes, vec![2, 4, 6, 7]);
        // subset chain by direct set comparison
        for w in PerformanceLevel::ALL.windows(2) {
            assert!(ladder.get(w[0]).unwrap().can_do.is_subset(&ladder.get(w[1]).unwrap().can_do));
        }
    }

    #[test]
    fn ladder_is_deterministic() {
        let t = topic("3-LS1-1");
        let a = build_profile_ladder(&t, &OfflineGenerator::new(), 9).unwrap();
        let b = build_profile_ladder(&t, &OfflineGenerator::new(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ladder_violation_repaired_once_then_rejected() {
        let t = topic("K-ESS3-1");
        let ok = |can: &[&str], cannot: &[&str]| Ok(json!({"can_do": can, "cannot_yet_do": cannot}));
        let bad = ok(&["E1", "E2", "E3", "E5"], &["E4", "E6"]);
        let gen = ScriptedGenerator::new(vec![
            ok(&["E1"], &["E2", "E3", "E4", "E5", "E6"]),
            ok(&["E1", "E2"], &["E3", "E4", "E5", "E6"]),
            ok(&["E1", "E2", "E3", "E4"], &["E5", "E6"]),
            bad.clone(),
            bad,
        ]);
        let err = build_profile_ladder(&t, &gen, 0).unwrap_err();
        assert!(matches!(err, ProfileError::Ladder { .. }), "{err}");
        let reqs = gen.requests();
        assert_eq!(reqs.len(), 5);
        assert!(reqs[4].var("repair_feedback").unwrap().contains("E4"));
    }

    #[test]
    fn overlapping_sets_are_invalid() {
        let t = topic("K-ESS3-1");
        let p = CapabilityProfile {
            topic_ref: t.code().into(),
            level: PerformanceLevel::Proficient,
            can_do: ["E1", "E2", "E3", "E4"].iter().map(|s| s.to_string()).collect(),
            cannot_yet_do: ["E4", "E5", "E6"].iter().map(|s| s.to_string()).collect(),
            gloss: BTreeMap::new(),
        };
        assert!(p.violations(&t).iter().any(|v| v.contains("both")));
    }

    fn arb_profile() -> impl Strategy<Value = CapabilityProfile> {
        (1u8..=4, prop::collection::vec(any::<bool>(), 5..=8), "[a-z ]{0,20}").prop_map(|(lvl, split, note)| {
            let mut can = BTreeSet::new();
            let mut cannot = BTreeSet::new();
            for (i, c) in split.iter().enumerate() {
                if *c { &mut can } else { &mut cannot }.insert(format!("E{}", i + 1));
            }
            let mut gloss = BTreeMap::new();
            if !note.is_empty() {
                gloss.insert("E1".to_string(), note);
            }
            CapabilityProfile {
                topic_ref: "3-LS1-1".into(),
                level: PerformanceLevel::from_value(lvl).unwrap(),
                can_do: can,
                cannot_yet_do: cannot,
                gloss,
            }
        })
    }

    proptest! {
        #[test]
        fn profile_document_round_trip(p in arb_profile()) {
            let doc = crate::docs::to_document("profile", &p);
            let back: CapabilityProfile = crate::docs::from_document("profile", &doc, "mem").unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
