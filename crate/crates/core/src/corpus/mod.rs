//! Corpus construction: one artifact per (topic, level, exemplar), persisted
//! under a resumable, checksummed directory layout, plus rater sampling.
//!
//! ```text
//! <root>/
//!   blobs/<ab>/<sha256>.png
//!   corpus/<topic>/L<level>/<id>/{narrative.txt, prompt.json, image.png,
//!                                 cmap.json, alignment.json, meta.json}
//!   topics/<code>.json
//!   journal.jsonl
//!   manifest.json
//!   plans/<plan id>.json
//! ```

mod analysis;
mod build;
mod manifest;
mod sample;
pub mod store;

pub use analysis::{consistency_rows, density_samples};
pub use build::{build_corpus, load_topics, BuildOptions, BuildSummary, CellFailure, CorpusConfig};
pub use manifest::{read_journal, reindex, CellState, CellStatus, CorpusManifest, JournalEvent, ManifestEntry};
pub use sample::{stratified_sample, OverlapPolicy, SamplingOptions, SamplingPlan, Strata};
pub use store::{ArtifactStore, BlobStore, StoreError};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::conceptmap::{generate_map, map_violations, ConceptMap, MapError};
use crate::digest::{derive_seed, sha256_hex};
use crate::docs::DocError;
use crate::metrics::Condition;
use crate::profiles::{CapabilityProfile, PerformanceLevel, ProfileError};
use crate::providers::Providers;
use crate::standards::{Domain, GradeBand, StandardsError, TopicSpec};
use crate::synthesis::{
    coverage_gaps, generate_unified, generate_unprofiled, render_drawing, verify_alignment, AlignmentReport, ImageRef,
    SynthesisError, UnifiedOutput,
};
use crate::PIPELINE_VERSION;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error(transparent)]
    Standards(#[from] StandardsError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("artifact failed its gate: {0}")]
    Gate(String),
    #[error("invalid corpus configuration: {0}")]
    Config(String),
    #[error("sampling infeasible: {0}")]
    Sampling(String),
    #[error("artifact {artifact}: {source}")]
    Metrics {
        artifact: String,
        #[source]
        source: crate::metrics::MetricsError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub synthesis: u64,
    pub image: u64,
    pub map: u64,
    /// Seed the topic's profile ladder was built with; absent without
    /// profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generation_provider: String,
    pub image_provider: String,
    pub seeds: Seeds,
    pub created_at: DateTime<Utc>,
    pub pipeline_version: String,
}

/// One generated triplet with everything needed to audit or regenerate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub id: String,
    pub topic_ref: String,
    pub topic_name: String,
    pub domain: Domain,
    pub grade: u8,
    pub grade_band: GradeBand,
    pub level: PerformanceLevel,
    pub condition: Condition,
    pub exemplar: usize,
    /// The conditioning profile; `None` for the profile-free control.
    pub profile: Option<CapabilityProfile>,
    pub unified: UnifiedOutput,
    pub image: ImageRef,
    pub cmap: ConceptMap,
    pub alignment: AlignmentReport,
    pub provenance: Provenance,
}

impl Artifact {
    /// First 16 hex digits of the SHA-256 of the canonical content. The id
    /// itself, the map's back-reference and the timestamp are excluded, so
    /// regenerating with the same seeds yields the same id.
    pub fn content_id(&self) -> String {
        let mut c = self.clone();
        c.id = String::new();
        c.cmap.artifact_ref = None;
        c.provenance.created_at = DateTime::<Utc>::UNIX_EPOCH;
        let bytes = serde_json::to_vec(&c).expect("artifact serializes");
        sha256_hex(&bytes)[..16].to_string()
    }
}

/// Seed of exemplar `exemplar` in a cell: the cell's derived seed plus the
/// exemplar index.
pub fn exemplar_seed(base: u64, topic: &str, level: PerformanceLevel, condition: Condition, exemplar: usize) -> u64 {
    derive_seed(&[topic, &format!("L{}", level.value()), condition.as_str()], base).wrapping_add(exemplar as u64)
}

pub fn ladder_seed(base: u64, topic: &str) -> u64 {
    derive_seed(&[topic, "ladder"], base)
}

/// Profile with every statement achieved. It drives map generation for the
/// profile-free control and is never persisted as a profile.
fn flat_profile(topic: &TopicSpec, level: PerformanceLevel) -> CapabilityProfile {
    CapabilityProfile {
        topic_ref: topic.code().to_string(),
        level,
        can_do: topic.evidence_ids().into_iter().map(str::to_string).collect(),
        cannot_yet_do: Default::default(),
        gloss: Default::default(),
    }
}

/// Everything a single artifact's generation depends on.
pub struct ArtifactRequest<'a> {
    pub topic: &'a TopicSpec,
    pub level: PerformanceLevel,
    pub condition: Condition,
    pub exemplar: usize,
    /// Required with profiles, ignored without.
    pub profile: Option<&'a CapabilityProfile>,
    pub seed: u64,
    pub ladder_seed: Option<u64>,
}

/// Generates, gates, and stores the image of one artifact. Persisting the
/// artifact directory is left to the caller.
///
/// With profiles the prompt must pass the alignment check and the map must
/// pass every rule. The profile-free control is only held to the map rules,
/// against a profile in which every statement is achieved.
pub fn generate_artifact(
    req: &ArtifactRequest<'_>,
    providers: &Providers,
    store: &ArtifactStore,
) -> Result<Artifact, CorpusError> {
    let topic = req.topic;
    let grade = topic.pe.grade;
    let gen = providers.generation.as_ref();
    let seeds = Seeds {
        synthesis: req.seed,
        image: derive_seed(&["image"], req.seed),
        map: derive_seed(&["map"], req.seed),
        ladder: req.ladder_seed,
    };
    let (unified, alignment, map_profile) = match req.condition {
        Condition::WithProfiles => {
            let profile = req
                .profile
                .ok_or_else(|| CorpusError::Config(format!("{}: a profile is required", topic.code())))?;
            let unified = generate_unified(topic, grade, profile, gen, seeds.synthesis, &providers.style)?;
            let report = verify_alignment(&unified, profile)?;
            if !report.pass {
                return Err(CorpusError::Gate(format!(
                    "{} alignment: uncovered can {:?}, cannot {:?}",
                    profile.id(),
                    report.uncovered_can,
                    report.uncovered_cannot
                )));
            }
            (unified, report, profile.clone())
        }
        Condition::WithoutProfiles => {
            let unified = generate_unprofiled(topic, grade, req.level, gen, seeds.synthesis, &providers.style)?;
            let flat = flat_profile(topic, req.level);
            let (uncovered_can, uncovered_cannot) = coverage_gaps(&unified.prompt, &flat);
            let report = AlignmentReport {
                profile_ref: unified.profile_ref.clone(),
                pass: uncovered_can.is_empty() && uncovered_cannot.is_empty(),
                uncovered_can,
                uncovered_cannot,
                contradictions: unified.prompt.contradictions(),
            };
            (unified, report, flat)
        }
    };
    let (image, _) = render_drawing(&unified.prompt.composed, providers.image.as_ref(), seeds.image, store.blobs())?;
    let cmap = generate_map(topic, &map_profile, &unified.prompt, gen, seeds.map)?;
    let v = map_violations(&cmap, &map_profile);
    if !v.is_empty() {
        return Err(CorpusError::Gate(format!(
            "concept map: {}",
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
        )));
    }
    let mut artifact = Artifact {
        id: String::new(),
        topic_ref: topic.code().to_string(),
        topic_name: topic.topic_name.clone(),
        domain: topic.pe.domain,
        grade,
        grade_band: topic.pe.grade_band,
        level: req.level,
        condition: req.condition,
        exemplar: req.exemplar,
        profile: match req.condition {
            Condition::WithProfiles => Some(map_profile),
            Condition::WithoutProfiles => None,
        },
        unified,
        image,
        cmap,
        alignment,
        provenance: Provenance {
            generation_provider: gen.id(),
            image_provider: providers.image.id(),
            seeds,
            created_at: Utc::now(),
            pipeline_version: PIPELINE_VERSION.to_string(),
        },
    };
    artifact.id = artifact.content_id();
    artifact.cmap.artifact_ref = Some(artifact.id.clone());
    Ok(artifact)
}
