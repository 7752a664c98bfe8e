use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use chrono::Utc;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::manifest::{reindex, CorpusManifest, Journal, JournalEvent, ManifestEntry};
use super::store::ArtifactStore;
use super::{exemplar_seed, generate_artifact, ladder_seed, ArtifactRequest, CorpusError};
use crate::docs::{read_document, write_document};
use crate::metrics::Condition;
use crate::profiles::{build_profile_ladder, PerformanceLevel, ProfileLadder};
use crate::providers::Providers;
use crate::standards::{bundled_standards, decompose, load_standards, PerformanceExpectation, TopicSpec};

fn default_exemplars() -> usize {
    10
}

fn default_concurrency() -> usize {
    4
}

fn default_condition() -> Condition {
    Condition::WithProfiles
}

/// Corpus build configuration (TOML).
///
/// ```toml
/// root = "out/corpus"
/// topics = ["3-LS1-1", "MS-PS1-4"]
/// exemplars_per_cell = 10
/// concurrency = 4
/// seed = 7
/// condition = "with_profiles"
/// # standards = "standards.jsonl"
/// # providers = "providers.toml"
/// # max_new_artifacts = 50
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub root: PathBuf,
    /// Performance expectation codes; empty means every loaded standard.
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default = "default_exemplars")]
    pub exemplars_per_cell: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_condition")]
    pub condition: Condition,
    #[serde(default)]
    pub standards: Option<PathBuf>,
    #[serde(default)]
    pub providers: Option<PathBuf>,
    #[serde(default)]
    pub max_new_artifacts: Option<usize>,
}

impl CorpusConfig {
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CorpusError::Config(e.to_string()))?;
        cfg.options()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn options(&self) -> Result<BuildOptions, CorpusError> {
        let opts = BuildOptions {
            exemplars_per_cell: self.exemplars_per_cell,
            concurrency: self.concurrency,
            seed: self.seed,
            condition: self.condition,
            max_new_artifacts: self.max_new_artifacts,
        };
        opts.check()?;
        Ok(opts)
    }

    pub fn selected_standards(&self) -> Result<Vec<PerformanceExpectation>, CorpusError> {
        let all = match &self.standards {
            Some(p) => load_standards(p)?,
            None => bundled_standards(),
        };
        if self.topics.is_empty() {
            return Ok(all);
        }
        self.topics
            .iter()
            .map(|code| {
                all.iter()
                    .find(|pe| &pe.code == code)
                    .cloned()
                    .ok_or_else(|| CorpusError::Config(format!("unknown performance expectation {code}")))
            })
            .collect()
    }
}

/// Decomposes each standard, caching the result under `<root>/topics/` so
/// a resumed build conditions on the same evidence statements.
pub fn load_topics(
    root: &Path,
    standards: &[PerformanceExpectation],
    providers: &Providers,
    seed: u64,
) -> Result<Vec<TopicSpec>, CorpusError> {
    let mut out = Vec::new();
    for pe in standards {
        let path = root.join("topics").join(format!("{}.json", pe.code));
        let topic = if path.exists() {
            read_document::<TopicSpec>(&path, "topic")?
        } else {
            let t = decompose(pe, providers.generation.as_ref(), crate::digest::derive_seed(&[&pe.code], seed))?;
            write_document(&path, "topic", &t)?;
            t
        };
        out.push(topic);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub exemplars_per_cell: usize,
    pub concurrency: usize,
    pub seed: u64,
    pub condition: Condition,
    /// Stop after this many new artifacts; the rest are left for a later run.
    pub max_new_artifacts: Option<usize>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            exemplars_per_cell: default_exemplars(),
            concurrency: default_concurrency(),
            seed: 0,
            condition: Condition::WithProfiles,
            max_new_artifacts: None,
        }
    }
}

impl BuildOptions {
    fn check(&self) -> Result<(), CorpusError> {
        if self.exemplars_per_cell == 0 {
            return Err(CorpusError::Config("exemplars_per_cell must be at least 1".into()));
        }
        if self.concurrency == 0 {
            return Err(CorpusError::Config("concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub topic_ref: String,
    pub level: PerformanceLevel,
    pub exemplar: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    /// Ids persisted by this run.
    pub generated: Vec<String>,
    /// Exemplars already on disk and left alone.
    pub skipped: usize,
    /// Exemplars left for a later run because of `max_new_artifacts`.
    pub deferred: usize,
    pub failures: Vec<CellFailure>,
    pub manifest: CorpusManifest,
}

struct Job {
    topic: usize,
    level: PerformanceLevel,
    exemplar: usize,
}

type Outcome = Result<ManifestEntry, CellFailure>;

/// Fills every (topic, level) cell up to `exemplars_per_cell` artifacts.
///
/// Exemplars already on disk are skipped, so an interrupted build resumes
/// where it stopped. Jobs run on `concurrency` worker threads; a failing
/// exemplar is quarantined (journaled, reported, not persisted) and the
/// build continues.
pub fn build_corpus(
    root: &Path,
    topics: &[TopicSpec],
    providers: &Providers,
    opts: &BuildOptions,
) -> Result<BuildSummary, CorpusError> {
    opts.check()?;
    for t in topics {
        t.validate().map_err(|e| CorpusError::Config(format!("{}: {e}", t.code())))?;
    }
    let codes: BTreeSet<&str> = topics.iter().map(TopicSpec::code).collect();
    if codes.len() != topics.len() {
        return Err(CorpusError::Config("duplicate topic codes".into()));
    }
    let store = ArtifactStore::new(root);
    let existing = reindex(root, None)?;
    if let Some(other) = existing.artifacts.iter().find(|e| e.condition != opts.condition) {
        return Err(CorpusError::Config(format!(
            "{} already holds {} artifacts; use a separate root per condition",
            root.display(),
            other.condition.as_str()
        )));
    }
    let done: BTreeSet<(String, PerformanceLevel, usize)> = existing
        .artifacts
        .iter()
        .map(|e| (e.topic_ref.clone(), e.level, e.exemplar))
        .collect();

    let mut jobs = VecDeque::new();
    let mut skipped = 0;
    for (ti, t) in topics.iter().enumerate() {
        for level in PerformanceLevel::ALL {
            for exemplar in 0..opts.exemplars_per_cell {
                if done.contains(&(t.code().to_string(), level, exemplar)) {
                    skipped += 1;
                } else {
                    jobs.push_back(Job {
                        topic: ti,
                        level,
                        exemplar,
                    });
                }
            }
        }
    }
    let deferred = match opts.max_new_artifacts {
        Some(max) if jobs.len() > max => {
            let d = jobs.len() - max;
            jobs.truncate(max);
            d
        }
        _ => 0,
    };

    let mut journal = Journal::open(root)?;
    let mut failures = Vec::new();
    let mut ladders: BTreeMap<usize, ProfileLadder> = BTreeMap::new();
    if opts.condition == Condition::WithProfiles {
        let needed: BTreeSet<usize> = jobs.iter().map(|j| j.topic).collect();
        for ti in needed {
            let t = &topics[ti];
            match build_profile_ladder(t, providers.generation.as_ref(), ladder_seed(opts.seed, t.code())) {
                Ok(l) => {
                    ladders.insert(ti, l);
                }
                Err(e) => log::error!("{}: profile ladder failed: {e}", t.code()),
            }
        }
        // jobs of topics without a ladder are quarantined up front
        let (kept, dropped): (VecDeque<Job>, VecDeque<Job>) = jobs.into_iter().partition(|j| ladders.contains_key(&j.topic));
        jobs = kept;
        for j in dropped {
            let f = CellFailure {
                topic_ref: topics[j.topic].code().to_string(),
                level: j.level,
                exemplar: j.exemplar,
                reason: "profile ladder could not be built".into(),
            };
            journal.append(&failure_event(&f))?;
            failures.push(f);
        }
    }

    let total = jobs.len();
    let queue = Mutex::new(jobs);
    let (tx, rx) = mpsc::channel::<Outcome>();
    let mut generated = Vec::new();
    std::thread::scope(|s| -> Result<(), CorpusError> {
        for _ in 0..opts.concurrency.min(total.max(1)) {
            let tx = tx.clone();
            let (queue, store, ladders) = (&queue, &store, &ladders);
            s.spawn(move || loop {
                let Some(job) = queue.lock().pop_front() else { break };
                let topic = &topics[job.topic];
                let req = ArtifactRequest {
                    topic,
                    level: job.level,
                    condition: opts.condition,
                    exemplar: job.exemplar,
                    profile: ladders.get(&job.topic).and_then(|l| l.get(job.level)),
                    seed: exemplar_seed(opts.seed, topic.code(), job.level, opts.condition, job.exemplar),
                    ladder_seed: (opts.condition == Condition::WithProfiles).then(|| ladder_seed(opts.seed, topic.code())),
                };
                let outcome = generate_artifact(&req, providers, store)
                    .and_then(|a| {
                        store.persist(&a)?;
                        Ok(ManifestEntry::from_artifact(&a))
                    })
                    .map_err(|e| CellFailure {
                        topic_ref: topic.code().to_string(),
                        level: job.level,
                        exemplar: job.exemplar,
                        reason: e.to_string(),
                    });
                if tx.send(outcome).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for outcome in rx {
            match outcome {
                Ok(entry) => {
                    log::info!("persisted {} ({} L{} #{})", entry.id, entry.topic_ref, entry.level.value(), entry.exemplar);
                    generated.push(entry.id.clone());
                    journal.append(&JournalEvent::Persisted { entry, at: Utc::now() })?;
                }
                Err(f) => {
                    log::warn!("quarantined {} L{} #{}: {}", f.topic_ref, f.level.value(), f.exemplar, f.reason);
                    journal.append(&failure_event(&f))?;
                    failures.push(f);
                }
            }
        }
        Ok(())
    })?;

    let manifest = reindex(root, Some(opts.exemplars_per_cell))?;
    manifest.save(root)?;
    failures.sort_by(|a, b| (&a.topic_ref, a.level, a.exemplar).cmp(&(&b.topic_ref, b.level, b.exemplar)));
    Ok(BuildSummary {
        generated,
        skipped,
        deferred,
        failures,
        manifest,
    })
}

fn failure_event(f: &CellFailure) -> JournalEvent {
    JournalEvent::Failed {
        topic_ref: f.topic_ref.clone(),
        level: f.level,
        exemplar: f.exemplar,
        reason: f.reason.clone(),
        at: Utc::now(),
    }
}
