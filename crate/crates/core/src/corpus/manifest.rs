//! Append-only journal and the manifest rebuilt from disk.
//!
//! Workers never touch the journal; the build's coordinating thread is its
//! only writer. The artifact directories are the source of truth: `reindex`
//! rebuilds the manifest from them and takes only failures from the journal.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::store::{ArtifactStore, StoreError};
use super::{Artifact, CorpusError};
use crate::docs::{read_document, write_document};
use crate::metrics::Condition;
use crate::profiles::PerformanceLevel;
use crate::standards::{Domain, GradeBand};

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub topic_ref: String,
    pub topic_name: String,
    pub domain: Domain,
    pub grade: u8,
    pub grade_band: GradeBand,
    pub level: PerformanceLevel,
    pub condition: Condition,
    pub exemplar: usize,
    /// Relative to the corpus root.
    pub path: String,
}

impl ManifestEntry {
    pub fn from_artifact(a: &Artifact) -> Self {
        Self {
            id: a.id.clone(),
            topic_ref: a.topic_ref.clone(),
            topic_name: a.topic_name.clone(),
            domain: a.domain,
            grade: a.grade,
            grade_band: a.grade_band,
            level: a.level,
            condition: a.condition,
            exemplar: a.exemplar,
            path: ArtifactStore::relative_dir(a).to_string_lossy().replace('\\', "/"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    Persisted {
        entry: ManifestEntry,
        at: DateTime<Utc>,
    },
    Failed {
        topic_ref: String,
        level: PerformanceLevel,
        exemplar: usize,
        reason: String,
        at: DateTime<Utc>,
    },
}

pub(crate) struct Journal {
    file: File,
}

impl Journal {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let path = root.join(JOURNAL_FILE);
        fs::create_dir_all(root).map_err(|source| StoreError::Io {
            path: root.display().to_string(),
            source,
        })?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| StoreError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self { file })
    }

    pub fn append(&mut self, event: &JournalEvent) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(event).expect("journal event serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| StoreError::Io {
                path: JOURNAL_FILE.into(),
                source,
            })
    }
}

/// Every parseable journal line. A torn final line, left by a process
/// killed mid-write, is skipped.
pub fn read_journal(root: &Path) -> Result<Vec<JournalEvent>, StoreError> {
    let path = root.join(JOURNAL_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(&path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| StoreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        match serde_json::from_str(&line) {
            Ok(ev) => out.push(ev),
            Err(e) => log::warn!("{}: skipping unreadable journal line: {e}", path.display()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Pending,
    Partial,
    Complete,
    /// Short of its target with at least one quarantined exemplar.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellState {
    pub topic_ref: String,
    pub level: PerformanceLevel,
    pub target: usize,
    pub completed: usize,
    /// Exemplar index and reason of each unresolved failure.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<(usize, String)>,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub topics: Vec<String>,
    pub exemplars_per_cell: Option<usize>,
    pub artifacts: Vec<ManifestEntry>,
    pub cells: Vec<CellState>,
    pub domain_counts: BTreeMap<String, usize>,
    pub grade_band_counts: BTreeMap<String, usize>,
    pub updated_at: DateTime<Utc>,
}

type CellTally = (usize, Vec<(usize, String)>);

impl CorpusManifest {
    /// Builds the manifest from entries and unresolved failures. Cells are
    /// every (topic, level) seen in either, plus all four levels of every
    /// topic when a target is known.
    pub fn from_parts(
        mut artifacts: Vec<ManifestEntry>,
        failures: &[(String, PerformanceLevel, usize, String)],
        exemplars_per_cell: Option<usize>,
    ) -> Self {
        artifacts.sort_by(|a, b| {
            (&a.topic_ref, a.level, a.exemplar, &a.id).cmp(&(&b.topic_ref, b.level, b.exemplar, &b.id))
        });
        // per cell: completed count and (exemplar, reason) failures
        let mut cells: BTreeMap<(String, PerformanceLevel), CellTally> = BTreeMap::new();
        let topics: BTreeSet<String> = artifacts
            .iter()
            .map(|a| a.topic_ref.clone())
            .chain(failures.iter().map(|f| f.0.clone()))
            .collect();
        if exemplars_per_cell.is_some() {
            for t in &topics {
                for level in PerformanceLevel::ALL {
                    cells.entry((t.clone(), level)).or_default();
                }
            }
        }
        for a in &artifacts {
            cells.entry((a.topic_ref.clone(), a.level)).or_default().0 += 1;
        }
        for (t, level, ex, reason) in failures {
            cells.entry((t.clone(), *level)).or_default().1.push((*ex, reason.clone()));
        }
        let cells = cells
            .into_iter()
            .map(|((topic_ref, level), (completed, failures))| {
                let target = exemplars_per_cell.unwrap_or(completed);
                let status = if completed >= target && target > 0 {
                    CellStatus::Complete
                } else if !failures.is_empty() {
                    CellStatus::Failed
                } else if completed == 0 {
                    CellStatus::Pending
                } else {
                    CellStatus::Partial
                };
                CellState {
                    topic_ref,
                    level,
                    target,
                    completed,
                    failures,
                    status,
                }
            })
            .collect();
        let mut domain_counts = BTreeMap::new();
        let mut grade_band_counts = BTreeMap::new();
        for a in &artifacts {
            *domain_counts.entry(a.domain.to_string()).or_insert(0) += 1;
            *grade_band_counts.entry(a.grade_band.label().to_string()).or_insert(0) += 1;
        }
        Self {
            topics: topics.into_iter().collect(),
            exemplars_per_cell,
            artifacts,
            cells,
            domain_counts,
            grade_band_counts,
            updated_at: Utc::now(),
        }
    }

    pub fn path(root: &Path) -> PathBuf {
        root.join(MANIFEST_FILE)
    }

    pub fn load(root: &Path) -> Result<Self, CorpusError> {
        Ok(read_document(&Self::path(root), "corpus_manifest")?)
    }

    pub fn save(&self, root: &Path) -> Result<(), CorpusError> {
        Ok(write_document(&Self::path(root), "corpus_manifest", self)?)
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.artifacts.iter().find(|a| a.id == id)
    }

    pub fn cell(&self, topic: &str, level: PerformanceLevel) -> Option<&CellState> {
        self.cells.iter().find(|c| c.topic_ref == topic && c.level == level)
    }
}

/// Rebuilds the manifest by scanning the artifact directories. Journal
/// failures count only while the same exemplar has no artifact on disk.
pub fn reindex(root: &Path, exemplars_per_cell: Option<usize>) -> Result<CorpusManifest, CorpusError> {
    let store = ArtifactStore::new(root);
    let mut entries = Vec::new();
    for dir in store.artifact_dirs()? {
        let meta = ArtifactStore::read_meta(&dir)?;
        entries.push(ManifestEntry::from_artifact(&meta.artifact));
    }
    let done: BTreeSet<(String, PerformanceLevel, usize)> = entries
        .iter()
        .map(|e| (e.topic_ref.clone(), e.level, e.exemplar))
        .collect();
    let mut latest: BTreeMap<(String, PerformanceLevel, usize), String> = BTreeMap::new();
    for ev in read_journal(root)? {
        if let JournalEvent::Failed {
            topic_ref,
            level,
            exemplar,
            reason,
            ..
        } = ev
        {
            latest.insert((topic_ref, level, exemplar), reason);
        }
    }
    let failures: Vec<_> = latest
        .into_iter()
        .filter(|(k, _)| !done.contains(k))
        .map(|((t, l, e), r)| (t, l, e, r))
        .collect();
    Ok(CorpusManifest::from_parts(entries, &failures, exemplars_per_cell))
}
