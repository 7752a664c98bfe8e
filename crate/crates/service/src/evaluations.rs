//! Append-only evaluation log with a derived (rater, artifact) index.
//!
//! Every submission is appended as one JSON line and never rewritten. A
//! resubmission for the same rater and artifact supersedes the earlier one
//! in the index, while the log keeps both as the audit trail.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use drawsim_core::metrics::EvaluationRecord;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredEvaluation {
    pub stored_id: String,
    pub seq: u64,
    pub received_at: DateTime<Utc>,
    /// Id of the submission this one replaced, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replaces: Option<String>,
    pub record: EvaluationRecord,
}

type Key = (String, String);

#[derive(Default)]
struct Index {
    history: BTreeMap<Key, Vec<StoredEvaluation>>,
    next_seq: u64,
}

pub struct EvaluationStore {
    path: PathBuf,
    index: RwLock<Index>,
    /// Serializes appends so sequence numbers and the file agree.
    writer: Mutex<File>,
}

impl EvaluationStore {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut index = Index::default();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<StoredEvaluation>(&line) {
                    Ok(e) => {
                        index.next_seq = index.next_seq.max(e.seq + 1);
                        let key = (e.record.rater_id.clone(), e.record.artifact_id.clone());
                        index.history.entry(key).or_default().push(e);
                    }
                    Err(err) => log::warn!("{}:{}: skipping unreadable evaluation: {err}", path.display(), n + 1),
                }
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            index: RwLock::new(index),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends `record`; the caller has already validated it.
    pub fn submit(&self, record: EvaluationRecord) -> std::io::Result<StoredEvaluation> {
        let mut file = self.writer.lock();
        let key = (record.rater_id.clone(), record.artifact_id.clone());
        let (seq, replaces) = {
            let idx = self.index.read();
            let prior = idx.history.get(&key).and_then(|h| h.last()).map(|e| e.stored_id.clone());
            (idx.next_seq, prior)
        };
        let stored = StoredEvaluation {
            stored_id: format!("ev-{seq:06}"),
            seq,
            received_at: Utc::now(),
            replaces,
            record,
        };
        let mut line = serde_json::to_string(&stored).expect("evaluation serializes");
        line.push('\n');
        file.write_all(line.as_bytes())?;
        file.flush()?;
        let mut idx = self.index.write();
        idx.next_seq = seq + 1;
        idx.history.entry(key).or_default().push(stored.clone());
        Ok(stored)
    }

    /// One record per (rater, artifact): the latest submission.
    pub fn effective(&self) -> Vec<EvaluationRecord> {
        self.index
            .read()
            .history
            .values()
            .filter_map(|h| h.last().map(|e| e.record.clone()))
            .collect()
    }

    pub fn history(&self, rater: &str, artifact: &str) -> Vec<StoredEvaluation> {
        self.index
            .read()
            .history
            .get(&(rater.to_string(), artifact.to_string()))
            .cloned()
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use drawsim_core::metrics::Ternary;

    fn rec(artifact: &str, q7: u8) -> EvaluationRecord {
        EvaluationRecord {
            rater_id: "R1".into(),
            artifact_id: artifact.into(),
            q1: Ternary::Yes,
            q2: Ternary::Yes,
            q3: Ternary::Partially,
            q4: Ternary::No,
            q5: Ternary::Yes,
            q6: Ternary::Yes,
            q7,
            q8: 4,
            comments: String::new(),
        }
    }

    #[test]
    fn resubmission_replaces_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("evaluations.jsonl");
        let store = EvaluationStore::open(&path).unwrap();
        let first = store.submit(rec("a", 3)).unwrap();
        let second = store.submit(rec("a", 5)).unwrap();
        store.submit(rec("b", 2)).unwrap();
        assert_eq!(second.replaces.as_deref(), Some(first.stored_id.as_str()));
        assert_eq!(store.effective().len(), 2);
        drop(store);

        let reopened = EvaluationStore::open(&path).unwrap();
        assert_eq!(reopened.history("R1", "a").len(), 2);
        let eff = reopened.effective();
        assert_eq!(eff.iter().find(|r| r.artifact_id == "a").unwrap().q7, 5);
        assert_eq!(reopened.submit(rec("c", 1)).unwrap().seq, 3);
    }
}
