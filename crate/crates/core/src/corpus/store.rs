//! Content-addressed blobs and per-artifact directories with checksums.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Artifact;
use crate::conceptmap::ConceptMap;
use crate::digest::sha256_hex;
use crate::docs::{from_document, to_document, DocError};
use crate::synthesis::{AlignmentExplanation, AlignmentReport, ImagePromptSpec};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: checksum mismatch (expected {expected}, found {found})")]
    Checksum {
        path: String,
        expected: String,
        found: String,
    },
    #[error("artifact {0} not found")]
    NotFound(String),
    #[error(transparent)]
    Doc(#[from] DocError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes via a sibling temp file and rename so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension(format!(
        "tmp-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Image bytes stored once under `blobs/<first two hex>/<sha256>.png`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

impl BlobStore {
    /// `root` is the corpus root; blobs live in its `blobs/` directory.
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, sha: &str) -> PathBuf {
        let prefix = sha.get(..2).unwrap_or("xx");
        self.root.join("blobs").join(prefix).join(format!("{sha}.png"))
    }

    pub fn put(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let sha = sha256_hex(bytes);
        let path = self.path(&sha);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(sha)
    }

    /// Reads a blob and verifies it still hashes to its name.
    pub fn get(&self, sha: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path(sha);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let found = sha256_hex(&bytes);
        if found != sha {
            return Err(StoreError::Checksum {
                path: path.display().to_string(),
                expected: sha.to_string(),
                found,
            });
        }
        Ok(bytes)
    }
}

pub const NARRATIVE_FILE: &str = "narrative.txt";
pub const PROMPT_FILE: &str = "prompt.json";
pub const IMAGE_FILE: &str = "image.png";
pub const CMAP_FILE: &str = "cmap.json";
pub const ALIGNMENT_FILE: &str = "alignment.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct AlignmentDoc {
    pub explanation: AlignmentExplanation,
    pub report: AlignmentReport,
}

/// `meta.json`: everything not in the sibling files, plus their checksums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct MetaDoc {
    #[serde(flatten)]
    pub artifact: Artifact,
    pub checksums: BTreeMap<String, String>,
}

/// Per-artifact directories under `corpus/<topic>/L<level>/<id>/`.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
    blobs: BlobStore,
}

impl ArtifactStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        Self {
            blobs: BlobStore::new(root.clone()),
            root,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn relative_dir(a: &Artifact) -> PathBuf {
        PathBuf::from("corpus")
            .join(&a.topic_ref)
            .join(format!("L{}", a.level.value()))
            .join(&a.id)
    }

    /// Writes the artifact directory. The image must already be in the blob
    /// store; it is copied next to the other files as `image.png`.
    pub fn persist(&self, a: &Artifact) -> Result<PathBuf, StoreError> {
        let rel = Self::relative_dir(a);
        let dir = self.root.join(&rel);
        let image = self.blobs.get(&a.image.sha256)?;
        let mut files: Vec<(&str, Vec<u8>)> = vec![
            (NARRATIVE_FILE, a.unified.narrative.text.clone().into_bytes()),
            (PROMPT_FILE, to_document("image_prompt", &a.unified.prompt).into_bytes()),
            (CMAP_FILE, to_document("concept_map", &a.cmap).into_bytes()),
            (
                ALIGNMENT_FILE,
                to_document(
                    "alignment",
                    &AlignmentDoc {
                        explanation: a.unified.alignment.clone(),
                        report: a.alignment.clone(),
                    },
                )
                .into_bytes(),
            ),
            (IMAGE_FILE, image),
        ];
        let checksums = files.iter().map(|(n, b)| (n.to_string(), sha256_hex(b))).collect();
        let meta = MetaDoc {
            artifact: a.clone(),
            checksums,
        };
        files.push((META_FILE, to_document("artifact_meta", &meta).into_bytes()));
        // meta last, so a directory with a meta file is complete
        for (name, bytes) in &files {
            write_atomic(&dir.join(name), bytes)?;
        }
        Ok(rel)
    }

    pub(crate) fn read_meta(dir: &Path) -> Result<MetaDoc, StoreError> {
        let path = dir.join(META_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(from_document("artifact_meta", &text, &path.display().to_string())?)
    }

    /// Loads and checksum-verifies the artifact in `dir`.
    pub fn load_dir(&self, dir: &Path) -> Result<Artifact, StoreError> {
        let meta = Self::read_meta(dir)?;
        for (name, expected) in &meta.checksums {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let found = sha256_hex(&bytes);
            if &found != expected {
                return Err(StoreError::Checksum {
                    path: path.display().to_string(),
                    expected: expected.clone(),
                    found,
                });
            }
        }
        let mut a = meta.artifact;
        // the sibling files are authoritative for the parts they hold
        let prompt_path = dir.join(PROMPT_FILE);
        let text = fs::read_to_string(&prompt_path).map_err(io_err(&prompt_path))?;
        a.unified.prompt = from_document::<ImagePromptSpec>("image_prompt", &text, &prompt_path.display().to_string())?;
        let cmap_path = dir.join(CMAP_FILE);
        let text = fs::read_to_string(&cmap_path).map_err(io_err(&cmap_path))?;
        a.cmap = from_document::<ConceptMap>("concept_map", &text, &cmap_path.display().to_string())?;
        let narrative_path = dir.join(NARRATIVE_FILE);
        a.unified.narrative.text = fs::read_to_string(&narrative_path).map_err(io_err(&narrative_path))?;
        Ok(a)
    }

    /// Directories of every persisted artifact (those with a meta file).
    pub fn artifact_dirs(&self) -> Result<Vec<PathBuf>, StoreError> {
        let mut out = Vec::new();
        let corpus = self.corpus_dir();
        if !corpus.exists() {
            return Ok(out);
        }
        for topic in read_dirs(&corpus)? {
            for level in read_dirs(&topic)? {
                for art in read_dirs(&level)? {
                    if art.join(META_FILE).exists() {
                        out.push(art);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn find(&self, id: &str) -> Result<PathBuf, StoreError> {
        self.artifact_dirs()?
            .into_iter()
            .find(|d| d.file_name().is_some_and(|n| n == id))
            .ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    pub fn load(&self, id: &str) -> Result<Artifact, StoreError> {
        let dir = self.find(id)?;
        self.load_dir(&dir)
    }

    /// Image bytes of an artifact, verified against its recorded hash.
    pub fn image(&self, a: &Artifact) -> Result<Vec<u8>, StoreError> {
        self.blobs.get(&a.image.sha256)
    }
}

fn read_dirs(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.file_type().map_err(io_err(dir))?.is_dir() {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}
