//! Metric inputs drawn from a persisted corpus.

use super::manifest::ManifestEntry;
use super::store::ArtifactStore;
use super::CorpusError;
use crate::metrics::{
    edge_density, pairwise_consistency, ConsistencyRow, DensitySample, EdgeConfig, MetricsError,
};
use crate::providers::Embedder;
use crate::Scalar;

/// Edge density of every listed artifact's drawing.
pub fn density_samples<T: Scalar>(
    store: &ArtifactStore,
    entries: &[ManifestEntry],
    cfg: &EdgeConfig<T>,
) -> Result<Vec<DensitySample<T>>, CorpusError> {
    entries
        .iter()
        .map(|e| {
            let a = store.load_dir(&store.root().join(&e.path))?;
            let bytes = store.image(&a)?;
            let score = edge_density(&bytes, cfg).map_err(|err| metric_error(&e.id, err))?;
            Ok(DensitySample {
                topic: e.topic_ref.clone(),
                level: e.level,
                edge_density: score.edge_density,
            })
        })
        .collect()
}

/// Pairwise consistency of every listed artifact.
pub fn consistency_rows<T: Scalar>(
    store: &ArtifactStore,
    entries: &[ManifestEntry],
    embedder: &dyn Embedder,
) -> Result<Vec<ConsistencyRow<T>>, CorpusError> {
    entries
        .iter()
        .map(|e| {
            let a = store.load_dir(&store.root().join(&e.path))?;
            let bytes = store.image(&a)?;
            let scores = pairwise_consistency(&a.unified.narrative.text, &bytes, &a.cmap, embedder)
                .map_err(|err| metric_error(&e.id, err))?;
            Ok(ConsistencyRow {
                artifact_id: a.id,
                level: a.level,
                grade_band: a.grade_band,
                scores,
            })
        })
        .collect()
}

fn metric_error(id: &str, err: MetricsError) -> CorpusError {
    CorpusError::Metrics {
        artifact: id.to_string(),
        source: err,
    }
}
