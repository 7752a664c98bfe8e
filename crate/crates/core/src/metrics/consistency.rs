use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::conceptmap::{flatten_for_embedding, ConceptMap};
use crate::profiles::PerformanceLevel;
use crate::providers::{embed, EmbedInput, Embedder};
use crate::scalar::{mean, Scalar};
use crate::standards::GradeBand;

/// Pairwise cosines between an artifact's narrative, drawing, and concept
/// map, with `overall` their plain mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScores<T> {
    pub text_draw: T,
    pub cmap_draw: T,
    pub text_cmap: T,
    pub overall: T,
}

impl<T: Scalar> ConsistencyScores<T> {
    pub fn new(text_draw: T, cmap_draw: T, text_cmap: T) -> Self {
        Self {
            text_draw,
            cmap_draw,
            text_cmap,
            overall: (text_draw + cmap_draw + text_cmap) / T::from_usize_lossy(3),
        }
    }

    /// Recomputes the mean the same way [`new`](Self::new) does and compares
    /// exactly.
    pub fn identity_holds(&self) -> bool {
        self.overall == (self.text_draw + self.cmap_draw + self.text_cmap) / T::from_usize_lossy(3)
    }
}

/// Cosine of two embedding vectors, accumulated in f64.
pub fn cosine<T: Scalar>(a: &[f32], b: &[f32]) -> T {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return T::zero();
    }
    T::from_f64_lossy((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Embeds the three components and scores them. The map is embedded as its
/// flattened label text.
pub fn pairwise_consistency<T: Scalar>(
    narrative: &str,
    image: &[u8],
    cmap: &ConceptMap,
    embedder: &dyn Embedder,
) -> Result<ConsistencyScores<T>, MetricsError> {
    let t = embed(embedder, EmbedInput::Text(narrative))?;
    let d = embed(embedder, EmbedInput::Image(image))?;
    let c = embed(embedder, EmbedInput::Text(&flatten_for_embedding(cmap)))?;
    Ok(ConsistencyScores::new(cosine(&t, &d), cosine(&c, &d), cosine(&t, &c)))
}

/// One scored artifact with the attributes reports group by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow<T> {
    pub artifact_id: String,
    pub level: PerformanceLevel,
    pub grade_band: GradeBand,
    pub scores: ConsistencyScores<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyGroup<T> {
    pub group: String,
    pub n: usize,
    pub means: ConsistencyScores<T>,
}

/// Column means overall, per grade band, and per level. Group means are
/// means of per-artifact scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport<T> {
    pub overall: ConsistencyGroup<T>,
    pub by_grade_band: Vec<ConsistencyGroup<T>>,
    pub by_level: Vec<ConsistencyGroup<T>>,
}

fn group<T: Scalar>(name: String, rows: &[&ConsistencyRow<T>]) -> ConsistencyGroup<T> {
    let col = |f: fn(&ConsistencyScores<T>) -> T| mean(&rows.iter().map(|r| f(&r.scores)).collect::<Vec<_>>());
    let td = col(|s| s.text_draw).unwrap_or_default();
    let cd = col(|s| s.cmap_draw).unwrap_or_default();
    let tc = col(|s| s.text_cmap).unwrap_or_default();
    let overall = col(|s| s.overall).unwrap_or_default();
    ConsistencyGroup {
        group: name,
        n: rows.len(),
        means: ConsistencyScores {
            text_draw: td,
            cmap_draw: cd,
            text_cmap: tc,
            overall,
        },
    }
}

pub fn consistency_report<T: Scalar>(rows: &[ConsistencyRow<T>]) -> Result<ConsistencyReport<T>, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty("consistency sample is empty".into()));
    }
    let all: Vec<&ConsistencyRow<T>> = rows.iter().collect();
    let mut by_band: BTreeMap<GradeBand, Vec<&ConsistencyRow<T>>> = BTreeMap::new();
    let mut by_level: BTreeMap<PerformanceLevel, Vec<&ConsistencyRow<T>>> = BTreeMap::new();
    for r in rows {
        by_band.entry(r.grade_band).or_default().push(r);
        by_level.entry(r.level).or_default().push(r);
    }
    for band in GradeBand::ALL {
        if !by_band.contains_key(&band) {
            log::warn!("consistency report: no artifacts in grade band {}", band.label());
        }
    }
    for level in PerformanceLevel::ALL {
        if !by_level.contains_key(&level) {
            log::warn!("consistency report: no artifacts at {level}");
        }
    }
    Ok(ConsistencyReport {
        overall: group("Overall".into(), &all),
        by_grade_band: by_band.iter().map(|(b, rs)| group(format!("Grades {}", b.label()), rs)).collect(),
        by_level: by_level.iter().map(|(l, rs)| group(l.name().to_string(), rs)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::round_to;

    #[test]
    fn table_overall_row() {
        let s = ConsistencyScores::new(0.356_f64, 0.606, 0.273);
        assert_eq!(round_to(s.overall, 3), 0.412);
        assert!(s.identity_holds());
    }

    #[test]
    fn identical_and_orthogonal_vectors() {
        let a = [1.0f32, 0.0, 0.0];
        let b = [0.0f32, 1.0, 0.0];
        let c = [0.0f32, 0.0, 1.0];
        let same = ConsistencyScores::<f64>::new(cosine(&a, &a), cosine(&a, &a), cosine(&a, &a));
        assert_eq!(same.overall, 1.0);
        let ortho = ConsistencyScores::<f64>::new(cosine(&a, &b), cosine(&b, &c), cosine(&a, &c));
        assert_eq!(ortho.overall, 0.0);
    }

    #[test]
    fn single_artifact_group_equals_its_scores() {
        let s = ConsistencyScores::new(0.5_f32, 0.25, 0.75);
        let rows = vec![ConsistencyRow {
            artifact_id: "a".into(),
            level: PerformanceLevel::Proficient,
            grade_band: GradeBand::G68,
            scores: s,
        }];
        let r = consistency_report(&rows).unwrap();
        assert_eq!(r.by_level[0].means, s);
        assert_eq!(r.by_grade_band[0].means, s);
        assert!(consistency_report::<f64>(&[]).is_err());
    }
}
