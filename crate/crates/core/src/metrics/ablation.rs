use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::profiles::PerformanceLevel;
use crate::scalar::{mean, population_sd, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    WithProfiles,
    WithoutProfiles,
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "with" | "with_profiles" | "with-profiles" => Some(Condition::WithProfiles),
            "without" | "without_profiles" | "without-profiles" => Some(Condition::WithoutProfiles),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::WithProfiles => "with_profiles",
            Condition::WithoutProfiles => "without_profiles",
        }
    }
}

/// Population standard deviation of the four per-level mean densities.
pub fn level_complexity_sd<T: Scalar>(cell_means: &[T]) -> Result<T, MetricsError> {
    if cell_means.len() != 4 {
        return Err(MetricsError::Arity {
            expected: 4,
            found: cell_means.len(),
        });
    }
    Ok(population_sd(cell_means).expect("non-empty"))
}

/// One image's edge density with the cell it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySample<T> {
    pub topic: String,
    pub level: PerformanceLevel,
    pub edge_density: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport<T> {
    pub condition: Condition,
    /// Per topic: mean edge density at L1..L4.
    pub level_means: BTreeMap<String, [T; 4]>,
    pub per_topic_sd: BTreeMap<String, T>,
    pub mean_sd: T,
}

/// Groups samples by (topic, level), averages each cell, and takes the SD
/// across the four level means of every topic. A topic missing a level is
/// an error naming it.
pub fn ablation_report<T: Scalar>(
    condition: Condition,
    samples: &[DensitySample<T>],
) -> Result<AblationReport<T>, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty("no density samples".into()));
    }
    let mut cells: BTreeMap<&str, [Vec<T>; 4]> = BTreeMap::new();
    for s in samples {
        cells.entry(s.topic.as_str()).or_default()[s.level.index()].push(s.edge_density);
    }
    let mut level_means = BTreeMap::new();
    let mut per_topic_sd = BTreeMap::new();
    for (topic, by_level) in cells {
        let mut means = [T::zero(); 4];
        for level in PerformanceLevel::ALL {
            means[level.index()] = mean(&by_level[level.index()]).ok_or_else(|| MetricsError::MissingLevel {
                topic: topic.to_string(),
                level: level.value(),
            })?;
        }
        per_topic_sd.insert(topic.to_string(), level_complexity_sd(&means)?);
        level_means.insert(topic.to_string(), means);
    }
    let sds: Vec<T> = per_topic_sd.values().copied().collect();
    Ok(AblationReport {
        condition,
        level_means,
        per_topic_sd,
        mean_sd: mean(&sds).expect("at least one topic"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_levels_have_zero_sd() {
        assert_eq!(level_complexity_sd(&[0.2_f64; 4]).unwrap(), 0.0);
    }

    #[test]
    fn sd_matches_direct_formula() {
        let v = [0.1_f64, 0.2, 0.3, 0.4];
        let m = (0.1 + 0.2 + 0.3 + 0.4) / 4.0;
        let direct = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0).sqrt();
        assert!((level_complexity_sd(&v).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn wrong_arity_rejected() {
        assert!(matches!(
            level_complexity_sd(&[0.1_f32, 0.2, 0.3]),
            Err(MetricsError::Arity { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn missing_level_names_topic() {
        let s = vec![DensitySample {
            topic: "3-LS1-1".into(),
            level: PerformanceLevel::Emergent,
            edge_density: 0.1_f64,
        }];
        match ablation_report(Condition::WithProfiles, &s).unwrap_err() {
            MetricsError::MissingLevel { topic, level } => assert_eq!((topic.as_str(), level), ("3-LS1-1", 2)),
            other => panic!("unexpected {other}"),
        }
    }
}
