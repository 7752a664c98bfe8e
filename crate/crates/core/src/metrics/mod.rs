//! Cross-modal consistency, edge-density complexity with its ablation
//! statistic, and aggregation of rater responses. Every numeric type is
//! generic over [`Scalar`](crate::Scalar).

mod ablation;
mod consistency;
mod edges;
mod evaluation;
pub mod tables;

pub use ablation::{ablation_report, level_complexity_sd, AblationReport, Condition, DensitySample};
pub use consistency::{
    consistency_report, cosine, pairwise_consistency, ConsistencyGroup, ConsistencyReport, ConsistencyRow,
    ConsistencyScores,
};
pub use edges::{canny, edge_density, edge_density_gray, luminance, to_gray, ComplexityScore, EdgeConfig};
pub use evaluation::{
    aggregate_likert, aggregate_ternary, summarize, EvaluationRecord, EvaluationSummary, FieldError,
    LikertDistribution, LikertQuestion, Ternary, TernaryDistribution, TernaryQuestion,
};

use crate::providers::ProviderError;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("nothing to aggregate: {0}")]
    Empty(String),
    #[error("expected exactly {expected} values, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("image is not decodable: {0}")]
    Undecodable(String),
    #[error("topic {topic} has no samples at level {level}")]
    MissingLevel { topic: String, level: u8 },
    #[error(transparent)]
    Provider(#[from] ProviderError),
}
