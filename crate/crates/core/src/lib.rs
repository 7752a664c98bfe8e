//! Simulation of curriculum-aligned student science drawings.
//!
//! The pipeline turns a performance expectation into evidence statements,
//! builds per-level capability profiles, and generates coherent triplets
//! (drawing prompt and image, first-person narrative, diagnostic concept map)
//! conditioned on those profiles. Corpus construction, rater sampling,
//! consistency metrics, and evaluation aggregation sit on top.
//!
//! All numeric metrics are generic over [`Scalar`]; the `*F64` aliases below
//! are what the CLI and service use.

pub mod conceptmap;
pub mod corpus;
pub mod digest;
pub mod docs;
pub mod metrics;
pub mod profiles;
pub mod providers;
pub mod scalar;
pub mod standards;
pub mod synthesis;

pub use scalar::Scalar;

/// Version recorded in artifact provenance.
pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Schema version stamped on every persisted document.
pub const SCHEMA_VERSION: u32 = 1;

pub type ConsistencyScoresF64 = metrics::ConsistencyScores<f64>;
pub type ConsistencyScoresF32 = metrics::ConsistencyScores<f32>;
pub type ConsistencyReportF64 = metrics::ConsistencyReport<f64>;
pub type ComplexityScoreF64 = metrics::ComplexityScore<f64>;
pub type EdgeConfigF64 = metrics::EdgeConfig<f64>;
pub type AblationReportF64 = metrics::AblationReport<f64>;
pub type TernaryDistributionF64 = metrics::TernaryDistribution<f64>;
pub type LikertDistributionF64 = metrics::LikertDistribution<f64>;
pub type EvaluationSummaryF64 = metrics::EvaluationSummary<f64>;
