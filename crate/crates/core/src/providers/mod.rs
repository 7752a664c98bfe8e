//! Uniform interfaces to generation, image, and embedding services.
//!
//! Every pipeline stage talks to a [`GenerationProvider`], [`ImageProvider`],
//! or [`Embedder`] trait object. The offline implementations are pure
//! functions of `(request, seed)` and back every test; the HTTP
//! implementations wrap hosted services behind the same traits.

mod config;
mod http;
pub mod offline;
mod policy;
pub mod scripted;
pub mod templates;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use config::{ProviderConfig, ProviderKind, ProvidersFile};
pub use http::{HttpEmbedder, HttpGenerator, HttpImageProvider};
pub use offline::{OfflineEmbedder, OfflineGenerator, OfflineRenderer};
pub use policy::{CallLog, CallPolicy, CallRecord, TokenBucket};
pub use templates::{SchemaId, TemplateId};

use crate::digest::sha256_hex;
use crate::synthesis::StyleTable;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ProviderError {
    #[error("request timed out after {0:.1}s")]
    Timeout(f64),
    #[error("rate limited by provider")]
    RateLimited { retry_after_secs: Option<f64> },
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("content rejected by provider: {0}")]
    ContentRejected(String),
    #[error("provider returned HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("response for schema `{schema}` rejected after {attempts} attempt(s): {message}")]
    SchemaViolation {
        schema: SchemaId,
        attempts: usize,
        message: String,
    },
    #[error("template `{template}` has unbound placeholder(s): {missing:?}")]
    UnboundPlaceholders {
        template: TemplateId,
        missing: Vec<String>,
    },
    #[error("gave up after {attempts} attempt(s): {last}")]
    RetriesExhausted { attempts: u32, last: Box<ProviderError> },
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl ProviderError {
    /// Transient failures worth retrying with backoff.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Timeout(_) | ProviderError::RateLimited { .. } | ProviderError::Unavailable(_)
        ) || matches!(self, ProviderError::Http { status, .. } if *status >= 500)
    }
}

/// A rendered-template request for a structured (JSON) response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredRequest {
    pub template_id: TemplateId,
    pub variables: BTreeMap<String, String>,
    pub expected_schema: SchemaId,
    pub seed: Option<u64>,
}

/// Variable carrying the validation error of a rejected attempt.
pub const REPAIR_FEEDBACK_VAR: &str = "repair_feedback";

impl StructuredRequest {
    pub fn new(
        template_id: TemplateId,
        variables: BTreeMap<String, String>,
        seed: Option<u64>,
    ) -> Result<Self, ProviderError> {
        let missing: Vec<String> = template_id
            .placeholders()
            .into_iter()
            .filter(|p| !variables.contains_key(p))
            .collect();
        if !missing.is_empty() {
            return Err(ProviderError::UnboundPlaceholders {
                template: template_id,
                missing,
            });
        }
        Ok(Self {
            template_id,
            expected_schema: template_id.schema(),
            variables,
            seed,
        })
    }

    pub fn var(&self, name: &str) -> Option<&str> {
        self.variables.get(name).map(String::as_str)
    }

    /// Prompt text sent to hosted models; includes repair feedback if present.
    pub fn render(&self) -> String {
        let mut text = self.template_id.render(&self.variables);
        if let Some(fb) = self.var(REPAIR_FEEDBACK_VAR) {
            text.push_str("\n\nYour previous answer was rejected by the validator:\n");
            text.push_str(fb);
            text.push_str("\nReturn a corrected JSON object.");
        }
        text
    }

    pub fn prompt_hash(&self) -> String {
        sha256_hex(self.render().as_bytes())
    }

    pub fn with_feedback(mut self, feedback: impl Into<String>) -> Self {
        self.variables.insert(REPAIR_FEEDBACK_VAR.to_string(), feedback.into());
        self
    }
}

pub trait GenerationProvider: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, req: &StructuredRequest) -> Result<Value, ProviderError>;
}

pub trait ImageProvider: Send + Sync {
    fn id(&self) -> String;
    /// Returns encoded (PNG) image bytes.
    fn generate_image(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, ProviderError>;
}

#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    Image(&'a [u8]),
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    /// Unit-normalized embedding of `input`.
    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, ProviderError>;
}

/// Requests a structured document, re-asking with the validation error
/// appended until it deserializes into `T` and passes `check`, or the repair
/// budget is spent.
pub fn generate_structured<T, F>(
    gen: &dyn GenerationProvider,
    req: StructuredRequest,
    max_repairs: usize,
    check: F,
) -> Result<T, ProviderError>
where
    T: DeserializeOwned,
    F: Fn(&T) -> Result<(), String>,
{
    let schema = req.expected_schema;
    let mut req = req;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let raw = gen.complete(&req)?;
        let outcome = serde_json::from_value::<T>(raw)
            .map_err(|e| format!("response does not match schema `{schema}`: {e}"))
            .and_then(|doc| check(&doc).map(|_| doc));
        match outcome {
            Ok(doc) => return Ok(doc),
            Err(message) if attempts > max_repairs => {
                return Err(ProviderError::SchemaViolation {
                    schema,
                    attempts,
                    message,
                })
            }
            Err(message) => {
                log::debug!("repairing {schema} response (attempt {attempts}): {message}");
                req = req.with_feedback(message);
            }
        }
    }
}

/// Embeds text or an image, checking the dimension and unit-norm contract.
pub fn embed(embedder: &dyn Embedder, input: EmbedInput<'_>) -> Result<Vec<f32>, ProviderError> {
    let v = embedder.embed(input)?;
    if v.len() != embedder.dimension() {
        return Err(ProviderError::Unavailable(format!(
            "embedder returned dimension {} (configured {})",
            v.len(),
            embedder.dimension()
        )));
    }
    Ok(v)
}

/// Generates an image, rejecting empty prompts before any provider call.
pub fn generate_image(img: &dyn ImageProvider, prompt: &str, seed: u64) -> Result<Vec<u8>, ProviderError> {
    if prompt.trim().is_empty() {
        return Err(ProviderError::Precondition("image prompt is empty".into()));
    }
    img.generate_image(prompt, seed)
}

/// The three providers plus the grade style table, shared by every stage.
#[derive(Clone)]
pub struct Providers {
    pub generation: Arc<dyn GenerationProvider>,
    pub image: Arc<dyn ImageProvider>,
    pub embedding: Arc<dyn Embedder>,
    pub style: StyleTable,
}

impl Providers {
    /// Fully deterministic offline suite.
    pub fn offline() -> Self {
        Self {
            generation: Arc::new(OfflineGenerator::new()),
            image: Arc::new(OfflineRenderer::default()),
            embedding: Arc::new(OfflineEmbedder::default()),
            style: StyleTable::default(),
        }
    }

    pub fn from_config(file: &ProvidersFile) -> Result<Self, ProviderError> {
        let log = match &file.call_log {
            Some(path) => Some(Arc::new(CallLog::with_file(path).map_err(|e| {
                ProviderError::Config(format!("cannot open call log {}: {e}", path.display()))
            })?)),
            None => None,
        };
        let generation: Arc<dyn GenerationProvider> = if file.generation.is_offline() {
            Arc::new(OfflineGenerator::new())
        } else {
            Arc::new(HttpGenerator::new(file.generation.clone(), log.clone())?)
        };
        let image: Arc<dyn ImageProvider> = if file.image.is_offline() {
            Arc::new(OfflineRenderer::default())
        } else {
            Arc::new(HttpImageProvider::new(file.image.clone(), log.clone())?)
        };
        let embedding: Arc<dyn Embedder> = if file.embedding.is_offline() {
            Arc::new(OfflineEmbedder::new(file.embedding.dimension.unwrap_or(512)))
        } else {
            Arc::new(HttpEmbedder::new(file.embedding.clone(), log)?)
        };
        Ok(Self {
            generation,
            image,
            embedding,
            style: file.style.clone().unwrap_or_default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::scripted::ScriptedGenerator;
    use super::*;
    use serde_json::json;

    #[derive(Debug, Deserialize)]
    struct Doc {
        name: String,
    }

    fn req() -> StructuredRequest {
        let mut vars = BTreeMap::new();
        for p in TemplateId::Decompose.placeholders() {
            vars.insert(p, "x".to_string());
        }
        StructuredRequest::new(TemplateId::Decompose, vars, Some(1)).unwrap()
    }

    #[test]
    fn unbound_placeholder_is_rejected() {
        let err = StructuredRequest::new(TemplateId::Decompose, BTreeMap::new(), None).unwrap_err();
        match err {
            ProviderError::UnboundPlaceholders { missing, .. } => assert!(missing.contains(&"code".to_string())),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_field_gets_one_repair_then_fails() {
        let gen = ScriptedGenerator::new(vec![Ok(json!({"nom": 1})), Ok(json!({"nom": 2})), Ok(json!({"name": "late"}))]);
        let err = generate_structured::<Doc, _>(&gen, req(), 1, |_| Ok(())).unwrap_err();
        match err {
            ProviderError::SchemaViolation { attempts, message, .. } => {
                assert_eq!(attempts, 2);
                assert!(message.contains("name"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let seen = gen.requests();
        assert_eq!(seen.len(), 2);
        assert!(seen[0].var(REPAIR_FEEDBACK_VAR).is_none());
        assert!(seen[1].var(REPAIR_FEEDBACK_VAR).unwrap().contains("missing field"));
        assert!(seen[1].render().contains("rejected by the validator"));
    }

    #[test]
    fn repair_succeeds_within_budget() {
        let gen = ScriptedGenerator::new(vec![Ok(json!({"name": ""})), Ok(json!({"name": "ok"}))]);
        let doc: Doc = generate_structured(&gen, req(), 1, |d: &Doc| {
            if d.name.is_empty() {
                Err("name is empty".into())
            } else {
                Ok(())
            }
        })
        .unwrap();
        assert_eq!(doc.name, "ok");
    }

    #[test]
    fn empty_image_prompt_is_a_precondition_error() {
        let err = generate_image(&OfflineRenderer::default(), "  ", 7).unwrap_err();
        assert!(matches!(err, ProviderError::Precondition(_)));
    }
}
