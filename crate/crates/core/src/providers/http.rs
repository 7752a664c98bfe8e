//! Hosted-service clients (OpenAI-compatible wire formats).

use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use reqwest::blocking::{Client, Response};
use serde_json::{json, Value};

use super::policy::{CallLog, CallPolicy, TokenBucket};
use super::templates::SYSTEM_PROMPT;
use super::{EmbedInput, Embedder, GenerationProvider, ImageProvider, ProviderConfig, ProviderError, ProviderKind,
    StructuredRequest};
use crate::digest::sha256_hex;

struct HttpCore {
    cfg: ProviderConfig,
    client: Client,
    policy: CallPolicy,
    credential: Option<String>,
}

impl HttpCore {
    fn new(cfg: ProviderConfig, kind: ProviderKind, log: Option<Arc<CallLog>>) -> Result<Self, ProviderError> {
        cfg.validate(kind)?;
        let credential = cfg.credential()?;
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        let policy = CallPolicy {
            max_retries: cfg.max_retries,
            limiter: cfg.rate_limit_per_minute.map(|r| Arc::new(TokenBucket::per_minute(r))),
            log,
            ..CallPolicy::default()
        };
        Ok(Self {
            cfg,
            client,
            policy,
            credential,
        })
    }

    fn post(&self, body: &Value) -> Result<Value, ProviderError> {
        let mut req = self.client.post(&self.cfg.endpoint).json(body);
        if let Some(key) = &self.credential {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout(self.cfg.timeout_secs)
            } else {
                ProviderError::Unavailable(e.to_string())
            }
        })?;
        classify(resp)
    }
}

fn classify(resp: Response) -> Result<Value, ProviderError> {
    let status = resp.status().as_u16();
    let retry_after = resp
        .headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<f64>().ok());
    let text = resp.text().map_err(|e| ProviderError::Unavailable(e.to_string()))?;
    match status {
        200..=299 => serde_json::from_str(&text)
            .map_err(|e| ProviderError::Unavailable(format!("response body is not JSON: {e}"))),
        429 => Err(ProviderError::RateLimited {
            retry_after_secs: retry_after,
        }),
        400 | 403 if text.contains("content_policy") || text.contains("safety") => {
            Err(ProviderError::ContentRejected(text))
        }
        _ => Err(ProviderError::Http { status, message: text }),
    }
}

/// Chat-completions client returning the model's JSON object.
pub struct HttpGenerator {
    core: HttpCore,
}

impl HttpGenerator {
    pub fn new(cfg: ProviderConfig, log: Option<Arc<CallLog>>) -> Result<Self, ProviderError> {
        Ok(Self {
            core: HttpCore::new(cfg, ProviderKind::Generation, log)?,
        })
    }
}

impl GenerationProvider for HttpGenerator {
    fn id(&self) -> String {
        self.core.cfg.provider_id()
    }

    fn complete(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        let prompt = req.render();
        let mut body = json!({
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
            "response_format": {"type": "json_object"},
        });
        if let Some(m) = &self.core.cfg.model {
            body["model"] = json!(m);
        }
        if let Some(s) = req.seed {
            body["seed"] = json!(s);
        }
        let hash = sha256_hex(prompt.as_bytes());
        let raw = self
            .core
            .policy
            .run(&self.id(), &req.template_id.to_string(), &hash, || self.core.post(&body))?;
        let content = raw
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Unavailable("response has no message content".into()))?;
        // Malformed JSON is handed to the repair loop as a non-object value.
        Ok(serde_json::from_str(content).unwrap_or(Value::String(content.to_string())))
    }
}

/// Images API client; expects `data[0].b64_json` in the response.
pub struct HttpImageProvider {
    core: HttpCore,
}

impl HttpImageProvider {
    pub fn new(cfg: ProviderConfig, log: Option<Arc<CallLog>>) -> Result<Self, ProviderError> {
        Ok(Self {
            core: HttpCore::new(cfg, ProviderKind::Image, log)?,
        })
    }
}

impl ImageProvider for HttpImageProvider {
    fn id(&self) -> String {
        self.core.cfg.provider_id()
    }

    fn generate_image(&self, prompt: &str, seed: u64) -> Result<Vec<u8>, ProviderError> {
        let mut body = json!({
            "prompt": prompt,
            "n": 1,
            "size": self.core.cfg.image_size.clone().unwrap_or_else(|| "1024x1024".into()),
            "user": format!("seed-{seed}"),
        });
        if let Some(m) = &self.core.cfg.model {
            body["model"] = json!(m);
        }
        let hash = sha256_hex(prompt.as_bytes());
        let raw = self.core.policy.run(&self.id(), "image", &hash, || self.core.post(&body))?;
        let b64 = raw
            .pointer("/data/0/b64_json")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Unavailable("image response has no data[0].b64_json".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(b64)
            .map_err(|e| ProviderError::Unavailable(format!("image payload is not base64: {e}")))?;
        image::load_from_memory(&bytes)
            .map_err(|e| ProviderError::Unavailable(format!("image payload is not decodable: {e}")))?;
        Ok(bytes)
    }
}

/// Embeddings client. Text is sent as `{"input": text}`; images as
/// `{"input": {"image_base64": ...}}`. The response is `data[0].embedding`.
pub struct HttpEmbedder {
    core: HttpCore,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: ProviderConfig, log: Option<Arc<CallLog>>) -> Result<Self, ProviderError> {
        let dimension = cfg
            .dimension
            .ok_or_else(|| ProviderError::Config("embedding provider needs `dimension`".into()))?;
        Ok(Self {
            core: HttpCore::new(cfg, ProviderKind::Embedding, log)?,
            dimension,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        self.core.cfg.provider_id()
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Vec<f32>, ProviderError> {
        let (payload, hash) = match input {
            EmbedInput::Text(t) => (json!(t), sha256_hex(t.as_bytes())),
            EmbedInput::Image(b) => (
                json!({"image_base64": base64::engine::general_purpose::STANDARD.encode(b)}),
                sha256_hex(b),
            ),
        };
        let mut body = json!({ "input": payload });
        if let Some(m) = &self.core.cfg.model {
            body["model"] = json!(m);
        }
        let raw = self.core.policy.run(&self.id(), "embed", &hash, || self.core.post(&body))?;
        let arr = raw
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Unavailable("embedding response has no data[0].embedding".into()))?;
        let v: Vec<f32> = arr.iter().filter_map(Value::as_f64).map(|x| x as f32).collect();
        Ok(super::offline::normalize(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unreachable_endpoint_is_retryable_and_bounded() {
        let mut cfg = ProviderConfig::offline(ProviderKind::Generation);
        // port 9 (discard) on localhost refuses connections in the sandbox
        cfg.endpoint = "http://127.0.0.1:9/v1/chat/completions".into();
        cfg.max_retries = 1;
        cfg.timeout_secs = 2.0;
        let log = Arc::new(CallLog::in_memory());
        let mut gen = HttpGenerator::new(cfg, Some(log.clone())).unwrap();
        gen.core.policy.base_delay = Duration::from_millis(1);
        let vars = super::super::TemplateId::Alignment
            .placeholders()
            .into_iter()
            .map(|p| (p, String::new()))
            .collect();
        let req = StructuredRequest::new(super::super::TemplateId::Alignment, vars, None).unwrap();
        let err = gen.complete(&req).unwrap_err();
        assert!(matches!(err, ProviderError::RetriesExhausted { attempts: 2, .. }), "{err:?}");
        assert_eq!(log.records().len(), 2);
        assert!(log.records().iter().all(|r| r.prompt_hash.len() == 64));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut cfg = ProviderConfig::offline(ProviderKind::Image);
        cfg.endpoint = "http://127.0.0.1:9/".into();
        assert!(HttpGenerator::new(cfg, None).is_err());
    }
}
