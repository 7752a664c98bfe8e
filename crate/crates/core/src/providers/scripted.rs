//! Scripted generation provider for exercising repair and failure paths.

use std::collections::VecDeque;

use parking_lot::Mutex;
use serde_json::Value;

use super::{GenerationProvider, ProviderError, StructuredRequest};

/// Replays queued responses in order and records every request it sees.
/// Once the queue is empty it delegates to `fallback`, if any.
pub struct ScriptedGenerator {
    queue: Mutex<VecDeque<Result<Value, ProviderError>>>,
    seen: Mutex<Vec<StructuredRequest>>,
    fallback: Option<Box<dyn GenerationProvider>>,
}

impl ScriptedGenerator {
    pub fn new(responses: Vec<Result<Value, ProviderError>>) -> Self {
        Self {
            queue: Mutex::new(responses.into()),
            seen: Mutex::new(Vec::new()),
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, fallback: impl GenerationProvider + 'static) -> Self {
        self.fallback = Some(Box::new(fallback));
        self
    }

    pub fn requests(&self) -> Vec<StructuredRequest> {
        self.seen.lock().clone()
    }
}

impl GenerationProvider for ScriptedGenerator {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, req: &StructuredRequest) -> Result<Value, ProviderError> {
        self.seen.lock().push(req.clone());
        if let Some(next) = self.queue.lock().pop_front() {
            return next;
        }
        match &self.fallback {
            Some(f) => f.complete(req),
            None => Err(ProviderError::Unavailable("script exhausted".into())),
        }
    }
}
