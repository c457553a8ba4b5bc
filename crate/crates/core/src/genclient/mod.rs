//! Generative backends behind one interface: prompt rendering, retries with
//! exponential backoff, a content-addressed disk cache, and the operations
//! that turn completions into descriptor sets, hierarchies, caption variants
//! and video descriptions.

pub mod backend;
pub mod cache;
pub mod parse;
pub mod template;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

pub use backend::{
    build_backend, Backend, BackendConfig, BackendError, BackendKind, ChatHttpBackend,
    CompletionRequest, FixtureBackend, MockBackend,
};
pub use cache::{CacheKey, DiskCache};
pub use parse::{parse_attributes, parse_caption, parse_hierarchy};
pub use template::{render_prompt, PromptTemplate, TemplateId, TEMPLATE_VERSION};

use crate::types::{DescriptorSet, DomainError, HierarchyMap, Provenance};
use template::{CLASS_NAME, CLASS_NAMES, INPUT_CAPTION, VIDEO_ID};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum GenError {
    #[error("unbound placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("backend unavailable after {attempts} attempts: {last}")]
    BackendUnavailable { attempts: u32, last: String },
    #[error("backend rejected the request (status {status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("backend returned an empty response {attempts} times")]
    EmptyResponse { attempts: u32 },
    #[error("missing fixture: {0}")]
    MissingFixture(String),
    #[error("fixture file: {0}")]
    Fixture(String),
    #[error("class {class:?} assigned to both {first:?} and {second:?}")]
    DuplicateAssignment {
        class: String,
        first: String,
        second: String,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl GenError {
    pub(crate) fn from_backend(e: BackendError) -> Self {
        match e {
            BackendError::MissingFixture(id) => GenError::MissingFixture(id),
            BackendError::Unsupported(m) => GenError::InvalidInput(m),
            BackendError::Status { status, body } => GenError::Rejected {
                status,
                message: body,
            },
            other => GenError::BackendUnavailable {
                attempts: 1,
                last: other.to_string(),
            },
        }
    }

    /// Failures of the remote side, as opposed to bad input.
    pub fn is_backend_failure(&self) -> bool {
        matches!(
            self,
            GenError::BackendUnavailable { .. } | GenError::Rejected { .. } | GenError::EmptyResponse { .. }
        )
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClientStats {
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub backend_calls: u64,
}

/// A backend plus its configuration, cache and retry policy.
pub struct GenClient {
    backend: Box<dyn Backend>,
    config: BackendConfig,
    cache: Option<DiskCache>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
    calls: AtomicU64,
}

impl GenClient {
    pub fn new(backend: Box<dyn Backend>, config: BackendConfig, cache: Option<DiskCache>) -> Self {
        Self {
            backend,
            config,
            cache,
            locks: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            calls: AtomicU64::new(0),
        }
    }

    pub fn from_config(config: BackendConfig, cache: Option<DiskCache>) -> Result<Self, GenError> {
        let backend = build_backend(&config)?;
        Ok(Self::new(backend, config, cache))
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            cache_hits: self.hits.load(Ordering::Relaxed),
            cache_misses: self.misses.load(Ordering::Relaxed),
            backend_calls: self.calls.load(Ordering::Relaxed),
        }
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            backend: self.config.backend_id(),
            model: self.config.model_name.clone(),
            temperature: self.config.temperature,
            template_version: TEMPLATE_VERSION,
        }
    }

    fn request(
        &self,
        template: TemplateId,
        bindings: BTreeMap<String, String>,
        temperature: f64,
        sample_index: u32,
    ) -> Result<CompletionRequest, GenError> {
        let prompt = render_prompt(template, &bindings)?;
        Ok(CompletionRequest {
            template,
            template_version: TEMPLATE_VERSION,
            bindings,
            prompt,
            temperature,
            sample_index,
        })
    }

    fn key_lock(&self, digest: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("lock table poisoned");
        locks.entry(digest.to_string()).or_default().clone()
    }

    /// Cached, retried completion. Concurrent callers with the same key wait
    /// for the first one instead of issuing a second request.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GenError> {
        let key = CacheKey::new(self.config.kind, &self.config.model_name, request);
        let digest = key.digest();
        let lock = self.key_lock(&digest);
        let _guard = lock.lock().expect("key lock poisoned");
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit);
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let response = self.complete_with_retries(request)?;
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(&key, &response) {
                log::warn!("cache write failed for {digest}: {e}");
            }
        }
        Ok(response)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let base = self.config.backoff_ms.saturating_mul(1u64 << attempt.min(16));
        let jitter = if base > 0 {
            rand::thread_rng().gen_range(0..=base / 2)
        } else {
            0
        };
        Duration::from_millis(base + jitter).min(MAX_BACKOFF)
    }

    fn complete_with_retries(&self, request: &CompletionRequest) -> Result<String, GenError> {
        let attempts = self.config.max_retries.max(1);
        let mut last: Option<BackendError> = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(request) {
                Ok(text) if !text.trim().is_empty() => return Ok(text),
                Ok(_) => last = None,
                Err(e) if e.is_retryable() => {
                    log::debug!("attempt {} of {attempts} failed: {e}", attempt + 1);
                    last = Some(e);
                }
                Err(e) => return Err(GenError::from_backend(e)),
            }
        }
        Err(match last {
            None => GenError::EmptyResponse { attempts },
            Some(e) => GenError::BackendUnavailable {
                attempts,
                last: e.to_string(),
            },
        })
    }

    /// Queries attributes and description for one class. An empty answer
    /// leaves that descriptor absent rather than failing the class.
    pub fn generate_descriptor_set(&self, class_name: &str) -> Result<DescriptorSet, GenError> {
        let class_name = class_name.trim();
        if class_name.is_empty() {
            return Err(GenError::InvalidInput("class name must be nonempty".into()));
        }
        let bind = template::bindings([(CLASS_NAME, class_name)]);
        let temperature = self.config.temperature;

        let attributes = match self.complete(&self.request(TemplateId::Attributes, bind.clone(), temperature, 0)?) {
            Ok(r) => parse_attributes(&r),
            Err(GenError::EmptyResponse { .. }) => {
                log::warn!("no attributes for {class_name:?}");
                Vec::new()
            }
            Err(e) => return Err(e),
        };
        let description = match self.complete(&self.request(TemplateId::Description, bind, temperature, 0)?) {
            Ok(r) => Some(r.trim().to_string()),
            Err(GenError::EmptyResponse { .. }) => {
                log::warn!("no description for {class_name:?}");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(DescriptorSet {
            class_name: class_name.to_string(),
            attributes,
            description,
            parent_context: None,
            provenance: self.provenance(),
        })
    }

    /// Single completion of the class-grouping prompt; parse it with
    /// [`parse_hierarchy`].
    pub fn generate_hierarchy<S: AsRef<str>>(&self, classes: &[S]) -> Result<String, GenError> {
        if classes.is_empty() {
            return Err(GenError::InvalidInput("class list is empty".into()));
        }
        let names = classes.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ");
        let req = self.request(
            TemplateId::Hierarchy,
            template::bindings([(CLASS_NAMES, names.as_str())]),
            self.config.temperature,
            0,
        )?;
        self.complete(&req)
    }

    pub fn generate_parsed_hierarchy<S: AsRef<str>>(&self, classes: &[S]) -> Result<(String, HierarchyMap), GenError> {
        let raw = self.generate_hierarchy(classes)?;
        let map = parse_hierarchy(&raw, classes)?;
        Ok((raw, map))
    }

    /// Draws `n` distinct paraphrases of `caption`. Each draw uses its own
    /// sample index; if too few distinct answers come back the last one is
    /// repeated and `padded` is set.
    pub fn augment_caption(&self, caption: &str, n: usize) -> Result<AugmentedCaption, GenError> {
        let caption = caption.trim();
        if caption.is_empty() {
            return Err(GenError::InvalidInput("caption must be nonempty".into()));
        }
        let mut out: Vec<String> = Vec::with_capacity(n);
        let max_draws = n + self.config.max_retries as usize;
        let mut draw = 0;
        while out.len() < n && draw < max_draws {
            let req = self.request(
                TemplateId::CaptionAugment,
                template::bindings([(INPUT_CAPTION, caption)]),
                self.config.temperature,
                draw as u32,
            )?;
            draw += 1;
            let text = match self.complete(&req) {
                Ok(t) => t,
                Err(GenError::EmptyResponse { .. }) => continue,
                Err(e) => return Err(e),
            };
            if let Some(c) = parse_caption(&text) {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        if n > 0 && out.is_empty() {
            return Err(GenError::EmptyResponse {
                attempts: draw as u32,
            });
        }
        let padded = out.len() < n;
        while out.len() < n {
            let last = out.last().cloned().expect("nonempty");
            out.push(last);
        }
        Ok(AugmentedCaption {
            captions: out,
            padded,
        })
    }

    /// `n` descriptions of one video, sample `i` answering the `i`-th slot.
    pub fn generate_video_descriptions(
        &self,
        video_id: &str,
        n: usize,
        temperature: f64,
    ) -> Result<Vec<String>, GenError> {
        if video_id.is_empty() {
            return Err(GenError::InvalidInput("video id must be nonempty".into()));
        }
        if self.config.kind == BackendKind::ChatHttp && !self.config.multimodal {
            return Err(GenError::InvalidInput(
                "video descriptions need a fixture, mock or multimodal chat backend".into(),
            ));
        }
        (0..n)
            .map(|i| {
                let req = self.request(
                    TemplateId::VideoDesc,
                    template::bindings([(VIDEO_ID, video_id)]),
                    temperature,
                    i as u32,
                )?;
                self.complete(&req).map(|t| t.trim().to_string())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AugmentedCaption {
    pub captions: Vec<String>,
    pub padded: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Scripted {
        calls: Arc<AtomicUsize>,
        answer: fn(usize) -> Result<String, BackendError>,
    }

    impl Backend for Scripted {
        fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            (self.answer)(n)
        }
    }

    fn scripted(answer: fn(usize) -> Result<String, BackendError>) -> (GenClient, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let mut config = BackendConfig::mock("m", 0.2);
        config.backoff_ms = 1;
        let client = GenClient::new(
            Box::new(Scripted {
                calls: calls.clone(),
                answer,
            }),
            config,
            None,
        );
        (client, calls)
    }

    fn mock_client() -> GenClient {
        GenClient::new(Box::new(MockBackend), BackendConfig::mock("m", 0.2), None)
    }

    #[test]
    fn mock_descriptor_set() {
        let set = mock_client().generate_descriptor_set("baby crawling").unwrap();
        assert_eq!(set.attributes, vec!["mock-attr-1:baby crawling"]);
        assert_eq!(set.description.as_deref(), Some("mock-desc:baby crawling"));
    }

    #[test]
    fn empty_responses_exhaust_retries() {
        let (client, calls) = scripted(|_| Ok(String::new()));
        let req = client
            .request(TemplateId::Description, template::bindings([(CLASS_NAME, "x")]), 0.2, 0)
            .unwrap();
        assert!(matches!(client.complete(&req), Err(GenError::EmptyResponse { attempts: 3 })));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn empty_descriptor_is_absent() {
        let (client, _) = scripted(|_| Ok("  ".into()));
        let set = client.generate_descriptor_set("x").unwrap();
        assert!(set.attributes.is_empty());
        assert_eq!(set.description, None);
    }

    #[test]
    fn server_errors_are_retried_then_succeed() {
        let (client, calls) = scripted(|n| {
            if n < 2 {
                Err(BackendError::Status { status: 503, body: "busy".into() })
            } else {
                Ok("ok".into())
            }
        });
        let req = client
            .request(TemplateId::Description, template::bindings([(CLASS_NAME, "x")]), 0.2, 0)
            .unwrap();
        assert_eq!(client.complete(&req).unwrap(), "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_fail_fast() {
        let (client, calls) = scripted(|_| Err(BackendError::Status { status: 401, body: "no".into() }));
        let req = client
            .request(TemplateId::Description, template::bindings([(CLASS_NAME, "x")]), 0.2, 0)
            .unwrap();
        assert!(matches!(client.complete(&req), Err(GenError::Rejected { status: 401, .. })));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transport_errors_become_unavailable() {
        let (client, calls) = scripted(|_| Err(BackendError::Transport("refused".into())));
        let err = client.generate_descriptor_set("x").unwrap_err();
        assert!(matches!(err, GenError::BackendUnavailable { attempts: 3, .. }));
        assert!(err.is_backend_failure());
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn mock_captions_and_video_descriptions() {
        let c = mock_client();
        let aug = c.augment_caption("a dog runs", 2).unwrap();
        assert_eq!(aug.captions, vec!["mock-cap-0:a dog runs", "mock-cap-1:a dog runs"]);
        assert!(!aug.padded);
        assert_eq!(
            c.generate_video_descriptions("v1", 3, 0.5).unwrap(),
            vec!["mock-vdesc-0:v1", "mock-vdesc-1:v1", "mock-vdesc-2:v1"]
        );
    }

    #[test]
    fn repeated_captions_are_padded() {
        let (client, _) = scripted(|_| Ok("same caption".into()));
        let aug = client.augment_caption("x", 2).unwrap();
        assert_eq!(aug.captions, vec!["same caption", "same caption"]);
        assert!(aug.padded);
    }

    #[test]
    fn mock_hierarchy_round_trip() {
        let classes = ["a", "b", "c"];
        let (_, h) = mock_client().generate_parsed_hierarchy(&classes).unwrap();
        assert_eq!(h.parents["mock-parent"], vec!["a", "b", "c"]);
        assert!(h.parents["other"].is_empty());
        assert!(matches!(
            mock_client().generate_hierarchy::<&str>(&[]),
            Err(GenError::InvalidInput(_))
        ));
    }

    #[test]
    fn chat_http_refuses_video_without_multimodal() {
        let mut config = BackendConfig::text_default();
        config.endpoint_url = Some("http://127.0.0.1:9".into());
        let client = GenClient::from_config(config, None).unwrap();
        assert!(matches!(
            client.generate_video_descriptions("v1", 1, 0.5),
            Err(GenError::InvalidInput(_))
        ));
    }
}
