//! Text-to-text and video-to-text backends.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::template::{TemplateId, CLASS_NAME, CLASS_NAMES, INPUT_CAPTION, VIDEO_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    ChatHttp,
    FixtureFile,
    Mock,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::ChatHttp => "chat_http",
            BackendKind::FixtureFile => "fixture_file",
            BackendKind::Mock => "mock",
        }
    }
}

fn default_api_key_env() -> String {
    "VP_API_KEY".to_string()
}

fn default_max_retries() -> u32 {
    3
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint_url: Option<String>,
    /// JSONL fixture consulted by `fixture_file` backends.
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
    pub model_name: String,
    pub temperature: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// Base delay of the exponential backoff.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Whether a `chat_http` endpoint accepts video attachments.
    #[serde(default)]
    pub multimodal: bool,
}

impl BackendConfig {
    pub fn mock(model_name: &str, temperature: f64) -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: None,
            fixture_path: None,
            model_name: model_name.to_string(),
            temperature,
            max_retries: default_max_retries(),
            timeout_secs: default_timeout_secs(),
            api_key_env: default_api_key_env(),
            backoff_ms: default_backoff_ms(),
            multimodal: false,
        }
    }

    /// Defaults for the class-descriptor LLM.
    pub fn text_default() -> Self {
        Self {
            kind: BackendKind::ChatHttp,
            ..Self::mock("gpt-3.5-turbo", 0.2)
        }
    }

    /// Defaults for the video-to-text model.
    pub fn video_default() -> Self {
        Self {
            kind: BackendKind::FixtureFile,
            ..Self::mock("video-chatgpt", 0.5)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            BackendKind::ChatHttp if self.endpoint_url.as_deref().is_none_or(str::is_empty) => {
                return Err("endpoint_url is required for chat_http backends".into())
            }
            BackendKind::FixtureFile if self.fixture_path.is_none() => {
                return Err("fixture_path is required for fixture_file backends".into())
            }
            _ => {}
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_retries == 0 {
            return Err("max_retries must be at least 1".into());
        }
        Ok(())
    }

    pub fn backend_id(&self) -> String {
        format!("{}:{}", self.kind.as_str(), self.model_name)
    }
}

/// One completion request: the rendered prompt plus everything that
/// identifies it.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub template: TemplateId,
    pub template_version: u32,
    pub bindings: BTreeMap<String, String>,
    pub prompt: String,
    pub temperature: f64,
    pub sample_index: u32,
}

impl CompletionRequest {
    pub fn binding(&self, name: &str) -> &str {
        self.bindings.get(name).map_or("", String::as_str)
    }

    pub fn video_id(&self) -> Option<&str> {
        self.bindings.get(VIDEO_ID).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no fixture for {0}")]
    MissingFixture(String),
    #[error("unsupported request: {0}")]
    Unsupported(String),
}

impl BackendError {
    /// Transport failures, 5xx and 429 are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

/// Deterministic stand-in: the response is a pure function of
/// (template, bindings, sample index).
#[derive(Debug, Default, Clone, Copy)]
pub struct MockBackend;

impl Backend for MockBackend {
    fn complete(&self, r: &CompletionRequest) -> Result<String, BackendError> {
        let i = r.sample_index;
        Ok(match r.template {
            TemplateId::Attributes => format!("mock-attr-1:{}", r.binding(CLASS_NAME)),
            TemplateId::Description => format!("mock-desc:{}", r.binding(CLASS_NAME)),
            TemplateId::Hierarchy => format!("mock-parent: {}\nother:", r.binding(CLASS_NAMES)),
            TemplateId::CaptionAugment => format!("mock-cap-{i}:{}", r.binding(INPUT_CAPTION)),
            TemplateId::VideoDesc => format!("mock-vdesc-{i}:{}", r.video_id().unwrap_or("")),
            TemplateId::BasePrompt | TemplateId::ContextPrompt => r.prompt.clone(),
        })
    }
}

/// Hex SHA-256 of a rendered prompt; the key for prompt-addressed fixtures.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum FixtureLine {
    Video {
        video_id: String,
        descriptions: Vec<String>,
    },
    Prompt {
        #[serde(default)]
        prompt: Option<String>,
        #[serde(default)]
        prompt_digest: Option<String>,
        #[serde(default)]
        response: Option<String>,
        #[serde(default)]
        responses: Vec<String>,
    },
}

/// Replays recorded outputs. Video-to-text lines are keyed by video id,
/// everything else by prompt (text or digest); the n-th recorded response
/// answers sample index n.
#[derive(Debug, Default, Clone)]
pub struct FixtureBackend {
    by_video: HashMap<String, Vec<String>>,
    by_prompt: HashMap<String, Vec<String>>,
}

impl FixtureBackend {
    pub fn load(path: &Path) -> Result<Self, crate::store::StoreError> {
        let lines: Vec<FixtureLine> = crate::store::read_jsonl(path)?;
        let mut out = Self::default();
        for (n, line) in lines.into_iter().enumerate() {
            match line {
                FixtureLine::Video {
                    video_id,
                    descriptions,
                } => {
                    out.by_video.insert(video_id, descriptions);
                }
                FixtureLine::Prompt {
                    prompt,
                    prompt_digest: digest,
                    response,
                    mut responses,
                } => {
                    let key = match (prompt, digest) {
                        (Some(p), _) => prompt_digest(&p),
                        (None, Some(d)) => d.to_lowercase(),
                        (None, None) => {
                            return Err(crate::store::StoreError::Jsonl {
                                file: path.to_path_buf(),
                                line: n + 1,
                                message: "fixture line needs video_id, prompt or prompt_digest".into(),
                            })
                        }
                    };
                    if let Some(r) = response {
                        responses.insert(0, r);
                    }
                    out.by_prompt.entry(key).or_default().extend(responses);
                }
            }
        }
        Ok(out)
    }

    pub fn insert_prompt(&mut self, prompt: &str, responses: Vec<String>) {
        self.by_prompt.insert(prompt_digest(prompt), responses);
    }

    pub fn insert_video(&mut self, video_id: &str, descriptions: Vec<String>) {
        self.by_video.insert(video_id.to_string(), descriptions);
    }
}

impl Backend for FixtureBackend {
    fn complete(&self, r: &CompletionRequest) -> Result<String, BackendError> {
        let i = r.sample_index as usize;
        if r.template == TemplateId::VideoDesc {
            let id = r.video_id().unwrap_or("");
            let descs = self
                .by_video
                .get(id)
                .ok_or_else(|| BackendError::MissingFixture(id.to_string()))?;
            return descs.get(i).cloned().ok_or_else(|| {
                BackendError::MissingFixture(format!("{id} (description {i} of {})", descs.len()))
            });
        }
        let responses = self
            .by_prompt
            .get(&prompt_digest(&r.prompt))
            .ok_or_else(|| BackendError::MissingFixture(format!("prompt {:?}", r.prompt)))?;
        responses
            .get(i)
            .cloned()
            .ok_or_else(|| BackendError::MissingFixture(format!("prompt {:?} sample {i}", r.prompt)))
    }
}

/// OpenAI-compatible `/v1/chat/completions` client.
pub struct ChatHttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    multimodal: bool,
}

impl ChatHttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = config
            .endpoint_url
            .as_deref()
            .ok_or_else(|| BackendError::Unsupported("chat_http needs endpoint_url".into()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: completions_url(endpoint),
            model: config.model_name.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
            multimodal: config.multimodal,
        })
    }

    fn body(&self, r: &CompletionRequest) -> Result<serde_json::Value, BackendError> {
        let content = match r.video_id() {
            Some(video) if r.template == TemplateId::VideoDesc => {
                if !self.multimodal {
                    return Err(BackendError::Unsupported(
                        "video descriptions need a multimodal chat endpoint".into(),
                    ));
                }
                json!([
                    {"type": "text", "text": r.prompt},
                    {"type": "video_url", "video_url": {"url": video}},
                ])
            }
            _ => json!(r.prompt),
        };
        Ok(json!({
            "model": self.model,
            "temperature": r.temperature,
            "messages": [{"role": "user", "content": content}],
        }))
    }
}

pub fn completions_url(endpoint: &str) -> String {
    let base = endpoint.trim_end_matches('/');
    if base.ends_with("/chat/completions") {
        base.to_string()
    } else if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl Backend for ChatHttpBackend {
    fn complete(&self, r: &CompletionRequest) -> Result<String, BackendError> {
        let mut req = self.client.post(&self.url).json(&self.body(r)?);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn Backend>, super::GenError> {
    config.validate().map_err(super::GenError::InvalidInput)?;
    Ok(match config.kind {
        BackendKind::Mock => Box::new(MockBackend),
        BackendKind::FixtureFile => {
            let path = config.fixture_path.as_deref().expect("validated");
            Box::new(FixtureBackend::load(path).map_err(|e| super::GenError::Fixture(e.to_string()))?)
        }
        BackendKind::ChatHttp => Box::new(ChatHttpBackend::new(config).map_err(super::GenError::from_backend)?),
    })
}
