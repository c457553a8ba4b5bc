//! Content-addressed response cache: `<dir>/<2-hex-prefix>/<digest>.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{BackendKind, CompletionRequest};
use super::template::TemplateId;

/// Everything that can change a backend's answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub backend: BackendKind,
    pub model: String,
    pub template: TemplateId,
    pub template_version: u32,
    pub prompt: String,
    /// Video attached to a video-to-text request; the prompt alone does not
    /// identify it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    pub temperature: f64,
    pub sample_index: u32,
}

impl CacheKey {
    pub fn new(backend: BackendKind, model: &str, request: &CompletionRequest) -> Self {
        Self {
            backend,
            model: model.to_string(),
            template: request.template,
            template_version: request.template_version,
            prompt: request.prompt.clone(),
            video_id: request.video_id().map(str::to_string),
            temperature: request.temperature,
            sample_index: request.sample_index,
        }
    }

    /// Hex SHA-256 of the key's canonical JSON encoding.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("cache key serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: CacheKey,
    response: String,
}

#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        let digest = key.digest();
        self.root.join(&digest[..2]).join(format!("{digest}.json"))
    }

    /// Returns the cached response, ignoring unreadable entries and entries
    /// whose stored key differs (digest collision or hand edits).
    pub fn get(&self, key: &CacheKey) -> Option<String> {
        let raw = fs::read(self.path_for(key)).ok()?;
        let entry: CacheEntry = serde_json::from_slice(&raw).ok()?;
        (entry.key == *key).then_some(entry.response)
    }

    pub fn put(&self, key: &CacheKey, response: &str) -> std::io::Result<()> {
        let path = self.path_for(key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        let entry = CacheEntry {
            key: key.clone(),
            response: response.to_string(),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer_pretty(&mut tmp, &entry)?;
        tmp.write_all(b"\n")?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }
}
