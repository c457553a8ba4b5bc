use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vp_core::classifier::{parse_components, ComponentSet};
use vp_core::embed::{HttpEmbedder, MockEmbedder, StoreEmbedder, TextEmbedder};
use vp_core::fusion::FusionConfig;
use vp_core::genclient::{BackendConfig, BackendKind, DiskCache, GenClient};
use vp_core::store::read_store;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    Mock,
    Http,
    Store,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    /// Dimension of the mock embedder.
    pub dim: usize,
    pub url: Option<String>,
    /// Store whose ids are the exact texts.
    pub store_path: Option<PathBuf>,
    pub timeout_secs: f64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Mock,
            dim: 64,
            url: None,
            store_path: None,
            timeout_secs: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub text_llm: BackendConfig,
    pub video_llm: BackendConfig,
    pub embedder: EmbedderConfig,
    pub fusion: FusionConfig,
    /// Comma- or plus-separated classifier components.
    pub components: String,
    pub cache_dir: Option<PathBuf>,
    pub n_descriptions_action: usize,
    pub n_descriptions_retrieval: usize,
    pub n_captions: usize,
    pub batch_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            text_llm: BackendConfig::text_default(),
            video_llm: BackendConfig::video_default(),
            embedder: EmbedderConfig::default(),
            fusion: FusionConfig::default(),
            components: "context,attributes,description".into(),
            cache_dir: None,
            n_descriptions_action: 3,
            n_descriptions_retrieval: 10,
            n_captions: 2,
            batch_size: vp_core::classifier::DEFAULT_BATCH_SIZE,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let mut c: Self = vp_core::store::read_json(p).with_context(|| format!("--config {}", p.display()))?;
                c.resolve_paths(p.parent().unwrap_or(Path::new(".")));
                Ok(c)
            }
        }
    }

    /// Relative paths inside a config file are relative to that file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p.as_mut().filter(|p| p.is_relative()) {
                *path = base.join(&*path);
            }
        };
        fix(&mut self.embedder.store_path);
        fix(&mut self.cache_dir);
        fix(&mut self.text_llm.fixture_path);
        fix(&mut self.video_llm.fixture_path);
    }

    /// Applies `VP_*` overrides; `lookup` is `std::env::var` outside tests.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = lookup("VP_CACHE_DIR") {
            self.cache_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("VP_LLM_URL") {
            self.text_llm.endpoint_url = Some(v);
        }
        if let Some(v) = lookup("VP_VIDEO_LLM_URL") {
            self.video_llm.endpoint_url = Some(v);
        }
        if let Some(v) = lookup("VP_EMBED_URL") {
            self.embedder.kind = EmbedderKind::Http;
            self.embedder.url = Some(v);
        }
        if let Some(v) = lookup("VP_COMPONENTS") {
            self.components = v;
        }
        if let Some(v) = lookup("VP_MAX_RETRIES") {
            let n: u32 = v.parse().with_context(|| format!("VP_MAX_RETRIES={v:?}"))?;
            self.text_llm.max_retries = n;
            self.video_llm.max_retries = n;
        }
        Ok(())
    }

    /// Swaps every network-backed dependency for its deterministic mock.
    pub fn make_hermetic(&mut self) {
        for b in [&mut self.text_llm, &mut self.video_llm] {
            b.kind = BackendKind::Mock;
        }
        if self.embedder.kind == EmbedderKind::Http {
            self.embedder.kind = EmbedderKind::Mock;
        }
    }

    pub fn component_set(&self) -> Result<ComponentSet> {
        parse_component_list(&self.components).context("config field `components`")
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate().context("config field `fusion`")?;
        self.component_set()?;
        if self.batch_size == 0 {
            bail!("config field `batch_size` must be at least 1");
        }
        if self.embedder.kind == EmbedderKind::Mock && self.embedder.dim == 0 {
            bail!("config field `embedder.dim` must be at least 1");
        }
        Ok(())
    }

    pub fn embedder(&self) -> Result<Box<dyn TextEmbedder>> {
        let e = &self.embedder;
        Ok(match e.kind {
            EmbedderKind::Mock => Box::new(MockEmbedder::new(e.dim)),
            EmbedderKind::Http => {
                let url = e.url.as_deref().context("config field `embedder.url` is required for http")?;
                Box::new(HttpEmbedder::new(url, Duration::from_secs_f64(e.timeout_secs))?)
            }
            EmbedderKind::Store => {
                let p = e
                    .store_path
                    .as_deref()
                    .context("config field `embedder.store_path` is required for store")?;
                Box::new(StoreEmbedder::new(read_store(p)?, p.display().to_string()))
            }
        })
    }

    fn cache(&self) -> Option<DiskCache> {
        self.cache_dir.as_ref().map(|d| DiskCache::new(d.clone()))
    }

    pub fn text_client(&self) -> Result<GenClient> {
        self.text_llm.validate().map_err(anyhow::Error::msg).context("config field `text_llm`")?;
        Ok(GenClient::from_config(self.text_llm.clone(), self.cache())?)
    }

    pub fn video_client(&self) -> Result<GenClient> {
        self.video_llm.validate().map_err(anyhow::Error::msg).context("config field `video_llm`")?;
        Ok(GenClient::from_config(self.video_llm.clone(), self.cache())?)
    }
}

pub fn parse_component_list(s: &str) -> Result<ComponentSet> {
    Ok(parse_components(&s.replace('+', ","))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn env_overrides() {
        let env: HashMap<&str, &str> = [("VP_CACHE_DIR", "/tmp/c"), ("VP_EMBED_URL", "http://x:1")].into();
        let mut c = RunConfig::default();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.cache_dir.as_deref(), Some(Path::new("/tmp/c")));
        assert_eq!(c.embedder.kind, EmbedderKind::Http);
        c.make_hermetic();
        assert_eq!(c.embedder.kind, EmbedderKind::Mock);
        assert_eq!(c.text_llm.kind, BackendKind::Mock);
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"fusion":{"beta3":1}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"components":"base"}"#).unwrap();
        assert_eq!(c.n_descriptions_action, 3);
    }
}
