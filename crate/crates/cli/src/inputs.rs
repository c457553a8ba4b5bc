//! Loading and validating command inputs. Errors name the flag at fault.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use vp_core::datasets::Dataset;
use vp_core::genclient::parse_hierarchy;
use vp_core::store::{
    ensure_unique, read_descriptors, read_hierarchy, read_jsonl, read_lines, read_store, EmbeddingStore, LabelRecord,
    VideoDescriptions,
};
use vp_core::types::{DescriptorSet, HierarchyMap};
use vp_core::vector::EmbeddingVector;

/// Fails with a flag-named error when `path` is absent.
pub fn require<'a>(flag: &str, path: &'a Path) -> Result<&'a Path> {
    if !path.exists() {
        bail!("{flag}: path does not exist: {}", path.display());
    }
    Ok(path)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ClassSource {
    /// Class names, one per line.
    #[arg(long, required_unless_present = "dataset", conflicts_with = "dataset")]
    pub classes: Option<PathBuf>,
    /// Bundled class list: hmdb51, ucf101 or k400.
    #[arg(long)]
    pub dataset: Option<String>,
}

impl ClassSource {
    pub fn dataset(&self) -> Result<Option<Dataset>> {
        self.dataset
            .as_deref()
            .map(|d| d.parse::<Dataset>().map_err(anyhow::Error::msg).context("--dataset"))
            .transpose()
    }

    pub fn load(&self) -> Result<Vec<String>> {
        let classes = match (&self.classes, self.dataset()?) {
            (Some(p), _) => read_lines(require("--classes", p)?).context("--classes")?,
            (None, Some(d)) => d.classes(),
            (None, None) => bail!("--classes or --dataset is required"),
        };
        if classes.is_empty() {
            bail!("--classes: no class names");
        }
        ensure_unique(classes.iter().map(String::as_str)).context("--classes")?;
        Ok(classes)
    }
}

pub fn load_videos(flag: &str, path: &Path) -> Result<Vec<(String, EmbeddingVector)>> {
    let store = load_store(flag, path)?;
    store
        .ids()
        .iter()
        .map(|id| Ok((id.clone(), store.vector(id)?)))
        .collect::<Result<Vec<_>>>()
        .with_context(|| flag.to_string())
}

pub fn load_store(flag: &str, path: &Path) -> Result<EmbeddingStore> {
    read_store(require(flag, path)?).with_context(|| flag.to_string())
}

pub fn load_descriptors(flag: &str, path: Option<&Path>) -> Result<BTreeMap<String, DescriptorSet>> {
    match path {
        None => Ok(BTreeMap::new()),
        Some(p) => read_descriptors(require(flag, p)?).with_context(|| flag.to_string()),
    }
}

/// JSON (`{"parents": ...}`) or the line format `parent: child, child`.
pub fn load_hierarchy(flag: &str, path: Option<&Path>, classes: &[String]) -> Result<Option<HierarchyMap>> {
    let Some(p) = path else { return Ok(None) };
    require(flag, p)?;
    let map = if p.extension().is_some_and(|e| e == "json") {
        let raw = read_hierarchy(p).with_context(|| flag.to_string())?;
        HierarchyMap::completed(raw.parents, classes).with_context(|| flag.to_string())?
    } else {
        let text = std::fs::read_to_string(p).with_context(|| format!("{flag} {}", p.display()))?;
        parse_hierarchy(&text, classes).with_context(|| flag.to_string())?
    };
    Ok(Some(map))
}

pub fn load_labels(flag: &str, path: &Path) -> Result<HashMap<String, String>> {
    let records: Vec<LabelRecord> = read_jsonl(require(flag, path)?).with_context(|| flag.to_string())?;
    ensure_unique(records.iter().map(|r| r.video_id.as_str())).with_context(|| flag.to_string())?;
    Ok(records.into_iter().map(|r| (r.video_id, r.label)).collect())
}

pub fn load_descriptions(flag: &str, path: &Path) -> Result<HashMap<String, Vec<String>>> {
    let records: Vec<VideoDescriptions> = read_jsonl(require(flag, path)?).with_context(|| flag.to_string())?;
    ensure_unique(records.iter().map(|r| r.video_id.as_str())).with_context(|| flag.to_string())?;
    Ok(records.into_iter().map(|r| (r.video_id, r.descriptions)).collect())
}
