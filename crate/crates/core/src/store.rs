//! On-disk formats.
//!
//! An embedding store is a directory holding `manifest.json` and `data.bin`.
//! The payload is row-major little-endian IEEE-754 binary32 with no header and
//! no padding; row `i` belongs to `manifest.ids[i]`. Descriptor sets and
//! hierarchies are JSON documents, everything per-item is JSON Lines.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{DescriptorSet, HierarchyMap, Provenance};
use crate::vector::{norm, EmbeddingVector};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";
pub const STORE_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";

/// Row-norm tolerance for stores flagged `l2_normalized`.
const STORE_UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ragged matrix: row {row} has {got} values, expected {expected}")]
    RaggedMatrix {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("{ids} ids for {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("corrupt store {path}: {reason}")]
    CorruptStore { path: PathBuf, reason: String },
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("row index {index} out of range for {count} rows")]
    RowOutOfRange { index: usize, count: usize },
    #[error("schema error at {path}: {message}")]
    SchemaError { path: String, message: String },
    #[error("{file}:{line}: {message}")]
    Jsonl {
        file: PathBuf,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub version: u32,
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub l2_normalized: bool,
    pub ids: Vec<String>,
}

/// An id-addressed `count x dim` matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    manifest: StoreManifest,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    /// Builds an in-memory store, validating shape and id uniqueness.
    pub fn from_rows<R: AsRef<[f32]>>(ids: Vec<String>, rows: &[R]) -> Result<Self, StoreError> {
        if ids.len() != rows.len() {
            return Err(StoreError::IdCountMismatch {
                ids: ids.len(),
                rows: rows.len(),
            });
        }
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(dim * rows.len());
        for (row, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(StoreError::RaggedMatrix {
                    row,
                    got: r.len(),
                    expected: dim,
                });
            }
            data.extend_from_slice(r);
        }
        let index = index_ids(&ids)?;
        let l2_normalized = rows.iter().all(|r| {
            let n = norm(r.as_ref());
            (n - 1.0).abs() <= STORE_UNIT_TOLERANCE
        }) && dim > 0;
        Ok(Self {
            manifest: StoreManifest {
                version: STORE_VERSION,
                dim,
                count: ids.len(),
                dtype: DTYPE_F32LE.to_string(),
                l2_normalized,
                ids,
            },
            data,
            index,
        })
    }

    pub fn from_vectors(ids: Vec<String>, rows: &[EmbeddingVector]) -> Result<Self, StoreError> {
        Self::from_rows(ids, rows)
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn dim(&self) -> usize {
        self.manifest.dim
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn ids(&self) -> &[String] {
        &self.manifest.ids
    }

    pub fn row(&self, index: usize) -> Result<&[f32], StoreError> {
        if index >= self.manifest.count {
            return Err(StoreError::RowOutOfRange {
                index,
                count: self.manifest.count,
            });
        }
        let dim = self.manifest.dim;
        Ok(&self.data[index * dim..(index + 1) * dim])
    }

    pub fn get(&self, id: &str) -> Result<&[f32], StoreError> {
        let i = self.position(id)?;
        self.row(i)
    }

    pub fn position(&self, id: &str) -> Result<usize, StoreError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    pub fn vector(&self, id: &str) -> Result<EmbeddingVector, StoreError> {
        let row = self.get(id)?;
        EmbeddingVector::new(row.to_vec()).map_err(|e| StoreError::CorruptStore {
            path: PathBuf::new(),
            reason: format!("row {id:?}: {e}"),
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics, and a zero-dim store has no rows anyway.
        self.data.chunks_exact(self.manifest.dim.max(1))
    }

    /// The payload exactly as it is written to `data.bin`.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

fn index_ids(ids: &[String]) -> Result<HashMap<String, usize>, StoreError> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.clone(), i).is_some() {
            return Err(StoreError::DuplicateId(id.clone()));
        }
    }
    Ok(index)
}

/// Writes `rows` under `path`, replacing any previous store there. The
/// directory is staged next to the target and renamed into place.
pub fn write_store<R: AsRef<[f32]>>(
    ids: &[String],
    rows: &[R],
    path: &Path,
) -> Result<(), StoreError> {
    let store = EmbeddingStore::from_rows(ids.to_vec(), rows)?;
    save_store(&store, path)
}

pub fn save_store(store: &EmbeddingStore, path: &Path) -> Result<(), StoreError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".vp-store-")
        .tempdir_in(&parent)
        .map_err(io_err(&parent))?;

    let manifest_path = staging.path().join(MANIFEST_FILE);
    let mut manifest = serde_json::to_vec_pretty(&store.manifest).expect("manifest serializes");
    manifest.push(b'\n');
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;

    let data_path = staging.path().join(DATA_FILE);
    let file = fs::File::create(&data_path).map_err(io_err(&data_path))?;
    let mut w = BufWriter::new(file);
    for v in &store.data {
        w.write_all(&v.to_le_bytes()).map_err(io_err(&data_path))?;
    }
    w.flush().map_err(io_err(&data_path))?;
    drop(w);

    if path.exists() {
        fs::remove_dir_all(path).map_err(io_err(path))?;
    }
    // Once renamed, dropping the staging guard finds nothing left to delete.
    fs::rename(staging.path(), path).map_err(io_err(path))?;
    Ok(())
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore, StoreError> {
    let manifest_path = path.join(MANIFEST_FILE);
    let raw = fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: StoreManifest = parse_json(&raw)?;
    let corrupt = |reason: String| StoreError::CorruptStore {
        path: path.to_path_buf(),
        reason,
    };
    if manifest.version != STORE_VERSION {
        return Err(StoreError::UnsupportedVersion(manifest.version));
    }
    if manifest.dtype != DTYPE_F32LE {
        return Err(corrupt(format!("unsupported dtype {:?}", manifest.dtype)));
    }
    if manifest.ids.len() != manifest.count {
        return Err(corrupt(format!(
            "manifest lists {} ids but count is {}",
            manifest.ids.len(),
            manifest.count
        )));
    }
    if manifest.dim == 0 && manifest.count > 0 {
        return Err(corrupt("dim must be positive".into()));
    }
    let index = index_ids(&manifest.ids)?;

    let data_path = path.join(DATA_FILE);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let expected = manifest.count * manifest.dim * 4;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "{} holds {} bytes, manifest implies {}",
            DATA_FILE,
            bytes.len(),
            expected
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(corrupt(format!("non-finite value at element {i}")));
    }
    let store = EmbeddingStore {
        manifest,
        data,
        index,
    };
    if store.manifest.l2_normalized {
        for (i, row) in store.rows().enumerate() {
            let n = norm(row);
            if (n - 1.0).abs() > STORE_UNIT_TOLERANCE {
                return Err(corrupt(format!("row {i} has norm {n}, flagged unit")));
            }
        }
    }
    Ok(store)
}

fn parse_json<T: DeserializeOwned>(raw: &[u8]) -> Result<T, StoreError> {
    let de = &mut serde_json::Deserializer::from_slice(raw);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        StoreError::SchemaError {
            path: if path == "." { path } else { format!(".{path}") },
            message: e.into_inner().to_string(),
        }
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&parent).map_err(io_err(&parent))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let raw = fs::read(path).map_err(io_err(path))?;
    parse_json(&raw)
}

// ---------------------------------------------------------------------------
// Descriptor sets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorEntry {
    attributes: Vec<String>,
    description: Option<String>,
    #[serde(default)]
    parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DescriptorDocument {
    model: String,
    temperature: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    backend: String,
    #[serde(default)]
    template_version: u32,
    classes: BTreeMap<String, DescriptorEntry>,
}

pub fn read_descriptors(path: &Path) -> Result<BTreeMap<String, DescriptorSet>, StoreError> {
    let doc: DescriptorDocument = read_json(path)?;
    let provenance = Provenance {
        backend: doc.backend.clone(),
        model: doc.model.clone(),
        temperature: doc.temperature,
        template_version: doc.template_version,
    };
    let mut out = BTreeMap::new();
    for (name, entry) in doc.classes {
        for (i, a) in entry.attributes.iter().enumerate() {
            if a.trim().is_empty() || a.trim() != a {
                return Err(StoreError::SchemaError {
                    path: format!(".classes.{name}.attributes[{i}]"),
                    message: "attributes must be nonempty trimmed strings".into(),
                });
            }
        }
        if matches!(&entry.description, Some(d) if d.trim().is_empty()) {
            return Err(StoreError::SchemaError {
                path: format!(".classes.{name}.description"),
                message: "description must be nonempty when present".into(),
            });
        }
        out.insert(
            name.clone(),
            DescriptorSet {
                class_name: name,
                attributes: entry.attributes,
                description: entry.description,
                parent_context: entry.parent,
                provenance: provenance.clone(),
            },
        );
    }
    Ok(out)
}

/// Document-level provenance is taken from the first set.
pub fn write_descriptors(
    sets: &BTreeMap<String, DescriptorSet>,
    path: &Path,
) -> Result<(), StoreError> {
    let provenance = sets
        .values()
        .next()
        .map(|s| s.provenance.clone())
        .unwrap_or_default();
    let doc = DescriptorDocument {
        model: provenance.model,
        temperature: provenance.temperature,
        backend: provenance.backend,
        template_version: provenance.template_version,
        classes: sets
            .iter()
            .map(|(name, s)| {
                (
                    name.clone(),
                    DescriptorEntry {
                        attributes: s.attributes.clone(),
                        description: s.description.clone(),
                        parent: s.parent_context.clone(),
                    },
                )
            })
            .collect(),
    };
    write_json(&doc, path)
}

// ---------------------------------------------------------------------------
// Hierarchies

pub fn read_hierarchy(path: &Path) -> Result<HierarchyMap, StoreError> {
    read_json(path)
}

pub fn write_hierarchy(map: &HierarchyMap, path: &Path) -> Result<(), StoreError> {
    write_json(map, path)
}

// ---------------------------------------------------------------------------
// JSON Lines records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoDescriptions {
    pub video_id: String,
    pub descriptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    /// Id of the video this caption is paired with.
    pub id: String,
    pub caption: String,
    #[serde(default)]
    pub generated: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub predicted: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub video_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRecord {
    pub video_id: String,
    pub beta2_used: f64,
    pub descriptions_kept: Vec<usize>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = parse_json(line.as_bytes()).map_err(|e| StoreError::Jsonl {
            file: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<(), StoreError> {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, r).expect("record serializes");
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}

/// Reads a newline-separated list (class names, ids); blank lines and `#`
/// comments are skipped.
pub fn read_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

/// Checks that every id is unique, returning the first duplicate otherwise.
pub fn ensure_unique<'a, I: IntoIterator<Item = &'a str>>(ids: I) -> Result<(), StoreError> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(StoreError::DuplicateId(id.to_string()));
        }
    }
    Ok(())
}
