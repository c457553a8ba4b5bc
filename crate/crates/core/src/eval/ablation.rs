//! Ablation grids over classifier components and fusion settings.
//!
//! Cells are enumerated in a fixed lattice order (components outermost,
//! description count innermost). A failing cell is recorded with its error
//! and the remaining cells still run.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify, top1_accuracy, EvalError};
use crate::classifier::{build_classifier, parse_components, ClassifierMatrix, ComponentSet};
use crate::embed::{CachingEmbedder, TextEmbedder};
use crate::fusion::{fuse_video, Aggregation, Beta2Mode, FusionConfig};
use crate::types::{DescriptorSet, HierarchyMap};
use crate::vector::EmbeddingVector;

/// Description source meaning "no per-video descriptions".
pub const NO_DESCRIPTIONS: &str = "none";

/// Axes left out default to the single value taken from the base config.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    /// Component sets such as `"base"` or `"context+attributes+description"`.
    pub components: Option<Vec<String>>,
    pub filtering: Option<Vec<bool>>,
    pub filter_k: Option<Vec<usize>>,
    pub beta2: Option<Vec<Beta2Mode>>,
    pub aggregation: Option<Vec<Aggregation>>,
    /// Keys into [`AblationData::description_sets`], or `"none"`.
    pub description_source: Option<Vec<String>>,
    /// Use only the first `n` descriptions of each video.
    pub n_descriptions: Option<Vec<usize>>,
}

pub struct AblationData {
    pub classes: Vec<String>,
    pub descriptors: BTreeMap<String, DescriptorSet>,
    pub hierarchy: Option<HierarchyMap>,
    pub videos: Vec<(String, EmbeddingVector)>,
    pub labels: HashMap<String, String>,
    /// Source name to per-video description texts.
    pub description_sets: BTreeMap<String, HashMap<String, Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub components: String,
    pub filtering: bool,
    pub filter_k: usize,
    pub beta2: Beta2Mode,
    pub aggregation: Aggregation,
    pub description_source: String,
    pub n_descriptions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub index: usize,
    pub spec: CellSpec,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
}

pub const CSV_HEADER: [&str; 12] = [
    "cell",
    "components",
    "filtering",
    "filter_k",
    "beta2",
    "aggregation",
    "description_source",
    "n_descriptions",
    "status",
    "top1_accuracy",
    "mean_beta2",
    "error",
];

fn beta2_label(m: Beta2Mode) -> String {
    match m {
        Beta2Mode::Cosine => "cosine".into(),
        Beta2Mode::Fixed(b) => format!("fixed:{b}"),
    }
}

fn aggregation_label(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Mean => "mean",
        Aggregation::PerDescription => "per_description",
    }
}

impl AblationTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for c in &self.cells {
            let metric = |k: &str| c.metrics.get(k).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                c.index.to_string(),
                c.spec.components.clone(),
                c.spec.filtering.to_string(),
                c.spec.filter_k.to_string(),
                beta2_label(c.spec.beta2),
                aggregation_label(c.spec.aggregation).to_string(),
                c.spec.description_source.clone(),
                c.spec.n_descriptions.map(|n| n.to_string()).unwrap_or_else(|| "all".into()),
                if c.ok { "ok" } else { "failed" }.to_string(),
                metric("top1_accuracy"),
                metric("mean_beta2"),
                c.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn axis<T: Clone>(name: &str, values: &Option<Vec<T>>, default: T) -> Result<Vec<T>, EvalError> {
    match values {
        None => Ok(vec![default]),
        Some(v) if v.is_empty() => Err(EvalError::InvalidGrid(format!("axis {name} has no values"))),
        Some(v) => Ok(v.clone()),
    }
}

/// Lattice points in enumeration order.
pub fn expand_grid(grid: &AblationGrid, base: &FusionConfig, default_components: &str) -> Result<Vec<CellSpec>, EvalError> {
    if *grid == AblationGrid::default() {
        return Err(EvalError::EmptyGrid);
    }
    let components = axis("components", &grid.components, default_components.to_string())?;
    let filtering = axis("filtering", &grid.filtering, base.filtering_enabled)?;
    let filter_k = axis("filter_k", &grid.filter_k, base.filter_k)?;
    let beta2 = axis("beta2", &grid.beta2, base.beta2_mode)?;
    let aggregation = axis("aggregation", &grid.aggregation, base.aggregation)?;
    let sources = axis("description_source", &grid.description_source, NO_DESCRIPTIONS.to_string())?;
    let counts: Vec<Option<usize>> = match &grid.n_descriptions {
        None => vec![None],
        Some(v) if v.is_empty() => return Err(EvalError::InvalidGrid("axis n_descriptions has no values".into())),
        Some(v) => v.iter().copied().map(Some).collect(),
    };

    let mut cells = Vec::new();
    for c in &components {
        for &f in &filtering {
            for &k in &filter_k {
                for &b in &beta2 {
                    for &a in &aggregation {
                        for s in &sources {
                            for &n in &counts {
                                cells.push(CellSpec {
                                    components: c.clone(),
                                    filtering: f,
                                    filter_k: k,
                                    beta2: b,
                                    aggregation: a,
                                    description_source: s.clone(),
                                    n_descriptions: n,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(cells)
}

fn parse_component_label(label: &str) -> Result<ComponentSet, String> {
    parse_components(&label.replace('+', ",")).map_err(|e| e.to_string())
}

/// Runs every cell of `grid`. Only grid-level problems are returned as errors.
pub fn run_ablation<E: TextEmbedder + ?Sized>(
    grid: &AblationGrid,
    base: &FusionConfig,
    default_components: &str,
    data: &AblationData,
    embedder: &E,
    batch_size: usize,
) -> Result<AblationTable, EvalError> {
    let specs = expand_grid(grid, base, default_components)?;
    let embedder = CachingEmbedder::new(embedder);
    let mut classifiers: HashMap<String, Result<ClassifierMatrix, String>> = HashMap::new();

    let mut cells = Vec::with_capacity(specs.len());
    for (index, spec) in specs.into_iter().enumerate() {
        let classifier = classifiers.entry(spec.components.clone()).or_insert_with(|| {
            let set = parse_component_label(&spec.components)?;
            build_classifier(&data.classes, &data.descriptors, data.hierarchy.as_ref(), &set, &embedder, batch_size)
                .map_err(|e| e.to_string())
        });
        let outcome = match classifier {
            Ok(m) => run_cell(&spec, base, data, m, &embedder),
            Err(e) => Err(e.clone()),
        };
        let (ok, error, metrics) = match outcome {
            Ok(metrics) => (true, None, metrics),
            Err(e) => (false, Some(e), BTreeMap::new()),
        };
        cells.push(AblationCell {
            index,
            spec,
            ok,
            error,
            metrics,
        });
    }
    Ok(AblationTable { cells })
}

fn run_cell<E: TextEmbedder>(
    spec: &CellSpec,
    base: &FusionConfig,
    data: &AblationData,
    classifier: &ClassifierMatrix,
    embedder: &E,
) -> Result<BTreeMap<String, f64>, String> {
    let config = FusionConfig {
        filtering_enabled: spec.filtering,
        filter_k: spec.filter_k,
        beta2_mode: spec.beta2,
        aggregation: spec.aggregation,
        ..base.clone()
    };
    config.validate().map_err(|e| e.to_string())?;
    let source = if spec.description_source == NO_DESCRIPTIONS {
        None
    } else {
        Some(
            data.description_sets
                .get(&spec.description_source)
                .ok_or_else(|| format!("unknown description source {:?}", spec.description_source))?,
        )
    };
    if data.videos.is_empty() {
        return Err(EvalError::Empty.to_string());
    }

    let results = data
        .videos
        .par_iter()
        .map(|(id, v)| {
            let mut texts: Vec<String> = source.and_then(|s| s.get(id)).cloned().unwrap_or_default();
            if let Some(n) = spec.n_descriptions {
                texts.truncate(n);
            }
            let descs = embedder.embed(&texts).map_err(|e| e.to_string())?;
            let fused = fuse_video(id, v, &descs, &config).map_err(|e| format!("{id}: {e}"))?;
            let p = classify(id, &fused.vector, classifier).map_err(|e| e.to_string())?;
            Ok((p, fused.beta2_used))
        })
        .collect::<Result<Vec<_>, String>>()?;

    let beta_sum: f64 = results.iter().map(|(_, b)| b).sum();
    let predictions: Vec<_> = results.into_iter().map(|(p, _)| p).collect();
    let acc = top1_accuracy(&predictions, &data.labels).map_err(|e| e.to_string())?;
    Ok(BTreeMap::from([
        ("top1_accuracy".to_string(), acc),
        ("mean_beta2".to_string(), beta_sum / predictions.len() as f64),
        ("count".to_string(), predictions.len() as f64),
    ]))
}
