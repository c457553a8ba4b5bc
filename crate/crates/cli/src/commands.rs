use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use vp_core::classifier::{
    build_caption_representation, build_classifier, components_label, embed_batched, ClassifierMatrix,
};
use vp_core::embed::{CachingEmbedder, TextEmbedder};
use vp_core::eval::{
    classify_all, recall_at_k, run_ablation, time_consistency, top1_accuracy, AblationData, AblationGrid, EvalReport,
    TIME_CONSISTENCY_DEFINITION,
};
use vp_core::explain::{attribute_contributions, emit_report, AttributionReport, ReportFormat};
use vp_core::fusion::{fuse_video, Beta2Mode, FusionConfig};
use vp_core::genclient::parse_hierarchy;
use vp_core::store::{
    read_json, read_jsonl, save_store, write_descriptors, write_hierarchy, write_json, write_jsonl, CaptionRecord,
    EmbeddingStore, FusedRecord, PredictionRecord, VideoDescriptions,
};
use vp_core::vector::{cosine, EmbeddingVector};

use crate::config::parse_component_list;
use crate::inputs::{
    load_descriptions, load_descriptors, load_hierarchy, load_labels, load_store, load_videos, require, ClassSource,
};
use crate::Ctx;

pub const CLASSIFIER_DIR: &str = "classifier";
pub const FUSED_DIR: &str = "fused";
pub const CAPTIONS_DIR: &str = "captions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Action,
    Retrieval,
    Time,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Action => "action",
            Mode::Retrieval => "retrieval",
            Mode::Time => "time",
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
pub enum DescriptorsCmd {
    /// Generate attributes and a description for every class.
    Gen(DescriptorsGenArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DescriptorsGenArgs {
    #[command(flatten)]
    pub classes: ClassSource,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum HierarchyCmd {
    /// Group classes under parent contexts.
    Gen(HierarchyGenArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct HierarchyGenArgs {
    #[command(flatten)]
    pub classes: ClassSource,
    /// Use the bundled hierarchy of --dataset instead of asking the LLM.
    #[arg(long, requires = "dataset")]
    pub bundled: bool,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum VideodescCmd {
    /// Describe every video of a store.
    Gen(VideodescGenArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct VideodescGenArgs {
    /// Store whose ids name the videos.
    #[arg(long)]
    pub videos: PathBuf,
    /// Descriptions per video (default from the config for the mode).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value = "action")]
    pub mode: Mode,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum ClassifierCmd {
    /// Embed class representations into a classifier matrix.
    Build(ClassifierBuildArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifierBuildArgs {
    #[command(flatten)]
    pub classes: ClassSource,
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    /// Hierarchy as JSON or in the `parent: child, ...` line format.
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Components such as `base` or `context,attributes,description`.
    #[arg(long)]
    pub components: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct FuseArgs {
    #[arg(long)]
    pub videos: PathBuf,
    /// JSONL of {video_id, descriptions}.
    #[arg(long)]
    pub descriptions: Option<PathBuf>,
    /// Action mode filters descriptions; the other modes fuse them all.
    #[arg(long, value_enum, default_value = "action")]
    pub mode: Mode,
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long)]
    pub filter_k: Option<usize>,
    /// Fixed beta2 instead of the video-description cosine.
    #[arg(long)]
    pub beta2: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    /// Directory written by `classifier build`.
    #[arg(long)]
    pub classifier: PathBuf,
    #[arg(long)]
    pub videos: PathBuf,
    /// JSONL of {video_id, label}.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub videos: PathBuf,
    /// JSONL of {id, caption, generated}; `id` is the paired video.
    #[arg(long)]
    pub captions: PathBuf,
    /// Generate this many paraphrases for captions that have none.
    #[arg(long)]
    pub augment: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct TimeEvalArgs {
    #[arg(long)]
    pub videos: PathBuf,
    #[arg(long)]
    pub attractors: PathBuf,
    #[arg(long)]
    pub distractors: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub descriptors: PathBuf,
    #[arg(long)]
    pub videos: PathBuf,
    #[arg(long)]
    pub video: String,
    /// Class to explain; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "md,csv,svg")]
    pub format: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    /// JSON ablation grid.
    #[arg(long)]
    pub grid: PathBuf,
    #[command(flatten)]
    pub classes: ClassSource,
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    #[arg(long)]
    pub videos: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Named description source, `name=path.jsonl`; repeatable.
    #[arg(long = "descriptions")]
    pub descriptions: Vec<String>,
}

fn out(ctx: &Ctx, name: &str) -> PathBuf {
    ctx.global.out.join(name)
}

fn embedder(ctx: &Ctx) -> Result<CachingEmbedder<Box<dyn TextEmbedder>>> {
    Ok(CachingEmbedder::new(ctx.config.embedder()?))
}

fn write_metrics(ctx: &Ctx, report: &EvalReport) -> Result<()> {
    write_json(report, &out(ctx, "metrics.json"))?;
    for (k, v) in &report.metrics {
        println!("{k}\t{v}");
    }
    Ok(())
}

pub fn descriptors(ctx: &Ctx, cmd: &DescriptorsCmd) -> Result<Value> {
    let DescriptorsCmd::Gen(a) = cmd;
    let classes = a.classes.load()?;
    let client = ctx.config.text_client()?;
    let sets = classes
        .par_iter()
        .map(|c| client.generate_descriptor_set(c))
        .collect::<Result<Vec<_>, _>>()?;
    let map: BTreeMap<_, _> = sets.into_iter().map(|s| (s.class_name.clone(), s)).collect();
    write_descriptors(&map, &out(ctx, "descriptors.json"))?;
    log::info!("wrote descriptors for {} classes", map.len());
    Ok(json!({"text_llm": client.stats(), "backend": client.config().backend_id()}))
}

pub fn hierarchy(ctx: &Ctx, cmd: &HierarchyCmd) -> Result<Value> {
    let HierarchyCmd::Gen(a) = cmd;
    let classes = a.classes.load()?;
    let (response, stats) = if a.bundled {
        let d = a.classes.dataset()?.context("--bundled needs --dataset")?;
        (d.hierarchy_text().to_string(), None)
    } else {
        let client = ctx.config.text_client()?;
        (client.generate_hierarchy(&classes)?, Some(client.stats()))
    };
    let map = parse_hierarchy(&response, &classes)?;
    fs::write(out(ctx, "hierarchy_response.txt"), &response).context("writing hierarchy_response.txt")?;
    write_hierarchy(&map, &out(ctx, "hierarchy.json"))?;
    Ok(json!({"text_llm": stats, "contexts": map.parents.len()}))
}

pub fn videodesc(ctx: &Ctx, cmd: &VideodescCmd) -> Result<Value> {
    let VideodescCmd::Gen(a) = cmd;
    let store = load_store("--videos", &a.videos)?;
    let n = a.n.unwrap_or(match a.mode {
        Mode::Action => ctx.config.n_descriptions_action,
        Mode::Retrieval | Mode::Time => ctx.config.n_descriptions_retrieval,
    });
    ensure!(n >= 1, "--n must be at least 1");
    let client = ctx.config.video_client()?;
    let temperature = ctx.config.video_llm.temperature;
    let records = store
        .ids()
        .par_iter()
        .map(|id| {
            Ok(VideoDescriptions {
                video_id: id.clone(),
                descriptions: client.generate_video_descriptions(id, n, temperature)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(&records, &out(ctx, "video_descriptions.jsonl"))?;
    Ok(json!({"video_llm": client.stats(), "backend": client.config().backend_id(), "n": n}))
}

pub fn classifier(ctx: &Ctx, cmd: &ClassifierCmd) -> Result<Value> {
    let ClassifierCmd::Build(a) = cmd;
    let classes = a.classes.load()?;
    let descriptors = load_descriptors("--descriptors", a.descriptors.as_deref())?;
    let hierarchy = load_hierarchy("--hierarchy", a.hierarchy.as_deref(), &classes)?;
    let components = match &a.components {
        Some(c) => parse_component_list(c).context("--components")?,
        None => ctx.config.component_set()?,
    };
    let e = embedder(ctx)?;
    let matrix = build_classifier(&classes, &descriptors, hierarchy.as_ref(), &components, &e, ctx.config.batch_size)?;
    if !matrix.meta.fallbacks.is_empty() {
        log::warn!("{} classes fell back to the base prompt", matrix.meta.fallbacks.len());
    }
    matrix.save(&out(ctx, CLASSIFIER_DIR))?;
    Ok(json!({
        "embedder": e.id(),
        "components": components_label(&components),
        "fallbacks": matrix.meta.fallbacks,
    }))
}

/// Embeds each distinct text once.
fn embed_texts<E: TextEmbedder + ?Sized>(
    texts: impl IntoIterator<Item = String>,
    e: &E,
    batch: usize,
) -> Result<HashMap<String, EmbeddingVector>> {
    let mut unique: Vec<String> = texts.into_iter().collect();
    unique.sort();
    unique.dedup();
    let vecs = embed_batched(&unique, e, batch)?;
    Ok(unique.into_iter().zip(vecs).collect())
}

pub fn fuse(ctx: &Ctx, a: &FuseArgs) -> Result<Value> {
    let videos = load_videos("--videos", &a.videos)?;
    let descriptions = match &a.descriptions {
        Some(p) => load_descriptions("--descriptions", p)?,
        None => HashMap::new(),
    };
    let known: std::collections::HashSet<&str> = videos.iter().map(|(id, _)| id.as_str()).collect();
    if let Some(id) = descriptions.keys().filter(|id| !known.contains(id.as_str())).min() {
        bail!("--descriptions: unknown video id {id:?}");
    }
    let mut config = FusionConfig {
        filtering_enabled: a.mode == Mode::Action && ctx.config.fusion.filtering_enabled && !a.no_filter,
        ..ctx.config.fusion.clone()
    };
    if let Some(k) = a.filter_k {
        config.filter_k = k;
    }
    if let Some(b) = a.beta2 {
        config.beta2_mode = Beta2Mode::Fixed(b);
    }
    config.validate().context("fusion settings")?;

    let e = embedder(ctx)?;
    let table = embed_texts(descriptions.values().flatten().cloned(), &e, ctx.config.batch_size)?;
    let fused = videos
        .par_iter()
        .map(|(id, v)| {
            let descs: Vec<EmbeddingVector> = descriptions
                .get(id)
                .map(|ds| ds.iter().map(|d| table[d].clone()).collect())
                .unwrap_or_default();
            fuse_video(id, v, &descs, &config).with_context(|| format!("video {id:?}"))
        })
        .collect::<Result<Vec<_>>>()?;

    let ids: Vec<String> = fused.iter().map(|f| f.video_id.clone()).collect();
    let rows: Vec<EmbeddingVector> = fused.iter().map(|f| f.vector.clone()).collect();
    save_store(&EmbeddingStore::from_vectors(ids, &rows)?, &out(ctx, FUSED_DIR))?;
    let records: Vec<FusedRecord> = fused
        .into_iter()
        .map(|f| FusedRecord {
            video_id: f.video_id,
            beta2_used: f.beta2_used,
            descriptions_kept: f.descriptions_kept,
        })
        .collect();
    write_jsonl(&records, &out(ctx, "fused.jsonl"))?;
    Ok(json!({"embedder": e.id(), "fusion": config, "mode": a.mode}))
}

pub fn classify(ctx: &Ctx, a: &ClassifyArgs) -> Result<Value> {
    let matrix = ClassifierMatrix::load(require("--classifier", &a.classifier)?).context("--classifier")?;
    let videos = load_videos("--videos", &a.videos)?;
    if let Some((_, v)) = videos.first() {
        ensure!(
            v.dim() == matrix.dim(),
            "--videos: dimension {} does not match the classifier's {}",
            v.dim(),
            matrix.dim()
        );
    }
    let labels = a.labels.as_deref().map(|p| load_labels("--labels", p)).transpose()?;
    let predictions = classify_all(&videos, &matrix, 0)?;

    let records: Vec<PredictionRecord> = predictions
        .iter()
        .map(|p| PredictionRecord {
            video_id: p.video_id.clone(),
            predicted: p.predicted_class.clone(),
            score: p.score,
            label: labels.as_ref().and_then(|l| l.get(&p.video_id).cloned()),
        })
        .collect();
    write_jsonl(&records, &out(ctx, "predictions.jsonl"))?;

    let mut metrics = BTreeMap::new();
    if let Some(l) = &labels {
        metrics.insert("top1_accuracy".to_string(), top1_accuracy(&predictions, l).context("--labels")?);
    }
    if !predictions.is_empty() {
        metrics.insert(
            "mean_score".to_string(),
            predictions.iter().map(|p| p.score).sum::<f64>() / predictions.len() as f64,
        );
    }
    write_metrics(
        ctx,
        &EvalReport {
            mode: Mode::Action.as_str().into(),
            count: predictions.len(),
            metrics,
            notes: BTreeMap::new(),
            config: json!({
                "classes": matrix.len(),
                "components": matrix.meta.components_used,
                "embedder": matrix.meta.embedder,
                "template_version": matrix.meta.template_version,
            }),
        },
    )?;
    Ok(json!({"classes": matrix.len()}))
}

pub fn retrieve(ctx: &Ctx, a: &RetrieveArgs) -> Result<Value> {
    let videos = load_videos("--videos", &a.videos)?;
    let mut captions: Vec<CaptionRecord> = read_jsonl(require("--captions", &a.captions)?).context("--captions")?;
    vp_core::store::ensure_unique(captions.iter().map(|c| c.id.as_str())).context("--captions")?;
    let video_ids: HashMap<&str, usize> = videos.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    if let Some(c) = captions.iter().find(|c| !video_ids.contains_key(c.id.as_str())) {
        bail!("--captions: caption {:?} has no video in --videos", c.id);
    }

    let mut stats = None;
    if let Some(n) = a.augment.filter(|&n| n > 0) {
        let client = ctx.config.text_client()?;
        let generated = captions
            .par_iter()
            .map(|c| {
                if c.generated.is_empty() {
                    Ok(Some(client.augment_caption(&c.caption, n)?.captions))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for (c, g) in captions.iter_mut().zip(generated) {
            if let Some(g) = g {
                c.generated = g;
            }
        }
        write_jsonl(&captions, &out(ctx, "captions_augmented.jsonl"))?;
        stats = Some(client.stats());
    }

    let e = embedder(ctx)?;
    // Warms the memo in batches; the per-caption calls below are lookups.
    embed_texts(
        captions.iter().flat_map(|c| std::iter::once(c.caption.clone()).chain(c.generated.iter().cloned())),
        &e,
        ctx.config.batch_size,
    )?;
    let text_side = captions
        .par_iter()
        .map(|c| Ok((c.id.clone(), build_caption_representation(&c.caption, &c.generated, &e)?)))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = text_side.iter().map(|(id, _)| id.clone()).collect();
    let rows: Vec<EmbeddingVector> = text_side.iter().map(|(_, v)| v.clone()).collect();
    save_store(&EmbeddingStore::from_vectors(ids, &rows)?, &out(ctx, CAPTIONS_DIR))?;

    let truth: HashMap<String, String> = captions.iter().map(|c| (c.id.clone(), c.id.clone())).collect();
    let paired: Vec<(String, EmbeddingVector)> =
        captions.iter().map(|c| videos[video_ids[c.id.as_str()]].clone()).collect();
    let t2v = recall_at_k(&text_side, &videos, &truth, &a.ks)?;
    let v2t = recall_at_k(&paired, &text_side, &truth, &a.ks)?;
    let mut metrics = BTreeMap::new();
    for (k, r) in &t2v {
        metrics.insert(format!("t2v_R@{k}"), *r);
    }
    for (k, r) in &v2t {
        metrics.insert(format!("v2t_R@{k}"), *r);
    }
    write_metrics(
        ctx,
        &EvalReport {
            mode: Mode::Retrieval.as_str().into(),
            count: captions.len(),
            metrics,
            notes: BTreeMap::from([(
                "gallery".to_string(),
                format!("{} videos, {} captions", videos.len(), captions.len()),
            )]),
            config: json!({"embedder": e.id(), "ks": a.ks, "augment": a.augment}),
        },
    )?;
    Ok(json!({"text_llm": stats, "embedder": e.id()}))
}

pub fn time_eval(ctx: &Ctx, a: &TimeEvalArgs) -> Result<Value> {
    let videos = load_store("--videos", &a.videos)?;
    let attractors = load_store("--attractors", &a.attractors)?;
    let distractors = load_store("--distractors", &a.distractors)?;
    let score = time_consistency(&videos, &attractors, &distractors)?;
    write_metrics(
        ctx,
        &EvalReport {
            mode: Mode::Time.as_str().into(),
            count: videos.len(),
            metrics: BTreeMap::from([("time_consistency".to_string(), score)]),
            notes: BTreeMap::from([("definition".to_string(), TIME_CONSISTENCY_DEFINITION.to_string())]),
            config: json!({"dim": videos.dim()}),
        },
    )?;
    Ok(Value::Null)
}

pub fn explain(ctx: &Ctx, a: &ExplainArgs) -> Result<Value> {
    let descriptors = load_descriptors("--descriptors", Some(&a.descriptors))?;
    let store = load_store("--videos", &a.videos)?;
    let video = store.vector(&a.video).with_context(|| format!("--video {:?}", a.video))?;
    let matrix = a
        .classifier
        .as_deref()
        .map(|p| ClassifierMatrix::load(require("--classifier", p)?).context("--classifier"))
        .transpose()?;
    let predicted = matrix
        .as_ref()
        .map(|m| vp_core::eval::classify(&a.video, &video, m))
        .transpose()?;
    let class = match (&a.class, &predicted) {
        (Some(c), _) => c.clone(),
        (None, Some(p)) => p.predicted_class.clone(),
        (None, None) => bail!("--class or --classifier is required"),
    };
    let set = descriptors
        .get(&class)
        .with_context(|| format!("--descriptors: no entry for class {class:?}"))?;
    let formats = a
        .format
        .iter()
        .map(|f| f.parse::<ReportFormat>())
        .collect::<Result<Vec<_>, _>>()
        .context("--format")?;

    let e = embedder(ctx)?;
    let class_score = match &matrix {
        Some(m) => {
            let i = m.index_of(&class).with_context(|| format!("--classifier: no class {class:?}"))?;
            Some(cosine(&video, &m.rows[i])?)
        }
        None => None,
    };
    let report = AttributionReport {
        video_id: a.video.clone(),
        class_name: class,
        predicted_class: predicted.map(|p| p.predicted_class),
        class_score,
        contributions: attribute_contributions(&video, set, &e)?,
    };
    let files = formats
        .into_iter()
        .map(|f| emit_report(&report, &ctx.global.out, f))
        .collect::<Result<Vec<_>, _>>()?;
    for f in &files {
        println!("{}", f.display());
    }
    Ok(json!({"embedder": e.id(), "files": files}))
}

pub fn ablate(ctx: &Ctx, a: &AblateArgs) -> Result<Value> {
    let grid: AblationGrid = read_json(require("--grid", &a.grid)?).context("--grid")?;
    let classes = a.classes.load()?;
    let mut description_sets = BTreeMap::new();
    for spec in &a.descriptions {
        let (name, path) = spec
            .split_once('=')
            .with_context(|| format!("--descriptions {spec:?}: expected name=path"))?;
        ensure!(
            name != vp_core::eval::ablation::NO_DESCRIPTIONS,
            "--descriptions: the name {name:?} is reserved"
        );
        description_sets.insert(name.to_string(), load_descriptions("--descriptions", path.as_ref())?);
    }
    let data = AblationData {
        descriptors: load_descriptors("--descriptors", a.descriptors.as_deref())?,
        hierarchy: load_hierarchy("--hierarchy", a.hierarchy.as_deref(), &classes)?,
        classes,
        videos: load_videos("--videos", &a.videos)?,
        labels: load_labels("--labels", &a.labels)?,
        description_sets,
    };
    let e = embedder(ctx)?;
    let table = run_ablation(&grid, &ctx.config.fusion, &ctx.config.components, &data, &e, ctx.config.batch_size)?;
    let csv_path = out(ctx, "ablation.csv");
    let file = fs::File::create(&csv_path).with_context(|| csv_path.display().to_string())?;
    table.write_csv(file).context("writing ablation.csv")?;
    write_json(&table, &out(ctx, "ablation.json"))?;
    let failed = table.cells.iter().filter(|c| !c.ok).count();
    if failed > 0 {
        log::warn!("{failed} of {} ablation cells failed", table.cells.len());
    }
    println!("{} cells, {} failed", table.cells.len(), failed);
    Ok(json!({"embedder": e.id(), "cells": table.cells.len(), "failed": failed}))
}
