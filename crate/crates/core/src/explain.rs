//! Per-attribute explanations of a classification.
//!
//! Each attribute string of a class is embedded on its own and scored
//! against the video vector; the sorted scores show which visual cues the
//! class row shares with the video.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, TextEmbedder};
use crate::types::DescriptorSet;
use crate::vector::{cosine, EmbeddingVector, VectorError};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("class {0:?} has no attributes to explain")]
    NoAttributes(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("unknown report format {0:?} (expected md, csv or svg)")]
    UnknownFormat(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeContribution {
    pub attribute: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub video_id: String,
    pub class_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_score: Option<f64>,
    /// Descending by score; equal scores keep attribute order.
    pub contributions: Vec<AttributeContribution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Markdown => "md",
            Self::Csv => "csv",
            Self::Svg => "svg",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ExplainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "svg" => Ok(Self::Svg),
            other => Err(ExplainError::UnknownFormat(other.to_string())),
        }
    }
}

/// Scores each raw attribute string of `descriptors` against `video`.
pub fn attribute_contributions<E: TextEmbedder + ?Sized>(
    video: &EmbeddingVector,
    descriptors: &DescriptorSet,
    embedder: &E,
) -> Result<Vec<AttributeContribution>, ExplainError> {
    if descriptors.attributes.is_empty() {
        return Err(ExplainError::NoAttributes(descriptors.class_name.clone()));
    }
    let embedded = embedder.embed(&descriptors.attributes)?;
    let mut out = descriptors
        .attributes
        .iter()
        .zip(&embedded)
        .map(|(a, e)| {
            Ok(AttributeContribution {
                attribute: a.clone(),
                score: cosine(video, e)?,
            })
        })
        .collect::<Result<Vec<_>, VectorError>>()?;
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

fn file_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn report_file_name(report: &AttributionReport, format: ReportFormat) -> String {
    format!(
        "explain_{}_{}.{}",
        file_component(&report.video_id),
        file_component(&report.class_name),
        format.extension()
    )
}

pub fn render_markdown(report: &AttributionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} / {}\n", report.video_id, report.class_name);
    if let Some(p) = &report.predicted_class {
        let _ = writeln!(s, "Predicted class: {p}");
    }
    if let Some(score) = report.class_score {
        let _ = writeln!(s, "Class score: {score:.6}");
    }
    s.push_str("\n| rank | attribute | cosine |\n|---:|---|---:|\n");
    for (i, c) in report.contributions.iter().enumerate() {
        let _ = writeln!(s, "| {} | {} | {:.6} |", i + 1, c.attribute.replace('|', "\\|"), c.score);
    }
    s
}

pub fn render_csv(report: &AttributionReport) -> Result<String, ExplainError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "attribute", "score"])?;
    for (i, c) in report.contributions.iter().enumerate() {
        w.write_record([(i + 1).to_string(), c.attribute.clone(), c.score.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| ExplainError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const BAR_HEIGHT: usize = 20;
const BAR_GAP: usize = 6;
const LABEL_WIDTH: usize = 260;
const BAR_MAX: f64 = 300.0;

/// Horizontal bar chart with exactly one `rect` per attribute. Bar length is
/// the cosine clipped at zero.
pub fn render_svg(report: &AttributionReport) -> String {
    let rows = report.contributions.len();
    let top = 30;
    let height = top + rows * (BAR_HEIGHT + BAR_GAP) + 10;
    let width = LABEL_WIDTH + BAR_MAX as usize + 90;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="4" y="18" font-weight="bold">{} / {}</text>"#,
        xml_escape(&report.video_id),
        xml_escape(&report.class_name)
    );
    for (i, c) in report.contributions.iter().enumerate() {
        let y = top + i * (BAR_HEIGHT + BAR_GAP);
        let w = (c.score.max(0.0) * BAR_MAX).round();
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - 6,
            y + 14,
            xml_escape(&c.attribute)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{LABEL_WIDTH}\" y=\"{y}\" width=\"{w}\" height=\"{BAR_HEIGHT}\" fill=\"#4c78a8\"><title>{:.6}</title></rect>",
            c.score
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{:.4}</text>"#,
            LABEL_WIDTH as f64 + w + 4.0,
            y + 14,
            c.score
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the report into `dir` and returns the file path.
pub fn emit_report(report: &AttributionReport, dir: &Path, format: ReportFormat) -> Result<PathBuf, ExplainError> {
    let body = match format {
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Csv => render_csv(report)?,
        ReportFormat::Svg => render_svg(report),
    };
    fs::create_dir_all(dir).map_err(|source| ExplainError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(report_file_name(report, format));
    fs::write(&path, body).map_err(|source| ExplainError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
