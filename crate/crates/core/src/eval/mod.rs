//! Zero-shot classification, bidirectional retrieval recall, temporal
//! consistency, and the ablation grid runner.
//!
//! Everything here is exact brute force with fixed tie rules (lower class or
//! gallery index wins), so results are reproducible bit for bit regardless of
//! how many workers score the items.

pub mod ablation;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifierMatrix;
use crate::store::{EmbeddingStore, StoreError};
use crate::vector::{cosine_slices, EmbeddingVector, VectorError};

pub use ablation::{run_ablation, AblationCell, AblationData, AblationGrid, AblationTable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("classifier has no rows")]
    EmptyClassifier,
    #[error("no label for video {0:?}")]
    MissingLabel(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("recall cut-off must be at least 1")]
    InvalidK,
    #[error("nothing to evaluate")]
    Empty,
    #[error("ablation grid has no lattice points")]
    EmptyGrid,
    #[error("invalid ablation grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub predicted_class: String,
    pub predicted_index: usize,
    pub score: f64,
    /// Top-m classes by descending score, ties by ascending class index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranked: Option<Vec<(String, f64)>>,
}

fn class_scores(vector: &EmbeddingVector, classifier: &ClassifierMatrix) -> Result<Vec<f64>, EvalError> {
    if classifier.is_empty() {
        return Err(EvalError::EmptyClassifier);
    }
    classifier
        .rows
        .iter()
        .map(|row| cosine_slices(vector.as_slice(), row.as_slice()).map_err(EvalError::from))
        .collect()
}

/// Nearest class by cosine. Ties go to the lowest class index.
pub fn classify(video_id: &str, vector: &EmbeddingVector, classifier: &ClassifierMatrix) -> Result<Prediction, EvalError> {
    classify_ranked(video_id, vector, classifier, 0)
}

/// Like [`classify`], also keeping the `top_m` best classes when `top_m > 0`.
pub fn classify_ranked(
    video_id: &str,
    vector: &EmbeddingVector,
    classifier: &ClassifierMatrix,
    top_m: usize,
) -> Result<Prediction, EvalError> {
    let scores = class_scores(vector, classifier)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    let ranked = (top_m > 0).then(|| {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        order
            .into_iter()
            .take(top_m)
            .map(|i| (classifier.class_name(i).to_string(), scores[i]))
            .collect()
    });
    Ok(Prediction {
        video_id: video_id.to_string(),
        predicted_class: classifier.class_name(best).to_string(),
        predicted_index: best,
        score: scores[best],
        ranked,
    })
}

/// Classifies every video; output order follows input order.
pub fn classify_all(
    videos: &[(String, EmbeddingVector)],
    classifier: &ClassifierMatrix,
    top_m: usize,
) -> Result<Vec<Prediction>, EvalError> {
    videos
        .par_iter()
        .map(|(id, v)| classify_ranked(id, v, classifier, top_m))
        .collect()
}

/// Fraction of predictions whose class equals the video's label.
pub fn top1_accuracy(predictions: &[Prediction], labels: &HashMap<String, String>) -> Result<f64, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut correct = 0usize;
    for p in predictions {
        let label = labels
            .get(&p.video_id)
            .ok_or_else(|| EvalError::MissingLabel(p.video_id.clone()))?;
        if *label == p.predicted_class {
            correct += 1;
        }
    }
    Ok(correct as f64 / predictions.len() as f64)
}

/// 1-based rank of each query's ground-truth gallery item under descending
/// cosine, ties broken by ascending gallery index.
pub fn ground_truth_ranks(
    queries: &[(String, EmbeddingVector)],
    gallery: &[(String, EmbeddingVector)],
    ground_truth: &HashMap<String, String>,
) -> Result<Vec<usize>, EvalError> {
    let position: HashMap<&str, usize> = gallery.iter().enumerate().map(|(i, (id, _))| (id.as_str(), i)).collect();
    queries
        .par_iter()
        .map(|(qid, q)| {
            let gt_id = ground_truth.get(qid).ok_or_else(|| EvalError::UnknownId(qid.clone()))?;
            let gt = *position.get(gt_id.as_str()).ok_or_else(|| EvalError::UnknownId(gt_id.clone()))?;
            let gt_score = cosine_slices(q.as_slice(), gallery[gt].1.as_slice())?;
            let mut rank = 1;
            for (j, (_, g)) in gallery.iter().enumerate() {
                if j == gt {
                    continue;
                }
                let s = cosine_slices(q.as_slice(), g.as_slice())?;
                if s > gt_score || (s == gt_score && j < gt) {
                    rank += 1;
                }
            }
            Ok(rank)
        })
        .collect()
}

/// R@K for every requested cut-off.
pub fn recall_at_k(
    queries: &[(String, EmbeddingVector)],
    gallery: &[(String, EmbeddingVector)],
    ground_truth: &HashMap<String, String>,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>, EvalError> {
    if ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    if queries.is_empty() {
        return Err(EvalError::Empty);
    }
    let ranks = ground_truth_ranks(queries, gallery, ground_truth)?;
    Ok(recall_from_ranks(&ranks, ks))
}

pub fn recall_from_ranks(ranks: &[usize], ks: &[usize]) -> BTreeMap<usize, f64> {
    ks.iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, hits as f64 / ranks.len() as f64)
        })
        .collect()
}

/// 1 if the attractor is closer to the video than the distractor, 0.5 on a
/// tie, 0 otherwise.
pub fn triple_score(video: &[f32], attractor: &[f32], distractor: &[f32]) -> Result<f64, EvalError> {
    let a = cosine_slices(video, attractor)?;
    let d = cosine_slices(video, distractor)?;
    Ok(if a > d {
        1.0
    } else if a == d {
        0.5
    } else {
        0.0
    })
}

/// Mean of [`triple_score`] over aligned triples.
pub fn time_consistency_triples<V: AsRef<[f32]> + Sync>(triples: &[(V, V, V)]) -> Result<f64, EvalError> {
    if triples.is_empty() {
        return Err(EvalError::Empty);
    }
    let scores = triples
        .par_iter()
        .map(|(v, a, d)| triple_score(v.as_ref(), a.as_ref(), d.as_ref()))
        .collect::<Result<Vec<f64>, _>>()?;
    // Scores are multiples of 1/2, so twice their sum is an exact integer.
    let units = scores.iter().map(|s| (s * 2.0) as u64).sum::<u64>();
    Ok(half_unit_mean(units, 2 * triples.len() as u64))
}

/// `units / total`, evaluated so that `half_unit_mean(total - u, total)` is
/// exactly `1 - half_unit_mean(u, total)`: the larger of the pair is divided,
/// the smaller obtained by an exact subtraction from 1.
fn half_unit_mean(units: u64, total: u64) -> f64 {
    if 2 * units >= total {
        units as f64 / total as f64
    } else {
        1.0 - (total - units) as f64 / total as f64
    }
}

/// Time-consistency over three stores aligned by id; iterates the video
/// store's ids in order.
pub fn time_consistency(
    videos: &EmbeddingStore,
    attractors: &EmbeddingStore,
    distractors: &EmbeddingStore,
) -> Result<f64, EvalError> {
    let triples = videos
        .ids()
        .iter()
        .map(|id| {
            let a = attractors.get(id).map_err(|_| EvalError::UnknownId(id.clone()))?;
            let d = distractors.get(id).map_err(|_| EvalError::UnknownId(id.clone()))?;
            Ok((videos.get(id)?, a, d))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    time_consistency_triples(&triples)
}

/// What `metrics.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub count: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
    pub config: serde_json::Value,
}

pub const TIME_CONSISTENCY_DEFINITION: &str =
    "mean over (video, attractor, distractor) of 1 if cos(v,a) > cos(v,d), 0.5 if equal, else 0";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ClassifierMeta, ComponentSet};
    use crate::types::class_entries;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn matrix(rows: Vec<EmbeddingVector>) -> ClassifierMatrix {
        let names: Vec<String> = (0..rows.len()).map(|i| format!("c{i}")).collect();
        ClassifierMatrix {
            classes: class_entries(&names).unwrap(),
            meta: ClassifierMeta {
                classes: names,
                components_used: ComponentSet::new(),
                fallbacks: vec![],
                embedder: String::new(),
                template_version: 1,
                texts: BTreeMap::new(),
            },
            rows,
        }
    }

    #[test]
    fn single_class() {
        let m = matrix(vec![ev(&[1.0, 1.0])]);
        let p = classify("v", &ev(&[1.0, 0.0]), &m).unwrap();
        assert_eq!(p.predicted_class, "c0");
        assert!((p.score - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
    }

    #[test]
    fn identical_rows_pick_lower_index() {
        let m = matrix(vec![ev(&[0.0, 1.0]), ev(&[1.0, 0.0]), ev(&[1.0, 0.0])]);
        let p = classify_ranked("v", &ev(&[1.0, 0.0]), &m, 3).unwrap();
        assert_eq!(p.predicted_index, 1);
        let ranked: Vec<&str> = p.ranked.as_ref().unwrap().iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(ranked, vec!["c1", "c2", "c0"]);
    }

    #[test]
    fn dim_mismatch_and_empty() {
        let m = matrix(vec![ev(&[1.0, 0.0])]);
        assert!(matches!(classify("v", &ev(&[1.0]), &m), Err(EvalError::Vector(_))));
        let empty = matrix(vec![]);
        assert!(matches!(classify("v", &ev(&[1.0]), &empty), Err(EvalError::EmptyClassifier)));
    }

    fn preds(classes: &[&str]) -> Vec<Prediction> {
        classes
            .iter()
            .enumerate()
            .map(|(i, c)| Prediction {
                video_id: format!("v{i}"),
                predicted_class: c.to_string(),
                predicted_index: 0,
                score: 0.0,
                ranked: None,
            })
            .collect()
    }

    #[test]
    fn accuracy_counts() {
        let labels: HashMap<String, String> =
            (0..4).map(|i| (format!("v{i}"), "a".to_string())).collect();
        assert_eq!(top1_accuracy(&preds(&["a", "a", "a", "a"]), &labels).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&preds(&["b", "b", "b", "b"]), &labels).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&preds(&["a", "a", "b", "a"]), &labels).unwrap(), 0.75);
        let partial: HashMap<String, String> = [("v0".to_string(), "a".to_string())].into();
        assert!(matches!(top1_accuracy(&preds(&["a", "a"]), &partial), Err(EvalError::MissingLabel(_))));
    }

    #[test]
    fn self_retrieval_and_large_k() {
        let items: Vec<(String, EmbeddingVector)> = vec![
            ("a".into(), ev(&[1.0, 0.0, 0.0])),
            ("b".into(), ev(&[0.0, 1.0, 0.0])),
            ("c".into(), ev(&[0.0, 0.0, 1.0])),
        ];
        let gt: HashMap<String, String> = items.iter().map(|(i, _)| (i.clone(), i.clone())).collect();
        let r = recall_at_k(&items, &items, &gt, &[1, 3, 10]).unwrap();
        assert_eq!(r[&1], 1.0);
        assert_eq!(r[&10], 1.0);
        assert!(matches!(recall_at_k(&items, &items, &gt, &[0]), Err(EvalError::InvalidK)));
        let bad: HashMap<String, String> = [("a".to_string(), "zz".to_string())].into();
        assert!(matches!(recall_at_k(&items[..1], &items, &bad, &[1]), Err(EvalError::UnknownId(_))));
    }

    #[test]
    fn tied_gallery_ranks_by_index() {
        let gallery: Vec<(String, EmbeddingVector)> =
            vec![("x".into(), ev(&[1.0, 0.0])), ("y".into(), ev(&[1.0, 0.0]))];
        let queries = vec![("q".to_string(), ev(&[1.0, 0.0]))];
        let gt: HashMap<String, String> = [("q".to_string(), "y".to_string())].into();
        assert_eq!(ground_truth_ranks(&queries, &gallery, &gt).unwrap(), vec![2]);
    }

    #[test]
    fn time_consistency_rules() {
        let v = ev(&[1.0, 0.0]);
        let o = ev(&[0.0, 1.0]);
        let dominant = vec![(v.clone(), v.clone(), o.clone()); 4];
        assert_eq!(time_consistency_triples(&dominant).unwrap(), 1.0);
        let tied = vec![(v.clone(), o.clone(), o.clone()); 3];
        assert_eq!(time_consistency_triples(&tied).unwrap(), 0.5);
        let mixed = vec![(v.clone(), v.clone(), o.clone()), (v.clone(), o.clone(), v.clone()), (v.clone(), o.clone(), v)];
        assert!((time_consistency_triples(&mixed).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn half_unit_mean_is_antisymmetric() {
        for total in 1..200u64 {
            for u in 0..=total {
                assert_eq!(half_unit_mean(total - u, total), 1.0 - half_unit_mean(u, total));
            }
        }
    }
}
