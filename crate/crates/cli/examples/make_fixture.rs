//! Regenerates `fixtures/` deterministically.
//!
//! `synthetic/`: four classes, 24 videos placed near the mock embedding of
//! each class's base prompt, with descriptions, labels, captions and
//! attractor/distractor stores.
//!
//! `two_class/`: two classes whose base prompts embed to the same vector and
//! whose attributes point at the true class centroids; texts are served by a
//! precomputed store so the construction is exact.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vp_core::classifier::base_prompt;
use vp_core::embed::MockEmbedder;
use vp_core::store::{write_descriptors, write_json, write_jsonl, write_store, CaptionRecord, LabelRecord, VideoDescriptions};
use vp_core::types::{DescriptorSet, Provenance};
use vp_core::vector::{normalize, EmbeddingVector};

const DIM: usize = 64;
const CLASSES: [&str; 4] = ["archery", "drumming", "hopscotch", "juggling balls"];
const PER_CLASS: usize = 6;

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(values: &[f64]) -> EmbeddingVector {
    normalize(&EmbeddingVector::from_f64(values).unwrap()).unwrap()
}

fn blend(base: &EmbeddingVector, noise: &[f64], scale: f64) -> EmbeddingVector {
    let v: Vec<f64> = base.as_slice().iter().zip(noise).map(|(&b, n)| b as f64 + scale * n).collect();
    unit(&v)
}

fn synthetic(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(20240501);
    let embedder = MockEmbedder::new(DIM);
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("classes.txt"), CLASSES.join("\n") + "\n").unwrap();

    let mut ids = Vec::new();
    let mut videos = Vec::new();
    let mut attractors = Vec::new();
    let mut distractors = Vec::new();
    let mut labels = Vec::new();
    let mut descriptions = Vec::new();
    let mut captions = Vec::new();
    for class in CLASSES {
        let anchor = embedder.embed_one(&base_prompt(class).unwrap());
        for j in 0..PER_CLASS {
            let id = format!("{}_{j:02}", class.replace(' ', "_"));
            let noise = gaussian(&mut rng, DIM);
            let v = blend(&anchor, &noise, 0.12);
            let a_noise = gaussian(&mut rng, DIM);
            attractors.push(blend(&v, &a_noise, 0.2));
            distractors.push(unit(&gaussian(&mut rng, DIM)));
            videos.push(v);
            labels.push(LabelRecord {
                video_id: id.clone(),
                label: class.to_string(),
            });
            descriptions.push(VideoDescriptions {
                video_id: id.clone(),
                descriptions: vec![
                    format!("a person is {class} in clip {j}"),
                    format!("someone practising {class}"),
                    "a blurry scene with people moving".to_string(),
                    format!("close-up of {class} equipment"),
                ],
            });
            captions.push(CaptionRecord {
                id: id.clone(),
                caption: format!("a short video of {class}, take {j}"),
                generated: vec![],
            });
            ids.push(id);
        }
    }
    write_store(&ids, &videos, &dir.join("videos")).unwrap();
    write_store(&ids, &attractors, &dir.join("attractors")).unwrap();
    write_store(&ids, &distractors, &dir.join("distractors")).unwrap();
    write_jsonl(&labels, &dir.join("labels.jsonl")).unwrap();
    write_jsonl(&descriptions, &dir.join("video_descriptions.jsonl")).unwrap();
    write_jsonl(&captions, &dir.join("captions.jsonl")).unwrap();
    write_json(
        &serde_json::json!({
            "components": ["base", "base+attributes", "context+attributes+description"],
            "filtering": [true, false],
            "description_source": ["none", "vgpt"],
        }),
        &dir.join("grid.json"),
    )
    .unwrap();
}

fn two_class(dir: &Path) {
    const D: usize = 8;
    let axis = |i: usize| {
        let mut v = vec![0.0f32; D];
        v[i] = 1.0;
        v
    };
    let classes = ["left turn", "right turn"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join("classes.txt"), classes.join("\n") + "\n").unwrap();

    // Both base prompts share one direction; attributes point at the class
    // centroids e0 and e1.
    let mut text_ids = Vec::new();
    let mut text_rows = Vec::new();
    let mut sets = BTreeMap::new();
    for (i, class) in classes.iter().enumerate() {
        text_ids.push(base_prompt(class).unwrap());
        text_rows.push(axis(2));
        let attr = format!("{} cues", class.split(' ').next().unwrap());
        text_ids.push(attr.clone());
        text_rows.push(axis(i));
        sets.insert(
            class.to_string(),
            DescriptorSet {
                class_name: class.to_string(),
                attributes: vec![attr],
                description: None,
                parent_context: None,
                provenance: Provenance {
                    backend: "fixture".into(),
                    model: "constructed".into(),
                    temperature: 0.0,
                    template_version: vp_core::genclient::TEMPLATE_VERSION,
                },
            },
        );
    }
    write_store(&text_ids, &text_rows, &dir.join("texts")).unwrap();
    write_descriptors(&sets, &dir.join("descriptors.json")).unwrap();

    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, class) in classes.iter().enumerate() {
        for j in 0..5 {
            let mut v: Vec<f64> = (0..D).map(|k| if k >= 3 { 0.1 * rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
            v[i] = 1.0;
            let id = format!("{}_{j}", class.replace(' ', "_"));
            rows.push(unit(&v));
            labels.push(LabelRecord {
                video_id: id.clone(),
                label: class.to_string(),
            });
            ids.push(id);
        }
    }
    write_store(&ids, &rows, &dir.join("videos")).unwrap();
    write_jsonl(&labels, &dir.join("labels.jsonl")).unwrap();
    write_json(
        &serde_json::json!({"embedder": {"kind": "store", "store_path": "texts"}}),
        &dir.join("config.json"),
    )
    .unwrap();
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    synthetic(&root.join("synthetic"));
    two_class(&root.join("two_class"));
    println!("fixtures written under {}", root.display());
}
