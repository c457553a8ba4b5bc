//! Enriched class representations and caption representations.
//!
//! A class row is the normalized mean of the embeddings of its enabled
//! component texts: the photo prompt (or its context-prefixed variant), the
//! comma-joined attribute list and the how-it-is-performed description.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{EmbedError, TextEmbedder};
use crate::genclient::template::{self, TemplateId, CLASS_NAME, PARENT, TEMPLATE_VERSION};
use crate::store::{self, EmbeddingStore, StoreError};
use crate::types::{class_entries, ClassEntry, DescriptorSet, DomainError, HierarchyMap, OTHER_PARENT};
use crate::vector::{renorm_mean, EmbeddingVector, VectorError};

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const CLASSIFIER_META_FILE: &str = "classifier.json";

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid class name {0:?}")]
    InvalidClassName(String),
    #[error("no components enabled")]
    NoComponents,
    #[error("no classes")]
    NoClasses,
    #[error("unknown component {0:?}")]
    UnknownComponent(String),
    #[error(transparent)]
    Embedder(#[from] EmbedError),
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Base,
    Context,
    Attributes,
    Description,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Base => "base",
            Component::Context => "context",
            Component::Attributes => "attributes",
            Component::Description => "description",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = ClassifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "base" => Ok(Component::Base),
            "context" => Ok(Component::Context),
            "attributes" => Ok(Component::Attributes),
            "description" => Ok(Component::Description),
            other => Err(ClassifierError::UnknownComponent(other.to_string())),
        }
    }
}

pub type ComponentSet = BTreeSet<Component>;

/// Parses `"base,attributes,description"`.
pub fn parse_components(s: &str) -> Result<ComponentSet, ClassifierError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

pub fn components_label(c: &ComponentSet) -> String {
    c.iter().map(|c| c.as_str()).collect::<Vec<_>>().join("+")
}

pub fn base_prompt(class_name: &str) -> Result<String, ClassifierError> {
    let name = class_name.trim();
    if name.is_empty() {
        return Err(ClassifierError::InvalidClassName(class_name.to_string()));
    }
    Ok(template::render_prompt(TemplateId::BasePrompt, &template::bindings([(CLASS_NAME, name)]))
        .expect("base prompt binds every placeholder"))
}

/// `a photo of a {parent} i.e., {class}`. Callers must not pass the `other`
/// bucket; see [`component_texts`].
pub fn context_prompt(class_name: &str, parent: &str) -> Result<String, ClassifierError> {
    let name = class_name.trim();
    if name.is_empty() {
        return Err(ClassifierError::InvalidClassName(class_name.to_string()));
    }
    Ok(template::render_prompt(
        TemplateId::ContextPrompt,
        &template::bindings([(CLASS_NAME, name), (PARENT, parent.trim())]),
    )
    .expect("context prompt binds every placeholder"))
}

/// The texts to embed for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentTexts {
    pub texts: Vec<(Component, String)>,
    /// Set when nothing requested was available and the base prompt stood in.
    pub fell_back: bool,
}

pub fn component_texts(
    class_name: &str,
    descriptors: Option<&DescriptorSet>,
    hierarchy: Option<&HierarchyMap>,
    components: &ComponentSet,
) -> Result<ComponentTexts, ClassifierError> {
    if components.is_empty() {
        return Err(ClassifierError::NoComponents);
    }
    let base = base_prompt(class_name)?;
    let mut texts = Vec::new();
    if components.contains(&Component::Context) {
        let parent = hierarchy
            .and_then(|h| h.parent_of(class_name))
            .or_else(|| descriptors.and_then(|d| d.parent_context.as_deref()))
            .filter(|p| !p.trim().is_empty() && *p != OTHER_PARENT);
        let text = match parent {
            Some(p) => context_prompt(class_name, p)?,
            None => base.clone(),
        };
        texts.push((Component::Context, text));
    } else if components.contains(&Component::Base) {
        texts.push((Component::Base, base.clone()));
    }
    if components.contains(&Component::Attributes) {
        if let Some(a) = descriptors.and_then(DescriptorSet::attributes_text) {
            texts.push((Component::Attributes, a));
        }
    }
    if components.contains(&Component::Description) {
        if let Some(d) = descriptors.and_then(|d| d.description.clone()) {
            texts.push((Component::Description, d));
        }
    }
    let fell_back = texts.is_empty();
    if fell_back {
        texts.push((Component::Base, base));
    }
    Ok(ComponentTexts { texts, fell_back })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRepresentation {
    pub vector: EmbeddingVector,
    pub texts: ComponentTexts,
}

pub fn build_class_representation<E: TextEmbedder + ?Sized>(
    class_name: &str,
    descriptors: Option<&DescriptorSet>,
    hierarchy: Option<&HierarchyMap>,
    components: &ComponentSet,
    embedder: &E,
) -> Result<ClassRepresentation, ClassifierError> {
    let texts = component_texts(class_name, descriptors, hierarchy, components)?;
    let strings: Vec<String> = texts.texts.iter().map(|(_, t)| t.clone()).collect();
    let embs = embedder.embed(&strings)?;
    Ok(ClassRepresentation {
        vector: renorm_mean(&embs)?,
        texts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMeta {
    pub classes: Vec<String>,
    pub components_used: ComponentSet,
    /// Classes whose requested components were all missing.
    pub fallbacks: Vec<String>,
    pub embedder: String,
    pub template_version: u32,
    /// Exact texts embedded per class, for auditing.
    pub texts: BTreeMap<String, Vec<(Component, String)>>,
}

/// One unit row per class, aligned with class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierMatrix {
    pub classes: Vec<ClassEntry>,
    pub rows: Vec<EmbeddingVector>,
    pub meta: ClassifierMeta,
}

impl ClassifierMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, EmbeddingVector::dim)
    }

    pub fn class_name(&self, index: usize) -> &str {
        &self.classes[index].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn to_store(&self) -> Result<EmbeddingStore, StoreError> {
        EmbeddingStore::from_vectors(self.meta.classes.clone(), &self.rows)
    }

    /// Writes the rows as an embedding store plus `classifier.json`.
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        store::save_store(&self.to_store()?, dir)?;
        store::write_json(&self.meta, &dir.join(CLASSIFIER_META_FILE))
    }

    /// Loads a saved classifier; a bare store (ids = class names) also works.
    pub fn load(dir: &Path) -> Result<Self, ClassifierError> {
        let st = store::read_store(dir)?;
        let meta_path = dir.join(CLASSIFIER_META_FILE);
        let meta = if meta_path.exists() {
            store::read_json::<ClassifierMeta>(&meta_path)?
        } else {
            ClassifierMeta {
                classes: st.ids().to_vec(),
                components_used: ComponentSet::new(),
                fallbacks: Vec::new(),
                embedder: String::new(),
                template_version: TEMPLATE_VERSION,
                texts: BTreeMap::new(),
            }
        };
        Self::from_store(&st, meta)
    }

    pub fn from_store(st: &EmbeddingStore, meta: ClassifierMeta) -> Result<Self, ClassifierError> {
        let classes = class_entries(st.ids())?;
        let rows = st
            .rows()
            .take(st.len())
            .map(|r| EmbeddingVector::new(r.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        if rows.is_empty() {
            return Err(ClassifierError::NoClasses);
        }
        Ok(Self { classes, rows, meta })
    }
}

/// Embeds `texts` in fixed-size batches, in parallel when the embedder allows
/// it. Output order matches input order.
pub fn embed_batched<E: TextEmbedder + ?Sized>(
    texts: &[String],
    embedder: &E,
    batch_size: usize,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let chunks: Vec<&[String]> = texts.chunks(batch_size.max(1)).collect();
    let parts: Vec<Vec<EmbeddingVector>> = if embedder.concurrent() {
        chunks.par_iter().map(|c| embedder.embed(c)).collect::<Result<_, _>>()?
    } else {
        chunks.iter().map(|c| embedder.embed(c)).collect::<Result<_, _>>()?
    };
    Ok(parts.into_iter().flatten().collect())
}

pub fn build_classifier<S: AsRef<str>, E: TextEmbedder + ?Sized>(
    classes: &[S],
    descriptors: &BTreeMap<String, DescriptorSet>,
    hierarchy: Option<&HierarchyMap>,
    components: &ComponentSet,
    embedder: &E,
    batch_size: usize,
) -> Result<ClassifierMatrix, ClassifierError> {
    if classes.is_empty() {
        return Err(ClassifierError::NoClasses);
    }
    let entries = class_entries(classes)?;
    let per_class: Vec<ComponentTexts> = entries
        .iter()
        .map(|c| component_texts(&c.name, descriptors.get(&c.name), hierarchy, components))
        .collect::<Result<_, _>>()?;

    let mut unique: Vec<String> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for t in per_class.iter().flat_map(|c| c.texts.iter().map(|(_, t)| t.as_str())) {
        if !slot.contains_key(t) {
            slot.insert(t, unique.len());
            unique.push(t.to_string());
        }
    }
    let embedded = embed_batched(&unique, embedder, batch_size)?;

    let rows = per_class
        .iter()
        .map(|c| {
            let embs: Vec<&EmbeddingVector> =
                c.texts.iter().map(|(_, t)| &embedded[slot[t.as_str()]]).collect();
            renorm_mean(&embs)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let meta = ClassifierMeta {
        classes: entries.iter().map(|c| c.name.clone()).collect(),
        components_used: per_class
            .iter()
            .flat_map(|c| c.texts.iter().map(|(k, _)| *k))
            .collect(),
        fallbacks: entries
            .iter()
            .zip(&per_class)
            .filter(|(_, c)| c.fell_back)
            .map(|(e, _)| e.name.clone())
            .collect(),
        embedder: embedder.id(),
        template_version: TEMPLATE_VERSION,
        texts: entries
            .iter()
            .zip(&per_class)
            .map(|(e, c)| (e.name.clone(), c.texts.clone()))
            .collect(),
    };
    Ok(ClassifierMatrix {
        classes: entries,
        rows,
        meta,
    })
}

/// Normalized mean of the caption's embedding and those of its paraphrases.
pub fn build_caption_representation<E: TextEmbedder + ?Sized>(
    caption: &str,
    generated: &[String],
    embedder: &E,
) -> Result<EmbeddingVector, ClassifierError> {
    if caption.trim().is_empty() {
        return Err(ClassifierError::InvalidClassName(caption.to_string()));
    }
    let mut texts = Vec::with_capacity(generated.len() + 1);
    texts.push(caption.to_string());
    texts.extend(generated.iter().cloned());
    let embs = embedder.embed(&texts)?;
    Ok(renorm_mean(&embs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MockEmbedder;
    use crate::types::Provenance;

    fn set(class: &str, attrs: &[&str], desc: Option<&str>) -> DescriptorSet {
        DescriptorSet {
            class_name: class.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
            description: desc.map(str::to_string),
            parent_context: None,
            provenance: Provenance::default(),
        }
    }

    fn comps(c: &[Component]) -> ComponentSet {
        c.iter().copied().collect()
    }

    #[test]
    fn prompts() {
        assert_eq!(base_prompt("drumming").unwrap(), "a photo of a drumming");
        assert_eq!(base_prompt("hopscotch").unwrap(), "a photo of a hopscotch");
        assert!(matches!(base_prompt(""), Err(ClassifierError::InvalidClassName(_))));
        assert_eq!(
            context_prompt("drumming", "playing music").unwrap(),
            "a photo of a playing music i.e., drumming"
        );
        assert_eq!(
            context_prompt("hopscotch", "playing sports").unwrap(),
            "a photo of a playing sports i.e., hopscotch"
        );
    }

    #[test]
    fn context_replaces_base_and_other_falls_back() {
        let mut parents = BTreeMap::new();
        parents.insert("playing music".to_string(), vec!["drumming".to_string()]);
        parents.insert(OTHER_PARENT.to_string(), vec!["zzz".to_string()]);
        let h = HierarchyMap { parents };
        let c = comps(&[Component::Base, Component::Context]);
        let t = component_texts("drumming", None, Some(&h), &c).unwrap();
        assert_eq!(
            t.texts,
            vec![(Component::Context, "a photo of a playing music i.e., drumming".to_string())]
        );
        let t = component_texts("zzz", None, Some(&h), &c).unwrap();
        assert_eq!(t.texts, vec![(Component::Context, "a photo of a zzz".to_string())]);
    }

    #[test]
    fn base_only_equals_direct_embedding() {
        let e = MockEmbedder::new(16);
        let r = build_class_representation("drumming", None, None, &comps(&[Component::Base]), &e).unwrap();
        assert_eq!(r.vector, e.embed_one("a photo of a drumming"));
    }

    #[test]
    fn two_orthogonal_components_average() {
        let s = set("x", &["a1"], None);
        let e = MockEmbedder::new(2)
            .pin("a photo of a x", &[1.0, 0.0])
            .unwrap()
            .pin("a1", &[0.0, 1.0])
            .unwrap();
        let r = build_class_representation(
            "x",
            Some(&s),
            None,
            &comps(&[Component::Base, Component::Attributes]),
            &e,
        )
        .unwrap();
        for &v in r.vector.as_slice() {
            assert!((v as f64 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
        }
    }

    #[test]
    fn absent_descriptors_fall_back() {
        let e = MockEmbedder::new(16);
        let r = build_class_representation(
            "x",
            None,
            None,
            &comps(&[Component::Attributes, Component::Description]),
            &e,
        )
        .unwrap();
        assert!(r.texts.fell_back);
        assert_eq!(r.vector, e.embed_one("a photo of a x"));
    }

    #[test]
    fn attributes_are_comma_joined() {
        let s = set("hopscotch", &["grid markings", "hopping"], Some("d"));
        let t = component_texts("hopscotch", Some(&s), None, &comps(&[Component::Attributes])).unwrap();
        assert_eq!(t.texts, vec![(Component::Attributes, "grid markings, hopping".to_string())]);
    }

    #[test]
    fn classifier_is_deterministic_and_aligned() {
        let e = MockEmbedder::new(16);
        let classes = ["a", "b", "c"];
        let d = BTreeMap::new();
        let c = comps(&[Component::Base]);
        let m1 = build_classifier(&classes, &d, None, &c, &e, 2).unwrap();
        let m2 = build_classifier(&classes, &d, None, &c, &e, 64).unwrap();
        assert_eq!(m1.rows, m2.rows);
        for (i, name) in classes.iter().enumerate() {
            assert_eq!(m1.rows[i], e.embed_one(&format!("a photo of a {name}")));
            assert_eq!(m1.classes[i].index, i);
        }
    }

    #[test]
    fn caption_representation() {
        let e = MockEmbedder::new(2)
            .pin("c", &[1.0, 0.0])
            .unwrap()
            .pin("g", &[0.0, 1.0])
            .unwrap();
        assert_eq!(build_caption_representation("c", &[], &e).unwrap().as_slice(), &[1.0, 0.0]);
        let v = build_caption_representation("c", &["g".to_string()], &e).unwrap();
        assert!((v.as_slice()[0] as f64 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let e = MockEmbedder::new(8);
        let m = build_classifier(&["a", "b"], &BTreeMap::new(), None, &comps(&[Component::Base]), &e, 8).unwrap();
        m.save(&dir.path().join("clf")).unwrap();
        let back = ClassifierMatrix::load(&dir.path().join("clf")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn component_parsing() {
        assert_eq!(
            parse_components("base, attributes").unwrap(),
            comps(&[Component::Base, Component::Attributes])
        );
        assert!(parse_components("base,nope").is_err());
    }
}
