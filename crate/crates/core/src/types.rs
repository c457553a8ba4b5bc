//! Domain records shared across the pipeline stages.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vector::EmbeddingVector;

/// Name of the catch-all hierarchy bucket.
pub const OTHER_PARENT: &str = "other";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("invalid class name {0:?}")]
    InvalidClassName(String),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("class {class:?} assigned to both {first:?} and {second:?}")]
    DuplicateAssignment {
        class: String,
        first: String,
        second: String,
    },
    #[error("class {0:?} missing from hierarchy")]
    MissingClass(String),
    #[error("hierarchy names unknown class {0:?}")]
    UnknownClass(String),
    #[error("duplicate video id {0:?}")]
    DuplicateVideo(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub embedding: EmbeddingVector,
    pub descriptions: Vec<String>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub index: usize,
}

/// Builds contiguously indexed class entries, rejecting blank or repeated names.
pub fn class_entries<S: AsRef<str>>(names: &[S]) -> Result<Vec<ClassEntry>, DomainError> {
    let mut seen = HashSet::new();
    names
        .iter()
        .enumerate()
        .map(|(index, name)| {
            let name = name.as_ref().trim();
            if name.is_empty() {
                return Err(DomainError::InvalidClassName(name.to_string()));
            }
            if !seen.insert(name.to_string()) {
                return Err(DomainError::DuplicateClass(name.to_string()));
            }
            Ok(ClassEntry {
                name: name.to_string(),
                index,
            })
        })
        .collect()
}

/// Where a descriptor set came from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    pub model: String,
    pub temperature: f64,
    pub template_version: u32,
}

/// LLM output for one class: visual attributes, a how-it-is-performed
/// description and an optional high-level parent context.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorSet {
    pub class_name: String,
    pub attributes: Vec<String>,
    /// `None` when the backend returned nothing usable.
    pub description: Option<String>,
    pub parent_context: Option<String>,
    pub provenance: Provenance,
}

impl DescriptorSet {
    /// The attributes as the single comma-joined string that gets embedded.
    pub fn attributes_text(&self) -> Option<String> {
        if self.attributes.is_empty() {
            None
        } else {
            Some(self.attributes.join(", "))
        }
    }
}

/// Key used to match class names between free-form LLM output and the
/// dataset's class list: case-folded, with whitespace and underscores removed.
pub fn class_key(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && *c != '_')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Parent context -> member classes. Every class sits under exactly one parent
/// and the `other` bucket is always present.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HierarchyMap {
    pub parents: BTreeMap<String, Vec<String>>,
}

impl HierarchyMap {
    /// Checks the map against `classes` and files every unlisted class under
    /// `other`. Member names are rewritten to the dataset's spelling.
    pub fn completed<S: AsRef<str>>(
        parents: BTreeMap<String, Vec<String>>,
        classes: &[S],
    ) -> Result<Self, DomainError> {
        let lookup: HashMap<String, &str> = classes
            .iter()
            .map(|c| (class_key(c.as_ref()), c.as_ref()))
            .collect();
        let mut owner: HashMap<&str, String> = HashMap::new();
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (parent, members) in parents {
            let parent = normalize_parent(&parent);
            let bucket = out.entry(parent.clone()).or_default();
            for member in members {
                let canonical = *lookup
                    .get(&class_key(&member))
                    .ok_or_else(|| DomainError::UnknownClass(member.clone()))?;
                match owner.get(canonical) {
                    Some(first) if *first == parent => continue,
                    Some(first) => {
                        return Err(DomainError::DuplicateAssignment {
                            class: canonical.to_string(),
                            first: first.clone(),
                            second: parent,
                        })
                    }
                    None => {}
                }
                owner.insert(canonical, parent.clone());
                bucket.push(canonical.to_string());
            }
        }
        let other = out.entry(OTHER_PARENT.to_string()).or_default();
        for class in classes {
            if !owner.contains_key(class.as_ref()) {
                other.push(class.as_ref().to_string());
            }
        }
        Ok(Self { parents: out })
    }

    /// Strict check: every class exactly once, nothing unknown, `other` present.
    pub fn validate<S: AsRef<str>>(&self, classes: &[S]) -> Result<(), DomainError> {
        let wanted: HashSet<&str> = classes.iter().map(|c| c.as_ref()).collect();
        let mut seen: HashMap<&str, &str> = HashMap::new();
        for (parent, members) in &self.parents {
            for m in members {
                if !wanted.contains(m.as_str()) {
                    return Err(DomainError::UnknownClass(m.clone()));
                }
                if let Some(first) = seen.insert(m, parent) {
                    return Err(DomainError::DuplicateAssignment {
                        class: m.clone(),
                        first: first.to_string(),
                        second: parent.clone(),
                    });
                }
            }
        }
        if let Some(missing) = classes.iter().find(|c| !seen.contains_key(c.as_ref())) {
            return Err(DomainError::MissingClass(missing.as_ref().to_string()));
        }
        if !self.parents.contains_key(OTHER_PARENT) {
            return Err(DomainError::MissingClass(OTHER_PARENT.to_string()));
        }
        Ok(())
    }

    pub fn parent_of(&self, class: &str) -> Option<&str> {
        self.parents
            .iter()
            .find(|(_, members)| members.iter().any(|m| m == class))
            .map(|(p, _)| p.as_str())
    }

    pub fn class_count(&self) -> usize {
        self.parents.values().map(Vec::len).sum()
    }
}

/// Lower-cases a parent label and folds "others" into the `other` bucket.
pub fn normalize_parent(parent: &str) -> String {
    let p = parent.trim().to_lowercase();
    match p.as_str() {
        "others" | "other" | "other activities" => OTHER_PARENT.to_string(),
        _ => p,
    }
}
