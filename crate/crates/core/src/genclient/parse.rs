//! Tolerant parsing of free-form backend output.

use std::collections::{BTreeMap, HashMap};

use crate::types::{class_key, normalize_parent, HierarchyMap};

use super::GenError;

/// Removes list decoration: bullets, `1.` / `1)` numbering, markdown emphasis
/// and surrounding quotes.
pub fn strip_decoration(s: &str) -> &str {
    let mut s = s.trim();
    loop {
        let before = s;
        for bullet in ["- ", "* ", "• ", "– ", "+ "] {
            s = s.strip_prefix(bullet).unwrap_or(s).trim_start();
        }
        let digits = s.len() - s.trim_start_matches(|c: char| c.is_ascii_digit()).len();
        if digits > 0 {
            let rest = &s[digits..];
            if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
                s = r.trim_start();
            }
        }
        s = s.trim_matches('*').trim();
        if s == before {
            break;
        }
    }
    s.trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}').trim()
}

/// Splits an attribute response on commas and newlines, dropping decoration,
/// trailing periods, blanks and repeats.
pub fn parse_attributes(response: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for piece in response.split(['\n', ',']) {
        let item = strip_decoration(piece).trim_end_matches('.').trim();
        if !item.is_empty() && !out.iter().any(|o| o == item) {
            out.push(item.to_string());
        }
    }
    out
}

/// First meaningful line of a caption response.
pub fn parse_caption(response: &str) -> Option<String> {
    response
        .lines()
        .map(strip_decoration)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

/// Parses `parent: child, child, ...` lines into a hierarchy over `classes`.
///
/// Matching of child names is case- and whitespace-insensitive. Names that are
/// not dataset classes are dropped with a warning; classes never mentioned are
/// filed under `other`. A class listed under two different parents is an
/// error.
pub fn parse_hierarchy<S: AsRef<str>>(response: &str, classes: &[S]) -> Result<HierarchyMap, GenError> {
    let known: HashMap<String, &str> = classes
        .iter()
        .map(|c| (class_key(c.as_ref()), c.as_ref()))
        .collect();
    let mut parents: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut owner: HashMap<&str, String> = HashMap::new();
    for line in response.lines() {
        let line = strip_decoration(line);
        let Some((parent, children)) = line.split_once(':') else {
            continue;
        };
        let parent = normalize_parent(strip_decoration(parent));
        if parent.is_empty() {
            continue;
        }
        let bucket = parents.entry(parent.clone()).or_default();
        for child in children.split(',') {
            let child = strip_decoration(child).trim_end_matches('.').trim();
            if child.is_empty() {
                continue;
            }
            let Some(&canonical) = known.get(&class_key(child)) else {
                log::warn!("hierarchy names unknown class {child:?}; ignored");
                continue;
            };
            match owner.get(canonical) {
                Some(p) if *p == parent => {}
                Some(p) => {
                    return Err(GenError::DuplicateAssignment {
                        class: canonical.to_string(),
                        first: p.clone(),
                        second: parent,
                    })
                }
                None => {
                    owner.insert(canonical, parent.clone());
                    bucket.push(canonical.to_string());
                }
            }
        }
    }
    HierarchyMap::completed(parents, classes).map_err(GenError::Domain)
}
