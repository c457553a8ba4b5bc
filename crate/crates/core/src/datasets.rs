//! Bundled class lists and high-level action contexts for the standard
//! benchmarks.
//!
//! Hierarchy files use the line format `parent: child, child, ...` and are
//! parsed with the same lenient matcher as LLM responses, so spelling
//! variants such as `hand stand` or `flicflac` resolve to the canonical class.
//! Classes a hierarchy file does not mention land in `other`.

use std::fmt;
use std::str::FromStr;

use crate::genclient::{parse_hierarchy, GenError};
use crate::types::HierarchyMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dataset {
    Hmdb51,
    Ucf101,
    K400,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::Hmdb51, Dataset::Ucf101, Dataset::K400];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hmdb51 => "hmdb51",
            Self::Ucf101 => "ucf101",
            Self::K400 => "k400",
        }
    }

    /// Canonical class names, one per line in the bundled file.
    pub fn classes(self) -> Vec<String> {
        let raw = match self {
            Self::Hmdb51 => include_str!("../data/classes_hmdb51.txt"),
            Self::Ucf101 => include_str!("../data/classes_ucf101.txt"),
            Self::K400 => include_str!("../data/classes_k400.txt"),
        };
        raw.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
    }

    pub fn hierarchy_text(self) -> &'static str {
        match self {
            Self::Hmdb51 => include_str!("../data/hierarchy_hmdb51.txt"),
            Self::Ucf101 => include_str!("../data/hierarchy_ucf101.txt"),
            Self::K400 => include_str!("../data/hierarchy_k400.txt"),
        }
    }

    /// Completed hierarchy over [`Dataset::classes`].
    pub fn hierarchy(self) -> Result<HierarchyMap, GenError> {
        parse_hierarchy(self.hierarchy_text(), &self.classes())
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hmdb51" | "hmdb" => Ok(Self::Hmdb51),
            "ucf101" | "ucf" => Ok(Self::Ucf101),
            "k400" | "kinetics400" => Ok(Self::K400),
            other => Err(format!("unknown dataset {other:?}")),
        }
    }
}
