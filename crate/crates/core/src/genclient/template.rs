//! Prompt templates for the generative backends and the text encoder.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::GenError;

/// Bumped whenever any template text changes; part of every cache key.
pub const TEMPLATE_VERSION: u32 = 1;

pub const CLASS_NAME: &str = "class-name";
pub const CLASS_NAMES: &str = "class-names";
pub const INPUT_CAPTION: &str = "input caption";
pub const PARENT: &str = "parent";
/// Not a placeholder: identifies the video attached to a video-to-text request.
pub const VIDEO_ID: &str = "video-id";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Attributes,
    Description,
    Hierarchy,
    CaptionAugment,
    VideoDesc,
    BasePrompt,
    ContextPrompt,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::Attributes,
        TemplateId::Description,
        TemplateId::Hierarchy,
        TemplateId::CaptionAugment,
        TemplateId::VideoDesc,
        TemplateId::BasePrompt,
        TemplateId::ContextPrompt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Attributes => "attributes",
            TemplateId::Description => "description",
            TemplateId::Hierarchy => "hierarchy",
            TemplateId::CaptionAugment => "caption_augment",
            TemplateId::VideoDesc => "video_desc",
            TemplateId::BasePrompt => "base_prompt",
            TemplateId::ContextPrompt => "context_prompt",
        }
    }

    pub fn template(self) -> PromptTemplate {
        let text = match self {
            TemplateId::Attributes => {
                "What are the distinct visual characteristics to identify a {class-name} video action?"
            }
            TemplateId::Description => "How {class-name} action is performed visually?",
            TemplateId::Hierarchy => {
                "Divide the list of {class-names} into parent and child classes. Such that actions \
                 that are visually similar to each other are in the same group. If the action is \
                 not similar to any other action in the list, assign it to others."
            }
            TemplateId::CaptionAugment => {
                "Given a caption: {input caption}, generate a visually similar captions."
            }
            TemplateId::VideoDesc => "describe the activity in the video",
            TemplateId::BasePrompt => "a photo of a {class-name}",
            TemplateId::ContextPrompt => "a photo of a {parent} i.e., {class-name}",
        };
        PromptTemplate {
            id: self,
            text,
            version: TEMPLATE_VERSION,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub text: &'static str,
    pub version: u32,
}

impl PromptTemplate {
    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.text;
        while let Some(start) = rest.find('{') {
            let after = &rest[start + 1..];
            match after.find('}') {
                Some(end) => {
                    out.push(&after[..end]);
                    rest = &after[end + 1..];
                }
                None => break,
            }
        }
        out
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<String, GenError> {
        let mut out = String::with_capacity(self.text.len() + 32);
        let mut rest = self.text;
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            let end = after.find('}').expect("templates have balanced braces");
            let name = &after[..end];
            let value = bindings
                .get(name)
                .ok_or_else(|| GenError::UnboundPlaceholder(name.to_string()))?;
            out.push_str(value);
            rest = &after[end + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Renders `id` with `bindings`; every placeholder must be bound.
pub fn render_prompt(id: TemplateId, bindings: &BTreeMap<String, String>) -> Result<String, GenError> {
    id.template().render(bindings)
}

/// Convenience for building binding maps in call sites and tests.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
