//! Zero-shot video understanding with language-enriched embeddings.
//!
//! Both sides of a vision-language similarity are enriched without any
//! training: query videos are fused with embeddings of generated descriptions
//! of themselves, and class prompts are averaged with LLM-generated
//! attributes, descriptions and high-level action contexts.

pub mod classifier;
pub mod datasets;
pub mod embed;
pub mod eval;
pub mod explain;
pub mod fusion;
pub mod genclient;
pub mod store;
pub mod types;
pub mod vector;

pub use vector::{cosine, normalize, renorm_mean, EmbeddingVector, VectorError};
