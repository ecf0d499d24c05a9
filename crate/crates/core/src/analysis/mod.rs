//! Tactile property scores, latent embeddings and their correlation.

pub mod correlation;
pub mod embed;
pub mod scatter;
pub mod scores;

pub use correlation::{latent_property_correlation, spearman, CorrelationMatrix};
pub use embed::{embed_classifier, embed_materials, embed_with, material_scores, LatentEmbedding};
pub use scatter::emit_scatter;
pub use scores::{friction_score, hardness_score, roughness_score, PropertyScores, PROPERTIES};
