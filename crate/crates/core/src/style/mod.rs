//! Gram-based style descriptors and style tokens.

pub mod gram;
pub mod tokens;

pub use gram::{channel_projection, gram_global, gram_local, gram_matrix, partition_patches, GramMatrix, LocalGram, PatchGeometry};
pub use tokens::{StyleTokenSet, StyleTokenizer};
