//! Embedding providers.
//!
//! Text and image encoders are frozen and pluggable behind traits: a real
//! vision-language backend can be wired in by an embedding host, while the
//! deterministic toy backend makes end-to-end synthetic runs possible on a
//! CPU. The 3D proposal encoder is the trainable part: point sampling, a
//! point backbone, and a transformer over the scene's proposal tokens.

mod point3d;
mod toy;

pub use point3d::{sample_point_indices, ProposalEncoder, SaLevel};
pub use toy::{ToyImageEncoder, ToyTextEncoder};

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::matrix::Matrix;
use crate::scene::{CategoryVocabulary, Frame};
use crate::projection::Region2D;

/// Which embedding set a matrix of vectors represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    TextQuery,
    TextCategory,
    ImageRegion,
    PointProposal,
}

/// n x d embeddings for one modality. Construction rejects non-finite
/// entries.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub modality: Modality,
    pub vectors: Matrix,
}

impl EmbeddingSet {
    pub fn new(modality: Modality, vectors: Matrix) -> Result<Self, EncoderError> {
        if !vectors.is_finite() {
            return Err(EncoderError::NonFinite { modality });
        }
        Ok(Self { modality, vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.vectors.cols()
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EncoderError {
    #[error("vlm backend unavailable: {reason}")]
    BackendUnavailable { reason: String },
    #[error("toy backend needs d >= K, got d = {d} with {k} categories")]
    VocabularyTooLarge { d: usize, k: usize },
    #[error("non-finite value in {modality:?} embeddings")]
    NonFinite { modality: Modality },
    #[error("region references unknown frame {frame_id}")]
    UnknownFrame { frame_id: u32 },
    #[error("frame {frame_id} carries no raster data")]
    MissingRaster { frame_id: u32 },
    #[error("degenerate region rect after clamping")]
    DegenerateRegion,
    #[error("region crop contains no recognizable category pixels")]
    EmptyRegion,
    #[error("invalid encoder config: {reason}")]
    InvalidConfig { reason: String },
}

/// Frozen text encoder: one d-vector per input string. Implementations must
/// be deterministic per (backend, text) and never mutate under encoding; the
/// checksum witnesses that.
pub trait TextEncoder {
    fn embedding_dim(&self) -> usize;

    fn encode_text(&self, texts: &[&str], modality: Modality) -> Result<EmbeddingSet, EncoderError>;

    /// Digest of the provider's frozen state.
    fn checksum(&self) -> u64;
}

/// Frozen image encoder over cropped 2D regions. Per-region failures are
/// reported individually so the caller can exclude those proposals.
pub trait ImageEncoder {
    fn embedding_dim(&self) -> usize;

    fn encode_regions(
        &self,
        frames: &[Frame],
        regions: &[Region2D],
    ) -> Vec<Result<Vec<f64>, EncoderError>>;

    fn checksum(&self) -> u64;
}

/// Frozen provider backend selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Backend {
    /// A real vision-language model; requires an external embedding host.
    Vlm,
    /// Deterministic test double sharing a text/image embedding space.
    #[default]
    Toy,
}

/// Point backbone selection for the 3D encoder.
#[derive(Clone, Debug, PartialEq)]
pub enum PointBackbone {
    /// Shared two-layer MLP over points followed by max pooling; the fast
    /// CPU configuration.
    SharedMlp { hidden: usize },
    /// Two-level hierarchical set abstraction (farthest-point sampling,
    /// neighborhood grouping, shared MLPs, per-group max pooling).
    SetAbstraction { level1: SaLevel, level2: SaLevel },
}

impl Default for PointBackbone {
    fn default() -> Self {
        PointBackbone::SetAbstraction {
            level1: SaLevel { centroids: 256, neighbors: 16, hidden: 64 },
            level2: SaLevel { centroids: 64, neighbors: 8, hidden: 128 },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub backend: Backend,
    pub d: usize,
    pub point_sample_count: usize,
    pub transformer_layers: usize,
    pub transformer_heads: usize,
    pub seed: u64,
    pub backbone: PointBackbone,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Toy,
            d: 512,
            point_sample_count: 1024,
            transformer_layers: 3,
            transformer_heads: 8,
            seed: 0,
            backbone: PointBackbone::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.d < 2 {
            return Err(EncoderError::InvalidConfig { reason: "d must be at least 2".into() });
        }
        if self.point_sample_count < 1 {
            return Err(EncoderError::InvalidConfig {
                reason: "point_sample_count must be at least 1".into(),
            });
        }
        if self.transformer_layers >= 1 && !self.d.is_multiple_of(self.transformer_heads) {
            return Err(EncoderError::InvalidConfig {
                reason: alloc::format!(
                    "transformer_heads ({}) must divide d ({})",
                    self.transformer_heads,
                    self.d
                ),
            });
        }
        Ok(())
    }
}

/// The frozen provider pair used by one run.
pub struct Providers {
    pub text: Box<dyn TextEncoder>,
    pub image: Box<dyn ImageEncoder>,
}

impl Providers {
    /// Combined digest of both frozen providers.
    pub fn checksum(&self) -> u64 {
        self.text.checksum() ^ self.image.checksum().rotate_left(17)
    }
}

/// Build the frozen providers for a config. The vlm backend has no embedded
/// weights in this build and fails loudly rather than falling back.
pub fn build_providers(
    config: &EncoderConfig,
    vocab: &CategoryVocabulary,
) -> Result<Providers, EncoderError> {
    config.validate()?;
    match config.backend {
        Backend::Toy => {
            let text = ToyTextEncoder::new(config.d, config.seed, vocab.clone())?;
            let image = ToyImageEncoder::new(config.d, config.seed, vocab.clone())?;
            Ok(Providers { text: Box::new(text), image: Box::new(image) })
        }
        Backend::Vlm => Err(EncoderError::BackendUnavailable {
            reason: "no vision-language weights are bundled; configure the toy backend or \
                     supply an external embedding host"
                .into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synthetic_vocabulary;

    #[test]
    fn vlm_backend_fails_loudly() {
        let config = EncoderConfig { backend: Backend::Vlm, d: 16, ..Default::default() };
        match build_providers(&config, &synthetic_vocabulary(4)) {
            Err(EncoderError::BackendUnavailable { .. }) => {}
            Err(other) => panic!("expected BackendUnavailable, got {other:?}"),
            Ok(_) => panic!("vlm backend must not silently fall back"),
        }
    }

    #[test]
    fn heads_must_divide_d() {
        let config = EncoderConfig { d: 10, transformer_heads: 4, ..Default::default() };
        assert!(config.validate().is_err());
    }
}
