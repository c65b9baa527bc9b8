//! Weakly-supervised grounding of natural-language queries to 3D point-cloud
//! proposals.
//!
//! Training aligns a trainable 3D proposal encoder to a frozen text/image
//! embedding space: proposals are projected onto calibrated frames to find
//! their best 2D region, the frozen image encoder embeds those regions, and a
//! symmetric contrastive loss pulls each proposal embedding toward its paired
//! region embedding. Per-modality residual adapters plus coarse category
//! classification specialize the shared space to indoor scenes. No target
//! bounding box is ever consumed during training; only scene-level category
//! labels are.
//!
//! Inference is 2D-free: proposals are classified against adapted category
//! embeddings, filtered by the query's top-k predicted categories (with an
//! all-keep fallback), and ranked by inner product with the query embedding.
//!
//! This crate is `no_std` (with `alloc`) and does no IO: scenes, frames and
//! caches arrive as in-memory values. File formats and the command-line
//! pipeline live in the companion `pointground` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adaptation;
pub mod autodiff;
pub mod encoders;
pub mod evaluation;
pub mod fmath;
pub mod geometry;
pub mod inference;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod params;
pub mod projection;
pub mod scene;
pub mod training;

pub use matrix::Matrix;
pub use scene::{CategoryVocabulary, Frame, GroundingQuery, Proposal, Scene};
