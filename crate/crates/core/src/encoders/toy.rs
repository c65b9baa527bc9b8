//! Deterministic toy frozen providers.
//!
//! The toy text encoder embeds category id `c` as basis vector `e_c` plus a
//! low-norm hash perturbation; free-form text is embedded as a weighted sum
//! of the basis vectors of every category label mentioned in it (earliest
//! mention dominates). The toy image encoder decodes a crop's dominant
//! category from the synthetic render palette and returns that label's text
//! embedding plus seeded noise, so 2D/text embeddings share one space the
//! same way a pretrained vision-language model's do.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::fmath;
use crate::matrix::Matrix;
use crate::params::{fnv_bytes, fnv_init, seeded_rng};
use crate::projection::Region2D;
use crate::scene::{category_color, CategoryVocabulary, Frame, Raster};

use super::{EmbeddingSet, EncoderError, ImageEncoder, Modality, TextEncoder};

/// Norm of the deterministic hash perturbation added to every embedding.
pub const PERTURBATION_NORM: f64 = 0.05;

/// Weight of category mentions after the first one.
const SECONDARY_MENTION_WEIGHT: f64 = 0.3;

/// Squared color distance below which a pixel counts as a palette color.
const PALETTE_MATCH_THRESHOLD: f32 = 0.01;

#[derive(Clone, Debug)]
pub struct ToyTextEncoder {
    d: usize,
    seed: u64,
    vocab: CategoryVocabulary,
    label_tokens: Vec<Vec<String>>,
}

impl ToyTextEncoder {
    pub fn new(d: usize, seed: u64, vocab: CategoryVocabulary) -> Result<Self, EncoderError> {
        if vocab.len() > d {
            return Err(EncoderError::VocabularyTooLarge { d, k: vocab.len() });
        }
        let label_tokens = vocab.labels().iter().map(|l| tokenize(l)).collect();
        Ok(Self { d, seed, vocab, label_tokens })
    }

    pub fn vocabulary(&self) -> &CategoryVocabulary {
        &self.vocab
    }

    /// Basis direction assigned to a category.
    fn category_direction(&self, category_id: usize) -> Vec<f64> {
        let mut v = alloc::vec![0.0; self.d];
        v[category_id] = 1.0;
        v
    }

    pub fn encode_one(&self, text: &str) -> Vec<f64> {
        let tokens = tokenize(text);
        // (first mention position, category id), earliest first.
        let mut mentions: Vec<(usize, usize)> = self
            .label_tokens
            .iter()
            .enumerate()
            .filter_map(|(c, label)| find_subsequence(&tokens, label).map(|pos| (pos, c)))
            .collect();
        mentions.sort_unstable();

        let mut out = alloc::vec![0.0; self.d];
        for (rank, &(_, c)) in mentions.iter().enumerate() {
            let w = if rank == 0 { 1.0 } else { SECONDARY_MENTION_WEIGHT };
            for (o, b) in out.iter_mut().zip(self.category_direction(c)) {
                *o += w * b;
            }
        }
        let mut h = fnv_init();
        h = fnv_bytes(h, &self.seed.to_le_bytes());
        h = fnv_bytes(h, text.as_bytes());
        for (o, p) in out.iter_mut().zip(hash_direction(h, self.d)) {
            *o += PERTURBATION_NORM * p;
        }
        out
    }
}

impl TextEncoder for ToyTextEncoder {
    fn embedding_dim(&self) -> usize {
        self.d
    }

    fn encode_text(&self, texts: &[&str], modality: Modality) -> Result<EmbeddingSet, EncoderError> {
        let mut data = Vec::with_capacity(texts.len() * self.d);
        for text in texts {
            data.extend(self.encode_one(text));
        }
        EmbeddingSet::new(modality, Matrix::from_vec(texts.len(), self.d, data))
    }

    fn checksum(&self) -> u64 {
        let mut h = fnv_init();
        h = fnv_bytes(h, b"toy-text");
        h = fnv_bytes(h, &(self.d as u64).to_le_bytes());
        h = fnv_bytes(h, &self.seed.to_le_bytes());
        for label in self.vocab.labels() {
            h = fnv_bytes(h, label.as_bytes());
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct ToyImageEncoder {
    d: usize,
    seed: u64,
    text: ToyTextEncoder,
    palette: Vec<[f32; 3]>,
}

impl ToyImageEncoder {
    pub fn new(d: usize, seed: u64, vocab: CategoryVocabulary) -> Result<Self, EncoderError> {
        let palette = (0..vocab.len() as u32).map(category_color).collect();
        let text = ToyTextEncoder::new(d, seed, vocab)?;
        Ok(Self { d, seed, text, palette })
    }

    /// Dominant palette category inside a crop, by pixel vote; background and
    /// off-palette pixels abstain.
    fn dominant_category(&self, raster: &Raster, x0: usize, y0: usize, x1: usize, y1: usize) -> Option<usize> {
        let mut counts = alloc::vec![0usize; self.palette.len()];
        for y in y0..y1 {
            for x in x0..x1 {
                let px = raster.pixel(x, y);
                let mut best: Option<(usize, f32)> = None;
                for (c, pal) in self.palette.iter().enumerate() {
                    let d2: f32 = px.iter().zip(pal).map(|(a, b)| (a - b) * (a - b)).sum();
                    if best.is_none_or(|(_, bd)| d2 < bd) {
                        best = Some((c, d2));
                    }
                }
                if let Some((c, d2)) = best {
                    if d2 <= PALETTE_MATCH_THRESHOLD {
                        counts[c] += 1;
                    }
                }
            }
        }
        let max = *counts.iter().max()?;
        if max == 0 {
            return None;
        }
        counts.iter().position(|&c| c == max)
    }
}

impl ImageEncoder for ToyImageEncoder {
    fn embedding_dim(&self) -> usize {
        self.d
    }

    fn encode_regions(
        &self,
        frames: &[Frame],
        regions: &[Region2D],
    ) -> Vec<Result<Vec<f64>, EncoderError>> {
        regions
            .iter()
            .map(|region| {
                let frame = frames
                    .iter()
                    .find(|f| f.frame_id == region.frame_id)
                    .ok_or(EncoderError::UnknownFrame { frame_id: region.frame_id })?;
                let raster = frame
                    .image
                    .as_ref()
                    .ok_or(EncoderError::MissingRaster { frame_id: region.frame_id })?;
                let rect = region.rect.clamp_to_image(frame.width as f64, frame.height as f64);
                let x0 = fmath::floor(rect.x) as usize;
                let y0 = fmath::floor(rect.y) as usize;
                let x1 = (fmath::ceil(rect.x + rect.w) as usize).min(frame.width);
                let y1 = (fmath::ceil(rect.y + rect.h) as usize).min(frame.height);
                if x0 >= x1 || y0 >= y1 {
                    return Err(EncoderError::DegenerateRegion);
                }
                let category = self
                    .dominant_category(raster, x0, y0, x1, y1)
                    .ok_or(EncoderError::EmptyRegion)?;
                let label = self.text.vocabulary().label(category as u32).expect("palette matches vocab");
                let mut v = self.text.encode_one(label);
                let mut h = fnv_init();
                h = fnv_bytes(h, b"toy-image");
                h = fnv_bytes(h, &self.seed.to_le_bytes());
                h = fnv_bytes(h, &region.frame_id.to_le_bytes());
                for coord in [rect.x, rect.y, rect.w, rect.h] {
                    h = fnv_bytes(h, &coord.to_le_bytes());
                }
                for (o, p) in v.iter_mut().zip(hash_direction(h, self.d)) {
                    *o += PERTURBATION_NORM * p;
                }
                Ok(v)
            })
            .collect()
    }

    fn checksum(&self) -> u64 {
        let mut h = fnv_init();
        h = fnv_bytes(h, b"toy-image");
        h = fnv_bytes(h, &self.text.checksum().to_le_bytes());
        for color in &self.palette {
            for ch in color {
                h = fnv_bytes(h, &ch.to_le_bytes());
            }
        }
        h
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn find_subsequence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || haystack.len() < needle.len() {
        return None;
    }
    (0..=haystack.len() - needle.len()).find(|&i| haystack[i..i + needle.len()] == *needle)
}

/// Unit vector derived from a hash; deterministic in the hash value.
fn hash_direction(hash: u64, d: usize) -> Vec<f64> {
    let mut rng = seeded_rng(hash, 0x7031);
    let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = fmath::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}
