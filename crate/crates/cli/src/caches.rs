//! Offline preprocessing caches.
//!
//! Per scene: `regions.json`, an array of
//! `{proposal_id, frame_id, rect: [x, y, w, h], visible_point_count}` for
//! every proposal that projects into some frame. Optionally `f2d.bin`, the
//! frozen 2D embeddings of those regions (rows in `regions.json` order), so
//! training never touches pixels. At the dataset root: `categories.bin`
//! (frozen category embeddings) and `preprocess_manifest.json` carrying the
//! provenance stamp.
//!
//! Embedding cache binary: magic `PGEC`, u32 version, u32 modality, u64 n,
//! u64 d, then n*d f32-LE values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use pointground_core::encoders::Modality;
use pointground_core::geometry::Rect;
use pointground_core::matrix::Matrix;
use pointground_core::projection::Region2D;
use pointground_core::scene::Scene;
use serde::{Deserialize, Serialize};

use crate::Provenance;

pub const EMBED_MAGIC: &[u8; 4] = b"PGEC";
pub const EMBED_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl CacheError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.display().to_string(), message: message.into() }
    }
}

#[derive(Serialize, Deserialize)]
struct RegionRecord {
    proposal_id: u32,
    frame_id: u32,
    rect: [f64; 4],
    visible_point_count: usize,
}

/// Write the per-scene region cache: one record per proposal with a region,
/// in proposal order.
pub fn write_regions(
    cache_dir: &Path,
    scene: &Scene,
    regions: &[Option<Region2D>],
) -> Result<(), CacheError> {
    fs::create_dir_all(cache_dir).map_err(|e| CacheError::io(cache_dir, e))?;
    let records: Vec<RegionRecord> = scene
        .proposals
        .iter()
        .zip(regions)
        .filter_map(|(p, r)| {
            r.map(|r| RegionRecord {
                proposal_id: p.proposal_id,
                frame_id: r.frame_id,
                rect: [r.rect.x, r.rect.y, r.rect.w, r.rect.h],
                visible_point_count: r.visible_point_count,
            })
        })
        .collect();
    let path = cache_dir.join("regions.json");
    let text = serde_json::to_string_pretty(&records)
        .map_err(|e| CacheError::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CacheError::io(&path, e))
}

/// Read the region cache back, aligned to the scene's proposal list.
pub fn read_regions(cache_dir: &Path, scene: &Scene) -> Result<Vec<Option<Region2D>>, CacheError> {
    let path = cache_dir.join("regions.json");
    let text = fs::read_to_string(&path).map_err(|e| CacheError::io(&path, e))?;
    let records: Vec<RegionRecord> =
        serde_json::from_str(&text).map_err(|e| CacheError::format(&path, e.to_string()))?;
    let mut out = vec![None; scene.proposals.len()];
    for r in records {
        let Some(index) = scene.proposal_index(r.proposal_id) else {
            return Err(CacheError::format(
                &path,
                format!("cached proposal {} not present in scene", r.proposal_id),
            ));
        };
        out[index] = Some(Region2D {
            frame_id: r.frame_id,
            rect: Rect::new(r.rect[0], r.rect[1], r.rect[2], r.rect[3]),
            visible_point_count: r.visible_point_count,
        });
    }
    Ok(out)
}

pub fn regions_cached(cache_dir: &Path) -> bool {
    cache_dir.join("regions.json").exists()
}

/// Serialize an embedding matrix (header + f32 payload).
pub fn write_embeddings(path: &Path, modality: Modality, m: &Matrix) -> Result<(), CacheError> {
    let mut file = fs::File::create(path).map_err(|e| CacheError::io(path, e))?;
    let mut bytes = Vec::with_capacity(24 + m.values().len() * 4);
    bytes.extend_from_slice(EMBED_MAGIC);
    bytes.extend_from_slice(&EMBED_VERSION.to_le_bytes());
    bytes.extend_from_slice(&modality_code(modality).to_le_bytes());
    bytes.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    file.write_all(&bytes).map_err(|e| CacheError::io(path, e))
}

/// Read an embedding cache; the modality must match.
pub fn read_embeddings(path: &Path, expect: Modality) -> Result<Matrix, CacheError> {
    let mut file = fs::File::open(path).map_err(|e| CacheError::io(path, e))?;
    let mut header = [0u8; 28];
    file.read_exact(&mut header).map_err(|e| CacheError::io(path, e))?;
    if &header[0..4] != EMBED_MAGIC {
        return Err(CacheError::format(path, "bad magic"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != EMBED_VERSION {
        return Err(CacheError::format(path, format!("unsupported version {version}")));
    }
    let modality = u32::from_le_bytes(header[8..12].try_into().unwrap());
    if modality != modality_code(expect) {
        return Err(CacheError::format(
            path,
            format!("modality {} but expected {}", modality, modality_code(expect)),
        ));
    }
    let n = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(header[20..28].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| CacheError::io(path, e))?;
    if bytes.len() != n * d * 4 {
        return Err(CacheError::format(path, format!("expected {} f32 values", n * d)));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Matrix::from_vec(n, d, data))
}

fn modality_code(m: Modality) -> u32 {
    match m {
        Modality::TextQuery => 0,
        Modality::TextCategory => 1,
        Modality::ImageRegion => 2,
        Modality::PointProposal => 3,
    }
}

#[derive(Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub provenance: Provenance,
    pub extension_mode: String,
    pub use_depth_visibility: bool,
    pub embed_cache: bool,
    pub scenes: Vec<String>,
}

pub fn write_manifest(root: &Path, manifest: &PreprocessManifest) -> Result<(), CacheError> {
    let path = root.join("preprocess_manifest.json");
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CacheError::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| CacheError::io(&path, e))
}
