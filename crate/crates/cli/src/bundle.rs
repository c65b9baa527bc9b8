//! Scene bundle layout:
//!
//! ```text
//! <scene_id>/
//!   points.bin          u64-LE point count, then N x 6 f32-LE rows
//!                       (x, y, z meters; r, g, b in [0,1])
//!   proposals.json      [{id, point_indices, box_min, box_max, category_id?}]
//!   frames/<id>.png     RGB raster
//!   frames/<id>.cam.json  {intrinsics: 9 row-major, extrinsics: 16 row-major,
//!                          width, height}
//!   frames/<id>.depth.bin  optional, W*H f32-LE row-major meters
//!   queries.json        [{id, text, target_category_id, target_proposal_id?,
//!                         view_dependent?, distractor_count?}]
//!   categories.json     [label, ...]
//! ```
//!
//! Loads are deterministic: byte-identical bundles produce equal scenes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use pointground_core::geometry::{AxisAlignedBox3D, Mat3, Mat4, Vec3};
use pointground_core::scene::{
    CategoryVocabulary, DepthRaster, Frame, GroundingQuery, LoadMode, PointCloud, Proposal,
    Raster, Scene, ValidationError,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

impl BundleError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format { path: path.display().to_string(), message: message.into() }
    }
}

#[derive(Serialize, Deserialize)]
struct ProposalRecord {
    id: u32,
    point_indices: Vec<usize>,
    box_min: [f64; 3],
    box_max: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    category_id: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct CamRecord {
    intrinsics: Vec<f64>,
    extrinsics: Vec<f64>,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct QueryRecord {
    id: String,
    text: String,
    target_category_id: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    target_proposal_id: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    view_dependent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    distractor_count: Option<u32>,
}

/// Load one scene bundle. `mode` controls whether frames are required
/// (training) or optional (inference); validation runs either way.
/// Inference is 2D-free, so rasters and depth maps are not decoded in that
/// mode (calibration still loads).
pub fn load_scene_bundle(
    dir: &Path,
    mode: LoadMode,
) -> Result<(Scene, CategoryVocabulary), BundleError> {
    load_scene_bundle_with(dir, mode, mode == LoadMode::Training)
}

/// Like [`load_scene_bundle`] but with explicit control over raster
/// decoding; cached-embedding training skips pixels entirely.
pub fn load_scene_bundle_with(
    dir: &Path,
    mode: LoadMode,
    decode_rasters: bool,
) -> Result<(Scene, CategoryVocabulary), BundleError> {
    let scene_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());

    let points = read_points(&dir.join("points.bin"))?;
    let proposals = read_proposals(&dir.join("proposals.json"))?;
    let queries = read_queries(&dir.join("queries.json"))?;
    let vocab = read_categories(&dir.join("categories.json"))?;
    let frames = read_frames(&dir.join("frames"), mode, decode_rasters)?;

    let scene = Scene { scene_id, points, proposals, frames, queries };
    scene.validate(mode, Some(&vocab))?;
    Ok((scene, vocab))
}

/// Write a scene as a bundle under `dir` (created if needed).
pub fn write_scene_bundle(
    dir: &Path,
    scene: &Scene,
    vocab: &CategoryVocabulary,
) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(|e| BundleError::io(dir, e))?;
    write_points(&dir.join("points.bin"), &scene.points)?;

    let proposals: Vec<ProposalRecord> = scene
        .proposals
        .iter()
        .map(|p| ProposalRecord {
            id: p.proposal_id,
            point_indices: p.point_indices.clone(),
            box_min: [p.box3d.min.x, p.box3d.min.y, p.box3d.min.z],
            box_max: [p.box3d.max.x, p.box3d.max.y, p.box3d.max.z],
            category_id: p.category_id,
        })
        .collect();
    write_json(&dir.join("proposals.json"), &proposals)?;

    let queries: Vec<QueryRecord> = scene
        .queries
        .iter()
        .map(|q| QueryRecord {
            id: q.query_id.clone(),
            text: q.text.clone(),
            target_category_id: q.target_category_id,
            target_proposal_id: q.target_proposal_id(),
            view_dependent: q.view_dependent,
            distractor_count: q.distractor_count,
        })
        .collect();
    write_json(&dir.join("queries.json"), &queries)?;
    write_json(&dir.join("categories.json"), &vocab.labels().to_vec())?;

    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| BundleError::io(&frames_dir, e))?;
    for frame in &scene.frames {
        write_frame(&frames_dir, frame)?;
    }
    Ok(())
}

fn read_points(path: &Path) -> Result<PointCloud, BundleError> {
    let mut file = fs::File::open(path).map_err(|e| BundleError::io(path, e))?;
    let mut header = [0u8; 8];
    file.read_exact(&mut header).map_err(|e| BundleError::io(path, e))?;
    let n = u64::from_le_bytes(header) as usize;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| BundleError::io(path, e))?;
    if bytes.len() != n * 6 * 4 {
        return Err(BundleError::format(
            path,
            format!("expected {} bytes for {} points, found {}", n * 24, n, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(PointCloud::from_raw(data))
}

fn write_points(path: &Path, points: &PointCloud) -> Result<(), BundleError> {
    let mut file = fs::File::create(path).map_err(|e| BundleError::io(path, e))?;
    file.write_all(&(points.len() as u64).to_le_bytes()).map_err(|e| BundleError::io(path, e))?;
    let mut bytes = Vec::with_capacity(points.raw().len() * 4);
    for v in points.raw() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes).map_err(|e| BundleError::io(path, e))
}

fn read_proposals(path: &Path) -> Result<Vec<Proposal>, BundleError> {
    let records: Vec<ProposalRecord> = read_json(path)?;
    Ok(records
        .into_iter()
        .map(|r| Proposal {
            proposal_id: r.id,
            point_indices: r.point_indices,
            box3d: AxisAlignedBox3D::new(
                Vec3::new(r.box_min[0], r.box_min[1], r.box_min[2]),
                Vec3::new(r.box_max[0], r.box_max[1], r.box_max[2]),
            ),
            category_id: r.category_id,
        })
        .collect())
}

fn read_queries(path: &Path) -> Result<Vec<GroundingQuery>, BundleError> {
    let records: Vec<QueryRecord> = read_json(path)?;
    Ok(records
        .into_iter()
        .map(|r| {
            GroundingQuery::new(
                r.id,
                r.text,
                r.target_category_id,
                r.target_proposal_id,
                r.view_dependent,
                r.distractor_count,
            )
        })
        .collect())
}

fn read_categories(path: &Path) -> Result<CategoryVocabulary, BundleError> {
    let labels: Vec<String> = read_json(path)?;
    CategoryVocabulary::new(labels).map_err(BundleError::from)
}

fn read_frames(
    dir: &Path,
    mode: LoadMode,
    decode_rasters: bool,
) -> Result<Vec<Frame>, BundleError> {
    if !dir.exists() {
        if mode == LoadMode::Training {
            return Err(BundleError::format(dir, "frames directory missing"));
        }
        return Ok(Vec::new());
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| BundleError::io(dir, e))? {
        let entry = entry.map_err(|e| BundleError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".cam.json") {
            let id: u32 = stem.parse().map_err(|_| {
                BundleError::format(&entry.path(), "frame file name must be <id>.cam.json")
            })?;
            ids.push(id);
        }
    }
    ids.sort_unstable();
    ids.iter().map(|&id| read_frame(dir, id, decode_rasters)).collect()
}

fn read_frame(dir: &Path, id: u32, decode_rasters: bool) -> Result<Frame, BundleError> {
    let cam_path = dir.join(format!("{id}.cam.json"));
    let cam: CamRecord = read_json(&cam_path)?;
    if cam.intrinsics.len() != 9 || cam.extrinsics.len() != 16 {
        return Err(BundleError::format(&cam_path, "intrinsics must be 9 reals, extrinsics 16"));
    }
    let mut intr = [0.0; 9];
    intr.copy_from_slice(&cam.intrinsics);
    let mut extr = [0.0; 16];
    extr.copy_from_slice(&cam.extrinsics);

    let png_path = dir.join(format!("{id}.png"));
    let image = if decode_rasters && png_path.exists() {
        let decoded = image::open(&png_path)
            .map_err(|e| BundleError::format(&png_path, e.to_string()))?
            .into_rgb8();
        if (decoded.width() as usize, decoded.height() as usize) != (cam.width, cam.height) {
            return Err(BundleError::format(
                &png_path,
                format!(
                    "raster is {}x{} but calibration says {}x{}",
                    decoded.width(),
                    decoded.height(),
                    cam.width,
                    cam.height
                ),
            ));
        }
        let data: Vec<f32> = decoded.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Some(Raster { width: cam.width, height: cam.height, data })
    } else {
        None
    };

    let depth_path = dir.join(format!("{id}.depth.bin"));
    let depth = if decode_rasters && depth_path.exists() {
        let bytes = fs::read(&depth_path).map_err(|e| BundleError::io(&depth_path, e))?;
        if bytes.len() != cam.width * cam.height * 4 {
            return Err(BundleError::format(
                &depth_path,
                format!("expected {} depth samples", cam.width * cam.height),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(DepthRaster { width: cam.width, height: cam.height, data })
    } else {
        None
    };

    Ok(Frame {
        frame_id: id,
        width: cam.width,
        height: cam.height,
        intrinsics: Mat3(intr),
        extrinsics: Mat4(extr),
        image,
        depth,
    })
}

fn write_frame(dir: &Path, frame: &Frame) -> Result<(), BundleError> {
    let cam = CamRecord {
        intrinsics: frame.intrinsics.0.to_vec(),
        extrinsics: frame.extrinsics.0.to_vec(),
        width: frame.width,
        height: frame.height,
    };
    write_json(&dir.join(format!("{}.cam.json", frame.frame_id)), &cam)?;

    if let Some(raster) = &frame.image {
        let png_path = dir.join(format!("{}.png", frame.frame_id));
        let bytes: Vec<u8> = raster
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let img: image::RgbImage =
            image::ImageBuffer::from_raw(raster.width as u32, raster.height as u32, bytes)
                .expect("raster buffer sized to dimensions");
        img.save(&png_path).map_err(|e| BundleError::format(&png_path, e.to_string()))?;
    }
    if let Some(depth) = &frame.depth {
        let mut bytes = Vec::with_capacity(depth.data.len() * 4);
        for v in &depth.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let depth_path = dir.join(format!("{}.depth.bin", frame.frame_id));
        fs::write(&depth_path, bytes).map_err(|e| BundleError::io(&depth_path, e))?;
    }
    Ok(())
}

/// Bundle directories under a dataset root, sorted by name for determinism.
pub fn list_bundles(root: &Path) -> Result<Vec<std::path::PathBuf>, BundleError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| BundleError::io(root, e))? {
        let entry = entry.map_err(|e| BundleError::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("points.bin").exists() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, BundleError> {
    let text = fs::read_to_string(path).map_err(|e| BundleError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| BundleError::format(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BundleError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| BundleError::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| BundleError::io(path, e))
}
