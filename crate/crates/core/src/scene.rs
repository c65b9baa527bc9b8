//! Scene domain types, invariant checking, and deterministic synthetic-scene
//! generation for desk-scale tests.
//!
//! A scene is one indoor point cloud plus precomputed object proposals,
//! calibrated camera frames, and grounding queries. Proposals arrive from an
//! upstream detector or the dataset; nothing here segments point clouds.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fmath;
use crate::geometry::{look_at, AxisAlignedBox3D, Mat3, Mat4, Vec3};

/// N x 6 point cloud: `x, y, z` in meters then `r, g, b` in `[0, 1]`,
/// stored row-major as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    data: Vec<f32>,
}

impl PointCloud {
    pub fn from_raw(data: Vec<f32>) -> Self {
        assert_eq!(data.len() % 6, 0, "point cloud length must be a multiple of 6");
        Self { data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / 6
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn xyz(&self, i: usize) -> Vec3 {
        let at = i * 6;
        Vec3::new(self.data[at] as f64, self.data[at + 1] as f64, self.data[at + 2] as f64)
    }

    pub fn rgb(&self, i: usize) -> [f32; 3] {
        let at = i * 6;
        [self.data[at + 3], self.data[at + 4], self.data[at + 5]]
    }

    pub fn raw(&self) -> &[f32] {
        &self.data
    }
}

/// A candidate 3D object: a subset of scene points plus its axis-aligned box
/// and an optional coarse category label (the weak supervision signal).
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub proposal_id: u32,
    pub point_indices: Vec<usize>,
    pub box3d: AxisAlignedBox3D,
    pub category_id: Option<u32>,
}

/// In-memory RGB raster, row-major, 3 channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let at = (y * self.width + x) * 3;
        [self.data[at], self.data[at + 1], self.data[at + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, color: [f32; 3]) {
        let at = (y * self.width + x) * 3;
        self.data[at..at + 3].copy_from_slice(&color);
    }
}

/// Row-major single-channel depth raster in meters; `0.0` marks pixels with
/// no rendered geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthRaster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthRaster {
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// One calibrated camera frame. `width`/`height` always carry the image
/// dimensions; the raster itself is optional so cached-embedding runs never
/// have to decode pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub frame_id: u32,
    pub width: usize,
    pub height: usize,
    /// 3x3 pinhole intrinsics (fx, fy, cx, cy in pixels).
    pub intrinsics: Mat3,
    /// 4x4 world-to-camera rigid transform.
    pub extrinsics: Mat4,
    pub image: Option<Raster>,
    pub depth: Option<DepthRaster>,
}

impl Frame {
    pub fn fx(&self) -> f64 {
        self.intrinsics.get(0, 0)
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics.get(1, 1)
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics.get(0, 2)
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics.get(1, 2)
    }
}

/// A referring expression to ground. `target_proposal_id` is evaluation-only:
/// every read is counted so training runs can prove they never touched it.
#[derive(Debug)]
pub struct GroundingQuery {
    pub query_id: String,
    pub text: String,
    /// Coarse category label of the target (the weak supervision signal).
    pub target_category_id: u32,
    target_proposal_id: Option<u32>,
    pub view_dependent: Option<bool>,
    pub distractor_count: Option<u32>,
    target_reads: AtomicU64,
}

impl GroundingQuery {
    pub fn new(
        query_id: String,
        text: String,
        target_category_id: u32,
        target_proposal_id: Option<u32>,
        view_dependent: Option<bool>,
        distractor_count: Option<u32>,
    ) -> Self {
        Self {
            query_id,
            text,
            target_category_id,
            target_proposal_id,
            view_dependent,
            distractor_count,
            target_reads: AtomicU64::new(0),
        }
    }

    /// Ground-truth proposal id, for evaluation only. Reads are recorded in
    /// the access audit; training asserts the count never moves.
    pub fn target_proposal_id(&self) -> Option<u32> {
        self.target_reads.fetch_add(1, Ordering::Relaxed);
        self.target_proposal_id
    }

    pub fn target_read_count(&self) -> u64 {
        self.target_reads.load(Ordering::Relaxed)
    }
}

impl Clone for GroundingQuery {
    fn clone(&self) -> Self {
        Self {
            query_id: self.query_id.clone(),
            text: self.text.clone(),
            target_category_id: self.target_category_id,
            target_proposal_id: self.target_proposal_id,
            view_dependent: self.view_dependent,
            distractor_count: self.distractor_count,
            target_reads: AtomicU64::new(0),
        }
    }
}

impl PartialEq for GroundingQuery {
    fn eq(&self, other: &Self) -> bool {
        self.query_id == other.query_id
            && self.text == other.text
            && self.target_category_id == other.target_category_id
            && self.target_proposal_id == other.target_proposal_id
            && self.view_dependent == other.view_dependent
            && self.distractor_count == other.distractor_count
    }
}

/// Ordered category label list; index is the category id.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryVocabulary {
    labels: Vec<String>,
}

impl CategoryVocabulary {
    pub fn new(labels: Vec<String>) -> Result<Self, ValidationError> {
        if labels.is_empty() {
            return Err(ValidationError::Vocabulary { reason: "no labels".to_string() });
        }
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(ValidationError::Vocabulary { reason: format!("label {i} empty") });
            }
            if labels[..i].contains(label) {
                return Err(ValidationError::Vocabulary {
                    reason: format!("duplicate label {label:?}"),
                });
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, category_id: u32) -> Option<&str> {
        self.labels.get(category_id as usize).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Whether a scene is being validated for training (frames required) or
/// inference (2D-free, frames optional).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadMode {
    Training,
    Inference,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("scene {scene_id}: point cloud is empty")]
    EmptyPointCloud { scene_id: String },
    #[error("scene {scene_id}: no frames (training requires at least one)")]
    NoFrames { scene_id: String },
    #[error("proposal {proposal_id}: point_indices is empty")]
    EmptyProposal { proposal_id: u32 },
    #[error("proposal {proposal_id}: point index {index} out of range (N = {n})")]
    PointIndexOutOfRange { proposal_id: u32, index: usize, n: usize },
    #[error("proposal {proposal_id}: box min exceeds max")]
    InvalidBox { proposal_id: u32 },
    #[error("proposal {proposal_id}: point {index} lies outside box3d")]
    PointOutsideBox { proposal_id: u32, index: usize },
    #[error("proposal {proposal_id}: category id {category_id} not in vocabulary (K = {k})")]
    CategoryOutOfRange { proposal_id: u32, category_id: u32, k: usize },
    #[error("frame {frame_id}: focal lengths must be positive")]
    NonPositiveFocal { frame_id: u32 },
    #[error("frame {frame_id}: rotation not orthonormal (defect {defect})")]
    NonOrthonormalRotation { frame_id: u32, defect: f64 },
    #[error("frame {frame_id}: image dimensions must be at least 1x1")]
    DegenerateImage { frame_id: u32 },
    #[error("query {query_id}: text is empty")]
    EmptyQueryText { query_id: String },
    #[error("query {query_id}: target proposal {target} does not exist")]
    UnknownTargetProposal { query_id: String, target: u32 },
    #[error("query {query_id}: target category {category_id} not in vocabulary (K = {k})")]
    QueryCategoryOutOfRange { query_id: String, category_id: u32, k: usize },
    #[error("category vocabulary invalid: {reason}")]
    Vocabulary { reason: String },
}

/// One indoor scene: point cloud, proposals, calibrated frames, queries.
/// Immutable after construction; shareable across workers.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub points: PointCloud,
    pub proposals: Vec<Proposal>,
    pub frames: Vec<Frame>,
    pub queries: Vec<GroundingQuery>,
}

/// Tolerance for the point-inside-box proposal invariant, in meters.
pub const BOX_CONTAINMENT_TOL: f64 = 1e-6;

impl Scene {
    /// Check every type invariant. `vocab` bounds category ids when given.
    pub fn validate(
        &self,
        mode: LoadMode,
        vocab: Option<&CategoryVocabulary>,
    ) -> Result<(), ValidationError> {
        if self.points.is_empty() {
            return Err(ValidationError::EmptyPointCloud { scene_id: self.scene_id.clone() });
        }
        if mode == LoadMode::Training && self.frames.is_empty() {
            return Err(ValidationError::NoFrames { scene_id: self.scene_id.clone() });
        }
        let n = self.points.len();
        for p in &self.proposals {
            if p.point_indices.is_empty() {
                return Err(ValidationError::EmptyProposal { proposal_id: p.proposal_id });
            }
            if !p.box3d.is_valid() {
                return Err(ValidationError::InvalidBox { proposal_id: p.proposal_id });
            }
            for &i in &p.point_indices {
                if i >= n {
                    return Err(ValidationError::PointIndexOutOfRange {
                        proposal_id: p.proposal_id,
                        index: i,
                        n,
                    });
                }
                if !p.box3d.contains(self.points.xyz(i), BOX_CONTAINMENT_TOL) {
                    return Err(ValidationError::PointOutsideBox {
                        proposal_id: p.proposal_id,
                        index: i,
                    });
                }
            }
            if let (Some(c), Some(v)) = (p.category_id, vocab) {
                if c as usize >= v.len() {
                    return Err(ValidationError::CategoryOutOfRange {
                        proposal_id: p.proposal_id,
                        category_id: c,
                        k: v.len(),
                    });
                }
            }
        }
        for f in &self.frames {
            if f.fx() <= 0.0 || f.fy() <= 0.0 {
                return Err(ValidationError::NonPositiveFocal { frame_id: f.frame_id });
            }
            let defect = f.extrinsics.rotation().orthonormality_defect();
            if defect >= 1e-5 {
                return Err(ValidationError::NonOrthonormalRotation { frame_id: f.frame_id, defect });
            }
            if f.width == 0 || f.height == 0 {
                return Err(ValidationError::DegenerateImage { frame_id: f.frame_id });
            }
        }
        for q in &self.queries {
            if q.text.is_empty() {
                return Err(ValidationError::EmptyQueryText { query_id: q.query_id.clone() });
            }
            if let Some(target) = q.target_proposal_id() {
                if !self.proposals.iter().any(|p| p.proposal_id == target) {
                    return Err(ValidationError::UnknownTargetProposal {
                        query_id: q.query_id.clone(),
                        target,
                    });
                }
            }
            if let Some(v) = vocab {
                if q.target_category_id as usize >= v.len() {
                    return Err(ValidationError::QueryCategoryOutOfRange {
                        query_id: q.query_id.clone(),
                        category_id: q.target_category_id,
                        k: v.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Total audit count of `target_proposal_id` reads across all queries.
    pub fn target_read_count(&self) -> u64 {
        self.queries.iter().map(GroundingQuery::target_read_count).sum()
    }

    /// Proposal position for a proposal id.
    pub fn proposal_index(&self, proposal_id: u32) -> Option<usize> {
        self.proposals.iter().position(|p| p.proposal_id == proposal_id)
    }
}

/// Background color used by the synthetic renderer; kept far from every
/// palette color so crops can be decoded unambiguously.
pub const BACKGROUND_COLOR: [f32; 3] = [0.8, 0.8, 0.8];

/// Deterministic display color for a category (golden-angle hue walk).
pub fn category_color(category_id: u32) -> [f32; 3] {
    let hue = (category_id as f64 * 0.618_033_988_749_895) % 1.0;
    hsv_to_rgb(hue, 0.75, 0.95)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f32; 3] {
    let i = fmath::floor(h * 6.0) as i32 % 6;
    let f = h * 6.0 - fmath::floor(h * 6.0);
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r as f32, g as f32, b as f32]
}

const LABEL_POOL: [&str; 16] = [
    "chair", "table", "lamp", "sofa", "bed", "plant", "shelf", "monitor", "desk", "cabinet",
    "pillow", "stool", "couch", "vase", "rug", "bin",
];

/// Vocabulary used by synthetic scenes: the first `k` pool labels, then
/// generated names.
pub fn synthetic_vocabulary(k: usize) -> CategoryVocabulary {
    let labels: Vec<String> = (0..k)
        .map(|i| {
            LABEL_POOL
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("object{i}"))
        })
        .collect();
    CategoryVocabulary::new(labels).expect("pool labels are unique and non-empty")
}

const SYNTH_WIDTH: usize = 160;
const SYNTH_HEIGHT: usize = 120;
const SYNTH_FOCAL: f64 = 120.0;

/// Generate a deterministic synthetic scene: colored cuboid point clusters on
/// a gray floor, pinhole cameras on a circle looking at the scene center, and
/// one templated query per proposal. Identical seeds yield identical scenes.
///
/// When the category pool is at least as large as `num_proposals`, clusters
/// receive distinct categories; otherwise categories repeat.
pub fn generate_synthetic_scene(
    seed: u64,
    num_proposals: usize,
    num_categories: usize,
    num_frames: usize,
) -> Scene {
    assert!(num_proposals >= 1, "num_proposals must be at least 1");
    assert!(num_categories >= 1, "num_categories must be at least 1");
    assert!(num_frames >= 1, "num_frames must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Category assignment: distinct when possible.
    let categories: Vec<u32> = if num_categories >= num_proposals {
        let mut ids: Vec<u32> = (0..num_categories as u32).collect();
        ids.shuffle(&mut rng);
        ids.truncate(num_proposals);
        ids
    } else {
        (0..num_proposals).map(|_| rng.random_range(0..num_categories as u32)).collect()
    };

    // Floor plane.
    let mut data: Vec<f32> = Vec::new();
    let floor_points = 600;
    for _ in 0..floor_points {
        let x = rng.random_range(-3.0f32..3.0);
        let y = rng.random_range(-3.0f32..3.0);
        data.extend_from_slice(&[x, y, 0.0]);
        data.extend_from_slice(&BACKGROUND_COLOR);
    }

    // Clusters on a circle, sizes and point counts seeded.
    let mut proposals = Vec::with_capacity(num_proposals);
    let mut centers = Vec::with_capacity(num_proposals);
    for (i, &cat) in categories.iter().enumerate() {
        let angle = core::f64::consts::TAU * i as f64 / num_proposals as f64
            + rng.random_range(-0.15..0.15);
        let radius = rng.random_range(1.4..2.1);
        let cx = radius * fmath::cos(angle);
        let cy = radius * fmath::sin(angle);
        let sx = rng.random_range(0.3..0.7);
        let sy = rng.random_range(0.3..0.7);
        let sz = rng.random_range(0.3..0.9);
        let box3d = AxisAlignedBox3D::new(
            Vec3::new(cx - sx / 2.0, cy - sy / 2.0, 0.0),
            Vec3::new(cx + sx / 2.0, cy + sy / 2.0, sz),
        );
        centers.push(box3d.centroid());
        let color = category_color(cat);
        let count = rng.random_range(300..500usize);
        let start = data.len() / 6;
        for _ in 0..count {
            let px = rng.random_range(box3d.min.x..box3d.max.x) as f32;
            let py = rng.random_range(box3d.min.y..box3d.max.y) as f32;
            let pz = rng.random_range(box3d.min.z..box3d.max.z) as f32;
            data.extend_from_slice(&[px, py, pz]);
            for ch in color {
                let jitter = rng.random_range(-0.02f32..0.02);
                data.push((ch + jitter).clamp(0.0, 1.0));
            }
        }
        proposals.push(Proposal {
            proposal_id: i as u32,
            point_indices: (start..start + count).collect(),
            box3d,
            category_id: Some(cat),
        });
    }
    let points = PointCloud::from_raw(data);

    // Cameras on a circle, looking at the scene center.
    let target = Vec3::new(0.0, 0.0, 0.3);
    let mut frames = Vec::with_capacity(num_frames);
    for f in 0..num_frames {
        let angle = core::f64::consts::TAU * f as f64 / num_frames as f64 + 0.35;
        let eye = Vec3::new(4.6 * fmath::cos(angle), 4.6 * fmath::sin(angle), 2.6);
        let extrinsics = look_at(eye, target, Vec3::new(0.0, 0.0, 1.0));
        let intrinsics = Mat3([
            SYNTH_FOCAL,
            0.0,
            SYNTH_WIDTH as f64 / 2.0,
            0.0,
            SYNTH_FOCAL,
            SYNTH_HEIGHT as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        ]);
        let (image, depth) = render_frame(&points, &intrinsics, &extrinsics);
        frames.push(Frame {
            frame_id: f as u32,
            width: SYNTH_WIDTH,
            height: SYNTH_HEIGHT,
            intrinsics,
            extrinsics,
            image: Some(image),
            depth: Some(depth),
        });
    }

    // One query per proposal, naming the nearest other cluster.
    let vocab = synthetic_vocabulary(num_categories);
    let mut queries = Vec::with_capacity(num_proposals);
    for (i, &cat) in categories.iter().enumerate() {
        let label = vocab.label(cat).expect("category in vocabulary");
        let text = nearest_other(&centers, i)
            .map(|j| {
                let other = vocab.label(categories[j]).expect("category in vocabulary");
                format!("the {label} near the {other}")
            })
            .unwrap_or_else(|| format!("the {label}"));
        let distractors = categories.iter().filter(|&&c| c == cat).count() as u32 - 1;
        queries.push(GroundingQuery::new(
            format!("q{i}"),
            text,
            cat,
            Some(i as u32),
            Some(false),
            Some(distractors),
        ));
    }

    Scene {
        scene_id: format!("synth-{seed}"),
        points,
        proposals,
        frames,
        queries,
    }
}

fn nearest_other(centers: &[Vec3], i: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in centers.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = c.sub(centers[i]).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

/// Point-splat renderer with a z-buffer; each point paints a 3x3 block.
fn render_frame(points: &PointCloud, intrinsics: &Mat3, extrinsics: &Mat4) -> (Raster, DepthRaster) {
    let (w, h) = (SYNTH_WIDTH, SYNTH_HEIGHT);
    let mut image = Raster::filled(w, h, BACKGROUND_COLOR);
    let mut depth = vec![0.0f32; w * h];
    let mut zbuf = vec![f64::INFINITY; w * h];
    let fx = intrinsics.get(0, 0);
    let fy = intrinsics.get(1, 1);
    let cx = intrinsics.get(0, 2);
    let cy = intrinsics.get(1, 2);
    for i in 0..points.len() {
        let cam = extrinsics.transform_point(points.xyz(i));
        if cam.z <= 0.0 {
            continue;
        }
        let u = fx * cam.x / cam.z + cx;
        let v = fy * cam.y / cam.z + cy;
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let (pu, pv) = (u as isize, v as isize);
        let color = points.rgb(i);
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let (px, py) = (pu + dx, pv + dy);
                if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                    continue;
                }
                let at = py as usize * w + px as usize;
                if cam.z < zbuf[at] {
                    zbuf[at] = cam.z;
                    depth[at] = cam.z as f32;
                    image.set_pixel(px as usize, py as usize, color);
                }
            }
        }
    }
    (image, DepthRaster { width: w, height: h, data: depth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_scene_is_deterministic() {
        let a = generate_synthetic_scene(7, 4, 3, 2);
        let b = generate_synthetic_scene(7, 4, 3, 2);
        assert_eq!(a, b);
        assert_eq!(a.proposals.len(), 4);
        assert_eq!(a.frames.len(), 2);
        assert_eq!(a.queries.len(), 4);
        // K-used is bounded by the pool size.
        for p in &a.proposals {
            assert!(p.category_id.unwrap() < 3);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_synthetic_scene(7, 4, 3, 2);
        let b = generate_synthetic_scene(8, 4, 3, 2);
        assert_ne!(a.points, b.points);
    }

    #[test]
    fn synthetic_scene_passes_invariants() {
        for seed in [1, 7, 99] {
            let scene = generate_synthetic_scene(seed, 5, 8, 3);
            let vocab = synthetic_vocabulary(8);
            scene.validate(LoadMode::Training, Some(&vocab)).expect("synthetic scene valid");
        }
    }

    #[test]
    fn distinct_categories_when_pool_allows() {
        let scene = generate_synthetic_scene(3, 5, 8, 1);
        let mut cats: Vec<u32> = scene.proposals.iter().filter_map(|p| p.category_id).collect();
        cats.sort_unstable();
        cats.dedup();
        assert_eq!(cats.len(), 5, "categories must be distinct when pool >= proposals");
        for q in &scene.queries {
            assert_eq!(q.distractor_count, Some(0));
        }
    }

    #[test]
    fn target_reads_are_counted() {
        let scene = generate_synthetic_scene(1, 2, 4, 1);
        let before = scene.target_read_count();
        let _ = scene.queries[0].target_proposal_id();
        assert_eq!(scene.target_read_count(), before + 1);
        // Clones start with a fresh audit counter.
        let cloned = scene.queries[0].clone();
        assert_eq!(cloned.target_read_count(), 0);
    }

    #[test]
    fn validation_rejects_out_of_range_point_index() {
        let mut scene = generate_synthetic_scene(1, 2, 4, 1);
        let n = scene.points.len();
        scene.proposals[0].point_indices.push(n);
        let err = scene.validate(LoadMode::Training, None).unwrap_err();
        assert!(matches!(err, ValidationError::PointIndexOutOfRange { index, .. } if index == n));
    }

    #[test]
    fn validation_allows_frameless_scene_in_inference_mode() {
        let mut scene = generate_synthetic_scene(1, 2, 4, 1);
        scene.frames.clear();
        assert!(scene.validate(LoadMode::Training, None).is_err());
        assert!(scene.validate(LoadMode::Inference, None).is_ok());
    }

    #[test]
    fn scenes_are_shareable_across_threads() {
        fn assert_send_sync<T: Send + Sync>() {}
        assert_send_sync::<Scene>();
        assert_send_sync::<CategoryVocabulary>();
    }

    #[test]
    fn palette_colors_are_separated() {
        for a in 0..12u32 {
            for b in 0..a {
                let ca = category_color(a);
                let cb = category_color(b);
                let d2: f32 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum();
                assert!(d2 > 0.01, "colors {a} and {b} too close");
                let bg: f32 =
                    ca.iter().zip(&BACKGROUND_COLOR).map(|(x, y)| (x - y) * (x - y)).sum();
                assert!(bg > 0.04, "color {a} too close to background");
            }
        }
    }
}
