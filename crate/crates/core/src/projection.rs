//! Geometric camera-calibration projection of proposal point sets onto
//! frames, best-frame selection, 2D region formation with boundary
//! extension, and axis-aligned IoU in 2D and 3D.

use alloc::vec::Vec;

use crate::geometry::{AxisAlignedBox3D, Rect, Vec3};
use crate::scene::{Frame, Proposal, Scene};

/// Depth-visibility tolerance in meters when occlusion testing is enabled.
pub const DEPTH_VISIBILITY_TOL: f64 = 0.10;

/// How the tight projected rect is post-processed before cropping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExtensionMode {
    /// The tight bounds of the visible projected points, unmodified.
    None,
    /// Grow by 10% along width and height keeping (x, y) fixed:
    /// `(x, y, w, h) -> (x, y, w + 0.2*w, h + 0.2*h)`, then clamp to the
    /// image bounds.
    #[default]
    BoundaryExtended,
}

/// The 2D region a proposal projects to in its selected frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Region2D {
    pub frame_id: u32,
    pub rect: Rect,
    pub visible_point_count: usize,
}

/// One projected point: pixel coordinates plus a visibility flag. For points
/// behind the camera the coordinates are zeroed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

/// Project world points into a frame. A point is visible iff its camera
/// depth is positive, it lands inside the image, and (when requested and a
/// depth raster exists) it agrees with the rendered depth within
/// [`DEPTH_VISIBILITY_TOL`].
pub fn project_points(
    points: &[Vec3],
    frame: &Frame,
    use_depth_visibility: bool,
) -> Vec<ProjectedPoint> {
    let (fx, fy, cx, cy) = (frame.fx(), frame.fy(), frame.cx(), frame.cy());
    let (w, h) = (frame.width as f64, frame.height as f64);
    points
        .iter()
        .map(|&p| {
            let cam = frame.extrinsics.transform_point(p);
            if cam.z <= 0.0 {
                return ProjectedPoint { u: 0.0, v: 0.0, visible: false };
            }
            let u = fx * cam.x / cam.z + cx;
            let v = fy * cam.y / cam.z + cy;
            let mut visible = u >= 0.0 && u < w && v >= 0.0 && v < h;
            if visible && use_depth_visibility {
                if let Some(depth) = &frame.depth {
                    let d = depth.at(u as usize, v as usize) as f64;
                    visible = (cam.z - d).abs() <= DEPTH_VISIBILITY_TOL;
                }
            }
            ProjectedPoint { u, v, visible }
        })
        .collect()
}

/// Grow a tight rect by the boundary-extension rule and clamp to the image.
/// `ExtensionMode::None` only clamps.
pub fn apply_extension(rect: Rect, mode: ExtensionMode, width: f64, height: f64) -> Rect {
    let extended = match mode {
        ExtensionMode::None => rect,
        ExtensionMode::BoundaryExtended => {
            Rect::new(rect.x, rect.y, rect.w + 0.2 * rect.w, rect.h + 0.2 * rect.h)
        }
    };
    extended.clamp_to_image(width, height)
}

/// Select the frame seeing the most of the proposal's points and form its 2D
/// region. Ties break to the lowest frame index; `None` when no frame sees
/// any point. The tight rect spans at least one pixel so downstream crops
/// stay non-degenerate.
pub fn best_frame_region(
    proposal: &Proposal,
    scene: &Scene,
    extension_mode: ExtensionMode,
    use_depth_visibility: bool,
) -> Option<Region2D> {
    let world: Vec<Vec3> = proposal.point_indices.iter().map(|&i| scene.points.xyz(i)).collect();
    let mut best: Option<(usize, usize, Rect)> = None;
    for (frame_idx, frame) in scene.frames.iter().enumerate() {
        let projected = project_points(&world, frame, use_depth_visibility);
        let visible: Vec<&ProjectedPoint> = projected.iter().filter(|p| p.visible).collect();
        if visible.is_empty() {
            continue;
        }
        if let Some((_, best_count, _)) = best {
            if visible.len() <= best_count {
                continue;
            }
        }
        let mut min_u = f64::INFINITY;
        let mut min_v = f64::INFINITY;
        let mut max_u = f64::NEG_INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        for p in &visible {
            min_u = min_u.min(p.u);
            min_v = min_v.min(p.v);
            max_u = max_u.max(p.u);
            max_v = max_v.max(p.v);
        }
        let rect = Rect::new(min_u, min_v, (max_u - min_u).max(1.0), (max_v - min_v).max(1.0));
        best = Some((frame_idx, visible.len(), rect));
    }
    best.map(|(frame_idx, count, tight)| {
        let frame = &scene.frames[frame_idx];
        Region2D {
            frame_id: frame.frame_id,
            rect: apply_extension(tight, extension_mode, frame.width as f64, frame.height as f64),
            visible_point_count: count,
        }
    })
}

/// Intersection-over-union of two axis-aligned rects; 0 when both are
/// degenerate.
pub fn iou_2d(a: Rect, b: Rect) -> f64 {
    let ix = overlap(a.x, a.x + a.w, b.x, b.x + b.w);
    let iy = overlap(a.y, a.y + a.h, b.y, b.y + b.h);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Volumetric intersection-over-union of two axis-aligned boxes.
pub fn iou_3d(a: &AxisAlignedBox3D, b: &AxisAlignedBox3D) -> f64 {
    let ix = overlap(a.min.x, a.max.x, b.min.x, b.max.x);
    let iy = overlap(a.min.y, a.max.y, b.min.y, b.max.y);
    let iz = overlap(a.min.z, a.max.z, b.min.z, b.max.z);
    let inter = ix * iy * iz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}
