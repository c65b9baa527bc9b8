//! Small fixed-size geometry types: 3-vectors, camera matrices, rectangles
//! and axis-aligned boxes.

use crate::fmath;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        fmath::sqrt(self.dot(self))
    }

    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize zero vector");
        self.scale(1.0 / n)
    }
}

/// Row-major 3x3 matrix (camera intrinsics).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [f64; 9]);

impl Mat3 {
    pub fn identity() -> Self {
        Mat3([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[r * 3 + c]
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.get(0, 0) * v.x + self.get(0, 1) * v.y + self.get(0, 2) * v.z,
            self.get(1, 0) * v.x + self.get(1, 1) * v.y + self.get(1, 2) * v.z,
            self.get(2, 0) * v.x + self.get(2, 1) * v.y + self.get(2, 2) * v.z,
        )
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]])
    }

    pub fn matmul(&self, o: &Mat3) -> Mat3 {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += self.get(r, k) * o.get(k, c);
                }
                out[r * 3 + c] = s;
            }
        }
        Mat3(out)
    }

    /// `max |(RᵀR - I)_{ij}|`, the orthonormality defect.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self);
        let mut worst = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                let expect = if r == c { 1.0 } else { 0.0 };
                worst = worst.max(fmath::abs(gram.get(r, c) - expect));
            }
        }
        worst
    }
}

/// Row-major 4x4 rigid transform (world-to-camera extrinsics).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4(pub [f64; 16]);

impl Mat4 {
    pub fn identity() -> Self {
        let mut m = [0.0; 16];
        m[0] = 1.0;
        m[5] = 1.0;
        m[10] = 1.0;
        m[15] = 1.0;
        Mat4(m)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0[r * 4 + c]
    }

    pub fn rotation(&self) -> Mat3 {
        Mat3([
            self.get(0, 0),
            self.get(0, 1),
            self.get(0, 2),
            self.get(1, 0),
            self.get(1, 1),
            self.get(1, 2),
            self.get(2, 0),
            self.get(2, 1),
            self.get(2, 2),
        ])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.get(0, 3), self.get(1, 3), self.get(2, 3))
    }

    /// Apply as a rigid transform: `R p + t`.
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation().mul_vec(p).add(self.translation())
    }

    pub fn from_rotation_translation(rot: Mat3, t: Vec3) -> Mat4 {
        let r = &rot.0;
        Mat4([
            r[0], r[1], r[2], t.x, //
            r[3], r[4], r[5], t.y, //
            r[6], r[7], r[8], t.z, //
            0.0, 0.0, 0.0, 1.0,
        ])
    }

    /// Compose two rigid transforms: `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Mat4) -> Mat4 {
        let r = self.rotation().matmul(&other.rotation());
        let t = self.rotation().mul_vec(other.translation()).add(self.translation());
        Mat4::from_rotation_translation(r, t)
    }

    /// Inverse of a rigid transform: `(R, t)⁻¹ = (Rᵀ, -Rᵀ t)`.
    pub fn rigid_inverse(&self) -> Mat4 {
        let rt = self.rotation().transpose();
        let t = rt.mul_vec(self.translation()).scale(-1.0);
        Mat4::from_rotation_translation(rt, t)
    }
}

/// Pixel-space rectangle `(x, y, w, h)`; `w, h >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_degenerate(&self) -> bool {
        self.w <= 0.0 || self.h <= 0.0
    }

    /// Intersect with the image rectangle `[0, w) x [0, h)`.
    pub fn clamp_to_image(&self, width: f64, height: f64) -> Rect {
        let x0 = self.x.max(0.0).min(width);
        let y0 = self.y.max(0.0).min(height);
        let x1 = (self.x + self.w).max(0.0).min(width);
        let y1 = (self.y + self.h).max(0.0).min(height);
        Rect::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }
}

/// Axis-aligned 3D box in meters; `min <= max` componentwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAlignedBox3D {
    pub min: Vec3,
    pub max: Vec3,
}

impl AxisAlignedBox3D {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        self.min.x <= self.max.x && self.min.y <= self.max.y && self.min.z <= self.max.z
    }

    pub fn volume(&self) -> f64 {
        (self.max.x - self.min.x) * (self.max.y - self.min.y) * (self.max.z - self.min.z)
    }

    pub fn centroid(&self) -> Vec3 {
        self.min.add(self.max).scale(0.5)
    }

    pub fn diagonal(&self) -> f64 {
        self.max.sub(self.min).norm()
    }

    /// Containment with an absolute tolerance in meters.
    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        p.x >= self.min.x - tol
            && p.y >= self.min.y - tol
            && p.z >= self.min.z - tol
            && p.x <= self.max.x + tol
            && p.y <= self.max.y + tol
            && p.z <= self.max.z + tol
    }
}

/// Right-handed look-at pose: returns the world-to-camera rigid transform for
/// a camera at `eye` looking toward `target` (camera +z is the view
/// direction, +x right, +y down, matching pinhole pixel conventions).
pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Mat4 {
    let forward = target.sub(eye).normalized();
    let right = forward.cross(up).normalized();
    let down = forward.cross(right);
    // Rows of the rotation are the camera axes expressed in world coords.
    let rot = Mat3([
        right.x, right.y, right.z, //
        down.x, down.y, down.z, //
        forward.x, forward.y, forward.z,
    ]);
    let t = rot.mul_vec(eye).scale(-1.0);
    Mat4::from_rotation_translation(rot, t)
}
