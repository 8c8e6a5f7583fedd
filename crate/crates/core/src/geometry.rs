//! Rigid transforms and the pinhole camera.
//!
//! Camera frame: +z forward, +x right, +y down, so image `v` grows
//! downward. No lens distortion; inputs are assumed rectified.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with det +1 (error {0:.3e})")]
    NonOrthonormalRotation(f64),
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(0.0..f64::from(self.width)).contains(&self.cx) || !(0.0..f64::from(self.height)).contains(&self.cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < f64::from(self.width) && v < f64::from(self.height)
    }

    /// Intrinsics of the same camera after scaling the image by `scale` and
    /// shifting it by `(dx, dy)` pixels.
    pub fn rescaled(&self, scale: f64, dx: f64, dy: f64, width: u32, height: u32) -> Self {
        Self {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: self.cx * scale + dx,
            cy: self.cy * scale + dy,
            width,
            height,
        }
    }
}

/// `p' = rotation * p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        Self::with_tolerance(rotation, translation, ORTHONORMAL_TOLERANCE)
    }

    /// Accepts rotations orthonormal to within `tolerance` (max abs entry of
    /// `RᵀR - I`, and `|det R - 1|`).
    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vec3, tolerance: f64) -> Result<Self, GeometryError> {
        let err = orthonormality_error(&rotation);
        if !(err <= tolerance) || !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::NonOrthonormalRotation(err));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, d: &Vec3) -> Vec3 {
        self.rotation * d
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    /// Linear interpolation of translation and slerp of rotation, `alpha` in [0, 1].
    pub fn interpolate(&self, other: &RigidTransform, alpha: f64) -> Self {
        let q = self.quaternion().slerp(&other.quaternion(), alpha);
        Self {
            rotation: *q.to_rotation_matrix().matrix(),
            translation: self.translation.lerp(&other.translation, alpha),
        }
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let off = gram.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    off.max((r.determinant() - 1.0).abs())
}

pub fn transform_point(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.transform_point(p)
}

pub fn invert_transform(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

/// Pixel coordinates and depth of a point in front of the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagePoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl ImagePoint {
    /// Nearest pixel, if it lies inside the image.
    pub fn pixel(&self, k: &CameraIntrinsics) -> Option<(u32, u32)> {
        let (u, v) = (self.u.round(), self.v.round());
        (u >= 0.0 && v >= 0.0 && u < f64::from(k.width) && v < f64::from(k.height)).then_some((u as u32, v as u32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    InFront(ImagePoint),
    /// The point is on or behind the camera plane (`z <= 0`).
    Behind,
}

impl Projection {
    pub fn in_front(self) -> Option<ImagePoint> {
        match self {
            Projection::InFront(p) => Some(p),
            Projection::Behind => None,
        }
    }
}

/// Pinhole projection. The result may fall outside the image.
pub fn project_point(k: &CameraIntrinsics, p_cam: &Vec3) -> Projection {
    if p_cam.z > 0.0 {
        Projection::InFront(ImagePoint {
            u: k.fx * p_cam.x / p_cam.z + k.cx,
            v: k.fy * p_cam.y / p_cam.z + k.cy,
            depth: p_cam.z,
        })
    } else {
        Projection::Behind
    }
}

pub fn unproject(k: &CameraIntrinsics, u: f64, v: f64, depth: f64) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Vec3::new((u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f32,
    pub timestamp: f64,
}

impl LidarPoint {
    pub fn new(position: Vec3, intensity: f32, timestamp: f64) -> Self {
        Self {
            x: position.x,
            y: position.y,
            z: position.z,
            intensity,
            timestamp,
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if ![self.x, self.y, self.z, self.timestamp].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidPoint("non-finite coordinate or timestamp".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(GeometryError::InvalidPoint(format!("intensity {} outside [0, 1]", self.intensity)));
        }
        Ok(())
    }
}

/// One LiDAR sweep in the sensor frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub scan_start: f64,
    pub scan_end: f64,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, scan_start: f64, scan_end: f64) -> Self {
        Self {
            points,
            scan_start,
            scan_end,
        }
    }

    pub fn empty(scan_start: f64, scan_end: f64) -> Self {
        Self::new(Vec::new(), scan_start, scan_end)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for p in &self.points {
            p.validate()?;
            if p.timestamp < self.scan_start || p.timestamp > self.scan_end {
                return Err(GeometryError::InvalidPoint(format!(
                    "timestamp {} outside scan [{}, {}]",
                    p.timestamp, self.scan_start, self.scan_end
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Unit;
    use proptest::prelude::*;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn transform_point_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&RigidTransform::identity(), &p), p);
        let t = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(transform_point(&t, &p), Vec3::new(1.0, 2.0, 8.0));
        // 90° yaw: x -> y.
        let yaw = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let t = RigidTransform::new(yaw, Vec3::zeros()).unwrap();
        assert_eq!(t.transform_point(&Vec3::new(1.0, 0.0, 0.0)), Vec3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn project_examples() {
        let k = k100();
        let p = project_point(&k, &Vec3::new(0.0, 0.0, 2.0)).in_front().unwrap();
        assert_eq!((p.u, p.v, p.depth), (50.0, 50.0, 2.0));
        let p = project_point(&k, &Vec3::new(1.0, 0.0, 2.0)).in_front().unwrap();
        assert_eq!((p.u, p.v, p.depth), (100.0, 50.0, 2.0));
        assert_eq!(project_point(&k, &Vec3::new(1.0, 1.0, -1.0)), Projection::Behind);
        assert_eq!(project_point(&k, &Vec3::new(1.0, 1.0, 0.0)), Projection::Behind);
    }

    #[test]
    fn unproject_examples() {
        let k = k100();
        assert_eq!(unproject(&k, 50.0, 50.0, 2.0).unwrap(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(unproject(&k, 100.0, 50.0, 2.0).unwrap(), Vec3::new(1.0, 0.0, 2.0));
        let p = Vec3::new(0.3, -0.7, 4.2);
        let ip = project_point(&k, &p).in_front().unwrap();
        assert_relative_eq!(unproject(&k, ip.u, ip.v, ip.depth).unwrap(), p, epsilon = 1e-12);
        assert_eq!(unproject(&k, 1.0, 1.0, 0.0), Err(GeometryError::NonPositiveDepth(0.0)));
        assert!(unproject(&k, 1.0, 1.0, -3.0).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, -0.1, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 3.9, 4, 4).is_ok());
    }

    #[test]
    fn invert_examples() {
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
        let t = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(t.inverse(), RigidTransform::from_translation(Vec3::new(0.0, 0.0, -5.0)));
    }

    #[test]
    fn rejects_non_rotations() {
        let scaled = Matrix3::identity() * 1.01;
        assert!(RigidTransform::new(scaled, Vec3::zeros()).is_err());
        let reflection = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(reflection, Vec3::zeros()).is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = RigidTransform::identity();
        let b = RigidTransform::from_rotation(
            Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2),
            Vec3::new(2.0, 0.0, 0.0),
        );
        assert_relative_eq!(a.interpolate(&b, 0.0).rotation, a.rotation, epsilon = 1e-12);
        assert_relative_eq!(a.interpolate(&b, 1.0).rotation, b.rotation, epsilon = 1e-12);
        let mid = a.interpolate(&b, 0.5);
        let expected = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_4);
        assert_relative_eq!(mid.rotation, *expected.matrix(), epsilon = 1e-12);
        assert_relative_eq!(mid.translation, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -std::f64::consts::PI..std::f64::consts::PI,
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_filter_map("non-zero axis", |(axis, angle, t)| {
                let axis = Vector3::from(axis);
                (axis.norm() > 1e-3).then(|| {
                    let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
                    RigidTransform::from_rotation(r, Vector3::from(t))
                })
            })
    }

    proptest! {
        #[test]
        fn unproject_inverts_project(x in -20.0f64..20.0, y in -20.0f64..20.0, z in 0.05f64..80.0) {
            let k = CameraIntrinsics::new(721.5, 721.5, 609.6, 172.9, 1242, 375).unwrap();
            let p = Vec3::new(x, y, z);
            let ip = project_point(&k, &p).in_front().unwrap();
            prop_assert_eq!(ip.depth, z);
            let q = unproject(&k, ip.u, ip.v, ip.depth).unwrap();
            prop_assert!((q - p).norm() <= 1e-9);
        }

        #[test]
        fn inverse_composes_to_identity(t in arb_transform(), p in prop::array::uniform3(-100.0f64..100.0)) {
            let p = Vector3::from(p);
            let back = t.inverse().transform_point(&t.transform_point(&p));
            prop_assert!((back - p).norm() <= 1e-9);
            let id = t.compose(&t.inverse());
            prop_assert!((id.rotation - Matrix3::identity()).abs().max() <= 1e-9);
            prop_assert!(id.translation.norm() <= 1e-9);
            prop_assert!(RigidTransform::new(t.rotation, t.translation).is_ok());
        }
    }
}
