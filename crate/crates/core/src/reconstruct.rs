//! Point clouds from visibility maps: grid sampling against a depth raster,
//! and per-ray casting through a scene with rolling-shutter poses.
//!
//! The LiDAR sensor frame has x forward, y left and z up.

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_point_cloud_bin, write_timestamps};
use crate::geometry::{
    project_point, unproject, CameraIntrinsics, GeometryError, LidarPoint, PointCloud, RigidTransform, Vec3,
};
use crate::lidar_image::VisibilityMap;
use crate::raster::Raster;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_RANGE: f64 = 120.0;
/// Closest depth in front of the camera a surfel may have.
const NEAR_PLANE: f64 = 1e-3;
const PIXEL_SLACK: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("scan pattern has no rays")]
    EmptyPattern,
    #[error("trajectory has no poses")]
    TrajectoryGap,
    #[error("invalid scan pattern: {0}")]
    InvalidPattern(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReconstructError + '_ {
    move |source| ReconstructError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReconstructError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReconstructError> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(io_err(path))
}

/// Rotation taking LiDAR axes (x fwd, y left, z up) to camera axes
/// (x right, y down, z fwd).
pub fn lidar_axes_to_camera() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    /// Radians, counter-clockwise from +x about +z.
    pub azimuth: f64,
    /// Radians above the xy plane.
    pub elevation: f64,
    /// Seconds after the scan start.
    pub time_offset: f64,
}

impl Ray {
    pub fn direction(&self) -> Vec3 {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vec3::new(ce * ca, ce * sa, se)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPattern {
    pub period: f64,
    pub rays: Vec<Ray>,
}

impl ScanPattern {
    pub fn new(period: f64, rays: Vec<Ray>) -> Result<Self, ReconstructError> {
        let p = Self { period, rays };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ReconstructError> {
        let bad = |m: String| Err(ReconstructError::InvalidPattern(m));
        if !(self.period >= 0.0 && self.period.is_finite()) {
            return bad(format!("period {} must be finite and non-negative", self.period));
        }
        let mut last = 0.0;
        for (i, r) in self.rays.iter().enumerate() {
            if !r.azimuth.is_finite() || !r.elevation.is_finite() {
                return bad(format!("ray {i} has non-finite angles"));
            }
            if !(r.time_offset >= last && r.time_offset <= self.period) {
                return bad(format!(
                    "ray {i} time offset {} breaks ordering within [0, {}]",
                    r.time_offset, self.period
                ));
            }
            last = r.time_offset;
        }
        Ok(())
    }

    /// A spinning sensor: `columns` azimuth steps from `azimuth_start` to
    /// `azimuth_end` (inclusive), each firing every elevation at once, with
    /// column `c` fired at `period * c / columns`.
    pub fn spinning(
        azimuth_start: f64,
        azimuth_end: f64,
        columns: usize,
        elevations: &[f64],
        period: f64,
    ) -> Result<Self, ReconstructError> {
        let mut rays = Vec::with_capacity(columns * elevations.len());
        for c in 0..columns {
            let frac = if columns > 1 { c as f64 / (columns - 1) as f64 } else { 0.0 };
            let azimuth = azimuth_start + (azimuth_end - azimuth_start) * frac;
            let time_offset = period * c as f64 / columns.max(1) as f64;
            rays.extend(elevations.iter().map(|&elevation| Ray {
                azimuth,
                elevation,
                time_offset,
            }));
        }
        Self::new(period, rays)
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ReconstructError> {
        let p: Self = read_json(path.as_ref())?;
        p.validate()?;
        Ok(p)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ReconstructError> {
        write_json(path.as_ref(), self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub timestamp: f64,
    /// world <- sensor
    pub pose: RigidTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoTrajectory {
    pub poses: Vec<TimedPose>,
}

impl EgoTrajectory {
    pub fn new(poses: Vec<TimedPose>) -> Result<Self, ReconstructError> {
        let t = Self { poses };
        t.validate()?;
        Ok(t)
    }

    pub fn stationary(pose: RigidTransform) -> Self {
        Self {
            poses: vec![TimedPose { timestamp: 0.0, pose }],
        }
    }

    pub fn validate(&self) -> Result<(), ReconstructError> {
        if self.poses.is_empty() {
            return Err(ReconstructError::TrajectoryGap);
        }
        if self.poses.iter().any(|p| !p.timestamp.is_finite()) {
            return Err(ReconstructError::InvalidTrajectory("non-finite timestamp".into()));
        }
        if self.poses.windows(2).any(|w| w[0].timestamp >= w[1].timestamp) {
            return Err(ReconstructError::InvalidTrajectory("timestamps must increase strictly".into()));
        }
        Ok(())
    }

    /// Pose at time `t`, held constant outside the covered span.
    pub fn pose_at(&self, t: f64) -> RigidTransform {
        let poses = &self.poses;
        let i = poses.partition_point(|p| p.timestamp <= t);
        if i == 0 {
            return poses[0].pose;
        }
        if i == poses.len() {
            return poses[i - 1].pose;
        }
        let (a, b) = (&poses[i - 1], &poses[i]);
        let alpha = (t - a.timestamp) / (b.timestamp - a.timestamp);
        a.pose.interpolate(&b.pose, alpha)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ReconstructError> {
        let t: Self = read_json(path.as_ref())?;
        t.validate()?;
        Ok(t)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ReconstructError> {
        write_json(path.as_ref(), self)
    }
}

/// Scene geometry queried by ray casting. Directions are unit vectors in
/// world coordinates; the result is the distance to the nearest hit.
pub trait DepthProvider: Sync {
    fn cast(&self, origin: &Vec3, direction: &Vec3, max_range: f64) -> Option<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triangle(pub [Vec3; 3]);

impl Triangle {
    /// Möller–Trumbore intersection distance along a unit direction.
    pub fn intersect(&self, origin: &Vec3, direction: &Vec3) -> Option<f64> {
        let [a, b, c] = &self.0;
        let (e1, e2) = (b - a, c - a);
        let p = direction.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-12 {
            return None;
        }
        let inv = 1.0 / det;
        let s = origin - a;
        let u = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(&e1);
        let v = direction.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        (t > 1e-9).then_some(t)
    }
}

/// Triangle soup in world coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleScene {
    pub triangles: Vec<Triangle>,
}

impl TriangleScene {
    pub fn new(triangles: Vec<Triangle>) -> Self {
        Self { triangles }
    }

    /// Axis-aligned rectangle spanned by `corner`, `corner + edge_a`,
    /// `corner + edge_b`.
    pub fn add_quad(&mut self, corner: Vec3, edge_a: Vec3, edge_b: Vec3) {
        let (p0, p1, p2, p3) = (corner, corner + edge_a, corner + edge_a + edge_b, corner + edge_b);
        self.triangles.push(Triangle([p0, p1, p2]));
        self.triangles.push(Triangle([p0, p2, p3]));
    }

    /// Axis-aligned box between `min` and `max`.
    pub fn add_box(&mut self, min: Vec3, max: Vec3) {
        let d = max - min;
        let (ex, ey, ez) = (Vec3::new(d.x, 0.0, 0.0), Vec3::new(0.0, d.y, 0.0), Vec3::new(0.0, 0.0, d.z));
        self.add_quad(min, ex, ey);
        self.add_quad(min, ex, ez);
        self.add_quad(min, ey, ez);
        self.add_quad(max, -ex, -ey);
        self.add_quad(max, -ex, -ez);
        self.add_quad(max, -ey, -ez);
    }

    /// Camera depth (z, meters) at every pixel center; 0 where nothing is hit.
    pub fn render_depth(&self, k: &CameraIntrinsics, cam_to_world: &RigidTransform, max_range: f64) -> Raster {
        let (w, h) = (k.width as usize, k.height as usize);
        let data: Vec<f32> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                let (u, v) = ((i % w) as f64, (i / w) as f64);
                let d_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0).normalize();
                let d_world = cam_to_world.transform_vector(&d_cam);
                self.cast(&cam_to_world.translation, &d_world, max_range)
                    .map_or(0.0, |t| (t * d_cam.z) as f32)
            })
            .collect();
        Raster::from_vec(k.width, k.height, data).expect("size")
    }
}

impl DepthProvider for TriangleScene {
    fn cast(&self, origin: &Vec3, direction: &Vec3, max_range: f64) -> Option<f64> {
        self.triangles
            .iter()
            .filter_map(|t| t.intersect(origin, direction))
            .filter(|&t| t <= max_range)
            .min_by(f64::total_cmp)
    }
}

/// Scene made of one fronto-parallel surfel per pixel of a camera depth
/// raster. Pixels with non-positive or non-finite depth are empty.
#[derive(Clone, Debug)]
pub struct DepthRasterScene {
    pub camera: CameraIntrinsics,
    pub depth: Raster,
    /// camera <- world
    pub world_to_cam: RigidTransform,
}

impl DepthRasterScene {
    pub fn new(camera: CameraIntrinsics, depth: Raster, world_to_cam: RigidTransform) -> Result<Self, ReconstructError> {
        if (depth.width, depth.height) != (camera.width, camera.height) {
            return Err(ReconstructError::DimensionMismatch(format!(
                "depth raster {}x{}, camera {}x{}",
                depth.width, depth.height, camera.width, camera.height
            )));
        }
        Ok(Self {
            camera,
            depth,
            world_to_cam,
        })
    }

    fn surfel_hit(&self, o: &Vec3, d: &Vec3, x: i64, y: i64, t_range: (f64, f64)) -> Option<f64> {
        let depth = f64::from(self.depth.get(x as u32, y as u32));
        if !(depth > 0.0 && depth.is_finite()) || d.z.abs() < 1e-15 {
            return None;
        }
        let t = (depth - o.z) / d.z;
        if !(t > 0.0 && t >= t_range.0 - 1e-12 && t <= t_range.1 + 1e-12) {
            return None;
        }
        let p = project_point(&self.camera, &(o + d * t)).in_front()?;
        ((p.u - x as f64).abs() <= 0.5 + PIXEL_SLACK && (p.v - y as f64).abs() <= 0.5 + PIXEL_SLACK).then_some(t)
    }
}

impl DepthProvider for DepthRasterScene {
    fn cast(&self, origin: &Vec3, direction: &Vec3, max_range: f64) -> Option<f64> {
        let k = &self.camera;
        let o = self.world_to_cam.transform_point(origin);
        let d = self.world_to_cam.transform_vector(direction);
        // Part of the ray in front of the near plane, as a parameter range.
        let (mut t0, mut t1) = (0.0f64, max_range);
        if d.z.abs() < 1e-15 {
            if o.z < NEAR_PLANE {
                return None;
            }
        } else {
            let t_near = (NEAR_PLANE - o.z) / d.z;
            if d.z > 0.0 {
                t0 = t0.max(t_near);
            } else {
                t1 = t1.min(t_near);
            }
        }
        if t0 > t1 {
            return None;
        }
        // Image segment in shifted coordinates where pixel (x, y) covers
        // [x, x+1) x [y, y+1).
        let proj = |t: f64| {
            let p = project_point(k, &(o + d * t)).in_front().expect("in front of near plane");
            (p.u + 0.5, p.v + 0.5)
        };
        let (a, b) = (proj(t0), proj(t1));
        let (w, h) = (f64::from(k.width), f64::from(k.height));
        let (s0, s1) = clip_segment(a, b, w, h)?;
        let lerp = |s: f64| (a.0 + (b.0 - a.0) * s, a.1 + (b.1 - a.1) * s);
        let (start, end) = (lerp(s0), lerp(s1));

        let clamp_cell = |v: f64, n: u32| (v.floor() as i64).clamp(0, i64::from(n) - 1);
        let (mut x, mut y) = (clamp_cell(start.0, k.width), clamp_cell(start.1, k.height));
        let (ex, ey) = (clamp_cell(end.0, k.width), clamp_cell(end.1, k.height));
        let (dx, dy) = (end.0 - start.0, end.1 - start.1);
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let next_boundary = |pos: f64, cell: i64, delta: f64| {
            if delta > 0.0 {
                (cell as f64 + 1.0 - pos) / delta
            } else if delta < 0.0 {
                (pos - cell as f64) / -delta
            } else {
                f64::INFINITY
            }
        };
        let mut t_max_x = next_boundary(start.0, x, dx);
        let mut t_max_y = next_boundary(start.1, y, dy);
        let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
        let limit = (k.width + k.height) as usize + 4;
        for _ in 0..limit {
            if let Some(t) = self.surfel_hit(&o, &d, x, y, (t0, t1)) {
                return Some(t);
            }
            if (x, y) == (ex, ey) {
                break;
            }
            if t_max_x < t_max_y {
                x += step_x;
                t_max_x += t_delta_x;
            } else {
                y += step_y;
                t_max_y += t_delta_y;
            }
            if x < 0 || y < 0 || x >= i64::from(k.width) || y >= i64::from(k.height) {
                break;
            }
        }
        None
    }
}

/// Liang–Barsky clip of segment `a -> b` to `[0, w] x [0, h]`, as a
/// parameter range within `[0, 1]`.
fn clip_segment(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<(f64, f64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut s0, mut s1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0), (dx, w - a.0), (-dy, a.1), (dy, h - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                s0 = s0.max(r);
            } else {
                s1 = s1.min(r);
            }
        }
    }
    (s0 <= s1).then_some((s0, s1))
}

/// Visibility at a continuous pixel position whose nearest pixel lies in the
/// image; positions in the outer half-pixel border read the edge values.
pub fn visibility_at(vis: &VisibilityMap, u: f64, v: f64) -> Option<f32> {
    let (w, h) = (f64::from(vis.width), f64::from(vis.height));
    let (ru, rv) = (u.round(), v.round());
    if !(ru >= 0.0 && rv >= 0.0 && ru < w && rv < h) {
        return None;
    }
    vis.sample_bilinear(u.clamp(0.0, w - 1.0), v.clamp(0.0, h - 1.0))
}

/// Points at every `stride`-th pixel whose visibility reaches `threshold`
/// and whose depth is valid, in the camera frame. Intensity is the
/// visibility value.
pub fn sample_grid(
    vis: &VisibilityMap,
    depth: &Raster,
    k: &CameraIntrinsics,
    stride: u32,
    threshold: f64,
    scan_start: f64,
) -> Result<PointCloud, ReconstructError> {
    if stride == 0 {
        return Err(ReconstructError::InvalidParameter("stride must be at least 1".into()));
    }
    let dims = (vis.width, vis.height);
    if (depth.width, depth.height) != dims || (k.width, k.height) != dims {
        return Err(ReconstructError::DimensionMismatch(format!(
            "visibility {}x{}, depth {}x{}, camera {}x{}",
            vis.width, vis.height, depth.width, depth.height, k.width, k.height
        )));
    }
    let mut points = Vec::new();
    for v in (0..vis.height).step_by(stride as usize) {
        for u in (0..vis.width).step_by(stride as usize) {
            let value = vis.get(u, v);
            let z = f64::from(depth.get(u, v));
            if f64::from(value) >= threshold && z > 0.0 && z.is_finite() {
                let p = unproject(k, f64::from(u), f64::from(v), z)?;
                points.push(LidarPoint::new(p, value, scan_start));
            }
        }
    }
    Ok(PointCloud::new(points, scan_start, scan_start))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaycastConfig {
    pub threshold: f64,
    pub max_range: f64,
    /// When false every ray is cast from the pose at the scan start.
    pub rolling_shutter: bool,
    /// Intensity assigned to emitted points.
    pub intensity: f32,
}

impl Default for RaycastConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_range: DEFAULT_MAX_RANGE,
            rolling_shutter: true,
            intensity: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Hit point in the sensor frame at the ray's firing time.
    pub point: Vec3,
    pub distance: f64,
    /// Projected pixel position, when in front of the camera.
    pub pixel: Option<(f64, f64)>,
    /// Visibility read at `pixel`, when it falls inside the image.
    pub visibility: Option<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaySample {
    pub timestamp: f64,
    pub hit: Option<RayHit>,
    pub kept: bool,
}

/// Per-ray outcome of [`raycast_scan`], in pattern order.
#[allow(clippy::too_many_arguments)]
pub fn raycast_scan_detailed(
    pattern: &ScanPattern,
    trajectory: &EgoTrajectory,
    scene: &dyn DepthProvider,
    vis: &VisibilityMap,
    k: &CameraIntrinsics,
    lidar_to_cam: &RigidTransform,
    scan_start: f64,
    cfg: &RaycastConfig,
) -> Result<Vec<RaySample>, ReconstructError> {
    if pattern.is_empty() {
        return Err(ReconstructError::EmptyPattern);
    }
    if trajectory.poses.is_empty() {
        return Err(ReconstructError::TrajectoryGap);
    }
    if (vis.width, vis.height) != (k.width, k.height) {
        return Err(ReconstructError::DimensionMismatch(format!(
            "visibility {}x{}, camera {}x{}",
            vis.width, vis.height, k.width, k.height
        )));
    }
    let fixed_pose = trajectory.pose_at(scan_start);
    Ok(pattern
        .rays
        .par_iter()
        .map(|ray| {
            let timestamp = scan_start + ray.time_offset;
            let pose = if cfg.rolling_shutter {
                trajectory.pose_at(timestamp)
            } else {
                fixed_pose
            };
            let dir = ray.direction();
            let hit = scene
                .cast(&pose.translation, &pose.transform_vector(&dir), cfg.max_range)
                .map(|distance| {
                    let point = dir * distance;
                    let projected = project_point(k, &lidar_to_cam.transform_point(&point)).in_front();
                    let pixel = projected.map(|p| (p.u, p.v));
                    let visibility = pixel.and_then(|(u, v)| visibility_at(vis, u, v));
                    RayHit {
                        point,
                        distance,
                        pixel,
                        visibility,
                    }
                });
            let kept = hit
                .and_then(|h| h.visibility)
                .is_some_and(|v| f64::from(v) >= cfg.threshold);
            RaySample { timestamp, hit, kept }
        })
        .collect())
}

/// Casts every ray of `pattern` from the interpolated sensor pose and keeps
/// the hits whose camera projection has visibility of at least the
/// threshold. Points are emitted in the sensor frame in pattern order.
#[allow(clippy::too_many_arguments)]
pub fn raycast_scan(
    pattern: &ScanPattern,
    trajectory: &EgoTrajectory,
    scene: &dyn DepthProvider,
    vis: &VisibilityMap,
    k: &CameraIntrinsics,
    lidar_to_cam: &RigidTransform,
    scan_start: f64,
    cfg: &RaycastConfig,
) -> Result<PointCloud, ReconstructError> {
    let samples = raycast_scan_detailed(pattern, trajectory, scene, vis, k, lidar_to_cam, scan_start, cfg)?;
    let points = samples
        .iter()
        .filter(|s| s.kept)
        .filter_map(|s| s.hit.map(|h| LidarPoint::new(h.point, cfg.intensity, s.timestamp)))
        .collect();
    Ok(PointCloud::new(points, scan_start, scan_start + pattern.period))
}

/// Every ray's hit regardless of visibility: a simulated full scan.
pub fn simulate_scan(
    pattern: &ScanPattern,
    trajectory: &EgoTrajectory,
    scene: &dyn DepthProvider,
    scan_start: f64,
    max_range: f64,
) -> Result<PointCloud, ReconstructError> {
    if trajectory.poses.is_empty() {
        return Err(ReconstructError::TrajectoryGap);
    }
    let points: Vec<LidarPoint> = pattern
        .rays
        .par_iter()
        .filter_map(|ray| {
            let timestamp = scan_start + ray.time_offset;
            let pose = trajectory.pose_at(timestamp);
            let dir = ray.direction();
            scene
                .cast(&pose.translation, &pose.transform_vector(&dir), max_range)
                .map(|d| LidarPoint::new(dir * d, 1.0, timestamp))
        })
        .collect();
    Ok(PointCloud::new(points, scan_start, scan_start + pattern.period))
}

/// Writes `path` as KITTI `.bin` and, if requested, per-point timestamps to
/// `path` with the extension `timestamps`.
pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud, with_timestamps: bool) -> Result<(), ReconstructError> {
    let path = path.as_ref();
    std::fs::write(path, write_point_cloud_bin(cloud)).map_err(io_err(path))?;
    if with_timestamps {
        let side = timestamp_sidecar(path);
        std::fs::write(&side, write_timestamps(cloud)).map_err(io_err(&side))?;
    }
    Ok(())
}

pub fn timestamp_sidecar(path: &Path) -> PathBuf {
    path.with_extension("timestamps")
}
