//! Recording ingestion and training-pair construction.
//!
//! Supported inputs: KITTI calibration text, KITTI velodyne `.bin` scans,
//! per-frame PNG camera images, float depth rasters (meters), and
//! segmentation PNGs whose gray value is `class_id * 4 + instance_id`.
//! Frames are listed in a JSON [`Manifest`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, Luma};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, LidarPoint, PointCloud, RigidTransform};
use crate::lidar_image::{blur_mask, rasterize_scans, BinaryHitMask, BlurConfig, LidarImageError, VisibilityMap};
use crate::raster::{read_gray_png, Image3, Raster, RasterError};

/// Rotations read from calibration files may deviate this much from
/// orthonormal (they are printed with limited precision).
pub const CALIB_ROTATION_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SCAN_PERIOD: f64 = 0.1;
pub const DEFAULT_DEPTH_MAX_RANGE: f64 = 80.0;
pub const INSTANCES_PER_CLASS: u8 = 4;
pub const MAX_CLASS_ID: u8 = 63;
/// |Δt| values closer than this are treated as ties when pairing frames.
pub const TIME_TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("calibration is missing key {0}")]
    MissingKey(String),
    #[error("calibration key {key}: expected {expected} numbers, got {actual}")]
    MalformedMatrix { key: String, expected: usize, actual: usize },
    #[error("calibration key {key}: rotation is not orthonormal (error {error:.3e})")]
    NonOrthonormalRotation { key: String, error: f64 },
    #[error("point cloud length {0} is not a multiple of 16 bytes")]
    TruncatedRecord(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unknown segmentation class {0}")]
    UnknownClass(u8),
    #[error("invalid segmentation coding: {0}")]
    InvalidCoding(String),
    #[error("timestamps of {0} are not sorted")]
    UnsortedStream(String),
    #[error("frame {frame} lacks the {channel} channel")]
    MissingChannel { frame: String, channel: &'static str },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    LidarImage(#[from] LidarImageError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One camera and the extrinsics of every LiDAR mounted with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub camera: CameraIntrinsics,
    pub lidar_to_cam: Vec<RigidTransform>,
}

impl CalibrationSet {
    pub fn new(camera: CameraIntrinsics, lidar_to_cam: Vec<RigidTransform>) -> Result<Self, DatasetError> {
        camera.validate()?;
        if lidar_to_cam.is_empty() {
            return Err(DatasetError::MissingKey("Tr_velo_to_cam".into()));
        }
        Ok(Self { camera, lidar_to_cam })
    }

    pub fn sensor_count(&self) -> usize {
        self.lidar_to_cam.len()
    }

    pub fn with_image_size(mut self, width: u32, height: u32) -> Result<Self, DatasetError> {
        self.camera.width = width;
        self.camera.height = height;
        self.camera.validate()?;
        Ok(self)
    }

    /// KITTI-style text with identity rectification and zero baseline.
    pub fn to_kitti_text(&self) -> String {
        let k = &self.camera;
        let mut out = format!(
            "P2: {} 0 {} 0 0 {} {} 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\n",
            k.fx, k.cx, k.fy, k.cy
        );
        for (i, t) in self.lidar_to_cam.iter().enumerate() {
            let key = if i == 0 {
                "Tr_velo_to_cam".to_string()
            } else {
                format!("Tr_velo_to_cam_{i}")
            };
            let r = &t.rotation;
            let p = &t.translation;
            out += &format!(
                "{key}: {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e} {:e}\n",
                r[(0, 0)], r[(0, 1)], r[(0, 2)], p.x,
                r[(1, 0)], r[(1, 1)], r[(1, 2)], p.y,
                r[(2, 0)], r[(2, 1)], r[(2, 2)], p.z
            );
        }
        out += &format!("S_rect_02: {} {}\n", k.width, k.height);
        out
    }
}

fn parse_numbers(key: &str, text: &str, expected: usize) -> Result<Vec<f64>, DatasetError> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(f64::from_str)
        .collect::<Result<_, _>>()
        .map_err(|_| DatasetError::MalformedMatrix {
            key: key.into(),
            expected,
            actual: text.split_whitespace().count(),
        })?;
    if values.len() != expected {
        return Err(DatasetError::MalformedMatrix {
            key: key.into(),
            expected,
            actual: values.len(),
        });
    }
    Ok(values)
}

/// Parses KITTI calibration text (`KEY: v1 v2 ...` lines).
///
/// Intrinsics come from `P2`; the extrinsic is `R0_rect * Tr_velo_to_cam`
/// with `P2`'s fourth column folded into the translation as `K⁻¹ p4`, so that
/// projecting with the result equals projecting with `P2 * R0_rect * Tr`.
/// Additional sensors are read from `Tr_velo_to_cam_1`, `Tr_velo_to_cam_2`,
/// ... in order. The image size is taken from `S_rect_02` when present,
/// otherwise from twice the principal point (rounded up).
pub fn parse_kitti_calib(text: &str) -> Result<CalibrationSet, DatasetError> {
    let mut entries: HashMap<&str, &str> = HashMap::new();
    for line in text.lines() {
        if let Some((key, rest)) = line.split_once(':') {
            entries.insert(key.trim(), rest);
        }
    }
    let get = |key: &str, n: usize| -> Result<Vec<f64>, DatasetError> {
        let raw = entries.get(key).ok_or_else(|| DatasetError::MissingKey(key.into()))?;
        parse_numbers(key, raw, n)
    };

    let p2 = get("P2", 12)?;
    let r0 = Matrix3::from_row_slice(&get("R0_rect", 9)?);
    let (fx, cx, fy, cy) = (p2[0], p2[2], p2[5], p2[6]);
    let k_matrix = Matrix3::new(p2[0], p2[1], p2[2], p2[4], p2[5], p2[6], p2[8], p2[9], p2[10]);
    let p4 = Vector3::new(p2[3], p2[7], p2[11]);
    let baseline = k_matrix
        .try_inverse()
        .map(|inv| inv * p4)
        .ok_or_else(|| DatasetError::MalformedMatrix {
            key: "P2".into(),
            expected: 12,
            actual: 12,
        })?;

    let (width, height) = match entries.get("S_rect_02") {
        Some(raw) => {
            let s = parse_numbers("S_rect_02", raw, 2)?;
            (s[0] as u32, s[1] as u32)
        }
        None => ((2.0 * cx).ceil().max(1.0) as u32, (2.0 * cy).ceil().max(1.0) as u32),
    };
    let camera = CameraIntrinsics::new(fx, fy, cx, cy, width, height)?;

    let mut extrinsics = Vec::new();
    for i in 0.. {
        let key = if i == 0 {
            "Tr_velo_to_cam".to_string()
        } else {
            format!("Tr_velo_to_cam_{i}")
        };
        if i > 0 && !entries.contains_key(key.as_str()) {
            break;
        }
        let tr = get(&key, 12)?;
        let rot = Matrix3::new(tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10]);
        let trans = Vector3::new(tr[3], tr[7], tr[11]);
        let rotation = r0 * rot;
        let translation = r0 * trans + baseline;
        let t = RigidTransform::with_tolerance(rotation, translation, CALIB_ROTATION_TOLERANCE).map_err(|e| {
            let error = match e {
                GeometryError::NonOrthonormalRotation(err) => err,
                _ => f64::NAN,
            };
            DatasetError::NonOrthonormalRotation { key: key.clone(), error }
        })?;
        extrinsics.push(t);
    }
    CalibrationSet::new(camera, extrinsics)
}

/// Reads KITTI velodyne records (`x, y, z, intensity` as f32 LE). Per-point
/// timestamps are not stored in the format; they are synthesized as a
/// uniform ramp from `scan_start` to `scan_end` in storage order.
pub fn read_point_cloud_bin(bytes: &[u8], scan_start: f64, scan_end: f64) -> Result<PointCloud, DatasetError> {
    if !bytes.len().is_multiple_of(16) {
        return Err(DatasetError::TruncatedRecord(bytes.len()));
    }
    let n = bytes.len() / 16;
    let points = bytes
        .chunks_exact(16)
        .enumerate()
        .map(|(i, rec)| {
            let f = |j: usize| f32::from_le_bytes(rec[4 * j..4 * j + 4].try_into().unwrap());
            let t = if n > 1 {
                scan_start + (scan_end - scan_start) * i as f64 / (n - 1) as f64
            } else {
                scan_start
            };
            LidarPoint {
                x: f64::from(f(0)),
                y: f64::from(f(1)),
                z: f64::from(f(2)),
                intensity: f(3),
                timestamp: t,
            }
        })
        .collect();
    Ok(PointCloud::new(points, scan_start, scan_end))
}

pub fn write_point_cloud_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Per-point timestamps (seconds, f32 LE), in point order.
pub fn write_timestamps(cloud: &PointCloud) -> Vec<u8> {
    cloud
        .points
        .iter()
        .flat_map(|p| (p.timestamp as f32).to_le_bytes())
        .collect()
}

pub fn read_timestamps(bytes: &[u8]) -> Result<Vec<f64>, DatasetError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(DatasetError::TruncatedRecord(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect())
}

pub fn load_point_cloud(path: &Path, scan_start: f64, scan_period: f64) -> Result<PointCloud, DatasetError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    read_point_cloud_bin(&bytes, scan_start, scan_start + scan_period)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegClass {
    pub name: String,
    pub id: u8,
    pub color: [u8; 3],
}

/// Class table for grey-coding segmentation: a pixel of class `c`,
/// instance `i` is coded as `c * 4 + i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationCoding {
    classes: Vec<SegClass>,
}

impl Default for SegmentationCoding {
    fn default() -> Self {
        const TABLE: [(&str, [u8; 3]); 14] = [
            ("sky", [70, 130, 180]),
            ("road", [128, 64, 128]),
            ("sidewalk", [244, 35, 232]),
            ("building", [70, 70, 70]),
            ("vegetation", [107, 142, 35]),
            ("car", [0, 0, 142]),
            ("pedestrian", [220, 20, 60]),
            ("pole", [153, 153, 153]),
            ("traffic_sign", [220, 220, 0]),
            ("truck", [0, 0, 70]),
            ("bicycle", [119, 11, 32]),
            ("curbstone", [196, 196, 196]),
            ("terrain", [152, 251, 152]),
            ("wall", [102, 102, 156]),
        ];
        let classes = TABLE
            .iter()
            .enumerate()
            .map(|(i, (name, color))| SegClass {
                name: (*name).into(),
                id: i as u8,
                color: *color,
            })
            .collect();
        Self::new(classes).expect("built-in table is valid")
    }
}

impl SegmentationCoding {
    pub fn new(classes: Vec<SegClass>) -> Result<Self, DatasetError> {
        let mut seen = [false; MAX_CLASS_ID as usize + 1];
        for c in &classes {
            if c.id > MAX_CLASS_ID {
                return Err(DatasetError::InvalidCoding(format!("class id {} > {MAX_CLASS_ID}", c.id)));
            }
            if std::mem::replace(&mut seen[c.id as usize], true) {
                return Err(DatasetError::InvalidCoding(format!("duplicate class id {}", c.id)));
            }
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[SegClass] {
        &self.classes
    }

    pub fn class(&self, id: u8) -> Option<&SegClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    pub fn class_by_name(&self, name: &str) -> Option<&SegClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    pub fn code(&self, label: SegLabel) -> Result<u8, DatasetError> {
        if self.class(label.class).is_none() {
            return Err(DatasetError::UnknownClass(label.class));
        }
        if label.instance >= INSTANCES_PER_CLASS {
            return Err(DatasetError::InvalidCoding(format!("instance {} >= {INSTANCES_PER_CLASS}", label.instance)));
        }
        Ok(label.class * INSTANCES_PER_CLASS + label.instance)
    }

    pub fn decode(code: u8) -> SegLabel {
        SegLabel {
            class: code / INSTANCES_PER_CLASS,
            instance: code % INSTANCES_PER_CLASS,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct SegLabel {
    pub class: u8,
    pub instance: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<SegLabel>,
}

impl SegmentationMap {
    pub fn filled(width: u32, height: u32, label: SegLabel) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> SegLabel {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, label: SegLabel) {
        self.labels[y as usize * self.width as usize + x as usize] = label;
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            labels: img.pixels().map(|p| SegmentationCoding::decode(p.0[0])).collect(),
        }
    }

    pub fn to_gray8(&self, coding: &SegmentationCoding) -> Result<GrayImage, DatasetError> {
        let codes = self.labels.iter().map(|&l| coding.code(l)).collect::<Result<Vec<_>, _>>()?;
        Ok(GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([codes[y as usize * self.width as usize + x as usize]])
        }))
    }

    pub fn read_png(path: &Path) -> Result<Self, DatasetError> {
        Ok(Self::from_gray8(&read_gray_png(path)?))
    }

    /// Display colors in `[0, 1]`.
    pub fn render_colors(&self, coding: &SegmentationCoding) -> Result<Image3, DatasetError> {
        let mut out = Image3::filled(self.width, self.height, [0.0; 3]);
        for y in 0..self.height {
            for x in 0..self.width {
                let label = self.get(x, y);
                let class = coding.class(label.class).ok_or(DatasetError::UnknownClass(label.class))?;
                out.set_pixel(x, y, class.color.map(|c| f32::from(c) / 255.0));
            }
        }
        Ok(out)
    }
}

/// Packs grayscale camera, normalized depth and coded segmentation into the
/// three channels of one image.
pub fn encode_combined(
    gray: &Raster,
    depth: &Raster,
    seg: &SegmentationMap,
    coding: &SegmentationCoding,
) -> Result<Image3, DatasetError> {
    let dims = (gray.width, gray.height);
    if (depth.width, depth.height) != dims || (seg.width, seg.height) != dims {
        return Err(DatasetError::DimensionMismatch(format!(
            "gray {}x{}, depth {}x{}, segmentation {}x{}",
            gray.width, gray.height, depth.width, depth.height, seg.width, seg.height
        )));
    }
    let seg_plane = seg
        .labels
        .iter()
        .map(|&l| coding.code(l).map(|c| f32::from(c) / 255.0))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Image3::from_planes([&gray.data, &depth.data, &seg_plane], dims.0, dims.1)?)
}

/// Rec. 601 luma.
pub fn to_gray(img: &Image3) -> Raster {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..r.len()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect();
    Raster::from_vec(img.width, img.height, data).expect("plane size")
}

/// Depth in meters to `[0, 1]` by dividing by `max_range`. Pixels without a
/// valid depth (non-positive or non-finite) are treated as beyond range.
pub fn normalize_depth(depth: &Raster, max_range: f64) -> Raster {
    let data = depth
        .data
        .iter()
        .map(|&d| {
            if d > 0.0 && d.is_finite() {
                (f64::from(d) / max_range).min(1.0) as f32
            } else {
                1.0
            }
        })
        .collect();
    Raster::from_vec(depth.width, depth.height, data).expect("same size")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedFrame {
    pub camera_index: usize,
    /// Index of the chosen scan in each sensor's stream.
    pub scan_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FramePairing {
    pub frames: Vec<PairedFrame>,
    pub dropped: usize,
}

fn check_sorted(times: &[f64], name: String) -> Result<(), DatasetError> {
    if times.windows(2).any(|w| !(w[0] <= w[1])) || times.iter().any(|t| !t.is_finite()) {
        return Err(DatasetError::UnsortedStream(name));
    }
    Ok(())
}

fn nearest(times: &[f64], t: f64) -> Option<usize> {
    let split = times.partition_point(|&s| s < t);
    let mut best: Option<usize> = None;
    for i in [split.checked_sub(1), Some(split)].into_iter().flatten() {
        if i >= times.len() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let (db, di) = ((times[b] - t).abs(), (times[i] - t).abs());
                if di < db - TIME_TIE_EPSILON || ((di - db).abs() <= TIME_TIE_EPSILON && times[i] < times[b]) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Pairs each camera frame with the nearest scan of every sensor. A frame is
/// dropped when some sensor has no scan within `tolerance`. Ties on |Δt|
/// (within [`TIME_TIE_EPSILON`]) go to the earlier scan.
pub fn pair_frames(camera: &[f64], scans: &[Vec<f64>], tolerance: f64) -> Result<FramePairing, DatasetError> {
    check_sorted(camera, "camera stream".into())?;
    for (i, s) in scans.iter().enumerate() {
        check_sorted(s, format!("scan stream {i}"))?;
    }
    let mut frames = Vec::new();
    let mut dropped = 0;
    'frames: for (ci, &t) in camera.iter().enumerate() {
        let mut scan_indices = Vec::with_capacity(scans.len());
        for stream in scans {
            match nearest(stream, t) {
                Some(i) if (stream[i] - t).abs() <= tolerance + TIME_TIE_EPSILON => scan_indices.push(i),
                _ => {
                    dropped += 1;
                    continue 'frames;
                }
            }
        }
        frames.push(PairedFrame {
            camera_index: ci,
            scan_indices,
        });
    }
    Ok(FramePairing { frames, dropped })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Depth,
    Segmentation,
    Combined,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Rgb, Modality::Depth, Modality::Segmentation, Modality::Combined];
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rgb => "rgb",
            Modality::Depth => "depth",
            Modality::Segmentation => "segmentation",
            Modality::Combined => "combined",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(Modality::Rgb),
            "depth" => Ok(Modality::Depth),
            "segmentation" | "sem" | "seg" => Ok(Modality::Segmentation),
            "combined" | "com" => Ok(Modality::Combined),
            other => Err(format!("unknown modality {other:?}")),
        }
    }
}

fn default_split() -> String {
    "train".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: String,
    pub camera_timestamp: f64,
    #[serde(default = "default_split")]
    pub split: String,
    pub image: PathBuf,
    /// One scan per sensor, in calibration order.
    pub scans: Vec<PathBuf>,
    /// Start time of each scan; defaults to the camera timestamp.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scan_timestamps: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<PathBuf>,
}

impl FrameRecord {
    pub fn scan_start(&self, sensor: usize) -> f64 {
        self.scan_timestamps.get(sensor).copied().unwrap_or(self.camera_timestamp)
    }
}

fn default_scan_period() -> f64 {
    DEFAULT_SCAN_PERIOD
}

fn default_depth_max_range() -> f64 {
    DEFAULT_DEPTH_MAX_RANGE
}

/// Dataset description. Relative paths are resolved against the directory
/// holding the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub calibration: PathBuf,
    pub sensor_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[u32; 2]>,
    #[serde(default = "default_scan_period")]
    pub scan_period: f64,
    #[serde(default = "default_depth_max_range")]
    pub depth_max_range: f64,
    /// Nominal split sizes of the full-scale dataset (informational).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub split_sizes: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation_classes: Option<Vec<SegClass>>,
    pub frames: Vec<FrameRecord>,
}

#[derive(Clone, Debug)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub root: PathBuf,
    pub calibration: CalibrationSet,
    pub coding: SegmentationCoding,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Reads the manifest and its calibration, and checks that every
    /// referenced file exists.
    pub fn load(path: &Path) -> Result<LoadedManifest, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let manifest = Self::from_json(&text)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate(&root)?;
        let calib_path = root.join(&manifest.calibration);
        let calib_text = std::fs::read_to_string(&calib_path).map_err(io_err(&calib_path))?;
        let mut calibration = parse_kitti_calib(&calib_text)?;
        if let Some([w, h]) = manifest.image_size {
            calibration = calibration.with_image_size(w, h)?;
        }
        if calibration.sensor_count() != manifest.sensor_count {
            return Err(DatasetError::InvalidManifest(format!(
                "manifest lists {} sensors, calibration has {}",
                manifest.sensor_count,
                calibration.sensor_count()
            )));
        }
        let coding = match &manifest.segmentation_classes {
            Some(classes) => SegmentationCoding::new(classes.clone())?,
            None => SegmentationCoding::default(),
        };
        Ok(LoadedManifest {
            manifest,
            root,
            calibration,
            coding,
        })
    }

    fn validate(&self, root: &Path) -> Result<(), DatasetError> {
        if self.sensor_count == 0 {
            return Err(DatasetError::InvalidManifest("sensor_count must be at least 1".into()));
        }
        if !(self.scan_period > 0.0) || !(self.depth_max_range > 0.0) {
            return Err(DatasetError::InvalidManifest("scan_period and depth_max_range must be positive".into()));
        }
        for f in &self.frames {
            if !f.camera_timestamp.is_finite() {
                return Err(DatasetError::InvalidManifest(format!("frame {}: non-finite timestamp", f.id)));
            }
            if f.scans.len() != self.sensor_count {
                return Err(DatasetError::InvalidManifest(format!(
                    "frame {} lists {} scans for {} sensors",
                    f.id,
                    f.scans.len(),
                    self.sensor_count
                )));
            }
            let paths = std::iter::once(&f.image)
                .chain(&f.scans)
                .chain(f.depth.iter())
                .chain(f.segmentation.iter());
            for p in paths {
                let full = root.join(p);
                if !full.is_file() {
                    return Err(DatasetError::InvalidManifest(format!(
                        "frame {}: missing file {}",
                        f.id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Square network input placement of a `src_width x src_height` image:
/// uniform scale to fit, centered, zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Letterbox {
    pub src_width: u32,
    pub src_height: u32,
    pub size: u32,
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Letterbox {
    pub fn new(src_width: u32, src_height: u32, size: u32) -> Self {
        let scale = f64::from(size) / f64::from(src_width.max(src_height));
        let offset_x = (f64::from(size) - scale * f64::from(src_width)) / 2.0;
        let offset_y = (f64::from(size) - scale * f64::from(src_height)) / 2.0;
        Self {
            src_width,
            src_height,
            size,
            scale,
            offset_x,
            offset_y,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.src_width == self.size && self.src_height == self.size
    }

    fn resample(
        src: &[f32],
        sw: u32,
        sh: u32,
        dw: u32,
        dh: u32,
        map: impl Fn(f64, f64) -> (f64, f64),
    ) -> Vec<f32> {
        let mut out = vec![0.0; dw as usize * dh as usize];
        for y in 0..dh {
            for x in 0..dw {
                let (sx, sy) = map(f64::from(x) + 0.5, f64::from(y) + 0.5);
                if sx < 0.0 || sy < 0.0 || sx > f64::from(sw) || sy > f64::from(sh) {
                    continue;
                }
                let (fx, fy) = ((sx - 0.5).clamp(0.0, f64::from(sw - 1)), (sy - 0.5).clamp(0.0, f64::from(sh - 1)));
                let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
                let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
                let (ax, ay) = (fx - f64::from(x0), fy - f64::from(y0));
                let g = |x: u32, y: u32| f64::from(src[y as usize * sw as usize + x as usize]);
                let v = (g(x0, y0) * (1.0 - ax) + g(x1, y0) * ax) * (1.0 - ay)
                    + (g(x0, y1) * (1.0 - ax) + g(x1, y1) * ax) * ay;
                out[y as usize * dw as usize + x as usize] = v as f32;
            }
        }
        out
    }

    /// Source plane to the square network frame.
    pub fn forward_plane(&self, plane: &[f32]) -> Vec<f32> {
        if self.is_identity() {
            return plane.to_vec();
        }
        Self::resample(plane, self.src_width, self.src_height, self.size, self.size, |x, y| {
            ((x - self.offset_x) / self.scale, (y - self.offset_y) / self.scale)
        })
    }

    /// Network-frame plane back to the source resolution.
    pub fn inverse_plane(&self, plane: &[f32]) -> Vec<f32> {
        if self.is_identity() {
            return plane.to_vec();
        }
        Self::resample(plane, self.size, self.size, self.src_width, self.src_height, |x, y| {
            (x * self.scale + self.offset_x, y * self.scale + self.offset_y)
        })
    }

    pub fn forward_image(&self, img: &Image3) -> Image3 {
        let planes: Vec<Vec<f32>> = (0..3).map(|c| self.forward_plane(img.plane(c))).collect();
        Image3::from_planes([&planes[0], &planes[1], &planes[2]], self.size, self.size).expect("plane sizes")
    }

    pub fn forward_map(&self, map: &VisibilityMap) -> VisibilityMap {
        let data = self.forward_plane(map.values()).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        VisibilityMap::new(self.size, self.size, data).expect("clamped")
    }

    pub fn inverse_map(&self, map: &VisibilityMap) -> VisibilityMap {
        let data = self.inverse_plane(map.values()).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        VisibilityMap::new(self.src_width, self.src_height, data).expect("clamped")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub input: Image3,
    pub target: VisibilityMap,
    pub letterbox: Letterbox,
}

/// Everything needed to turn manifest frames into samples.
#[derive(Clone, Debug)]
pub struct SampleSpec {
    pub modality: Modality,
    pub blur: BlurConfig,
    /// Square network input size; `None` keeps the native resolution.
    pub network_size: Option<u32>,
}

/// Binary hit mask of all sensors' scans of one frame.
pub fn frame_hit_mask(loaded: &LoadedManifest, record: &FrameRecord) -> Result<BinaryHitMask, DatasetError> {
    let mut clouds = Vec::with_capacity(record.scans.len());
    for (i, path) in record.scans.iter().enumerate() {
        clouds.push(load_point_cloud(
            &loaded.root.join(path),
            record.scan_start(i),
            loaded.manifest.scan_period,
        )?);
    }
    Ok(rasterize_scans(
        clouds.iter().zip(&loaded.calibration.lidar_to_cam),
        &loaded.calibration.camera,
    ))
}

/// Ground-truth visibility map of one frame at native resolution.
pub fn frame_lidar_image(
    loaded: &LoadedManifest,
    record: &FrameRecord,
    blur: &BlurConfig,
) -> Result<VisibilityMap, DatasetError> {
    Ok(blur_mask(&frame_hit_mask(loaded, record)?, blur)?)
}

/// Network input of one frame at native resolution.
pub fn frame_input(loaded: &LoadedManifest, record: &FrameRecord, modality: Modality) -> Result<Image3, DatasetError> {
    let root = &loaded.root;
    let missing = |channel| DatasetError::MissingChannel {
        frame: record.id.clone(),
        channel,
    };
    let depth = || -> Result<Raster, DatasetError> {
        let path = record.depth.as_ref().ok_or_else(|| missing("depth"))?;
        Ok(normalize_depth(&Raster::read(root.join(path))?, loaded.manifest.depth_max_range))
    };
    let seg = || -> Result<SegmentationMap, DatasetError> {
        let path = record.segmentation.as_ref().ok_or_else(|| missing("segmentation"))?;
        SegmentationMap::read_png(&root.join(path))
    };
    let rgb = || Image3::read_png(root.join(&record.image));
    let k = &loaded.calibration.camera;
    let input = match modality {
        Modality::Rgb => rgb()?,
        Modality::Depth => {
            let d = depth()?;
            Image3::from_planes([&d.data, &d.data, &d.data], d.width, d.height)?
        }
        Modality::Segmentation => seg()?.render_colors(&loaded.coding)?,
        Modality::Combined => {
            let (d, s) = (depth()?, seg()?);
            encode_combined(&to_gray(&rgb()?), &d, &s, &loaded.coding)?
        }
    };
    if (input.width, input.height) != (k.width, k.height) {
        return Err(DatasetError::DimensionMismatch(format!(
            "frame {} input is {}x{}, camera is {}x{}",
            record.id, input.width, input.height, k.width, k.height
        )));
    }
    Ok(input)
}

/// Builds one training pair: the modality image as input and the blurred
/// union of all sensors' projected scans as target, both letterboxed to the
/// network size.
pub fn build_sample(
    loaded: &LoadedManifest,
    record: &FrameRecord,
    spec: &SampleSpec,
) -> Result<TrainingSample, DatasetError> {
    let input = frame_input(loaded, record, spec.modality)?;
    let target = frame_lidar_image(loaded, record, &spec.blur)?;
    let k = &loaded.calibration.camera;
    let letterbox = Letterbox::new(k.width, k.height, spec.network_size.unwrap_or(k.width.max(k.height)));
    Ok(TrainingSample {
        id: record.id.clone(),
        input: letterbox.forward_image(&input),
        target: letterbox.forward_map(&target),
        letterbox,
    })
}
