//! Deterministic synthetic datasets: a small camera, one or five spinning
//! LiDARs and a scene of axis-aligned boxes, written in the manifest layout.
//!
//! World coordinates are the ego (sensor 0) frame at time 0: x forward,
//! y left, z up.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    CalibrationSet, DatasetError, FrameRecord, Manifest, SegLabel, SegmentationCoding, SegmentationMap,
    DEFAULT_DEPTH_MAX_RANGE,
};
use crate::geometry::{CameraIntrinsics, GeometryError, RigidTransform, Vec3};
use crate::raster::{Image3, Raster, RasterError};
use crate::reconstruct::{
    lidar_axes_to_camera, simulate_scan, write_cloud, DepthProvider, EgoTrajectory, ReconstructError, ScanPattern,
    TimedPose, TriangleScene, DEFAULT_MAX_RANGE,
};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SIZE: u32 = 64;
/// Focal length in pixels per pixel of image width.
pub const FOCAL_PER_PIXEL: f64 = 0.625;
/// Camera origin in the ego frame.
pub const CAMERA_OFFSET: [f64; 3] = [0.27, 0.0, -0.08];
pub const SCAN_PERIOD: f64 = 0.1;
pub const FRAME_INTERVAL: f64 = 0.5;
pub const EGO_SPEED: f64 = 2.0;
pub const AZIMUTH_COLUMNS: usize = 360;
/// Beam elevations in degrees.
pub const ELEVATIONS_DEG: [f64; 8] = [-15.0, -12.0, -9.0, -6.0, -3.0, 0.0, 3.0, 6.0];
pub const RGB_NOISE: f32 = 0.03;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CALIB_FILE: &str = "calib.txt";
pub const PATTERN_FILE: &str = "pattern.json";
pub const SCENE_FILE: &str = "scene.json";
pub const LAYOUT_FILE: &str = "fixture.json";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("invalid fixture config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    /// One sensor facing a fronto-parallel wall; stationary.
    Wall,
    /// One sensor driving towards a box on a road in front of a low wall
    /// with open sky above.
    StreetBox,
    /// The street-box scene seen by five sensors.
    FiveSensor,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 3] = [Self::Wall, Self::StreetBox, Self::FiveSensor];

    pub fn frame_count(self) -> usize {
        match self {
            Self::Wall => 1,
            Self::StreetBox => 4,
            Self::FiveSensor => 2,
        }
    }

    pub fn sensor_count(self) -> usize {
        match self {
            Self::FiveSensor => 5,
            _ => 1,
        }
    }

    fn speed(self) -> f64 {
        match self {
            Self::Wall => 0.0,
            _ => EGO_SPEED,
        }
    }
}

impl fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Wall => "wall",
            Self::StreetBox => "street-box",
            Self::FiveSensor => "five-sensor",
        })
    }
}

impl FromStr for FixtureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown fixture kind {s:?} (wall, street-box, five-sensor)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureConfig {
    pub kind: FixtureKind,
    pub seed: u64,
    /// Square image side in pixels.
    pub size: u32,
}

impl FixtureConfig {
    pub fn new(kind: FixtureKind) -> Self {
        Self {
            kind,
            seed: DEFAULT_SEED,
            size: DEFAULT_SIZE,
        }
    }
}

/// Scene parameters drawn from the seed. Boxes are `[min, max]` corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Height of the road plane; `None` for the wall scene.
    pub ground_z: Option<f64>,
    /// x of the wall's front face.
    pub wall_x: f64,
    /// Height of the wall's top edge.
    pub wall_top: f64,
    pub car: Option<[[f64; 3]; 2]>,
}

/// Half extent of the road and wall, far beyond the camera's field of view.
const SCENE_HALF_WIDTH: f64 = 60.0;
/// Top of the wall scene's wall, above the camera's field of view.
const TALL_WALL_TOP: f64 = 40.0;
const WALL_THICKNESS: f64 = 1.0;

impl Layout {
    fn draw(kind: FixtureKind, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            FixtureKind::Wall => Self {
                ground_z: None,
                wall_x: rng.random_range(8.0..12.0),
                wall_top: TALL_WALL_TOP,
                car: None,
            },
            _ => {
                let ground_z = -1.7;
                let x0 = rng.random_range(9.0..12.0);
                let y0 = rng.random_range(-1.5..-0.5);
                Self {
                    ground_z: Some(ground_z),
                    wall_x: rng.random_range(28.0..32.0),
                    wall_top: rng.random_range(2.5..4.0),
                    car: Some([[x0, y0, ground_z], [x0 + 4.0, y0 + 2.0, ground_z + 1.5]]),
                }
            }
        }
    }

    /// Labeled scene objects.
    pub fn objects(&self) -> Vec<(SegLabel, TriangleScene)> {
        let coding = SegmentationCoding::default();
        let label = |name: &str, instance| SegLabel {
            class: coding.class_by_name(name).expect("built-in class").id,
            instance,
        };
        let mut out = Vec::new();
        let bottom = self.ground_z.unwrap_or(-TALL_WALL_TOP);
        let mut wall = TriangleScene::default();
        wall.add_box(
            Vec3::new(self.wall_x, -SCENE_HALF_WIDTH, bottom),
            Vec3::new(self.wall_x + WALL_THICKNESS, SCENE_HALF_WIDTH, self.wall_top),
        );
        out.push((label("building", 0), wall));
        if let Some(z) = self.ground_z {
            let mut road = TriangleScene::default();
            road.add_quad(
                Vec3::new(-SCENE_HALF_WIDTH, -SCENE_HALF_WIDTH, z),
                Vec3::new(self.wall_x + SCENE_HALF_WIDTH, 0.0, 0.0),
                Vec3::new(0.0, 2.0 * SCENE_HALF_WIDTH, 0.0),
            );
            out.push((label("road", 0), road));
        }
        if let Some([lo, hi]) = self.car {
            let mut car = TriangleScene::default();
            car.add_box(Vec3::from(lo), Vec3::from(hi));
            out.push((label("car", 1), car));
        }
        out
    }
}

/// Sensor mounts (sensor -> ego) of the five-sensor rig: roof center, two
/// front corners and two rear corners, each yawed outwards.
pub fn five_sensor_mounts() -> Vec<RigidTransform> {
    const MOUNTS: [([f64; 3], f64); 5] = [
        ([0.0, 0.0, 0.0], 0.0),
        ([1.2, 0.8, -0.4], 30.0),
        ([1.2, -0.8, -0.4], -30.0),
        ([-1.5, 0.8, -0.3], 150.0),
        ([-1.5, -0.8, -0.3], -150.0),
    ];
    MOUNTS
        .iter()
        .map(|(t, yaw)| {
            RigidTransform::from_rotation(
                Rotation3::from_axis_angle(&Vector3::z_axis(), yaw.to_radians()),
                Vec3::from(*t),
            )
        })
        .collect()
}

/// Rendered camera channels of one frame.
#[derive(Clone, Debug)]
pub struct FrameRender {
    /// Camera z in meters; 0 where nothing is hit.
    pub depth: Raster,
    pub labels: SegmentationMap,
    pub rgb: Image3,
}

/// A fully specified synthetic dataset.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub config: FixtureConfig,
    pub layout: Layout,
    pub calibration: CalibrationSet,
    /// sensor -> ego, one per sensor.
    pub mounts: Vec<RigidTransform>,
    pub pattern: ScanPattern,
    /// ego -> world over time.
    pub ego: EgoTrajectory,
    pub camera_timestamps: Vec<f64>,
    objects: Vec<(SegLabel, TriangleScene)>,
    noise_seed: u64,
}

impl Fixture {
    pub fn new(config: FixtureConfig) -> Result<Self, FixtureError> {
        if config.size < 8 {
            return Err(FixtureError::InvalidConfig(format!("size {} is below 8", config.size)));
        }
        let kind = config.kind;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layout = Layout::draw(kind, &mut rng);
        let noise_seed = rng.random();

        let n = f64::from(config.size);
        let f = FOCAL_PER_PIXEL * n;
        let camera = CameraIntrinsics::new(f, f, n / 2.0, n / 2.0, config.size, config.size)?;
        let axes = lidar_axes_to_camera();
        let ego_to_cam = RigidTransform::new(axes, -(axes * Vec3::from(CAMERA_OFFSET)))?;
        let mounts = match kind {
            FixtureKind::FiveSensor => five_sensor_mounts(),
            _ => vec![RigidTransform::identity()],
        };
        let lidar_to_cam = mounts.iter().map(|m| ego_to_cam.compose(m)).collect();
        let calibration = CalibrationSet::new(camera, lidar_to_cam)?;

        let elevations: Vec<f64> = ELEVATIONS_DEG.iter().map(|d| d.to_radians()).collect();
        let step = 360.0 / AZIMUTH_COLUMNS as f64;
        let pattern = ScanPattern::spinning(
            (-180.0f64).to_radians(),
            (180.0 - step).to_radians(),
            AZIMUTH_COLUMNS,
            &elevations,
            SCAN_PERIOD,
        )?;

        let camera_timestamps: Vec<f64> = (0..kind.frame_count()).map(|i| i as f64 * FRAME_INTERVAL).collect();
        let t_end = camera_timestamps.last().copied().unwrap_or(0.0) + SCAN_PERIOD;
        let pose = |t: f64| TimedPose {
            timestamp: t,
            pose: RigidTransform::from_translation(Vec3::new(kind.speed() * t, 0.0, 0.0)),
        };
        let ego = EgoTrajectory::new(vec![pose(0.0), pose(t_end)])?;

        Ok(Self {
            config,
            objects: layout.objects(),
            layout,
            calibration,
            mounts,
            pattern,
            ego,
            camera_timestamps,
            noise_seed,
        })
    }

    /// All objects as one triangle soup.
    pub fn scene(&self) -> TriangleScene {
        TriangleScene::new(self.objects.iter().flat_map(|(_, s)| s.triangles.iter().copied()).collect())
    }

    /// sensor -> world over time.
    pub fn sensor_trajectory(&self, sensor: usize) -> EgoTrajectory {
        let mount = &self.mounts[sensor];
        EgoTrajectory {
            poses: self
                .ego
                .poses
                .iter()
                .map(|p| TimedPose {
                    timestamp: p.timestamp,
                    pose: p.pose.compose(mount),
                })
                .collect(),
        }
    }

    pub fn camera_to_world(&self, t: f64) -> RigidTransform {
        let ego_to_cam = self.calibration.lidar_to_cam[0].compose(&self.mounts[0].inverse());
        self.ego.pose_at(t).compose(&ego_to_cam.inverse())
    }

    pub fn frame_id(index: usize) -> String {
        format!("{index:06}")
    }

    /// Renders depth, labels and shaded color of frame `index`.
    pub fn render(&self, index: usize) -> FrameRender {
        let k = &self.calibration.camera;
        let cam_to_world = self.camera_to_world(self.camera_timestamps[index]);
        let coding = SegmentationCoding::default();
        let sky = SegLabel {
            class: coding.class_by_name("sky").expect("built-in class").id,
            instance: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed.wrapping_add(index as u64));
        let mut depth = Raster::filled(k.width, k.height, 0.0);
        let mut labels = SegmentationMap::filled(k.width, k.height, sky);
        let mut rgb = Image3::filled(k.width, k.height, [0.0; 3]);
        for v in 0..k.height {
            for u in 0..k.width {
                let d_cam = Vec3::new((f64::from(u) - k.cx) / k.fx, (f64::from(v) - k.cy) / k.fy, 1.0).normalize();
                let d_world = cam_to_world.transform_vector(&d_cam);
                let hit = self
                    .objects
                    .iter()
                    .filter_map(|(label, s)| {
                        s.cast(&cam_to_world.translation, &d_world, DEFAULT_MAX_RANGE).map(|t| (t, *label))
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                let (z, label) = hit.map_or((0.0, sky), |(t, l)| (t * d_cam.z, l));
                let color = coding.class(label.class).expect("built-in class").color;
                let shade = if z > 0.0 { 0.45 + 0.55 * (-z / 25.0).exp() } else { 1.0 };
                let mut px = [0.0f32; 3];
                for (p, c) in px.iter_mut().zip(color) {
                    let noise = rng.random_range(-RGB_NOISE..=RGB_NOISE);
                    *p = (f32::from(c) / 255.0 * shade as f32 + noise).clamp(0.0, 1.0);
                }
                depth.set(u, v, z as f32);
                labels.set(u, v, label);
                rgb.set_pixel(u, v, px);
            }
        }
        FrameRender { depth, labels, rgb }
    }

    /// Writes the dataset into `dir` and returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, FixtureError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let write_text = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(io_err(&p))
        };
        write_text(CALIB_FILE, self.calibration.to_kitti_text())?;
        write_text(LAYOUT_FILE, serde_json::to_string_pretty(&self.layout)?)?;
        write_text(SCENE_FILE, serde_json::to_string_pretty(&self.scene())?)?;
        self.pattern.write(dir.join(PATTERN_FILE))?;
        let trajectories: Vec<EgoTrajectory> = (0..self.mounts.len()).map(|s| self.sensor_trajectory(s)).collect();
        for (s, t) in trajectories.iter().enumerate() {
            t.write(dir.join(trajectory_file(s)))?;
        }

        let scene = self.scene();
        let coding = SegmentationCoding::default();
        let frames_dir = dir.join("frames");
        std::fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        let n = self.camera_timestamps.len();
        let mut frames = Vec::with_capacity(n);
        for (i, &t) in self.camera_timestamps.iter().enumerate() {
            let id = Self::frame_id(i);
            let rel = |name: &str| PathBuf::from("frames").join(format!("{id}_{name}"));
            let render = self.render(i);
            render.rgb.write_png(dir.join(rel("image.png")))?;
            render.depth.write(dir.join(rel("depth.bin")))?;
            crate::raster::write_gray_png(dir.join(rel("seg.png")), &render.labels.to_gray8(&coding)?)?;
            let mut scans = Vec::with_capacity(trajectories.len());
            for (s, traj) in trajectories.iter().enumerate() {
                let cloud = simulate_scan(&self.pattern, traj, &scene, t, DEFAULT_MAX_RANGE)?;
                let path = rel(&format!("scan{s}.bin"));
                write_cloud(dir.join(&path), &cloud, false)?;
                scans.push(path);
            }
            frames.push(FrameRecord {
                id: id.clone(),
                camera_timestamp: t,
                split: if n > 1 && i == n - 1 { "test" } else { "train" }.into(),
                image: rel("image.png"),
                scans,
                scan_timestamps: Vec::new(),
                depth: Some(rel("depth.bin")),
                segmentation: Some(rel("seg.png")),
            });
        }
        let k = &self.calibration.camera;
        let manifest = Manifest {
            name: format!("synthetic-{}-{}", self.config.kind, self.config.seed),
            calibration: PathBuf::from(CALIB_FILE),
            sensor_count: self.mounts.len(),
            image_size: Some([k.width, k.height]),
            scan_period: SCAN_PERIOD,
            depth_max_range: DEFAULT_DEPTH_MAX_RANGE,
            split_sizes: Default::default(),
            segmentation_classes: None,
            frames,
        };
        write_text(MANIFEST_FILE, manifest.to_json())?;
        Ok(dir.join(MANIFEST_FILE))
    }
}

pub fn trajectory_file(sensor: usize) -> String {
    format!("trajectory{sensor}.json")
}
