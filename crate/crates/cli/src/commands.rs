//! Command implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use lidarsim::dataset::{
    build_sample, frame_input, DatasetError, frame_lidar_image, parse_kitti_calib, CalibrationSet, FrameRecord, Letterbox,
    LoadedManifest, Manifest, SampleSpec,
};
use lidarsim::fixture::{Fixture, FixtureConfig};
use lidarsim::geometry::{LidarPoint, PointCloud};
use lidarsim::lidar_image::{write_colorized_png, BlurConfig, VisibilityMap};
use lidarsim::metrics::{aggregate, emit_table, evaluate_pair, overlay, pairs_to_json, MetricsReport};
use lidarsim::pix2pix::{train, DirectorySink, PatchGanConfig, Pix2Pix, UNetConfig};
use lidarsim::raster::{write_rgb_png, Image3, Raster};
use lidarsim::reconstruct::{
    raycast_scan, sample_grid, write_cloud, DepthProvider, DepthRasterScene, EgoTrajectory, RaycastConfig,
    ScanPattern, TriangleScene,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::{
    BenchArgs, BlurArgs, EvaluateArgs, GenLidarImagesArgs, InferArgs, Preset, ReconstructArgs, ReconstructMode,
    SynthFixtureArgs, TrainArgs,
};
use crate::config::{require, PipelineConfig};
use crate::error::CliError;

pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const MAP_EXTENSION: &str = "bin";

fn input_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(input_err(dir))
}

fn resolve_blur(args: &BlurArgs, cfg: &PipelineConfig) -> Result<BlurConfig, CliError> {
    let blur = if args.tent {
        BlurConfig::tent()
    } else if let Some(sigma) = args.sigma {
        BlurConfig::gaussian(sigma)
    } else {
        cfg.blur.clone()
    };
    blur.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(blur)
}

fn networks(preset: Option<Preset>, cfg: &PipelineConfig) -> (UNetConfig, PatchGanConfig) {
    match preset {
        Some(Preset::Desk) => (UNetConfig::desk(), PatchGanConfig::desk()),
        Some(Preset::Full) => (UNetConfig::default(), PatchGanConfig::default()),
        None => (cfg.unet, cfg.patchgan),
    }
}

fn load_manifest(path: &Path) -> Result<LoadedManifest, CliError> {
    let loaded = Manifest::load(path).map_err(|e| match e {
        DatasetError::Io { .. } => CliError::from(e),
        _ => CliError::Input(format!("{}: {e}", path.display())),
    })?;
    if loaded.manifest.frames.is_empty() {
        return Err(CliError::Input(format!("{}: manifest has no frames", path.display())));
    }
    for f in &loaded.manifest.frames {
        let plain = !f.id.is_empty() && Path::new(&f.id).file_name().is_some_and(|n| n == f.id.as_str());
        if !plain {
            return Err(CliError::Input(format!("frame id {:?} is not a plain file name", f.id)));
        }
    }
    Ok(loaded)
}

fn frames_in_split<'a>(loaded: &'a LoadedManifest, split: &str) -> Result<Vec<&'a FrameRecord>, CliError> {
    let frames: Vec<_> = loaded
        .manifest
        .frames
        .iter()
        .filter(|f| split == "all" || f.split == split)
        .collect();
    if frames.is_empty() {
        return Err(CliError::Input(format!("no frames in split {split:?}")));
    }
    Ok(frames)
}

fn write_map(dir: &Path, name: &str, map: &VisibilityMap) -> Result<(), CliError> {
    map.write(dir.join(format!("{name}.{MAP_EXTENSION}")))?;
    write_colorized_png(map, dir.join(format!("{name}.png")))?;
    Ok(())
}

pub fn synth_fixture(args: SynthFixtureArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let out = require(args.out, &cfg.out, "out")?;
    let fixture = Fixture::new(FixtureConfig {
        kind: args.kind,
        seed: args.seed.unwrap_or(cfg.seed),
        size: args.size,
    })?;
    let manifest = fixture.write(&out)?;
    eprintln!(
        "wrote {} fixture to {} (frames: {}, sensors: {})",
        args.kind,
        out.display(),
        fixture.camera_timestamps.len(),
        fixture.mounts.len()
    );
    println!("{}", manifest.display());
    Ok(())
}

pub fn gen_lidar_images(args: GenLidarImagesArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let manifest = require(args.manifest, &cfg.manifest, "manifest")?;
    let out = require(args.out, &cfg.out, "out")?;
    let blur = resolve_blur(&args.blur, cfg)?;
    let loaded = load_manifest(&manifest)?;
    create_dir(&out)?;
    for record in &loaded.manifest.frames {
        let map = frame_lidar_image(&loaded, record, &blur)?;
        write_map(&out, &record.id, &map)?;
    }
    eprintln!("visibility maps written: {} in {}", loaded.manifest.frames.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct ResolvedTraining<'a> {
    manifest: &'a Path,
    split: &'a str,
    modality: lidarsim::dataset::Modality,
    blur: &'a BlurConfig,
    train: &'a lidarsim::pix2pix::TrainConfig,
    unet: &'a UNetConfig,
    patchgan: &'a PatchGanConfig,
}

pub fn train_cmd(args: TrainArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let manifest = require(args.manifest, &cfg.manifest, "manifest")?;
    let out = require(args.out, &cfg.out, "out")?;
    let blur = resolve_blur(&args.blur, cfg)?;
    let modality = args.modality.unwrap_or(cfg.modality);
    let (unet, disc) = networks(args.preset, cfg);
    let mut tc = cfg.train;
    tc.seed = args.seed.unwrap_or(cfg.seed);
    tc.steps = args.steps.unwrap_or(tc.steps);
    tc.lr = args.lr.unwrap_or(tc.lr);
    tc.lambda = args.lambda.unwrap_or(tc.lambda);
    tc.checkpoint_every = args.checkpoint_every.unwrap_or(tc.checkpoint_every);
    tc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    unet.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    disc.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let loaded = load_manifest(&manifest)?;
    let spec = SampleSpec {
        modality,
        blur: blur.clone(),
        network_size: Some(unet.input_size),
    };
    let samples = frames_in_split(&loaded, &args.split)?
        .into_iter()
        .map(|r| build_sample(&loaded, r, &spec))
        .collect::<Result<Vec<_>, _>>()?;

    create_dir(&out)?;
    let resolved = ResolvedTraining {
        manifest: &manifest,
        split: &args.split,
        modality,
        blur: &blur,
        train: &tc,
        unet: &unet,
        patchgan: &disc,
    };
    let cfg_path = out.join(TRAIN_CONFIG_FILE);
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&resolved)?).map_err(input_err(&cfg_path))?;
    let mut sink = DirectorySink::create(&out).map_err(input_err(&out))?;
    eprintln!("training on {} samples for {} steps", samples.len(), tc.steps);
    let start = Instant::now();
    let outcome = train(&samples, &tc, unet, disc, &mut sink)?;
    let last = outcome.log.last().expect("at least one step");
    eprintln!(
        "done in {:.1} s: d_loss {:.4}, g_l1 {:.4}; checkpoint {}",
        start.elapsed().as_secs_f64(),
        last.d_loss,
        last.g_l1,
        sink.checkpoint_path().display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Pix2Pix, CliError> {
    Pix2Pix::load(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Letterboxes `input` to the network size and maps the prediction back.
fn predict(model: &Pix2Pix, input: &Image3) -> Result<VisibilityMap, CliError> {
    let lb = Letterbox::new(input.width, input.height, model.input_size());
    let pred = model.infer(&lb.forward_image(input))?;
    Ok(lb.inverse_map(&pred))
}

pub fn infer(args: InferArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let checkpoint = require(args.checkpoint, &cfg.checkpoint, "checkpoint")?;
    let out = require(args.out, &cfg.out, "out")?;
    let model = load_model(&checkpoint)?;
    let mut jobs: Vec<(String, Image3)> = Vec::new();
    if let Some(input) = &args.input {
        let name = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| CliError::Usage(format!("{}: not a file name", input.display())))?;
        jobs.push((name, Image3::read_png(input)?));
    } else {
        let manifest = require(args.manifest, &cfg.manifest, "manifest")?;
        let loaded = load_manifest(&manifest)?;
        let modality = args.modality.unwrap_or(cfg.modality);
        for r in frames_in_split(&loaded, &args.split)? {
            jobs.push((r.id.clone(), frame_input(&loaded, r, modality)?));
        }
    }
    create_dir(&out)?;
    for (name, input) in &jobs {
        write_map(&out, name, &predict(&model, input)?)?;
    }
    eprintln!("predictions written: {} in {}", jobs.len(), out.display());
    Ok(())
}

fn read_calibration(path: &Path) -> Result<CalibrationSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(input_err(path))?;
    parse_kitti_calib(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(input_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn reconstruct(args: ReconstructArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    let vis = VisibilityMap::read(&args.vis)?;
    let calib = read_calibration(&args.calib)?;
    let lidar_to_cam = *calib.lidar_to_cam.get(args.sensor).ok_or_else(|| {
        CliError::Usage(format!("sensor {} not in calibration ({} sensors)", args.sensor, calib.sensor_count()))
    })?;
    let k = &calib.camera;
    let threshold = args.threshold.unwrap_or(cfg.threshold);
    let needed = |opt: &Option<PathBuf>, name: &str| {
        opt.clone()
            .ok_or_else(|| CliError::Usage(format!("--{name} is required in {:?} mode", args.mode)))
    };
    let cloud = match args.mode {
        ReconstructMode::Grid => {
            let depth = Raster::read(needed(&args.depth, "depth")?)?;
            let stride = args.stride.unwrap_or(cfg.stride);
            let cam = sample_grid(&vis, &depth, k, stride, threshold, args.scan_start)?;
            if args.camera_frame {
                cam
            } else {
                let to_sensor = lidar_to_cam.inverse();
                let points = cam
                    .points
                    .iter()
                    .map(|p| LidarPoint::new(to_sensor.transform_point(&p.position()), p.intensity, p.timestamp))
                    .collect();
                PointCloud::new(points, cam.scan_start, cam.scan_end)
            }
        }
        ReconstructMode::Raycast => {
            let pattern = ScanPattern::read(needed(&args.pattern, "pattern")?)?;
            let trajectory = EgoTrajectory::read(needed(&args.trajectory, "trajectory")?)?;
            let scene: Box<dyn DepthProvider> = match (&args.scene, &args.depth) {
                (Some(path), _) => Box::new(read_json::<TriangleScene>(path)?),
                (None, Some(path)) => {
                    let world_to_cam = lidar_to_cam.compose(&trajectory.pose_at(args.scan_start).inverse());
                    Box::new(DepthRasterScene::new(*k, Raster::read(path)?, world_to_cam)?)
                }
                (None, None) => return Err(CliError::Usage("raycast mode needs --scene or --depth".into())),
            };
            let rc = RaycastConfig {
                threshold,
                max_range: args.max_range,
                rolling_shutter: !args.no_rolling_shutter,
                ..RaycastConfig::default()
            };
            raycast_scan(&pattern, &trajectory, scene.as_ref(), &vis, k, &lidar_to_cam, args.scan_start, &rc)?
        }
    };
    write_cloud(&args.out, &cloud, args.timestamps)?;
    eprintln!("points written: {} to {}", cloud.len(), args.out.display());
    Ok(())
}

fn map_stems(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(input_err(dir))? {
        let path = entry.map_err(input_err(dir))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == MAP_EXTENSION) {
            if let Some(stem) = path.file_stem() {
                stems.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let stems = map_stems(&args.pred)?;
    if stems.is_empty() {
        return Err(CliError::Input(format!("no .{MAP_EXTENSION} maps in {}", args.pred.display())));
    }
    if let Some(dir) = &args.overlays {
        create_dir(dir)?;
    }
    let mut rows: Vec<(String, MetricsReport)> = Vec::with_capacity(stems.len() + 1);
    for stem in &stems {
        let file = format!("{stem}.{MAP_EXTENSION}");
        let gt_path = args.gt.join(&file);
        if !gt_path.is_file() {
            return Err(CliError::Input(format!("no ground truth {} for prediction {stem}", gt_path.display())));
        }
        let pred = VisibilityMap::read(args.pred.join(&file))?;
        let gt = VisibilityMap::read(&gt_path)?;
        rows.push((stem.clone(), evaluate_pair(&pred, &gt)?));
        if let Some(dir) = &args.overlays {
            write_rgb_png(dir.join(format!("{stem}.png")), &overlay(&pred, &gt)?)?;
        }
    }
    if let Some(path) = &args.pairs {
        std::fs::write(path, pairs_to_json(&rows)).map_err(input_err(path))?;
    }
    let pooled = aggregate(&rows.iter().map(|(_, r)| *r).collect::<Vec<_>>())?;
    rows.push((args.label.clone(), pooled));
    let table = emit_table(&rows, args.format);
    match &args.out {
        Some(path) => std::fs::write(path, &table).map_err(input_err(path))?,
        None => print!("{table}"),
    }
    eprintln!("pairs evaluated: {}, pooled L1 {:.2}, L2 {:.2}", stems.len(), pooled.l1(), pooled.l2());
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    input_size: u32,
    threads: usize,
    iterations: usize,
    mean_ms: f64,
    median_ms: f64,
    min_ms: f64,
    max_ms: f64,
}

pub fn bench(args: BenchArgs, cfg: &PipelineConfig) -> Result<(), CliError> {
    if args.iterations == 0 {
        return Err(CliError::Usage("--iterations must be at least 1".into()));
    }
    let model = match &args.checkpoint {
        Some(path) => load_model(path)?,
        None => {
            let (unet, disc) = networks(args.preset, cfg);
            Pix2Pix::new(unet, disc, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?
        }
    };
    let s = model.input_size();
    let mut input = Image3::filled(s, s, [0.0; 3]);
    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (x as f32 / s as f32, y as f32 / s as f32);
            input.set_pixel(x, y, [fx, fy, 0.5 * (fx + fy)]);
        }
    }
    for _ in 0..args.warmup {
        model.infer(&input)?;
    }
    let mut times = Vec::with_capacity(args.iterations);
    for _ in 0..args.iterations {
        let start = Instant::now();
        model.infer(&input)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let report = BenchReport {
        input_size: s,
        threads: rayon::current_num_threads(),
        iterations: n,
        mean_ms: times.iter().sum::<f64>() / n as f64,
        median_ms: median,
        min_ms: times[0],
        max_ms: times[n - 1],
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
