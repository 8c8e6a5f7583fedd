//! LiDAR images: projected hit masks and their blurred visibility maps.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_point, CameraIntrinsics, PointCloud, RigidTransform};
use crate::raster::{quantize, write_gray_png, write_rgb_png, Raster, RasterError};

#[derive(Debug, Error)]
pub enum LidarImageError {
    #[error("invalid blur config: {0}")]
    InvalidBlur(String),
    #[error("visibility value {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Pixels hit by at least one LiDAR return.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryHitMask {
    pub width: u32,
    pub height: u32,
    data: Vec<u8>,
}

impl BinaryHitMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize] != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32) {
        self.data[y as usize * self.width as usize + x as usize] = 1;
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn set_pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Pixelwise OR. Panics if the sizes differ.
    pub fn union_with(&mut self, other: &BinaryHitMask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
    }
}

/// Per-pixel likelihood in `[0, 1]` that a LiDAR ray through the pixel
/// returns.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMap {
    pub width: u32,
    pub height: u32,
    data: Vec<f32>,
}

impl VisibilityMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, LidarImageError> {
        if data.len() != width as usize * height as usize {
            return Err(RasterError::DimensionMismatch(format!("{} values for {width}x{height}", data.len())).into());
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(LidarImageError::OutOfRange { index, value });
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self::new(width, height, vec![value; width as usize * height as usize]).expect("value in [0, 1]")
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        assert!((0.0..=1.0).contains(&value));
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    /// Bilinear sample at continuous pixel coordinates, where integer
    /// coordinates are pixel centers. `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<f32> {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
            return None;
        }
        let (x0, y0) = (u.floor() as u32, v.floor() as u32);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (u - f64::from(x0), v - f64::from(y0));
        let g = |x, y| f64::from(self.get(x, y));
        let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
        let bottom = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
        Some((top * (1.0 - fy) + bottom * fy) as f32)
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }

    pub fn from_raster(r: Raster) -> Result<Self, LidarImageError> {
        Self::new(r.width, r.height, r.data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, LidarImageError> {
        Self::from_raster(Raster::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), LidarImageError> {
        Ok(self.to_raster().write(path)?)
    }

    /// 8-bit grayscale, `round(255 v)`.
    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([quantize(self.get(x, y))]))
    }

    pub fn from_gray8(img: &GrayImage) -> Self {
        let data = img.pixels().map(|p| f32::from(p.0[0]) / 255.0).collect();
        Self::new(img.width(), img.height(), data).expect("8-bit values are in range")
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), LidarImageError> {
        Ok(write_gray_png(path, &self.to_gray8())?)
    }
}

/// Projects every point of one complete scan into the camera and marks the
/// nearest pixel. Points behind the camera or outside the image are dropped;
/// timestamps are ignored.
pub fn rasterize_scan(cloud: &PointCloud, lidar_to_cam: &RigidTransform, k: &CameraIntrinsics) -> BinaryHitMask {
    let mut mask = BinaryHitMask::new(k.width, k.height);
    for p in &cloud.points {
        let cam = lidar_to_cam.transform_point(&p.position());
        if let Some((x, y)) = project_point(k, &cam).in_front().and_then(|ip| ip.pixel(k)) {
            mask.set(x, y);
        }
    }
    mask
}

/// Union of the rasterizations of several sensors' scans.
pub fn rasterize_scans<'a>(
    scans: impl IntoIterator<Item = (&'a PointCloud, &'a RigidTransform)>,
    k: &CameraIntrinsics,
) -> BinaryHitMask {
    let mut mask = BinaryHitMask::new(k.width, k.height);
    for (cloud, t) in scans {
        mask.union_with(&rasterize_scan(cloud, t, k));
    }
    mask
}

/// 5×5 tent: outer product of `(0.25, 0.5, 1, 0.5, 0.25)` with itself.
pub const TENT_5X5: [f32; 25] = {
    const T: [f32; 5] = [0.25, 0.5, 1.0, 0.5, 0.25];
    let mut w = [0.0; 25];
    let mut i = 0;
    while i < 25 {
        w[i] = T[i / 5] * T[i % 5];
        i += 1;
    }
    w
};

/// Blur kernel. Kernels are max-normalized (peak 1) and overlapping
/// contributions saturate at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BlurConfig {
    Gaussian { sigma: f64, radius: usize },
    Custom5x5 { weights: Vec<f32> },
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self::gaussian(8.0)
    }
}

impl BlurConfig {
    /// Gaussian truncated at `ceil(3 sigma)`.
    pub fn gaussian(sigma: f64) -> Self {
        Self::Gaussian {
            sigma,
            radius: (3.0 * sigma).ceil() as usize,
        }
    }

    pub fn tent() -> Self {
        Self::Custom5x5 {
            weights: TENT_5X5.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), LidarImageError> {
        match self {
            Self::Gaussian { sigma, .. } => {
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(LidarImageError::InvalidBlur(format!("sigma must be positive, got {sigma}")));
                }
            }
            Self::Custom5x5 { weights } => {
                if weights.len() != 25 {
                    return Err(LidarImageError::InvalidBlur(format!("{} weights, 25 expected", weights.len())));
                }
                if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                    return Err(LidarImageError::InvalidBlur("weights must be non-negative".into()));
                }
                let max = weights.iter().copied().fold(0.0f32, f32::max);
                if max != 1.0 || weights[12] != 1.0 {
                    return Err(LidarImageError::InvalidBlur("kernel must peak at 1 in the center".into()));
                }
            }
        }
        Ok(())
    }
}

/// Convolves the mask with a peak-1 kernel (zero padding) and clamps to 1.
/// Set pixels come out as exactly 1.
pub fn blur_mask(mask: &BinaryHitMask, config: &BlurConfig) -> Result<VisibilityMap, LidarImageError> {
    config.validate()?;
    let data = match config {
        BlurConfig::Gaussian { sigma, radius } => blur_separable(mask, *sigma, *radius),
        BlurConfig::Custom5x5 { weights } => blur_direct(mask, weights, 2),
    };
    VisibilityMap::new(mask.width, mask.height, data)
}

fn blur_separable(mask: &BinaryHitMask, sigma: f64, radius: usize) -> Vec<f32> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let r = radius as isize;
    let taps: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut rows = vec![0.0f64; w * h];
    rows.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        let src = &mask.values()[y * w..(y + 1) * w];
        for (x, &m) in src.iter().enumerate() {
            if m == 0 {
                continue;
            }
            let lo = (x as isize - r).max(0) as usize;
            let hi = (x as isize + r).min(w as isize - 1) as usize;
            for (xo, out) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                *out += taps[(xo as isize - x as isize + r) as usize];
            }
        }
    });
    let mut out = vec![0.0f32; w * h];
    out.par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        let lo = (y as isize - r).max(0) as usize;
        let hi = (y as isize + r).min(h as isize - 1) as usize;
        let mut acc = vec![0.0f64; w];
        for ys in lo..=hi {
            let weight = taps[(ys as isize - y as isize + r) as usize];
            for (a, &v) in acc.iter_mut().zip(&rows[ys * w..(ys + 1) * w]) {
                *a += weight * v;
            }
        }
        for (o, a) in row.iter_mut().zip(acc) {
            *o = a.min(1.0) as f32;
        }
    });
    out
}

fn blur_direct(mask: &BinaryHitMask, weights: &[f32], radius: isize) -> Vec<f32> {
    let (w, h) = (mask.width as isize, mask.height as isize);
    let side = 2 * radius + 1;
    let mut out = vec![0.0f32; (w * h) as usize];
    out.par_chunks_mut(w.max(1) as usize).enumerate().for_each(|(y, row)| {
        let y = y as isize;
        for (x, o) in row.iter_mut().enumerate() {
            let x = x as isize;
            let mut acc = 0.0f64;
            for dy in -radius..=radius {
                let sy = y - dy;
                if sy < 0 || sy >= h {
                    continue;
                }
                for dx in -radius..=radius {
                    let sx = x - dx;
                    if sx < 0 || sx >= w || mask.values()[(sy * w + sx) as usize] == 0 {
                        continue;
                    }
                    acc += f64::from(weights[((dy + radius) * side + dx + radius) as usize]);
                }
            }
            *o = acc.min(1.0) as f32;
        }
    });
    out
}

/// Color ramp stops, evenly spaced over `[0, 1]`: dark blue, light blue,
/// pale green, orange, red.
pub const RAMP_STOPS: [[f64; 3]; 5] = [
    [0.0, 0.0, 128.0],
    [0.0, 128.0, 255.0],
    [128.0, 255.0, 128.0],
    [255.0, 128.0, 0.0],
    [255.0, 0.0, 0.0],
];

/// Lookup table over the 256 quantized visibility levels. Entry `i` is the
/// ramp evaluated at `i / 255` by piecewise-linear interpolation between
/// [`RAMP_STOPS`], rounded to the nearest integer.
pub fn color_ramp() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    let segments = (RAMP_STOPS.len() - 1) as f64;
    for (i, entry) in lut.iter_mut().enumerate() {
        let t = i as f64 / 255.0 * segments;
        let s = (t.floor() as usize).min(RAMP_STOPS.len() - 2);
        let f = t - s as f64;
        for c in 0..3 {
            let v = RAMP_STOPS[s][c] * (1.0 - f) + RAMP_STOPS[s + 1][c] * f;
            entry[c] = v.round() as u8;
        }
    }
    lut
}

pub fn colorize(map: &VisibilityMap) -> RgbImage {
    let lut = color_ramp();
    RgbImage::from_fn(map.width, map.height, |x, y| Rgb(lut[quantize(map.get(x, y)) as usize]))
}

pub fn write_colorized_png(map: &VisibilityMap, path: impl AsRef<Path>) -> Result<(), LidarImageError> {
    Ok(write_rgb_png(path, &colorize(map))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{LidarPoint, Vec3};
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn k100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(
            points.iter().map(|p| LidarPoint::new(Vec3::from(*p), 0.5, 0.0)).collect(),
            0.0,
            0.1,
        )
    }

    #[test]
    fn rasterize_examples() {
        let k = k100();
        let id = RigidTransform::identity();
        assert_eq!(rasterize_scan(&cloud(&[]), &id, &k).count(), 0);

        let m = rasterize_scan(&cloud(&[[0.0, 0.0, 2.0]]), &id, &k);
        assert_eq!(m.set_pixels().collect::<Vec<_>>(), vec![(50, 50)]);

        let m = rasterize_scan(&cloud(&[[0.0, 0.0, 2.0], [0.0, 0.0, 7.0], [0.001, 0.0, 2.0]]), &id, &k);
        assert_eq!(m.count(), 1);
    }

    #[test]
    fn rasterize_drops_behind_and_outside() {
        let k = k100();
        let id = RigidTransform::identity();
        let m = rasterize_scan(&cloud(&[[0.0, 0.0, -2.0], [5.0, 0.0, 1.0], [-0.51, 0.0, 1.0]]), &id, &k);
        assert_eq!(m.count(), 0);
        // -0.49 px rounds to column 0.
        let m = rasterize_scan(&cloud(&[[-0.5049, 0.0, 1.0]]), &id, &k);
        assert_eq!(m.set_pixels().collect::<Vec<_>>(), vec![(0, 50)]);
    }

    #[test]
    fn blur_of_empty_mask_is_empty() {
        let m = BinaryHitMask::new(20, 10);
        for cfg in [BlurConfig::gaussian(8.0), BlurConfig::tent()] {
            assert!(blur_mask(&m, &cfg).unwrap().values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tent_impulse_response_is_the_kernel() {
        let mut m = BinaryHitMask::new(9, 9);
        m.set(4, 4);
        let out = blur_mask(&m, &BlurConfig::tent()).unwrap();
        for y in 0..9u32 {
            for x in 0..9u32 {
                let (dx, dy) = (x as i32 - 4, y as i32 - 4);
                let want = if dx.abs() <= 2 && dy.abs() <= 2 {
                    TENT_5X5[((dy + 2) * 5 + dx + 2) as usize]
                } else {
                    0.0
                };
                assert_eq!(out.get(x, y), want, "({x},{y})");
            }
        }
        assert_eq!(TENT_5X5[12], 1.0);
        assert_eq!(TENT_5X5[0], 0.0625);
    }

    #[test]
    fn gaussian_impulse_matches_closed_form() {
        let mut m = BinaryHitMask::new(200, 200);
        m.set(100, 100);
        let out = blur_mask(&m, &BlurConfig::gaussian(8.0)).unwrap();
        assert_eq!(out.get(100, 100), 1.0);
        assert!((out.get(108, 100) - 0.606_530_66).abs() < 1e-6);
        assert!((out.get(100, 92) - 0.606_530_66).abs() < 1e-6);
        assert_eq!(out.get(125, 100), 0.0);
        assert!(out.get(124, 100) > 0.0);
    }

    #[test]
    fn blur_rejects_invalid_configs() {
        let m = BinaryHitMask::new(4, 4);
        assert!(blur_mask(&m, &BlurConfig::Gaussian { sigma: 0.0, radius: 1 }).is_err());
        assert!(blur_mask(&m, &BlurConfig::Custom5x5 { weights: vec![1.0; 24] }).is_err());
        let mut w = TENT_5X5.to_vec();
        w[3] = -0.1;
        assert!(blur_mask(&m, &BlurConfig::Custom5x5 { weights: w }).is_err());
        let half: Vec<f32> = TENT_5X5.iter().map(|w| w * 0.5).collect();
        assert!(blur_mask(&m, &BlurConfig::Custom5x5 { weights: half }).is_err());
    }

    #[test]
    fn colorize_endpoints_and_midpoint() {
        let lut = color_ramp();
        let dark = colorize(&VisibilityMap::filled(3, 2, 0.0));
        assert!(dark.pixels().all(|p| p.0 == [0, 0, 128]));
        let red = colorize(&VisibilityMap::filled(3, 2, 1.0));
        assert!(red.pixels().all(|p| p.0 == [255, 0, 0]));
        // 0.5 quantizes to level 128; t = 128/255 * 4 = 2.00784 lies just past
        // the pale-green stop: (128 + 127f, 255 - 127f, 128 - 128f), f = 0.00784.
        let mid = colorize(&VisibilityMap::filled(1, 1, 0.5));
        assert_eq!(mid.get_pixel(0, 0).0, [129, 254, 127]);
        assert_eq!(lut[128], [129, 254, 127]);
        assert_eq!(lut[0], [0, 0, 128]);
        assert_eq!(lut[255], [255, 0, 0]);
    }

    #[test]
    fn color_ramp_is_injective() {
        let lut = color_ramp();
        let distinct: HashSet<_> = lut.iter().collect();
        assert_eq!(distinct.len(), 256);
    }

    #[test]
    fn bilinear_sampling() {
        let mut v = VisibilityMap::filled(3, 3, 0.0);
        v.set(1, 1, 1.0);
        assert_eq!(v.sample_bilinear(1.0, 1.0), Some(1.0));
        assert_eq!(v.sample_bilinear(1.5, 1.0), Some(0.5));
        assert_eq!(v.sample_bilinear(1.5, 1.5), Some(0.25));
        assert_eq!(v.sample_bilinear(2.0, 2.0), Some(0.0));
        assert_eq!(v.sample_bilinear(2.01, 1.0), None);
        assert_eq!(v.sample_bilinear(-0.01, 1.0), None);
    }

    #[test]
    fn visibility_rejects_out_of_range() {
        assert!(matches!(
            VisibilityMap::new(1, 2, vec![0.5, 1.5]),
            Err(LidarImageError::OutOfRange { index: 1, .. })
        ));
    }

    fn arb_mask(w: u32, h: u32) -> impl Strategy<Value = BinaryHitMask> {
        prop::collection::vec((0..w, 0..h), 0..30).prop_map(move |pts| {
            let mut m = BinaryHitMask::new(w, h);
            pts.into_iter().for_each(|(x, y)| m.set(x, y));
            m
        })
    }

    fn arb_blur() -> impl Strategy<Value = BlurConfig> {
        prop_oneof![(0.5f64..4.0).prop_map(BlurConfig::gaussian), Just(BlurConfig::tent())]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn blur_is_monotone_in_the_mask(m in arb_mask(24, 18), x in 0u32..24, y in 0u32..18, cfg in arb_blur()) {
            let before = blur_mask(&m, &cfg).unwrap();
            let mut more = m.clone();
            more.set(x, y);
            let after = blur_mask(&more, &cfg).unwrap();
            for (a, b) in before.values().iter().zip(after.values()) {
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn blur_range_and_locality(m in arb_mask(24, 18), cfg in arb_blur()) {
            let out = blur_mask(&m, &cfg).unwrap();
            let radius = match &cfg { BlurConfig::Gaussian { radius, .. } => *radius as i64, _ => 2 };
            let set: Vec<(u32, u32)> = m.set_pixels().collect();
            for y in 0..18 {
                for x in 0..24 {
                    let v = out.get(x, y);
                    prop_assert!((0.0..=1.0).contains(&v));
                    if m.get(x, y) {
                        prop_assert_eq!(v, 1.0);
                    }
                    let near = set.iter().any(|&(sx, sy)| {
                        (i64::from(sx) - i64::from(x)).abs() <= radius && (i64::from(sy) - i64::from(y)).abs() <= radius
                    });
                    if !near {
                        prop_assert_eq!(v, 0.0);
                    }
                }
            }
        }

        #[test]
        fn rasterize_ignores_point_order(
            pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -1.0f64..10.0), 0..40),
            rot in 0usize..40,
        ) {
            let k = k100();
            let id = RigidTransform::identity();
            let pts: Vec<[f64; 3]> = pts.into_iter().map(|(x, y, z)| [x, y, z]).collect();
            let mut shuffled = pts.clone();
            if !shuffled.is_empty() {
                let n = shuffled.len();
                shuffled.rotate_left(rot % n);
                shuffled.reverse();
            }
            prop_assert_eq!(rasterize_scan(&cloud(&pts), &id, &k), rasterize_scan(&cloud(&shuffled), &id, &k));
        }
    }
}
