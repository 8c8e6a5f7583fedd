pub mod dataset;
pub mod fixture;
pub mod geometry;
pub mod lidar_image;
pub mod metrics;
pub mod pix2pix;
pub mod raster;
pub mod reconstruct;

pub use nn;
