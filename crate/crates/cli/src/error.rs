//! Command errors and their exit codes.

use std::process::ExitCode;

use lidarsim::dataset::DatasetError;
use lidarsim::fixture::FixtureError;
use lidarsim::lidar_image::LidarImageError;
use lidarsim::metrics::MetricsError;
use lidarsim::pix2pix::Pix2PixError;
use lidarsim::raster::RasterError;
use lidarsim::reconstruct::ReconstructError;
use serde_json::json;
use thiserror::Error;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_INTERNAL: u8 = 70;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Input(_) => EXIT_INPUT,
            Self::Internal(_) => EXIT_INTERNAL,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Input(_) => "input",
            Self::Internal(_) => "internal",
        }
    }

    /// Prints the error as one JSON line on stderr and returns the exit code.
    pub fn report(&self) -> ExitCode {
        let doc = json!({ "error": { "kind": self.kind(), "code": self.code(), "message": self.to_string() } });
        eprintln!("{doc}");
        ExitCode::from(self.code())
    }
}

macro_rules! input_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Input(e.to_string())
            }
        }
    )*};
}

input_error!(
    DatasetError,
    LidarImageError,
    MetricsError,
    RasterError,
    ReconstructError,
    std::io::Error,
    serde_json::Error
);

impl From<Pix2PixError> for CliError {
    fn from(e: Pix2PixError) -> Self {
        match e {
            Pix2PixError::NonFiniteLoss { .. } | Pix2PixError::Nn(_) => Self::Internal(e.to_string()),
            _ => Self::Input(e.to_string()),
        }
    }
}

impl From<FixtureError> for CliError {
    fn from(e: FixtureError) -> Self {
        match e {
            FixtureError::Io { .. } | FixtureError::InvalidConfig(_) => Self::Input(e.to_string()),
            _ => Self::Internal(e.to_string()),
        }
    }
}
