//! Tensors, a reverse-mode tape, and the handful of layers needed by a
//! U-Net generator and a PatchGAN discriminator.
//!
//! Everything is generic over [`Real`] so that training can run in `f32`
//! while gradient checks run the exact same graph in `f64`.

mod conv;
mod error;
mod real;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod tape;

pub use error::NnError;
pub use gradcheck::{gradient_check, GradCheckReport};
pub use optim::{AdamConfig, ParamStore, Parameter};
pub use real::Real;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = NnError> = std::result::Result<T, E>;
