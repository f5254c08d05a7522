//! Semi-supervised autoencoders trained with a cross-covariance (XCov)
//! penalty that decorrelates the class outputs from the free latent code,
//! plus the tooling to inspect what the decoder learned.
//!
//! Everything runs on a small self-contained `f64` tensor kernel; there are
//! no native dependencies.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod generative;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
