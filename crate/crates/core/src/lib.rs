//! Blind 4x super-resolution built around an RRDB generator and multi-scale
//! attention U-Net discriminators, with a seeded high-order degradation
//! pipeline for training data and NIQE for no-reference evaluation.

pub mod autodiff;
pub mod degradation;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod imageio;
pub mod infer;
pub mod losses;
pub mod niqe;
pub mod nn;
pub mod rng;
pub mod synthimg;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use imageio::ResizeMode;
pub use rng::Rng;
pub use tensor::{ImageTensor, Scalar, Tensor};
