//! Unpaired image-to-image translation with frequency-distribution
//! cycle-consistency losses.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training, `f64`
//! for oracles and gradient checks); the aliases below fix the common
//! instantiations.

pub mod data;
pub mod divergence;
pub mod error;
pub mod freqrep;
pub mod image;
pub mod lne;
pub mod metrics;
pub mod models;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Image32 = image::ImagePlane<f32>;
pub type Image64 = image::ImagePlane<f64>;
pub type Generator32 = models::Generator<f32>;
pub type Discriminator32 = models::Discriminator<f32>;
pub type TrainState32 = training::TrainState<f32>;
pub type TrainState64 = training::TrainState<f64>;





