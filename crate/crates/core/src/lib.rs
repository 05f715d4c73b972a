//! Hybrid finite-element / convolutional-network solver for 2D brittle phase-field fracture.

pub mod commands;
pub mod driver;
pub mod elasticity;
pub mod element;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod output;
pub mod phasefield;
pub mod picnn;
pub mod pixel;
pub mod scalar;
pub mod scenario;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Double precision mesh used by the FEM side.
pub type Mesh = mesh::StructuredMesh<f64>;
pub type Material = elasticity::MaterialParams<f64>;
pub type PixelMap = pixel::PixelGrid<f64>;
pub type Model = picnn::PicnnModel<f64>;
/// Single precision network used for training.
pub type Model32 = picnn::PicnnModel<f32>;
pub type PixelMap32 = pixel::PixelGrid<f32>;
