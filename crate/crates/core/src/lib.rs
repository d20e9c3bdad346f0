//! Voxel-based point cloud semantic segmentation with instance-level
//! supervision: a descriptor backbone trained with a semantic loss, then
//! jointly with an instance classification head and a masked shape
//! reconstruction head on instances found by mean-shift clustering.

pub mod autodiff;
pub mod backbone;
pub mod cluster;
pub mod error;
pub mod heads;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod tensor;
pub mod train;
pub mod voxel;

pub use error::{Error, Result};
pub use tensor::Matrix;
