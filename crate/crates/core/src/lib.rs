//! Meshless PDE solving by fitting coefficient tensors of tensor-product
//! spectral bases to composite collocation losses.

pub mod basis;
pub mod field;
pub mod geometry;
pub mod optimize;
pub mod problems;
pub mod residual;

pub use basis::{BasisFamily, BasisSpec1D, TensorBasisSpec};
pub use field::{CoefficientField, MultiIndex, OutputTransform};
pub use geometry::DomainSpec;
