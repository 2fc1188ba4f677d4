//! Category-level object pose machinery built on normalized coordinate maps:
//! rendering, consensus reconstruction, PnP/Umeyama solvers, symmetry-aware
//! losses with analytic gradients, a deformable-convolution auto-encoder and
//! scale-agnostic evaluation.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod consensus;
pub mod coordmap;
pub mod dataset;
pub mod dcae;
pub(crate) mod delaunay;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod mesh_io;
pub mod metrics;
pub mod render;
pub mod scalar;
pub mod solvers;
pub mod symmetry;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Rotation = geometry::Rotation<f64>;
pub type Pose9 = geometry::Pose9<f64>;
pub type ScaleAgnosticPose = geometry::ScaleAgnosticPose<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type Mesh = geometry::Mesh<f64>;
pub type PointCloud = geometry::PointCloud<f64>;
pub type CoordinateMap = coordmap::CoordinateMap<f64>;
pub type SymmetryGroup = symmetry::SymmetryGroup<f64>;
pub type OrientedBox = metrics::OrientedBox<f64>;
