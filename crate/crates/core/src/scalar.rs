//! Scalar abstraction shared by the generic math layers.
//!
//! Geometry, symmetry, losses, box overlap, Umeyama and the deformable
//! convolution kernels are written against [`Real`] so they run in `f32` or
//! `f64`. Pipelines that depend on exact predicates or on file formats
//! (rasterizer, alpha shapes, EPnP, dataset I/O) are fixed to `f64`.

use nalgebra::RealField;
use std::fmt::{Debug, Display};

/// Floating point scalar usable throughout the crate.
pub trait Real: RealField + Copy + Debug + Display + Default + Send + Sync + 'static {
    /// Tolerance used when validating orthonormality of rotation matrices.
    const ORTHO_TOL: f64;
    /// Tolerance below which a quaternion or axis is treated as zero.
    const ZERO_NORM_TOL: f64;

    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const ORTHO_TOL: f64 = 1e-9;
    const ZERO_NORM_TOL: f64 = 1e-12;

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const ORTHO_TOL: f64 = 1e-5;
    const ZERO_NORM_TOL: f64 = 1e-6;

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    nalgebra::convert(x)
}
