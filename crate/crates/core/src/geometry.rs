//! Pose, camera and mesh primitives plus the NOCS normalization helpers.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use std::ops::Mul;

/// A proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T: Real> {
    m: Matrix3<T>,
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Validates `m` against the orthonormality tolerance of `T`.
    pub fn from_matrix(m: Matrix3<T>) -> Result<Self> {
        let tol = T::ORTHO_TOL;
        let dev = (m.transpose() * m - Matrix3::identity()).amax().as_f64();
        if !dev.is_finite() || dev > tol {
            return Err(Error::InvalidInput(format!(
                "matrix is not orthonormal (max |RᵀR - I| = {dev:e})"
            )));
        }
        let det = m.determinant().as_f64();
        if (det - 1.0).abs() > tol {
            return Err(Error::InvalidInput(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self { m })
    }

    /// Projects an arbitrary matrix onto SO(3) through its SVD.
    pub fn nearest(m: Matrix3<T>) -> Result<Self> {
        if m.iter().any(|v| !v.as_f64().is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::InvalidInput("svd failed".into())),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < T::zero() {
            d[(2, 2)] = -T::one();
        }
        Ok(Self { m: u * d * v_t })
    }

    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Result<Self> {
        let n = axis.norm();
        if n.as_f64() < T::ZERO_NORM_TOL || !n.as_f64().is_finite() {
            return Err(Error::InvalidInput("rotation axis has zero length".into()));
        }
        let axis = Unit::new_unchecked(axis / n);
        Ok(Self {
            m: Rotation3::from_axis_angle(&axis, angle).into_inner(),
        })
    }

    /// Builds a rotation from a (not necessarily unit) quaternion `w + xi + yj + zk`.
    pub fn from_quaternion(w: T, x: T, y: T, z: T) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if n.as_f64() < T::ZERO_NORM_TOL || !n.as_f64().is_finite() {
            return Err(Error::InvalidInput(format!(
                "quaternion norm {} is too small",
                n.as_f64()
            )));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Self {
            m: uq.to_rotation_matrix().into_inner(),
        })
    }

    /// Rotation by `angle` radians about the +x axis.
    pub fn about_x(angle: T) -> Self {
        Self {
            m: Rotation3::from_axis_angle(&Vector3::x_axis(), angle).into_inner(),
        }
    }

    /// Rotation by `angle` radians about the +y axis.
    pub fn about_y(angle: T) -> Self {
        Self {
            m: Rotation3::from_axis_angle(&Vector3::y_axis(), angle).into_inner(),
        }
    }

    /// Rotation by `angle` radians about the +z axis.
    pub fn about_z(angle: T) -> Self {
        Self {
            m: Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner(),
        }
    }

    /// Uniformly distributed rotation (normalized Gaussian quaternion).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            if let Ok(r) = Self::from_quaternion(lit(q[0]), lit(q[1]), lit(q[2]), lit(q[3])) {
                return r;
            }
        }
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<T> {
        &self.m
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    #[inline]
    pub fn apply(&self, v: &Vector3<T>) -> Vector3<T> {
        self.m * v
    }

    /// Geodesic distance to `other` in radians.
    ///
    /// Uses `atan2(|sin|, cos)` of the relative rotation, which stays accurate
    /// near 0 and π where `acos` of the trace loses precision.
    pub fn angle_to(&self, other: &Self) -> T {
        let q = self.m.transpose() * other.m;
        relative_angle(&q)
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [T; 9] {
        std::array::from_fn(|i| self.m[(i / 3, i % 3)])
    }

    pub fn cast<U: Real>(&self) -> Rotation<U> {
        Rotation {
            m: self.m.map(|v| lit::<U>(v.as_f64())),
        }
    }
}

pub(crate) fn relative_angle<T: Real>(q: &Matrix3<T>) -> T {
    let half: T = lit(0.5);
    let cos = (q.trace() - T::one()) * half;
    let s = Vector3::new(
        q[(2, 1)] - q[(1, 2)],
        q[(0, 2)] - q[(2, 0)],
        q[(1, 0)] - q[(0, 1)],
    );
    let sin = s.norm() * half;
    sin.atan2(cos)
}

impl<T: Real> Mul for Rotation<T> {
    type Output = Rotation<T>;
    fn mul(self, rhs: Self) -> Self {
        Rotation { m: self.m * rhs.m }
    }
}

impl<'a, T: Real> Mul<&'a Rotation<T>> for &'a Rotation<T> {
    type Output = Rotation<T>;
    fn mul(self, rhs: &Rotation<T>) -> Rotation<T> {
        Rotation { m: self.m * rhs.m }
    }
}

/// 9DoF object pose: rotation, metric translation and metric box extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose9<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
    pub size: Vector3<T>,
}

impl<T: Real> Pose9<T> {
    pub fn new(rotation: Rotation<T>, translation: Vector3<T>, size: Vector3<T>) -> Result<Self> {
        if translation.iter().any(|v| !v.as_f64().is_finite()) {
            return Err(Error::InvalidInput("translation is not finite".into()));
        }
        if size
            .iter()
            .any(|v| !(v.as_f64() > 0.0) || !v.as_f64().is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "size components must be positive, got {:?}",
                size.as_slice()
            )));
        }
        Ok(Self {
            rotation,
            translation,
            size,
        })
    }

    /// Diagonal of the tight bounding box, `‖size‖₂`.
    pub fn diagonal(&self) -> T {
        self.size.norm()
    }

    /// Expresses translation and size in units of this pose's own box diagonal.
    pub fn scale_agnostic(&self) -> ScaleAgnosticPose<T> {
        let d = self.diagonal();
        ScaleAgnosticPose {
            rotation: self.rotation,
            translation: self.translation / d,
            size: self.size / d,
        }
    }

    /// Multiplies translation and size by `factor` (a change of metric scale).
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            rotation: self.rotation,
            translation: self.translation * factor,
            size: self.size * factor,
        }
    }
}

/// Pose with translation and size divided by the box diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleAgnosticPose<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
    pub size: Vector3<T>,
}

/// Pinhole intrinsics without skew.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self> {
        let ok = |v: T| v.as_f64().is_finite();
        if !(fx.as_f64() > 0.0 && fy.as_f64() > 0.0) || !ok(fx) || !ok(fy) || !ok(cx) || !ok(cy) {
            return Err(Error::InvalidInput(
                "focal lengths must be positive and all intrinsics finite".into(),
            ));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(self.fx, z, self.cx, z, self.fy, self.cy, z, z, o)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    #[inline]
    pub fn project(&self, p: &Vector3<T>) -> Option<Vector2<T>> {
        if p.z <= T::zero() {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Normalized image coordinates `(x/z, y/z)` of a pixel.
    #[inline]
    pub fn normalize(&self, pixel: &Vector2<T>) -> Vector2<T> {
        Vector2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }
}

/// Triangle mesh with optional per-vertex colors in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh<T: Real> {
    pub vertices: Vec<Vector3<T>>,
    pub faces: Vec<[usize; 3]>,
    pub colors: Option<Vec<Vector3<T>>>,
}

impl<T: Real> Mesh<T> {
    pub fn new(
        vertices: Vec<Vector3<T>>,
        faces: Vec<[usize; 3]>,
        colors: Option<Vec<Vector3<T>>>,
    ) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidInput(format!(
                    "face {fi} references a vertex out of range ({n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidInput(format!(
                    "face {fi} is degenerate: {f:?}"
                )));
            }
        }
        if let Some(c) = &colors {
            if c.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{} colors for {n} vertices",
                    c.len()
                )));
            }
        }
        if vertices.iter().flatten().any(|v| !v.as_f64().is_finite()) {
            return Err(Error::InvalidInput("non-finite vertex coordinate".into()));
        }
        Ok(Self {
            vertices,
            faces,
            colors,
        })
    }

    /// Tight axis-aligned bounding box `(min, max)`; `None` for an empty mesh.
    pub fn bounds(&self) -> Option<(Vector3<T>, Vector3<T>)> {
        bounds(&self.vertices)
    }

    /// Diagonal of the tight axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> Option<T> {
        self.bounds().map(|(lo, hi)| (hi - lo).norm())
    }

    /// Applies `f` to every vertex, leaving connectivity and colors untouched.
    pub fn map_vertices(&self, f: impl FnMut(&Vector3<T>) -> Vector3<T>) -> Self {
        Self {
            vertices: self.vertices.iter().map(f).collect(),
            faces: self.faces.clone(),
            colors: self.colors.clone(),
        }
    }
}

/// Unordered set of 3D points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T: Real> {
    pub points: Vec<Vector3<T>>,
}

impl<T: Real> PointCloud<T> {
    pub fn new(points: Vec<Vector3<T>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl<T: Real> From<Vec<Vector3<T>>> for PointCloud<T> {
    fn from(points: Vec<Vector3<T>>) -> Self {
        Self { points }
    }
}

pub fn bounds<T: Real>(points: &[Vector3<T>]) -> Option<(Vector3<T>, Vector3<T>)> {
    let first = points.first()?;
    let mut lo = *first;
    let mut hi = *first;
    for p in &points[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    Some((lo, hi))
}

/// Centers a mesh on its bounding-box center and scales it to unit diagonal.
///
/// Returns the normalized mesh together with the original diagonal.
pub fn normalize_to_nocs<T: Real>(mesh: &Mesh<T>) -> Result<(Mesh<T>, T)> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::InvalidInput("cannot normalize an empty mesh".into()))?;
    let d = (hi - lo).norm();
    if !(d.as_f64() > 0.0) {
        return Err(Error::InvalidInput(
            "mesh bounding box has zero diagonal".into(),
        ));
    }
    let center = (lo + hi) * lit::<T>(0.5);
    Ok((mesh.map_vertices(|v| (v - center) / d), d))
}

/// Colors every vertex by its NOCS coordinate: `color = v + 0.5`.
pub fn color_code<T: Real>(mesh: &Mesh<T>) -> Result<Mesh<T>> {
    let eps = 1e-6;
    let limit = 0.5 + eps;
    for (i, v) in mesh.vertices.iter().enumerate() {
        if v.iter().any(|c| c.as_f64().abs() > limit) {
            return Err(Error::InvalidInput(format!(
                "vertex {i} lies outside the NOCS cube: {:?}",
                v.as_slice()
            )));
        }
    }
    let half: T = lit(0.5);
    let colors = mesh
        .vertices
        .iter()
        .map(|v| v.map(|c| (c + half).clamp(T::zero(), T::one())))
        .collect();
    Ok(Mesh {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
        colors: Some(colors),
    })
}

/// Applies `p' = scale·R·p + t` to every point.
pub fn transform_points<T: Real>(
    points: &PointCloud<T>,
    pose: &Pose9<T>,
    scale: T,
) -> Result<PointCloud<T>> {
    if !(scale.as_f64() > 0.0) {
        return Err(Error::InvalidInput(format!(
            "scale must be positive, got {}",
            scale.as_f64()
        )));
    }
    let r = pose.rotation.matrix();
    Ok(PointCloud::new(
        points
            .points
            .iter()
            .map(|p| r * p * scale + pose.translation)
            .collect(),
    ))
}

/// The pose and scale undoing [`transform_points`] with `(pose, scale)`.
pub fn inverse_similarity<T: Real>(pose: &Pose9<T>, scale: T) -> Result<(Pose9<T>, T)> {
    if !(scale.as_f64() > 0.0) {
        return Err(Error::InvalidInput("scale must be positive".into()));
    }
    let rt = pose.rotation.transpose();
    let inv_scale = T::one() / scale;
    let t = -(rt.apply(&pose.translation)) * inv_scale;
    Ok((
        Pose9 {
            rotation: rt,
            translation: t,
            size: pose.size,
        },
        inv_scale,
    ))
}

/// `‖s‖₂` of a strictly positive size vector.
pub fn box_diagonal<T: Real>(s: &Vector3<T>) -> Result<T> {
    if s.iter().any(|v| !(v.as_f64() > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "box extents must be positive, got {:?}",
            s.as_slice()
        )));
    }
    Ok(s.norm())
}
