//! Pose, point-matching and coordinate-map losses with analytic gradients.
//!
//! All terms are L1. Gradients are taken with respect to the prediction; a
//! rotation prediction is treated as a raw 3×3 matrix.

use crate::coordmap::CoordinateMap;
use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::scalar::{lit, Real};
use crate::symmetry::{closest_index_for_matrix, SymmetryGroup};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// What a gradient does at an exact zero of an L1 difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KinkPolicy {
    /// Use the subgradient 0.
    #[default]
    Subgradient,
    /// Refuse with [`Error::NonDifferentiablePoint`].
    Strict,
}

#[inline]
fn sign<T: Real>(x: T, policy: KinkPolicy, what: &str) -> Result<T> {
    if x > T::zero() {
        Ok(T::one())
    } else if x < T::zero() {
        Ok(-T::one())
    } else {
        match policy {
            KinkPolicy::Subgradient => Ok(T::zero()),
            KinkPolicy::Strict => Err(Error::NonDifferentiablePoint(what.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLossWeights {
    pub w_rot: f64,
    pub w_pm: f64,
    pub w_trans: f64,
    pub w_size: f64,
}

impl Default for PoseLossWeights {
    fn default() -> Self {
        Self {
            w_rot: 1.0,
            w_pm: 1.0,
            w_trans: 1.0,
            w_size: 1.0,
        }
    }
}

impl PoseLossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("w_rot", self.w_rot),
            ("w_pm", self.w_pm),
            ("w_trans", self.w_trans),
            ("w_size", self.w_size),
        ] {
            if !(w >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub total: T,
    pub rot: T,
    pub pm: T,
    pub trans: T,
    pub size: T,
    pub nocs: T,
    pub ivfc: T,
    pub alpha: T,
    pub beta: T,
}

fn l1<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> T {
    (a - b).abs().sum()
}

pub fn l_trans<T: Real>(t_pred: &Vector3<T>, t_gt: &Vector3<T>) -> T {
    l1(t_pred, t_gt)
}

pub fn l_size<T: Real>(s_pred: &Vector3<T>, s_gt: &Vector3<T>) -> T {
    l1(s_pred, s_gt)
}

/// Entrywise L1 distance between two 3×3 matrices.
pub fn l_rot<T: Real>(r_pred: &Matrix3<T>, r_gt: &Matrix3<T>) -> T {
    (r_pred - r_gt).abs().sum()
}

fn check_points<T: Real>(points: &[Vector3<T>]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidInput(
            "point matching needs at least one model point".into(),
        ));
    }
    Ok(())
}

/// Symmetric target `r_gt·g` closest to the (possibly non-orthogonal) prediction.
fn symmetric_target<T: Real>(
    r_pred: &Matrix3<T>,
    r_gt: &Rotation<T>,
    group: &SymmetryGroup<T>,
) -> Matrix3<T> {
    let i = closest_index_for_matrix(r_pred, r_gt, group);
    r_gt.matrix() * group.elements[i].matrix()
}

/// Mean over model points of `‖R_pred·x − R_sym·x‖₁`.
pub fn l_pm<T: Real>(
    r_pred: &Matrix3<T>,
    r_gt: &Rotation<T>,
    points: &[Vector3<T>],
    group: &SymmetryGroup<T>,
) -> Result<T> {
    check_points(points)?;
    let d = r_pred - symmetric_target(r_pred, r_gt, group);
    let sum = points
        .iter()
        .fold(T::zero(), |acc, x| acc + (d * x).abs().sum());
    Ok(sum / lit(points.len() as f64))
}

/// Masked mean absolute channel difference, `Σ|Δ| / (3·|mask|)`; zero for
/// an empty mask.
pub fn l_map_raw<T: Real>(pred: &[Vector3<T>], gt: &[Vector3<T>], mask: &[bool]) -> Result<T> {
    if pred.len() != gt.len() || gt.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "map sizes differ: pred {}, gt {}, mask {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Ok(T::zero());
    }
    let sum = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold(T::zero(), |acc, ((p, g), _)| acc + l1(p, g));
    Ok(sum / lit(3.0 * count as f64))
}

/// [`l_map_raw`] over the ground-truth mask.
pub fn l_map<T: Real>(pred: &CoordinateMap<T>, gt: &CoordinateMap<T>) -> Result<T> {
    check_dims(pred, gt)?;
    l_map_raw(pred.coords(), gt.coords(), gt.mask())
}

fn check_dims<T: Real>(a: &CoordinateMap<T>, b: &CoordinateMap<T>) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::ShapeMismatch(format!(
            "maps are {}x{} and {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn l_trans_grad<T: Real>(
    t_pred: &Vector3<T>,
    t_gt: &Vector3<T>,
    policy: KinkPolicy,
) -> Result<Vector3<T>> {
    let d = t_pred - t_gt;
    Ok(Vector3::new(
        sign(d.x, policy, "l_trans")?,
        sign(d.y, policy, "l_trans")?,
        sign(d.z, policy, "l_trans")?,
    ))
}

pub fn l_size_grad<T: Real>(
    s_pred: &Vector3<T>,
    s_gt: &Vector3<T>,
    policy: KinkPolicy,
) -> Result<Vector3<T>> {
    let d = s_pred - s_gt;
    Ok(Vector3::new(
        sign(d.x, policy, "l_size")?,
        sign(d.y, policy, "l_size")?,
        sign(d.z, policy, "l_size")?,
    ))
}

pub fn l_rot_grad<T: Real>(
    r_pred: &Matrix3<T>,
    r_gt: &Matrix3<T>,
    policy: KinkPolicy,
) -> Result<Matrix3<T>> {
    let d = r_pred - r_gt;
    let mut g = Matrix3::zeros();
    for i in 0..9 {
        g[i] = sign(d[i], policy, "l_rot")?;
    }
    Ok(g)
}

/// Gradient of [`l_pm`] with the symmetric target held fixed.
pub fn l_pm_grad<T: Real>(
    r_pred: &Matrix3<T>,
    r_gt: &Rotation<T>,
    points: &[Vector3<T>],
    group: &SymmetryGroup<T>,
    policy: KinkPolicy,
) -> Result<Matrix3<T>> {
    check_points(points)?;
    let d = r_pred - symmetric_target(r_pred, r_gt, group);
    let mut g = Matrix3::<T>::zeros();
    for x in points {
        let r = d * x;
        for i in 0..3 {
            let s = sign(r[i], policy, "l_pm")?;
            for j in 0..3 {
                g[(i, j)] += s * x[j];
            }
        }
    }
    Ok(g / lit::<T>(points.len() as f64))
}

/// Gradient of [`l_map_raw`] with respect to every predicted pixel.
pub fn l_map_raw_grad<T: Real>(
    pred: &[Vector3<T>],
    gt: &[Vector3<T>],
    mask: &[bool],
    policy: KinkPolicy,
) -> Result<Vec<Vector3<T>>> {
    l_map_raw(pred, gt, mask)?;
    let count = mask.iter().filter(|&&m| m).count();
    let mut out = vec![Vector3::zeros(); pred.len()];
    if count == 0 {
        return Ok(out);
    }
    let w = T::one() / lit(3.0 * count as f64);
    for (i, ((p, g), &m)) in pred.iter().zip(gt).zip(mask).enumerate() {
        if m {
            let d = p - g;
            out[i] = Vector3::new(
                sign(d.x, policy, "l_map")?,
                sign(d.y, policy, "l_map")?,
                sign(d.z, policy, "l_map")?,
            ) * w;
        }
    }
    Ok(out)
}

pub fn l_map_grad<T: Real>(
    pred: &CoordinateMap<T>,
    gt: &CoordinateMap<T>,
    policy: KinkPolicy,
) -> Result<Vec<Vector3<T>>> {
    check_dims(pred, gt)?;
    l_map_raw_grad(pred.coords(), gt.coords(), gt.mask(), policy)
}

/// Everything the overall loss looks at.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a, T: Real> {
    pub r_pred: &'a Matrix3<T>,
    pub t_pred: &'a Vector3<T>,
    pub s_pred: &'a Vector3<T>,
    pub nocs_pred: &'a CoordinateMap<T>,
    pub ivfc_pred: &'a CoordinateMap<T>,
    pub r_gt: &'a Rotation<T>,
    pub t_gt: &'a Vector3<T>,
    pub s_gt: &'a Vector3<T>,
    pub nocs_gt: &'a CoordinateMap<T>,
    pub ivfc_gt: &'a CoordinateMap<T>,
    pub model_points: &'a [Vector3<T>],
    pub group: &'a SymmetryGroup<T>,
}

/// Weighted sum of the pose terms plus `alpha·nocs + beta·ivfc`.
pub fn total_loss<T: Real>(
    inputs: &LossInputs<'_, T>,
    weights: &PoseLossWeights,
    alpha: T,
    beta: T,
) -> Result<LossBreakdown<T>> {
    weights.validate()?;
    let rot = l_rot(inputs.r_pred, inputs.r_gt.matrix());
    let pm = l_pm(
        inputs.r_pred,
        inputs.r_gt,
        inputs.model_points,
        inputs.group,
    )?;
    let trans = l_trans(inputs.t_pred, inputs.t_gt);
    let size = l_size(inputs.s_pred, inputs.s_gt);
    let nocs = l_map(inputs.nocs_pred, inputs.nocs_gt)?;
    let ivfc = l_map(inputs.ivfc_pred, inputs.ivfc_gt)?;
    let total = lit::<T>(weights.w_rot) * rot
        + lit::<T>(weights.w_pm) * pm
        + lit::<T>(weights.w_trans) * trans
        + lit::<T>(weights.w_size) * size
        + alpha * nocs
        + beta * ivfc;
    Ok(LossBreakdown {
        total,
        rot,
        pm,
        trans,
        size,
        nocs,
        ivfc,
        alpha,
        beta,
    })
}
