//! Per-category rotational symmetry and symmetry-aware rotation error.
//!
//! Rotationally symmetric categories (bottle, bowl, can) spin freely about
//! the NOCS +y axis. The metrics treat that spin analytically; the losses use
//! a discretization with `m` elements so they always have a concrete target.

use crate::error::{Error, Result};
use crate::geometry::Rotation;
use crate::scalar::{lit, Real};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Default number of elements used to discretize a continuous axial symmetry.
pub const DEFAULT_DISCRETIZATION: usize = 12;

/// The six NOCS benchmark categories, in benchmark order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Bottle,
    Bowl,
    Camera,
    Can,
    Laptop,
    Mug,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Bottle,
        Category::Bowl,
        Category::Camera,
        Category::Can,
        Category::Laptop,
        Category::Mug,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Bottle => "bottle",
            Category::Bowl => "bowl",
            Category::Camera => "camera",
            Category::Can => "can",
            Category::Laptop => "laptop",
            Category::Mug => "mug",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymmetryKind {
    /// Finite cyclic group (the trivial group when it has one element).
    Discrete,
    /// Free spin about `axis`, stored as an `m`-element discretization.
    AxisContinuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup<T: Real> {
    pub kind: SymmetryKind,
    pub axis: Vector3<T>,
    /// Element 0 is always the exact identity.
    pub elements: Vec<Rotation<T>>,
}

impl<T: Real> SymmetryGroup<T> {
    /// The group `{I}`.
    pub fn trivial() -> Self {
        Self {
            kind: SymmetryKind::Discrete,
            axis: Vector3::y(),
            elements: vec![Rotation::identity()],
        }
    }

    /// Cyclic group of `m` uniform spins about `axis`.
    pub fn axial(kind: SymmetryKind, axis: Vector3<T>, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput(
                "symmetry discretization needs at least one element".into(),
            ));
        }
        let n = axis.norm();
        if n.as_f64() < T::ZERO_NORM_TOL {
            return Err(Error::InvalidInput("symmetry axis has zero length".into()));
        }
        let axis = axis / n;
        let step = T::two_pi() / lit::<T>(m as f64);
        let mut elements = Vec::with_capacity(m);
        elements.push(Rotation::identity());
        for k in 1..m {
            elements.push(Rotation::from_axis_angle(&axis, step * lit::<T>(k as f64))?);
        }
        Ok(Self {
            kind,
            axis,
            elements,
        })
    }

    pub fn is_trivial(&self) -> bool {
        self.kind == SymmetryKind::Discrete && self.elements.len() == 1
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }
}

/// Symmetry description for one category as stored in a symmetry table file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub kind: SymmetryKind,
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default = "default_m")]
    pub m: usize,
}

fn default_axis() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_m() -> usize {
    DEFAULT_DISCRETIZATION
}

impl SymmetrySpec {
    pub fn asymmetric() -> Self {
        Self {
            kind: SymmetryKind::Discrete,
            axis: default_axis(),
            m: 1,
        }
    }

    pub fn axial(m: usize) -> Self {
        Self {
            kind: SymmetryKind::AxisContinuous,
            axis: default_axis(),
            m,
        }
    }

    pub fn group<T: Real>(&self) -> Result<SymmetryGroup<T>> {
        let axis = Vector3::new(lit(self.axis[0]), lit(self.axis[1]), lit(self.axis[2]));
        if self.kind == SymmetryKind::Discrete && self.m == 1 {
            let mut g = SymmetryGroup::trivial();
            g.axis = axis;
            return Ok(g);
        }
        SymmetryGroup::axial(self.kind, axis, self.m)
    }
}

/// Category → symmetry mapping, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymmetryTable {
    pub entries: BTreeMap<Category, SymmetrySpec>,
}

impl Default for SymmetryTable {
    fn default() -> Self {
        Self::with_discretization(DEFAULT_DISCRETIZATION)
    }
}

impl SymmetryTable {
    /// Bottle, bowl and can spin about +y; camera, laptop and mug are asymmetric.
    pub fn with_discretization(m: usize) -> Self {
        let entries = Category::ALL
            .into_iter()
            .map(|c| {
                let spec = match c {
                    Category::Bottle | Category::Bowl | Category::Can => SymmetrySpec::axial(m),
                    Category::Camera | Category::Laptop | Category::Mug => {
                        SymmetrySpec::asymmetric()
                    }
                };
                (c, spec)
            })
            .collect();
        Self { entries }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: SymmetryTable =
            serde_json::from_str(text).map_err(|e| Error::schema("", e.to_string()))?;
        for (c, s) in &table.entries {
            if s.m == 0 {
                return Err(Error::schema(format!("/{c}/m"), "must be at least 1"));
            }
        }
        Ok(table)
    }

    pub fn group<T: Real>(&self, category: Category) -> Result<SymmetryGroup<T>> {
        match self.entries.get(&category) {
            Some(spec) => spec.group(),
            None => Ok(SymmetryGroup::trivial()),
        }
    }
}

/// Symmetry group of a category label under the default table.
pub fn group_for_category<T: Real>(category: &str) -> Result<SymmetryGroup<T>> {
    let c: Category = category.parse()?;
    SymmetryTable::default().group(c)
}

/// Index of the element `g` minimizing the geodesic angle between `r_pred`
/// and `r_gt·g`; ties go to the lowest index.
pub fn closest_symmetric_index<T: Real>(
    r_pred: &Rotation<T>,
    r_gt: &Rotation<T>,
    group: &SymmetryGroup<T>,
) -> usize {
    let mut best = 0;
    let mut best_angle = T::max_value().unwrap();
    for (i, g) in group.elements.iter().enumerate() {
        let a = r_pred.angle_to(&(r_gt * g));
        if a < best_angle {
            best_angle = a;
            best = i;
        }
    }
    best
}

/// Same selection for an arbitrary 3×3 matrix: maximizes `tr(Mᵀ·R_gt·g)`,
/// which orders rotations exactly like the geodesic angle does.
pub(crate) fn closest_index_for_matrix<T: Real>(
    m: &Matrix3<T>,
    r_gt: &Rotation<T>,
    group: &SymmetryGroup<T>,
) -> usize {
    let mut best = 0;
    let mut best_score = T::min_value().unwrap();
    for (i, g) in group.elements.iter().enumerate() {
        let target = r_gt.matrix() * g.matrix();
        let score = m.component_mul(&target).sum();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// The member `r_gt·g` of the stored group closest to `r_pred`.
pub fn closest_symmetric_rotation<T: Real>(
    r_pred: &Rotation<T>,
    r_gt: &Rotation<T>,
    group: &SymmetryGroup<T>,
) -> Rotation<T> {
    let i = closest_symmetric_index(r_pred, r_gt, group);
    r_gt * &group.elements[i]
}

/// Symmetric equivalent of `r_gt` closest to `r_pred`, solving the axial spin
/// in closed form for continuous groups instead of using the discretization.
pub fn align_to_symmetry<T: Real>(
    r_pred: &Rotation<T>,
    r_gt: &Rotation<T>,
    group: &SymmetryGroup<T>,
) -> Rotation<T> {
    match group.kind {
        SymmetryKind::Discrete => closest_symmetric_rotation(r_pred, r_gt, group),
        SymmetryKind::AxisContinuous => {
            // tr(M·R_a(θ)) = A·cosθ + B·sinθ + aᵀMa with M = R_predᵀ·R_gt.
            let a = group.axis;
            let m = r_pred.matrix().transpose() * r_gt.matrix();
            let ama = a.dot(&(m * a));
            let big_a = m.trace() - ama;
            let skew = a.cross_matrix();
            let big_b = (m * skew).trace();
            let theta = big_b.atan2(big_a);
            match Rotation::from_axis_angle(&a, theta) {
                Ok(spin) => r_gt * &spin,
                Err(_) => *r_gt,
            }
        }
    }
}

/// Symmetry-aware rotation error in degrees.
///
/// Discrete groups take the minimum geodesic angle over the stored elements.
/// Continuous axial groups measure the angle between the two rotated symmetry
/// axes, which is exact for any spin.
pub fn rotation_error_deg<T: Real>(
    r_pred: &Rotation<T>,
    r_gt: &Rotation<T>,
    group: &SymmetryGroup<T>,
) -> T {
    let rad = match group.kind {
        SymmetryKind::AxisContinuous => {
            let a = r_pred.apply(&group.axis);
            let b = r_gt.apply(&group.axis);
            a.cross(&b).norm().atan2(a.dot(&b))
        }
        SymmetryKind::Discrete => group
            .elements
            .iter()
            .map(|g| r_pred.angle_to(&(r_gt * g)))
            .fold(T::max_value().unwrap(), |acc, v| acc.min(v)),
    };
    rad * lit::<T>(180.0) / T::pi()
}
