//! Scale-agnostic evaluation: oriented-box IoU, NIoU, n°·m·d pose accuracy,
//! mAP and the eight-column report.

use crate::error::{Error, Result};
use crate::geometry::{Pose9, Rotation};
use crate::scalar::{lit, Real};
use crate::symmetry::{
    align_to_symmetry, rotation_error_deg, Category, SymmetryGroup, SymmetryTable,
};
use nalgebra::Vector3;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox<T: Real> {
    pub rotation: Rotation<T>,
    pub center: Vector3<T>,
    /// Full side lengths along the box axes.
    pub extents: Vector3<T>,
}

impl<T: Real> OrientedBox<T> {
    pub fn new(rotation: Rotation<T>, center: Vector3<T>, extents: Vector3<T>) -> Result<Self> {
        if extents
            .iter()
            .any(|e| !(e.as_f64() > 0.0) || !e.as_f64().is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "box extents must be positive, got {:?}",
                extents.as_slice()
            )));
        }
        Ok(Self {
            rotation,
            center,
            extents,
        })
    }

    pub fn from_pose(pose: &Pose9<T>) -> Self {
        Self {
            rotation: pose.rotation,
            center: pose.translation,
            extents: pose.size,
        }
    }

    pub fn volume(&self) -> T {
        self.extents.x * self.extents.y * self.extents.z
    }

    pub fn corners(&self) -> [Vector3<T>; 8] {
        let h = self.extents * lit::<T>(0.5);
        let r = self.rotation.matrix();
        std::array::from_fn(|i| {
            let sx = if i & 1 == 0 { -h.x } else { h.x };
            let sy = if i & 2 == 0 { -h.y } else { h.y };
            let sz = if i & 4 == 0 { -h.z } else { h.z };
            self.center + r * Vector3::new(sx, sy, sz)
        })
    }

    /// Whether `p` lies inside or on the box.
    pub fn contains(&self, p: &Vector3<T>) -> bool {
        let local = self.rotation.matrix().transpose() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.extents[i] * lit::<T>(0.5))
    }

    /// The six bounding planes as `(n, d)` with the interior `n·p <= d`.
    fn half_spaces(&self) -> [(Vector3<T>, T); 6] {
        let r = self.rotation.matrix();
        std::array::from_fn(|i| {
            let axis = r.column(i / 2).into_owned();
            let n = if i % 2 == 0 { axis } else { -axis };
            (n, n.dot(&self.center) + self.extents[i / 2] * lit::<T>(0.5))
        })
    }

    fn faces(&self) -> Vec<Vec<Vector3<T>>> {
        let c = self.corners();
        [
            [0, 2, 6, 4],
            [1, 5, 7, 3],
            [0, 4, 5, 1],
            [2, 3, 7, 6],
            [0, 1, 3, 2],
            [4, 6, 7, 5],
        ]
        .iter()
        .map(|f| f.iter().map(|&i| c[i]).collect())
        .collect()
    }
}

/// Clips a convex polyhedron given by its face polygons against `n·p <= d`.
fn clip_polyhedron<T: Real>(
    faces: Vec<Vec<Vector3<T>>>,
    n: &Vector3<T>,
    d: T,
    eps: T,
) -> Vec<Vec<Vector3<T>>> {
    let mut out = Vec::with_capacity(faces.len() + 1);
    let mut on_plane: Vec<Vector3<T>> = Vec::new();
    for poly in faces {
        let mut clipped = Vec::with_capacity(poly.len() + 1);
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let (da, db) = (n.dot(&a) - d, n.dot(&b) - d);
            let a_in = da <= eps;
            let b_in = db <= eps;
            if a_in {
                clipped.push(a);
                if da.abs() <= eps {
                    on_plane.push(a);
                }
            }
            if a_in != b_in && (da.abs() > eps && db.abs() > eps) {
                let p = a + (b - a) * (da / (da - db));
                clipped.push(p);
                on_plane.push(p);
            }
        }
        if clipped.len() >= 3 {
            out.push(clipped);
        }
    }
    // A face already lying in the plane is the cap.
    if out
        .iter()
        .any(|f| f.iter().all(|p| (n.dot(p) - d).abs() <= eps))
    {
        return out;
    }
    let mut cap: Vec<Vector3<T>> = Vec::new();
    for p in on_plane {
        if !cap.iter().any(|q| (q - p).norm() <= eps) {
            cap.push(p);
        }
    }
    if cap.len() >= 3 {
        let centroid =
            cap.iter().fold(Vector3::zeros(), |acc, p| acc + p) / lit::<T>(cap.len() as f64);
        let u = (cap[0] - centroid).normalize();
        let v = n.cross(&u);
        let mut keyed: Vec<(T, Vector3<T>)> = cap
            .into_iter()
            .map(|p| {
                let w = p - centroid;
                (w.dot(&v).atan2(w.dot(&u)), p)
            })
            .collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
        out.push(keyed.into_iter().map(|(_, p)| p).collect());
    }
    out
}

fn polyhedron_volume<T: Real>(faces: &[Vec<Vector3<T>>]) -> T {
    let count: usize = faces.iter().map(Vec::len).sum();
    if count == 0 {
        return T::zero();
    }
    let c = faces
        .iter()
        .flatten()
        .fold(Vector3::zeros(), |acc, p| acc + p)
        / lit::<T>(count as f64);
    let mut vol = T::zero();
    for f in faces {
        for i in 1..f.len().saturating_sub(1) {
            let m = nalgebra::Matrix3::from_columns(&[f[0] - c, f[i] - c, f[i + 1] - c]);
            vol += m.determinant().abs();
        }
    }
    vol / lit::<T>(6.0)
}

/// Intersection volume of two oriented boxes: `b` clipped by the six planes of `a`.
pub fn intersection_volume<T: Real>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> T {
    let scale = a.extents.norm().max(b.extents.norm());
    let eps = scale * lit::<T>(1e-12);
    let mut faces = b.faces();
    for (n, d) in a.half_spaces() {
        faces = clip_polyhedron(faces, &n, d, eps);
        if faces.len() < 4 {
            return T::zero();
        }
    }
    polyhedron_volume(&faces)
}

/// 3D IoU of two oriented boxes by exact polytope clipping.
pub fn box_iou_3d<T: Real>(a: &OrientedBox<T>, b: &OrientedBox<T>) -> T {
    let inter = intersection_volume(a, b);
    let union = a.volume() + b.volume() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// Box of `pose` with translation and size divided by its own diagonal.
pub fn normalized_box<T: Real>(pose: &Pose9<T>) -> OrientedBox<T> {
    let sa = pose.scale_agnostic();
    OrientedBox {
        rotation: sa.rotation,
        center: sa.translation,
        extents: sa.size,
    }
}

/// NIoU: IoU of the two unit-diagonal boxes, after replacing the predicted
/// rotation by its symmetric equivalent closest to the ground truth.
pub fn niou<T: Real>(pred: &Pose9<T>, gt: &Pose9<T>, group: &SymmetryGroup<T>) -> T {
    let mut a = normalized_box(pred);
    if !group.is_trivial() {
        a.rotation = align_to_symmetry(&gt.rotation, &pred.rotation, group);
    }
    box_iou_3d(&a, &normalized_box(gt))
}

/// Distance between the two diagonal-normalized translations.
pub fn normalized_translation_error<T: Real>(pred: &Pose9<T>, gt: &Pose9<T>) -> T {
    (pred.translation / pred.diagonal() - gt.translation / gt.diagonal()).norm()
}

/// `n°·m·d` test with strict inequalities; either threshold may be infinite.
pub fn pose_accuracy<T: Real>(
    pred: &Pose9<T>,
    gt: &Pose9<T>,
    group: &SymmetryGroup<T>,
    n_deg: f64,
    m_frac: f64,
) -> bool {
    let rot_ok = n_deg.is_infinite()
        || rotation_error_deg(&pred.rotation, &gt.rotation, group).as_f64() < n_deg;
    let trans_ok = m_frac.is_infinite() || normalized_translation_error(pred, gt).as_f64() < m_frac;
    rot_ok && trans_ok
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchCriterion {
    /// NIoU at or above the threshold.
    Niou(f64),
    Pose {
        max_deg: f64,
        max_frac: f64,
    },
}

impl MatchCriterion {
    /// NIoU thresholds are inclusive (`>=`); pose thresholds strict.
    pub fn accepts<T: Real>(
        &self,
        pred: &Pose9<T>,
        gt: &Pose9<T>,
        group: &SymmetryGroup<T>,
        niou_value: T,
    ) -> bool {
        match *self {
            MatchCriterion::Niou(th) => niou_value.as_f64() >= th,
            MatchCriterion::Pose { max_deg, max_frac } => {
                pose_accuracy(pred, gt, group, max_deg, max_frac)
            }
        }
    }
}

/// Column names of the report, in table order.
pub const COLUMN_NAMES: [&str; 8] = [
    "NIoU25",
    "NIoU50",
    "NIoU75",
    "10deg0.2d",
    "10deg0.5d",
    "0.2d",
    "0.5d",
    "10deg",
];

pub const COLUMNS: [MatchCriterion; 8] = [
    MatchCriterion::Niou(0.25),
    MatchCriterion::Niou(0.5),
    MatchCriterion::Niou(0.75),
    MatchCriterion::Pose {
        max_deg: 10.0,
        max_frac: 0.2,
    },
    MatchCriterion::Pose {
        max_deg: 10.0,
        max_frac: 0.5,
    },
    MatchCriterion::Pose {
        max_deg: f64::INFINITY,
        max_frac: 0.2,
    },
    MatchCriterion::Pose {
        max_deg: f64::INFINITY,
        max_frac: 0.5,
    },
    MatchCriterion::Pose {
        max_deg: 10.0,
        max_frac: f64::INFINITY,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord<T: Real> {
    pub category: Category,
    pub score: f64,
    pub pose: Pose9<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject<T: Real> {
    pub category: Category,
    pub pose: Pose9<T>,
}

/// Detections and ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval<T: Real> {
    pub key: String,
    pub detections: Vec<DetectionRecord<T>>,
    pub gt: Vec<GtObject<T>>,
}

/// Per-detection outcome of the greedy matcher, in ranked order.
fn ranked_outcomes<T: Real>(
    images: &[ImageEval<T>],
    category: Category,
    criterion: MatchCriterion,
    group: &SymmetryGroup<T>,
) -> Vec<bool> {
    let mut ranked: Vec<(usize, usize)> = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        for (di, d) in img.detections.iter().enumerate() {
            if d.category == category {
                ranked.push((ii, di));
            }
        }
    }
    // Stable: equal scores keep image/detection order.
    ranked.sort_by(|a, b| {
        let (sa, sb) = (
            images[a.0].detections[a.1].score,
            images[b.0].detections[b.1].score,
        );
        sb.partial_cmp(&sa).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut matched: Vec<Vec<bool>> = images.iter().map(|img| vec![false; img.gt.len()]).collect();
    let mut out = Vec::with_capacity(ranked.len());
    for (ii, di) in ranked {
        let det = &images[ii].detections[di];
        let mut best: Option<(usize, T)> = None;
        for (gi, g) in images[ii].gt.iter().enumerate() {
            if g.category != category || matched[ii][gi] {
                continue;
            }
            let v = niou(&det.pose, &g.pose, group);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        let tp = match best {
            Some((gi, v)) if criterion.accepts(&det.pose, &images[ii].gt[gi].pose, group, v) => {
                matched[ii][gi] = true;
                true
            }
            _ => false,
        };
        out.push(tp);
    }
    out
}

/// All-points AP in `[0, 1]` of one category; `None` when it has no ground truth.
pub fn average_precision<T: Real>(
    images: &[ImageEval<T>],
    category: Category,
    criterion: MatchCriterion,
    group: &SymmetryGroup<T>,
) -> Option<f64> {
    let n_gt = images
        .iter()
        .flat_map(|img| &img.gt)
        .filter(|g| g.category == category)
        .count();
    if n_gt == 0 {
        return None;
    }
    let outcomes = ranked_outcomes(images, category, criterion, group);
    let mut precision = Vec::with_capacity(outcomes.len());
    let mut tp = 0usize;
    for (i, &hit) in outcomes.iter().enumerate() {
        tp += hit as usize;
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let sum: f64 = outcomes
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, &p)| p)
        .fold(0.0, |a, b| a + b);
    Some(sum / n_gt as f64)
}

/// Per-category AP (percent) for one criterion and its mean over categories with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    pub per_category: BTreeMap<Category, f64>,
    pub mean: f64,
}

pub fn mean_average_precision<T: Real>(
    images: &[ImageEval<T>],
    criterion: MatchCriterion,
    table: &SymmetryTable,
) -> Result<MapEntry> {
    let cats: BTreeSet<Category> = images
        .iter()
        .flat_map(|img| img.gt.iter().map(|g| g.category))
        .collect();
    let mut per_category = BTreeMap::new();
    for c in cats {
        let group = table.group::<T>(c)?;
        if let Some(ap) = average_precision(images, c, criterion, &group) {
            per_category.insert(c, ap * 100.0);
        }
    }
    let mean = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().fold(0.0, |a, b| a + b) / per_category.len() as f64
    };
    Ok(MapEntry { per_category, mean })
}

/// Eight-column report in percent; rows are categories in benchmark order.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<(String, [f64; 8])>,
    pub mean: [f64; 8],
}

impl MetricReport {
    pub fn row(&self, label: &str) -> Option<&[f64; 8]> {
        if label == "mean" {
            return Some(&self.mean);
        }
        self.rows.iter().find(|(l, _)| l == label).map(|(_, v)| v)
    }

    pub fn to_csv(&self, per_category: bool) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["category"];
        header.extend(COLUMN_NAMES);
        w.write_record(&header).expect("in-memory write");
        let fmt = |label: &str, v: &[f64; 8]| {
            std::iter::once(label.to_string())
                .chain(v.iter().map(|x| format!("{x:.1}")))
                .collect::<Vec<_>>()
        };
        if per_category {
            for (l, v) in &self.rows {
                w.write_record(fmt(l, v)).expect("in-memory write");
            }
        }
        w.write_record(fmt("mean", &self.mean))
            .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }

    /// Parses a report CSV; a row labelled `mean` becomes the mean row.
    pub fn from_csv(text: &str) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            context: "report csv".into(),
            message,
        };
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
        if header.len() != 9 || header.iter().skip(1).ne(COLUMN_NAMES) {
            return Err(parse_err(format!(
                "unexpected header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut rows = Vec::new();
        let mut mean = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let mut v = [0.0; 8];
            for (i, field) in rec.iter().skip(1).enumerate() {
                v[i] = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(format!("bad value `{field}`")))?;
            }
            if &rec[0] == "mean" {
                mean = Some(v);
            } else {
                rows.push((rec[0].to_string(), v));
            }
        }
        let mean = mean.ok_or_else(|| parse_err("no mean row".into()))?;
        Ok(Self { rows, mean })
    }
}

/// Computes all eight columns.
pub fn report<T: Real>(images: &[ImageEval<T>], table: &SymmetryTable) -> Result<MetricReport> {
    let entries = COLUMNS
        .iter()
        .map(|&c| mean_average_precision(images, c, table))
        .collect::<Result<Vec<_>>>()?;
    let cats: Vec<Category> = entries[0].per_category.keys().copied().collect();
    let rows = cats
        .iter()
        .map(|c| {
            (
                c.to_string(),
                std::array::from_fn(|i| entries[i].per_category[c]),
            )
        })
        .collect();
    Ok(MetricReport {
        rows,
        mean: std::array::from_fn(|i| entries[i].mean),
    })
}
