//! Incremental 3D Delaunay tetrahedralization (Bowyer–Watson).
//!
//! Orientation and in-sphere decisions use adaptive exact predicates, so the
//! result is a valid triangulation of the floating point input even when
//! points are (nearly) cospherical. Points are inserted in input order, which
//! makes the output deterministic.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use robust::{insphere, orient3d, Coord3D};
use std::collections::HashMap;

const NONE: usize = usize::MAX;
/// Distance of the enclosing tetrahedron, in bounding-box diagonals.
const SUPER_SCALE: f64 = 1e5;

/// Vertices of face `i` ordered so that its normal points away from vertex `i`
/// in a positively oriented tetrahedron.
pub(crate) const OUTWARD_FACES: [[usize; 3]; 4] = [[1, 3, 2], [0, 2, 3], [0, 3, 1], [0, 1, 2]];

#[derive(Debug, Clone)]
struct Tet {
    v: [usize; 4],
    n: [usize; 4],
    alive: bool,
}

#[inline]
fn c3(p: &Vector3<f64>) -> Coord3D<f64> {
    Coord3D {
        x: p.x,
        y: p.y,
        z: p.z,
    }
}

struct Builder {
    pts: Vec<Vector3<f64>>,
    tets: Vec<Tet>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl Builder {
    #[inline]
    fn orient(&self, v: &[usize; 4]) -> f64 {
        // robust::orient3d is positive when d lies below the ccw plane abc;
        // we call a tetrahedron positive when that holds.
        orient3d(
            c3(&self.pts[v[0]]),
            c3(&self.pts[v[1]]),
            c3(&self.pts[v[2]]),
            c3(&self.pts[v[3]]),
        )
    }

    #[inline]
    fn in_sphere(&self, t: usize, p: usize) -> f64 {
        let v = &self.tets[t].v;
        insphere(
            c3(&self.pts[v[0]]),
            c3(&self.pts[v[1]]),
            c3(&self.pts[v[2]]),
            c3(&self.pts[v[3]]),
            c3(&self.pts[p]),
        )
    }

    #[inline]
    fn replaced_orient(&self, t: usize, i: usize, p: usize) -> f64 {
        let mut v = self.tets[t].v;
        v[i] = p;
        self.orient(&v)
    }

    fn locate(&self, p: usize, start: usize) -> usize {
        let mut t = start;
        let limit = 4 * self.tets.len() + 16;
        for step in 0..limit {
            let mut moved = false;
            for j in 0..4 {
                let i = (j + step) % 4;
                if self.replaced_orient(t, i, p) < 0.0 {
                    let nb = self.tets[t].n[i];
                    if nb != NONE {
                        t = nb;
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                return t;
            }
        }
        // Walk failed to converge; fall back to a scan.
        (0..self.tets.len())
            .find(|&t| self.tets[t].alive && (0..4).all(|i| self.replaced_orient(t, i, p) >= 0.0))
            .unwrap_or(start)
    }

    fn insert(&mut self, p: usize, start: usize) -> Result<usize> {
        let seed = self.locate(p, start);
        self.epoch += 1;
        if self.stamp.len() < self.tets.len() {
            self.stamp.resize(self.tets.len(), 0);
        }
        let epoch = self.epoch;
        let mut cavity = vec![seed];
        self.stamp[seed] = epoch;
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            for i in 0..4 {
                let nb = self.tets[t].n[i];
                if nb != NONE && self.stamp[nb] != epoch && self.in_sphere(nb, p) > 0.0 {
                    self.stamp[nb] = epoch;
                    cavity.push(nb);
                }
            }
        }

        // Grow the cavity until it is strictly star-shaped around p; only
        // needed for degenerate (cospherical / coplanar) configurations.
        let boundary = loop {
            let mut boundary = Vec::new();
            let mut grow = None;
            'scan: for &t in &cavity {
                for i in 0..4 {
                    let nb = self.tets[t].n[i];
                    if nb != NONE && self.stamp[nb] == epoch {
                        continue;
                    }
                    if self.replaced_orient(t, i, p) <= 0.0 {
                        if nb == NONE {
                            return Err(Error::DegenerateInput(
                                "point outside the enclosing tetrahedron".into(),
                            ));
                        }
                        grow = Some(nb);
                        break 'scan;
                    }
                    boundary.push((t, i));
                }
            }
            match grow {
                Some(nb) => {
                    self.stamp[nb] = epoch;
                    cavity.push(nb);
                }
                None => break boundary,
            }
        };

        let mut edge_map: HashMap<(usize, usize), (usize, usize)> =
            HashMap::with_capacity(boundary.len() * 3);
        let mut last = NONE;
        for &(t, i) in &boundary {
            let outside = self.tets[t].n[i];
            let mut v = self.tets[t].v;
            v[i] = p;
            let id = self.tets.len();
            let mut n = [NONE; 4];
            n[i] = outside;
            self.tets.push(Tet { v, n, alive: true });
            if outside != NONE {
                if let Some(slot) = self.tets[outside].n.iter().position(|&x| x == t) {
                    self.tets[outside].n[slot] = id;
                }
            }
            for kf in 0..4 {
                if kf == i {
                    continue;
                }
                let mut others = [0usize; 2];
                let mut c = 0;
                for (j, &vj) in v.iter().enumerate() {
                    if j != kf && j != i {
                        others[c] = vj;
                        c += 1;
                    }
                }
                let key = (others[0].min(others[1]), others[0].max(others[1]));
                if let Some((ot, ok)) = edge_map.remove(&key) {
                    self.tets[id].n[kf] = ot;
                    self.tets[ot].n[ok] = id;
                } else {
                    edge_map.insert(key, (id, kf));
                }
            }
            last = id;
        }
        for &t in &cavity {
            self.tets[t].alive = false;
        }
        self.stamp.resize(self.tets.len(), 0);
        Ok(last)
    }
}

/// Checks that the cloud spans 3D; returns the bounding-box diagonal.
pub(crate) fn check_non_degenerate(points: &[Vector3<f64>]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::DegenerateInput(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    let (lo, hi) = crate::geometry::bounds(points).expect("non-empty");
    let diag = (hi - lo).norm();
    if !(diag > 0.0) || !diag.is_finite() {
        return Err(Error::DegenerateInput("all points coincide".into()));
    }
    let p0 = points[0];
    let p1 = points
        .iter()
        .copied()
        .max_by(|a, b| (a - p0).norm_squared().total_cmp(&(b - p0).norm_squared()))
        .expect("non-empty");
    let e = p1 - p0;
    let p2 = points
        .iter()
        .copied()
        .max_by(|a, b| {
            e.cross(&(a - p0))
                .norm()
                .total_cmp(&e.cross(&(b - p0)).norm())
        })
        .expect("non-empty");
    let area = e.cross(&(p2 - p0)).norm();
    if area <= 1e-12 * diag * diag {
        return Err(Error::DegenerateInput("points are collinear".into()));
    }
    let normal = e.cross(&(p2 - p0)) / area;
    let height = points
        .iter()
        .map(|p| normal.dot(&(p - p0)).abs())
        .fold(0.0, f64::max);
    if height <= 1e-12 * diag {
        return Err(Error::DegenerateInput("points are coplanar".into()));
    }
    Ok(diag)
}

/// Delaunay tetrahedra of `points` as positively oriented index quadruples.
///
/// Exact duplicate points are inserted once; their later copies are unused.
pub(crate) fn tetrahedralize(points: &[Vector3<f64>]) -> Result<Vec<[usize; 4]>> {
    let diag = check_non_degenerate(points)?;
    let (lo, hi) = crate::geometry::bounds(points).expect("non-empty");
    let center = (lo + hi) * 0.5;
    let s = SUPER_SCALE * diag;
    let n = points.len();
    let mut pts = points.to_vec();
    pts.push(center + Vector3::new(s, s, s));
    pts.push(center + Vector3::new(s, -s, -s));
    pts.push(center + Vector3::new(-s, s, -s));
    pts.push(center + Vector3::new(-s, -s, s));
    let mut b = Builder {
        pts,
        tets: Vec::with_capacity(8 * n),
        stamp: Vec::new(),
        epoch: 0,
    };
    let mut root = [n, n + 1, n + 2, n + 3];
    if b.orient(&root) < 0.0 {
        root.swap(0, 1);
    }
    b.tets.push(Tet {
        v: root,
        n: [NONE; 4],
        alive: true,
    });

    let mut seen: HashMap<[u64; 3], usize> = HashMap::with_capacity(n);
    let mut last = 0;
    for (i, p) in points.iter().enumerate() {
        let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        if seen.insert(key, i).is_some() {
            continue;
        }
        last = b.insert(i, last)?;
    }
    Ok(b.tets
        .iter()
        .filter(|t| t.alive && t.v.iter().all(|&v| v < n))
        .map(|t| t.v)
        .collect())
}

/// Circumradius of the tetrahedron `(a, b, c, d)`; infinite when flat.
pub(crate) fn circumradius(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
    d: &Vector3<f64>,
) -> f64 {
    let u = b - a;
    let v = c - a;
    let w = d - a;
    let denom = 2.0 * u.dot(&v.cross(&w));
    if denom == 0.0 {
        return f64::INFINITY;
    }
    let num = v.cross(&w) * u.norm_squared()
        + w.cross(&u) * v.norm_squared()
        + u.cross(&v) * w.norm_squared();
    (num / denom).norm()
}
