//! Category-consensus mesh reconstruction: alpha shape, Laplacian smoothing,
//! NOCS normalization and color coding.

use crate::delaunay::{circumradius, tetrahedralize, OUTWARD_FACES};
use crate::error::{Error, Result};
use crate::geometry::{color_code, normalize_to_nocs, Mesh, PointCloud};
use crate::scalar::{lit, Real};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaShapeParams {
    pub alpha: f64,
    pub smoothing_iterations: usize,
    pub smoothing_lambda: f64,
}

impl Default for AlphaShapeParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            smoothing_iterations: 10,
            smoothing_lambda: 0.5,
        }
    }
}

impl AlphaShapeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.smoothing_lambda > 0.0 && self.smoothing_lambda <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "smoothing lambda must lie in (0, 1], got {}",
                self.smoothing_lambda
            )));
        }
        Ok(())
    }
}

/// Boundary triangles of the alpha complex, indexed into `points`.
///
/// Faces are oriented outward with respect to the kept tetrahedra and sorted.
pub fn alpha_shape_indexed(points: &[Vector3<f64>], alpha: f64) -> Result<Vec<[usize; 3]>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::InvalidInput(
            "point cloud contains non-finite values".into(),
        ));
    }
    let tets = tetrahedralize(points)?;
    let mut faces: HashMap<[usize; 3], ([usize; 3], u32)> = HashMap::new();
    let mut kept = 0usize;
    for t in &tets {
        let r = circumradius(&points[t[0]], &points[t[1]], &points[t[2]], &points[t[3]]);
        if r > alpha {
            continue;
        }
        kept += 1;
        for f in OUTWARD_FACES {
            let tri = [t[f[0]], t[f[1]], t[f[2]]];
            let mut key = tri;
            key.sort_unstable();
            faces
                .entry(key)
                .and_modify(|e| e.1 += 1)
                .or_insert((tri, 1));
        }
    }
    if kept == 0 {
        return Err(Error::EmptyReconstruction { alpha });
    }
    let mut out: Vec<[usize; 3]> = faces
        .into_values()
        .filter(|&(_, c)| c == 1)
        .map(|(tri, _)| tri)
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Alpha-shape surface of a point cloud. Output vertices are the used input
/// points in ascending input order.
pub fn alpha_shape(points: &PointCloud<f64>, alpha: f64) -> Result<Mesh<f64>> {
    let faces = alpha_shape_indexed(&points.points, alpha)?;
    let mut remap = vec![usize::MAX; points.len()];
    for f in &faces {
        for &v in f {
            remap[v] = 0;
        }
    }
    let mut vertices = Vec::new();
    for (i, slot) in remap.iter_mut().enumerate() {
        if *slot == 0 {
            *slot = vertices.len();
            vertices.push(points.points[i]);
        }
    }
    let faces = faces
        .iter()
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .collect();
    Mesh::new(vertices, faces, None)
}

fn neighbors(n_vertices: usize, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n_vertices];
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Uniform-weight Laplacian smoothing with simultaneous updates.
pub fn laplacian_smooth<T: Real>(mesh: &Mesh<T>, iterations: usize, lambda: T) -> Result<Mesh<T>> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::InvalidInput(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let adj = neighbors(mesh.vertices.len(), &mesh.faces);
    if let Some(i) = adj.iter().position(|a| a.is_empty()) {
        return Err(Error::IsolatedVertex(i));
    }
    let mut cur = mesh.vertices.clone();
    let mut next = cur.clone();
    for _ in 0..iterations {
        for (i, nb) in adj.iter().enumerate() {
            let mut mean = Vector3::zeros();
            for &j in nb {
                mean += cur[j];
            }
            mean /= lit::<T>(nb.len() as f64);
            next[i] = cur[i] + (mean - cur[i]) * lambda;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(Mesh {
        vertices: cur,
        faces: mesh.faces.clone(),
        colors: mesh.colors.clone(),
    })
}

/// Alpha shape, smoothing, NOCS normalization and color coding.
pub fn build_consensus_model(
    mean_cloud: &PointCloud<f64>,
    params: &AlphaShapeParams,
) -> Result<Mesh<f64>> {
    params.validate()?;
    let surface = alpha_shape(mean_cloud, params.alpha)?;
    let smooth = laplacian_smooth(
        &surface,
        params.smoothing_iterations,
        params.smoothing_lambda,
    )?;
    let (nocs, _) = normalize_to_nocs(&smooth)?;
    color_code(&nocs)
}

/// True when every edge is shared by exactly two faces with opposite
/// directions.
pub fn is_watertight<T: Real>(mesh: &Mesh<T>) -> bool {
    if mesh.faces.is_empty() {
        return false;
    }
    let mut directed: HashMap<(usize, usize), u32> = HashMap::new();
    for f in &mesh.faces {
        for k in 0..3 {
            *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    directed
        .iter()
        .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn regular_tet() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.0, -1.0, -1.0),
            Vector3::new(-1.0, 1.0, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
        ]
    }

    pub(crate) fn sphere_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| loop {
                let v = Vector3::new(
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                    rng.random::<f64>() * 2.0 - 1.0,
                );
                let r = v.norm();
                if r > 0.1 && r <= 1.0 {
                    break v / r;
                }
            })
            .collect()
    }

    /// Brute-force hull: a triangle is a hull face when every other point lies
    /// strictly on one side of its plane.
    fn hull_oracle(p: &[Vector3<f64>]) -> BTreeSet<[usize; 3]> {
        let n = p.len();
        let mut out = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let nrm = (p[j] - p[i]).cross(&(p[k] - p[i]));
                    let (mut pos, mut neg) = (false, false);
                    for (m, q) in p.iter().enumerate() {
                        if m == i || m == j || m == k {
                            continue;
                        }
                        let s = nrm.dot(&(q - p[i]));
                        pos |= s > 0.0;
                        neg |= s < 0.0;
                    }
                    if pos != neg {
                        out.insert([i, j, k]);
                    }
                }
            }
        }
        out
    }

    fn sorted(faces: &[[usize; 3]]) -> BTreeSet<[usize; 3]> {
        faces
            .iter()
            .map(|f| {
                let mut s = *f;
                s.sort_unstable();
                s
            })
            .collect()
    }

    #[test]
    fn tetrahedron_with_large_alpha() {
        let m = alpha_shape(&PointCloud::new(regular_tet()), 1e6).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.faces.len(), 4);
        assert!(is_watertight(&m));
        // outward orientation
        let c: Vector3<f64> = m.vertices.iter().sum::<Vector3<f64>>() / 4.0;
        for f in &m.faces {
            let n =
                (m.vertices[f[1]] - m.vertices[f[0]]).cross(&(m.vertices[f[2]] - m.vertices[f[0]]));
            assert!(n.dot(&(m.vertices[f[0]] - c)) > 0.0);
        }
    }

    #[test]
    fn small_alpha_is_empty() {
        let r = alpha_shape(&PointCloud::new(regular_tet()), 0.5);
        assert!(matches!(r, Err(Error::EmptyReconstruction { .. })));
    }

    #[test]
    fn coplanar_input_is_degenerate() {
        let pts: Vec<_> = (0..6)
            .map(|i| Vector3::new(i as f64, (i * i) as f64, 0.0))
            .collect();
        assert!(matches!(
            alpha_shape(&PointCloud::new(pts), 1.0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn infinite_alpha_matches_hull_oracle() {
        for seed in 0..12u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5 + (seed as usize * 4) % 46;
            let pts: Vec<_> = (0..n)
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let faces = alpha_shape_indexed(&pts, f64::INFINITY).unwrap();
            assert_eq!(sorted(&faces), hull_oracle(&pts), "seed {seed}");
        }
    }

    #[test]
    fn sphere_reconstruction_is_watertight_and_on_sphere() {
        // Points on a sphere are cospherical, so every Delaunay cell has
        // circumradius ~1; alpha must exceed that to keep any cell.
        let pts = sphere_points(2000, 3);
        let m = alpha_shape(&PointCloud::new(pts), 1.5).unwrap();
        assert!(is_watertight(&m));
        for v in &m.vertices {
            assert!((v.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn smoothing_zero_iterations_is_identity() {
        let m = alpha_shape(&PointCloud::new(regular_tet()), 1e6).unwrap();
        assert_eq!(laplacian_smooth(&m, 0, 0.5).unwrap(), m);
    }

    #[test]
    fn smoothing_tetrahedron_one_step() {
        let m = alpha_shape(&PointCloud::new(regular_tet()), 1e6).unwrap();
        let s = laplacian_smooth(&m, 1, 1.0).unwrap();
        for (i, v) in s.vertices.iter().enumerate() {
            let others: Vector3<f64> = m
                .vertices
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, w)| *w)
                .sum::<Vector3<f64>>()
                / 3.0;
            assert!((v - others).norm() < 1e-12);
        }
        let bc: Vector3<f64> = s.vertices.iter().sum::<Vector3<f64>>() / 4.0;
        assert!(bc.norm() < 1e-12);
        assert_eq!(s.faces, m.faces);
    }

    #[test]
    fn smoothing_reduces_noise_on_sphere() {
        let clean = alpha_shape(&PointCloud::new(sphere_points(2000, 5)), 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noisy = clean.map_vertices(|v| v * (1.0 + 0.05 * (rng_unit(&mut rng))));
        let rms = |m: &Mesh<f64>| {
            (m.vertices
                .iter()
                .map(|v| (v.norm() - 1.0).powi(2))
                .sum::<f64>()
                / m.vertices.len() as f64)
                .sqrt()
        };
        let smooth = laplacian_smooth(&noisy, 10, 0.5).unwrap();
        assert!(rms(&smooth) < rms(&noisy));
    }

    fn rng_unit(rng: &mut ChaCha8Rng) -> f64 {
        rng.random::<f64>() * 2.0 - 1.0
    }

    #[test]
    fn isolated_vertex_rejected() {
        let mut v = regular_tet();
        v.push(Vector3::new(5.0, 5.0, 5.0));
        let m = Mesh::new(v, vec![[0, 1, 2], [0, 2, 3]], None).unwrap();
        assert!(matches!(
            laplacian_smooth(&m, 1, 0.5),
            Err(Error::IsolatedVertex(_))
        ));
    }

    #[test]
    fn consensus_on_sphere_colors_match_coordinates() {
        let params = AlphaShapeParams {
            alpha: 1.5,
            smoothing_iterations: 2,
            smoothing_lambda: 0.5,
        };
        let m = build_consensus_model(&PointCloud::new(sphere_points(800, 7)), &params).unwrap();
        assert!(is_watertight(&m));
        let colors = m.colors.as_ref().unwrap();
        for (v, c) in m.vertices.iter().zip(colors) {
            assert!((c - (v + Vector3::repeat(0.5))).norm() < 1e-12);
            assert!(c.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn consensus_on_cylinder_has_unit_diagonal() {
        let mut pts = Vec::new();
        for ring in 0..12 {
            let y = -0.5 + ring as f64 / 11.0;
            for k in 0..24 {
                let a = k as f64 * std::f64::consts::TAU / 24.0;
                pts.push(Vector3::new(0.3 * a.cos(), y, 0.3 * a.sin()));
            }
        }
        let params = AlphaShapeParams {
            alpha: 10.0,
            smoothing_iterations: 3,
            smoothing_lambda: 0.5,
        };
        let m = build_consensus_model(&PointCloud::new(pts), &params).unwrap();
        assert!((m.bbox_diagonal().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn consensus_on_tetrahedron_without_smoothing() {
        let params = AlphaShapeParams {
            alpha: 1e6,
            smoothing_iterations: 0,
            smoothing_lambda: 0.5,
        };
        let m = build_consensus_model(&PointCloud::new(regular_tet()), &params).unwrap();
        assert_eq!(m.faces.len(), 4);
        assert!(m.colors.is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn lambda_zero_is_identity(seed in 0u64..1000, iters in 0usize..5) {
            let m = alpha_shape(&PointCloud::new(sphere_points(40, seed)), 1.5).unwrap();
            let s = laplacian_smooth(&m, iters, 0.0).unwrap();
            prop_assert_eq!(s, m);
        }

        #[test]
        fn consensus_output_is_valid(seed in 0u64..1000) {
            let params = AlphaShapeParams { alpha: 1e3, smoothing_iterations: 2, smoothing_lambda: 0.5 };
            let m = build_consensus_model(&PointCloud::new(sphere_points(30, seed)), &params).unwrap();
            let revalidated = Mesh::new(m.vertices.clone(), m.faces.clone(), m.colors.clone());
            prop_assert!(revalidated.is_ok());
            for c in m.colors.as_ref().unwrap() {
                prop_assert!(c.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }
}
