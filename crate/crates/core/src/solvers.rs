//! Closed-form and robust pose solvers: Umeyama similarity alignment, EPnP,
//! and RANSAC around EPnP.

use crate::coordmap::{map_points, CoordinateMap};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Rotation};
use crate::scalar::{lit, Real};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Minimum number of correspondences accepted by EPnP and RANSAC.
pub const MIN_PNP_POINTS: usize = 6;
/// Dense maps are subsampled to at most this many correspondences.
pub const MAX_MAP_CORRESPONDENCES: usize = 2048;

#[derive(Debug, Clone, PartialEq)]
pub struct Correspondences2D3D<T: Real> {
    pub pixels: Vec<Vector2<T>>,
    pub points: Vec<Vector3<T>>,
}

impl<T: Real> Correspondences2D3D<T> {
    pub fn new(pixels: Vec<Vector2<T>>, points: Vec<Vector3<T>>) -> Result<Self> {
        if pixels.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels vs {} points",
                pixels.len(),
                points.len()
            )));
        }
        Ok(Self { pixels, points })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            pixels: idx.iter().map(|&i| self.pixels[i]).collect(),
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 256,
            inlier_threshold: 2.0,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidInput(
                "RANSAC needs at least one iteration".into(),
            ));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::InvalidInput(format!(
                "inlier threshold must be > 0, got {}",
                self.inlier_threshold
            )));
        }
        Ok(())
    }
}

/// `dst ≈ scale * R * src + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity<T: Real> {
    pub rotation: Rotation<T>,
    pub translation: Vector3<T>,
    pub scale: T,
}

impl<T: Real> Similarity<T> {
    pub fn apply(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation.apply(p) * self.scale + self.translation
    }
}

/// Least-squares similarity transform mapping `src` onto `dst`.
pub fn umeyama<T: Real>(src: &[Vector3<T>], dst: &[Vector3<T>]) -> Result<Similarity<T>> {
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} source vs {} target points",
            src.len(),
            dst.len()
        )));
    }
    if src.len() < 3 {
        return Err(Error::NotEnoughPoints {
            needed: 3,
            got: src.len(),
        });
    }
    let n = lit::<T>(src.len() as f64);
    let mu_s = src.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mu_d = dst.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut var_s = T::zero();
    for (s, d) in src.iter().zip(dst) {
        let sc = s - mu_s;
        let dc = d - mu_d;
        cov += dc * sc.transpose();
        src_cov += sc * sc.transpose();
        var_s += sc.norm_squared();
    }
    cov /= n;
    var_s /= n;
    let sv = src_cov.symmetric_eigenvalues();
    let (lo, hi) = sort3(sv);
    if !(hi > T::zero()) || lo[1] <= hi * lit(1e-20) {
        return Err(Error::DegenerateConfiguration(
            "source points are collinear or coincident".into(),
        ));
    }
    let svd = cov.svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < T::zero() {
        s[(2, 2)] = -T::one();
    }
    // nalgebra orders singular values descending, so the flip hits the smallest.
    let r = u * s * v_t;
    let d = svd.singular_values;
    let trace = d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)];
    let scale = trace / var_s;
    let rotation = Rotation::nearest(r)?;
    let translation = mu_d - rotation.apply(&mu_s) * scale;
    Ok(Similarity {
        rotation,
        translation,
        scale,
    })
}

/// Ascending eigenvalues: returns the two smallest and the largest.
fn sort3<T: Real>(v: Vector3<T>) -> ([T; 2], T) {
    let mut a = [v[0], v[1], v[2]];
    a.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    ([a[0], a[1]], a[2])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    pub rotation: Rotation<f64>,
    pub translation: Vector3<f64>,
    /// Mean reprojection error in pixels.
    pub residual_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacSolution {
    pub rotation: Rotation<f64>,
    pub translation: Vector3<f64>,
    pub inliers: Vec<bool>,
    /// Mean reprojection error over the inliers, in pixels.
    pub residual_px: f64,
}

impl RansacSolution {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Reprojection error in pixels of one correspondence; infinite behind the camera.
fn reproj(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    k: &CameraIntrinsics<f64>,
    x: &Vector3<f64>,
    u: &Vector2<f64>,
) -> f64 {
    let p = r * x + t;
    match k.project(&p) {
        Some(q) => (q - u).norm(),
        None => f64::INFINITY,
    }
}

/// Mean pixel reprojection error of pose `(r, t)` over `corr`.
pub fn reprojection_error(
    rotation: &Rotation<f64>,
    translation: &Vector3<f64>,
    corr: &Correspondences2D3D<f64>,
    k: &CameraIntrinsics<f64>,
) -> f64 {
    if corr.is_empty() {
        return 0.0;
    }
    let r = rotation.matrix();
    corr.points
        .iter()
        .zip(&corr.pixels)
        .map(|(x, u)| reproj(r, translation, k, x, u))
        .sum::<f64>()
        / corr.len() as f64
}

struct ControlFrame {
    /// World control points.
    ctrl: Vec<Vector3<f64>>,
    /// Barycentric weights per point, one per control point.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(
    points: &[Vector3<f64>],
    centroid: &Vector3<f64>,
    axes: &[(f64, Vector3<f64>)],
) -> ControlFrame {
    let mut ctrl = vec![*centroid];
    for (lambda, v) in axes {
        ctrl.push(centroid + v * lambda.sqrt());
    }
    let alphas = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            let mut a = vec![0.0; axes.len() + 1];
            let mut sum = 0.0;
            for (j, (lambda, v)) in axes.iter().enumerate() {
                let w = d.dot(v) / lambda.sqrt();
                a[j + 1] = w;
                sum += w;
            }
            a[0] = 1.0 - sum;
            a
        })
        .collect();
    ControlFrame { ctrl, alphas }
}

/// Rigid (unit-scale) alignment of `src` onto `dst`.
fn kabsch(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Option<(Rotation<f64>, Vector3<f64>)> {
    let n = src.len() as f64;
    let mu_s = src.iter().sum::<Vector3<f64>>() / n;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        cov += (d - mu_d) * (s - mu_s).transpose();
    }
    let svd = cov.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = Rotation::nearest(u * s * v_t).ok()?;
    let t = mu_d - r.apply(&mu_s);
    Some((r, t))
}

/// Solves one EPnP instance for a given control frame. Returns candidate
/// poses for each null-space dimension tried.
fn epnp_with_frame(
    corr: &Correspondences2D3D<f64>,
    k: &CameraIntrinsics<f64>,
    frame: &ControlFrame,
) -> Vec<(Rotation<f64>, Vector3<f64>)> {
    let nc = frame.ctrl.len();
    let dim = 3 * nc;
    let mut mtm = DMatrix::<f64>::zeros(dim, dim);
    for (a, u) in frame.alphas.iter().zip(&corr.pixels) {
        let q = k.normalize(u);
        let mut r1 = DVector::<f64>::zeros(dim);
        let mut r2 = DVector::<f64>::zeros(dim);
        for j in 0..nc {
            r1[3 * j] = a[j];
            r1[3 * j + 2] = -a[j] * q.x;
            r2[3 * j + 1] = a[j];
            r2[3 * j + 2] = -a[j] * q.y;
        }
        mtm.ger(1.0, &r1, &r1, 1.0);
        mtm.ger(1.0, &r2, &r2, 1.0);
    }
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let null: Vec<DVector<f64>> = order
        .iter()
        .take(3)
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..nc)
        .flat_map(|a| (a + 1..nc).map(move |b| (a, b)))
        .collect();
    let dist2: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| (frame.ctrl[a] - frame.ctrl[b]).norm_squared())
        .collect();
    let diff = |v: &DVector<f64>, a: usize, b: usize| {
        Vector3::new(
            v[3 * a] - v[3 * b],
            v[3 * a + 1] - v[3 * b + 1],
            v[3 * a + 2] - v[3 * b + 2],
        )
    };

    let max_n = if nc == 4 { 3 } else { 2 };
    let mut out = Vec::new();
    for n in 1..=max_n {
        let vs = &null[..n];
        // linearized betas: unknowns beta_k * beta_l for k <= l
        let combos: Vec<(usize, usize)> =
            (0..n).flat_map(|k| (k..n).map(move |l| (k, l))).collect();
        let mut l_mat = DMatrix::<f64>::zeros(pairs.len(), combos.len());
        for (row, &(a, b)) in pairs.iter().enumerate() {
            for (col, &(kk, ll)) in combos.iter().enumerate() {
                let dot = diff(&vs[kk], a, b).dot(&diff(&vs[ll], a, b));
                l_mat[(row, col)] = if kk == ll { dot } else { 2.0 * dot };
            }
        }
        let rhs = DVector::from_vec(dist2.clone());
        let Ok(rho) = l_mat.svd(true, true).solve(&rhs, 1e-14) else {
            continue;
        };
        let mut beta = vec![0.0; n];
        beta[0] = rho[0].abs().sqrt();
        if beta[0] == 0.0 {
            continue;
        }
        for (col, &(kk, ll)) in combos.iter().enumerate() {
            if kk == 0 && ll > 0 {
                beta[ll] = rho[col] / beta[0];
            }
        }
        refine_betas(&mut beta, vs, &pairs, &dist2, &diff);

        let mut cc = DVector::<f64>::zeros(dim);
        for (b, v) in beta.iter().zip(vs) {
            cc += v * *b;
        }
        let ctrl_cam: Vec<Vector3<f64>> = (0..nc)
            .map(|j| Vector3::new(cc[3 * j], cc[3 * j + 1], cc[3 * j + 2]))
            .collect();
        let mut cam: Vec<Vector3<f64>> = frame
            .alphas
            .iter()
            .map(|a| (0..nc).fold(Vector3::zeros(), |acc, j| acc + ctrl_cam[j] * a[j]))
            .collect();
        let mean_z = cam.iter().map(|p| p.z).sum::<f64>();
        if mean_z < 0.0 {
            for p in &mut cam {
                *p = -*p;
            }
        }
        if let Some(pose) = kabsch(&corr.points, &cam) {
            out.push(pose);
        }
    }
    out
}

fn refine_betas(
    beta: &mut [f64],
    vs: &[DVector<f64>],
    pairs: &[(usize, usize)],
    dist2: &[f64],
    diff: &impl Fn(&DVector<f64>, usize, usize) -> Vector3<f64>,
) {
    let n = beta.len();
    for _ in 0..10 {
        let mut jac = DMatrix::<f64>::zeros(pairs.len(), n);
        let mut res = DVector::<f64>::zeros(pairs.len());
        for (row, &(a, b)) in pairs.iter().enumerate() {
            let dv: Vec<Vector3<f64>> = vs.iter().map(|v| diff(v, a, b)).collect();
            let e = dv
                .iter()
                .zip(beta.iter())
                .fold(Vector3::zeros(), |acc, (d, b)| acc + d * *b);
            res[row] = e.norm_squared() - dist2[row];
            for kk in 0..n {
                jac[(row, kk)] = 2.0 * e.dot(&dv[kk]);
            }
        }
        let Ok(step) = jac.clone().svd(true, true).solve(&res, 1e-14) else {
            return;
        };
        for kk in 0..n {
            beta[kk] -= step[kk];
        }
        if step.norm() < 1e-14 * (1.0 + beta.iter().map(|b| b * b).sum::<f64>().sqrt()) {
            return;
        }
    }
}

/// Gauss-Newton refinement of the reprojection error; at most 10 steps.
fn polish(
    rotation: Rotation<f64>,
    translation: Vector3<f64>,
    corr: &Correspondences2D3D<f64>,
    k: &CameraIntrinsics<f64>,
) -> (Rotation<f64>, Vector3<f64>, f64) {
    let sse = |r: &Rotation<f64>, t: &Vector3<f64>| -> f64 {
        corr.points
            .iter()
            .zip(&corr.pixels)
            .map(|(x, u)| {
                let e = reproj(r.matrix(), t, k, x, u);
                e * e
            })
            .sum()
    };
    let (mut r, mut t) = (rotation, translation);
    let mut cost = sse(&r, &t);
    let mut damping = 1e-9;
    for _ in 0..10 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (x, u) in corr.points.iter().zip(&corr.pixels) {
            let rx = r.apply(x);
            let p = rx + t;
            if p.z <= 0.0 {
                continue;
            }
            let iz = 1.0 / p.z;
            let du = Vector3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz);
            let dv = Vector3::new(0.0, k.fy * iz, -k.fy * p.y * iz * iz);
            let res = Vector2::new(k.fx * p.x * iz + k.cx - u.x, k.fy * p.y * iz + k.cy - u.y);
            // d p / d omega = -[R x]_x for a left perturbation
            let row = |d: Vector3<f64>| {
                let w = rx.cross(&d);
                Vector6::new(w.x, w.y, w.z, d.x, d.y, d.z)
            };
            let ju = row(du);
            let jv = row(dv);
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * res.x + jv * res.y;
        }
        let mut improved = false;
        for _ in 0..6 {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += damping * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                damping *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let dr = match omega.norm() {
                a if a > 0.0 => {
                    Rotation::from_axis_angle(&omega, a).unwrap_or_else(|_| Rotation::identity())
                }
                _ => Rotation::identity(),
            };
            let r_new = dr * r;
            let t_new = t + Vector3::new(step[3], step[4], step[5]);
            let c_new = sse(&r_new, &t_new);
            if c_new <= cost {
                let small = step.norm() < 1e-12;
                r = r_new;
                t = t_new;
                cost = c_new;
                damping = (damping * 0.1).max(1e-12);
                improved = !small;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let mean = reprojection_error(&r, &t, corr, k);
    (r, t, mean)
}

/// Perspective-n-point via EPnP control points, followed by a Gauss-Newton polish.
pub fn epnp(corr: &Correspondences2D3D<f64>, k: &CameraIntrinsics<f64>) -> Result<PnpSolution> {
    let n = corr.len();
    if n < MIN_PNP_POINTS {
        return Err(Error::NotEnoughPoints {
            needed: MIN_PNP_POINTS,
            got: n,
        });
    }
    if corr.points.iter().any(|p| !p.iter().all(|c| c.is_finite()))
        || corr.pixels.iter().any(|p| !p.iter().all(|c| c.is_finite()))
    {
        return Err(Error::InvalidInput("non-finite correspondence".into()));
    }
    let centroid = corr.points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &corr.points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut axes: Vec<(f64, Vector3<f64>)> = (0..3)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
        .collect();
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    let top = axes[0].0;
    if !(top > 0.0) || axes[1].0 <= 1e-12 * top {
        return Err(Error::DegenerateConfiguration(
            "3D points are collinear or coincident".into(),
        ));
    }
    let ratio = axes[2].0 / top;
    let mut frames = Vec::new();
    if ratio > 1e-10 {
        frames.push(control_frame(&corr.points, &centroid, &axes));
    }
    if ratio < 1e-4 {
        frames.push(control_frame(&corr.points, &centroid, &axes[..2]));
    }
    let mut best: Option<(Rotation<f64>, Vector3<f64>, f64)> = None;
    for frame in &frames {
        for (r, t) in epnp_with_frame(corr, k, frame) {
            let e = reprojection_error(&r, &t, corr, k);
            if best.as_ref().is_none_or(|b| e < b.2) {
                best = Some((r, t, e));
            }
        }
    }
    let (r, t, _) =
        best.ok_or_else(|| Error::DegenerateConfiguration("no EPnP candidate".into()))?;
    let (r, t, residual_px) = polish(r, t, corr, k);
    if !residual_px.is_finite() {
        return Err(Error::DegenerateConfiguration(
            "solution places points behind the camera".into(),
        ));
    }
    Ok(PnpSolution {
        rotation: r,
        translation: t,
        residual_px,
    })
}

fn inlier_mask(
    r: &Rotation<f64>,
    t: &Vector3<f64>,
    corr: &Correspondences2D3D<f64>,
    k: &CameraIntrinsics<f64>,
    threshold: f64,
) -> Vec<bool> {
    corr.points
        .iter()
        .zip(&corr.pixels)
        .map(|(x, u)| reproj(r.matrix(), t, k, x, u) < threshold)
        .collect()
}

/// RANSAC over 6-point EPnP samples. The model with the most inliers wins;
/// ties go to the earliest iteration. The final pose is refit on its inliers.
pub fn pnp_ransac(
    corr: &Correspondences2D3D<f64>,
    k: &CameraIntrinsics<f64>,
    params: &RansacParams,
) -> Result<RansacSolution> {
    params.validate()?;
    let n = corr.len();
    if n < MIN_PNP_POINTS {
        return Err(Error::NotEnoughPoints {
            needed: MIN_PNP_POINTS,
            got: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..params.iterations {
        let sample = rand::seq::index::sample(&mut rng, n, MIN_PNP_POINTS).into_vec();
        let Ok(sol) = epnp(&corr.subset(&sample), k) else {
            continue;
        };
        let mask = inlier_mask(
            &sol.rotation,
            &sol.translation,
            corr,
            k,
            params.inlier_threshold,
        );
        let count = mask.iter().filter(|&&b| b).count();
        if best.as_ref().is_none_or(|b| count > b.0) {
            best = Some((count, mask));
        }
    }
    let best_count = best.as_ref().map_or(0, |b| b.0);
    let Some((count, mask)) = best.filter(|b| b.0 >= MIN_PNP_POINTS) else {
        return Err(Error::NoConsensus {
            needed: MIN_PNP_POINTS,
            best: best_count,
        });
    };
    log::debug!("ransac: best model has {count}/{n} inliers");
    let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    let inliers = corr.subset(&idx);
    let refit = epnp(&inliers, k)?;
    let final_mask = inlier_mask(
        &refit.rotation,
        &refit.translation,
        corr,
        k,
        params.inlier_threshold,
    );
    let (mask, inliers) = if final_mask.iter().filter(|&&b| b).count() >= MIN_PNP_POINTS {
        let idx: Vec<usize> = (0..n).filter(|&i| final_mask[i]).collect();
        (final_mask, corr.subset(&idx))
    } else {
        (mask, inliers)
    };
    Ok(RansacSolution {
        rotation: refit.rotation,
        translation: refit.translation,
        residual_px: reprojection_error(&refit.rotation, &refit.translation, &inliers, k),
        inliers: mask,
    })
}

/// Extracts the map's correspondences (uniform stride down to at most
/// [`MAX_MAP_CORRESPONDENCES`]) and runs [`pnp_ransac`].
///
/// Map coordinates are in NOCS units, so the recovered translation is the
/// metric translation divided by the object's scale.
pub fn solve_pose_from_map(
    map: &CoordinateMap<f64>,
    k: &CameraIntrinsics<f64>,
    params: &RansacParams,
) -> Result<RansacSolution> {
    let (pixels, points) = map_points(map);
    let n = pixels.len();
    if n < MIN_PNP_POINTS {
        return Err(Error::NotEnoughPoints {
            needed: MIN_PNP_POINTS,
            got: n,
        });
    }
    let stride = n.div_ceil(MAX_MAP_CORRESPONDENCES);
    let corr = Correspondences2D3D {
        pixels: pixels.into_iter().step_by(stride).collect(),
        points: points.into_iter().step_by(stride).collect(),
    };
    pnp_ransac(&corr, k, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(591.0125, 590.16775, 322.525, 244.11084).unwrap()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )
            })
            .collect()
    }

    fn project_all(r: &Rotation<f64>, t: &Vector3<f64>, pts: &[Vector3<f64>]) -> Vec<Vector2<f64>> {
        pts.iter()
            .map(|x| k().project(&(r.apply(x) + t)).unwrap())
            .collect()
    }

    fn scene(seed: u64, n: usize) -> (Rotation<f64>, Vector3<f64>, Correspondences2D3D<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = Rotation::random(&mut rng);
        let t = Vector3::new(
            rng.random::<f64>() * 0.4 - 0.2,
            rng.random::<f64>() * 0.4 - 0.2,
            2.0 + rng.random::<f64>(),
        );
        let pts = random_points(&mut rng, n);
        let px = project_all(&r, &t, &pts);
        (r, t, Correspondences2D3D::new(px, pts).unwrap())
    }

    #[test]
    fn umeyama_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_points(&mut rng, 10);
        let s = umeyama(&p, &p).unwrap();
        assert!((s.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!(s.translation.norm() < 1e-12);
        assert!((s.scale - 1.0).abs() < 1e-12);
    }

    #[test]
    fn umeyama_recovers_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_points(&mut rng, 10);
        let rz = Rotation::about_z(std::f64::consts::FRAC_PI_2);
        let t = Vector3::new(1.0, 0.0, 0.0);
        let dst: Vec<_> = src.iter().map(|p| rz.apply(p) * 2.0 + t).collect();
        let s = umeyama(&src, &dst).unwrap();
        assert!((s.rotation.matrix() - rz.matrix()).norm() < 1e-10);
        assert!((s.translation - t).norm() < 1e-10);
        assert!((s.scale - 2.0).abs() < 1e-10);
    }

    #[test]
    fn umeyama_rejects_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let src = random_points(&mut rng, 12);
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let s = umeyama(&src, &dst).unwrap();
        assert!((s.rotation.matrix().determinant() - 1.0).abs() < 1e-12);
        let res: f64 = src
            .iter()
            .zip(&dst)
            .map(|(a, b)| (s.apply(a) - b).norm_squared())
            .sum();
        assert!(res > 1e-3);
    }

    #[test]
    fn umeyama_collinear_is_degenerate() {
        let src: Vec<_> = (0..5)
            .map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        assert!(matches!(
            umeyama(&src, &src),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn epnp_noiseless_recovery() {
        for seed in 0..20 {
            let (r, t, corr) = scene(seed, 20);
            let sol = epnp(&corr, &k()).unwrap();
            let rot_err = sol.rotation.angle_to(&r).to_degrees();
            assert!(rot_err < 1e-6, "seed {seed}: {rot_err}");
            assert!((sol.translation - t).norm() < 1e-8, "seed {seed}");
            assert!(sol.residual_px <= reprojection_error(&r, &t, &corr, &k()) + 1e-9);
        }
    }

    #[test]
    fn epnp_planar_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let r = Rotation::about_x(0.6);
        let t = Vector3::new(0.1, 0.0, 2.5);
        let pts: Vec<_> = (0..15)
            .map(|_| Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, 0.0))
            .collect();
        let corr = Correspondences2D3D::new(project_all(&r, &t, &pts), pts).unwrap();
        let sol = epnp(&corr, &k()).unwrap();
        assert!(sol.rotation.angle_to(&r).to_degrees() < 1e-6);
        assert!((sol.translation - t).norm() < 1e-8);
    }

    #[test]
    fn epnp_with_pixel_noise() {
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..20 {
            let (r, _, mut corr) = scene(100 + seed, 20);
            for p in &mut corr.pixels {
                p.x += noise.sample(&mut rng);
                p.y += noise.sample(&mut rng);
            }
            let sol = epnp(&corr, &k()).unwrap();
            assert!(sol.rotation.angle_to(&r).to_degrees() < 2.0);
        }
    }

    #[test]
    fn epnp_errors() {
        let (_, _, corr) = scene(5, 5);
        assert!(matches!(
            epnp(&corr, &k()),
            Err(Error::NotEnoughPoints { needed: 6, got: 5 })
        ));
        let pts: Vec<_> = (0..8)
            .map(|i| Vector3::new(0.0, 0.0, i as f64 * 0.1))
            .collect();
        let px = vec![Vector2::new(k().cx, k().cy); 8];
        let corr = Correspondences2D3D::new(px, pts).unwrap();
        assert!(matches!(
            epnp(&corr, &k()),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn ransac_noiseless_matches_epnp() {
        let (_, _, corr) = scene(9, 40);
        let direct = epnp(&corr, &k()).unwrap();
        let sol = pnp_ransac(&corr, &k(), &RansacParams::default()).unwrap();
        assert!(sol.inliers.iter().all(|&b| b));
        assert!(sol.rotation.angle_to(&direct.rotation) < 1e-9);
        assert!((sol.translation - direct.translation).norm() < 1e-9);
    }

    #[test]
    fn ransac_rejects_outliers() {
        let (r, _, mut corr) = scene(11, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let outliers: Vec<usize> = rand::seq::index::sample(&mut rng, 100, 30).into_vec();
        for &i in &outliers {
            corr.pixels[i] = Vector2::new(rng.random::<f64>() * 640.0, rng.random::<f64>() * 480.0);
        }
        let sol = pnp_ransac(
            &corr,
            &k(),
            &RansacParams {
                seed: 4,
                ..RansacParams::default()
            },
        )
        .unwrap();
        assert!(sol.rotation.angle_to(&r).to_degrees() < 1.0);
        for &i in &outliers {
            assert!(!sol.inliers[i], "outlier {i} accepted");
        }
    }

    #[test]
    fn single_iteration_never_silently_wrong() {
        let (r, _, mut corr) = scene(13, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for p in corr.pixels.iter_mut().take(20) {
            *p = Vector2::new(rng.random::<f64>() * 640.0, rng.random::<f64>() * 480.0);
        }
        let params = |seed| RansacParams {
            iterations: 1,
            seed,
            ..RansacParams::default()
        };
        for seed in 0..30 {
            match pnp_ransac(&corr, &k(), &params(seed)) {
                Err(Error::NoConsensus { .. }) | Err(Error::DegenerateConfiguration(_)) => {}
                Err(e) => panic!("unexpected {e}"),
                Ok(sol) => {
                    let all = sol.inliers.iter().all(|&b| b);
                    assert!(!all || sol.rotation.angle_to(&r).to_degrees() < 1.0);
                }
            }
        }
    }

    #[test]
    fn solve_pose_from_map_rejects_sparse_map() {
        let mut map = CoordinateMap::<f64>::empty(16, 16);
        for i in 0..5 {
            map.set(i, i, Vector3::repeat(0.5));
        }
        assert!(matches!(
            solve_pose_from_map(&map, &k(), &RansacParams::default()),
            Err(Error::NotEnoughPoints { needed: 6, got: 5 })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn umeyama_is_similarity_equivariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let src = random_points(&mut rng, 8);
            let r = Rotation::random(&mut rng);
            let t = Vector3::new(rng.random(), rng.random(), rng.random());
            let s = 0.5 + rng.random::<f64>();
            let dst: Vec<_> = src.iter().map(|p| r.apply(p) * s + t).collect();
            let base = umeyama(&src, &dst).unwrap();
            // global pre-transform applied to both clouds
            let g = Rotation::random(&mut rng);
            let gt = Vector3::new(rng.random(), rng.random(), rng.random());
            let gs = 0.3 + rng.random::<f64>();
            let tf = |p: &Vector3<f64>| g.apply(p) * gs + gt;
            let src2: Vec<_> = src.iter().map(tf).collect();
            let dst2: Vec<_> = dst.iter().map(tf).collect();
            let moved = umeyama(&src2, &dst2).unwrap();
            // conjugate: T o S o T^-1
            for p in &src {
                let expect = tf(&base.apply(p));
                prop_assert!((moved.apply(&tf(p)) - expect).norm() < 1e-9);
            }
            prop_assert!((moved.scale - base.scale).abs() < 1e-9);
        }

        #[test]
        fn ransac_is_deterministic(seed in 0u64..1000) {
            let (_, _, mut corr) = scene(seed, 30);
            corr.pixels[0] += Vector2::new(40.0, -25.0);
            let p = RansacParams { iterations: 16, seed, ..RansacParams::default() };
            let a = pnp_ransac(&corr, &k(), &p).unwrap();
            let b = pnp_ransac(&corr, &k(), &p).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
