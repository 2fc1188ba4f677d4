//! Finite-difference verification of every analytic gradient.
//!
//! Loss terms are checked at random points sampled away from their L1 kinks
//! (every absolute-value argument at least `KINK_MARGIN` from zero, and for
//! symmetric point matching a stable choice of target).

use crate::coordmap::CoordinateMap;
use crate::dcae::{DeformConv2d, Tensor4};
use crate::error::Result;
use crate::geometry::Rotation;
use crate::losses::{
    l_map_raw, l_map_raw_grad, l_pm, l_pm_grad, l_rot, l_rot_grad, l_size, l_size_grad, l_trans,
    l_trans_grad, total_loss, KinkPolicy, LossInputs, PoseLossWeights,
};
use crate::symmetry::{Category, SymmetryGroup, SymmetryTable};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

const KINK_MARGIN: f64 = 1e-3;

type VectorLoss = fn(&Vector3<f64>, &Vector3<f64>) -> f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Random points per loss term.
    pub points: usize,
    /// Random layer configurations for the deformable convolution.
    pub deform_configs: usize,
    pub seed: u64,
    /// Central-difference step for the loss terms.
    pub h: f64,
    pub deform_h: f64,
    pub tolerance: f64,
    pub deform_tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            points: 100,
            deform_configs: 8,
            seed: 0,
            h: 1e-6,
            deform_h: 1e-5,
            tolerance: 1e-4,
            deform_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub entries: Vec<GradcheckEntry>,
}

/// `max|a − n| / max(max|a|, max|n|, 1e-6)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-6, f64::max);
    diff / scale
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let a = f(&p);
            p[i] = x[i] - h;
            let b = f(&p);
            p[i] = x[i];
            (a - b) / (2.0 * h)
        })
        .collect()
}

/// Offset with magnitude in `[KINK_MARGIN·10, 1)` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(KINK_MARGIN * 10.0..1.0);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

fn vec3(v: &[f64]) -> Vector3<f64> {
    Vector3::new(v[0], v[1], v[2])
}

fn mat3(v: &[f64]) -> Matrix3<f64> {
    Matrix3::from_column_slice(v)
}

fn flatten(v: &[Vector3<f64>]) -> Vec<f64> {
    v.iter().flat_map(|p| p.iter().copied()).collect()
}

fn unflatten(v: &[f64]) -> Vec<Vector3<f64>> {
    v.chunks_exact(3).map(vec3).collect()
}

struct Tally {
    name: &'static str,
    tolerance: f64,
    points: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            tolerance,
            points: 0,
            worst: 0.0,
        }
    }

    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.points += 1;
        self.worst = self.worst.max(relative_error(analytic, numeric));
    }

    fn finish(self) -> GradcheckEntry {
        GradcheckEntry {
            name: self.name.to_string(),
            points: self.points,
            max_rel_error: self.worst,
            tolerance: self.tolerance,
            passed: self.points > 0 && self.worst < self.tolerance,
        }
    }
}

/// Prediction matrix and points for which every `(R − T)·x` component and the
/// target selection margin are bounded away from zero.
fn pm_point(
    rng: &mut ChaCha8Rng,
    r_gt: &Rotation<f64>,
    group: &SymmetryGroup<f64>,
    n: usize,
) -> (Matrix3<f64>, Vec<Vector3<f64>>) {
    loop {
        let r =
            Rotation::random(rng).matrix() + Matrix3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        let pts: Vec<_> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
            .collect();
        let mut scores: Vec<f64> = group
            .elements
            .iter()
            .map(|g| r.component_mul(&(r_gt.matrix() * g.matrix())).sum())
            .collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if scores.len() > 1 && scores[0] - scores[1] < KINK_MARGIN {
            continue;
        }
        let i = crate::symmetry::closest_index_for_matrix(&r, r_gt, group);
        let d = r - r_gt.matrix() * group.elements[i].matrix();
        if pts
            .iter()
            .all(|x| (d * x).iter().all(|v| v.abs() > KINK_MARGIN))
        {
            return (r, pts);
        }
    }
}

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> CoordinateMap<f64> {
    let mask: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < 0.6).collect();
    let coords = mask
        .iter()
        .map(|&m| {
            if m {
                Vector3::from_fn(|_, _| rng.random_range(0.25..0.75))
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    CoordinateMap::from_parts(w, h, coords, mask).expect("consistent sizes")
}

/// Shifts masked coordinates by at most 0.2 per channel, staying inside `[0, 1]`.
fn perturbed(rng: &mut ChaCha8Rng, gt: &CoordinateMap<f64>) -> CoordinateMap<f64> {
    let coords = gt
        .coords()
        .iter()
        .zip(gt.mask())
        .map(|(c, &m)| {
            if m {
                c + Vector3::from_fn(|_, _| away_from_zero(rng) * 0.2)
            } else {
                *c
            }
        })
        .collect();
    CoordinateMap::from_parts(gt.width(), gt.height(), coords, gt.mask().to_vec())
        .expect("consistent sizes")
}

/// Deformable layer with random weights and predictors.
pub fn random_deform_layer(
    cin: usize,
    cout: usize,
    stride: usize,
    groups: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DeformConv2d<f64>> {
    let mut l = DeformConv2d::zeros(cin, cout, stride, groups)?;
    let mut fill = |t: &mut [f64], s: f64| {
        t.iter_mut()
            .for_each(|v| *v = (rng.random::<f64>() * 2.0 - 1.0) * s)
    };
    fill(l.weight.data_mut(), 1.0);
    fill(&mut l.bias, 0.5);
    fill(l.offset.weight.data_mut(), 0.3);
    fill(&mut l.offset.bias, 0.5);
    fill(l.mask.weight.data_mut(), 0.5);
    fill(&mut l.mask.bias, 0.5);
    Ok(l)
}

/// Max relative error of the deformable layer's input gradient of `Σ g·y`.
pub fn deform_input_check(
    layer: &DeformConv2d<f64>,
    x: &Tensor4<f64>,
    g: &Tensor4<f64>,
    h: f64,
) -> Result<f64> {
    let ana = layer.backward(x, g)?.input;
    let f = |v: &[f64]| {
        let t = Tensor4::from_vec(x.dims(), v.to_vec()).expect("same dims");
        let y = layer.forward(&t).expect("validated layer");
        y.data()
            .iter()
            .zip(g.data())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    };
    let num = central_difference(f, x.data(), h);
    Ok(relative_error(ana.data(), &num))
}

/// Runs the full suite.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = KinkPolicy::Strict;
    let (h, tol) = (cfg.h, cfg.tolerance);
    let trivial = SymmetryGroup::trivial();
    let bottle = SymmetryTable::default().group::<f64>(Category::Bottle)?;

    let mut trans = Tally::new("l_trans", tol);
    let mut size = Tally::new("l_size", tol);
    let mut rot = Tally::new("l_rot", tol);
    let mut pm = Tally::new("l_pm", tol);
    let mut pm_sym = Tally::new("l_pm_symmetric", tol);
    let mut map = Tally::new("l_map", tol);
    let mut total = Tally::new("total_loss", tol);

    for _ in 0..cfg.points {
        for (tally, is_size) in [(&mut trans, false), (&mut size, true)] {
            let gt = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let x = gt + Vector3::from_fn(|_, _| away_from_zero(&mut rng));
            let (f, g): (VectorLoss, _) = if is_size {
                (l_size, l_size_grad(&x, &gt, p)?)
            } else {
                (l_trans, l_trans_grad(&x, &gt, p)?)
            };
            tally.add(
                g.as_slice(),
                &central_difference(|v| f(&vec3(v), &gt), x.as_slice(), h),
            );
        }

        let r_gt = Rotation::random(&mut rng);
        let x = r_gt.matrix() + Matrix3::from_fn(|_, _| away_from_zero(&mut rng));
        let g = l_rot_grad(&x, r_gt.matrix(), p)?;
        rot.add(
            g.as_slice(),
            &central_difference(|v| l_rot(&mat3(v), r_gt.matrix()), x.as_slice(), h),
        );

        for (tally, group) in [(&mut pm, &trivial), (&mut pm_sym, &bottle)] {
            let r_gt = Rotation::random(&mut rng);
            let (x, pts) = pm_point(&mut rng, &r_gt, group, 10);
            let g = l_pm_grad(&x, &r_gt, &pts, group, p)?;
            let num = central_difference(
                |v| l_pm(&mat3(v), &r_gt, &pts, group).expect("points"),
                x.as_slice(),
                h,
            );
            tally.add(g.as_slice(), &num);
        }

        let gt = random_map(&mut rng, 8, 8);
        let pred = perturbed(&mut rng, &gt);
        let g = l_map_raw_grad(pred.coords(), gt.coords(), gt.mask(), p)?;
        let num = central_difference(
            |v| l_map_raw(&unflatten(v), gt.coords(), gt.mask()).expect("sizes"),
            &flatten(pred.coords()),
            h,
        );
        map.add(&flatten(&g), &num);

        // Overall loss, differentiated with respect to every prediction at once.
        let weights = PoseLossWeights {
            w_rot: rng.random_range(0.1..2.0),
            w_pm: rng.random_range(0.1..2.0),
            w_trans: rng.random_range(0.1..2.0),
            w_size: rng.random_range(0.1..2.0),
        };
        let (alpha, beta) = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
        let r_gt = Rotation::random(&mut rng);
        let (r_pred, pts) = loop {
            let (r, pts) = pm_point(&mut rng, &r_gt, &bottle, 6);
            if (r - r_gt.matrix()).iter().all(|v| v.abs() > KINK_MARGIN) {
                break (r, pts);
            }
        };
        let t_gt = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let s_gt = Vector3::from_fn(|_, _| rng.random_range(0.1..1.0));
        let t_pred = t_gt + Vector3::from_fn(|_, _| away_from_zero(&mut rng));
        let s_pred = s_gt + Vector3::from_fn(|_, _| away_from_zero(&mut rng));
        let (nocs_gt, ivfc_gt) = (random_map(&mut rng, 4, 4), random_map(&mut rng, 4, 4));
        let (nocs_pred, ivfc_pred) = (perturbed(&mut rng, &nocs_gt), perturbed(&mut rng, &ivfc_gt));
        // Only masked pixels are free variables; the rest must stay zero.
        let masked = |c: &[Vector3<f64>], m: &[bool]| -> Vec<f64> {
            c.iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .flat_map(|(p, _)| p.iter().copied())
                .collect()
        };
        let scatter = |v: &[f64], m: &[bool]| -> Vec<Vector3<f64>> {
            let mut it = v.chunks_exact(3);
            m.iter()
                .map(|&k| {
                    if k {
                        vec3(it.next().expect("masked count"))
                    } else {
                        Vector3::zeros()
                    }
                })
                .collect()
        };
        let n_nocs = nocs_gt.mask().iter().filter(|&&k| k).count() * 3;
        let pack = |r: &Matrix3<f64>,
                    t: &Vector3<f64>,
                    s: &Vector3<f64>,
                    a: &[Vector3<f64>],
                    b: &[Vector3<f64>]| {
            let mut v = r.as_slice().to_vec();
            v.extend_from_slice(t.as_slice());
            v.extend_from_slice(s.as_slice());
            v.extend(masked(a, nocs_gt.mask()));
            v.extend(masked(b, ivfc_gt.mask()));
            v
        };
        let x0 = pack(
            &r_pred,
            &t_pred,
            &s_pred,
            nocs_pred.coords(),
            ivfc_pred.coords(),
        );
        let ga = {
            let gr = l_rot_grad(&r_pred, r_gt.matrix(), p)? * weights.w_rot
                + l_pm_grad(&r_pred, &r_gt, &pts, &bottle, p)? * weights.w_pm;
            let gt_ = l_trans_grad(&t_pred, &t_gt, p)? * weights.w_trans;
            let gs = l_size_grad(&s_pred, &s_gt, p)? * weights.w_size;
            let gn: Vec<_> =
                l_map_raw_grad(nocs_pred.coords(), nocs_gt.coords(), nocs_gt.mask(), p)?
                    .into_iter()
                    .map(|v| v * alpha)
                    .collect();
            let gi: Vec<_> =
                l_map_raw_grad(ivfc_pred.coords(), ivfc_gt.coords(), ivfc_gt.mask(), p)?
                    .into_iter()
                    .map(|v| v * beta)
                    .collect();
            pack(&gr, &gt_, &gs, &gn, &gi)
        };
        let f = |v: &[f64]| {
            let (w, hgt) = (nocs_gt.width(), nocs_gt.height());
            let nocs = CoordinateMap::from_parts(
                w,
                hgt,
                scatter(&v[15..15 + n_nocs], nocs_gt.mask()),
                nocs_gt.mask().to_vec(),
            )
            .expect("in range");
            let ivfc = CoordinateMap::from_parts(
                w,
                hgt,
                scatter(&v[15 + n_nocs..], ivfc_gt.mask()),
                ivfc_gt.mask().to_vec(),
            )
            .expect("in range");
            let (r, t, s) = (mat3(&v[..9]), vec3(&v[9..12]), vec3(&v[12..15]));
            let inputs = LossInputs {
                r_pred: &r,
                t_pred: &t,
                s_pred: &s,
                nocs_pred: &nocs,
                ivfc_pred: &ivfc,
                r_gt: &r_gt,
                t_gt: &t_gt,
                s_gt: &s_gt,
                nocs_gt: &nocs_gt,
                ivfc_gt: &ivfc_gt,
                model_points: &pts,
                group: &bottle,
            };
            total_loss(&inputs, &weights, alpha, beta)
                .expect("valid inputs")
                .total
        };
        total.add(&ga, &central_difference(f, &x0, h));
    }

    let mut deform = Tally::new("deform_conv_input", cfg.deform_tolerance);
    let combos = [(1, 1), (2, 2), (1, 4), (2, 4), (2, 1), (1, 2)];
    for i in 0..cfg.deform_configs {
        let (stride, groups) = combos[i % combos.len()];
        let layer = random_deform_layer(4, 3, stride, groups, &mut rng)?;
        let x = Tensor4::from_fn([2, 4, 8, 8], |_| rng.random::<f64>() * 2.0 - 1.0);
        let g = Tensor4::from_fn(layer.output_dims(x.dims()), |_| {
            rng.random::<f64>() * 2.0 - 1.0
        });
        deform.points += 1;
        deform.worst = deform
            .worst
            .max(deform_input_check(&layer, &x, &g, cfg.deform_h)?);
    }

    let entries: Vec<_> = [trans, size, rot, pm, pm_sym, map, total, deform]
        .into_iter()
        .map(Tally::finish)
        .collect();
    Ok(GradcheckReport {
        passed: entries.iter().all(|e| e.passed),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_definition() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-15);
        assert_eq!(relative_error(&[0.0], &[1e-9]), 1e-9 / 1e-6);
    }

    #[test]
    fn central_difference_of_quadratic() {
        let g = central_difference(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 5.0], 1e-4);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn small_suite_passes() {
        let r = run_gradcheck(&GradcheckConfig {
            points: 10,
            deform_configs: 2,
            ..GradcheckConfig::default()
        })
        .unwrap();
        assert_eq!(r.entries.len(), 8);
        for e in &r.entries {
            assert!(e.passed, "{e:?}");
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = [0.3, -0.2, 0.5];
        let num = central_difference(|v| l_trans(&vec3(v), &Vector3::zeros()), &x, 1e-6);
        assert!(relative_error(&[1.0, 1.0, 1.0], &num) > 0.5);
    }
}
