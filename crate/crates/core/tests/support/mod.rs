//! Independent oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use coordpose_core::coordmap::CoordinateMap;
use coordpose_core::dcae::Tensor4;
use coordpose_core::geometry::{Pose9, Rotation};
use coordpose_core::metrics::{
    niou, DetectionRecord, GtObject, ImageEval, MatchCriterion, OrientedBox,
};
use coordpose_core::symmetry::{Category, SymmetryGroup, SymmetryTable};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet, HashSet};

/// Uniform point inside an oriented box.
fn sample_in(b: &OrientedBox<f64>, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let u = Vector3::from_fn(|i, _| (rng.random::<f64>() - 0.5) * b.extents[i]);
    b.rotation.apply(&u) + b.center
}

/// Monte-Carlo IoU: half the samples are drawn in each box, and the
/// intersection volume is the average of the two estimates.
pub fn monte_carlo_iou(
    a: &OrientedBox<f64>,
    b: &OrientedBox<f64>,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = samples / 2;
    let in_b = (0..half)
        .filter(|_| b.contains(&sample_in(a, &mut rng)))
        .count();
    let in_a = (0..half)
        .filter(|_| a.contains(&sample_in(b, &mut rng)))
        .count();
    let (va, vb) = (a.volume(), b.volume());
    let inter = 0.5 * (va * in_b as f64 / half as f64 + vb * in_a as f64 / half as f64);
    inter / (va + vb - inter)
}

/// Every triangle whose plane has all other points strictly on one side.
pub fn hull_faces(p: &[Vector3<f64>]) -> BTreeSet<[usize; 3]> {
    let n = p.len();
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let nrm = (p[j] - p[i]).cross(&(p[k] - p[i]));
                let (mut pos, mut neg) = (false, false);
                for (m, q) in p.iter().enumerate() {
                    if m != i && m != j && m != k {
                        let s = nrm.dot(&(q - p[i]));
                        pos |= s > 0.0;
                        neg |= s < 0.0;
                    }
                }
                if pos != neg {
                    out.insert([i, j, k]);
                }
            }
        }
    }
    out
}

pub fn sorted_faces(faces: &[[usize; 3]]) -> BTreeSet<[usize; 3]> {
    faces
        .iter()
        .map(|f| {
            let mut s = *f;
            s.sort_unstable();
            s
        })
        .collect()
}

/// Direct 3×3 cross-correlation with zero padding 1.
pub fn conv3x3(x: &Tensor4<f64>, w: &Tensor4<f64>, bias: &[f64], stride: usize) -> Tensor4<f64> {
    let [n, cin, h, wd] = x.dims();
    let cout = w.dims()[0];
    let (ho, wo) = ((h + 2 - 3) / stride + 1, (wd + 2 - 3) / stride + 1);
    Tensor4::from_fn([n, cout, ho, wo], |[b, o, oy, ox]| {
        let mut acc = bias[o];
        for c in 0..cin {
            for ky in 0..3 {
                for kx in 0..3 {
                    let (y, xx) = (
                        (oy * stride + ky) as isize - 1,
                        (ox * stride + kx) as isize - 1,
                    );
                    if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                        acc += w.get(o, c, ky, kx) * x.get(b, c, y as usize, xx as usize);
                    }
                }
            }
        }
        acc
    })
}

/// Outcomes of the first `k` ranked detections, matched from scratch.
fn prefix_outcomes(
    images: &[ImageEval<f64>],
    ranked: &[(usize, usize)],
    k: usize,
    category: Category,
    criterion: MatchCriterion,
    group: &SymmetryGroup<f64>,
) -> Vec<bool> {
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    let mut out = Vec::new();
    for &(ii, di) in &ranked[..k] {
        let det = &images[ii].detections[di];
        let candidates: Vec<(usize, f64)> = images[ii]
            .gt
            .iter()
            .enumerate()
            .filter(|(gi, g)| g.category == category && !used.contains(&(ii, *gi)))
            .map(|(gi, g)| (gi, niou(&det.pose, &g.pose, group)))
            .collect();
        // First candidate with the maximal NIoU.
        let best = candidates
            .iter()
            .fold(None::<(usize, f64)>, |acc, &(gi, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((gi, v)),
            });
        let hit = best
            .is_some_and(|(gi, v)| criterion.accepts(&det.pose, &images[ii].gt[gi].pose, group, v));
        if hit {
            used.insert((ii, best.unwrap().0));
        }
        out.push(hit);
    }
    out
}

/// Average precision by explicit precision/recall enumeration: for every
/// rank the matching is redone from scratch, and each recall step takes the
/// best precision at that rank or below.
pub fn brute_force_ap(
    images: &[ImageEval<f64>],
    category: Category,
    criterion: MatchCriterion,
    group: &SymmetryGroup<f64>,
) -> Option<f64> {
    let n_gt = images
        .iter()
        .flat_map(|i| &i.gt)
        .filter(|g| g.category == category)
        .count();
    if n_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(usize, usize, f64)> = Vec::new();
    for (ii, img) in images.iter().enumerate() {
        for (di, d) in img.detections.iter().enumerate() {
            if d.category == category {
                ranked.push((ii, di, d.score));
            }
        }
    }
    // Insertion sort by descending score keeps ties in input order.
    for i in 1..ranked.len() {
        let mut j = i;
        while j > 0 && ranked[j - 1].2 < ranked[j].2 {
            ranked.swap(j - 1, j);
            j -= 1;
        }
    }
    let order: Vec<(usize, usize)> = ranked.iter().map(|&(a, b, _)| (a, b)).collect();
    let n = order.len();
    let mut tp = vec![0usize; n + 1];
    let mut hit = vec![false; n + 1];
    for k in 1..=n {
        let o = prefix_outcomes(images, &order, k, category, criterion, group);
        tp[k] = o.iter().filter(|&&h| h).count();
        hit[k] = o[k - 1];
    }
    let precision = |k: usize| tp[k] as f64 / k as f64;
    let mut sum = 0.0;
    for (k, _) in hit.iter().enumerate().skip(1).filter(|(_, &h)| h) {
        sum += (k..=n).map(precision).fold(f64::MIN, f64::max);
    }
    Some(sum / n_gt as f64)
}

/// Mean of per-category brute-force AP, in percent.
pub fn brute_force_map(
    images: &[ImageEval<f64>],
    criterion: MatchCriterion,
    table: &SymmetryTable,
) -> (BTreeMap<Category, f64>, f64) {
    let cats: BTreeSet<Category> = images
        .iter()
        .flat_map(|i| i.gt.iter().map(|g| g.category))
        .collect();
    let mut per = BTreeMap::new();
    for c in cats {
        let g = table.group::<f64>(c).unwrap();
        if let Some(ap) = brute_force_ap(images, c, criterion, &g) {
            per.insert(c, ap * 100.0);
        }
    }
    let mean = if per.is_empty() {
        0.0
    } else {
        per.values().sum::<f64>() / per.len() as f64
    };
    (per, mean)
}

const CATS: [Category; 3] = [Category::Can, Category::Mug, Category::Laptop];

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose9<f64> {
    let s = Vector3::from_fn(|_, _| rng.random_range(0.05..0.3));
    let t = Vector3::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        rng.random_range(0.5..1.5),
    );
    Pose9::new(Rotation::random(rng), t, s).unwrap()
}

/// Small perturbation so detections land on both sides of every threshold.
fn jitter(p: &Pose9<f64>, rng: &mut ChaCha8Rng) -> Pose9<f64> {
    let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let r = Rotation::from_axis_angle(&axis, rng.random_range(0.0..0.35))
        .unwrap_or_else(|_| Rotation::identity());
    let d = p.diagonal();
    let t = p.translation + Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4) * d);
    let s = p.size.map(|v| v * rng.random_range(0.7..1.3));
    Pose9::new(r * p.rotation, t, s).unwrap()
}

/// Up to three images and at most five detections overall.
pub fn toy_case(seed: u64) -> Vec<ImageEval<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_img = rng.random_range(1..=3);
    let mut budget = rng.random_range(0..=5usize);
    (0..n_img)
        .map(|i| {
            let gt: Vec<GtObject<f64>> = (0..rng.random_range(0..=3))
                .map(|_| GtObject {
                    category: CATS[rng.random_range(0..CATS.len())],
                    pose: random_pose(&mut rng),
                })
                .collect();
            let n_det = if i + 1 == n_img {
                budget
            } else {
                rng.random_range(0..=budget)
            };
            budget -= n_det;
            let detections = (0..n_det)
                .map(|_| {
                    let (category, pose) = match gt.get(rng.random_range(0..gt.len() + 1)) {
                        Some(g) if rng.random::<f64>() < 0.8 => {
                            (g.category, jitter(&g.pose, &mut rng))
                        }
                        _ => (CATS[rng.random_range(0..CATS.len())], random_pose(&mut rng)),
                    };
                    // Coarse scores create ties.
                    let score = [0.3, 0.6, 0.9][rng.random_range(0..3)];
                    DetectionRecord {
                        category,
                        score,
                        pose,
                    }
                })
                .collect();
            ImageEval {
                key: format!("img{i}"),
                detections,
                gt,
            }
        })
        .collect()
}

/// Mean over the common mask of the per-pixel, per-channel variance across
/// maps, in the pairwise form `Σ_{i<j} |x_i − x_j|² / k²` so that identical
/// maps give exactly zero.
pub fn mean_variance(maps: &[CoordinateMap<f64>]) -> (f64, usize) {
    let n = maps[0].coords().len();
    let common: Vec<usize> = (0..n)
        .filter(|&i| maps.iter().all(|m| m.mask()[i]))
        .collect();
    let k = maps.len() as f64;
    let total: f64 = common
        .iter()
        .map(|&i| {
            let mut acc = 0.0;
            for a in 0..maps.len() {
                for b in a + 1..maps.len() {
                    acc += (maps[a].coords()[i] - maps[b].coords()[i]).norm_squared();
                }
            }
            acc / (k * k) / 3.0
        })
        .sum();
    (total / common.len().max(1) as f64, common.len())
}

/// Evenly spread unit-sphere points on a golden-angle spiral.
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let a = golden * i as f64;
            Vector3::new(r * a.cos(), y, r * a.sin())
        })
        .collect()
}
