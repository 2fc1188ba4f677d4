//! Acceptance suite: one pass/fail line per criterion. Exits non-zero when
//! any criterion fails.

mod support;

use coordpose_core::consensus::{
    alpha_shape, alpha_shape_indexed, is_watertight, laplacian_smooth,
};
use coordpose_core::coordmap::CoordinateMap;
use coordpose_core::dataset::{
    derive_seed, evaluation_images, generate_synthetic_scene, groundtruth_as_predictions,
    ConsensusLibrary, InstanceLibrary, SceneRecord, SynthConfig,
};
use coordpose_core::dcae::{dcae_forward, DcaeConfig, DcaeWeights, DeformConv2d, Tensor4};
use coordpose_core::geometry::{CameraIntrinsics, PointCloud, Pose9, Rotation};
use coordpose_core::gradcheck::{run_gradcheck, GradcheckConfig};
use coordpose_core::losses::l_pm;
use coordpose_core::metrics::{
    box_iou_3d, mean_average_precision, niou, report, MetricReport, OrientedBox, COLUMNS,
};
use coordpose_core::render::{render_coordinate_map, RenderConfig};
use coordpose_core::solvers::{solve_pose_from_map, umeyama, RansacParams};
use coordpose_core::symmetry::{rotation_error_deg, Category, SymmetryKind, SymmetryTable};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn libraries(seed: u64) -> (InstanceLibrary, ConsensusLibrary) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        InstanceLibrary::builtin(&Category::ALL, 5, &mut rng).unwrap(),
        ConsensusLibrary::builtin(&Category::ALL).unwrap(),
    )
}

fn c1_round_trip() -> Outcome {
    let (inst, cons) = libraries(1);
    let cfg = SynthConfig::default();
    let (mut ok_nocs, mut ok_ivfc) = (0, 0);
    let (mut worst_deg, mut worst_t) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let (_, b) =
            generate_synthetic_scene("s", derive_seed(1, i), &Category::ALL, &inst, &cons, &cfg)
                .unwrap();
        let b = &b[0];
        for (map, ok) in [(&b.nocs_map, &mut ok_nocs), (&b.ivfc_map, &mut ok_ivfc)] {
            let Ok(sol) = solve_pose_from_map(map, &b.intrinsics, &RansacParams::default()) else {
                continue;
            };
            // Translation in units of the object diagonal.
            let deg = sol.rotation.angle_to(&b.pose.rotation).to_degrees();
            let dt = (sol.translation - b.pose.translation).norm();
            worst_deg = worst_deg.max(deg);
            worst_t = worst_t.max(dt);
            *ok += (deg < 0.5 && dt < 1e-3) as usize;
        }
    }
    outcome(
        ok_nocs >= 99 && ok_ivfc >= 99,
        format!("NOCS {ok_nocs}/100, IVFC {ok_ivfc}/100 within 0.5° and 1e-3·d (worst {worst_deg:.2e}°, {worst_t:.2e}·d)"),
    )
}

fn c2_umeyama() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let r = Rotation::random(&mut rng);
        let t = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let s = rng.random_range(0.1..10.0);
        let n = rng.random_range(4..50);
        let src: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let dst: Vec<_> = src.iter().map(|p| r.apply(p) * s + t).collect();
        let est = umeyama(&src, &dst).unwrap();
        let e = (est.rotation.matrix() - r.matrix())
            .norm()
            .max((est.translation - t).norm())
            .max((est.scale - s).abs());
        worst = worst.max(e);
    }
    outcome(
        worst < 1e-9,
        format!("max error {worst:.2e} over 1000 similarities"),
    )
}

fn random_box(rng: &mut ChaCha8Rng, near: Option<Vector3<f64>>) -> OrientedBox<f64> {
    let center = match near {
        Some(c) => c + Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
        None => Vector3::zeros(),
    };
    let extents = Vector3::from_fn(|_, _| rng.random_range(0.2..1.5));
    OrientedBox::new(Rotation::random(rng), center, extents).unwrap()
}

fn c3_iou_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut mean_iou) = (0.0f64, 0.0);
    for i in 0..100 {
        let a = random_box(&mut rng, None);
        let b = random_box(&mut rng, Some(a.center));
        let exact = box_iou_3d(&a, &b);
        let mc = support::monte_carlo_iou(&a, &b, 1_000_000, 1000 + i);
        worst = worst.max((exact - mc).abs());
        mean_iou += exact / 100.0;
    }
    outcome(
        worst < 0.01,
        format!("max |Δ| {worst:.2e} on 100 pairs (mean IoU {mean_iou:.3})"),
    )
}

fn c4_gradients() -> Outcome {
    let r = run_gradcheck(&GradcheckConfig::default()).unwrap();
    let detail = r
        .entries
        .iter()
        .map(|e| {
            format!(
                "{} {:.1e}{}",
                e.name,
                e.max_rel_error,
                if e.passed { "" } else { "!" }
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(r.passed, detail)
}

fn c5_deform_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for draw in 0..20 {
        let (cin, cout) = ([4, 8][draw % 2], rng.random_range(1..6));
        let (stride, groups) = (1 + draw % 2, [1, 2, 4][draw % 3]);
        let mut layer = DeformConv2d::zeros(cin, cout, stride, groups).unwrap();
        let w = Tensor4::from_fn(layer.weight.dims(), |_| rng.random_range(-1.0..1.0));
        let bias: Vec<f64> = (0..cout).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Uniform softmax masks weigh each tap by 1/9.
        layer.weight = w.map(|v| v * 9.0);
        layer.bias = bias.clone();
        let x = Tensor4::from_fn(
            [2, cin, rng.random_range(5..14), rng.random_range(5..14)],
            |_| rng.random_range(-1.0..1.0),
        );
        let got = layer.forward(&x).unwrap();
        let want = support::conv3x3(&x, &w, &bias, stride);
        assert_eq!(got.dims(), want.dims());
        for (a, b) in got.data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(
        worst < 1e-6,
        format!("max |Δ| {worst:.2e} over 20 weight draws"),
    )
}

fn c6_dcae_shapes() -> Outcome {
    let cfg = DcaeConfig::default();
    let weights = DcaeWeights::<f64>::random(&cfg, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mask: Vec<bool> = (0..64 * 64)
        .map(|i| (i % 64) > 10 && (i / 64) > 12 && (i % 64) < 50)
        .collect();
    let coords = mask
        .iter()
        .map(|&m| {
            if m {
                Vector3::from_fn(|_, _| rng.random::<f64>())
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let nocs = CoordinateMap::from_parts(64, 64, coords, mask).unwrap();
    let backbone = Tensor4::from_fn([1, cfg.backbone_channels, 8, 8], |_| {
        rng.random_range(-1.0..1.0)
    });
    let out = dcae_forward(&nocs, &backbone, &cfg, &weights, None).unwrap();
    let (bn, raw) = (out.bottleneck.dims(), out.raw.dims());
    let in_range = out.raw.data().iter().all(|v| (0.0..=1.0).contains(v));
    let ok = bn == [1, 256, 8, 8]
        && raw == [1, 3, 64, 64]
        && (out.map.width(), out.map.height()) == (64, 64)
        && in_range;
    outcome(
        ok,
        format!("bottleneck {bn:?}, output {raw:?}, values in [0,1]: {in_range}"),
    )
}

fn c7_symmetry() -> Outcome {
    let table = SymmetryTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut err_deg, mut err_pm, mut err_niou) = (0.0f64, 0.0f64, 0.0f64);
    let mut cats = Vec::new();
    for c in Category::ALL {
        let g = table.group::<f64>(c).unwrap();
        if g.kind != SymmetryKind::AxisContinuous {
            continue;
        }
        cats.push(c.as_str());
        let m = g.elements.len();
        let pts: Vec<Vector3<f64>> = (0..50)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
            .collect();
        for _ in 0..200 {
            let r_gt = Rotation::random(&mut rng);
            let gt = Pose9::new(
                r_gt,
                Vector3::new(0.1, -0.2, 1.0),
                Vector3::new(0.1, 0.25, 0.1),
            )
            .unwrap();
            let spin =
                Rotation::from_axis_angle(&g.axis, rng.random_range(0.0..std::f64::consts::TAU))
                    .unwrap();
            let pred = Pose9::new(r_gt * spin, gt.translation, gt.size).unwrap();
            err_deg = err_deg.max(rotation_error_deg(&pred.rotation, &r_gt, &g).abs());
            err_niou = err_niou.max((1.0 - niou(&pred, &gt, &g)).abs());
            let k = rng.random_range(0..m);
            let step =
                Rotation::from_axis_angle(&g.axis, std::f64::consts::TAU * k as f64 / m as f64)
                    .unwrap();
            err_pm = err_pm.max(l_pm((r_gt * step).matrix(), &r_gt, &pts, &g).unwrap().abs());
        }
    }
    outcome(
        err_deg <= 1e-9 && err_pm <= 1e-9 && err_niou <= 1e-9,
        format!(
            "{}: max rotation error {err_deg:.1e}°, l_pm {err_pm:.1e}, |1−NIoU| {err_niou:.1e}",
            cats.join("/")
        ),
    )
}

fn evaluation_scenes() -> Vec<SceneRecord> {
    let (inst, cons) = libraries(8);
    let cfg = SynthConfig {
        objects_per_scene: 3,
        ..SynthConfig::default()
    };
    (0..20)
        .map(|i| {
            generate_synthetic_scene(
                &format!("s{i}"),
                derive_seed(8, i),
                &Category::ALL,
                &inst,
                &cons,
                &cfg,
            )
            .unwrap()
            .0
        })
        .collect()
}

fn bits(r: &MetricReport) -> Vec<u64> {
    r.rows
        .iter()
        .flat_map(|(_, v)| v.iter())
        .chain(r.mean.iter())
        .map(|v| v.to_bits())
        .collect()
}

fn c8_scale_invariance() -> Outcome {
    let scenes = evaluation_scenes();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut preds = groundtruth_as_predictions(&scenes);
    for p in &mut preds {
        for d in &mut p.detections {
            let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let r = Rotation::from_axis_angle(&axis, rng.random_range(0.0..0.25)).unwrap();
            let dd = d.pose.diagonal();
            let t =
                d.pose.translation + Vector3::from_fn(|_, _| rng.random_range(-0.12..0.12) * dd);
            let s = d.pose.size.map(|v| v * rng.random_range(0.85..1.15));
            d.pose = Pose9::new(r * d.pose.rotation, t, s).unwrap();
            d.score = rng.random();
        }
    }
    let table = SymmetryTable::default();
    let base = report(&evaluation_images(&preds, &scenes).unwrap(), &table).unwrap();
    let mut identical = true;
    for lambda in [0.1, 1.0, 10.0] {
        let scaled: Vec<_> = preds
            .iter()
            .cloned()
            .map(|mut p| {
                for d in &mut p.detections {
                    d.pose = d.pose.scaled(lambda);
                }
                p
            })
            .collect();
        let r = report(&evaluation_images(&scaled, &scenes).unwrap(), &table).unwrap();
        identical &= bits(&r) == bits(&base);
    }
    let m = base.mean;
    outcome(
        identical,
        format!("λ ∈ {{0.1, 1, 10}} bit-identical: {identical} (mean row {:.1}/{:.1}/{:.1}/{:.1}/{:.1}/{:.1}/{:.1}/{:.1})", m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7]),
    )
}

fn c9_map_oracle() -> Outcome {
    let table = SymmetryTable::default();
    let mut mismatches = 0;
    for seed in 0..500 {
        let images = support::toy_case(seed);
        assert!(images.iter().map(|i| i.detections.len()).sum::<usize>() <= 5);
        for c in COLUMNS {
            let got = mean_average_precision(&images, c, &table).unwrap();
            let (per, mean) = support::brute_force_map(&images, c, &table);
            mismatches +=
                (got.per_category != per || got.mean.to_bits() != mean.to_bits()) as usize;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches over 500 toy cases × 8 criteria"),
    )
}

fn c10_self_evaluation() -> Outcome {
    let scenes = evaluation_scenes();
    let table = SymmetryTable::default();
    let exact = report(
        &evaluation_images(&groundtruth_as_predictions(&scenes), &scenes).unwrap(),
        &table,
    )
    .unwrap();
    let all_100 = exact
        .rows
        .iter()
        .all(|(_, v)| v.iter().all(|&x| x == 100.0))
        && exact.mean.iter().all(|&x| x == 100.0);
    // 12° about an axis orthogonal to every symmetry axis.
    let tilt = Rotation::about_x(12f64.to_radians());
    let mut preds = groundtruth_as_predictions(&scenes);
    for p in &mut preds {
        for d in &mut p.detections {
            d.pose.rotation = d.pose.rotation * tilt;
        }
    }
    let r = report(&evaluation_images(&preds, &scenes).unwrap(), &table).unwrap();
    let rows: Vec<&[f64; 8]> = r.rows.iter().map(|(_, v)| v).chain([&r.mean]).collect();
    // Columns: 3 = 10°0.2d, 4 = 10°0.5d, 6 = 0.5d, 7 = 10°.
    let zeroed = rows
        .iter()
        .all(|v| v[3] == 0.0 && v[4] == 0.0 && v[7] == 0.0);
    let kept = rows.iter().all(|v| v[6] == 100.0);
    outcome(
        all_100 && zeroed && kept,
        format!("GT as predictions all 100.0: {all_100}; 12° error zeroes 10° columns: {zeroed}, keeps 0.5d at 100.0: {kept}"),
    )
}

fn c11_consensus() -> Outcome {
    let pts = support::fibonacci_sphere(2000);
    let surface = alpha_shape(&PointCloud::new(pts), 1.5).unwrap();
    let mesh = laplacian_smooth(&surface, 2, 0.5).unwrap();
    let watertight = is_watertight(&mesh);
    let dev = mesh
        .vertices
        .iter()
        .map(|v| (v.norm() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut hull_ok = 0;
    for _ in 0..20 {
        let n = rng.random_range(8..=50);
        let cloud: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let faces = alpha_shape_indexed(&cloud, f64::INFINITY).unwrap();
        hull_ok += (support::sorted_faces(&faces) == support::hull_faces(&cloud)) as usize;
    }
    outcome(
        watertight && dev < 5e-3 && hull_ok == 20,
        format!("sphere watertight: {watertight}, max deviation {dev:.2e}; α=∞ equals hull on {hull_ok}/20 clouds"),
    )
}

fn c12_intra_class_variance() -> Outcome {
    let c = Category::Mug;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inst = InstanceLibrary::builtin(&[c], 6, &mut rng).unwrap();
    let cons = ConsensusLibrary::builtin(&[c]).unwrap();
    let k = CameraIntrinsics::new(80.0, 80.0, 32.0, 32.0).unwrap();
    let pose = Pose9::new(
        Rotation::about_x(0.6) * Rotation::about_y(0.8),
        Vector3::new(0.0, 0.0, 2.5),
        Vector3::repeat(1.0 / 3f64.sqrt()),
    )
    .unwrap();
    let rcfg = RenderConfig::with_size(64, 64);
    let meshes = inst.get(c).unwrap();
    let nocs: Vec<_> = meshes
        .iter()
        .map(|(_, m)| render_coordinate_map(m, &k, &pose, 1.0, &rcfg).unwrap())
        .collect();
    let ivfc: Vec<_> = meshes
        .iter()
        .map(|_| render_coordinate_map(cons.get(c).unwrap(), &k, &pose, 1.0, &rcfg).unwrap())
        .collect();
    let (vn, px) = support::mean_variance(&nocs);
    let (vi, _) = support::mean_variance(&ivfc);
    outcome(
        meshes.len() >= 5 && vn > vi && vi == 0.0,
        format!(
            "{} {c} instances, {px} common pixels: var(NOCS) {vn:.3e} > var(IVFC) {vi:.1e}",
            meshes.len()
        ),
    )
}

fn main() {
    type Criterion = (u32, &'static str, Option<Duration>, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        (
            1,
            "render→solve round trip",
            Some(Duration::from_secs(60)),
            c1_round_trip,
        ),
        (
            2,
            "Umeyama exactness",
            Some(Duration::from_secs(5)),
            c2_umeyama,
        ),
        (
            3,
            "oriented-box IoU oracle",
            Some(Duration::from_secs(30)),
            c3_iou_oracle,
        ),
        (
            4,
            "gradient suite",
            Some(Duration::from_secs(60)),
            c4_gradients,
        ),
        (5, "deformable-conv oracle", None, c5_deform_oracle),
        (6, "DCAE shape contract", None, c6_dcae_shapes),
        (7, "symmetry suite", None, c7_symmetry),
        (8, "metric scale invariance", None, c8_scale_invariance),
        (9, "mAP oracle", None, c9_map_oracle),
        (10, "self-evaluation fixture", None, c10_self_evaluation),
        (11, "consensus reconstruction", None, c11_consensus),
        (12, "intra-class variance", None, c12_intra_class_variance),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let in_time = limit.is_none_or(|l| took < l);
        let passed = o.passed && in_time;
        failed += !passed as usize;
        let budget = limit
            .map(|l| format!(" / {}s", l.as_secs()))
            .unwrap_or_default();
        println!(
            "{} {id:>2}. {name}: {} [{:.2}s{budget}]",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
