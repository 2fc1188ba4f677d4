use coordpose_core::coordmap::QMAX;
use coordpose_core::dataset::{
    generate_synthetic_scene, roi_intrinsics, ConsensusLibrary, InstanceLibrary, SynthConfig,
};
use coordpose_core::render::{render_coordinate_map, RenderConfig};
use coordpose_core::solvers::{solve_pose_from_map, RansacParams};
use coordpose_core::symmetry::Category;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn libraries() -> (InstanceLibrary, ConsensusLibrary) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inst = InstanceLibrary::builtin(&Category::ALL, 3, &mut rng).unwrap();
    (inst, ConsensusLibrary::builtin(&Category::ALL).unwrap())
}

/// Rendering the ROI through shifted intrinsics at its native size equals
/// cropping a full-image render.
#[test]
fn roi_render_matches_full_image_crop() {
    let (inst, cons) = libraries();
    let cfg = SynthConfig::default();
    let tol = 2.0 / f64::from(QMAX);
    let mut mask_flips = 0usize;
    let mut compared = 0usize;
    for seed in 0..50 {
        let (scene, _) =
            generate_synthetic_scene("s", seed, &Category::ALL, &inst, &cons, &cfg).unwrap();
        let o = &scene.objects[0];
        let mesh = inst
            .get(o.category)
            .unwrap()
            .iter()
            .find(|(r, _)| *r == o.instance_mesh_ref)
            .map(|(_, m)| m)
            .unwrap();
        let d = o.pose.diagonal();
        let full = render_coordinate_map(
            mesh,
            &scene.intrinsics,
            &o.pose,
            d,
            &RenderConfig::with_size(scene.width as usize, scene.height as usize),
        )
        .unwrap();
        let [x0, y0, side, _] = o.roi;
        let side = side as usize;
        let k = roi_intrinsics(&scene.intrinsics, o.roi, side).unwrap();
        let crop =
            render_coordinate_map(mesh, &k, &o.pose, d, &RenderConfig::with_size(side, side))
                .unwrap();
        for y in 0..side {
            for x in 0..side {
                let (fx, fy) = (x0 as usize + x, y0 as usize + y);
                let a = if fx < full.width() && fy < full.height() {
                    full.get(fx, fy)
                } else {
                    None
                };
                match (a, crop.get(x, y)) {
                    (Some(a), Some(b)) => {
                        compared += 1;
                        assert!(
                            (a - b).amax() <= tol,
                            "seed {seed} pixel ({x},{y}): {a:?} vs {b:?}"
                        );
                    }
                    (None, None) => {}
                    _ => mask_flips += 1,
                }
            }
        }
    }
    // Pixel centres are shifted by whole pixels, so coverage is identical.
    assert_eq!(mask_flips, 0);
    assert!(compared > 10_000);
}

#[test]
fn synthetic_maps_solve_back_to_their_pose() {
    let (inst, cons) = libraries();
    let cfg = SynthConfig::default();
    for seed in 100..110 {
        let (_, bundles) =
            generate_synthetic_scene("s", seed, &Category::ALL, &inst, &cons, &cfg).unwrap();
        let b = &bundles[0];
        for map in [&b.nocs_map, &b.ivfc_map] {
            let sol = solve_pose_from_map(map, &b.intrinsics, &RansacParams::default()).unwrap();
            let deg = sol.rotation.angle_to(&b.pose.rotation).to_degrees();
            assert!(deg < 0.5, "seed {seed}: {deg}°");
            assert!(
                (sol.translation - b.pose.translation).norm() < 1e-3,
                "seed {seed}"
            );
        }
    }
}
