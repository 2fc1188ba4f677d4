//! Synthetic scenes: sampled poses, ROIs and rendered NOCS/IVFC supervision.

use super::shapes::{ConsensusLibrary, InstanceLibrary};
use super::{
    intrinsics_to_json, pose_to_json, roi_intrinsics, scene_to_json, write_atomic, write_json,
    ObjectRecord, SceneRecord,
};
use crate::coordmap::CoordinateMap;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose9, Rotation, ScaleAgnosticPose};
use crate::render::{render_coordinate_map, RenderConfig};
use crate::symmetry::Category;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_width: u32,
    pub image_height: u32,
    pub intrinsics: CameraIntrinsics<f64>,
    /// Side of the square supervision maps.
    pub out_size: usize,
    pub objects_per_scene: usize,
    /// Object-centre depth range in metres.
    pub depth_range: (f64, f64),
    /// Relative padding of the square ROI around the projected box.
    pub roi_padding: f64,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_width: 640,
            image_height: 480,
            intrinsics: CameraIntrinsics {
                fx: 591.0125,
                fy: 590.16775,
                cx: 322.525,
                cy: 244.11084,
            },
            out_size: 64,
            objects_per_scene: 1,
            depth_range: (0.6, 1.4),
            roi_padding: 0.1,
            max_attempts: 1000,
        }
    }
}

/// Nominal box diagonal of each category in metres.
fn nominal_diagonal(c: Category) -> f64 {
    match c {
        Category::Bottle => 0.25,
        Category::Bowl => 0.18,
        Category::Camera => 0.16,
        Category::Can => 0.15,
        Category::Laptop => 0.40,
        Category::Mug => 0.14,
    }
}

/// Counter-based per-item seed (SplitMix64 of `seed` and `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionBundle {
    pub object_index: usize,
    pub category: Category,
    pub instance_mesh_ref: String,
    pub roi: [u32; 4],
    /// Intrinsics of the cropped and resized ROI.
    pub intrinsics: CameraIntrinsics<f64>,
    pub metric_pose: Pose9<f64>,
    pub pose: ScaleAgnosticPose<f64>,
    pub nocs_map: CoordinateMap<f64>,
    pub ivfc_map: CoordinateMap<f64>,
    /// `[2, out, out]`: image x / width, then image y / height, at ROI pixel centres.
    pub roi_positions: Vec<f64>,
}

/// Image-relative positions of the ROI's resampled pixel centres.
pub fn roi_positions(roi: [u32; 4], out: usize, width: u32, height: u32) -> Vec<f64> {
    let [x, y, w, h] = roi.map(f64::from);
    let o = out as f64;
    let mut v = vec![0.0; 2 * out * out];
    for r in 0..out {
        for c in 0..out {
            v[r * out + c] = (x + (c as f64 + 0.5) * w / o) / f64::from(width);
            v[out * out + r * out + c] = (y + (r as f64 + 0.5) * h / o) / f64::from(height);
        }
    }
    v
}

/// Upright-ish tabletop view: object +y points up in the image, tilted
/// towards the camera by the elevation, with a small roll.
fn sample_rotation(rng: &mut ChaCha8Rng) -> Rotation<f64> {
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let elev = rng.random_range(10f64..60.0).to_radians();
    let roll = rng.random_range(-10f64..10.0).to_radians();
    Rotation::about_z(roll)
        * Rotation::about_x(elev)
        * Rotation::about_x(std::f64::consts::PI)
        * Rotation::about_y(yaw)
}

/// Square ROI around the projected box, or `None` if it leaves the image.
fn square_roi(pose: &Pose9<f64>, cfg: &SynthConfig) -> Option<[u32; 4]> {
    let k = &cfg.intrinsics;
    let h = pose.size * 0.5;
    let (mut lo, mut hi) = (
        nalgebra::Vector2::repeat(f64::INFINITY),
        nalgebra::Vector2::repeat(f64::NEG_INFINITY),
    );
    for i in 0..8 {
        let c = Vector3::new(
            if i & 1 == 0 { -h.x } else { h.x },
            if i & 2 == 0 { -h.y } else { h.y },
            if i & 4 == 0 { -h.z } else { h.z },
        );
        let p = pose.rotation.apply(&c) + pose.translation;
        if p.z < 0.05 {
            return None;
        }
        let q = k.project(&p)?;
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let side = ((hi - lo).max() * (1.0 + cfg.roi_padding)).ceil();
    let centre = (lo + hi) * 0.5;
    let (x0, y0) = (
        (centre.x - side * 0.5).floor(),
        (centre.y - side * 0.5).floor(),
    );
    if x0 < 0.0
        || y0 < 0.0
        || x0 + side > f64::from(cfg.image_width)
        || y0 + side > f64::from(cfg.image_height)
    {
        return None;
    }
    Some([x0 as u32, y0 as u32, side as u32, side as u32])
}

/// Generates one scene: poses by rejection sampling, then the NOCS map of the
/// instance and the IVFC map of the category consensus model under the same
/// camera and pose, both rendered into the object's ROI.
pub fn generate_synthetic_scene(
    image_key: &str,
    seed: u64,
    categories: &[Category],
    instances: &InstanceLibrary,
    consensus: &ConsensusLibrary,
    cfg: &SynthConfig,
) -> Result<(SceneRecord, Vec<SupervisionBundle>)> {
    if categories.is_empty() {
        return Err(Error::InvalidInput("no categories requested".into()));
    }
    for &c in categories {
        instances.get(c)?;
        consensus.get(c)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cfg.intrinsics;
    let rcfg = RenderConfig::with_size(cfg.out_size, cfg.out_size);
    let mut objects = Vec::new();
    let mut bundles = Vec::new();
    for index in 0..cfg.objects_per_scene {
        let category = categories[rng.random_range(0..categories.len())];
        let lib = instances.get(category)?;
        let (reference, mesh) = &lib[rng.random_range(0..lib.len())];
        let (lo, hi) = mesh.bounds().ok_or_else(|| {
            Error::InvalidInput(format!("instance `{reference}` has no vertices"))
        })?;
        let extents = hi - lo;
        let placed = (0..cfg.max_attempts).find_map(|_| {
            let d = nominal_diagonal(category) * rng.random_range(0.85..1.15);
            let z = rng.random_range(cfg.depth_range.0..cfg.depth_range.1);
            let u = rng.random_range(0.0..f64::from(cfg.image_width));
            let v = rng.random_range(0.0..f64::from(cfg.image_height));
            let t = Vector3::new((u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z);
            let pose = Pose9::new(sample_rotation(&mut rng), t, extents * d).ok()?;
            square_roi(&pose, cfg).map(|roi| (pose, d, roi))
        });
        let (pose, d, roi) = placed.ok_or(Error::PlacementFailure(cfg.max_attempts))?;
        let k_roi = roi_intrinsics(&k, roi, cfg.out_size)?;
        let nocs_map = render_coordinate_map(mesh, &k_roi, &pose, d, &rcfg)?;
        let ivfc_map = render_coordinate_map(consensus.get(category)?, &k_roi, &pose, d, &rcfg)?;
        objects.push(ObjectRecord {
            category,
            instance_mesh_ref: reference.clone(),
            pose,
            roi,
        });
        bundles.push(SupervisionBundle {
            object_index: index,
            category,
            instance_mesh_ref: reference.clone(),
            roi,
            intrinsics: k_roi,
            metric_pose: pose,
            pose: pose.scale_agnostic(),
            nocs_map,
            ivfc_map,
            roi_positions: roi_positions(roi, cfg.out_size, cfg.image_width, cfg.image_height),
        });
    }
    Ok((
        SceneRecord {
            image_key: image_key.to_string(),
            width: cfg.image_width,
            height: cfg.image_height,
            intrinsics: k,
            objects,
        },
        bundles,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFiles {
    pub coords: String,
    pub mask: String,
}

/// Manifest entry of one object; paths are relative to the bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleObject {
    pub index: usize,
    pub category: Category,
    pub instance_mesh_ref: String,
    pub roi: [u32; 4],
    pub map_size: usize,
    /// ROI intrinsics file (`{"fx", "fy", "cx", "cy"}`).
    pub intrinsics_file: String,
    /// Metric pose file.
    pub pose_file: String,
    /// Scale-agnostic pose: rotation rows, translation and size over the diagonal.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub size: [f64; 3],
    pub nocs: MapFiles,
    pub ivfc: MapFiles,
    /// Little-endian f32, shape `[2, map_size, map_size]`.
    pub roi_positions: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub image_key: String,
    pub scene_file: String,
    pub objects: Vec<BundleObject>,
}

/// Writes `dir/<image_key>/` with the scene record, maps and manifest.
/// Every file is written atomically. Returns the manifest path.
pub fn write_scene_bundle(
    dir: &Path,
    scene: &SceneRecord,
    bundles: &[SupervisionBundle],
) -> Result<PathBuf> {
    let root = dir.join(&scene.image_key);
    std::fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
    write_json(&root.join("scene.json"), &scene_to_json(scene))?;
    let mut objects = Vec::with_capacity(bundles.len());
    for b in bundles {
        let stem = format!("obj{}", b.object_index);
        let files = |kind: &str| MapFiles {
            coords: format!("{stem}_{kind}.png"),
            mask: format!("{stem}_{kind}_mask.png"),
        };
        let (nocs, ivfc) = (files("nocs"), files("ivfc"));
        for (map, f) in [(&b.nocs_map, &nocs), (&b.ivfc_map, &ivfc)] {
            write_atomic(&root.join(&f.coords), &map.coords_png()?)?;
            write_atomic(&root.join(&f.mask), &map.mask_png()?)?;
        }
        let roi_file = format!("{stem}_roi.bin");
        let bytes: Vec<u8> = b
            .roi_positions
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        write_atomic(&root.join(&roi_file), &bytes)?;
        let k_file = format!("{stem}_intrinsics.json");
        write_json(&root.join(&k_file), &intrinsics_to_json(&b.intrinsics))?;
        let pose_file = format!("{stem}_pose.json");
        write_json(&root.join(&pose_file), &pose_to_json(&b.metric_pose))?;
        let m = b.pose.rotation.matrix();
        objects.push(BundleObject {
            index: b.object_index,
            category: b.category,
            instance_mesh_ref: b.instance_mesh_ref.clone(),
            roi: b.roi,
            map_size: b.nocs_map.width(),
            intrinsics_file: k_file,
            pose_file,
            rotation: std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)])),
            translation: b.pose.translation.into(),
            size: b.pose.size.into(),
            nocs,
            ivfc,
            roi_positions: roi_file,
        });
    }
    let manifest = BundleManifest {
        image_key: scene.image_key.clone(),
        scene_file: "scene.json".into(),
        objects,
    };
    let path = root.join("bundle.json");
    write_json(
        &path,
        &serde_json::to_value(&manifest).expect("manifest serializes"),
    )?;
    Ok(path)
}

pub fn read_bundle_manifest(path: &Path) -> Result<BundleManifest> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::schema("", e.to_string()))
}
