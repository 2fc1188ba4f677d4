//! Ground-truth and prediction files, ROI handling and the synthetic scene
//! generator.
//!
//! # File formats
//!
//! Poses are `{"rotation": [[r00, r01, r02], [..], [..]], "translation":
//! [x, y, z], "size": [sx, sy, sz]}` with rows of the rotation matrix,
//! translation and full box extents in metres. Intrinsics are
//! `{"fx", "fy", "cx", "cy"}` in pixels.
//!
//! `gt.json`:
//! ```json
//! {"scenes": [{"image_key": "s0", "width": 640, "height": 480,
//!   "intrinsics": {...},
//!   "objects": [{"category": "can", "instance_mesh_ref": "builtin:can/0",
//!                "pose": {...}, "roi": [x, y, w, h]}]}]}
//! ```
//!
//! `preds.json`:
//! ```json
//! {"predictions": [{"image_key": "s0",
//!   "detections": [{"category": "can", "score": 0.9, "pose": {...}}]}]}
//! ```
//!
//! Unknown fields are reported as warnings; every other violation is a
//! [`Error::Schema`] carrying the JSON pointer of the offending value.

mod shapes;
mod synth;

pub use shapes::{
    cuboid, lathe, parametric_shape, to_nocs_model, union, ConsensusLibrary, InstanceLibrary,
};
pub use synth::{
    derive_seed, generate_synthetic_scene, read_bundle_manifest, roi_positions, write_scene_bundle,
    BundleManifest, BundleObject, MapFiles, SupervisionBundle, SynthConfig,
};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose9, Rotation};
use crate::metrics::{DetectionRecord, GtObject, ImageEval};
use crate::symmetry::Category;
use nalgebra::{Matrix3, Vector3};
use serde_json::{json, Map, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

/// Rotation rows that are orthonormal to this tolerance are accepted and
/// projected onto SO(3).
pub const ROTATION_FILE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub category: Category,
    pub instance_mesh_ref: String,
    pub pose: Pose9<f64>,
    /// `[x, y, w, h]` in pixels.
    pub roi: [u32; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub image_key: String,
    pub width: u32,
    pub height: u32,
    pub intrinsics: CameraIntrinsics<f64>,
    pub objects: Vec<ObjectRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_key: String,
    pub detections: Vec<DetectionRecord<f64>>,
}

/// Records plus the unknown-field warnings collected while reading them.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: T,
    pub warnings: Vec<String>,
}

/// Intrinsics of the `out × out` image obtained by cropping `roi` and resizing.
pub fn roi_intrinsics(
    k: &CameraIntrinsics<f64>,
    roi: [u32; 4],
    out: usize,
) -> Result<CameraIntrinsics<f64>> {
    let [x, y, w, h] = roi.map(f64::from);
    if w <= 0.0 || h <= 0.0 || out == 0 {
        return Err(Error::InvalidInput(format!(
            "roi {roi:?} or output size {out} has zero area"
        )));
    }
    let o = out as f64;
    CameraIntrinsics::new(
        k.fx * o / w,
        k.fy * o / h,
        (k.cx - x) * o / w,
        (k.cy - y) * o / h,
    )
}

pub fn rotation_to_json(r: &Rotation<f64>) -> Value {
    let m = r.matrix();
    json!([
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]]
    ])
}

pub fn pose_to_json(p: &Pose9<f64>) -> Value {
    json!({
        "rotation": rotation_to_json(&p.rotation),
        "translation": p.translation.as_slice(),
        "size": p.size.as_slice(),
    })
}

pub fn intrinsics_to_json(k: &CameraIntrinsics<f64>) -> Value {
    json!({"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy})
}

pub fn scene_to_json(s: &SceneRecord) -> Value {
    json!({
        "image_key": s.image_key,
        "width": s.width,
        "height": s.height,
        "intrinsics": intrinsics_to_json(&s.intrinsics),
        "objects": s.objects.iter().map(|o| json!({
            "category": o.category.as_str(),
            "instance_mesh_ref": o.instance_mesh_ref,
            "pose": pose_to_json(&o.pose),
            "roi": o.roi,
        })).collect::<Vec<_>>(),
    })
}

pub fn groundtruth_to_json(scenes: &[SceneRecord]) -> Value {
    json!({"scenes": scenes.iter().map(scene_to_json).collect::<Vec<_>>()})
}

pub fn predictions_to_json(preds: &[PredictionRecord]) -> Value {
    json!({"predictions": preds.iter().map(|p| json!({
        "image_key": p.image_key,
        "detections": p.detections.iter().map(|d| json!({
            "category": d.category.as_str(),
            "score": d.score,
            "pose": pose_to_json(&d.pose),
        })).collect::<Vec<_>>(),
    })).collect::<Vec<_>>()})
}

/// Walks a JSON document, recording unknown fields.
#[derive(Debug, Default)]
pub struct Reader {
    pub warnings: Vec<String>,
}

fn esc(key: &str) -> String {
    key.replace('~', "~0").replace('/', "~1")
}

impl Reader {
    pub fn object<'a>(
        &mut self,
        v: &'a Value,
        ptr: &str,
        known: &[&str],
    ) -> Result<&'a Map<String, Value>> {
        let m = v
            .as_object()
            .ok_or_else(|| Error::schema(ptr, "expected an object"))?;
        for k in m.keys() {
            if !known.contains(&k.as_str()) {
                self.warnings
                    .push(format!("{ptr}/{}: unknown field ignored", esc(k)));
            }
        }
        Ok(m)
    }

    pub fn field<'a>(&self, m: &'a Map<String, Value>, ptr: &str, key: &str) -> Result<&'a Value> {
        m.get(key)
            .ok_or_else(|| Error::schema(format!("{ptr}/{}", esc(key)), "missing required field"))
    }

    pub fn number(&self, v: &Value, ptr: &str) -> Result<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(Error::schema(ptr, "expected a finite number")),
        }
    }

    pub fn uint(&self, v: &Value, ptr: &str) -> Result<u32> {
        v.as_u64()
            .and_then(|x| u32::try_from(x).ok())
            .ok_or_else(|| Error::schema(ptr, "expected a non-negative integer"))
    }

    pub fn string<'a>(&self, v: &'a Value, ptr: &str) -> Result<&'a str> {
        v.as_str()
            .ok_or_else(|| Error::schema(ptr, "expected a string"))
    }

    pub fn array<'a>(&self, v: &'a Value, ptr: &str, len: Option<usize>) -> Result<&'a [Value]> {
        let a = v
            .as_array()
            .ok_or_else(|| Error::schema(ptr, "expected an array"))?;
        if let Some(n) = len {
            if a.len() != n {
                return Err(Error::schema(
                    ptr,
                    format!("expected {n} elements, got {}", a.len()),
                ));
            }
        }
        Ok(a)
    }

    pub fn vec3(&self, v: &Value, ptr: &str) -> Result<Vector3<f64>> {
        let a = self.array(v, ptr, Some(3))?;
        let mut out = Vector3::zeros();
        for i in 0..3 {
            out[i] = self.number(&a[i], &format!("{ptr}/{i}"))?;
        }
        Ok(out)
    }

    pub fn category(&self, v: &Value, ptr: &str) -> Result<Category> {
        self.string(v, ptr)?
            .parse()
            .map_err(|_| Error::schema(ptr, format!("unknown category {v}")))
    }

    pub fn rotation(&self, v: &Value, ptr: &str) -> Result<Rotation<f64>> {
        let rows = self.array(v, ptr, Some(3))?;
        let mut m = Matrix3::zeros();
        for (i, row) in rows.iter().enumerate() {
            let r = self.vec3(row, &format!("{ptr}/{i}"))?;
            m.set_row(i, &r.transpose());
        }
        if let Ok(r) = Rotation::from_matrix(m) {
            return Ok(r);
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > ROTATION_FILE_TOL || (m.determinant() - 1.0).abs() > ROTATION_FILE_TOL {
            return Err(Error::schema(ptr, "not a rotation matrix"));
        }
        Rotation::nearest(m).map_err(|e| Error::schema(ptr, e.to_string()))
    }

    pub fn pose(&mut self, v: &Value, ptr: &str) -> Result<Pose9<f64>> {
        let m = self.object(v, ptr, &["rotation", "translation", "size"])?;
        let r = self.rotation(self.field(m, ptr, "rotation")?, &format!("{ptr}/rotation"))?;
        let t = self.vec3(
            self.field(m, ptr, "translation")?,
            &format!("{ptr}/translation"),
        )?;
        let sp = format!("{ptr}/size");
        let s = self.vec3(self.field(m, ptr, "size")?, &sp)?;
        Pose9::new(r, t, s).map_err(|e| Error::schema(sp, e.to_string()))
    }

    pub fn intrinsics(&mut self, v: &Value, ptr: &str) -> Result<CameraIntrinsics<f64>> {
        let m = self.object(v, ptr, &["fx", "fy", "cx", "cy"])?;
        let get =
            |k: &str| -> Result<f64> { self.number(self.field(m, ptr, k)?, &format!("{ptr}/{k}")) };
        let (fx, fy, cx, cy) = (get("fx")?, get("fy")?, get("cx")?, get("cy")?);
        CameraIntrinsics::new(fx, fy, cx, cy).map_err(|e| Error::schema(ptr, e.to_string()))
    }

    pub fn scene(&mut self, v: &Value, ptr: &str) -> Result<SceneRecord> {
        let m = self.object(
            v,
            ptr,
            &["image_key", "width", "height", "intrinsics", "objects"],
        )?;
        let image_key = self
            .string(
                self.field(m, ptr, "image_key")?,
                &format!("{ptr}/image_key"),
            )?
            .to_string();
        let width = self.uint(self.field(m, ptr, "width")?, &format!("{ptr}/width"))?;
        let height = self.uint(self.field(m, ptr, "height")?, &format!("{ptr}/height"))?;
        let intrinsics = self.intrinsics(
            self.field(m, ptr, "intrinsics")?,
            &format!("{ptr}/intrinsics"),
        )?;
        let op = format!("{ptr}/objects");
        let mut objects = Vec::new();
        for (i, o) in self
            .array(self.field(m, ptr, "objects")?, &op, None)?
            .iter()
            .enumerate()
        {
            let p = format!("{op}/{i}");
            let om = self.object(o, &p, &["category", "instance_mesh_ref", "pose", "roi"])?;
            let category =
                self.category(self.field(om, &p, "category")?, &format!("{p}/category"))?;
            let instance_mesh_ref = match om.get("instance_mesh_ref") {
                Some(v) => self
                    .string(v, &format!("{p}/instance_mesh_ref"))?
                    .to_string(),
                None => String::new(),
            };
            let pose = self.pose(self.field(om, &p, "pose")?, &format!("{p}/pose"))?;
            let rp = format!("{p}/roi");
            let ra = self.array(self.field(om, &p, "roi")?, &rp, Some(4))?;
            let mut roi = [0u32; 4];
            for k in 0..4 {
                roi[k] = self.uint(&ra[k], &format!("{rp}/{k}"))?;
            }
            if roi[2] == 0 || roi[3] == 0 || roi[0] + roi[2] > width || roi[1] + roi[3] > height {
                return Err(Error::schema(
                    rp,
                    "roi must have positive size and lie inside the image",
                ));
            }
            objects.push(ObjectRecord {
                category,
                instance_mesh_ref,
                pose,
                roi,
            });
        }
        Ok(SceneRecord {
            image_key,
            width,
            height,
            intrinsics,
            objects,
        })
    }
}

/// Parses text as JSON; syntax errors are schema errors at the document root.
pub fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| Error::schema("", format!("malformed JSON: {e}")))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn parse_groundtruth(text: &str) -> Result<Loaded<Vec<SceneRecord>>> {
    let doc = parse_json(text)?;
    let mut r = Reader::default();
    let m = r.object(&doc, "", &["scenes"])?;
    let scenes = r.array(r.field(m, "", "scenes")?, "/scenes", None)?;
    let records = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| r.scene(s, &format!("/scenes/{i}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(Loaded {
        records,
        warnings: r.warnings,
    })
}

pub fn parse_predictions(text: &str) -> Result<Loaded<Vec<PredictionRecord>>> {
    let doc = parse_json(text)?;
    let mut r = Reader::default();
    let m = r.object(&doc, "", &["predictions"])?;
    let preds = r.array(r.field(m, "", "predictions")?, "/predictions", None)?;
    let mut records = Vec::with_capacity(preds.len());
    for (i, p) in preds.iter().enumerate() {
        let ptr = format!("/predictions/{i}");
        let pm = r.object(p, &ptr, &["image_key", "detections"])?;
        let image_key = r
            .string(r.field(pm, &ptr, "image_key")?, &format!("{ptr}/image_key"))?
            .to_string();
        let dp = format!("{ptr}/detections");
        let mut detections = Vec::new();
        for (j, d) in r
            .array(r.field(pm, &ptr, "detections")?, &dp, None)?
            .iter()
            .enumerate()
        {
            let p = format!("{dp}/{j}");
            let dm = r.object(d, &p, &["category", "score", "pose"])?;
            detections.push(DetectionRecord {
                category: r.category(r.field(dm, &p, "category")?, &format!("{p}/category"))?,
                score: r.number(r.field(dm, &p, "score")?, &format!("{p}/score"))?,
                pose: r.pose(r.field(dm, &p, "pose")?, &format!("{p}/pose"))?,
            });
        }
        records.push(PredictionRecord {
            image_key,
            detections,
        });
    }
    Ok(Loaded {
        records,
        warnings: r.warnings,
    })
}

pub fn read_groundtruth(path: &Path) -> Result<Loaded<Vec<SceneRecord>>> {
    parse_groundtruth(&read_text(path)?)
}

pub fn read_predictions(path: &Path) -> Result<Loaded<Vec<PredictionRecord>>> {
    parse_predictions(&read_text(path)?)
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics<f64>> {
    let doc = parse_json(&read_text(path)?)?;
    Reader::default().intrinsics(&doc, "")
}

pub fn read_pose(path: &Path) -> Result<Pose9<f64>> {
    let doc = parse_json(&read_text(path)?)?;
    Reader::default().pose(&doc, "")
}

/// A ground-truth file whose detections are its own objects (score 1).
pub fn groundtruth_as_predictions(scenes: &[SceneRecord]) -> Vec<PredictionRecord> {
    scenes
        .iter()
        .map(|s| PredictionRecord {
            image_key: s.image_key.clone(),
            detections: s
                .objects
                .iter()
                .map(|o| DetectionRecord {
                    category: o.category,
                    score: 1.0,
                    pose: o.pose,
                })
                .collect(),
        })
        .collect()
}

/// Pairs predictions with ground truth by image key, in ground-truth order.
pub fn evaluation_images(
    preds: &[PredictionRecord],
    gt: &[SceneRecord],
) -> Result<Vec<ImageEval<f64>>> {
    let mut by_key: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    let mut offenders = BTreeSet::new();
    for p in preds {
        if by_key.insert(&p.image_key, p).is_some() {
            offenders.insert(format!("{} (duplicate prediction)", p.image_key));
        }
    }
    let gt_keys: BTreeSet<&str> = gt.iter().map(|s| s.image_key.as_str()).collect();
    if gt_keys.len() != gt.len() {
        offenders.insert("duplicate ground-truth keys".to_string());
    }
    for s in gt {
        if !by_key.contains_key(s.image_key.as_str()) {
            offenders.insert(format!("{} (no prediction)", s.image_key));
        }
    }
    for k in by_key.keys() {
        if !gt_keys.contains(k) {
            offenders.insert(format!("{k} (no ground truth)"));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::KeyMismatch(offenders.into_iter().collect()));
    }
    Ok(gt
        .iter()
        .map(|s| ImageEval {
            key: s.image_key.clone(),
            detections: by_key[s.image_key.as_str()].detections.clone(),
            gt: s
                .objects
                .iter()
                .map(|o| GtObject {
                    category: o.category,
                    pose: o.pose,
                })
                .collect(),
        })
        .collect())
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v).expect("values serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
