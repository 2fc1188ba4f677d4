//! Software rasterizer producing coordinate maps from color-coded meshes.

use crate::coordmap::CoordinateMap;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Mesh, Pose9};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Depth values closer than this are treated as ties; the earlier triangle wins.
const DEPTH_TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    #[serde(default)]
    pub cull_backfaces: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            near: 0.01,
            far: 100.0,
            cull_backfaces: false,
        }
    }
}

impl RenderConfig {
    pub fn with_size(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("render size must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidInput(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct ClipVert {
    p: Vector3<f64>,
    c: Vector3<f64>,
}

fn clip_near(tri: [ClipVert; 3], near: f64) -> Vec<ClipVert> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.p.z >= near;
        let b_in = b.p.z >= near;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (near - a.p.z) / (b.p.z - a.p.z);
            let mut p = a.p + (b.p - a.p) * t;
            p.z = near;
            out.push(ClipVert {
                p,
                c: a.c + (b.c - a.c) * t,
            });
        }
    }
    out
}

#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (q.y - a.y) - (b.y - a.y) * (q.x - a.x)
}

/// Renders the colors of `mesh` placed by `scale * R * v + t`.
///
/// Each covered pixel centre receives the perspective-correct interpolated
/// color of the nearest triangle. A mesh that lies entirely outside the view
/// volume yields an empty map.
pub fn render_coordinate_map(
    mesh: &Mesh<f64>,
    k: &CameraIntrinsics<f64>,
    pose: &Pose9<f64>,
    scale: f64,
    cfg: &RenderConfig,
) -> Result<CoordinateMap<f64>> {
    cfg.validate()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let colors = mesh.colors.as_ref().ok_or(Error::MissingColors)?;
    let r = pose.rotation.matrix();
    let cam: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|v| r * v * scale + pose.translation)
        .collect();

    let (w, h) = (cfg.width, cfg.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut map = CoordinateMap::<f64>::empty(w, h);
    let project = |p: &Vector3<f64>| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);

    for f in &mesh.faces {
        let tri = [0, 1, 2].map(|j| ClipVert {
            p: cam[f[j]],
            c: colors[f[j]],
        });
        if tri.iter().all(|v| v.p.z < cfg.near) || tri.iter().all(|v| v.p.z > cfg.far) {
            continue;
        }
        if cfg.cull_backfaces {
            let n = (tri[1].p - tri[0].p).cross(&(tri[2].p - tri[0].p));
            if n.dot(&tri[0].p) >= 0.0 {
                continue;
            }
        }
        let poly = clip_near(tri, cfg.near);
        for s in 1..poly.len().saturating_sub(1) {
            let sub = [poly[0], poly[s], poly[s + 1]];
            let scr = sub.map(|v| project(&v.p));
            let area = edge(&scr[0], &scr[1], &scr[2]);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            let minx = scr.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let maxx = scr.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let miny = scr.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let maxy = scr.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            // pixel x covers centre x + 0.5
            let x0 = (minx - 0.5).ceil().max(0.0);
            let x1 = (maxx - 0.5).floor().min(w as f64 - 1.0);
            let y0 = (miny - 0.5).ceil().max(0.0);
            let y1 = (maxy - 0.5).floor().min(h as f64 - 1.0);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let inv_z = sub.map(|v| 1.0 / v.p.z);
            for py in y0 as usize..=y1 as usize {
                for px in x0 as usize..=x1 as usize {
                    let q = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let b = [
                        edge(&scr[1], &scr[2], &q) / area,
                        edge(&scr[2], &scr[0], &q) / area,
                        edge(&scr[0], &scr[1], &q) / area,
                    ];
                    if b.iter().any(|&x| x < 0.0) {
                        continue;
                    }
                    let wsum = b[0] * inv_z[0] + b[1] * inv_z[1] + b[2] * inv_z[2];
                    let z = 1.0 / wsum;
                    if !(z >= cfg.near && z <= cfg.far) {
                        continue;
                    }
                    let i = py * w + px;
                    if z < zbuf[i] - DEPTH_TIE {
                        zbuf[i] = z;
                        let c = (sub[0].c * (b[0] * inv_z[0])
                            + sub[1].c * (b[1] * inv_z[1])
                            + sub[2].c * (b[2] * inv_z[2]))
                            * z;
                        map.set(px, py, c);
                    }
                }
            }
        }
    }
    Ok(map)
}
