//! Wavefront OBJ and ASCII PLY reading/writing for [`Mesh`] and [`PointCloud`].
//!
//! OBJ colors ride on 6-float `v` lines in `[0, 1]`. PLY colors are stored as
//! `uchar red/green/blue` in `0..=255` and mapped to `[0, 1]` in memory.

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PointCloud};
use nalgebra::Vector3;
use std::fmt::Write as _;
use std::path::Path;

fn parse_err(context: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        context: format!("{context} line {line}"),
        message: message.into(),
    }
}

fn parse_f64(tok: &str, context: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(context, line, format!("bad number `{tok}`")))?;
    if !v.is_finite() {
        return Err(parse_err(context, line, "non-finite number"));
    }
    Ok(v)
}

pub fn parse_obj(text: &str) -> Result<Mesh<f64>> {
    let mut vertices = Vec::new();
    let mut colors: Vec<Vector3<f64>> = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let vals = toks
                    .map(|t| parse_f64(t, "obj", ln))
                    .collect::<Result<Vec<_>>>()?;
                match vals.len() {
                    3 | 4 => vertices.push(Vector3::new(vals[0], vals[1], vals[2])),
                    6 | 7 => {
                        vertices.push(Vector3::new(vals[0], vals[1], vals[2]));
                        colors.push(Vector3::new(vals[3], vals[4], vals[5]));
                    }
                    n => return Err(parse_err("obj", ln, format!("vertex with {n} values"))),
                }
            }
            Some("f") => {
                let mut idx = Vec::new();
                for t in toks {
                    let first = t.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err("obj", ln, format!("bad face index `{t}`")))?;
                    let resolved = if i > 0 {
                        i - 1
                    } else if i < 0 {
                        vertices.len() as i64 + i
                    } else {
                        return Err(parse_err("obj", ln, "face index 0"));
                    };
                    if resolved < 0 {
                        return Err(parse_err("obj", ln, "face index out of range"));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(parse_err("obj", ln, "face with fewer than 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let colors = match colors.len() {
        0 => None,
        n if n == vertices.len() => Some(colors),
        _ => {
            return Err(Error::Parse {
                context: "obj".into(),
                message: "either all or no vertices must carry colors".into(),
            })
        }
    };
    Mesh::new(vertices, faces, colors)
}

pub fn write_obj(mesh: &Mesh<f64>) -> String {
    let mut out = String::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.colors {
            Some(c) => {
                let c = c[i];
                let _ = writeln!(out, "v {} {} {} {} {} {}", v.x, v.y, v.z, c.x, c.y, c.z);
            }
            None => {
                let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
            }
        }
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

#[derive(Debug, Default)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    list_property: bool,
}

pub fn parse_ply(text: &str) -> Result<Mesh<f64>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(parse_err("ply", 1, "missing `ply` magic")),
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err("ply", 0, "unterminated header"))?;
        let ln = ln + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("format") => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(parse_err("ply", ln, "only ascii PLY is supported"));
                }
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(parse_err("ply", ln, "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| parse_err("ply", ln, "bad element count"))?;
                elements.push(PlyElement {
                    name: toks[1].to_string(),
                    count,
                    ..Default::default()
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err("ply", ln, "property before element"))?;
                if toks.get(1) == Some(&"list") {
                    el.list_property = true;
                    el.properties.push(toks.last().unwrap_or(&"").to_string());
                } else {
                    el.properties.push(toks.last().unwrap_or(&"").to_string());
                }
            }
            Some("end_header") => break,
            _ => {}
        }
    }

    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for el in &elements {
        for _ in 0..el.count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| parse_err("ply", 0, format!("missing `{}` rows", el.name)))?;
            let ln = ln + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            match el.name.as_str() {
                "vertex" => {
                    if toks.len() < el.properties.len() {
                        return Err(parse_err("ply", ln, "short vertex row"));
                    }
                    let get = |name: &str| -> Result<Option<f64>> {
                        match el.properties.iter().position(|p| p == name) {
                            Some(i) => parse_f64(toks[i], "ply", ln).map(Some),
                            None => Ok(None),
                        }
                    };
                    let (x, y, z) = match (get("x")?, get("y")?, get("z")?) {
                        (Some(x), Some(y), Some(z)) => (x, y, z),
                        _ => return Err(parse_err("ply", ln, "vertex lacks x/y/z")),
                    };
                    vertices.push(Vector3::new(x, y, z));
                    if let (Some(r), Some(g), Some(b)) = (get("red")?, get("green")?, get("blue")?)
                    {
                        colors.push(Vector3::new(r, g, b) / 255.0);
                    }
                }
                "face" => {
                    let n: usize = toks
                        .first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err("ply", ln, "bad face row"))?;
                    if toks.len() < n + 1 || n < 3 {
                        return Err(parse_err("ply", ln, "bad face row"));
                    }
                    let idx = toks[1..=n]
                        .iter()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| parse_err("ply", ln, "bad face index"))?;
                    for k in 1..n - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }
    let colors = if colors.is_empty() {
        None
    } else if colors.len() == vertices.len() {
        Some(colors)
    } else {
        return Err(parse_err("ply", 0, "partial vertex colors"));
    };
    Mesh::new(vertices, faces, colors)
}

pub fn write_ply(mesh: &Mesh<f64>) -> String {
    let mut out = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if !mesh.faces.is_empty() {
        let _ = writeln!(out, "element face {}", mesh.faces.len());
        out.push_str("property list uchar int vertex_indices\n");
    }
    out.push_str("end_header\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(out, "{} {} {}", v.x, v.y, v.z);
        if let Some(c) = &mesh.colors {
            let q = c[i].map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8);
            let _ = write!(out, " {} {} {}", q.x, q.y, q.z);
        }
        out.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

/// Reads a mesh, choosing the format from the file extension.
pub fn read_mesh(path: &Path) -> Result<Mesh<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    match extension(path).as_str() {
        "obj" => parse_obj(&text),
        "ply" => parse_ply(&text),
        ext => Err(Error::InvalidInput(format!(
            "unsupported mesh extension `{ext}`"
        ))),
    }
}

pub fn write_mesh(path: &Path, mesh: &Mesh<f64>) -> Result<()> {
    let text = match extension(path).as_str() {
        "obj" => write_obj(mesh),
        "ply" => write_ply(mesh),
        ext => {
            return Err(Error::InvalidInput(format!(
                "unsupported mesh extension `{ext}`"
            )))
        }
    };
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads the vertex set of an OBJ or PLY file as a point cloud.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud<f64>> {
    read_mesh(path).map(|m| PointCloud::new(m.vertices))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRI_OBJ: &str =
        "# tri\nv 0 0 0 0.5 0.5 0.5\nv 1 0 0 1 0.5 0.5\nv 0 1 0 0.5 1 0.5\nf 1 2 3\n";

    #[test]
    fn obj_with_colors() {
        let m = parse_obj(TRI_OBJ).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert_eq!(m.colors.as_ref().unwrap()[1], Vector3::new(1.0, 0.5, 0.5));
        assert_eq!(parse_obj(&write_obj(&m)).unwrap(), m);
    }

    #[test]
    fn obj_quads_and_slashes() {
        let m =
            parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(m.colors.is_none());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
        assert!(parse_obj("v 0 0 nan\n").is_err());
    }

    #[test]
    fn ply_colors_map_to_unit_range() {
        let text = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n3 0 1 2\n";
        let m = parse_ply(text).unwrap();
        assert_eq!(m.colors.as_ref().unwrap()[0], Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        let again = parse_ply(&write_ply(&m)).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn ply_point_cloud_without_faces() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n1 2 3\n";
        let m = parse_ply(text).unwrap();
        assert_eq!(m.vertices[1], Vector3::new(1.0, 2.0, 3.0));
        assert!(m.faces.is_empty());
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
    }
}
