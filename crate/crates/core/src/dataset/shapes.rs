//! Built-in parametric instance library.
//!
//! Every category is a small closed solid (or a union of them) with nominal
//! dimensions; instances jitter those dimensions. Symmetric categories revolve
//! about +y so they match the default symmetry table.

use crate::error::{Error, Result};
use crate::geometry::{color_code, normalize_to_nocs, Mesh, Rotation};
use crate::symmetry::Category;
use nalgebra::Vector3;
use rand::Rng;
use std::collections::BTreeMap;

const SEGMENTS: usize = 32;

/// Axis-aligned box centred at `c`.
pub fn cuboid(c: Vector3<f64>, e: Vector3<f64>) -> Mesh<f64> {
    let h = e * 0.5;
    let vertices = (0..8)
        .map(|i| {
            c + Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    Mesh {
        vertices,
        faces,
        colors: None,
    }
}

/// Closed surface of revolution about +y from a `(radius, y)` profile
/// ordered bottom to top; both ends are capped.
pub fn lathe(profile: &[(f64, f64)], segments: usize) -> Mesh<f64> {
    let mut vertices = Vec::with_capacity(profile.len() * segments + 2);
    for &(r, y) in profile {
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(Vector3::new(r * a.cos(), y, r * a.sin()));
        }
    }
    let mut faces = Vec::new();
    for ring in 0..profile.len() - 1 {
        for s in 0..segments {
            let (a, b) = (ring * segments + s, ring * segments + (s + 1) % segments);
            let (c, d) = (a + segments, b + segments);
            faces.push([a, c, b]);
            faces.push([b, c, d]);
        }
    }
    let bottom = vertices.len();
    vertices.push(Vector3::new(0.0, profile[0].1, 0.0));
    let top = vertices.len();
    vertices.push(Vector3::new(0.0, profile[profile.len() - 1].1, 0.0));
    let last = (profile.len() - 1) * segments;
    for s in 0..segments {
        faces.push([bottom, s, (s + 1) % segments]);
        faces.push([top, last + (s + 1) % segments, last + s]);
    }
    Mesh {
        vertices,
        faces,
        colors: None,
    }
}

/// Concatenates meshes without merging vertices.
pub fn union(parts: &[Mesh<f64>]) -> Mesh<f64> {
    let mut out = Mesh {
        vertices: Vec::new(),
        faces: Vec::new(),
        colors: None,
    };
    for p in parts {
        let base = out.vertices.len();
        out.vertices.extend_from_slice(&p.vertices);
        out.faces
            .extend(p.faces.iter().map(|f| f.map(|i| i + base)));
    }
    out
}

/// Dimension multipliers; all ones for the nominal (consensus) shape.
fn jitter<R: Rng + ?Sized>(rng: Option<&mut R>, n: usize, spread: f64) -> Vec<f64> {
    match rng {
        Some(rng) => (0..n)
            .map(|_| 1.0 + rng.random_range(-spread..spread))
            .collect(),
        None => vec![1.0; n],
    }
}

/// Raw (unnormalized) shape of `category`; `rng` jitters its dimensions.
pub fn parametric_shape<R: Rng + ?Sized>(category: Category, rng: Option<&mut R>) -> Mesh<f64> {
    match category {
        Category::Bottle => {
            let j = jitter(rng, 4, 0.25);
            let (r, h, rn, hn) = (0.35 * j[0], 1.0 * j[1], 0.12 * j[2], 0.35 * j[3]);
            lathe(
                &[(r, 0.0), (r, h), (rn, h + 0.25), (rn, h + 0.25 + hn)],
                SEGMENTS,
            )
        }
        Category::Bowl => {
            let j = jitter(rng, 3, 0.25);
            let (rb, rt, h) = (0.3 * j[0], 0.5 * j[1], 0.3 * j[2]);
            lathe(&[(rb, 0.0), (rt * 0.9, h * 0.6), (rt, h)], SEGMENTS)
        }
        Category::Can => {
            let j = jitter(rng, 2, 0.25);
            let (r, h) = (0.3 * j[0], 0.8 * j[1]);
            lathe(&[(r, 0.0), (r, h)], SEGMENTS)
        }
        Category::Camera => {
            let j = jitter(rng, 5, 0.2);
            let body = Vector3::new(1.0 * j[0], 0.65 * j[1], 0.45 * j[2]);
            let (lr, ll) = (0.22 * j[3], 0.35 * j[4]);
            let lens = lathe(&[(lr, 0.0), (lr, ll)], SEGMENTS);
            let to_z = Rotation::about_x(std::f64::consts::FRAC_PI_2);
            let lens = lens.map_vertices(|v| to_z.apply(v) + Vector3::new(0.0, 0.0, body.z * 0.5));
            union(&[cuboid(Vector3::zeros(), body), lens])
        }
        Category::Laptop => {
            let j = jitter(rng, 4, 0.2);
            let (w, d, t) = (1.0 * j[0], 0.7 * j[1], 0.04);
            let open = (110.0 * j[2]).to_radians();
            let screen_d = 0.65 * j[3];
            let base = cuboid(Vector3::new(0.0, t * 0.5, 0.0), Vector3::new(w, t, d));
            // Screen hinged at the back edge (z = -d/2) and opened by `open`.
            let screen = cuboid(
                Vector3::new(0.0, t * 0.5, screen_d * 0.5),
                Vector3::new(w, t, screen_d),
            );
            let hinge = Vector3::new(0.0, t, -d * 0.5);
            let rot = Rotation::about_x(-open);
            let screen =
                screen.map_vertices(|v| hinge + rot.apply(&(v - Vector3::new(0.0, t, 0.0))));
            union(&[base, screen])
        }
        Category::Mug => {
            let j = jitter(rng, 4, 0.2);
            let (r, h) = (0.35 * j[0], 0.75 * j[1]);
            let body = lathe(&[(r, 0.0), (r, h)], SEGMENTS);
            let handle = cuboid(
                Vector3::new(r + 0.12 * j[2], h * 0.5, 0.0),
                Vector3::new(0.28 * j[2], 0.5 * h * j[3], 0.08),
            );
            union(&[body, handle])
        }
    }
}

/// Normalizes to NOCS and color-codes by coordinates.
pub fn to_nocs_model(mesh: &Mesh<f64>) -> Result<Mesh<f64>> {
    let (m, _) = normalize_to_nocs(mesh)?;
    color_code(&m)
}

/// Named NOCS models per category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceLibrary {
    pub entries: BTreeMap<Category, Vec<(String, Mesh<f64>)>>,
}

impl InstanceLibrary {
    /// `per_category` jittered parametric instances of each category.
    pub fn builtin<R: Rng + ?Sized>(
        categories: &[Category],
        per_category: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lib = Self::default();
        for &c in categories {
            for i in 0..per_category {
                let raw = parametric_shape(c, Some(&mut *rng));
                lib.insert(c, format!("builtin:{c}/{i}"), &raw)?;
            }
        }
        Ok(lib)
    }

    /// Adds an external mesh after normalizing and color-coding it.
    pub fn insert(
        &mut self,
        category: Category,
        reference: String,
        mesh: &Mesh<f64>,
    ) -> Result<()> {
        let m = to_nocs_model(mesh)?;
        self.entries
            .entry(category)
            .or_default()
            .push((reference, m));
        Ok(())
    }

    pub fn get(&self, category: Category) -> Result<&[(String, Mesh<f64>)]> {
        match self.entries.get(&category) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::InvalidInput(format!(
                "instance library has no `{category}` meshes"
            ))),
        }
    }
}

/// One NOCS model per category.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsensusLibrary {
    pub entries: BTreeMap<Category, Mesh<f64>>,
}

impl ConsensusLibrary {
    /// Nominal (un-jittered) parametric shapes.
    pub fn builtin(categories: &[Category]) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for &c in categories {
            entries.insert(
                c,
                to_nocs_model(&parametric_shape::<rand_chacha::ChaCha8Rng>(c, None))?,
            );
        }
        Ok(Self { entries })
    }

    pub fn get(&self, category: Category) -> Result<&Mesh<f64>> {
        self.entries.get(&category).ok_or_else(|| {
            Error::InvalidInput(format!("consensus library has no `{category}` model"))
        })
    }
}
