//! Dense per-pixel coordinate maps and their PNG encoding.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use nalgebra::{Vector2, Vector3};
use png::{BitDepth, ColorType, Transformations};
use std::io::Cursor;
use std::path::Path;

/// Largest 16-bit channel value; coordinates are stored as `round(c * QMAX)`.
pub const QMAX: u16 = u16::MAX;

/// An H×W map of 3-channel coordinates in [0, 1] with a validity mask.
///
/// Row-major, top-left origin. Unmasked pixels always hold zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap<T: Real> {
    width: usize,
    height: usize,
    coords: Vec<Vector3<T>>,
    mask: Vec<bool>,
}

impl<T: Real> CoordinateMap<T> {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            coords: vec![Vector3::zeros(); width * height],
            mask: vec![false; width * height],
        }
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        coords: Vec<Vector3<T>>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let n = width * height;
        if coords.len() != n || mask.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{width}x{height} map needs {n} entries, got {} coords and {} mask bits",
                coords.len(),
                mask.len()
            )));
        }
        for (i, (c, &m)) in coords.iter().zip(&mask).enumerate() {
            let ok = if m {
                c.iter().all(|&v| v >= T::zero() && v <= T::one())
            } else {
                c.iter().all(|&v| v == T::zero())
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "pixel {} ({}, {}) violates the mask/coords invariant",
                    i,
                    i % width.max(1),
                    i / width.max(1)
                )));
            }
        }
        Ok(Self {
            width,
            height,
            coords,
            mask,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coords(&self) -> &[Vector3<T>] {
        &self.coords
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    fn idx(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    /// Coordinate at (x, y) if the pixel is masked.
    pub fn get(&self, x: usize, y: usize) -> Option<Vector3<T>> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = self.idx(x, y);
        self.mask[i].then(|| self.coords[i])
    }

    /// Sets a masked pixel, clamping each channel into [0, 1].
    pub fn set(&mut self, x: usize, y: usize, c: Vector3<T>) {
        let i = self.idx(x, y);
        self.coords[i] = c.map(|v| v.clamp(T::zero(), T::one()));
        self.mask[i] = true;
    }

    pub fn clear(&mut self, x: usize, y: usize) {
        let i = self.idx(x, y);
        self.coords[i] = Vector3::zeros();
        self.mask[i] = false;
    }

    pub fn popcount(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.popcount() == 0
    }

    /// Snaps every channel onto the 16-bit grid used by the PNG format.
    pub fn quantized(&self) -> Self {
        let q = lit::<T>(QMAX as f64);
        let mut out = self.clone();
        for c in &mut out.coords {
            *c = c.map(|v| (v * q).round() / q);
        }
        out
    }

    pub fn cast<U: Real>(&self) -> CoordinateMap<U> {
        CoordinateMap {
            width: self.width,
            height: self.height,
            coords: self
                .coords
                .iter()
                .map(|c| c.map(|v| lit::<U>(v.as_f64())))
                .collect(),
            mask: self.mask.clone(),
        }
    }
}

/// 2D-3D correspondences of a map: pixel centres and coordinates shifted
/// back to NOCS units (`coords - 0.5`).
pub fn map_points<T: Real>(map: &CoordinateMap<T>) -> (Vec<Vector2<T>>, Vec<Vector3<T>>) {
    let half = lit::<T>(0.5);
    let mut px = Vec::new();
    let mut pts = Vec::new();
    for y in 0..map.height {
        for x in 0..map.width {
            let i = map.idx(x, y);
            if map.mask[i] {
                px.push(Vector2::new(
                    lit::<T>(x as f64) + half,
                    lit::<T>(y as f64) + half,
                ));
                pts.push(map.coords[i] - Vector3::repeat(half));
            }
        }
    }
    (px, pts)
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::Png(e.to_string())
}

impl CoordinateMap<f64> {
    /// 16-bit RGB PNG of the coordinates.
    pub fn coords_png(&self) -> Result<Vec<u8>> {
        let mut data = Vec::with_capacity(self.coords.len() * 6);
        for c in &self.coords {
            for v in c.iter() {
                let q = (v * QMAX as f64).round().clamp(0.0, QMAX as f64) as u16;
                data.extend_from_slice(&q.to_be_bytes());
            }
        }
        encode(
            self.width,
            self.height,
            ColorType::Rgb,
            BitDepth::Sixteen,
            &data,
        )
    }

    /// 1-bit grayscale PNG of the mask.
    pub fn mask_png(&self) -> Result<Vec<u8>> {
        let row = self.width.div_ceil(8);
        let mut data = vec![0u8; row * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.mask[self.idx(x, y)] {
                    data[y * row + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        encode(
            self.width,
            self.height,
            ColorType::Grayscale,
            BitDepth::One,
            &data,
        )
    }

    /// Decodes a map from its coordinate and mask PNGs. Coordinates outside
    /// the mask are zeroed.
    pub fn from_png(coords_png: &[u8], mask_png: &[u8]) -> Result<Self> {
        let (w, h, coords) = decode_coords(coords_png)?;
        let (mw, mh, mask) = decode_mask(mask_png)?;
        if (w, h) != (mw, mh) {
            return Err(Error::ShapeMismatch(format!(
                "coords are {w}x{h} but mask is {mw}x{mh}"
            )));
        }
        let coords = coords
            .into_iter()
            .zip(&mask)
            .map(|(c, &m)| if m { c } else { Vector3::zeros() })
            .collect();
        Self::from_parts(w, h, coords, mask)
    }

    pub fn write_png(&self, coords_path: &Path, mask_path: &Path) -> Result<()> {
        write_bytes(coords_path, &self.coords_png()?)?;
        write_bytes(mask_path, &self.mask_png()?)
    }

    pub fn read_png(coords_path: &Path, mask_path: &Path) -> Result<Self> {
        let c = std::fs::read(coords_path)
            .map_err(|e| Error::io(coords_path.display().to_string(), e))?;
        let m =
            std::fs::read(mask_path).map_err(|e| Error::io(mask_path.display().to_string(), e))?;
        Self::from_png(&c, &m)
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn encode(
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: &[u8],
) -> Result<Vec<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("cannot encode an empty image".into()));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(data).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

fn decode(bytes: &[u8], transform: Transformations) -> Result<(png::OutputInfo, Vec<u8>)> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(transform);
    let mut reader = dec.read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn decode_coords(bytes: &[u8]) -> Result<(usize, usize, Vec<Vector3<f64>>)> {
    let (info, buf) = decode(bytes, Transformations::IDENTITY)?;
    if info.color_type != ColorType::Rgb || info.bit_depth != BitDepth::Sixteen {
        return Err(Error::Png(format!(
            "coordinate map must be 16-bit RGB, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut coords = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let px = &row[x * 6..x * 6 + 6];
            let ch = |k: usize| u16::from_be_bytes([px[2 * k], px[2 * k + 1]]) as f64 / QMAX as f64;
            coords.push(Vector3::new(ch(0), ch(1), ch(2)));
        }
    }
    Ok((w, h, coords))
}

fn decode_mask(bytes: &[u8]) -> Result<(usize, usize, Vec<bool>)> {
    let (info, buf) = decode(bytes, Transformations::EXPAND)?;
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        other => return Err(Error::Png(format!("mask must be grayscale, got {other:?}"))),
    };
    let bytes_per_sample = if info.bit_depth == BitDepth::Sixteen {
        2
    } else {
        1
    };
    let stride = channels * bytes_per_sample;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            mask.push(
                row[x * stride..x * stride + bytes_per_sample]
                    .iter()
                    .any(|&b| b != 0),
            );
        }
    }
    Ok((w, h, mask))
}
