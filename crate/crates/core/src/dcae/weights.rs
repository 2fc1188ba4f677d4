//! Parameter bundles as a flat little-endian f32 blob plus a JSON manifest.

use super::{DcaeConfig, DcaeWeights};
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub format: String,
    pub config: DcaeConfig,
    pub tensors: Vec<TensorEntry>,
}

/// Serializes weights; returns the blob and the manifest.
pub fn to_bytes<T: Real>(cfg: &DcaeConfig, weights: &DcaeWeights<T>) -> (Vec<u8>, WeightsManifest) {
    let mut blob = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, shape, data) in weights.named() {
        for v in data {
            blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape,
            offset,
        });
        offset += data.len();
    }
    (
        blob,
        WeightsManifest {
            format: FORMAT.to_string(),
            config: cfg.clone(),
            tensors,
        },
    )
}

/// Rebuilds weights from a blob and manifest, checking every shape against
/// the manifest's config.
pub fn from_bytes<T: Real>(blob: &[u8], manifest: &WeightsManifest) -> Result<DcaeWeights<T>> {
    if manifest.format != FORMAT {
        return Err(Error::InvalidInput(format!(
            "unsupported weights format `{}`",
            manifest.format
        )));
    }
    if !blob.len().is_multiple_of(4) {
        return Err(Error::ShapeMismatch(format!(
            "blob length {} is not a multiple of 4",
            blob.len()
        )));
    }
    let values: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut weights = DcaeWeights::<T>::zeros(&manifest.config)?;
    let mut filled = 0;
    for (name, shape, data) in weights.named_mut() {
        let entry = manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("manifest lacks tensor `{name}`")))?;
        if entry.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                entry.shape, shape
            )));
        }
        let end = entry.offset + data.len();
        if end > values.len() {
            return Err(Error::ShapeMismatch(format!(
                "tensor `{name}` runs past the end of the blob"
            )));
        }
        for (d, &v) in data.iter_mut().zip(&values[entry.offset..end]) {
            *d = lit(v as f64);
        }
        filled += 1;
    }
    if filled != manifest.tensors.len() {
        return Err(Error::InvalidInput("manifest lists unknown tensors".into()));
    }
    Ok(weights)
}

pub fn write_weights<T: Real>(
    cfg: &DcaeConfig,
    weights: &DcaeWeights<T>,
    blob_path: &Path,
    manifest_path: &Path,
) -> Result<()> {
    let (blob, manifest) = to_bytes(cfg, weights);
    std::fs::write(blob_path, blob).map_err(|e| Error::io(blob_path.display().to_string(), e))?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(manifest_path, json)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))
}

pub fn read_weights<T: Real>(
    blob_path: &Path,
    manifest_path: &Path,
) -> Result<(DcaeConfig, DcaeWeights<T>)> {
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: WeightsManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let blob =
        std::fs::read(blob_path).map_err(|e| Error::io(blob_path.display().to_string(), e))?;
    let w = from_bytes(&blob, &manifest)?;
    Ok((manifest.config, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_files() {
        let cfg = DcaeConfig::small();
        let w = DcaeWeights::<f64>::random(&cfg, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (b, m) = (dir.path().join("w.bin"), dir.path().join("w.json"));
        write_weights(&cfg, &w, &b, &m).unwrap();
        let (cfg2, w2) = read_weights::<f64>(&b, &m).unwrap();
        assert_eq!(cfg, cfg2);
        for ((n1, _, a), (n2, _, b)) in w.named().into_iter().zip(w2.named()) {
            assert_eq!(n1, n2);
            for (x, y) in a.iter().zip(b) {
                assert_eq!((*x as f32) as f64, *y);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let cfg = DcaeConfig::small();
        let w = DcaeWeights::<f64>::random(&cfg, 3).unwrap();
        let (blob, mut manifest) = to_bytes(&cfg, &w);
        manifest.tensors[0].shape[0] += 1;
        assert!(matches!(
            from_bytes::<f64>(&blob, &manifest),
            Err(Error::ShapeMismatch(_))
        ));
        let (_, manifest) = to_bytes(&cfg, &w);
        assert!(matches!(
            from_bytes::<f64>(&blob[..blob.len() - 4], &manifest),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
