//! Binary point files.
//!
//! A point file stores `n × d` little-endian `f64` values row-major with no
//! header. The shape and provenance live in a JSON sidecar next to it,
//! `<path>.json`, holding `{n, d, seed, spec?}`. Samples and ε-nets (members
//! flattened to `ℝ^{dk}`) share the format.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<DistributionSpec>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `points` (row-major, `meta.n × meta.d`) and its sidecar.
pub fn write_points(path: &Path, points: &[f64], meta: &Sidecar) -> Result<()> {
    if points.len() != meta.n * meta.d {
        return Err(Error::Dimension {
            expected: meta.n * meta.d,
            got: points.len(),
        });
    }
    let mut bytes = Vec::with_capacity(points.len() * 8);
    for v in points {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&side, json).map_err(|e| Error::io(side, e))
}

/// Reads a point file and its sidecar, checking that the sizes agree.
pub fn read_points(path: &Path) -> Result<(Vec<f64>, Sidecar)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: side.clone(),
        reason: e.to_string(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 || bytes.len() / 8 != meta.n * meta.d {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "{} bytes, expected {} for n = {}, d = {}",
                bytes.len(),
                meta.n * meta.d * 8,
                meta.n,
                meta.d
            ),
        });
    }
    let points = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((points, meta))
}

pub fn write_sample(path: &Path, sample: &Sample) -> Result<()> {
    let meta = Sidecar {
        n: sample.len(),
        d: sample.dim(),
        seed: sample.seed(),
        spec: sample.spec().cloned(),
    };
    write_points(path, sample.as_flat(), &meta)
}

pub fn read_sample(path: &Path) -> Result<Sample> {
    let (points, meta) = read_points(path)?;
    if meta.d == 0 {
        return Err(Error::Format {
            path: sidecar_path(path),
            reason: "dimension must be >= 1".into(),
        });
    }
    Ok(Sample::from_points(points, meta.d)?.with_provenance(meta.seed, meta.spec))
}
