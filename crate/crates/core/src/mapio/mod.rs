//! Exchange format for per-block model maps.
//!
//! Each map is an NPY v1.0 file (little-endian float32, C order, shape
//! `[H, W, C]`) with a `<name>.meta.json` sidecar carrying its kind, block,
//! model and stimulus. Runs are described by a [`RunManifest`] stored at
//! `maps/<model_id>/run_manifest.json`; map files live at
//! `maps/<model_id>/<stimulus_id>/block<k>_<kind>.npy`.

mod manifest;
pub mod npy;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use manifest::{
    map_rel_path, read_manifest, write_manifest, MapRef, O3Manifest, O3Record, RunManifest,
    RunStimulus, RUN_MANIFEST_FILE,
};

#[derive(Debug, Error)]
pub enum MapIoError {
    #[error("malformed NPY header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0}; only little-endian float32 is accepted")]
    Dtype(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("manifest references missing files: {}", .missing.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Integrity { missing: Vec<PathBuf> },
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which recording point of an encoder block a map comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Attention-module output before the residual addition.
    AttnOut,
    /// Token features after the residual addition.
    FeatResid,
}

impl MapKind {
    pub const ALL: [MapKind; 2] = [MapKind::AttnOut, MapKind::FeatResid];

    pub fn name(self) -> &'static str {
        match self {
            MapKind::AttnOut => "attn_out",
            MapKind::FeatResid => "feat_resid",
        }
    }
}

impl std::str::FromStr for MapKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attn_out" => Ok(MapKind::AttnOut),
            "feat_resid" => Ok(MapKind::FeatResid),
            other => Err(format!("unknown map kind {other:?} (expected attn_out or feat_resid)")),
        }
    }
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One `H x W x C` map for a (stimulus, block, kind) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub data: Array3<f32>,
    pub kind: MapKind,
    pub block_index: usize,
    pub model_id: String,
    pub stimulus_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MapMeta {
    kind: MapKind,
    block_index: usize,
    model_id: String,
    stimulus_id: String,
    shape: [usize; 3],
}

/// `block3_attn_out.npy` -> `block3_attn_out.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

impl MapStack {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    fn validate(&self) -> Result<(), MapIoError> {
        let (h, w, c) = self.dims();
        if h == 0 || w == 0 || c == 0 {
            return Err(MapIoError::Shape(format!("map dims must be >= 1, got {h}x{w}x{c}")));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(MapIoError::NonFinite { index });
        }
        Ok(())
    }
}

/// Writes the NPY file and its metadata sidecar.
pub fn write_map(stack: &MapStack, path: &Path) -> Result<(), MapIoError> {
    stack.validate()?;
    let (h, w, c) = stack.dims();
    let mut bytes = Vec::new();
    // iter() walks logical (row-major) order regardless of memory layout.
    let flat: Vec<f32> = stack.data.iter().copied().collect();
    npy::write_f32(&mut bytes, &[h, w, c], &flat)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    let meta = MapMeta {
        kind: stack.kind,
        block_index: stack.block_index,
        model_id: stack.model_id.clone(),
        stimulus_id: stack.stimulus_id.clone(),
        shape: [h, w, c],
    };
    let sidecar = sidecar_path(path);
    let text = serde_json::to_string_pretty(&meta).map_err(|source| MapIoError::Json {
        path: sidecar.clone(),
        source,
    })?;
    fs::write(sidecar, text + "\n")?;
    Ok(())
}

/// Reads a bare NPY tensor of any rank.
pub fn read_npy(path: &Path) -> Result<(Vec<usize>, Vec<f32>), MapIoError> {
    let file = fs::File::open(path)?;
    npy::read_f32(&mut BufReader::new(file))
}

/// Reads a map and its sidecar; the tensor must be rank 3 and finite.
pub fn read_map(path: &Path) -> Result<MapStack, MapIoError> {
    let (shape, data) = read_npy(path)?;
    let [h, w, c] = shape[..] else {
        return Err(MapIoError::Shape(format!("expected a rank-3 [H, W, C] map, got shape {shape:?}")));
    };
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar)?;
    let meta: MapMeta = serde_json::from_str(&text).map_err(|source| MapIoError::Json {
        path: sidecar.clone(),
        source,
    })?;
    if meta.shape != [h, w, c] {
        return Err(MapIoError::Shape(format!(
            "sidecar shape {:?} disagrees with tensor shape {:?}",
            meta.shape,
            [h, w, c]
        )));
    }
    let data = Array3::from_shape_vec((h, w, c), data).map_err(|e| MapIoError::Shape(e.to_string()))?;
    let stack = MapStack {
        data,
        kind: meta.kind,
        block_index: meta.block_index,
        model_id: meta.model_id,
        stimulus_id: meta.stimulus_id,
    };
    stack.validate()?;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(values: Vec<f32>, dims: (usize, usize, usize)) -> MapStack {
        MapStack {
            data: Array3::from_shape_vec(dims, values).unwrap(),
            kind: MapKind::AttnOut,
            block_index: 2,
            model_id: "toy".into(),
            stimulus_id: "s0".into(),
        }
    }

    #[test]
    fn round_trip_2x2x1() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("block2_attn_out.npy");
        let s = stack(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0e38], (2, 2, 1));
        write_map(&s, &path).unwrap();
        assert!(dir.path().join("block2_attn_out.meta.json").exists());
        let back = read_map(&path).unwrap();
        assert_eq!(back, s);
        let bits = |m: &MapStack| m.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&s));
    }

    #[test]
    fn nan_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let s = stack(vec![1.0, f32::NAN], (1, 2, 1));
        let err = write_map(&s, &dir.path().join("x.npy")).unwrap_err();
        assert!(matches!(err, MapIoError::NonFinite { index: 1 }));
        assert!(!dir.path().join("x.npy").exists());
    }

    #[test]
    fn missing_magic_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.npy");
        fs::write(&path, b"not an npy file at all").unwrap();
        assert!(matches!(read_map(&path), Err(MapIoError::MalformedHeader(_))));
    }

    #[test]
    fn rank_two_tensor_is_not_a_map() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.npy");
        let mut bytes = Vec::new();
        npy::write_f32(&mut bytes, &[2, 2], &[0.0; 4]).unwrap();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_map(&path), Err(MapIoError::Shape(_))));
    }

    #[test]
    fn column_major_array_written_in_logical_order() {
        use ndarray::ShapeBuilder;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.npy");
        let mut s = stack(vec![0.0; 6], (1, 2, 3));
        s.data = Array3::from_shape_vec((1, 2, 3).f(), (0..6).map(|v| v as f32).collect()).unwrap();
        write_map(&s, &path).unwrap();
        assert_eq!(read_map(&path).unwrap().data, s.data);
    }
}
