use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MapIoError, MapKind};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// Describes the maps one model produced over one dataset.
///
/// Every path is relative to the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_id: String,
    pub blocks: usize,
    /// `[h, w]` token grid per block.
    pub grids: Vec<[usize; 2]>,
    pub kinds: Vec<MapKind>,
    #[serde(default)]
    pub dataset_id: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Producer configuration, recorded verbatim.
    #[serde(default)]
    pub config: serde_json::Value,
    pub stimuli: Vec<RunStimulus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStimulus {
    pub stimulus_id: String,
    pub feature_dim: String,
    /// Label map whose value-1 pixels mark group 1 (or the target).
    pub target_mask_path: String,
    /// Label map whose value-2 pixels mark group 2 (or the distractors).
    /// Usually the same file as `target_mask_path`.
    pub distractor_mask_path: String,
    pub maps: Vec<MapRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRef {
    pub block: usize,
    pub kind: MapKind,
    pub path: String,
}

impl RunStimulus {
    pub fn map(&self, block: usize, kind: MapKind) -> Option<&MapRef> {
        self.maps.iter().find(|m| m.block == block && m.kind == kind)
    }
}

/// `<stimulus_id>/block<k>_<kind>.npy`, relative to `maps/<model_id>/`.
pub fn map_rel_path(stimulus_id: &str, block: usize, kind: MapKind) -> String {
    format!("{stimulus_id}/block{block}_{}.npy", kind.name())
}

impl RunManifest {
    /// Number of map files the manifest references.
    pub fn map_count(&self) -> usize {
        self.stimuli.iter().map(|s| s.maps.len()).sum()
    }

    fn check_structure(&self) -> Result<(), MapIoError> {
        let invalid = |msg: String| Err(MapIoError::Invalid(msg));
        if self.blocks == 0 {
            return invalid("block count must be at least 1".into());
        }
        if self.grids.len() != self.blocks {
            return invalid(format!("{} grids listed for {} blocks", self.grids.len(), self.blocks));
        }
        if self.grids.iter().any(|g| g[0] == 0 || g[1] == 0) {
            return invalid("grid dims must be positive".into());
        }
        for s in &self.stimuli {
            for m in &s.maps {
                if m.block >= self.blocks {
                    return invalid(format!("{}: block {} out of range", s.stimulus_id, m.block));
                }
                if !self.kinds.contains(&m.kind) {
                    return invalid(format!("{}: kind {} not declared", s.stimulus_id, m.kind));
                }
            }
        }
        Ok(())
    }

    /// Every file the manifest references, resolved against `root`.
    pub fn referenced_files(&self, root: &Path) -> Vec<PathBuf> {
        let mut files = Vec::new();
        for s in &self.stimuli {
            files.push(root.join(&s.target_mask_path));
            if s.distractor_mask_path != s.target_mask_path {
                files.push(root.join(&s.distractor_mask_path));
            }
            files.extend(s.maps.iter().map(|m| root.join(&m.path)));
        }
        files
    }
}

pub fn write_manifest(manifest: &RunManifest, path: &Path) -> Result<(), MapIoError> {
    manifest.check_structure()?;
    let text = serde_json::to_string_pretty(manifest).map_err(|source| MapIoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Parses a run manifest and checks that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<RunManifest, MapIoError> {
    let text = fs::read_to_string(path)?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|source| MapIoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    manifest.check_structure()?;
    let root = path.parent().unwrap_or(Path::new("."));
    let missing: Vec<PathBuf> = manifest
        .referenced_files(root)
        .into_iter()
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(MapIoError::Integrity { missing });
    }
    Ok(manifest)
}

/// Ingestion manifest for externally supplied singleton images (O3-style).
///
/// Accepts either `{"records": [...]}` or a bare array of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct O3Manifest {
    pub records: Vec<O3Record>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct O3Record {
    #[serde(default)]
    pub id: Option<String>,
    pub image_path: String,
    /// Label map; value 1 marks the target.
    pub target_mask_path: String,
    /// Label map; value 2 marks distractors.
    pub distractor_mask_path: String,
}

impl O3Manifest {
    pub fn read(path: &Path) -> Result<Self, MapIoError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Either {
            Wrapped(O3Manifest),
            Bare(Vec<O3Record>),
        }
        let text = fs::read_to_string(path)?;
        let parsed: Either = serde_json::from_str(&text).map_err(|source| MapIoError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(match parsed {
            Either::Wrapped(m) => m,
            Either::Bare(records) => O3Manifest { records },
        })
    }

    /// Stable id for record `i`: the explicit id or the image file stem.
    pub fn record_id(&self, i: usize) -> String {
        let r = &self.records[i];
        r.id.clone().unwrap_or_else(|| {
            let stem = Path::new(&r.image_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            format!("o3-{i:05}-{stem}")
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_with(stimuli: usize, blocks: usize) -> RunManifest {
        RunManifest {
            model_id: "toy".into(),
            blocks,
            grids: vec![[2, 2]; blocks],
            kinds: MapKind::ALL.to_vec(),
            dataset_id: None,
            seed: Some(0),
            config: serde_json::Value::Null,
            stimuli: (0..stimuli)
                .map(|i| {
                    let id = format!("s{i}");
                    RunStimulus {
                        stimulus_id: id.clone(),
                        feature_dim: "hue".into(),
                        target_mask_path: format!("{id}.labels.png"),
                        distractor_mask_path: format!("{id}.labels.png"),
                        maps: (0..blocks)
                            .flat_map(|b| MapKind::ALL.map(|k| (b, k)))
                            .map(|(block, kind)| MapRef {
                                block,
                                kind,
                                path: map_rel_path(&id, block, kind),
                            })
                            .collect(),
                    }
                })
                .collect(),
        }
    }

    fn touch_all(m: &RunManifest, root: &Path) {
        for f in m.referenced_files(root) {
            fs::create_dir_all(f.parent().unwrap()).unwrap();
            fs::write(f, b"").unwrap();
        }
    }

    #[test]
    fn round_trip_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(600, 12);
        assert_eq!(m.map_count(), 14400);
        touch_all(&m, dir.path());
        let path = dir.path().join(RUN_MANIFEST_FILE);
        write_manifest(&m, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), m);
    }

    #[test]
    fn dangling_path_is_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(2, 1);
        touch_all(&m, dir.path());
        let gone = dir.path().join(map_rel_path("s1", 0, MapKind::FeatResid));
        fs::remove_file(&gone).unwrap();
        let path = dir.path().join(RUN_MANIFEST_FILE);
        write_manifest(&m, &path).unwrap();
        match read_manifest(&path) {
            Err(MapIoError::Integrity { missing }) => assert_eq!(missing, vec![gone]),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn empty_stimulus_list_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(0, 4);
        let path = dir.path().join(RUN_MANIFEST_FILE);
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.map_count(), 0);
    }

    #[test]
    fn block_out_of_range_rejected() {
        let mut m = manifest_with(1, 2);
        m.stimuli[0].maps[0].block = 5;
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            write_manifest(&m, &dir.path().join("m.json")),
            Err(MapIoError::Invalid(_))
        ));
    }

    #[test]
    fn o3_manifest_both_forms() {
        let dir = tempfile::tempdir().unwrap();
        let rec = r#"{"image_path": "a/img1.jpg", "target_mask_path": "a/m1.png", "distractor_mask_path": "a/m1.png"}"#;
        let bare = dir.path().join("bare.json");
        fs::write(&bare, format!("[{rec}]")).unwrap();
        let wrapped = dir.path().join("wrapped.json");
        fs::write(&wrapped, format!("{{\"records\": [{rec}]}}")).unwrap();
        let a = O3Manifest::read(&bare).unwrap();
        assert_eq!(a, O3Manifest::read(&wrapped).unwrap());
        assert_eq!(a.record_id(0), "o3-00000-img1");
    }
}
