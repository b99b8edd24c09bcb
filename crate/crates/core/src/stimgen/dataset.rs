//! Batch generation of stimulus datasets on disk.
//!
//! Layout: `<out>/<version>/<feature_dim>/<id>.png` with the label map next to
//! it as `<id>.labels.png`, and `<out>/manifest.json` listing every record
//! with paths relative to `<out>`.
//!
//! Per-stimulus seeds are derived from the global seed with SplitMix64:
//! `seed = mix(mix(mix(global) ^ dim_index) ^ stimulus_index)`, where
//! `dim_index` is the position of the feature dimension in its `ALL` list.

use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    gen_grouping_stimulus, gen_p3_stimulus, FeatureDim, GroupingSpec, SingletonDim, SingletonSpec,
    StimError, Stimulus, StimulusSpec, Version, LABEL_GROUP2,
};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub version: String,
    pub seed: u64,
    pub records: Vec<DatasetRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    /// Relative to the manifest directory.
    pub image_path: String,
    /// Relative to the manifest directory.
    pub mask_path: String,
    pub feature_dim: String,
    pub spec: StimulusSpec,
}

impl DatasetRecord {
    pub fn image_file(&self, root: &Path) -> PathBuf {
        root.join(&self.image_path)
    }

    pub fn mask_file(&self, root: &Path) -> PathBuf {
        root.join(&self.mask_path)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-stimulus seed from the global seed, dimension index and stimulus index.
pub fn derive_seed(global: u64, dim_index: u64, stimulus_index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(global) ^ dim_index) ^ stimulus_index)
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self, StimError> {
        let text = fs::read_to_string(path).map_err(|source| StimError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| StimError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), StimError> {
        let text = serde_json::to_string_pretty(self).map_err(|source| StimError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|source| StimError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Reads a label map PNG, rejecting values outside {0, 1, 2}.
pub fn read_label_png(path: &Path) -> Result<GrayImage, StimError> {
    let img = image::open(path)
        .map_err(|source| StimError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    if let Some(bad) = img.pixels().find(|p| p.0[0] > LABEL_GROUP2) {
        return Err(StimError::RejectedSpec(format!(
            "{} holds label {} outside {{0, 1, 2}}",
            path.display(),
            bad.0[0]
        )));
    }
    Ok(img)
}

fn check_out_dir(out_dir: &Path, dataset_id: &str) -> Result<(), StimError> {
    let manifest = out_dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let existing = DatasetManifest::read(&manifest)?;
        return Err(StimError::DuplicateDataset(if existing.dataset_id == dataset_id {
            existing.dataset_id
        } else {
            format!("{} (requested {dataset_id})", existing.dataset_id)
        }));
    }
    fs::create_dir_all(out_dir).map_err(|source| StimError::Io {
        path: out_dir.to_path_buf(),
        source,
    })
}

fn write_stimulus(stim: &Stimulus, out_dir: &Path, rel_dir: &str, id: &str) -> Result<(String, String), StimError> {
    let dir = out_dir.join(rel_dir);
    fs::create_dir_all(&dir).map_err(|source| StimError::Io {
        path: dir.clone(),
        source,
    })?;
    let image_rel = format!("{rel_dir}/{id}.png");
    let mask_rel = format!("{rel_dir}/{id}.labels.png");
    for (img_rel, result) in [
        (&image_rel, stim.image.save(out_dir.join(&image_rel))),
        (&mask_rel, stim.labels.save(out_dir.join(&mask_rel))),
    ] {
        result.map_err(|source| StimError::Image {
            path: out_dir.join(img_rel),
            source,
        })?;
    }
    Ok((image_rel, mask_rel))
}

/// Generates `count_per_dim` stimuli per feature dimension for each version.
pub fn gen_grouping_dataset(
    versions: &[Version],
    count_per_dim: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest, StimError> {
    if count_per_dim == 0 || versions.is_empty() {
        return Err(StimError::RejectedSpec(
            "need at least one version and one stimulus per dimension".into(),
        ));
    }
    let version_tag = versions.iter().map(|v| v.name()).collect::<Vec<_>>().join("+");
    let dataset_id = format!("grouping-{version_tag}-n{count_per_dim}-s{seed}");
    check_out_dir(out_dir, &dataset_id)?;

    let jobs: Vec<(Version, FeatureDim, usize)> = versions
        .iter()
        .flat_map(|&v| FeatureDim::ALL.into_iter().flat_map(move |d| (0..count_per_dim).map(move |i| (v, d, i))))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(version, dim, i)| {
            let spec = GroupingSpec::sample(dim, version, derive_seed(seed, dim.index(), i as u64));
            let stim = gen_grouping_stimulus(&spec)?;
            let id = format!("{}-{}-{i:04}", version.name(), dim.name());
            let (image_path, mask_path) =
                write_stimulus(&stim, out_dir, &format!("{}/{}", version.name(), dim.name()), &id)?;
            Ok(DatasetRecord {
                id,
                image_path,
                mask_path,
                feature_dim: dim.name().to_string(),
                spec: stim.spec,
            })
        })
        .collect::<Result<Vec<_>, StimError>>()?;

    let manifest = DatasetManifest {
        dataset_id,
        version: version_tag,
        seed,
        records,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Generates `count` singleton displays, dealt round-robin over color,
/// orientation and size.
pub fn gen_p3_dataset(count: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest, StimError> {
    if count == 0 {
        return Err(StimError::RejectedSpec("count must be at least 1".into()));
    }
    let dataset_id = format!("p3-n{count}-s{seed}");
    check_out_dir(out_dir, &dataset_id)?;

    let mut jobs: Vec<(SingletonDim, usize)> = (0..count)
        .map(|k| (SingletonDim::ALL[k % 3], k / 3))
        .collect();
    jobs.sort_by_key(|&(d, i)| (d, i));
    let records = jobs
        .par_iter()
        .map(|&(dim, i)| {
            let spec = SingletonSpec::sample(dim, derive_seed(seed, dim.index(), i as u64));
            let stim = gen_p3_stimulus(&spec)?;
            let id = format!("p3-{}-{i:04}", dim.name());
            let (image_path, mask_path) = write_stimulus(&stim, out_dir, &format!("p3/{}", dim.name()), &id)?;
            Ok(DatasetRecord {
                id,
                image_path,
                mask_path,
                feature_dim: dim.name().to_string(),
                spec: stim.spec,
            })
        })
        .collect::<Result<Vec<_>, StimError>>()?;

    let manifest = DatasetManifest {
        dataset_id,
        version: "p3".into(),
        seed,
        records,
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for d in 0..6 {
            for i in 0..100 {
                assert!(seen.insert(derive_seed(42, d, i)));
            }
        }
        assert_eq!(derive_seed(42, 1, 2), derive_seed(42, 1, 2));
    }

    #[test]
    fn zero_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(gen_grouping_dataset(&[Version::V16], 0, 1, dir.path()).is_err());
        assert!(gen_p3_dataset(0, 1, dir.path()).is_err());
    }
}
