use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use grouplens_core::mapio::{
    map_rel_path, write_manifest, write_map, MapKind, MapRef, MapStack, O3Manifest, RunManifest, RunStimulus,
    RUN_MANIFEST_FILE,
};
use grouplens_core::stimgen::DatasetManifest;
use grouplens_core::toyvit::{forward, image_to_array, ModelConfig, Weights};
use image::imageops::FilterType;
use rayon::prelude::*;
use serde_json::json;

/// One image to push through the model, with absolute paths.
struct Input {
    id: String,
    feature_dim: String,
    image: PathBuf,
    target_mask: PathBuf,
    distractor_mask: PathBuf,
}

pub enum Source<'a> {
    Dataset(&'a Path),
    O3(&'a Path),
}

pub struct RunToyArgs<'a> {
    pub source: Source<'a>,
    pub config: ModelConfig,
    pub weights: Option<&'a Path>,
    pub save_weights: Option<&'a Path>,
    pub out: &'a Path,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))
}

fn inputs(source: &Source) -> Result<(Option<String>, Vec<Input>)> {
    match *source {
        Source::Dataset(path) => {
            let manifest = DatasetManifest::read(path)?;
            let root = absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
            let inputs = manifest
                .records
                .iter()
                .map(|r| Input {
                    id: r.id.clone(),
                    feature_dim: r.feature_dim.clone(),
                    image: r.image_file(&root),
                    target_mask: r.mask_file(&root),
                    distractor_mask: r.mask_file(&root),
                })
                .collect();
            Ok((Some(manifest.dataset_id), inputs))
        }
        Source::O3(path) => {
            let manifest = O3Manifest::read(path)?;
            let root = absolute(path)?.parent().map(Path::to_path_buf).unwrap_or_default();
            let inputs = manifest
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| Input {
                    id: manifest.record_id(i),
                    feature_dim: "o3".into(),
                    image: root.join(&r.image_path),
                    target_mask: root.join(&r.target_mask_path),
                    distractor_mask: root.join(&r.distractor_mask_path),
                })
                .collect();
            Ok((None, inputs))
        }
    }
}

fn relative(path: &Path, base: &Path) -> Result<String> {
    let abs = absolute(path)?;
    let rel = pathdiff::diff_paths(&abs, base).unwrap_or(abs);
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

/// Runs the toy model over every input and writes maps plus a run manifest.
/// Returns the manifest path.
pub fn run_toy(args: &RunToyArgs) -> Result<PathBuf> {
    let (config, weights) = match args.weights {
        Some(dir) => Weights::load(dir).with_context(|| format!("loading weights from {}", dir.display()))?,
        None => {
            args.config.validate()?;
            (args.config.clone(), Weights::init(&args.config)?)
        }
    };
    if let Some(dir) = args.save_weights {
        weights.save(&config, dir)?;
    }
    let (dataset_id, inputs) = inputs(&args.source)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = inputs.iter().find(|i| !seen.insert(i.id.as_str())) {
        bail!("duplicate stimulus id {}", dup.id);
    }

    let model_id = config.model_id();
    let run_dir = args.out.join(&model_id);
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    let run_dir = absolute(&run_dir)?;

    let stimuli = inputs
        .par_iter()
        .map(|input| -> Result<RunStimulus> {
            let img = image::open(&input.image)
                .with_context(|| format!("reading {}", input.image.display()))?
                .to_rgb8();
            let size = config.image_size as u32;
            let img = if img.dimensions() == (size, size) {
                img
            } else {
                image::imageops::resize(&img, size, size, FilterType::Triangle)
            };
            let trace = forward(&image_to_array(&img), &config, &weights).with_context(|| format!("stimulus {}", input.id))?;
            let mut maps = Vec::with_capacity(2 * trace.blocks.len());
            for (block, bt) in trace.blocks.iter().enumerate() {
                for (kind, data) in [(MapKind::AttnOut, &bt.attn_out), (MapKind::FeatResid, &bt.feat_resid)] {
                    let path = map_rel_path(&input.id, block, kind);
                    let stack = MapStack {
                        data: data.mapv(|v| v as f32),
                        kind,
                        block_index: block,
                        model_id: model_id.clone(),
                        stimulus_id: input.id.clone(),
                    };
                    write_map(&stack, &run_dir.join(&path))?;
                    maps.push(MapRef { block, kind, path });
                }
            }
            Ok(RunStimulus {
                stimulus_id: input.id.clone(),
                feature_dim: input.feature_dim.clone(),
                target_mask_path: relative(&input.target_mask, &run_dir)?,
                distractor_mask_path: relative(&input.distractor_mask, &run_dir)?,
                maps,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = RunManifest {
        model_id,
        blocks: config.blocks,
        grids: vec![[config.grid(), config.grid()]; config.blocks],
        kinds: MapKind::ALL.to_vec(),
        dataset_id,
        seed: Some(config.seed),
        config: json!({ "model": config, "resize_filter": "triangle" }),
        stimuli,
    };
    let path = run_dir.join(RUN_MANIFEST_FILE);
    write_manifest(&manifest, &path)?;
    Ok(path)
}
