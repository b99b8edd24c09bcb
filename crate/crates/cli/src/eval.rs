use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use grouplens_core::grouping::{
    aggregate, labels_to_grid_with, score_map, AggregationMode, BlockSummary, Metric, StimulusScores,
};
use grouplens_core::mapio::{read_manifest, read_map, MapKind, RunManifest, RunStimulus, RUN_MANIFEST_FILE};
use grouplens_core::saliency::{
    build_saliency_map, chance_rate, default_radius, detection_rates, mean_defined, msr_ratios, run_fixations,
    FixationParams, Interp, SaliencyRatios, DEFAULT_THRESHOLDS, REFERENCE_CHANCE,
};
use grouplens_core::stimgen::read_label_png;
use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::output::{fmt_opt, write_json, CsvReport};

/// Run manifests under `maps`: either `maps/run_manifest.json` itself or one
/// per immediate subdirectory, in name order.
pub fn find_runs(maps: &Path) -> Result<Vec<PathBuf>> {
    let direct = maps.join(RUN_MANIFEST_FILE);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = std::fs::read_dir(maps).with_context(|| format!("reading {}", maps.display()))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path().join(RUN_MANIFEST_FILE))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        bail!("no {RUN_MANIFEST_FILE} found in {}", maps.display());
    }
    Ok(found)
}

fn load_run(path: &Path) -> Result<(RunManifest, PathBuf)> {
    let manifest = read_manifest(path).with_context(|| format!("run manifest {}", path.display()))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, root))
}

fn labels(root: &Path, rel: &str) -> Result<Array2<u8>> {
    let img = read_label_png(&root.join(rel))?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_vec((h as usize, w as usize), img.into_raw()).expect("gray image is h*w"))
}

fn load_map(root: &Path, s: &RunStimulus, block: usize, kind: MapKind) -> Result<Array3<f64>> {
    let r = s
        .map(block, kind)
        .with_context(|| format!("{}: no {kind} map for block {block}", s.stimulus_id))?;
    Ok(read_map(&root.join(&r.path))?.data.mapv(f64::from))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupingReport {
    pub model_id: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub summaries: Vec<BlockSummary>,
}

pub struct GroupingOptions {
    pub kind: MapKind,
    pub mode: AggregationMode,
    /// Fraction of a cell's pixels a group must exceed to label the cell.
    pub min_coverage: f64,
}

pub fn eval_grouping(manifest_path: &Path, opts: &GroupingOptions) -> Result<GroupingReport> {
    let (run, root) = load_run(manifest_path)?;
    let per_stimulus = run
        .stimuli
        .par_iter()
        .map(|s| -> Result<Vec<StimulusScores>> {
            let pixel_labels = labels(&root, &s.target_mask_path)?;
            (0..run.blocks)
                .map(|block| {
                    let map = load_map(&root, s, block, opts.kind)?;
                    let (h, w, _) = map.dim();
                    let grid = labels_to_grid_with(pixel_labels.view(), h, w, opts.min_coverage)?;
                    Ok(StimulusScores {
                        block,
                        feature_dim: s.feature_dim.clone(),
                        scores: score_map(map.view(), grid.view())
                            .with_context(|| format!("{} block {block}", s.stimulus_id))?,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<StimulusScores> = per_stimulus.into_iter().flatten().collect();
    Ok(GroupingReport {
        model_id: run.model_id.clone(),
        config: json!({
            "eval": "grouping",
            "kind": opts.kind,
            "aggregation": opts.mode,
            "min_coverage": opts.min_coverage,
            "model_id": run.model_id,
            "dataset_id": run.dataset_id,
            "run_config": run.config,
        }),
        seed: run.seed,
        summaries: aggregate(&run.model_id, &scores, opts.mode),
    })
}

impl GroupingReport {
    pub fn csv(&self) -> CsvReport<'_> {
        CsvReport {
            config: &self.config,
            seed: self.seed,
            header: &["model_id", "block", "feature_dim", "metric", "mean", "n_stimuli", "n_channels_included"],
            rows: self
                .summaries
                .iter()
                .map(|s| {
                    vec![
                        s.model_id.clone(),
                        s.block.to_string(),
                        s.feature_dim.clone(),
                        s.metric.to_string(),
                        fmt_opt(s.mean),
                        s.n_stimuli.to_string(),
                        s.n_channels_included.to_string(),
                    ]
                })
                .collect(),
        }
    }

    /// Wide table: one row per block, one column per (metric, feature_dim).
    pub fn plot_csv(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut series: BTreeMap<(Metric, &str), BTreeMap<usize, Option<f64>>> = BTreeMap::new();
        for s in &self.summaries {
            series.entry((s.metric, &s.feature_dim)).or_default().insert(s.block, s.mean);
        }
        let blocks: std::collections::BTreeSet<usize> = self.summaries.iter().map(|s| s.block).collect();
        let mut header = vec!["block".to_string()];
        header.extend(series.keys().map(|(m, d)| format!("{m}_{d}")));
        let rows = blocks
            .iter()
            .map(|b| {
                let mut row = vec![b.to_string()];
                row.extend(series.values().map(|v| fmt_opt(v.get(b).copied().flatten())));
                row
            })
            .collect();
        (header, rows)
    }

    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>> {
        let stem = format!("grouping_{}", self.model_id);
        let (header, rows) = self.plot_csv();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let plot = CsvReport {
            config: &self.config,
            seed: self.seed,
            header: &header_refs,
            rows,
        };
        Ok(vec![
            self.csv().write(&out.join(format!("{stem}.csv")))?,
            write_json(&out.join(format!("{stem}.json")), self)?,
            plot.write(&out.join(format!("{stem}_plot.csv")))?,
        ])
    }
}

pub struct SaliencyOptions {
    pub kinds: Vec<MapKind>,
    pub radius: Option<f64>,
    pub thresholds: Vec<usize>,
    pub max_fixations: usize,
    pub dilation: f64,
    pub interp: Interp,
    pub chance_trials: usize,
    pub seed: u64,
}

impl Default for SaliencyOptions {
    fn default() -> Self {
        SaliencyOptions {
            kinds: MapKind::ALL.to_vec(),
            radius: None,
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            max_fixations: 100,
            dilation: 0.0,
            interp: Interp::Bilinear,
            chance_trials: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateRow {
    pub block: usize,
    pub kind: MapKind,
    pub feature_dim: String,
    pub threshold: usize,
    pub detection_rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsrRow {
    pub block: usize,
    pub kind: MapKind,
    pub mean_msr_targ: Option<f64>,
    pub mean_msr_bg: Option<f64>,
    pub n_defined_targ: usize,
    pub n_defined_bg: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChanceRow {
    pub threshold: usize,
    pub n_cells: usize,
    pub analytic: Option<f64>,
    pub monte_carlo: Option<f64>,
    pub reference: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaliencyReport {
    pub model_id: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub rates: Vec<RateRow>,
    pub msr: Vec<MsrRow>,
    pub chance: Vec<ChanceRow>,
}

struct Outcome {
    feature_dim: String,
    block: usize,
    kind: MapKind,
    detected: bool,
    fixations: usize,
    ratios: SaliencyRatios,
}

pub fn eval_saliency(manifest_path: &Path, opts: &SaliencyOptions) -> Result<SaliencyReport> {
    let (run, root) = load_run(manifest_path)?;
    let grid = run.grids.first().copied().unwrap_or([1, 1]);
    let outcomes = run
        .stimuli
        .par_iter()
        .map(|s| -> Result<Vec<Outcome>> {
            let target = labels(&root, &s.target_mask_path)?.mapv(|l| l == 1);
            let distractor = labels(&root, &s.distractor_mask_path)?.mapv(|l| l == 2);
            let eval_dims = target.dim();
            let params = FixationParams {
                max_fixations: opts.max_fixations,
                radius: opts.radius.unwrap_or_else(|| default_radius(eval_dims.1, grid[1])),
                thresholds: opts.thresholds.clone(),
                dilation: opts.dilation,
            };
            let mut out = Vec::new();
            for block in 0..run.blocks {
                for &kind in &opts.kinds {
                    let map = load_map(&root, s, block, kind)?;
                    let sal = build_saliency_map(map.view(), eval_dims, opts.interp)
                        .with_context(|| format!("{} block {block}", s.stimulus_id))?;
                    let trace = run_fixations(sal.view(), target.view(), &params)
                        .with_context(|| format!("{} block {block}", s.stimulus_id))?;
                    let ratios = msr_ratios(sal.view(), target.view(), distractor.view())
                        .with_context(|| format!("{} block {block}", s.stimulus_id))?;
                    out.push(Outcome {
                        feature_dim: s.feature_dim.clone(),
                        block,
                        kind,
                        detected: trace.detected,
                        fixations: trace.fixations_to_target,
                        ratios,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<Outcome> = outcomes.into_iter().flatten().collect();

    let mut rates = Vec::new();
    let mut by_key: BTreeMap<(usize, MapKind, String), Vec<&Outcome>> = BTreeMap::new();
    for o in &outcomes {
        by_key.entry((o.block, o.kind, o.feature_dim.clone())).or_default().push(o);
        by_key.entry((o.block, o.kind, "all".into())).or_default().push(o);
    }
    for ((block, kind, feature_dim), group) in &by_key {
        let traces: Vec<_> = group
            .iter()
            .map(|o| grouplens_core::saliency::FixationTrace {
                points: vec![],
                detected: o.detected,
                fixations_to_target: o.fixations,
            })
            .collect();
        for (&threshold, rate) in opts.thresholds.iter().zip(detection_rates(&traces, &opts.thresholds)) {
            rates.push(RateRow {
                block: *block,
                kind: *kind,
                feature_dim: feature_dim.clone(),
                threshold,
                detection_rate: rate,
                n: traces.len(),
            });
        }
    }

    let mut msr = Vec::new();
    for ((block, kind, feature_dim), group) in &by_key {
        if feature_dim != "all" {
            continue;
        }
        let (mean_msr_targ, n_defined_targ) = mean_defined(group.iter().map(|o| o.ratios.msr_targ));
        let (mean_msr_bg, n_defined_bg) = mean_defined(group.iter().map(|o| o.ratios.msr_bg));
        msr.push(MsrRow {
            block: *block,
            kind: *kind,
            mean_msr_targ,
            mean_msr_bg,
            n_defined_targ,
            n_defined_bg,
            n: group.len(),
        });
    }

    let n_cells = grid[0] * grid[1];
    let chance = opts
        .thresholds
        .iter()
        .map(|&f| {
            let reference = REFERENCE_CHANCE.iter().find(|(t, _)| *t == f).map(|(_, r)| *r);
            let defined = f <= n_cells && opts.chance_trials > 0;
            Ok(ChanceRow {
                threshold: f,
                n_cells,
                analytic: defined.then(|| f as f64 / n_cells as f64),
                monte_carlo: if defined {
                    Some(chance_rate(n_cells, f, opts.chance_trials, opts.seed)?)
                } else {
                    None
                },
                reference,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SaliencyReport {
        model_id: run.model_id.clone(),
        config: json!({
            "eval": "saliency",
            "kinds": opts.kinds,
            "radius": opts.radius,
            "thresholds": opts.thresholds,
            "max_fixations": opts.max_fixations,
            "dilation": opts.dilation,
            "interp": opts.interp,
            "chance_trials": opts.chance_trials,
            "model_id": run.model_id,
            "dataset_id": run.dataset_id,
            "run_config": run.config,
            "run_seed": run.seed,
        }),
        seed: Some(opts.seed),
        rates,
        msr,
        chance,
    })
}

impl SaliencyReport {
    pub fn write(&self, out: &Path) -> Result<Vec<PathBuf>> {
        let stem = format!("saliency_{}", self.model_id);
        let rates = CsvReport {
            config: &self.config,
            seed: self.seed,
            header: &["model_id", "block", "kind", "feature_dim", "threshold", "detection_rate", "n"],
            rows: self
                .rates
                .iter()
                .map(|r| {
                    vec![
                        self.model_id.clone(),
                        r.block.to_string(),
                        r.kind.to_string(),
                        r.feature_dim.clone(),
                        r.threshold.to_string(),
                        r.detection_rate.to_string(),
                        r.n.to_string(),
                    ]
                })
                .collect(),
        };
        let msr = CsvReport {
            config: &self.config,
            seed: self.seed,
            header: &[
                "model_id",
                "block",
                "kind",
                "mean_MSR_targ",
                "mean_MSR_bg",
                "n_defined_targ",
                "n_defined_bg",
                "n",
            ],
            rows: self
                .msr
                .iter()
                .map(|r| {
                    vec![
                        self.model_id.clone(),
                        r.block.to_string(),
                        r.kind.to_string(),
                        fmt_opt(r.mean_msr_targ),
                        fmt_opt(r.mean_msr_bg),
                        r.n_defined_targ.to_string(),
                        r.n_defined_bg.to_string(),
                        r.n.to_string(),
                    ]
                })
                .collect(),
        };
        let chance = CsvReport {
            config: &self.config,
            seed: self.seed,
            header: &["threshold", "n_cells", "analytic", "monte_carlo", "reference"],
            rows: self
                .chance
                .iter()
                .map(|c| {
                    vec![
                        c.threshold.to_string(),
                        c.n_cells.to_string(),
                        fmt_opt(c.analytic),
                        fmt_opt(c.monte_carlo),
                        fmt_opt(c.reference),
                    ]
                })
                .collect(),
        };
        let (plot_header, plot_rows) = self.plot_table();
        let plot_refs: Vec<&str> = plot_header.iter().map(String::as_str).collect();
        let plot = CsvReport {
            config: &self.config,
            seed: self.seed,
            header: &plot_refs,
            rows: plot_rows,
        };
        Ok(vec![
            rates.write(&out.join(format!("{stem}_rates.csv")))?,
            msr.write(&out.join(format!("{stem}_msr.csv")))?,
            chance.write(&out.join(format!("{stem}_chance.csv")))?,
            plot.write(&out.join(format!("{stem}_plot.csv")))?,
            write_json(&out.join(format!("{stem}.json")), self)?,
        ])
    }

    /// One row per (kind, block) with detection rates over all stimuli and both MSR means.
    pub fn plot_table(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let thresholds: Vec<usize> = {
            let mut t: Vec<usize> = self.rates.iter().map(|r| r.threshold).collect();
            t.sort_unstable();
            t.dedup();
            t
        };
        let mut header = vec!["kind".to_string(), "block".to_string()];
        header.extend(thresholds.iter().map(|t| format!("rate_{t}")));
        header.extend(["mean_MSR_targ".to_string(), "mean_MSR_bg".to_string()]);
        let rows = self
            .msr
            .iter()
            .map(|m| {
                let mut row = vec![m.kind.to_string(), m.block.to_string()];
                for t in &thresholds {
                    let rate = self
                        .rates
                        .iter()
                        .find(|r| r.block == m.block && r.kind == m.kind && r.feature_dim == "all" && r.threshold == *t)
                        .map(|r| r.detection_rate);
                    row.push(fmt_opt(rate));
                }
                row.push(fmt_opt(m.mean_msr_targ));
                row.push(fmt_opt(m.mean_msr_bg));
                row
            })
            .collect();
        (header, rows)
    }
}
