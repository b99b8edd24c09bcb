//! Command-line driver: stimulus generation, toy-model inference, scoring and reporting.

pub mod eval;
pub mod output;
pub mod report;
pub mod run_toy;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use grouplens_core::grouping::AggregationMode;
use grouplens_core::mapio::MapKind;
use grouplens_core::saliency::Interp;
use grouplens_core::stimgen::{gen_grouping_dataset, gen_p3_dataset, Version, MANIFEST_FILE};
use grouplens_core::toyvit::ModelConfig;

use crate::eval::{eval_grouping, eval_saliency, find_runs, GroupingOptions, SaliencyOptions};
use crate::run_toy::{run_toy, RunToyArgs, Source};

#[derive(Debug, Parser)]
#[command(name = "grouplens", version, about = "Probe transformer block maps for grouping and pop-out saliency")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a stimulus dataset.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run the toy transformer over a dataset and write per-block maps.
    RunToy(RunToyCmd),
    /// Score per-block maps.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render SVG charts and a summary from evaluation reports.
    Report(ReportCmd),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Similarity-grouping displays: four alternating rows of figures.
    Grouping(GenGrouping),
    /// Singleton displays: one target among 48 distractors on a 7x7 grid.
    P3(GenP3),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VersionArg {
    V16,
    V32,
    V37,
    All,
}

impl VersionArg {
    fn versions(self) -> Vec<Version> {
        match self {
            VersionArg::V16 => vec![Version::V16],
            VersionArg::V32 => vec![Version::V32],
            VersionArg::V37 => vec![Version::V37],
            VersionArg::All => vec![Version::V16, Version::V32, Version::V37],
        }
    }
}

#[derive(Debug, Args)]
pub struct GenGrouping {
    #[arg(long, value_enum, default_value = "v16")]
    pub version: VersionArg,
    /// Stimuli per feature dimension and version.
    #[arg(long, default_value_t = 100)]
    pub per_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenP3 {
    #[arg(long, default_value_t = 30)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunToyCmd {
    /// Dataset manifest written by `gen`.
    #[arg(long, required_unless_present = "o3", conflicts_with = "o3")]
    pub dataset: Option<PathBuf>,
    /// Ingestion manifest of external images with target/distractor masks.
    #[arg(long)]
    pub o3: Option<PathBuf>,
    /// Model config as JSON; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initialization seed; overrides the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Load weights from a directory written by --save-weights.
    #[arg(long, conflicts_with_all = ["config", "seed"])]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub save_weights: Option<PathBuf>,
    /// Maps root; output goes to `<out>/<model_id>/`.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Grouping index and attention ratio per block and feature dimension.
    Grouping(EvalGroupingCmd),
    /// Fixation detection rates and max-saliency ratios per block.
    Saliency(EvalSaliencyCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    AttnOut,
    FeatResid,
}

impl From<KindArg> for MapKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::AttnOut => MapKind::AttnOut,
            KindArg::FeatResid => MapKind::FeatResid,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    TwoStage,
    Pooled,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InterpArg {
    Bilinear,
    Nearest,
}

#[derive(Debug, Args)]
pub struct EvalGroupingCmd {
    /// A run directory or a maps root holding one directory per run.
    #[arg(long)]
    pub maps: PathBuf,
    #[arg(long, value_enum, default_value = "attn-out")]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "two-stage")]
    pub aggregation: AggregationArg,
    /// A cell joins a group when more than this fraction of its pixels belong
    /// to the group; 0 marks every cell a figure touches, 0.5 is strict majority.
    #[arg(long, default_value_t = 0.0)]
    pub min_coverage: f64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalSaliencyCmd {
    #[arg(long)]
    pub maps: PathBuf,
    /// Map kinds to evaluate; both by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub kind: Vec<KindArg>,
    /// Suppression radius in pixels; defaults to half a token width at mask resolution.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [15, 25, 50, 100])]
    pub thresholds: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub max_fixations: usize,
    /// Count fixations within this many pixels of the target as hits.
    #[arg(long, default_value_t = 0.0)]
    pub dilation: f64,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub interp: InterpArg,
    #[arg(long, default_value_t = 100_000)]
    pub chance_trials: usize,
    /// Seed for the chance-level simulation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    /// Directory holding evaluation JSON files.
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn model_config(cmd: &RunToyCmd) -> Result<ModelConfig> {
    let mut config = match &cmd.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ModelConfig::default(),
    };
    if let Some(seed) = cmd.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(GenCommand::Grouping(g)) => {
            let m = gen_grouping_dataset(&g.version.versions(), g.per_dim, g.seed, &g.out)?;
            eprintln!("{} records", m.records.len());
            print_paths(&[g.out.join(MANIFEST_FILE)]);
        }
        Command::Gen(GenCommand::P3(g)) => {
            let m = gen_p3_dataset(g.count, g.seed, &g.out)?;
            eprintln!("{} records", m.records.len());
            print_paths(&[g.out.join(MANIFEST_FILE)]);
        }
        Command::RunToy(cmd) => {
            let config = model_config(&cmd)?;
            let source = match (&cmd.dataset, &cmd.o3) {
                (Some(d), _) => Source::Dataset(d),
                (None, Some(o)) => Source::O3(o),
                (None, None) => unreachable!("clap requires one source"),
            };
            let path = run_toy(&RunToyArgs {
                source,
                config,
                weights: cmd.weights.as_deref(),
                save_weights: cmd.save_weights.as_deref(),
                out: &cmd.out,
            })?;
            print_paths(&[path]);
        }
        Command::Eval(EvalCommand::Grouping(cmd)) => {
            let opts = GroupingOptions {
                kind: cmd.kind.into(),
                mode: match cmd.aggregation {
                    AggregationArg::TwoStage => AggregationMode::TwoStage,
                    AggregationArg::Pooled => AggregationMode::Pooled,
                },
                min_coverage: cmd.min_coverage,
            };
            for manifest in find_runs(&cmd.maps)? {
                print_paths(&eval_grouping(&manifest, &opts)?.write(&cmd.out)?);
            }
        }
        Command::Eval(EvalCommand::Saliency(cmd)) => {
            let mut kinds: Vec<MapKind> = cmd.kind.iter().map(|&k| k.into()).collect();
            if kinds.is_empty() {
                kinds = MapKind::ALL.to_vec();
            }
            kinds.sort();
            kinds.dedup();
            let opts = SaliencyOptions {
                kinds,
                radius: cmd.radius,
                thresholds: cmd.thresholds,
                max_fixations: cmd.max_fixations,
                dilation: cmd.dilation,
                interp: match cmd.interp {
                    InterpArg::Bilinear => Interp::Bilinear,
                    InterpArg::Nearest => Interp::Nearest,
                },
                chance_trials: cmd.chance_trials,
                seed: cmd.seed,
            };
            for manifest in find_runs(&cmd.maps)? {
                print_paths(&eval_saliency(&manifest, &opts)?.write(&cmd.out)?);
            }
        }
        Command::Report(cmd) => print_paths(&report::report(&cmd.reports, &cmd.out)?),
    }
    Ok(())
}

/// Sizes the global rayon pool from `GROUPLENS_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(value) = std::env::var("GROUPLENS_THREADS") {
        let n: usize = value
            .trim()
            .parse()
            .with_context(|| format!("GROUPLENS_THREADS must be a positive integer, got {value:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_eval_saliency_lists() {
        let cli = Cli::try_parse_from([
            "grouplens", "eval", "saliency", "--maps", "m", "-o", "r", "--thresholds", "5,10", "--kind", "feat-resid",
        ])
        .unwrap();
        let Command::Eval(EvalCommand::Saliency(cmd)) = cli.command else { panic!() };
        assert_eq!(cmd.thresholds, vec![5, 10]);
        assert_eq!(cmd.kind.len(), 1);
    }

    #[test]
    fn missing_out_is_usage_error() {
        let err = Cli::try_parse_from(["grouplens", "gen", "grouping", "--per-dim", "1"]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
