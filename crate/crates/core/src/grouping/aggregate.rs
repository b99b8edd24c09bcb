use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ChannelScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "GI")]
    Gi,
    #[serde(rename = "AR")]
    Ar,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Gi, Metric::Ar];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Gi => "GI",
            Metric::Ar => "AR",
        }
    }

    fn pick(self, s: &ChannelScore) -> Option<f64> {
        match self {
            Metric::Gi => s.gi,
            Metric::Ar => s.ar,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Mean over included channels per stimulus, then an unweighted mean over stimuli.
    #[default]
    TwoStage,
    /// One mean over every included channel of every stimulus.
    Pooled,
}

impl std::str::FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "two-stage" | "two_stage" => Ok(AggregationMode::TwoStage),
            "pooled" => Ok(AggregationMode::Pooled),
            other => Err(format!("unknown aggregation mode {other:?} (expected two-stage or pooled)")),
        }
    }
}

/// Channel scores of one stimulus at one block.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusScores {
    pub block: usize,
    pub feature_dim: String,
    pub scores: Vec<ChannelScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub model_id: String,
    pub block: usize,
    pub feature_dim: String,
    pub metric: Metric,
    /// `None` when no channel of any stimulus was included.
    pub mean: Option<f64>,
    /// Stimuli contributing at least one included channel.
    pub n_stimuli: usize,
    pub n_channels_included: usize,
}

/// Summaries keyed by (block, feature_dim, metric), in that sort order.
pub fn aggregate(model_id: &str, stimuli: &[StimulusScores], mode: AggregationMode) -> Vec<BlockSummary> {
    let mut groups: BTreeMap<(usize, &str), Vec<&StimulusScores>> = BTreeMap::new();
    for s in stimuli {
        groups.entry((s.block, s.feature_dim.as_str())).or_default().push(s);
    }
    let mut out = Vec::with_capacity(groups.len() * 2);
    for ((block, feature_dim), members) in groups {
        for metric in Metric::ALL {
            let mut per_stimulus = Vec::new();
            let mut pooled = Vec::new();
            for s in &members {
                let values: Vec<f64> = s.scores.iter().filter_map(|c| metric.pick(c)).collect();
                if !values.is_empty() {
                    per_stimulus.push(values.iter().sum::<f64>() / values.len() as f64);
                    pooled.extend(values);
                }
            }
            let mean_of = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            let mean = match mode {
                AggregationMode::TwoStage => mean_of(&per_stimulus),
                AggregationMode::Pooled => mean_of(&pooled),
            };
            out.push(BlockSummary {
                model_id: model_id.to_string(),
                block,
                feature_dim: feature_dim.to_string(),
                metric,
                mean,
                n_stimuli: per_stimulus.len(),
                n_channels_included: pooled.len(),
            });
        }
    }
    out
}
