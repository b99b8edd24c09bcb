//! Grouping scores over token-resolution block maps.
//!
//! Each channel of a `[h, w, c]` map is min-max normalized over space, then
//! averaged over the cells of group 1, group 2 and the background. From those
//! region means come the grouping index `GI = |A1 - A2| / (A1 + A2)` and the
//! figure-background attention ratio `AR = max(A1, A2) / A_bkg`.

mod aggregate;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate, AggregationMode, BlockSummary, Metric, StimulusScores};

use crate::stimgen::{LABEL_BACKGROUND, LABEL_GROUP1, LABEL_GROUP2};

#[derive(Debug, Error, PartialEq)]
pub enum GroupingError {
    #[error("map grid {map:?} does not match label grid {labels:?}")]
    Dimension { map: (usize, usize), labels: (usize, usize) },
    #[error("channel {channel} is excluded from {metric}")]
    Excluded { channel: usize, metric: Metric },
    #[error("non-finite map value at flat index {0}")]
    NonFinite(usize),
    #[error("label grid of {0:?} cells cannot be built from a smaller image")]
    Grid((usize, usize)),
}

/// Per-channel min-max normalization over spatial positions; constant channels become 0.
pub fn normalize_channels(map: ArrayView3<f64>) -> Result<Array3<f64>, GroupingError> {
    if let Some(i) = map.iter().position(|v| !v.is_finite()) {
        return Err(GroupingError::NonFinite(i));
    }
    let mut out = map.to_owned();
    for mut channel in out.axis_iter_mut(Axis(2)) {
        let (lo, hi) = channel
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 0.0 {
            channel.mapv_inplace(|v| (v - lo) / range);
        } else {
            channel.fill(0.0);
        }
    }
    Ok(out)
}

/// Downsamples a pixel label map to an `h x w` grid by strict majority.
///
/// Pixel `(y, x)` falls in cell `(y * h / H, x * w / W)`. A cell takes label 1
/// or 2 only when strictly more than half of its pixels carry it.
pub fn labels_to_grid(labels: ArrayView2<u8>, h: usize, w: usize) -> Result<Array2<u8>, GroupingError> {
    labels_to_grid_with(labels, h, w, 0.5)
}

/// As [`labels_to_grid`], with a configurable coverage threshold: a cell takes
/// group label `g` when the fraction of its pixels labeled `g` exceeds
/// `min_coverage` and `g` has more pixels in the cell than the other group.
/// With `min_coverage = 0` any figure pixel marks the cell.
pub fn labels_to_grid_with(
    labels: ArrayView2<u8>,
    h: usize,
    w: usize,
    min_coverage: f64,
) -> Result<Array2<u8>, GroupingError> {
    let (img_h, img_w) = labels.dim();
    if h == 0 || w == 0 || img_h < h || img_w < w {
        return Err(GroupingError::Grid((h, w)));
    }
    let mut counts = vec![[0usize; 3]; h * w];
    for ((y, x), &label) in labels.indexed_iter() {
        let cell = (y * h / img_h) * w + x * w / img_w;
        match label {
            LABEL_GROUP1 => counts[cell][1] += 1,
            LABEL_GROUP2 => counts[cell][2] += 1,
            _ => counts[cell][0] += 1,
        }
    }
    Ok(Array2::from_shape_fn((h, w), |(r, c)| {
        let [bg, g1, g2] = counts[r * w + c];
        let total = (bg + g1 + g2) as f64;
        let covers = |n: usize| n as f64 > min_coverage * total;
        if g1 > g2 && covers(g1) {
            LABEL_GROUP1
        } else if g2 > g1 && covers(g2) {
            LABEL_GROUP2
        } else {
            LABEL_BACKGROUND
        }
    }))
}

/// Region means of one normalized channel and the resulting inclusion flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeans {
    pub g1: f64,
    pub g2: f64,
    pub bkg: f64,
    pub included_gi: bool,
    pub included_ar: bool,
}

impl ChannelMeans {
    /// Flags follow from the values alone: GI needs `A1` or `A2` nonzero, AR also needs `A_bkg > 0`.
    pub fn new(g1: f64, g2: f64, bkg: f64) -> Self {
        let included_gi = !(g1 == 0.0 && g2 == 0.0);
        ChannelMeans {
            g1,
            g2,
            bkg,
            included_gi,
            included_ar: included_gi && bkg > 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMeans {
    pub channels: Vec<ChannelMeans>,
}

/// Mean normalized score over cells labeled 1, 2 and 0, per channel.
///
/// An empty region has mean 0 and clears the flags that depend on it.
pub fn region_means(norm: ArrayView3<f64>, grid: ArrayView2<u8>) -> Result<RegionMeans, GroupingError> {
    let (h, w, c) = norm.dim();
    if (h, w) != grid.dim() {
        return Err(GroupingError::Dimension {
            map: (h, w),
            labels: grid.dim(),
        });
    }
    let mut sums = vec![[0.0f64; 3]; c];
    let mut counts = [0usize; 3];
    for ((y, x), &label) in grid.indexed_iter() {
        let region = match label {
            LABEL_GROUP1 => 1,
            LABEL_GROUP2 => 2,
            _ => 0,
        };
        counts[region] += 1;
        for (ch, sum) in sums.iter_mut().enumerate() {
            sum[region] += norm[[y, x, ch]];
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let channels = sums
        .iter()
        .map(|s| {
            let mut m = ChannelMeans::new(mean(s[1], counts[1]), mean(s[2], counts[2]), mean(s[0], counts[0]));
            if counts[1] == 0 || counts[2] == 0 {
                m.included_gi = false;
                m.included_ar = false;
            }
            if counts[0] == 0 {
                m.included_ar = false;
            }
            m
        })
        .collect();
    Ok(RegionMeans { channels })
}

/// `|A1 - A2| / (A1 + A2)`, for a channel included in GI.
pub fn grouping_index(m: &ChannelMeans, channel: usize) -> Result<f64, GroupingError> {
    if !m.included_gi {
        return Err(GroupingError::Excluded {
            channel,
            metric: Metric::Gi,
        });
    }
    Ok((m.g1 - m.g2).abs() / (m.g1 + m.g2))
}

/// `max(A1 / A_bkg, A2 / A_bkg)`, for a channel included in AR.
pub fn attention_ratio(m: &ChannelMeans, channel: usize) -> Result<f64, GroupingError> {
    if !m.included_ar {
        return Err(GroupingError::Excluded {
            channel,
            metric: Metric::Ar,
        });
    }
    Ok((m.g1 / m.bkg).max(m.g2 / m.bkg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub channel: usize,
    pub gi: Option<f64>,
    pub ar: Option<f64>,
}

/// Normalizes a raw map and scores every channel against a label grid.
pub fn score_map(map: ArrayView3<f64>, grid: ArrayView2<u8>) -> Result<Vec<ChannelScore>, GroupingError> {
    let norm = normalize_channels(map)?;
    let means = region_means(norm.view(), grid)?;
    Ok(means
        .channels
        .iter()
        .enumerate()
        .map(|(channel, m)| ChannelScore {
            channel,
            gi: grouping_index(m, channel).ok(),
            ar: attention_ratio(m, channel).ok(),
        })
        .collect())
}

/// Randomly permutes the labels of a grid, preserving region sizes.
pub fn shuffle_labels<R: Rng + ?Sized>(grid: ArrayView2<u8>, rng: &mut R) -> Array2<u8> {
    let mut cells: Vec<u8> = grid.iter().copied().collect();
    cells.shuffle(rng);
    Array2::from_shape_vec(grid.dim(), cells).expect("same cell count")
}
