//! Singleton pop-out evaluation on channel-averaged saliency maps.
//!
//! A block map is averaged over channels and upsampled to the stimulus
//! resolution. A simulated observer then fixates successive maxima, masking a
//! disc around each, until a fixation lands on the target or the budget runs out.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2, ArrayView3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixation budgets reported by default.
pub const DEFAULT_THRESHOLDS: [usize; 4] = [15, 25, 50, 100];

/// Chance detection rates quoted for a 196-token model at the default budgets.
pub const REFERENCE_CHANCE: [(usize, f64); 4] = [(15, 0.06), (25, 0.10), (50, 0.20), (100, 0.40)];

#[derive(Debug, Error, PartialEq)]
pub enum SaliencyError {
    #[error("evaluation size {eval:?} is smaller than the map grid {grid:?}")]
    Downsample { eval: (usize, usize), grid: (usize, usize) },
    #[error("mask size {mask:?} does not match map size {map:?}")]
    MaskShape { mask: (usize, usize), map: (usize, usize) },
    #[error("target mask is empty")]
    EmptyTarget,
    #[error("target and distractor masks overlap")]
    Overlap,
    #[error("non-finite saliency value at flat index {0}")]
    NonFinite(usize),
    #[error("invalid parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    /// Bilinear with aligned corners.
    #[default]
    Bilinear,
    Nearest,
}

impl std::str::FromStr for Interp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bilinear" => Ok(Interp::Bilinear),
            "nearest" => Ok(Interp::Nearest),
            other => Err(format!("unknown interpolation {other:?} (expected bilinear or nearest)")),
        }
    }
}

/// Mean over the channel axis of an `[h, w, c]` map.
pub fn channel_mean(map: ArrayView3<f64>) -> Array2<f64> {
    map.mean_axis(Axis(2)).expect("map has at least one channel")
}

/// Upsamples a grid to `(height, width)`.
pub fn upsample(grid: ArrayView2<f64>, dims: (usize, usize), interp: Interp) -> Result<Array2<f64>, SaliencyError> {
    let (h, w) = grid.dim();
    let (eh, ew) = dims;
    if eh < h || ew < w {
        return Err(SaliencyError::Downsample {
            eval: dims,
            grid: (h, w),
        });
    }
    // Aligned corners: output index i maps to source coordinate i * (n - 1) / (N - 1).
    let coord = |i: usize, n: usize, big: usize| {
        if big <= 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (big - 1) as f64
        }
    };
    Ok(match interp {
        Interp::Nearest => Array2::from_shape_fn(dims, |(y, x)| grid[[y * h / eh, x * w / ew]]),
        Interp::Bilinear => Array2::from_shape_fn(dims, |(y, x)| {
            let sy = coord(y, h, eh);
            let sx = coord(x, w, ew);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            let top = grid[[y0, x0]] * (1.0 - fx) + grid[[y0, x1]] * fx;
            let bottom = grid[[y1, x0]] * (1.0 - fx) + grid[[y1, x1]] * fx;
            top * (1.0 - fy) + bottom * fy
        }),
    })
}

/// Channel mean followed by upsampling to the evaluation resolution.
pub fn build_saliency_map(map: ArrayView3<f64>, eval_dims: (usize, usize), interp: Interp) -> Result<Array2<f64>, SaliencyError> {
    if let Some(i) = map.iter().position(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFinite(i));
    }
    upsample(channel_mean(map).view(), eval_dims, interp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationParams {
    pub max_fixations: usize,
    /// Suppression disc radius in evaluation pixels.
    pub radius: f64,
    pub thresholds: Vec<usize>,
    /// A fixation within this distance of a target pixel counts as a hit.
    pub dilation: f64,
}

impl FixationParams {
    /// Default radius: half a token's footprint at evaluation resolution.
    pub fn for_resolution(eval_width: usize, grid_width: usize) -> Self {
        FixationParams {
            max_fixations: 100,
            radius: default_radius(eval_width, grid_width),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            dilation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SaliencyError> {
        let max_t = self.thresholds.iter().copied().max().unwrap_or(0);
        if self.max_fixations < max_t {
            return Err(SaliencyError::Params(format!(
                "max_fixations {} is below the largest threshold {max_t}",
                self.max_fixations
            )));
        }
        if !self.radius.is_finite() || self.radius < 1.0 {
            return Err(SaliencyError::Params(format!("radius {} must be at least 1", self.radius)));
        }
        if !self.dilation.is_finite() || self.dilation < 0.0 {
            return Err(SaliencyError::Params(format!("dilation {} must be nonnegative", self.dilation)));
        }
        Ok(())
    }
}

/// `round(0.5 * eval_width / grid_width)`, at least 1.
pub fn default_radius(eval_width: usize, grid_width: usize) -> f64 {
    (0.5 * eval_width as f64 / grid_width as f64).round().max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixationTrace {
    /// Fixation points as `(x, y)`.
    pub points: Vec<(usize, usize)>,
    pub detected: bool,
    /// Fixations up to and including the hit, or the number performed when undetected.
    pub fixations_to_target: usize,
}

#[derive(PartialEq)]
struct Ranked(f64, Reverse<usize>);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn check_mask(mask: ArrayView2<bool>, dims: (usize, usize)) -> Result<(), SaliencyError> {
    if mask.dim() != dims {
        return Err(SaliencyError::MaskShape {
            mask: mask.dim(),
            map: dims,
        });
    }
    Ok(())
}

/// Pixels within `radius` of `(cy, cx)`, clipped to the map.
fn disc(cy: usize, cx: usize, radius: f64, dims: (usize, usize), mut visit: impl FnMut(usize, usize)) {
    let r = radius.floor() as isize;
    let r2 = radius * radius;
    for dy in -r..=r {
        let y = cy as isize + dy;
        if y < 0 || y >= dims.0 as isize {
            continue;
        }
        for dx in -r..=r {
            let x = cx as isize + dx;
            if x < 0 || x >= dims.1 as isize {
                continue;
            }
            if (dy * dy + dx * dx) as f64 <= r2 {
                visit(y as usize, x as usize);
            }
        }
    }
}

/// Fixates successive maxima (ties to the first in row-major order), suppressing
/// a disc around each miss, until the target is hit or the budget is spent.
pub fn run_fixations(
    map: ArrayView2<f64>,
    target: ArrayView2<bool>,
    params: &FixationParams,
) -> Result<FixationTrace, SaliencyError> {
    params.validate()?;
    let dims = map.dim();
    check_mask(target, dims)?;
    if !target.iter().any(|&t| t) {
        return Err(SaliencyError::EmptyTarget);
    }
    if let Some(i) = map.iter().position(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFinite(i));
    }
    let hit_mask = if params.dilation > 0.0 {
        let mut m = Array2::from_elem(dims, false);
        for ((y, x), &t) in target.indexed_iter() {
            if t {
                disc(y, x, params.dilation, dims, |yy, xx| m[[yy, xx]] = true);
            }
        }
        m
    } else {
        target.to_owned()
    };

    let width = dims.1;
    let mut heap: BinaryHeap<Ranked> = map.iter().enumerate().map(|(i, &v)| Ranked(v, Reverse(i))).collect();
    let mut suppressed = Array2::from_elem(dims, false);
    let mut points = Vec::new();
    while points.len() < params.max_fixations {
        let Some(Ranked(_, Reverse(i))) = heap.pop() else { break };
        let (y, x) = (i / width, i % width);
        if suppressed[[y, x]] {
            continue;
        }
        points.push((x, y));
        if hit_mask[[y, x]] {
            let n = points.len();
            return Ok(FixationTrace {
                points,
                detected: true,
                fixations_to_target: n,
            });
        }
        disc(y, x, params.radius, dims, |yy, xx| suppressed[[yy, xx]] = true);
    }
    let n = points.len();
    Ok(FixationTrace {
        points,
        detected: false,
        fixations_to_target: n,
    })
}

/// Fraction of traces that hit the target within each budget.
pub fn detection_rates(traces: &[FixationTrace], thresholds: &[usize]) -> Vec<f64> {
    thresholds
        .iter()
        .map(|&t| {
            if traces.is_empty() {
                return 0.0;
            }
            let hits = traces.iter().filter(|tr| tr.detected && tr.fixations_to_target <= t).count();
            hits as f64 / traces.len() as f64
        })
        .collect()
}

/// Max-saliency ratios; `None` where a ratio is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRatios {
    /// Target max over distractor max.
    pub msr_targ: Option<f64>,
    /// Background max over target max.
    pub msr_bg: Option<f64>,
}

fn masked_max(map: ArrayView2<f64>, keep: impl Fn(usize, usize) -> bool) -> Option<f64> {
    map.indexed_iter()
        .filter(|&((y, x), _)| keep(y, x))
        .map(|(_, &v)| v)
        .reduce(f64::max)
}

/// A ratio is defined only for a positive denominator and nonnegative numerator.
fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d > 0.0 && n >= 0.0 => Some(n / d),
        _ => None,
    }
}

pub fn msr_ratios(
    map: ArrayView2<f64>,
    target: ArrayView2<bool>,
    distractor: ArrayView2<bool>,
) -> Result<SaliencyRatios, SaliencyError> {
    let dims = map.dim();
    check_mask(target, dims)?;
    check_mask(distractor, dims)?;
    if !target.iter().any(|&t| t) {
        return Err(SaliencyError::EmptyTarget);
    }
    if target.iter().zip(distractor.iter()).any(|(&t, &d)| t && d) {
        return Err(SaliencyError::Overlap);
    }
    let t_max = masked_max(map, |y, x| target[[y, x]]);
    let d_max = masked_max(map, |y, x| distractor[[y, x]]);
    let b_max = masked_max(map, |y, x| !target[[y, x]] && !distractor[[y, x]]);
    Ok(SaliencyRatios {
        msr_targ: ratio(t_max, d_max),
        msr_bg: ratio(b_max, t_max),
    })
}

/// Monte-Carlo detection probability for `f` uniform fixations without
/// replacement over `n` cells, one of which holds the target.
pub fn chance_rate(n: usize, f: usize, trials: usize, seed: u64) -> Result<f64, SaliencyError> {
    if f == 0 || f > n || trials == 0 {
        return Err(SaliencyError::Params(format!(
            "chance rate needs 1 <= f <= n and trials >= 1 (n={n}, f={f}, trials={trials})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..trials {
        let target = rng.random_range(0..n);
        if index::sample(&mut rng, n, f).iter().any(|c| c == target) {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

/// Mean of the defined values and how many there were.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (sum, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| sum / n as f64), n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use proptest::prelude::*;

    fn params(radius: f64, max: usize) -> FixationParams {
        FixationParams {
            max_fixations: max,
            radius,
            thresholds: vec![],
            dilation: 0.0,
        }
    }

    #[test]
    fn channel_mean_single_cell() {
        let m = Array3::from_shape_vec((1, 1, 3), vec![0.1, 0.2, 0.3]).unwrap();
        let s = build_saliency_map(m.view(), (1, 1), Interp::Bilinear).unwrap();
        assert!((s[[0, 0]] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn constant_stays_constant() {
        let g = Array2::from_elem((3, 3), 0.7);
        for interp in [Interp::Bilinear, Interp::Nearest] {
            let up = upsample(g.view(), (10, 13), interp).unwrap();
            assert!(up.iter().all(|&v| (v - 0.7).abs() < 1e-12));
        }
    }

    #[test]
    fn aligned_corners_keep_values() {
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        let up = upsample(g.view(), (4, 4), Interp::Bilinear).unwrap();
        assert_eq!(up[[0, 0]], 1.0);
        assert_eq!(up[[0, 3]], 2.0);
        assert_eq!(up[[3, 0]], 3.0);
        assert_eq!(up[[3, 3]], 4.0);
        // (1, 1) sits at source (1/3, 1/3)
        assert!((up[[1, 1]] - (1.0 + 1.0 / 3.0 + 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn nearest_replicates_blocks() {
        let g = array![[1.0, 2.0], [3.0, 4.0]];
        let up = upsample(g.view(), (4, 4), Interp::Nearest).unwrap();
        assert_eq!(up[[1, 1]], 1.0);
        assert_eq!(up[[2, 1]], 3.0);
        assert_eq!(up[[1, 2]], 2.0);
    }

    #[test]
    fn downsampling_rejected() {
        let g = Array2::<f64>::zeros((4, 4));
        assert!(matches!(upsample(g.view(), (3, 8), Interp::Bilinear), Err(SaliencyError::Downsample { .. })));
    }

    #[test]
    fn first_fixation_hits_global_max() {
        let mut map = Array2::<f64>::zeros((5, 5));
        map[[2, 3]] = 1.0;
        let mut target = Array2::from_elem((5, 5), false);
        target[[2, 3]] = true;
        let t = run_fixations(map.view(), target.view(), &params(1.0, 10)).unwrap();
        assert!(t.detected);
        assert_eq!(t.fixations_to_target, 1);
        assert_eq!(t.points, vec![(3, 2)]);
    }

    #[test]
    fn second_peak_needs_two_fixations() {
        let mut map = Array2::<f64>::zeros((10, 10));
        map[[1, 1]] = 1.0;
        map[[7, 6]] = 0.5;
        let mut target = Array2::from_elem((10, 10), false);
        target[[7, 6]] = true;
        let t = run_fixations(map.view(), target.view(), &params(2.0, 100)).unwrap();
        assert!(t.detected);
        assert_eq!(t.fixations_to_target, 2);
    }

    #[test]
    fn budget_exhaustion() {
        let map = Array2::from_shape_fn((40, 40), |(y, x)| (y * 40 + x) as f64);
        let mut target = Array2::from_elem((40, 40), false);
        target[[0, 0]] = true;
        let t = run_fixations(map.view(), target.view(), &params(1.0, 100)).unwrap();
        assert!(!t.detected);
        assert_eq!(t.fixations_to_target, 100);
        assert_eq!(t.points.len(), 100);
    }

    #[test]
    fn fully_suppressed_map_stops_early() {
        let mut map = Array2::from_elem((3, 3), 1.0);
        map[[0, 0]] = 0.0;
        let mut target = Array2::from_elem((3, 3), false);
        target[[0, 0]] = true;
        // a radius-3 disc around (0, 1) covers the whole map
        let t = run_fixations(map.view(), target.view(), &params(3.0, 50)).unwrap();
        assert!(!t.detected);
        assert_eq!(t.fixations_to_target, 1);
    }

    #[test]
    fn ties_break_row_major() {
        let map = Array2::from_elem((4, 4), 1.0);
        let mut target = Array2::from_elem((4, 4), false);
        target[[3, 3]] = true;
        let t = run_fixations(map.view(), target.view(), &params(1.0, 100)).unwrap();
        assert_eq!(t.points[0], (0, 0));
        assert_eq!(t.points[1], (2, 0));
    }

    #[test]
    fn dilation_counts_near_misses() {
        let mut map = Array2::<f64>::zeros((9, 9));
        map[[4, 4]] = 1.0;
        let mut target = Array2::from_elem((9, 9), false);
        target[[4, 6]] = true;
        let mut p = params(1.0, 1);
        assert!(!run_fixations(map.view(), target.view(), &p).unwrap().detected);
        p.dilation = 2.0;
        assert!(run_fixations(map.view(), target.view(), &p).unwrap().detected);
    }

    #[test]
    fn empty_target_and_bad_params() {
        let map = Array2::<f64>::zeros((3, 3));
        let none = Array2::from_elem((3, 3), false);
        assert_eq!(
            run_fixations(map.view(), none.view(), &params(1.0, 5)),
            Err(SaliencyError::EmptyTarget)
        );
        let mut p = FixationParams::for_resolution(1024, 14);
        assert_eq!(p.radius, 37.0);
        p.max_fixations = 10;
        assert!(p.validate().is_err());
    }

    #[test]
    fn detection_rate_counting() {
        let tr = |detected, n| FixationTrace {
            points: vec![],
            detected,
            fixations_to_target: n,
        };
        let traces = [tr(true, 1), tr(true, 20), tr(false, 100)];
        let r = detection_rates(&traces, &[15, 25]);
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((r[1] - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(detection_rates(&[tr(true, 1), tr(true, 1)], &[15, 100]), vec![1.0, 1.0]);
        assert_eq!(detection_rates(&[tr(false, 100)], &[15, 100]), vec![0.0, 0.0]);
    }

    fn masks() -> (Array2<bool>, Array2<bool>) {
        let t = array![[true, false, false], [false, false, false]];
        let d = array![[false, true, false], [false, false, true]];
        (t, d)
    }

    #[test]
    fn msr_examples() {
        let (t, d) = masks();
        let map = array![[0.9, 0.45, 0.3], [0.1, 0.2, 0.4]];
        let r = msr_ratios(map.view(), t.view(), d.view()).unwrap();
        assert!((r.msr_targ.unwrap() - 2.0).abs() < 1e-12);
        assert!((r.msr_bg.unwrap() - 1.0 / 3.0).abs() < 1e-12);

        let uniform = Array2::from_elem((2, 3), 0.5);
        let r = msr_ratios(uniform.view(), t.view(), d.view()).unwrap();
        assert_eq!((r.msr_targ, r.msr_bg), (Some(1.0), Some(1.0)));

        let zero_distractors = array![[0.9, 0.0, 0.3], [0.1, 0.2, 0.0]];
        let r = msr_ratios(zero_distractors.view(), t.view(), d.view()).unwrap();
        assert_eq!(r.msr_targ, None);
        assert!(r.msr_bg.is_some());
    }

    #[test]
    fn msr_rejects_overlap() {
        let (t, _) = masks();
        let map = Array2::from_elem((2, 3), 1.0);
        assert_eq!(msr_ratios(map.view(), t.view(), t.view()), Err(SaliencyError::Overlap));
    }

    #[test]
    fn chance_edge_cases() {
        assert_eq!(chance_rate(10, 10, 1000, 1).unwrap(), 1.0);
        assert!((chance_rate(4, 1, 100_000, 2).unwrap() - 0.25).abs() < 0.01);
        assert!(chance_rate(4, 5, 10, 0).is_err());
    }

    #[test]
    fn mean_defined_skips_none() {
        assert_eq!(mean_defined([Some(1.0), None, Some(3.0)]), (Some(2.0), 2));
        assert_eq!(mean_defined([None]), (None, 0));
    }

    proptest! {
        #[test]
        fn msr_scale_invariant(values in prop::collection::vec(0.01f64..10.0, 6), lambda in 0.01f64..100.0) {
            let (t, d) = masks();
            let map = Array2::from_shape_vec((2, 3), values).unwrap();
            let a = msr_ratios(map.view(), t.view(), d.view()).unwrap();
            let b = msr_ratios((&map * lambda).view(), t.view(), d.view()).unwrap();
            prop_assert!((a.msr_targ.unwrap() - b.msr_targ.unwrap()).abs() < 1e-9 * a.msr_targ.unwrap());
            prop_assert!((a.msr_bg.unwrap() - b.msr_bg.unwrap()).abs() < 1e-9 * a.msr_bg.unwrap().max(1.0));
        }

        #[test]
        fn rates_nondecreasing(counts in prop::collection::vec((any::<bool>(), 1usize..=100), 1..40)) {
            let traces: Vec<_> = counts.iter().map(|&(d, n)| FixationTrace { points: vec![], detected: d, fixations_to_target: n }).collect();
            let r = detection_rates(&traces, &[1, 15, 25, 50, 100]);
            prop_assert!(r.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn fixations_avoid_suppressed_discs(values in prop::collection::vec(0.0f64..1.0, 144), radius in 1.0f64..3.0) {
            let map = Array2::from_shape_vec((12, 12), values).unwrap();
            let mut target = Array2::from_elem((12, 12), false);
            target[[0, 0]] = true;
            let p = params(radius, 200);
            let t = run_fixations(map.view(), target.view(), &p).unwrap();
            for (i, &(x, y)) in t.points.iter().enumerate() {
                for &(px, py) in &t.points[..i] {
                    let d2 = (x as f64 - px as f64).powi(2) + (y as f64 - py as f64).powi(2);
                    prop_assert!(d2 > radius * radius);
                }
            }
            prop_assert_eq!(&t, &run_fixations(map.view(), target.view(), &p).unwrap());
        }
    }
}
