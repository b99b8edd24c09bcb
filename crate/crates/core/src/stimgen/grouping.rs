use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    hue_distance, raster::rasterize_figure, Appearance, Bounds, Canvas, FeatureDim, FeatureValue,
    Shape, StimError, Stimulus, StimulusSpec, Version, BACKGROUND, LABEL_GROUP1, LABEL_GROUP2,
    MIN_HUE_SEPARATION, MIN_LIGHTNESS_FROM_BACKGROUND, MIN_LIGHTNESS_SEPARATION,
    MIN_ORIENTATION_SEPARATION, MIN_SATURATION, MIN_SATURATION_SEPARATION, MIN_SIZE_RATIO,
};

const TOKEN: f64 = 16.0;
const V37_GAP: f64 = 5.0;
/// Aspect-3:1 bars rotated to any angle stay within `sqrt(1 + 1/9)` of their length.
const BAR_ROTATION_SLACK: f64 = 1.054_092_553_389_459_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingSpec {
    pub feature_dim: FeatureDim,
    pub version: Version,
    pub canvas: u32,
    pub rows: u32,
    pub figures_per_row: u32,
    pub group_a_value: FeatureValue,
    pub group_b_value: FeatureValue,
    /// Appearance along every dimension other than `feature_dim`.
    pub base_figure: Appearance,
    pub seed: u64,
}

/// One figure position with the square it has to fit in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub row: u32,
    pub col: u32,
    pub center: (f64, f64),
    pub cell: Bounds,
}

fn background_lightness() -> f64 {
    BACKGROUND[0] as f64 / 255.0
}

fn orientation_distance(a: f64, b: f64) -> f64 {
    // Bars are symmetric under a half turn.
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn even_size(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let lo = (lo / 2.0).ceil() as u32;
    let hi = (hi / 2.0).floor() as u32;
    2.0 * rng.random_range(lo..=hi) as f64
}

impl GroupingSpec {
    /// Draws group values and a base figure for `feature_dim` from `seed`.
    pub fn sample(feature_dim: FeatureDim, version: Version, seed: u64) -> GroupingSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = version.base_size();
        let shape = Shape::GROUPING_SET[rng.random_range(0..Shape::GROUPING_SET.len())];
        let mut base = Appearance::default_colored(shape, size);
        let (a, b) = match feature_dim {
            FeatureDim::Hue => {
                let a: f64 = rng.random_range(0.0..360.0);
                let b = (a + rng.random_range(MIN_HUE_SEPARATION..=360.0 - MIN_HUE_SEPARATION)).rem_euclid(360.0);
                (FeatureValue::Scalar(a), FeatureValue::Scalar(b))
            }
            FeatureDim::Saturation => {
                base.hue_deg = rng.random_range(0.0..360.0);
                loop {
                    let a: f64 = rng.random_range(MIN_SATURATION..=1.0);
                    let b: f64 = rng.random_range(MIN_SATURATION..=1.0);
                    if (a - b).abs() >= MIN_SATURATION_SEPARATION {
                        break (FeatureValue::Scalar(a), FeatureValue::Scalar(b));
                    }
                }
            }
            FeatureDim::Lightness => {
                base.hue_deg = rng.random_range(0.0..360.0);
                let bg = background_lightness();
                loop {
                    let a: f64 = rng.random_range(0.05..=0.95);
                    let b: f64 = rng.random_range(0.05..=0.95);
                    if (a - b).abs() >= MIN_LIGHTNESS_SEPARATION
                        && (a - bg).abs() >= MIN_LIGHTNESS_FROM_BACKGROUND
                        && (b - bg).abs() >= MIN_LIGHTNESS_FROM_BACKGROUND
                    {
                        break (FeatureValue::Scalar(a), FeatureValue::Scalar(b));
                    }
                }
            }
            FeatureDim::Shape => {
                let n = Shape::GROUPING_SET.len();
                let i = rng.random_range(0..n);
                let j = (i + rng.random_range(1..n)) % n;
                (
                    FeatureValue::Shape(Shape::GROUPING_SET[i]),
                    FeatureValue::Shape(Shape::GROUPING_SET[j]),
                )
            }
            FeatureDim::Orientation => {
                base.shape = Shape::Bar;
                base.size_px = (size / BAR_ROTATION_SLACK).floor();
                let a: f64 = rng.random_range(0.0..180.0);
                let b = (a + rng.random_range(MIN_ORIENTATION_SEPARATION..=180.0 - MIN_ORIENTATION_SEPARATION))
                    .rem_euclid(180.0);
                (FeatureValue::Scalar(a), FeatureValue::Scalar(b))
            }
            FeatureDim::Size => {
                let small = even_size(&mut rng, 6.0, size / MIN_SIZE_RATIO);
                let large = even_size(&mut rng, small * MIN_SIZE_RATIO, size);
                if rng.random_bool(0.5) {
                    (FeatureValue::Scalar(small), FeatureValue::Scalar(large))
                } else {
                    (FeatureValue::Scalar(large), FeatureValue::Scalar(small))
                }
            }
        };
        GroupingSpec {
            feature_dim,
            version,
            canvas: 224,
            rows: 4,
            figures_per_row: version.default_figures_per_row(),
            group_a_value: a,
            group_b_value: b,
            base_figure: base,
            seed,
        }
    }

    /// Appearance of group A (`which == 0`) or group B.
    pub fn group_appearance(&self, which: usize) -> Result<Appearance, StimError> {
        let value = if which == 0 { self.group_a_value } else { self.group_b_value };
        apply_value(self.base_figure, self.feature_dim, value)
    }

    /// Checks the separation constraints.
    pub fn validate(&self) -> Result<(), StimError> {
        let reject = |msg: String| Err(StimError::RejectedSpec(msg));
        if self.rows == 0 || self.figures_per_row == 0 {
            return reject("rows and figures_per_row must be positive".into());
        }
        let (a, b) = (self.group_a_value, self.group_b_value);
        if a == b {
            return reject(format!("both groups share the {} value", self.feature_dim.name()));
        }
        let scalars = || match (a.scalar(), b.scalar()) {
            (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Ok((x, y)),
            _ => Err(StimError::RejectedSpec(format!(
                "{} values must be finite numbers",
                self.feature_dim.name()
            ))),
        };
        match self.feature_dim {
            FeatureDim::Hue => {
                let (x, y) = scalars()?;
                if hue_distance(x, y) < MIN_HUE_SEPARATION {
                    return reject(format!("hues {x} and {y} closer than {MIN_HUE_SEPARATION} deg"));
                }
            }
            FeatureDim::Saturation => {
                let (x, y) = scalars()?;
                if (x - y).abs() < MIN_SATURATION_SEPARATION {
                    return reject(format!("saturations {x} and {y} closer than {MIN_SATURATION_SEPARATION}"));
                }
                if x.min(y) < MIN_SATURATION || x.max(y) > 1.0 {
                    return reject(format!("saturation outside [{MIN_SATURATION}, 1]"));
                }
            }
            FeatureDim::Lightness => {
                let (x, y) = scalars()?;
                if (x - y).abs() < MIN_LIGHTNESS_SEPARATION {
                    return reject(format!("lightnesses {x} and {y} closer than {MIN_LIGHTNESS_SEPARATION}"));
                }
                let bg = background_lightness();
                if (x - bg).abs() < MIN_LIGHTNESS_FROM_BACKGROUND
                    || (y - bg).abs() < MIN_LIGHTNESS_FROM_BACKGROUND
                    || x.min(y) < 0.0
                    || x.max(y) > 1.0
                {
                    return reject("lightness too close to the background".into());
                }
            }
            FeatureDim::Shape => {
                if a.shape().is_none() || b.shape().is_none() {
                    return reject("shape values must name shapes".into());
                }
            }
            FeatureDim::Orientation => {
                let (x, y) = scalars()?;
                if orientation_distance(x, y) < MIN_ORIENTATION_SEPARATION {
                    return reject(format!(
                        "orientations {x} and {y} closer than {MIN_ORIENTATION_SEPARATION} deg"
                    ));
                }
            }
            FeatureDim::Size => {
                let (x, y) = scalars()?;
                if x <= 0.0 || y <= 0.0 || x.max(y) / x.min(y) < MIN_SIZE_RATIO {
                    return reject(format!("sizes {x} and {y} differ by less than {MIN_SIZE_RATIO}x"));
                }
            }
        }
        for which in 0..2 {
            let rgb = self.group_appearance(which)?.rgb();
            if rgb == BACKGROUND {
                return reject("a group renders in the background color".into());
            }
        }
        Ok(())
    }
}

pub(super) fn apply_value(
    mut base: Appearance,
    dim: FeatureDim,
    value: FeatureValue,
) -> Result<Appearance, StimError> {
    let scalar = || {
        value
            .scalar()
            .ok_or_else(|| StimError::RejectedSpec(format!("{} expects a number", dim.name())))
    };
    match dim {
        FeatureDim::Hue => base.hue_deg = scalar()?,
        FeatureDim::Saturation => base.saturation = scalar()?,
        FeatureDim::Lightness => base.lightness = scalar()?,
        FeatureDim::Orientation => base.orientation_deg = scalar()?,
        FeatureDim::Size => base.size_px = scalar()?,
        FeatureDim::Shape => {
            base.shape = value
                .shape()
                .ok_or_else(|| StimError::RejectedSpec("shape expects a shape name".into()))?
        }
    }
    Ok(base)
}

/// `count` slot indices out of `available`, centered.
fn centered(available: u32, count: u32, what: &str) -> Result<impl Iterator<Item = u32>, StimError> {
    if count > available {
        return Err(StimError::Layout(format!(
            "{count} {what} do not fit; at most {available}"
        )));
    }
    let start = (available - count) / 2;
    Ok(start..start + count)
}

/// Figure positions for a grouping spec, row-major.
pub fn grouping_layout(spec: &GroupingSpec) -> Result<Vec<Slot>, StimError> {
    let side = spec.canvas as f64;
    let mut slots = Vec::with_capacity((spec.rows * spec.figures_per_row) as usize);
    match spec.version {
        Version::V16 | Version::V32 => {
            if !spec.canvas.is_multiple_of(TOKEN as u32) {
                return Err(StimError::Layout(format!(
                    "canvas {} is not a multiple of the 16-px token",
                    spec.canvas
                )));
            }
            let tokens = spec.canvas / TOKEN as u32;
            let half = spec.version.cell_extent() / 2.0;
            // V16 uses even tokens, V32 odd ones; a slot is usable when its cell stays on canvas.
            let offset = if spec.version == Version::V16 { 0 } else { 1 };
            let usable: Vec<u32> = (offset..tokens)
                .step_by(2)
                .filter(|&t| {
                    let c = t as f64 * TOKEN + TOKEN / 2.0;
                    c - half >= 0.0 && c + half <= side
                })
                .collect();
            let available = usable.len() as u32;
            let rows: Vec<u32> = centered(available, spec.rows, "rows")?.map(|i| usable[i as usize]).collect();
            let cols: Vec<u32> = centered(available, spec.figures_per_row, "figures per row")?
                .map(|i| usable[i as usize])
                .collect();
            for (r, &row_slot) in rows.iter().enumerate() {
                for (c, &col_slot) in cols.iter().enumerate() {
                    let (tx, ty) = (col_slot, row_slot);
                    let center = (tx as f64 * TOKEN + TOKEN / 2.0, ty as f64 * TOKEN + TOKEN / 2.0);
                    slots.push(Slot {
                        row: r as u32,
                        col: c as u32,
                        center,
                        cell: Bounds {
                            min_x: center.0 - half,
                            min_y: center.1 - half,
                            max_x: center.0 + half,
                            max_y: center.1 + half,
                        },
                    });
                }
            }
        }
        Version::V37 => {
            let extent = spec.version.cell_extent();
            let pitch = extent + V37_GAP;
            let span = |n: u32| n as f64 * extent + (n as f64 - 1.0) * V37_GAP;
            let (w, h) = (span(spec.figures_per_row), span(spec.rows));
            if w > side || h > side {
                return Err(StimError::Layout(format!(
                    "{}x{} grid of {extent}-px figures spans {w}x{h} px, canvas is {side}",
                    spec.figures_per_row, spec.rows
                )));
            }
            let (x0, y0) = ((side - w) / 2.0, (side - h) / 2.0);
            for r in 0..spec.rows {
                for c in 0..spec.figures_per_row {
                    let min_x = x0 + c as f64 * pitch;
                    let min_y = y0 + r as f64 * pitch;
                    slots.push(Slot {
                        row: r,
                        col: c,
                        center: (min_x + extent / 2.0, min_y + extent / 2.0),
                        cell: Bounds {
                            min_x,
                            min_y,
                            max_x: min_x + extent,
                            max_y: min_y + extent,
                        },
                    });
                }
            }
        }
    }
    Ok(slots)
}

/// Renders a grouping stimulus. Rows alternate A, B, A, B; group A carries label 1.
pub fn gen_grouping_stimulus(spec: &GroupingSpec) -> Result<Stimulus, StimError> {
    spec.validate()?;
    let slots = grouping_layout(spec)?;
    let groups = [spec.group_appearance(0)?, spec.group_appearance(1)?];
    let canvas = Canvas {
        width: spec.canvas,
        height: spec.canvas,
    };
    let mut stim = Stimulus::blank(spec.canvas, spec.canvas, StimulusSpec::Grouping(spec.clone()));
    for slot in &slots {
        let which = (slot.row % 2) as usize;
        let figure = groups[which].figure(slot.center);
        let bounds = figure.bounds();
        if !bounds.within(&slot.cell) {
            return Err(StimError::Layout(format!(
                "{:?} of size {} ({:.1}x{:.1} px rotated) exceeds its {}-px cell",
                figure.shape,
                figure.size_px,
                bounds.width(),
                bounds.height(),
                spec.version.cell_extent()
            )));
        }
        let set = rasterize_figure(&figure, canvas)?;
        let label = if which == 0 { LABEL_GROUP1 } else { LABEL_GROUP2 };
        stim.paint(&set, label);
    }
    Ok(stim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hue_spec() -> GroupingSpec {
        let mut spec = GroupingSpec::sample(FeatureDim::Hue, Version::V16, 7);
        spec.group_a_value = FeatureValue::Scalar(0.0);
        spec.group_b_value = FeatureValue::Scalar(120.0);
        spec
    }

    #[test]
    fn v16_hue_fits_tokens() {
        let stim = gen_grouping_stimulus(&hue_spec()).unwrap();
        assert_eq!(stim.image.dimensions(), (224, 224));
        for (x, y, p) in stim.labels.enumerate_pixels() {
            if p.0[0] == 0 {
                continue;
            }
            // Every figure pixel lies in an even token column and even token row.
            assert_eq!((x / 16) % 2, 0);
            assert_eq!((y / 16) % 2, 0);
        }
        assert_eq!(grouping_layout(&hue_spec()).unwrap().len(), 28);
    }

    #[test]
    fn equal_values_rejected() {
        let mut spec = hue_spec();
        spec.group_b_value = spec.group_a_value;
        assert!(matches!(gen_grouping_stimulus(&spec), Err(StimError::RejectedSpec(_))));
    }

    #[test]
    fn close_hues_rejected() {
        let mut spec = hue_spec();
        spec.group_b_value = FeatureValue::Scalar(59.0);
        assert!(matches!(spec.validate(), Err(StimError::RejectedSpec(_))));
        spec.group_b_value = FeatureValue::Scalar(330.0);
        assert!(matches!(spec.validate(), Err(StimError::RejectedSpec(_))));
    }

    #[test]
    fn same_spec_same_bytes() {
        let spec = GroupingSpec::sample(FeatureDim::Shape, Version::V32, 99);
        let a = gen_grouping_stimulus(&spec).unwrap();
        let b = gen_grouping_stimulus(&spec).unwrap();
        assert_eq!(a.image.as_raw(), b.image.as_raw());
        assert_eq!(a.labels.as_raw(), b.labels.as_raw());
    }

    #[test]
    fn oversized_figure_is_layout_error() {
        let mut spec = GroupingSpec::sample(FeatureDim::Size, Version::V16, 3);
        spec.group_a_value = FeatureValue::Scalar(10.0);
        spec.group_b_value = FeatureValue::Scalar(20.0);
        assert!(matches!(gen_grouping_stimulus(&spec), Err(StimError::Layout(_))));
    }

    #[test]
    fn too_many_figures_is_layout_error() {
        let mut spec = GroupingSpec::sample(FeatureDim::Hue, Version::V37, 3);
        spec.figures_per_row = 7;
        assert!(matches!(gen_grouping_stimulus(&spec), Err(StimError::Layout(_))));
    }

    #[test]
    fn rows_alternate_labels() {
        let spec = hue_spec();
        let stim = gen_grouping_stimulus(&spec).unwrap();
        for slot in grouping_layout(&spec).unwrap() {
            let (x, y) = (slot.center.0 as u32, slot.center.1 as u32);
            let expected = if slot.row % 2 == 0 { 1 } else { 2 };
            assert_eq!(stim.labels.get_pixel(x, y).0[0], expected);
        }
    }
}
