use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    hue_distance, raster::rasterize_figure, Appearance, Bounds, Canvas, FeatureValue, Shape,
    SingletonDim, Slot, StimError, Stimulus, StimulusSpec, LABEL_GROUP1, LABEL_GROUP2,
    MIN_HUE_SEPARATION, MIN_ORIENTATION_SEPARATION, MIN_SIZE_RATIO,
};

const P3_CANVAS: u32 = 1024;
const P3_GRID: u32 = 7;
const P3_ITEM_SIZE: f64 = 64.0;
const P3_BAR_LENGTH: f64 = 96.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingletonSpec {
    pub feature_dim: SingletonDim,
    pub canvas: u32,
    /// Cells per side of the square item grid.
    pub grid: u32,
    /// (row, col) of the target.
    pub target_cell: (u32, u32),
    pub distractor_value: FeatureValue,
    pub target_value: FeatureValue,
    pub base_figure: Appearance,
    pub seed: u64,
}

fn orientation_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

impl SingletonSpec {
    /// Draws the target cell and feature values from `seed`.
    pub fn sample(feature_dim: SingletonDim, seed: u64) -> SingletonSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = rng.random_range(0..P3_GRID * P3_GRID);
        let target_cell = (cell / P3_GRID, cell % P3_GRID);
        let mut base = Appearance::default_colored(Shape::Square, P3_ITEM_SIZE);
        let (distractor, target) = match feature_dim {
            SingletonDim::Color => {
                let d: f64 = rng.random_range(0.0..360.0);
                let t = (d + rng.random_range(MIN_HUE_SEPARATION..=360.0 - MIN_HUE_SEPARATION)).rem_euclid(360.0);
                (d, t)
            }
            SingletonDim::Orientation => {
                base.shape = Shape::Bar;
                base.size_px = P3_BAR_LENGTH;
                let d: f64 = rng.random_range(0.0..180.0);
                let t = (d + rng.random_range(MIN_ORIENTATION_SEPARATION..=180.0 - MIN_ORIENTATION_SEPARATION))
                    .rem_euclid(180.0);
                (d, t)
            }
            SingletonDim::Size => {
                let scale: f64 = rng.random_range(MIN_SIZE_RATIO..=2.0);
                if rng.random_bool(0.5) {
                    (P3_ITEM_SIZE, (P3_ITEM_SIZE * scale).ceil())
                } else {
                    (P3_ITEM_SIZE, (P3_ITEM_SIZE / scale).floor())
                }
            }
        };
        SingletonSpec {
            feature_dim,
            canvas: P3_CANVAS,
            grid: P3_GRID,
            target_cell,
            distractor_value: FeatureValue::Scalar(distractor),
            target_value: FeatureValue::Scalar(target),
            base_figure: base,
            seed,
        }
    }

    fn appearance(&self, value: FeatureValue) -> Result<Appearance, StimError> {
        let v = value
            .scalar()
            .filter(|v| v.is_finite())
            .ok_or_else(|| StimError::RejectedSpec("singleton values must be finite numbers".into()))?;
        let mut a = self.base_figure;
        match self.feature_dim {
            SingletonDim::Color => a.hue_deg = v,
            SingletonDim::Orientation => a.orientation_deg = v,
            SingletonDim::Size => a.size_px = v,
        }
        Ok(a)
    }

    pub fn target_appearance(&self) -> Result<Appearance, StimError> {
        self.appearance(self.target_value)
    }

    pub fn distractor_appearance(&self) -> Result<Appearance, StimError> {
        self.appearance(self.distractor_value)
    }

    pub fn validate(&self) -> Result<(), StimError> {
        let reject = |msg: String| Err(StimError::RejectedSpec(msg));
        if self.grid == 0 {
            return reject("grid must be positive".into());
        }
        if self.target_cell.0 >= self.grid || self.target_cell.1 >= self.grid {
            return reject(format!("target cell {:?} outside the {} grid", self.target_cell, self.grid));
        }
        let (t, d) = (self.target_appearance()?, self.distractor_appearance()?);
        match self.feature_dim {
            SingletonDim::Color => {
                if hue_distance(t.hue_deg, d.hue_deg) < MIN_HUE_SEPARATION {
                    return reject(format!("target and distractor hues closer than {MIN_HUE_SEPARATION} deg"));
                }
            }
            SingletonDim::Orientation => {
                if orientation_distance(t.orientation_deg, d.orientation_deg) < MIN_ORIENTATION_SEPARATION {
                    return reject(format!(
                        "target and distractor orientations closer than {MIN_ORIENTATION_SEPARATION} deg"
                    ));
                }
            }
            SingletonDim::Size => {
                let (a, b) = (t.size_px, d.size_px);
                if a <= 0.0 || b <= 0.0 || a.max(b) / a.min(b) < MIN_SIZE_RATIO {
                    return reject(format!("target and distractor sizes differ by less than {MIN_SIZE_RATIO}x"));
                }
            }
        }
        Ok(())
    }
}

/// Grid cells of a singleton display, row-major.
pub fn singleton_layout(spec: &SingletonSpec) -> Vec<Slot> {
    let pitch = spec.canvas as f64 / spec.grid as f64;
    let mut slots = Vec::with_capacity((spec.grid * spec.grid) as usize);
    for row in 0..spec.grid {
        for col in 0..spec.grid {
            let min_x = col as f64 * pitch;
            let min_y = row as f64 * pitch;
            slots.push(Slot {
                row,
                col,
                // Integer centers make every distractor rasterize identically.
                center: ((min_x + pitch / 2.0).round(), (min_y + pitch / 2.0).round()),
                cell: Bounds {
                    min_x,
                    min_y,
                    max_x: min_x + pitch,
                    max_y: min_y + pitch,
                },
            });
        }
    }
    slots
}

/// Renders a singleton display: the target carries label 1, every distractor label 2.
pub fn gen_p3_stimulus(spec: &SingletonSpec) -> Result<Stimulus, StimError> {
    spec.validate()?;
    let target = spec.target_appearance()?;
    let distractor = spec.distractor_appearance()?;
    let canvas = Canvas {
        width: spec.canvas,
        height: spec.canvas,
    };
    let mut stim = Stimulus::blank(spec.canvas, spec.canvas, StimulusSpec::Singleton(spec.clone()));
    for slot in singleton_layout(spec) {
        let is_target = (slot.row, slot.col) == spec.target_cell;
        let look = if is_target { target } else { distractor };
        let figure = look.figure(slot.center);
        if !figure.bounds().within(&slot.cell) {
            return Err(StimError::Layout(format!(
                "{:?} of size {} exceeds its grid cell",
                figure.shape, figure.size_px
            )));
        }
        let set = rasterize_figure(&figure, canvas)?;
        stim.paint(&set, if is_target { LABEL_GROUP1 } else { LABEL_GROUP2 });
    }
    Ok(stim)
}
