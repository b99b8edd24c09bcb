//! Synthetic stimuli with exact label masks.
//!
//! Two families are produced: similarity-grouping displays (four rows of
//! figures, alternating between two groups that differ along one feature
//! dimension) and singleton displays (a 7x7 grid with one odd item out).
//! Every generator is a pure function of its spec.

mod color;
mod dataset;
mod grouping;
mod raster;
mod singleton;

use std::path::PathBuf;

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use color::{hsl_to_rgb, hue_distance, rgb_to_hsl};
pub use dataset::{
    derive_seed, gen_grouping_dataset, gen_p3_dataset, read_label_png, DatasetManifest,
    DatasetRecord, MANIFEST_FILE,
};
pub use grouping::{gen_grouping_stimulus, grouping_layout, GroupingSpec, Slot};
pub use raster::{rasterize_figure, Bounds, Canvas, FigureParams, PixelSet, Shape};
pub use singleton::{gen_p3_stimulus, singleton_layout, SingletonSpec};

/// Uniform mid-gray background.
pub const BACKGROUND: [u8; 3] = [128, 128, 128];

pub const LABEL_BACKGROUND: u8 = 0;
/// Group 1 in grouping stimuli, the target in singleton stimuli.
pub const LABEL_GROUP1: u8 = 1;
/// Group 2 in grouping stimuli, the distractors in singleton stimuli.
pub const LABEL_GROUP2: u8 = 2;

pub const MIN_HUE_SEPARATION: f64 = 60.0;
pub const MIN_SATURATION_SEPARATION: f64 = 0.3;
pub const MIN_LIGHTNESS_SEPARATION: f64 = 0.3;
pub const MIN_LIGHTNESS_FROM_BACKGROUND: f64 = 0.15;
pub const MIN_ORIENTATION_SEPARATION: f64 = 30.0;
pub const MIN_SIZE_RATIO: f64 = 1.5;
/// Lowest saturation a group may take; below this a mid-lightness figure
/// quantizes to the background gray.
pub const MIN_SATURATION: f64 = 0.15;

#[derive(Debug, Error)]
pub enum StimError {
    #[error("rejected spec: {0}")]
    RejectedSpec(String),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("dataset {0} already exists in the output directory")]
    DuplicateDataset(String),
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("manifest error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Feature dimension along which the two groups of a grouping stimulus differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDim {
    Hue,
    Saturation,
    Lightness,
    Shape,
    Orientation,
    Size,
}

impl FeatureDim {
    pub const ALL: [FeatureDim; 6] = [
        FeatureDim::Hue,
        FeatureDim::Saturation,
        FeatureDim::Lightness,
        FeatureDim::Shape,
        FeatureDim::Orientation,
        FeatureDim::Size,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureDim::Hue => "hue",
            FeatureDim::Saturation => "saturation",
            FeatureDim::Lightness => "lightness",
            FeatureDim::Shape => "shape",
            FeatureDim::Orientation => "orientation",
            FeatureDim::Size => "size",
        }
    }

    pub fn index(self) -> u64 {
        FeatureDim::ALL.iter().position(|d| *d == self).unwrap() as u64
    }
}

/// Feature dimension of the singleton in a P3-style display.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingletonDim {
    Color,
    Orientation,
    Size,
}

impl SingletonDim {
    pub const ALL: [SingletonDim; 3] = [SingletonDim::Color, SingletonDim::Orientation, SingletonDim::Size];

    pub fn name(self) -> &'static str {
        match self {
            SingletonDim::Color => "color",
            SingletonDim::Orientation => "orientation",
            SingletonDim::Size => "size",
        }
    }

    pub fn index(self) -> u64 {
        SingletonDim::ALL.iter().position(|d| *d == self).unwrap() as u64
    }
}

/// Grouping dataset version: how figures relate to the 16-px token grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Version {
    /// Figures inside single 16x16 tokens.
    V16,
    /// Figures fitting 32x32 squares centered on every other token center.
    V32,
    /// Token-agnostic 37x37 figures, the whole set centered in the image.
    V37,
}

impl Version {
    pub const ALL: [Version; 3] = [Version::V16, Version::V32, Version::V37];

    pub fn name(self) -> &'static str {
        match self {
            Version::V16 => "v16",
            Version::V32 => "v32",
            Version::V37 => "v37",
        }
    }

    /// Side of the square each figure must fit in.
    pub fn cell_extent(self) -> f64 {
        match self {
            Version::V16 => 16.0,
            Version::V32 => 32.0,
            Version::V37 => 37.0,
        }
    }

    /// Default figure size. Even sizes keep integer-centered edges off pixel centers.
    pub fn base_size(self) -> f64 {
        match self {
            Version::V16 => 14.0,
            Version::V32 => 30.0,
            Version::V37 => 34.0,
        }
    }

    pub fn default_figures_per_row(self) -> u32 {
        match self {
            Version::V16 => 7,
            // A 32-px cell on the last odd token would overhang the canvas.
            Version::V32 => 6,
            // 7 * 37 + 6 * 5 = 289 px does not fit a 224-px canvas.
            Version::V37 => 5,
        }
    }
}

impl std::str::FromStr for Version {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "v16" => Ok(Version::V16),
            "v32" => Ok(Version::V32),
            "v37" => Ok(Version::V37),
            other => Err(format!("unknown version {other:?} (expected v16, v32 or v37)")),
        }
    }
}

/// A feature value in the unit of its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Shape(Shape),
    Scalar(f64),
}

impl FeatureValue {
    pub fn scalar(self) -> Option<f64> {
        match self {
            FeatureValue::Scalar(v) => Some(v),
            FeatureValue::Shape(_) => None,
        }
    }

    pub fn shape(self) -> Option<Shape> {
        match self {
            FeatureValue::Shape(s) => Some(s),
            FeatureValue::Scalar(_) => None,
        }
    }
}

/// Appearance of a figure along every feature dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub shape: Shape,
    pub size_px: f64,
    pub orientation_deg: f64,
    pub hue_deg: f64,
    pub saturation: f64,
    pub lightness: f64,
}

impl Appearance {
    /// Fixed saturated red used wherever color is not the varied dimension.
    pub fn default_colored(shape: Shape, size_px: f64) -> Self {
        Appearance {
            shape,
            size_px,
            orientation_deg: 0.0,
            hue_deg: 0.0,
            saturation: 0.8,
            lightness: 0.5,
        }
    }

    pub fn rgb(&self) -> [u8; 3] {
        hsl_to_rgb(self.hue_deg, self.saturation, self.lightness)
    }

    pub fn figure(&self, center: (f64, f64)) -> FigureParams {
        FigureParams {
            shape: self.shape,
            size_px: self.size_px,
            orientation_deg: self.orientation_deg,
            color: self.rgb(),
            center,
        }
    }
}

/// Generation record of a stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StimulusSpec {
    Grouping(GroupingSpec),
    Singleton(SingletonSpec),
}

/// Rendered stimulus with its label map (0 background, 1 group 1 or target,
/// 2 group 2 or distractor).
#[derive(Debug, Clone)]
pub struct Stimulus {
    pub image: RgbImage,
    pub labels: GrayImage,
    pub spec: StimulusSpec,
}

impl Stimulus {
    fn blank(width: u32, height: u32, spec: StimulusSpec) -> Self {
        Stimulus {
            image: RgbImage::from_pixel(width, height, image::Rgb(BACKGROUND)),
            labels: GrayImage::new(width, height),
            spec,
        }
    }

    fn paint(&mut self, set: &PixelSet, label: u8) {
        for &(x, y) in &set.pixels {
            self.image.put_pixel(x, y, image::Rgb(set.color));
            self.labels.put_pixel(x, y, image::Luma([label]));
        }
    }

    pub fn label_count(&self, label: u8) -> usize {
        self.labels.pixels().filter(|p| p.0[0] == label).count()
    }
}
