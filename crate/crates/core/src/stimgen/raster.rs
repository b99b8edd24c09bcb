//! Hard-edged rasterization of the figure shape set.
//!
//! A pixel belongs to a figure iff its center `(x + 0.5, y + 0.5)` lies inside
//! the transformed shape. No anti-aliasing is applied, so the pixel set doubles
//! as an exact label mask.

use serde::{Deserialize, Serialize};

use super::StimError;

/// The nine figure shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Triangle,
    Ellipse,
    Star,
    Rhombus,
    RightTriangle,
    Trapezoid,
    Hexagon,
    Square,
    /// 3:1 bar used as the base figure for orientation stimuli.
    Bar,
}

impl Shape {
    /// Shapes eligible for the shape feature dimension.
    pub const GROUPING_SET: [Shape; 9] = [
        Shape::Rectangle,
        Shape::Triangle,
        Shape::Ellipse,
        Shape::Star,
        Shape::Rhombus,
        Shape::RightTriangle,
        Shape::Trapezoid,
        Shape::Hexagon,
        Shape::Square,
    ];

    // Vertices in unit coordinates: x right, y down, extent within [-1, 1]^2.
    fn polygon(self) -> Option<Vec<(f64, f64)>> {
        let verts = match self {
            Shape::Rectangle => vec![(-1.0, -0.5), (1.0, -0.5), (1.0, 0.5), (-1.0, 0.5)],
            Shape::Bar => {
                let h = 1.0 / 3.0;
                vec![(-1.0, -h), (1.0, -h), (1.0, h), (-1.0, h)]
            }
            Shape::Square => vec![(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)],
            Shape::Triangle => vec![(0.0, -1.0), (1.0, 1.0), (-1.0, 1.0)],
            Shape::RightTriangle => vec![(-1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)],
            Shape::Rhombus => vec![(0.0, -1.0), (0.6, 0.0), (0.0, 1.0), (-0.6, 0.0)],
            Shape::Trapezoid => vec![(-0.5, -0.7), (0.5, -0.7), (1.0, 0.7), (-1.0, 0.7)],
            Shape::Hexagon => (0..6)
                .map(|k| {
                    let a = (k as f64) * std::f64::consts::PI / 3.0;
                    (a.cos(), a.sin())
                })
                .collect(),
            Shape::Star => (0..10)
                .map(|k| {
                    let r = if k % 2 == 0 { 1.0 } else { 0.4 };
                    let a = -std::f64::consts::FRAC_PI_2 + (k as f64) * std::f64::consts::PI / 5.0;
                    (r * a.cos(), r * a.sin())
                })
                .collect(),
            Shape::Ellipse => return None,
        };
        Some(verts)
    }
}

const ELLIPSE_MINOR: f64 = 0.6;

/// Geometry and color of one figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureParams {
    pub shape: Shape,
    /// Side of the unrotated figure's bounding square, in pixels.
    pub size_px: f64,
    /// Counterclockwise rotation as seen on screen, in degrees.
    pub orientation_deg: f64,
    pub color: [u8; 3],
    /// Center in continuous pixel coordinates.
    pub center: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

/// Axis-aligned bounds in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Bounds {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn within(&self, other: &Bounds) -> bool {
        const EPS: f64 = 1e-9;
        self.min_x >= other.min_x - EPS
            && self.min_y >= other.min_y - EPS
            && self.max_x <= other.max_x + EPS
            && self.max_y <= other.max_y + EPS
    }
}

/// Rasterized figure: pixels in row-major order plus the fill color.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelSet {
    pub pixels: Vec<(u32, u32)>,
    pub color: [u8; 3],
}

impl PixelSet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// sin/cos of an angle in degrees, exact at multiples of 90.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let d = deg.rem_euclid(360.0);
    if d == 0.0 {
        (0.0, 1.0)
    } else if d == 90.0 {
        (1.0, 0.0)
    } else if d == 180.0 {
        (0.0, -1.0)
    } else if d == 270.0 {
        (-1.0, 0.0)
    } else {
        d.to_radians().sin_cos()
    }
}

impl FigureParams {
    fn to_screen(self, u: f64, v: f64, sin: f64, cos: f64) -> (f64, f64) {
        let half = self.size_px / 2.0;
        let (u, v) = (u * half, v * half);
        (
            self.center.0 + u * cos + v * sin,
            self.center.1 - u * sin + v * cos,
        )
    }

    fn to_local(self, x: f64, y: f64, sin: f64, cos: f64) -> (f64, f64) {
        let half = self.size_px / 2.0;
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        ((dx * cos - dy * sin) / half, (dx * sin + dy * cos) / half)
    }

    /// Bounding box of the rotated figure.
    pub fn bounds(&self) -> Bounds {
        let (sin, cos) = sin_cos_deg(self.orientation_deg);
        match self.shape.polygon() {
            Some(verts) => {
                let mut b = Bounds {
                    min_x: f64::INFINITY,
                    min_y: f64::INFINITY,
                    max_x: f64::NEG_INFINITY,
                    max_y: f64::NEG_INFINITY,
                };
                for (u, v) in verts {
                    let (x, y) = self.to_screen(u, v, sin, cos);
                    b.min_x = b.min_x.min(x);
                    b.min_y = b.min_y.min(y);
                    b.max_x = b.max_x.max(x);
                    b.max_y = b.max_y.max(y);
                }
                b
            }
            None => {
                let a = self.size_px / 2.0;
                let b = a * ELLIPSE_MINOR;
                let hx = (a * a * cos * cos + b * b * sin * sin).sqrt();
                let hy = (a * a * sin * sin + b * b * cos * cos).sqrt();
                Bounds {
                    min_x: self.center.0 - hx,
                    min_y: self.center.1 - hy,
                    max_x: self.center.0 + hx,
                    max_y: self.center.1 + hy,
                }
            }
        }
    }
}

// Crossing-number test; correct for the simple (possibly concave) star polygon.
fn point_in_polygon(verts: &[(f64, f64)], u: f64, v: f64) -> bool {
    let mut inside = false;
    let n = verts.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = verts[i];
        let (xj, yj) = verts[j];
        if (yi > v) != (yj > v) {
            let x_cross = xi + (v - yi) * (xj - xi) / (yj - yi);
            if u < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Rasterizes one figure onto a canvas of the given size.
///
/// Fails with a layout error when any part of the rotated figure would fall
/// outside the canvas.
pub fn rasterize_figure(params: &FigureParams, canvas: Canvas) -> Result<PixelSet, StimError> {
    if !params.size_px.is_finite() || params.size_px <= 0.0 {
        return Err(StimError::Layout(format!(
            "figure size must be positive, got {}",
            params.size_px
        )));
    }
    let bounds = params.bounds();
    let frame = Bounds {
        min_x: 0.0,
        min_y: 0.0,
        max_x: canvas.width as f64,
        max_y: canvas.height as f64,
    };
    if !bounds.within(&frame) {
        return Err(StimError::Layout(format!(
            "{:?} of size {} at ({:.1}, {:.1}) leaves the {}x{} canvas",
            params.shape, params.size_px, params.center.0, params.center.1, canvas.width, canvas.height
        )));
    }

    let (sin, cos) = sin_cos_deg(params.orientation_deg);
    let polygon = params.shape.polygon();
    let x0 = bounds.min_x.floor().max(0.0) as u32;
    let y0 = bounds.min_y.floor().max(0.0) as u32;
    let x1 = (bounds.max_x.ceil() as u32).min(canvas.width);
    let y1 = (bounds.max_y.ceil() as u32).min(canvas.height);

    let mut pixels = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = params.to_local(x as f64 + 0.5, y as f64 + 0.5, sin, cos);
            let inside = match &polygon {
                Some(verts) => point_in_polygon(verts, u, v),
                None => u * u + (v / ELLIPSE_MINOR).powi(2) <= 1.0,
            };
            if inside {
                pixels.push((x, y));
            }
        }
    }
    Ok(PixelSet {
        pixels,
        color: params.color,
    })
}
