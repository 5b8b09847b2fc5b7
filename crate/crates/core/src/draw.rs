//! Anti-aliased shape rasterization used by the synthetic generator and the
//! curvature calibration.
//!
//! Pixel `(i, j)` covers the unit square centred on `(i, j)`.

use crate::raster::GrayImage;

/// Geometric ellipse description used for rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseShape {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along `angle`.
    pub a: f64,
    /// Semi-axis perpendicular to `angle`.
    pub b: f64,
    /// Orientation of the `a` axis, radians.
    pub angle: f64,
}

impl EllipseShape {
    #[inline]
    fn inside(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u * u) / (self.a * self.a) + (v * v) / (self.b * self.b) <= 1.0
    }

    /// Half-extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (
            (self.a * self.a * c * c + self.b * self.b * s * s).sqrt(),
            (self.a * self.a * s * s + self.b * self.b * c * c).sqrt(),
        )
    }
}

fn blend(img: &mut GrayImage, x: usize, y: usize, value: f64, coverage: f64) {
    if coverage <= 0.0 {
        return;
    }
    let bg = img.get(x, y) as f64;
    let v = bg + (value - bg) * coverage;
    img.set(x, y, v.round().clamp(0.0, 255.0) as u8);
}

/// Fills `shape` with `value`, blending by per-pixel coverage estimated on a
/// `samples`×`samples` sub-grid.
pub fn fill_ellipse(img: &mut GrayImage, shape: &EllipseShape, value: u8, samples: usize) {
    let samples = samples.max(1);
    let (hx, hy) = shape.half_extents();
    let x0 = ((shape.cx - hx).floor() as i64 - 1).max(0) as usize;
    let y0 = ((shape.cy - hy).floor() as i64 - 1).max(0) as usize;
    let x1 = ((shape.cx + hx).ceil() as i64 + 1).clamp(0, img.width() as i64 - 1) as usize;
    let y1 = ((shape.cy + hy).ceil() as i64 + 1).clamp(0, img.height() as i64 - 1) as usize;
    if x0 > x1 || y0 > y1 {
        return;
    }
    let inv = 1.0 / samples as f64;
    let total = (samples * samples) as f64;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let mut hits = 0usize;
            for sy in 0..samples {
                let py = y as f64 - 0.5 + (sy as f64 + 0.5) * inv;
                for sx in 0..samples {
                    let px = x as f64 - 0.5 + (sx as f64 + 0.5) * inv;
                    if shape.inside(px, py) {
                        hits += 1;
                    }
                }
            }
            blend(img, x, y, value as f64, hits as f64 / total);
        }
    }
}

/// Fills everything above the horizontal line `y = edge_y` with `value`,
/// anti-aliased along the boundary row.
pub fn fill_above(img: &mut GrayImage, edge_y: f64, value: u8) {
    for y in 0..img.height() {
        let top = y as f64 - 0.5;
        let coverage = (edge_y - top).clamp(0.0, 1.0);
        if coverage <= 0.0 {
            break;
        }
        for x in 0..img.width() {
            blend(img, x, y, value as f64, coverage);
        }
    }
}
