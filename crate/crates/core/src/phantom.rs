//! Synthetic ground-truth images: the Shepp-Logan head phantom with an
//! additive high-density block standing in for a metal implant.
//!
//! Pixel centres map onto `[-1, 1]²` with `x` increasing to the right and
//! `y` increasing upwards, so pixel `(0, 0)` sits at `(-1, 1)`.

use ndarray::Array2;

use crate::error::{MarError, Result};
use crate::image::{Image, ImageShape};

/// One ellipse of an analytic phantom: intensity, semi-axes, centre and
/// rotation (degrees, counter-clockwise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub semi_x: f64,
    pub semi_y: f64,
    pub center_x: f64,
    pub center_y: f64,
    pub rotation_deg: f64,
}

impl Ellipse {
    const fn new(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi: f64) -> Self {
        Ellipse { intensity, semi_x: a, semi_y: b, center_x: x0, center_y: y0, rotation_deg: phi }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let along = dx * cos + dy * sin;
        let across = dy * cos - dx * sin;
        along * along / (self.semi_x * self.semi_x) + across * across / (self.semi_y * self.semi_y) <= 1.0
    }
}

/// Ten-ellipse Shepp-Logan table with the contrast-enhanced intensities
/// (skull 1.0, brain 0.2), whose sums already lie in `[0, 1]`.
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse::new(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    Ellipse::new(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    Ellipse::new(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    Ellipse::new(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    Ellipse::new(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    Ellipse::new(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    Ellipse::new(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Normalised coordinate of pixel index `k` along an axis with `n` pixels.
pub fn axis_coordinate(k: usize, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let half = (n as f64 - 1.0) / 2.0;
    (k as f64 - half) / half
}

/// Rasterises a set of ellipses, summing the intensities of every ellipse
/// that contains each pixel centre.
pub fn rasterize(ellipses: &[Ellipse], shape: ImageShape) -> Image {
    let values = Array2::from_shape_fn((shape.rows, shape.cols), |(i, j)| {
        let x = axis_coordinate(j, shape.cols);
        let y = -axis_coordinate(i, shape.rows);
        ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.intensity).sum()
    });
    Image::new(values, shape.spacing).expect("ellipse sums are finite")
}

/// The Shepp-Logan phantom of the given size, clipped to `[0, 1]`.
pub fn shepp_logan(width: usize, height: usize) -> Result<Image> {
    if width < 8 || height < 8 {
        return Err(MarError::invalid(format!("phantom must be at least 8x8, got {width}x{height}")));
    }
    let mut img = rasterize(&SHEPP_LOGAN, ImageShape::new(height, width, 1.0)?);
    img.values_mut().mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(img)
}

/// Rectangular block of extra density added on top of an image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetalInsert {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    pub added_value: f64,
}

impl MetalInsert {
    /// Block of the given extent centred vertically and placed in the middle
    /// of the right half of the image.
    pub fn centered_right(shape: ImageShape, rows: usize, cols: usize, added_value: f64) -> Self {
        MetalInsert {
            row0: (shape.rows / 2).saturating_sub(rows / 2),
            col0: (3 * shape.cols / 4).saturating_sub(cols / 2),
            rows,
            cols,
            added_value,
        }
    }

    pub fn validate(&self, shape: ImageShape) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(MarError::invalid("metal insert must cover at least one pixel"));
        }
        if !(self.added_value >= 0.0 && self.added_value.is_finite()) {
            return Err(MarError::invalid(format!(
                "metal value must be finite and non-negative, got {}",
                self.added_value
            )));
        }
        if self.row0 + self.rows > shape.rows || self.col0 + self.cols > shape.cols {
            return Err(MarError::invalid(format!(
                "metal insert rows {}..{} cols {}..{} exceeds {}x{} image",
                self.row0,
                self.row0 + self.rows,
                self.col0,
                self.col0 + self.cols,
                shape.rows,
                shape.cols
            )));
        }
        Ok(())
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row0 + self.rows).contains(&row) && (self.col0..self.col0 + self.cols).contains(&col)
    }
}

pub fn add_metal(img: &Image, insert: &MetalInsert) -> Result<Image> {
    insert.validate(img.shape())?;
    let mut out = img.clone();
    out.values_mut()
        .slice_mut(ndarray::s![insert.row0..insert.row0 + insert.rows, insert.col0..insert.col0 + insert.cols])
        .mapv_inplace(|v| v + insert.added_value);
    Ok(out)
}
