//! The reconstruction-domain image type.

use ndarray::Array2;

use crate::error::{MarError, Result};

/// Real-valued pixel grid with isotropic spacing `h`.
///
/// Pixel `(0, 0)` is the top-left corner; rows run downwards and columns to
/// the right. Values are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    values: Array2<f64>,
    spacing: f64,
}

/// Dimensions and spacing of an image without its values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageShape {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

impl ImageShape {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(MarError::invalid(format!("image shape must be at least 1x1, got {rows}x{cols}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(MarError::invalid(format!("grid spacing must be positive and finite, got {spacing}")));
        }
        Ok(ImageShape { rows, cols, spacing })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::new(size, size, 1.0)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Image {
    pub fn new(values: Array2<f64>, spacing: f64) -> Result<Self> {
        let (rows, cols) = values.dim();
        ImageShape::new(rows, cols, spacing)?;
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(MarError::invalid(format!("image value at flat index {bad} is not finite")));
        }
        Ok(Image { values, spacing })
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Image { values: Array2::zeros((shape.rows, shape.cols)), spacing: shape.spacing }
    }

    pub fn from_shape_vec(shape: ImageShape, data: Vec<f64>) -> Result<Self> {
        let values =
            Array2::from_shape_vec((shape.rows, shape.cols), data).map_err(|e| MarError::invalid(e.to_string()))?;
        Image::new(values, shape.spacing)
    }

    pub fn shape(&self) -> ImageShape {
        let (rows, cols) = self.values.dim();
        ImageShape { rows, cols, spacing: self.spacing }
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn width(&self) -> usize {
        self.cols()
    }

    pub fn height(&self) -> usize {
        self.rows()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub(crate) fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}
