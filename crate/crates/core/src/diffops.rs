//! Forward-difference gradient with zero extension outside the grid, and the
//! matching backward-difference divergence `div = -∇*`.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};

use crate::error::{MarError, Result};
use crate::image::{Image, ImageShape};

/// Two stacked scalar planes: `dx` differences along columns (left to
/// right), `dy` differences along rows (top to bottom).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub dx: Array2<f64>,
    pub dy: Array2<f64>,
}

impl VectorField {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        VectorField { dx: Array2::zeros((rows, cols)), dy: Array2::zeros((rows, cols)) }
    }

    pub fn new(dx: Array2<f64>, dy: Array2<f64>) -> Result<Self> {
        if dx.dim() != dy.dim() {
            return Err(MarError::invalid(format!(
                "vector field components differ in shape: {:?} vs {:?}",
                dx.dim(),
                dy.dim()
            )));
        }
        Ok(VectorField { dx, dy })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.dx.dim()
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        crate::image::dot(&self.dx, &other.dx) + crate::image::dot(&self.dy, &other.dy)
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Largest pointwise Euclidean magnitude.
    pub fn max_magnitude(&self) -> f64 {
        self.dx.iter().zip(self.dy.iter()).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max)
    }
}

/// `out ← ∇_h u`.
pub fn gradient_into(u: ArrayView2<f64>, h: f64, out: &mut VectorField) {
    let (rows, cols) = u.dim();
    assert_eq!(out.dim(), (rows, cols));
    let inv_h = 1.0 / h;
    for i in 0..rows {
        for j in 0..cols {
            let here = u[[i, j]];
            let right = if j + 1 < cols { u[[i, j + 1]] } else { 0.0 };
            let below = if i + 1 < rows { u[[i + 1, j]] } else { 0.0 };
            out.dx[[i, j]] = (right - here) * inv_h;
            out.dy[[i, j]] = (below - here) * inv_h;
        }
    }
}

/// `out ← div_h p`, so that `⟨∇u, p⟩ = −⟨u, div p⟩`.
pub fn divergence_into(p: &VectorField, h: f64, mut out: ArrayViewMut2<f64>) {
    let (rows, cols) = p.dim();
    assert_eq!(out.dim(), (rows, cols));
    let inv_h = 1.0 / h;
    for i in 0..rows {
        for j in 0..cols {
            let left = if j > 0 { p.dx[[i, j - 1]] } else { 0.0 };
            let above = if i > 0 { p.dy[[i - 1, j]] } else { 0.0 };
            out[[i, j]] = (p.dx[[i, j]] - left + p.dy[[i, j]] - above) * inv_h;
        }
    }
}

pub fn gradient(img: &Image) -> VectorField {
    let mut out = VectorField::zeros(img.rows(), img.cols());
    gradient_into(img.values().view(), img.spacing(), &mut out);
    out
}

pub fn divergence(field: &VectorField, h: f64) -> Result<Image> {
    let (rows, cols) = field.dim();
    let shape = ImageShape::new(rows, cols, h)?;
    let mut out = Array2::zeros((rows, cols));
    divergence_into(field, h, out.view_mut());
    Image::new(out, shape.spacing)
}

/// `8 / h²`, an upper bound on `‖∇_h‖²`.
pub fn gradient_norm_bound(h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(MarError::invalid(format!("grid spacing must be positive, got {h}")));
    }
    Ok(8.0 / (h * h))
}

/// Power-iteration estimate of `‖∇_h‖²` on an image of the given shape.
pub fn estimate_gradient_norm_sq(shape: ImageShape, iters: usize) -> Result<f64> {
    let h = shape.spacing;
    let mut field = VectorField::zeros(shape.rows, shape.cols);
    let norm = crate::radon::power_iteration(shape, iters, |x, next| {
        gradient_into(x.view(), h, &mut field);
        divergence_into(&field, h, next.view_mut());
        next.mapv_inplace(|v| -v);
        field.norm_sq()
    })?;
    Ok(norm * norm)
}
