//! Pixel-driven discrete Radon transform and its exact adjoint.
//!
//! Every pixel centre is projected onto the detector line for each angle and
//! its value, weighted by the grid spacing `h`, is split linearly between the
//! two detector bins it falls between. Back projection reads the detector
//! with the very same interpolation weights, so the pair is adjoint to
//! floating-point rounding.
//!
//! Offsets follow `s = x cos φ + y sin φ` with `x` to the right and `y`
//! upwards, both in pixel units and measured from the image centre.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MarError, Result};
use crate::image::{dot, norm_sq, Image, ImageShape};

pub const DEFAULT_ANGLES: usize = 180;
pub const DEFAULT_POWER_ITERS: usize = 100;
pub const NORM_SAFETY_FACTOR: f64 = 1.05;
const POWER_SEED: u64 = 0x6d61_725f_6e6f_726d;

/// Parallel-beam acquisition geometry with uniformly spaced angles.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    n_angles: usize,
    angle_start: f64,
    angle_step: f64,
    n_bins: usize,
    /// Detector bin width in pixel units.
    bin_spacing: f64,
    /// Fractional bin index that offset `s = 0` lands on.
    detector_center: f64,
}

impl Geometry {
    /// `n_angles` angles `k·π/n_angles` and `n_bins` unit bins centred on the
    /// rotation axis.
    pub fn uniform(n_angles: usize, n_bins: usize) -> Result<Self> {
        if n_angles == 0 {
            return Err(MarError::invalid("need at least one projection angle"));
        }
        Self::new(n_angles, 0.0, PI / n_angles as f64, n_bins, 1.0, (n_bins as f64 - 1.0) / 2.0)
    }

    pub fn new(
        n_angles: usize,
        angle_start: f64,
        angle_step: f64,
        n_bins: usize,
        bin_spacing: f64,
        detector_center: f64,
    ) -> Result<Self> {
        if n_angles == 0 || n_bins == 0 {
            return Err(MarError::invalid(format!(
                "geometry needs at least one angle and one bin, got {n_angles}x{n_bins}"
            )));
        }
        if !(0.0..PI).contains(&angle_start) {
            return Err(MarError::invalid(format!("first angle {angle_start} outside [0, pi)")));
        }
        if n_angles > 1 && !(angle_step > 0.0) {
            return Err(MarError::invalid("angles must be strictly increasing"));
        }
        let last = angle_start + (n_angles - 1) as f64 * angle_step;
        if n_angles > 1 && last >= PI {
            return Err(MarError::invalid(format!("last angle {last} outside [0, pi)")));
        }
        if !(bin_spacing > 0.0 && bin_spacing.is_finite()) || !detector_center.is_finite() {
            return Err(MarError::invalid("bin spacing must be positive, centre finite"));
        }
        Ok(Geometry { n_angles, angle_start, angle_step, n_bins, bin_spacing, detector_center })
    }

    /// Bin count that fits the image diagonal: `2·ceil(√2·max(n, m)/2) + 1`.
    pub fn default_bins(shape: ImageShape) -> usize {
        let longest = shape.rows.max(shape.cols) as f64;
        2 * (std::f64::consts::SQRT_2 * longest / 2.0).ceil() as usize + 1
    }

    pub fn default_for(shape: ImageShape) -> Self {
        Self::uniform(DEFAULT_ANGLES, Self::default_bins(shape)).expect("valid default geometry")
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn angle_start(&self) -> f64 {
        self.angle_start
    }

    pub fn angle_step(&self) -> f64 {
        self.angle_step
    }

    pub fn bin_spacing(&self) -> f64 {
        self.bin_spacing
    }

    pub fn detector_center(&self) -> f64 {
        self.detector_center
    }

    pub fn angle(&self, k: usize) -> f64 {
        self.angle_start + k as f64 * self.angle_step
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.n_angles).map(|k| self.angle(k)).collect()
    }

    /// Checks that every pixel centre of `shape` projects between two
    /// detector bins for every angle.
    pub fn check_covers(&self, shape: ImageShape) -> Result<()> {
        let tables = Tables::new(self, shape);
        let hi = (self.n_bins - 1) as f64;
        for a in 0..self.n_angles {
            for &i in &[0, shape.rows - 1] {
                for &j in &[0, shape.cols - 1] {
                    let t = tables.position(a, i, j);
                    if !(0.0..=hi).contains(&t) {
                        return Err(MarError::invalid(format!(
                            "detector with {} bins too narrow for {}x{} image: \
                             pixel ({i},{j}) lands on bin position {t:.3} at angle {:.4}",
                            self.n_bins,
                            shape.rows,
                            shape.cols,
                            self.angle(a)
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Projection data over (angle, detector offset).
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    geometry: Geometry,
    values: Array2<f64>,
}

impl Sinogram {
    pub fn new(geometry: Geometry, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (geometry.n_angles, geometry.n_bins) {
            return Err(MarError::invalid(format!(
                "sinogram values {:?} do not match geometry {}x{}",
                values.dim(),
                geometry.n_angles,
                geometry.n_bins
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MarError::invalid("sinogram contains non-finite values"));
        }
        Ok(Sinogram { geometry, values })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        let values = Array2::zeros((geometry.n_angles, geometry.n_bins));
        Sinogram { geometry, values }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
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

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn with_values(&self, values: Array2<f64>) -> Self {
        debug_assert_eq!(values.dim(), self.values.dim());
        Sinogram { geometry: self.geometry.clone(), values }
    }
}

/// Per-angle projected pixel coordinates in bin units.
#[derive(Clone, Debug)]
struct Tables {
    n_bins: usize,
    rows: usize,
    cols: usize,
    /// `n_angles × cols`, `x_j cos φ / spacing`
    col_term: Vec<f64>,
    /// `n_angles × rows`, `y_i sin φ / spacing + centre`
    row_term: Vec<f64>,
}

impl Tables {
    fn new(geometry: &Geometry, shape: ImageShape) -> Self {
        let (rows, cols) = (shape.rows, shape.cols);
        let cx = (cols as f64 - 1.0) / 2.0;
        let cy = (rows as f64 - 1.0) / 2.0;
        let mut col_term = Vec::with_capacity(geometry.n_angles * cols);
        let mut row_term = Vec::with_capacity(geometry.n_angles * rows);
        for a in 0..geometry.n_angles {
            let (sin, cos) = geometry.angle(a).sin_cos();
            col_term.extend((0..cols).map(|j| (j as f64 - cx) * cos / geometry.bin_spacing));
            row_term.extend((0..rows).map(|i| (cy - i as f64) * sin / geometry.bin_spacing + geometry.detector_center));
        }
        Tables { n_bins: geometry.n_bins, rows, cols, col_term, row_term }
    }

    #[inline(always)]
    fn position(&self, angle: usize, i: usize, j: usize) -> f64 {
        self.col_term[angle * self.cols + j] + self.row_term[angle * self.rows + i]
    }
}

/// Lower bin index and fractional weight towards the next bin.
#[inline(always)]
fn split(t: f64) -> (usize, f64) {
    // i32 round trips are single instructions; usize <-> f64 is not
    let b = t as i32;
    (b as usize, t - f64::from(b))
}

/// The discrete Radon transform for one image shape and geometry, optionally
/// scaled by a constant factor.
#[derive(Clone, Debug)]
pub struct RadonOperator {
    geometry: Geometry,
    shape: ImageShape,
    tables: Tables,
    scale: f64,
    norm_bound: Option<f64>,
}

impl RadonOperator {
    pub fn new(geometry: Geometry, shape: ImageShape) -> Result<Self> {
        geometry.check_covers(shape)?;
        let tables = Tables::new(&geometry, shape);
        Ok(RadonOperator { geometry, shape, tables, scale: 1.0, norm_bound: None })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn image_shape(&self) -> ImageShape {
        self.shape
    }

    /// Factor applied on top of the unscaled transform (`1/D` once normalised).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Known upper bound on the operator norm, if one has been established.
    pub fn norm_bound(&self) -> Option<f64> {
        self.norm_bound
    }

    /// The bound `D ≥ ‖A_h‖` this operator was normalised by (1 if never
    /// normalised).
    pub fn normalization(&self) -> f64 {
        1.0 / self.scale
    }

    /// Rescales to `A / D` with `D = safety · estimate_norm(A)`, recording
    /// `‖A / D‖ ≤ 1`.
    pub fn normalized(mut self, power_iters: usize, safety: f64) -> Result<Self> {
        if !(safety >= 1.0) {
            return Err(MarError::invalid(format!("norm safety factor {safety} below 1")));
        }
        let estimate = self.estimate_norm(power_iters)?;
        if estimate == 0.0 {
            return Err(MarError::invalid("operator is identically zero"));
        }
        let d = safety * estimate / self.scale;
        self.scale = 1.0 / d;
        self.norm_bound = Some(1.0);
        Ok(self)
    }

    pub fn forward(&self, img: &Image) -> Result<Sinogram> {
        if img.shape() != self.shape {
            return Err(MarError::invalid(format!(
                "image shape {:?} does not match operator shape {:?}",
                img.shape(),
                self.shape
            )));
        }
        let mut out = Array2::zeros((self.geometry.n_angles, self.geometry.n_bins));
        self.forward_into(img.values().view(), out.view_mut());
        Ok(Sinogram { geometry: self.geometry.clone(), values: out })
    }

    pub fn adjoint(&self, sino: &Sinogram) -> Result<Image> {
        if sino.geometry != self.geometry {
            return Err(MarError::invalid("sinogram geometry does not match operator"));
        }
        let mut out = Array2::zeros((self.shape.rows, self.shape.cols));
        self.adjoint_into(sino.values().view(), out.view_mut());
        Image::new(out, self.shape.spacing)
    }

    /// `out ← A img`. Parallel over angles; each angle owns one sinogram row.
    pub fn forward_into(&self, img: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
        let (rows, cols) = (self.shape.rows, self.shape.cols);
        assert_eq!(img.dim(), (rows, cols));
        assert_eq!(out.dim(), (self.geometry.n_angles, self.geometry.n_bins));
        let img = img.as_standard_layout();
        let pixels = img.as_slice().expect("standard layout");
        let out = out.as_slice_mut().expect("sinogram buffers are contiguous");
        let weight = self.shape.spacing * self.scale;
        let n_bins = self.tables.n_bins;
        let t = &self.tables;

        // Independent accumulators per image row residue break the
        // store-to-load dependency between neighbouring splats.
        const LANES: usize = 4;
        let stride = n_bins + 1;
        out.par_chunks_mut(n_bins).enumerate().for_each_init(
            // one spare bin per lane absorbs the zero-weight neighbour of the last bin
            || vec![0.0; LANES * stride],
            |acc, (a, row)| {
                acc.fill(0.0);
                let col_term = &t.col_term[a * cols..(a + 1) * cols];
                let row_term = &t.row_term[a * rows..(a + 1) * rows];
                let (l0, rest) = acc.split_at_mut(stride);
                let (l1, rest) = rest.split_at_mut(stride);
                let (l2, l3) = rest.split_at_mut(stride);
                let splat = |lane: &mut [f64], v: f64, pos: f64| {
                    let (b, f) = split(pos);
                    debug_assert!(b + 1 < lane.len());
                    // SAFETY: `check_covers` bounds every position by `n_bins - 1`
                    // (positions are monotone in i and j, so corners are extreme)
                    // and each lane holds `n_bins + 1` entries.
                    unsafe {
                        *lane.get_unchecked_mut(b) += v * (weight * (1.0 - f));
                        *lane.get_unchecked_mut(b + 1) += v * (weight * f);
                    }
                };
                for (block, r) in pixels.chunks_exact(cols * LANES).zip(row_term.chunks_exact(LANES)) {
                    let (p0, rest) = block.split_at(cols);
                    let (p1, rest) = rest.split_at(cols);
                    let (p2, p3) = rest.split_at(cols);
                    for j in 0..cols {
                        let cj = col_term[j];
                        splat(l0, p0[j], cj + r[0]);
                        splat(l1, p1[j], cj + r[1]);
                        splat(l2, p2[j], cj + r[2]);
                        splat(l3, p3[j], cj + r[3]);
                    }
                }
                // leftover rows (rows % 4), processed on lane 0
                for (line, &ri) in pixels.chunks_exact(cols).zip(row_term).skip(rows - rows % LANES) {
                    for (&v, &cj) in line.iter().zip(col_term) {
                        splat(l0, v, cj + ri);
                    }
                }
                for (k, r) in row.iter_mut().enumerate() {
                    *r = (l0[k] + l1[k]) + (l2[k] + l3[k]);
                }
            },
        );
    }

    /// `out ← A* sino`. Parallel over image rows; each pixel accumulates its
    /// own sum over angles in angle order.
    pub fn adjoint_into(&self, sino: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
        let (rows, cols) = (self.shape.rows, self.shape.cols);
        let (n_angles, n_bins) = (self.geometry.n_angles, self.geometry.n_bins);
        assert_eq!(sino.dim(), (n_angles, n_bins));
        assert_eq!(out.dim(), (rows, cols));
        // zero-padded copy so the upper neighbour of the last bin reads 0
        let mut padded = Array2::<f64>::zeros((n_angles, n_bins + 1));
        padded.slice_mut(ndarray::s![.., ..n_bins]).assign(&sino);
        let data = padded.as_slice().expect("fresh array");
        let out = out.as_slice_mut().expect("image buffers are contiguous");
        let weight = self.shape.spacing * self.scale;
        let t = &self.tables;

        out.par_chunks_mut(cols).enumerate().for_each(|(i, line)| {
            line.fill(0.0);
            for a in 0..n_angles {
                let ri = t.row_term[a * rows + i];
                let col_term = &t.col_term[a * cols..(a + 1) * cols];
                let row = &data[a * (n_bins + 1)..(a + 1) * (n_bins + 1)];
                for (px, &cj) in line.iter_mut().zip(col_term) {
                    let (b, f) = split(cj + ri);
                    debug_assert!(b + 1 < row.len());
                    // SAFETY: as in `forward_into`; rows are padded to `n_bins + 1`.
                    let (lo, hi) = unsafe { (*row.get_unchecked(b), *row.get_unchecked(b + 1)) };
                    *px += lo * (weight * (1.0 - f)) + hi * (weight * f);
                }
            }
        });
    }

    /// Power iteration on `A*A` from a fixed-seed start; returns the square
    /// root of the largest Rayleigh quotient seen.
    pub fn estimate_norm(&self, iters: usize) -> Result<f64> {
        let mut y = Array2::zeros((self.geometry.n_angles, self.geometry.n_bins));
        power_iteration(self.shape, iters, |x, next| {
            self.forward_into(x.view(), y.view_mut());
            self.adjoint_into(y.view(), next.view_mut());
            norm_sq(&y)
        })
    }
}

/// Seeded uniform random start image for power iterations.
pub(crate) fn seeded_start(shape: ImageShape) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    Array2::from_shape_simple_fn((shape.rows, shape.cols), || rng.random::<f64>())
}

/// Square root of the largest Rayleigh quotient of `B*B` over `iters` power
/// iterations. `step(x, next)` must set `next ← B*B x` and return `‖Bx‖²`.
pub(crate) fn power_iteration<F>(shape: ImageShape, iters: usize, mut step: F) -> Result<f64>
where
    F: FnMut(&Array2<f64>, &mut Array2<f64>) -> f64,
{
    if iters == 0 {
        return Err(MarError::invalid("power iteration needs at least one step"));
    }
    let mut x = seeded_start(shape);
    let mut next = Array2::zeros(x.dim());
    let mut best = 0.0f64;
    for _ in 0..iters {
        let nx = norm_sq(&x).sqrt();
        if nx == 0.0 {
            break;
        }
        x.mapv_inplace(|v| v / nx);
        best = best.max(step(&x, &mut next));
        std::mem::swap(&mut x, &mut next);
    }
    Ok(best.sqrt())
}

pub fn project(img: &Image, geometry: &Geometry) -> Result<Sinogram> {
    RadonOperator::new(geometry.clone(), img.shape())?.forward(img)
}

pub fn backproject(sino: &Sinogram, shape: ImageShape) -> Result<Image> {
    RadonOperator::new(sino.geometry().clone(), shape)?.adjoint(sino)
}

pub fn estimate_norm(geometry: &Geometry, shape: ImageShape, iters: usize) -> Result<f64> {
    RadonOperator::new(geometry.clone(), shape)?.estimate_norm(iters)
}

/// `A_h / D` with `D` the safety-padded power-iteration estimate of `‖A_h‖`.
pub fn normalized_operator(geometry: &Geometry, shape: ImageShape) -> Result<RadonOperator> {
    RadonOperator::new(geometry.clone(), shape)?.normalized(DEFAULT_POWER_ITERS, NORM_SAFETY_FACTOR)
}

/// Relative adjoint mismatch `|⟨Au, v⟩ − ⟨u, A*v⟩| / (‖Au‖‖v‖)`.
pub fn adjoint_mismatch(op: &RadonOperator, u: &Array2<f64>, v: &Array2<f64>) -> f64 {
    let mut au = Array2::zeros(v.dim());
    let mut atv = Array2::zeros(u.dim());
    op.forward_into(u.view(), au.view_mut());
    op.adjoint_into(v.view(), atv.view_mut());
    let lhs = dot(&au, v);
    let rhs = dot(u, &atv);
    let denom = norm_sq(&au).sqrt() * norm_sq(v).sqrt();
    if denom == 0.0 {
        (lhs - rhs).abs()
    } else {
        (lhs - rhs).abs() / denom
    }
}
