//! Closed-form resolvents `(id + σ ∂G*)⁻¹` of the conjugate data and TV
//! terms. All maps act componentwise on the dual variables.
//!
//! For data entries outside the saturated set the soft term `½(x − U₀)²` has
//! conjugate `½ξ² + ξU₀`; the hard term (equality `x = U₀`) has conjugate
//! `ξU₀`. On saturated entries the constraint `x ≥ C` has conjugate `ξC` for
//! `ξ ≤ 0` and `+∞` otherwise, which gives `min{v̄ − σC, 0}` in both modes.

use ndarray::{Array2, ArrayView2, ArrayViewMut2, Zip};

use crate::diffops::VectorField;
use crate::error::{MarError, Result};
use crate::radon::Sinogram;

/// `true` marks a saturated sinogram entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SaturationMask(Array2<bool>);

impl SaturationMask {
    pub fn new(mask: Array2<bool>) -> Self {
        SaturationMask(mask)
    }

    pub fn empty(dim: (usize, usize)) -> Self {
        SaturationMask(Array2::from_elem(dim, false))
    }

    pub fn as_array(&self) -> &Array2<bool> {
        &self.0
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|&m| m)
    }

    pub fn get(&self, idx: (usize, usize)) -> bool {
        self.0[idx]
    }
}

/// Entries with `U₀ ≥ C`.
pub fn detect_mask(data: &Sinogram, cap: f64) -> Result<SaturationMask> {
    if !(cap > 0.0) {
        return Err(MarError::invalid(format!("cap must be positive, got {cap}")));
    }
    Ok(SaturationMask(data.values().mapv(|v| v >= cap)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintMode {
    /// L2 data term on every entry, no saturation constraint.
    Unconstrained,
    /// L2 data term off the mask, `Au ≥ C` on it.
    Soft,
    /// `Au = U₀` off the mask, `Au ≥ C` on it.
    Hard,
}

/// Pointwise norm used by the TV term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TvNorm {
    /// Euclidean magnitude of the gradient vector at each pixel.
    #[default]
    Isotropic,
    /// Sum of absolute components; its dual ball is a componentwise box.
    Anisotropic,
}

#[derive(Clone, Debug)]
pub struct ConstraintSpec {
    mask: SaturationMask,
    cap: f64,
    data: Array2<f64>,
    mode: ConstraintMode,
}

impl ConstraintSpec {
    pub fn new(data: Array2<f64>, mask: SaturationMask, cap: f64, mode: ConstraintMode) -> Result<Self> {
        if mask.dim() != data.dim() {
            return Err(MarError::invalid(format!(
                "mask shape {:?} does not match data shape {:?}",
                mask.dim(),
                data.dim()
            )));
        }
        // an infinite cap is allowed and saturates nothing
        if !(cap > 0.0) {
            return Err(MarError::invalid(format!("cap must be positive, got {cap}")));
        }
        let mask = if mode == ConstraintMode::Unconstrained { SaturationMask::empty(data.dim()) } else { mask };
        Ok(ConstraintSpec { mask, cap, data, mode })
    }

    /// Detects the mask from `data ≥ cap`.
    pub fn from_data(data: &Sinogram, cap: f64, mode: ConstraintMode) -> Result<Self> {
        let mask = detect_mask(data, cap)?;
        Self::new(data.values().clone(), mask, cap, mode)
    }

    /// Same constraints expressed for the operator `factor · A`.
    pub fn scaled(&self, factor: f64) -> Self {
        ConstraintSpec { mask: self.mask.clone(), cap: self.cap * factor, data: &self.data * factor, mode: self.mode }
    }

    pub fn mask(&self) -> &SaturationMask {
        &self.mask
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn mode(&self) -> ConstraintMode {
        self.mode
    }
}

/// Soft data term off the mask: `(v̄ − σU₀)/(1 + σ)`.
#[inline]
pub fn soft_data_entry(vbar: f64, data: f64, sigma: f64) -> f64 {
    (vbar - sigma * data) / (1.0 + sigma)
}

/// Equality constraint off the mask: `v̄ − σU₀`.
#[inline]
pub fn hard_data_entry(vbar: f64, data: f64, sigma: f64) -> f64 {
    vbar - sigma * data
}

/// Saturation constraint on the mask: `min{v̄ − σC, 0}`.
#[inline]
pub fn saturated_entry(vbar: f64, cap: f64, sigma: f64) -> f64 {
    (vbar - sigma * cap).min(0.0)
}

/// In-place data-dual resolvent for the spec's mode.
pub fn resolve_data_inplace(mut v: ArrayViewMut2<f64>, spec: &ConstraintSpec, sigma: f64) {
    let cap = spec.cap;
    let hard = spec.mode == ConstraintMode::Hard;
    Zip::from(&mut v).and(&spec.data).and(spec.mask.as_array()).for_each(|v, &d, &m| {
        *v = if m {
            saturated_entry(*v, cap, sigma)
        } else if hard {
            hard_data_entry(*v, d, sigma)
        } else {
            soft_data_entry(*v, d, sigma)
        };
    });
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(MarError::invalid(format!("dual step must be positive, got {sigma}")));
    }
    Ok(())
}

fn check_dual_shape(vbar: &ArrayView2<f64>, spec: &ConstraintSpec) -> Result<()> {
    if vbar.dim() != spec.data.dim() {
        return Err(MarError::invalid(format!(
            "dual variable shape {:?} does not match data shape {:?}",
            vbar.dim(),
            spec.data.dim()
        )));
    }
    Ok(())
}

/// Resolvent of the soft-constrained data conjugate (unconstrained mode uses
/// the same formula with an empty mask).
pub fn resolvent_data_soft(vbar: ArrayView2<f64>, spec: &ConstraintSpec, sigma: f64) -> Result<Array2<f64>> {
    check_sigma(sigma)?;
    check_dual_shape(&vbar, spec)?;
    let mut out = vbar.to_owned();
    let soft = ConstraintSpec {
        mode: match spec.mode {
            ConstraintMode::Hard => ConstraintMode::Soft,
            m => m,
        },
        ..spec.clone()
    };
    resolve_data_inplace(out.view_mut(), &soft, sigma);
    Ok(out)
}

/// Resolvent of the hard-constrained data conjugate.
pub fn resolvent_data_hard(vbar: ArrayView2<f64>, spec: &ConstraintSpec, sigma: f64) -> Result<Array2<f64>> {
    check_sigma(sigma)?;
    check_dual_shape(&vbar, spec)?;
    let mut out = vbar.to_owned();
    let hard = ConstraintSpec { mode: ConstraintMode::Hard, ..spec.clone() };
    resolve_data_inplace(out.view_mut(), &hard, sigma);
    Ok(out)
}

/// In-place projection onto the λ-ball of the dual TV norm.
pub fn project_tv_inplace(w: &mut VectorField, lambda: f64, norm: TvNorm) {
    match norm {
        TvNorm::Isotropic => {
            let inv = 1.0 / lambda;
            Zip::from(&mut w.dx).and(&mut w.dy).for_each(|x, y| {
                let scale = (x.hypot(*y) * inv).max(1.0);
                *x /= scale;
                *y /= scale;
            });
        }
        TvNorm::Anisotropic => {
            w.dx.mapv_inplace(|x| x.clamp(-lambda, lambda));
            w.dy.mapv_inplace(|y| y.clamp(-lambda, lambda));
        }
    }
}

/// `w̄ / max{1, |w̄|/λ}` per pixel (isotropic), or a componentwise clamp.
pub fn resolvent_tv(wbar: &VectorField, lambda: f64, norm: TvNorm) -> Result<VectorField> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(MarError::invalid(format!("TV weight must be positive, got {lambda}")));
    }
    let mut out = wbar.clone();
    project_tv_inplace(&mut out, lambda, norm);
    Ok(out)
}
