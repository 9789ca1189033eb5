//! Simulated acquisition defects: detector saturation ("capping") and
//! additive Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{MarError, Result};
use crate::proximal::SaturationMask;
use crate::radon::Sinogram;

/// Replaces every entry `≥ cap` by exactly `cap` and marks it in the mask.
pub fn cap_sinogram(sino: &Sinogram, cap: f64) -> Result<(Sinogram, SaturationMask)> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(MarError::invalid(format!("cap must be positive, got {cap}")));
    }
    let mask = sino.values().mapv(|v| v >= cap);
    let capped = sino.values().mapv(|v| if v >= cap { cap } else { v });
    Ok((sino.with_values(capped), SaturationMask::new(mask)))
}

/// Quantity the relative noise level is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseReference {
    #[default]
    Max,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation as a fraction of the reference value.
    pub relative_level: f64,
    pub rng_seed: u64,
    pub reference: NoiseReference,
}

impl NoiseSpec {
    pub fn new(relative_level: f64, rng_seed: u64) -> Self {
        NoiseSpec { relative_level, rng_seed, reference: NoiseReference::Max }
    }

    /// Absolute standard deviation for the given data.
    pub fn std_dev(&self, sino: &Sinogram) -> f64 {
        let reference = match self.reference {
            NoiseReference::Max => sino.max(),
            NoiseReference::Mean => sino.values().mean().unwrap_or(0.0),
        };
        self.relative_level * reference.abs()
    }
}

/// Adds i.i.d. zero-mean Gaussian noise, reproducible from the seed.
pub fn add_noise(sino: &Sinogram, spec: &NoiseSpec) -> Result<Sinogram> {
    if !(spec.relative_level >= 0.0 && spec.relative_level.is_finite()) {
        return Err(MarError::invalid(format!("noise level must be non-negative, got {}", spec.relative_level)));
    }
    let std_dev = spec.std_dev(sino);
    if std_dev == 0.0 {
        return Ok(sino.clone());
    }
    let normal = Normal::new(0.0, std_dev).map_err(|e| MarError::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let noisy = sino.values().mapv(|v| v + normal.sample(&mut rng));
    Ok(sino.with_values(noisy))
}
