//! Image quality measures and the filtered back-projection baseline.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{MarError, Result};
use crate::image::{Image, ImageShape};
use crate::radon::{RadonOperator, Sinogram};

/// Peak signal-to-noise ratio in dB: `10 log10(peak² · nm / ‖u − ref‖²)`.
///
/// With `clip`, both images are first clipped to `[0, peak]`. Identical
/// inputs give `f64::INFINITY`.
pub fn psnr(u: &Image, reference: &Image, peak: f64, clip: bool) -> Result<f64> {
    if u.values().dim() != reference.values().dim() {
        return Err(MarError::invalid(format!(
            "psnr shape mismatch: {:?} vs {:?}",
            u.values().dim(),
            reference.values().dim()
        )));
    }
    psnr_values(u.values(), reference.values(), peak, clip)
}

pub(crate) fn psnr_values(u: &Array2<f64>, reference: &Array2<f64>, peak: f64, clip: bool) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(MarError::invalid(format!("psnr peak must be positive, got {peak}")));
    }
    let prep = |v: f64| if clip { v.clamp(0.0, peak) } else { v };
    let sq_err: f64 = u
        .iter()
        .zip(reference.iter())
        .map(|(&a, &b)| {
            let d = prep(a) - prep(b);
            d * d
        })
        .sum();
    if sq_err == 0.0 {
        return Ok(f64::INFINITY);
    }
    let n = u.len() as f64;
    Ok(10.0 * (peak * peak * n / sq_err).log10())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FbpFilter {
    /// Plain back projection.
    None,
    #[default]
    RamLak,
}

/// Frequency response of the band-limited ramp for an FFT of length `len`.
///
/// Built from the spatial Ram-Lak kernel (`1/4` at zero, `−1/(πk)²` at odd
/// offsets) doubled, so the response approximates `2|f|` with `f` in
/// cycles per bin and has no DC bias.
fn ramp_response(len: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut kernel = vec![Complex::new(0.0, 0.0); len];
    kernel[0].re = 0.5;
    for k in (1..len / 2).step_by(2) {
        let v = -2.0 / (PI * k as f64).powi(2);
        kernel[k].re = v;
        kernel[len - k].re = v;
    }
    planner.plan_fft_forward(len).process(&mut kernel);
    kernel.into_iter().map(|c| c.re).collect()
}

/// Applies the ramp filter to every projection row.
pub fn ramp_filter(sino: &Sinogram) -> Sinogram {
    let n_bins = sino.geometry().n_bins();
    let len = (2 * n_bins).next_power_of_two().max(64);
    let mut planner = FftPlanner::new();
    let response = ramp_response(len, &mut planner);
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut out = sino.values().clone();
    for mut row in out.rows_mut() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            b.re = v;
        }
        fwd.process(&mut buf);
        for (b, &r) in buf.iter_mut().zip(&response) {
            *b *= r;
        }
        inv.process(&mut buf);
        for (dst, b) in row.iter_mut().zip(&buf) {
            *dst = b.re / len as f64;
        }
    }
    sino.with_values(out)
}

/// Classical reconstruction used as the artifact-prone reference.
///
/// Filters (optionally), back projects and scales by `π / (2N)`, divided by
/// `h² · bin_spacing` so amplitudes come out in density units.
pub fn fbp_baseline(sino: &Sinogram, shape: ImageShape, filter: FbpFilter) -> Result<Image> {
    let op = RadonOperator::new(sino.geometry().clone(), shape)?;
    let filtered = match filter {
        FbpFilter::None => sino.clone(),
        FbpFilter::RamLak => ramp_filter(sino),
    };
    let mut img = op.adjoint(&filtered)?;
    let n = sino.geometry().n_angles() as f64;
    let scale = PI / (2.0 * n) / (shape.spacing * shape.spacing * sino.geometry().bin_spacing());
    img.values_mut().mapv_inplace(|v| v * scale);
    Ok(img)
}
