//! Shared fixtures for the benchmarks.

use mar_core::degrade::cap_sinogram;
use mar_core::phantom::{add_metal, shepp_logan};
use mar_core::radon::project;
use mar_core::{Geometry, Image, MetalInsert, SaturationMask, Sinogram};

/// Phantom with a metal block scaled to the image, its capped default-geometry
/// sinogram and saturation mask, with the cap at `45·n/128`.
pub fn metal_problem(n: usize) -> (Image, Sinogram, SaturationMask, f64) {
    let base = shepp_logan(n, n).expect("size at least 8");
    let side = (10 * n / 128).max(1);
    let gt = add_metal(&base, &MetalInsert::centered_right(base.shape(), side, side, 3.0)).expect("insert fits");
    let sino = project(&gt, &Geometry::default_for(gt.shape())).expect("default geometry covers the image");
    let cap = 45.0 * n as f64 / 128.0;
    let (capped, mask) = cap_sinogram(&sino, cap).expect("positive cap");
    (gt, capped, mask, cap)
}
