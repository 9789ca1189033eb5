//! Brute-force grid-search oracles for the scalar and per-pixel resolvents.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Grid minimiser of `f` over `lo, lo + step, ..., hi` (both ends included).
pub fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).floor() as usize;
    let mut best = (f(hi), hi);
    for k in 0..=n {
        let x = lo + k as f64 * step;
        let fx = f(x);
        if fx < best.0 {
            best = (fx, x);
        }
    }
    best.1
}

/// Successive grid searches, each level on a window of ±3 previous steps.
pub fn refined_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: &[f64]) -> f64 {
    let mut x = grid_argmin(&f, lo, hi, steps[0]);
    for w in steps.windows(2) {
        let r = 3.0 * w[0];
        x = grid_argmin(&f, (x - r).max(lo), (x + r).min(hi), w[1]);
    }
    x
}

/// `argmin_z (z − v̄)²/(2σ) + g*(z)`; `g*` returns `+∞` off its domain.
pub fn scalar_prox(conj: impl Fn(f64) -> f64, vbar: f64, sigma: f64, lo: f64, hi: f64, steps: &[f64]) -> f64 {
    refined_argmin(|z| (z - vbar) * (z - vbar) / (2.0 * sigma) + conj(z), lo, hi, steps)
}

pub fn soft_conj(data: f64) -> impl Fn(f64) -> f64 {
    move |z| 0.5 * z * z + z * data
}

pub fn hard_conj(data: f64) -> impl Fn(f64) -> f64 {
    move |z| z * data
}

pub fn saturated_conj(cap: f64) -> impl Fn(f64) -> f64 {
    move |z| if z <= 0.0 { z * cap } else { f64::INFINITY }
}

/// Closest point of the Euclidean λ-disk to `w̄`, searched on a polar grid
/// whose radial range always contains the rim.
pub fn disk_projection(w: (f64, f64), lambda: f64, steps: &[f64]) -> (f64, f64) {
    let cost = |r: f64, t: f64| {
        let (s, c) = t.sin_cos();
        (r * c - w.0).powi(2) + (r * s - w.1).powi(2)
    };
    let search = |r_lo: f64, r_hi: f64, t_lo: f64, t_hi: f64, step: f64| {
        let rs: Vec<f64> = {
            let n = ((r_hi - r_lo) / step).floor() as usize;
            (0..=n).map(|k| r_lo + k as f64 * step).chain(std::iter::once(r_hi)).collect()
        };
        let nt = ((t_hi - t_lo) / step).floor() as usize;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for k in 0..=nt {
            let t = t_lo + k as f64 * step;
            for &r in &rs {
                let c = cost(r, t);
                if c < best.0 {
                    best = (c, r, t);
                }
            }
        }
        (best.1, best.2)
    };
    let (mut r, mut t) = search(0.0, lambda, -PI, PI, steps[0]);
    for w in steps.windows(2) {
        let d = 3.0 * w[0];
        (r, t) = search((r - d).max(0.0), (r + d).min(lambda), t - d, t + d, w[1]);
    }
    (r * t.cos(), r * t.sin())
}

/// Componentwise clamp oracle for the anisotropic ball.
pub fn box_projection(w: (f64, f64), lambda: f64, step: f64) -> (f64, f64) {
    let one = |x: f64| grid_argmin(|z| (z - x) * (z - x), -lambda, lambda, step);
    (one(w.0), one(w.1))
}
