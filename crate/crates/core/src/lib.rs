//! Saturation-constrained TV reconstruction for CT metal artifact reduction.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degrade;
pub mod diffops;
pub mod error;
pub mod image;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod proximal;
pub mod radon;
pub mod solver;

pub use degrade::{NoiseReference, NoiseSpec};
pub use diffops::VectorField;
pub use error::{MarError, Result};
pub use image::{Image, ImageShape};
pub use io::{GridFile, GridKind};
pub use metrics::FbpFilter;
pub use phantom::MetalInsert;
pub use proximal::{ConstraintMode, ConstraintSpec, SaturationMask, TvNorm};
pub use radon::{Geometry, RadonOperator, Sinogram};
pub use solver::{DiagnosticRecord, Reconstruction, Solver, SolverConfig, SolverState};
