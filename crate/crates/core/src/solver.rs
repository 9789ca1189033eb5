//! Primal-dual (Chambolle-Pock) iteration for the saturation-constrained
//! TV reconstruction.
//!
//! The operator is `K = [A; ∇_h]` with `F = 0`, so the primal resolvent is
//! the identity. One iteration, in order:
//!
//! 1. `w ← P_λ(w + σ_d ∇_h ū)`
//! 2. `v ← R_data(v + σ_d A ū)`
//! 3. `u⁺ ← u + σ_p div_h w − σ_p A* v`
//! 4. `ū ← 2u⁺ − u`, `u ← u⁺`
//!
//! The radon operator is expected to be normalised (`A = A_h / D`); data and
//! cap are scaled by the same `1/D` internally so the reconstruction stays
//! in density units.

use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use ndarray::{Array2, Zip};

use crate::diffops::{divergence_into, gradient_into, gradient_norm_bound, VectorField};
use crate::error::{MarError, Result};
use crate::image::Image;
use crate::metrics::psnr_values;
use crate::proximal::{
    project_tv_inplace, resolve_data_inplace, ConstraintMode, ConstraintSpec, SaturationMask, TvNorm,
};
use crate::radon::{RadonOperator, Sinogram};

/// Relative margin below the step-size limit used by [`default_step`].
pub const STEP_MARGIN: f64 = 1e-6;

/// `σ = τ = (1 + 8/h²)^(−1/2)·(1 − 1e−6)`, valid whenever `‖A‖ ≤ 1`.
pub fn default_step(h: f64) -> f64 {
    (1.0 + 8.0 / (h * h)).sqrt().recip() * (1.0 - STEP_MARGIN)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub mode: ConstraintMode,
    /// TV weight; forced to 1 in hard mode.
    pub lambda: f64,
    /// Saturation threshold `C` in raw sinogram units.
    pub cap: f64,
    pub primal_step: f64,
    pub dual_step: f64,
    pub max_iters: usize,
    /// Grid spacing `h`; must match the operator's image.
    pub spacing: f64,
    /// Record diagnostics every this many iterations (0 = final only).
    pub snapshot_every: usize,
    pub tv_norm: TvNorm,
}

impl SolverConfig {
    pub fn new(mode: ConstraintMode, cap: f64, max_iters: usize) -> Self {
        SolverConfig {
            mode,
            lambda: 1.0,
            cap,
            primal_step: default_step(1.0),
            dual_step: default_step(1.0),
            max_iters,
            spacing: 1.0,
            snapshot_every: 0,
            tv_norm: TvNorm::Isotropic,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_spacing(mut self, h: f64) -> Self {
        self.spacing = h;
        self.primal_step = default_step(h);
        self.dual_step = default_step(h);
        self
    }

    pub fn with_steps(mut self, primal: f64, dual: f64) -> Self {
        self.primal_step = primal;
        self.dual_step = dual;
        self
    }

    pub fn with_snapshots(mut self, every: usize) -> Self {
        self.snapshot_every = every;
        self
    }

    /// The TV weight actually used.
    pub fn effective_lambda(&self) -> f64 {
        if self.mode == ConstraintMode::Hard {
            1.0
        } else {
            self.lambda
        }
    }
}

/// Checks `σ_p σ_d (‖A‖² + 8/h²) < 1` plus basic parameter sanity.
pub fn validate_steps(cfg: &SolverConfig, norm_bound: f64) -> Result<()> {
    let grad_bound = gradient_norm_bound(cfg.spacing)?;
    if !(cfg.primal_step > 0.0 && cfg.dual_step > 0.0) {
        return Err(MarError::Config(format!(
            "step sizes must be positive (primal {}, dual {})",
            cfg.primal_step, cfg.dual_step
        )));
    }
    if cfg.max_iters == 0 {
        return Err(MarError::Config("max_iters must be at least 1".into()));
    }
    if !(cfg.effective_lambda() > 0.0 && cfg.effective_lambda().is_finite()) {
        return Err(MarError::Config(format!("lambda must be positive, got {}", cfg.lambda)));
    }
    if !(norm_bound >= 0.0 && norm_bound.is_finite()) {
        return Err(MarError::Config(format!("invalid operator norm bound {norm_bound}")));
    }
    let product = cfg.primal_step * cfg.dual_step * (norm_bound * norm_bound + grad_bound);
    if !(product < 1.0) {
        return Err(MarError::Config(format!(
            "step sizes violate sigma*tau*(|A|^2 + 8/h^2) < 1: {} * {} * ({} + {}) = {product}",
            cfg.primal_step,
            cfg.dual_step,
            norm_bound * norm_bound,
            grad_bound
        )));
    }
    Ok(())
}

/// Iterates of the primal-dual scheme.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub u: Array2<f64>,
    pub u_bar: Array2<f64>,
    /// Data dual, sinogram-shaped.
    pub v: Array2<f64>,
    /// TV dual.
    pub w: VectorField,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticRecord {
    pub iteration: usize,
    /// Objective of the normalised problem (the one being minimised).
    pub objective: f64,
    /// `max(0, C − A_h u)` over the saturated set, raw sinogram units. In
    /// hard mode also covers `|A_h u − U₀|` off the set.
    pub violation: f64,
    /// `max(0, C − A_h u)` over the saturated set only, raw units.
    pub saturation_violation: f64,
    /// `‖A_h u − U₀‖₂` over unsaturated entries, raw units.
    pub data_residual: f64,
    pub psnr: Option<f64>,
}

/// Objective value and constraint violation of `u` for the given problem.
///
/// Value is `½‖Au − U₀‖²` over unsaturated entries plus `λ TV(u)`, or just
/// `TV(u)` in hard mode; the indicator terms are reported as `violation`.
pub fn primal_objective(
    u: &Image,
    op: &RadonOperator,
    spec: &ConstraintSpec,
    lambda: f64,
    tv_norm: TvNorm,
) -> Result<(f64, f64)> {
    let sino = op.forward(u)?;
    let eval = evaluate(sino.values(), u.values(), u.spacing(), spec, tv_norm);
    let value = match spec.mode() {
        ConstraintMode::Hard => eval.tv,
        _ => 0.5 * eval.residual_sq + lambda * eval.tv,
    };
    Ok((value, eval.violation))
}

struct Evaluation {
    residual_sq: f64,
    tv: f64,
    violation: f64,
    saturation: f64,
}

fn total_variation(u: &Array2<f64>, h: f64, norm: TvNorm) -> f64 {
    let (rows, cols) = u.dim();
    let mut g = VectorField::zeros(rows, cols);
    gradient_into(u.view(), h, &mut g);
    g.dx.iter()
        .zip(g.dy.iter())
        .map(|(&x, &y)| match norm {
            TvNorm::Isotropic => x.hypot(y),
            TvNorm::Anisotropic => x.abs() + y.abs(),
        })
        .sum()
}

fn evaluate(au: &Array2<f64>, u: &Array2<f64>, h: f64, spec: &ConstraintSpec, norm: TvNorm) -> Evaluation {
    let mut residual_sq = 0.0;
    let mut violation = 0.0f64;
    let mut saturation = 0.0f64;
    let hard = spec.mode() == ConstraintMode::Hard;
    Zip::from(au).and(spec.data()).and(spec.mask().as_array()).for_each(|&a, &d, &m| {
        if m {
            saturation = saturation.max(spec.cap() - a);
        } else {
            residual_sq += (a - d) * (a - d);
            if hard {
                violation = violation.max((a - d).abs());
            }
        }
    });
    Evaluation { residual_sq, tv: total_variation(u, h, norm), violation: violation.max(saturation), saturation }
}

/// Final image plus recorded diagnostics and timing.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: Image,
    pub diagnostics: Vec<DiagnosticRecord>,
    pub iterations: usize,
    /// Time spent inside iterations, excluding diagnostics.
    pub iteration_time: Duration,
}

impl Reconstruction {
    pub fn seconds_per_iteration(&self) -> f64 {
        if self.iterations == 0 {
            return 0.0;
        }
        self.iteration_time.as_secs_f64() / self.iterations as f64
    }
}

/// Stateful solver: owns the iterates and scratch buffers.
pub struct Solver<'a> {
    op: &'a RadonOperator,
    cfg: SolverConfig,
    /// Constraints in the normalised operator's units.
    spec: ConstraintSpec,
    state: SolverState,
    grad: VectorField,
    sino_buf: Array2<f64>,
    adj_buf: Array2<f64>,
    div_buf: Array2<f64>,
}

impl<'a> Solver<'a> {
    /// Sets up the iteration from raw data. Without an explicit mask the
    /// saturated set is `{U₀ ≥ C}`.
    pub fn new(
        op: &'a RadonOperator,
        data: &Sinogram,
        mask: Option<SaturationMask>,
        cfg: SolverConfig,
    ) -> Result<Self> {
        if data.geometry() != op.geometry() {
            return Err(MarError::invalid("sinogram geometry does not match operator"));
        }
        let shape = op.image_shape();
        if shape.spacing != cfg.spacing {
            return Err(MarError::Config(format!(
                "config spacing {} differs from image spacing {}",
                cfg.spacing, shape.spacing
            )));
        }
        let bound = match op.norm_bound() {
            Some(b) => b,
            None => return Err(MarError::Config("operator has no norm bound; normalise it first".into())),
        };
        validate_steps(&cfg, bound)?;
        let raw = match mask {
            Some(m) => ConstraintSpec::new(data.values().clone(), m, cfg.cap, cfg.mode)?,
            None => ConstraintSpec::from_data(data, cfg.cap, cfg.mode)?,
        };
        let spec = raw.scaled(op.scale());
        let (rows, cols) = (shape.rows, shape.cols);
        let sdim = data.values().dim();
        let state = SolverState {
            u: Array2::zeros((rows, cols)),
            u_bar: Array2::zeros((rows, cols)),
            v: Array2::zeros(sdim),
            w: VectorField::zeros(rows, cols),
            iteration: 0,
        };
        Ok(Solver {
            op,
            cfg,
            spec,
            state,
            grad: VectorField::zeros(rows, cols),
            sino_buf: Array2::zeros(sdim),
            adj_buf: Array2::zeros((rows, cols)),
            div_buf: Array2::zeros((rows, cols)),
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Constraint set in normalised units.
    pub fn constraints(&self) -> &ConstraintSpec {
        &self.spec
    }

    /// One full iteration.
    pub fn step(&mut self) -> Result<()> {
        let h = self.cfg.spacing;
        let sd = self.cfg.dual_step;
        let sp = self.cfg.primal_step;
        let lambda = self.cfg.effective_lambda();
        let st = &mut self.state;

        gradient_into(st.u_bar.view(), h, &mut self.grad);
        st.w.dx.scaled_add(sd, &self.grad.dx);
        st.w.dy.scaled_add(sd, &self.grad.dy);
        project_tv_inplace(&mut st.w, lambda, self.cfg.tv_norm);

        self.op.forward_into(st.u_bar.view(), self.sino_buf.view_mut());
        st.v.scaled_add(sd, &self.sino_buf);
        resolve_data_inplace(st.v.view_mut(), &self.spec, sd);

        self.op.adjoint_into(st.v.view(), self.adj_buf.view_mut());
        divergence_into(&st.w, h, self.div_buf.view_mut());
        Zip::from(&mut st.u).and(&mut st.u_bar).and(&self.div_buf).and(&self.adj_buf).for_each(|u, ub, &div, &adj| {
            let next = *u + sp * div - sp * adj;
            *ub = 2.0 * next - *u;
            *u = next;
        });
        st.iteration += 1;

        if !st.u.iter().all(|x| x.is_finite()) {
            return Err(MarError::Divergence { iteration: st.iteration, location: "primal" });
        }
        if !st.v.iter().all(|x| x.is_finite()) {
            return Err(MarError::Divergence { iteration: st.iteration, location: "data dual" });
        }
        Ok(())
    }

    /// Diagnostics of the current primal iterate.
    pub fn diagnose(&mut self, ground_truth: Option<&Image>) -> Result<DiagnosticRecord> {
        let st = &self.state;
        self.op.forward_into(st.u.view(), self.sino_buf.view_mut());
        let eval = evaluate(&self.sino_buf, &st.u, self.cfg.spacing, &self.spec, self.cfg.tv_norm);
        let objective = match self.cfg.mode {
            ConstraintMode::Hard => eval.tv,
            _ => 0.5 * eval.residual_sq + self.cfg.effective_lambda() * eval.tv,
        };
        let d = self.op.normalization();
        let psnr = match ground_truth {
            Some(gt) => Some(psnr_values(&st.u, gt.values(), 1.0, true)?),
            None => None,
        };
        Ok(DiagnosticRecord {
            iteration: st.iteration,
            objective,
            violation: eval.violation.max(0.0) * d,
            saturation_violation: eval.saturation.max(0.0) * d,
            data_residual: eval.residual_sq.sqrt() * d,
            psnr,
        })
    }

    pub fn image(&self) -> Image {
        Image::new(self.state.u.clone(), self.cfg.spacing).expect("iterates are checked finite")
    }

    /// Runs up to `max_iters` iterations. The callback receives each
    /// snapshot and may stop the run early by returning `Break`.
    pub fn run<F>(mut self, ground_truth: Option<&Image>, mut callback: F) -> Result<Reconstruction>
    where
        F: FnMut(&DiagnosticRecord) -> ControlFlow<()>,
    {
        if let Some(gt) = ground_truth {
            if gt.values().dim() != self.state.u.dim() {
                return Err(MarError::invalid("ground truth shape does not match reconstruction"));
            }
        }
        let mut diagnostics = Vec::new();
        let mut iteration_time = Duration::ZERO;
        let every = self.cfg.snapshot_every;
        while self.state.iteration < self.cfg.max_iters {
            let t0 = Instant::now();
            self.step()?;
            iteration_time += t0.elapsed();
            let k = self.state.iteration;
            if every > 0 && k.is_multiple_of(every) {
                let rec = self.diagnose(ground_truth)?;
                let flow = callback(&rec);
                diagnostics.push(rec);
                if flow.is_break() {
                    break;
                }
            }
        }
        if diagnostics.last().map(|r| r.iteration) != Some(self.state.iteration) {
            let rec = self.diagnose(ground_truth)?;
            let _ = callback(&rec);
            diagnostics.push(rec);
        }
        Ok(Reconstruction { image: self.image(), diagnostics, iterations: self.state.iteration, iteration_time })
    }
}

/// Reconstructs from raw (possibly capped) data with the saturated set
/// detected as `U₀ ≥ C`.
pub fn solve(
    data: &Sinogram,
    cfg: &SolverConfig,
    op: &RadonOperator,
    ground_truth: Option<&Image>,
) -> Result<Reconstruction> {
    Solver::new(op, data, None, cfg.clone())?.run(ground_truth, |_| ControlFlow::Continue(()))
}
