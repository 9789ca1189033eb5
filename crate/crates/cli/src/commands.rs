use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;
use mar_core::degrade::{add_noise, cap_sinogram};
use mar_core::io::{export_png, read_grid, slot, write_grid};
use mar_core::metrics::{fbp_baseline, psnr as psnr_db};
use mar_core::phantom::{add_metal, shepp_logan};
use mar_core::radon::{normalized_operator, RadonOperator, DEFAULT_POWER_ITERS, NORM_SAFETY_FACTOR};
use mar_core::{
    ConstraintMode, DiagnosticRecord, FbpFilter, Geometry, GridFile, GridKind, Image, ImageShape, MarError,
    MetalInsert, NoiseReference, NoiseSpec, SaturationMask, Sinogram, Solver, SolverConfig, TvNorm,
};

use crate::manifest::Manifest;
use crate::{
    CapArgs, CliError, ExportArgs, Mode, NoiseArgs, PhantomArgs, ProjectArgs, PsnrArgs, ReconstructArgs, Reference,
    TvNormArg,
};

type Result<T> = std::result::Result<T, CliError>;

/// Per-iteration wall-clock target at 128×128 with 180 angles.
const ITERATION_BUDGET_MS: f64 = 45.0;

fn with_path(path: &Path, e: MarError) -> MarError {
    match e {
        MarError::Io(io) => MarError::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        MarError::Format { offset, message } => {
            MarError::Format { offset, message: format!("{}: {message}", path.display()) }
        }
        other => other,
    }
}

fn load(path: &Path) -> Result<GridFile> {
    Ok(read_grid(path).map_err(|e| with_path(path, e))?)
}

fn save(path: &Path, grid: &GridFile) -> Result<()> {
    Ok(write_grid(path, grid).map_err(|e| with_path(path, e))?)
}

fn load_sinogram(path: &Path) -> Result<(GridFile, Sinogram)> {
    let grid = load(path)?;
    let sino = grid.to_sinogram().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok((grid, sino))
}

fn load_image(path: &Path) -> Result<Image> {
    load(path)?.to_image().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value().map(|p| p.get_name().to_string()).unwrap_or_default()
}

/// `<out>.manifest.txt` beside a single-file output.
fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.txt");
    out.with_file_name(name)
}

/// Writes the manifest whether or not the command succeeded.
fn finish(mut manifest: Manifest, path: &Path, result: Result<()>) -> Result<()> {
    match &result {
        Ok(()) => manifest.set("status", "ok"),
        Err(e) => {
            manifest.set("status", "error");
            manifest.set("error", e);
        }
    }
    manifest.write(path).map_err(|e| with_path(path, MarError::Io(e)))?;
    result
}

/// Keeps the spacing slot of a sinogram's source image.
fn sinogram_grid(sino: &Sinogram, cap: Option<f64>, spacing: f64) -> GridFile {
    let mut grid = GridFile::from_sinogram(sino, cap);
    grid.slots[slot::SPACING] = spacing;
    grid
}

pub fn phantom(args: &PhantomArgs) -> Result<()> {
    let mut m = Manifest::new("phantom");
    m.set("size", args.size);
    m.set("spacing", args.spacing);
    m.set("metal_size", format!("{},{}", args.metal_size.0, args.metal_size.1));
    m.set("metal_value", args.metal_value);
    m.set("out", args.out.display());
    let result = (|| {
        let t = Instant::now();
        let base = shepp_logan(args.size, args.size)?;
        let base = Image::new(base.into_values(), args.spacing)?;
        let (rows, cols) = args.metal_size;
        let insert = match args.metal_pos {
            Some((row0, col0)) => MetalInsert { row0, col0, rows, cols, added_value: args.metal_value },
            None => MetalInsert::centered_right(base.shape(), rows, cols, args.metal_value),
        };
        m.set("metal_pos", format!("{},{}", insert.row0, insert.col0));
        let img = add_metal(&base, &insert)?;
        m.set("max", img.max());
        m.time("generate", t.elapsed());
        save(&args.out, &GridFile::from_image(&img))
    })();
    finish(m, &manifest_beside(&args.out), result)
}

pub fn project(args: &ProjectArgs) -> Result<()> {
    let mut m = Manifest::new("project");
    m.set("in", args.input.display());
    m.set("out", args.out.display());
    let result = (|| {
        let img = load_image(&args.input)?;
        let bins = args.bins.unwrap_or_else(|| Geometry::default_bins(img.shape()));
        m.set("angles", args.angles);
        m.set("bins", bins);
        let t = Instant::now();
        let op = RadonOperator::new(Geometry::uniform(args.angles, bins)?, img.shape())?;
        let sino = op.forward(&img)?;
        m.time("project", t.elapsed());
        m.set("max", sino.max());
        save(&args.out, &sinogram_grid(&sino, None, img.spacing()))
    })();
    finish(m, &manifest_beside(&args.out), result)
}

pub fn cap(args: &CapArgs) -> Result<()> {
    let mut m = Manifest::new("cap");
    m.set("in", args.input.display());
    m.set("cap", args.cap);
    m.set("out", args.out.display());
    m.set_opt("mask_out", args.mask_out.as_ref().map(|p| p.display()));
    let result = (|| {
        let (grid, sino) = load_sinogram(&args.input)?;
        let (capped, mask) = cap_sinogram(&sino, args.cap)?;
        m.set("saturated", mask.count());
        let h = grid.slots[slot::SPACING];
        save(&args.out, &sinogram_grid(&capped, Some(args.cap), h))?;
        if let Some(path) = &args.mask_out {
            let mut mg = GridFile::from_mask(&mask, capped.geometry(), Some(args.cap));
            mg.slots[slot::SPACING] = h;
            save(path, &mg)?;
        }
        Ok(())
    })();
    finish(m, &manifest_beside(&args.out), result)
}

pub fn noise(args: &NoiseArgs) -> Result<()> {
    let mut m = Manifest::new("noise");
    m.set("in", args.input.display());
    m.set("level", args.level);
    m.set("seed", args.seed);
    m.set("reference", value_name(args.reference));
    m.set("out", args.out.display());
    let result = (|| {
        let (mut grid, sino) = load_sinogram(&args.input)?;
        let spec = NoiseSpec {
            relative_level: args.level,
            rng_seed: args.seed,
            reference: match args.reference {
                Reference::Max => NoiseReference::Max,
                Reference::Mean => NoiseReference::Mean,
            },
        };
        m.set("std_dev", spec.std_dev(&sino));
        grid.values = add_noise(&sino, &spec)?.into_values();
        save(&args.out, &grid)
    })();
    finish(m, &manifest_beside(&args.out), result)
}

pub fn psnr(args: &PsnrArgs) -> Result<()> {
    let mut m = Manifest::new("psnr");
    m.set("a", args.a.display());
    m.set("b", args.b.display());
    m.set("peak", args.peak);
    m.set("clip", args.clip);
    let result = (|| {
        let a = load_image(&args.a)?;
        let b = load_image(&args.b)?;
        let value = psnr_db(&a, &b, args.peak, args.clip)?;
        let text = if value.is_infinite() { "inf".to_string() } else { format!("{value:.4}") };
        m.set("psnr_db", &text);
        println!("{text}");
        Ok(())
    })();
    // no output file to sit beside: the manifest goes to stderr
    match &result {
        Ok(()) => m.set("status", "ok"),
        Err(e) => {
            m.set("status", "error");
            m.set("error", e);
        }
    }
    let _ = std::io::stderr().write_all(m.render().as_bytes());
    result
}

pub fn export(args: &ExportArgs) -> Result<()> {
    let mut m = Manifest::new("export");
    m.set("in", args.input.display());
    m.set("out", args.out.display());
    let result = (|| {
        let grid = load(&args.input)?;
        let window = match (args.window, grid.kind) {
            (Some(w), _) => w,
            (None, GridKind::Image) => (0.0, 1.0),
            (None, GridKind::Sinogram) => {
                let lo = grid.values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = grid.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if lo < hi {
                    (lo, hi)
                } else {
                    (lo, lo + 1.0)
                }
            }
        };
        m.set("window", format!("{},{}", window.0, window.1));
        Ok(export_png(&args.out, &grid.values, window).map_err(|e| with_path(&args.out, e))?)
    })();
    finish(m, &manifest_beside(&args.out), result)
}

/// Resolved reconstruction inputs.
struct Problem {
    data: Sinogram,
    mask: Option<SaturationMask>,
    cap: Option<f64>,
    shape: ImageShape,
    ground_truth: Option<Image>,
}

fn prepare(args: &ReconstructArgs, m: &mut Manifest) -> Result<Problem> {
    let (grid, sino) = load_sinogram(&args.input)?;
    let ground_truth = args.ground_truth.as_deref().map(load_image).transpose()?;
    let mask = match &args.mask {
        Some(path) => {
            let mask = load(path)?.to_mask().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if mask.dim() != sino.values().dim() {
                return Err(CliError::Usage(format!(
                    "mask shape {:?} does not match sinogram shape {:?}",
                    mask.dim(),
                    sino.values().dim()
                )));
            }
            Some(mask)
        }
        None => None,
    };

    // explicit flag, then the header, then the data level on the mask
    let cap = args.cap.or(grid.cap()).or_else(|| {
        let mask = mask.as_ref().filter(|k| !k.is_empty())?;
        let on = sino.values().iter().zip(mask.as_array()).filter(|(_, &k)| k).map(|(&v, _)| v);
        Some(on.fold(f64::NEG_INFINITY, f64::max))
    });
    let data = match cap {
        Some(c) => cap_sinogram(&sino, c)?.0,
        None => sino,
    };

    let header_h = grid.slots[slot::SPACING];
    let spacing = args
        .spacing
        .or(ground_truth.as_ref().map(Image::spacing))
        .or((!header_h.is_nan()).then_some(header_h))
        .unwrap_or(1.0);
    let size = match (args.size, &ground_truth) {
        (Some(n), _) => n,
        (None, Some(gt)) => {
            if gt.rows() != gt.cols() {
                return Err(CliError::Usage("ground truth must be square; pass --size".into()));
            }
            gt.rows()
        }
        (None, None) => return Err(CliError::Usage("--size is required without --ground-truth".into())),
    };
    let shape = ImageShape::new(size, size, spacing)?;
    if let Some(gt) = &ground_truth {
        if gt.values().dim() != (size, size) {
            return Err(CliError::Usage(format!("ground truth is {}x{}, --size is {size}", gt.rows(), gt.cols())));
        }
    }
    m.set("size", size);
    m.set("spacing", spacing);
    m.set("angles", data.geometry().n_angles());
    m.set("bins", data.geometry().n_bins());
    m.set_opt("cap", cap);
    Ok(Problem { data, mask, cap, shape, ground_truth })
}

fn write_diagnostics(path: &Path, records: &[DiagnosticRecord]) -> Result<()> {
    let mut out = String::from("iteration,objective,violation,saturation_violation,data_residual,psnr\n");
    for r in records {
        let psnr = match r.psnr {
            Some(p) if p.is_infinite() => "inf".to_string(),
            Some(p) => format!("{p:.6}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{psnr}\n",
            r.iteration, r.objective, r.violation, r.saturation_violation, r.data_residual
        ));
    }
    fs::write(path, out).map_err(|e| with_path(path, MarError::Io(e)).into())
}

fn solver_config(args: &ReconstructArgs, p: &Problem, m: &mut Manifest) -> Result<SolverConfig> {
    let mode = match args.mode {
        Mode::CpUnconstrained => ConstraintMode::Unconstrained,
        Mode::CpSoft => ConstraintMode::Soft,
        Mode::CpHard => ConstraintMode::Hard,
        Mode::Fbp | Mode::Bp => unreachable!("analytic modes have no solver"),
    };
    let lambda = args.lambda.or(args.log_lambda.map(|e| 10f64.powf(e)));
    let lambda = match (mode, lambda) {
        (ConstraintMode::Hard, l) => l.unwrap_or(1.0),
        (_, Some(l)) => l,
        (_, None) => return Err(CliError::Usage("this mode needs --lambda or --log-lambda".into())),
    };
    let cap = match (mode, p.cap) {
        (ConstraintMode::Unconstrained, c) => c.unwrap_or(f64::INFINITY),
        (_, Some(c)) => c,
        (_, None) => {
            return Err(CliError::Usage("constrained modes need --cap, a capped input or a non-empty --mask".into()))
        }
    };
    let cfg = SolverConfig::new(mode, cap, args.iters)
        .with_spacing(p.shape.spacing)
        .with_lambda(lambda)
        .with_snapshots(args.snapshot_every);
    let cfg = SolverConfig {
        tv_norm: match args.tv_norm {
            TvNormArg::Isotropic => TvNorm::Isotropic,
            TvNormArg::Anisotropic => TvNorm::Anisotropic,
        },
        ..cfg
    };
    m.set("lambda", lambda);
    m.set("lambda_effective", cfg.effective_lambda());
    m.set("tv_norm", value_name(args.tv_norm));
    m.set("iters", args.iters);
    m.set("snapshot_every", args.snapshot_every);
    m.set("primal_step", cfg.primal_step);
    m.set("dual_step", cfg.dual_step);
    Ok(cfg)
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let mut m = Manifest::new("reconstruct");
    m.set("mode", value_name(args.mode));
    m.set("in", args.input.display());
    m.set_opt("mask", args.mask.as_ref().map(|p| p.display()));
    m.set_opt("ground_truth", args.ground_truth.as_ref().map(|p| p.display()));
    m.set("threads", rayon::current_num_threads());
    m.set("out_dir", args.out_dir.display());
    if let Err(e) = fs::create_dir_all(&args.out_dir) {
        return Err(with_path(&args.out_dir, MarError::Io(e)).into());
    }
    let result = run_reconstruct(args, &mut m);
    finish(m, &args.out_dir.join("manifest.txt"), result)
}

fn run_reconstruct(args: &ReconstructArgs, m: &mut Manifest) -> Result<()> {
    let t = Instant::now();
    let p = prepare(args, m)?;
    m.time("load", t.elapsed());

    let (image, records) = match args.mode {
        Mode::Fbp | Mode::Bp => {
            let t = Instant::now();
            let filter = if args.mode == Mode::Fbp { FbpFilter::RamLak } else { FbpFilter::None };
            let img = fbp_baseline(&p.data, p.shape, filter)?;
            m.time("reconstruct", t.elapsed());
            let psnr = p.ground_truth.as_ref().map(|gt| psnr_db(&img, gt, 1.0, true)).transpose()?;
            let rec = DiagnosticRecord {
                iteration: 0,
                objective: f64::NAN,
                violation: f64::NAN,
                saturation_violation: f64::NAN,
                data_residual: f64::NAN,
                psnr,
            };
            (img, vec![rec])
        }
        _ => {
            let cfg = solver_config(args, &p, m)?;
            let t = Instant::now();
            let op = normalized_operator(p.data.geometry(), p.shape)?;
            m.time("normalize", t.elapsed());
            m.set("power_iterations", DEFAULT_POWER_ITERS);
            m.set("norm_safety_factor", NORM_SAFETY_FACTOR);
            m.set("normalization", op.normalization());
            let solver = Solver::new(&op, &p.data, p.mask.clone(), cfg)?;
            m.set("saturated", solver.constraints().mask().count());
            let t = Instant::now();
            let rec = solver.run(p.ground_truth.as_ref(), |r| {
                let psnr = r.psnr.map(|v| format!(" psnr {v:.3}")).unwrap_or_default();
                eprintln!(
                    "iter {:>7} objective {:.6e} violation {:.3e} residual {:.3e}{psnr}",
                    r.iteration, r.objective, r.violation, r.data_residual
                );
                ControlFlow::Continue(())
            })?;
            m.time("solve", t.elapsed());
            let ms = rec.seconds_per_iteration() * 1e3;
            m.set("iterations", rec.iterations);
            m.set("time_ms_per_iteration", format!("{ms:.3}"));
            m.set("time_iterations_per_s", format!("{:.2}", 1e3 / ms));
            m.set("time_iteration_budget_ms", ITERATION_BUDGET_MS);
            let over = ms > ITERATION_BUDGET_MS;
            m.set("time_iteration_budget_exceeded", over);
            if over {
                eprintln!("warning: {ms:.1} ms per iteration exceeds the {ITERATION_BUDGET_MS} ms target");
            }
            (rec.image, rec.diagnostics)
        }
    };

    let last = records.last().expect("at least one record");
    m.set_opt("final_psnr_db", last.psnr.map(|v| format!("{v:.4}")));
    if args.mode != Mode::Fbp && args.mode != Mode::Bp {
        m.set("final_objective", format!("{:.12e}", last.objective));
        m.set("final_violation", format!("{:.6e}", last.violation));
        m.set("final_saturation_violation", format!("{:.6e}", last.saturation_violation));
        m.set("final_data_residual", format!("{:.6e}", last.data_residual));
    }

    let t = Instant::now();
    let dir = &args.out_dir;
    save(&dir.join("recon.grid"), &GridFile::from_image(&image))?;
    export_png(dir.join("recon.png"), image.values(), (0.0, 1.0)).map_err(|e| with_path(&dir.join("recon.png"), e))?;
    write_diagnostics(&dir.join("diagnostics.csv"), &records)?;
    m.time("write", t.elapsed());
    m.set("outputs", "recon.grid,recon.png,diagnostics.csv,manifest.txt");
    Ok(())
}
