use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use lensless::calibration::{apply_mask, apply_mask_frame, calibrate as run_calibration, CalibrationMatrix};
use lensless::config::{desk_scale, RunConfig};
use lensless::diagnostics::{
    correlation_map, psnr, score, singular_decay, threshold, LineKind, QualityReport,
    ThresholdMethod,
};
use lensless::io;
use lensless::optics::{calibration_exposure, Frame, OpticsConfig};
use lensless::pipeline::{
    capture_scene_measurement, full_system_residual, measurement_from_frame, pick_alpha,
    shadow_region_mask, Measurement,
};
use lensless::rng;
use lensless::scene::{make_pattern, make_video, Animation, Pattern, SceneVector, SourceGrid};
use lensless::solver::{
    build_reconstructor, condition_number, reconstruct as apply_reconstructor, refocus,
    tikhonov_solve, DistanceEntry, Reconstructor, ReconstructorMeta, SvdFactors,
};
use lensless::{Error, Result};

use crate::CommonOpts;

/// Ill-posedness note threshold for the printed condition number.
const ILL_POSED_THRESHOLD: f64 = 1e3;

/// Stream tag separating scene captures from calibration captures.
const SCENE_STREAM: u64 = 0x5ce;

fn parse_dims(text: &str, what: &'static str) -> Result<(usize, usize)> {
    let mut it = text.split(['x', 'X']);
    let a = it.next().and_then(|t| t.trim().parse().ok());
    let b = it.next().and_then(|t| t.trim().parse().ok());
    match (a, b, it.next()) {
        (Some(a), Some(b), None) if a > 0 && b > 0 => Ok((a, b)),
        _ => Err(Error::InvalidConfig(format!("{what} must look like 16x16, got `{text}`"))),
    }
}

/// Config file, then LENSLESS_SEED, then flags; flags win.
pub fn resolve_config(opts: &CommonOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => desk_scale(),
    };
    if let Ok(text) = std::env::var("LENSLESS_SEED") {
        cfg.seed = text
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("LENSLESS_SEED must be an integer, got `{text}`")))?;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(n) = opts.n_avg {
        cfg.n_avg = n;
    }
    if let Some(d) = opts.distance {
        cfg.optics.distance_mm = d;
    }
    if let Some(text) = &opts.grid {
        let (rows, cols) = parse_dims(text, "--grid")?;
        cfg.optics.grid = SourceGrid::new(rows, cols, cfg.optics.grid.pitch_mm)?;
    }
    if let Some(text) = &opts.sensor {
        let (w, h) = parse_dims(text, "--sensor")?;
        cfg.optics.sensor.width_px = w;
        cfg.optics.sensor.height_px = h;
    }
    if opts.noiseless {
        cfg.optics.sensor.read_noise_sigma = 0.0;
        cfg.optics.sensor.shot_noise = false;
    }
    if let Some(dir) = &opts.out_dir {
        cfg.io.out_dir = dir.clone();
    }
    if let Some(s) = &opts.alpha_strategy {
        cfg.solver.alpha_strategy = s.clone();
        cfg.solver.alpha_value = opts.alpha;
    } else if let Some(v) = opts.alpha {
        cfg.solver.alpha_value = Some(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.io.out_dir)?;
    Ok(cfg.io.out_dir.clone())
}

fn wants(cfg: &RunConfig, format: &str) -> bool {
    cfg.io.formats.iter().any(|f| f == format)
}

/// Scene values as a grid-sized image, min-max normalized for display.
fn scene_frame(values: &[f64], grid: &SourceGrid) -> Frame {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut frame = Frame::zeros(grid.cols, grid.rows);
    if hi > lo {
        for (o, v) in frame.data.iter_mut().zip(values) {
            *o = (v - lo) / (hi - lo);
        }
    }
    frame
}

fn parse_threshold(text: &str) -> Result<ThresholdMethod> {
    if text == "otsu" {
        return Ok(ThresholdMethod::Otsu);
    }
    if let Some(t) = text.strip_prefix("fixed:") {
        let t: f64 = t
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad threshold `{text}`")))?;
        return Ok(ThresholdMethod::Fixed(t));
    }
    Err(Error::InvalidConfig(format!(
        "threshold must be `otsu` or `fixed:<t>`, got `{text}`"
    )))
}

/// Binarize for display, treating a flat solution as all-dark.
fn binarize_lenient(values: &[f64], method: ThresholdMethod) -> Result<Vec<f64>> {
    match threshold(values, method) {
        Ok(b) => Ok(b),
        Err(Error::DegenerateHistogram) => Ok(vec![0.0; values.len()]),
        Err(e) => Err(e),
    }
}

fn check_calibration_matches(a: &CalibrationMatrix, optics: &OpticsConfig) -> Result<()> {
    let m = &a.meta;
    let file_shape = format!(
        "{}x{} sensor / {}x{} grid / D {} mm",
        m.sensor_width_px, m.sensor_height_px, m.grid_rows, m.grid_cols, m.distance_mm
    );
    let cfg_shape = format!(
        "{}x{} sensor / {}x{} grid / D {} mm",
        optics.sensor.width_px,
        optics.sensor.height_px,
        optics.grid.rows,
        optics.grid.cols,
        optics.distance_mm
    );
    if file_shape != cfg_shape {
        return Err(Error::ShapeMismatch {
            left: file_shape,
            right: cfg_shape,
            context: "calibration file vs config",
        });
    }
    Ok(())
}

fn load_measurement_file(path: &Path) -> Result<Frame> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => io::load_pgm(path),
        Some("lfr") => io::load_lfr1(path),
        _ => io::load_lfr1(path).or_else(|_| io::load_pgm(path)),
    }
}

fn print_condition(cond: f64) {
    if cond > ILL_POSED_THRESHOLD {
        println!(
            "condition number {cond:.4e}: above 1e3, the inverse problem is ill-posed and needs regularization"
        );
    } else {
        println!("condition number {cond:.4e}: below the 1e3 ill-posedness threshold");
    }
}

// ------------------------------------------------------------- calibrate

pub fn calibrate(common: &CommonOpts, out: Option<&Path>) -> Result<()> {
    let cfg = resolve_config(common)?;
    let out_dir = ensure_out_dir(&cfg)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("calibration.lcal"));
    let exposure = calibration_exposure(&cfg.optics, cfg.exposure_fill);
    let a = run_calibration(&cfg.optics, cfg.n_avg, exposure, cfg.seed)?;
    io::save_calibration(&out_path, &a)?;
    println!(
        "wrote {} ({} pixels x {} sources, {} frames averaged)",
        out_path.display(),
        a.n_pixels(),
        a.n_sources(),
        cfg.n_avg
    );
    let factors = a.svd()?;
    print_condition(condition_number(&factors));
    Ok(())
}

// ----------------------------------------------------------- reconstruct

#[derive(Serialize)]
struct ReconstructReport {
    alpha: f64,
    alpha_strategy: String,
    threshold: String,
    exposure_ratio: f64,
    residual_rel: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    quality: Option<QualityReport>,
}

struct Solved {
    x_hat: Vec<f64>,
    binary: Vec<f64>,
    alpha: f64,
    residual_rel: f64,
}

fn solve_measurement(
    factors: &SvdFactors,
    m: &Measurement,
    cfg: &RunConfig,
    method: ThresholdMethod,
) -> Result<Solved> {
    let alpha = pick_alpha(factors, m, cfg.solver.strategy()?, &cfg.optics, cfg.n_avg)?;
    let x_hat = tikhonov_solve(factors, &m.values, alpha)?;
    let binary = binarize_lenient(&x_hat, method)?;
    let residual_rel = lensless::solver::relative_residual(factors, &m.values, alpha)?;
    Ok(Solved { x_hat, binary, alpha, residual_rel })
}

pub fn reconstruct(
    common: &CommonOpts,
    calibration: &Path,
    pattern: Option<&str>,
    measurement: Option<&Path>,
    exposure_ratio: f64,
    threshold_text: &str,
) -> Result<()> {
    let cfg = resolve_config(common)?;
    let method = parse_threshold(threshold_text)?;
    let out_dir = ensure_out_dir(&cfg)?;
    let a = io::load_calibration(calibration)?;
    let grid = SourceGrid::new(a.meta.grid_rows, a.meta.grid_cols, a.meta.pitch_mm)?;

    let mask = lensless::calibration::PixelMask { rects: a.meta.mask_rects.clone() };
    let masked = !mask.rects.is_empty();

    let (m, truth): (Measurement, Option<SceneVector>) = match (pattern, measurement) {
        (Some(name), None) => {
            // self-test: render the measurement ourselves and score against truth
            let pattern = Pattern::parse(name)?;
            check_calibration_matches(&a, &cfg.optics)?;
            let mut x = make_pattern(pattern, &grid)?;
            if cfg.masked_top_rows > 0 {
                x = x.mask_top_rows(cfg.masked_top_rows);
            }
            let m = capture_scene_measurement(
                &x,
                &cfg.optics,
                cfg.n_avg,
                cfg.exposure_fill,
                rng::derive(rng::derive(cfg.seed, SCENE_STREAM), 0),
            )?;
            (m, Some(x))
        }
        (None, Some(path)) => {
            let frame = load_measurement_file(path)?;
            if (frame.width_px, frame.height_px) != (a.meta.sensor_width_px, a.meta.sensor_height_px) {
                return Err(Error::ShapeMismatch {
                    left: format!("{}x{} measurement", frame.width_px, frame.height_px),
                    right: format!(
                        "{}x{} calibration sensor",
                        a.meta.sensor_width_px, a.meta.sensor_height_px
                    ),
                    context: "measurement vs calibration",
                });
            }
            (measurement_from_frame(&frame, exposure_ratio), None)
        }
        _ => {
            return Err(Error::InvalidConfig(
                "reconstruct needs exactly one of --pattern or --measurement".into(),
            ))
        }
    };

    let m = if masked {
        let frame = Frame {
            width_px: a.meta.sensor_width_px,
            height_px: a.meta.sensor_height_px,
            data: m.values.clone(),
        };
        Measurement {
            values: apply_mask_frame(&frame, &mask)?,
            raw: m.raw,
            exposure_ratio: m.exposure_ratio,
        }
    } else {
        m
    };

    let factors = a.svd()?;
    let solved = solve_measurement(&factors, &m, &cfg, method)?;

    let quality = match &truth {
        Some(x) => Some(score(&solved.x_hat, x, &a, &m.values)?),
        None => None,
    };

    if wants(&cfg, "pgm") {
        io::save_pgm(&out_dir.join("scene_raw.pgm"), &scene_frame(&solved.x_hat, &grid), 255)?;
        io::save_pgm(&out_dir.join("scene_bin.pgm"), &scene_frame(&solved.binary, &grid), 255)?;
        io::save_pgm(&out_dir.join("measurement.pgm"), &m.raw, 255)?;
    }
    if wants(&cfg, "lfr") {
        let raw = Frame { width_px: grid.cols, height_px: grid.rows, data: solved.x_hat.clone() };
        io::save_lfr1(&out_dir.join("scene_raw.lfr"), &raw)?;
        io::save_lfr1(&out_dir.join("measurement.lfr"), &m.raw)?;
    }
    let report = ReconstructReport {
        alpha: solved.alpha,
        alpha_strategy: cfg.solver.alpha_strategy.clone(),
        threshold: threshold_text.into(),
        exposure_ratio: m.exposure_ratio,
        residual_rel: solved.residual_rel,
        quality,
    };
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "alpha {:.4e}, relative residual {:.4e}",
        solved.alpha, solved.residual_rel
    );
    if let Some(q) = &report.quality {
        println!("pixel accuracy {:.4}, psnr {}", q.pixel_accuracy, if q.psnr_db.is_finite() {
            format!("{:.2} dB", q.psnr_db)
        } else {
            "exact".into()
        });
    }
    println!("outputs in {}", out_dir.display());
    Ok(())
}

// ----------------------------------------------------------------- video

#[derive(Serialize)]
struct VideoReport {
    n_frames: usize,
    alpha: f64,
    setup_ms: f64,
    /// Inversion only (matrix-vector product plus reshape), per frame.
    per_frame_invert_ms: Vec<f64>,
    /// Mean inversion latency, excluding the first 3 warmup frames.
    mean_invert_ms: f64,
    /// Mean including thresholding, same warmup exclusion.
    mean_with_processing_ms: f64,
}

pub fn video(
    common: &CommonOpts,
    calibration: Option<&Path>,
    reconstructor: Option<&Path>,
    animation: &str,
    frames: usize,
    save_reconstructor: Option<&Path>,
) -> Result<()> {
    let cfg = resolve_config(common)?;
    let out_dir = ensure_out_dir(&cfg)?;
    let animation = Animation::parse(animation)?;
    if frames == 0 {
        return Err(Error::InvalidConfig("--frames must be >= 1".into()));
    }
    let video = make_video(animation, &cfg.optics.grid, frames)?;
    let scene_seed = rng::derive(cfg.seed, SCENE_STREAM);

    // capture all measurements first; simulation time is not part of the
    // reconstruction latency being reported
    let mut measurements = Vec::with_capacity(frames);
    for (k, frame_scene) in video.frames.iter().enumerate() {
        measurements.push(capture_scene_measurement(
            frame_scene,
            &cfg.optics,
            cfg.n_avg,
            cfg.exposure_fill,
            rng::derive(scene_seed, k as u64),
        )?);
    }

    let setup_start = Instant::now();
    let rec: Reconstructor = match (calibration, reconstructor) {
        (Some(path), None) => {
            let a = io::load_calibration(path)?;
            check_calibration_matches(&a, &cfg.optics)?;
            let factors = a.svd()?;
            let alpha = pick_alpha(
                &factors,
                &measurements[0],
                cfg.solver.strategy()?,
                &cfg.optics,
                cfg.n_avg,
            )?;
            build_reconstructor(
                &factors,
                alpha,
                ReconstructorMeta {
                    calibration_hash: io::calibration_hash(&a),
                    distance_mm: Some(a.meta.distance_mm),
                },
            )
        }
        (None, Some(path)) => io::load_reconstructor(path)?,
        _ => unreachable!("clap enforces exactly one source"),
    };
    let setup_ms = setup_start.elapsed().as_secs_f64() * 1e3;
    if rec.n_pixels() != cfg.optics.n_pixels() || rec.n_sources() != cfg.optics.n_sources() {
        return Err(Error::ShapeMismatch {
            left: format!("{}x{} reconstructor", rec.n_sources(), rec.n_pixels()),
            right: format!("{}x{} config", cfg.optics.n_sources(), cfg.optics.n_pixels()),
            context: "reconstructor vs config",
        });
    }
    if let Some(path) = save_reconstructor {
        io::save_reconstructor(path, &rec)?;
        println!("wrote {}", path.display());
    }

    let mut per_invert = Vec::with_capacity(frames);
    let mut per_total = Vec::with_capacity(frames);
    for (k, m) in measurements.iter().enumerate() {
        let t0 = Instant::now();
        let x_hat = apply_reconstructor(&rec, &m.values)?;
        let scene = SceneVector { grid: cfg.optics.grid, values: x_hat.iter().map(|v| v.max(0.0)).collect() };
        let invert_ms = t0.elapsed().as_secs_f64() * 1e3;
        let binary = binarize_lenient(&x_hat, ThresholdMethod::Otsu)?;
        let total_ms = t0.elapsed().as_secs_f64() * 1e3;
        per_invert.push(invert_ms);
        per_total.push(total_ms);
        if wants(&cfg, "pgm") {
            io::save_pgm(
                &out_dir.join(format!("frame_{k:03}_raw.pgm")),
                &scene_frame(&x_hat, &cfg.optics.grid),
                255,
            )?;
            io::save_pgm(
                &out_dir.join(format!("frame_{k:03}_bin.pgm")),
                &scene_frame(&binary, &cfg.optics.grid),
                255,
            )?;
        }
        let _ = scene;
    }

    let measured = if per_invert.len() > 3 { &per_invert[3..] } else { &per_invert[..] };
    let measured_total = if per_total.len() > 3 { &per_total[3..] } else { &per_total[..] };
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let report = VideoReport {
        n_frames: frames,
        alpha: rec.alpha,
        setup_ms,
        mean_invert_ms: mean(measured),
        mean_with_processing_ms: mean(measured_total),
        per_frame_invert_ms: per_invert,
    };
    std::fs::write(out_dir.join("timing.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "{} frames: setup {:.1} ms, mean inversion {:.3} ms/frame ({:.3} ms with thresholding)",
        frames, report.setup_ms, report.mean_invert_ms, report.mean_with_processing_ms
    );
    Ok(())
}

// ----------------------------------------------------------------- sweep

#[derive(Serialize)]
struct SweepEntry {
    distance_mm: f64,
    condition_number: f64,
    decay_crossing_1e2: usize,
    longest_line_h: usize,
    longest_line_v: usize,
    longest_line_diag: usize,
    stickman: QualityReport,
}

#[derive(Serialize)]
struct SweepReport {
    entries: Vec<SweepEntry>,
    refocus_probe_distance_mm: f64,
    refocus_selected_distance_mm: f64,
    refocus_residuals: Vec<(f64, f64)>,
}

fn longest_recovered_line(
    kind: LineKind,
    factors: &SvdFactors,
    cfg: &RunConfig,
    optics: &OpticsConfig,
    seed: u64,
) -> Result<usize> {
    let grid = optics.grid;
    let max = match kind {
        LineKind::Horizontal => grid.cols,
        LineKind::Vertical => grid.rows,
        LineKind::Diagonal => grid.rows.min(grid.cols),
    };
    for len in (1..=max).rev() {
        let pattern = match kind {
            LineKind::Horizontal => Pattern::LineH(len),
            LineKind::Vertical => Pattern::LineV(len),
            LineKind::Diagonal => Pattern::LineDiag(len),
        };
        let x = make_pattern(pattern, &grid)?;
        let m = capture_scene_measurement(&x, optics, cfg.n_avg, cfg.exposure_fill, seed)?;
        let solved = solve_measurement(factors, &m, cfg, ThresholdMethod::Otsu)?;
        if solved.binary == x.values {
            return Ok(len);
        }
    }
    Ok(0)
}

pub fn sweep(common: &CommonOpts, distances: &[f64]) -> Result<()> {
    let cfg = resolve_config(common)?;
    if distances.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one distance".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let out_root = ensure_out_dir(&cfg)?.join("sweep");
    std::fs::create_dir_all(&out_root)?;

    let mut entries = Vec::new();
    let mut stack = Vec::new();
    let mut per_distance_cfg = Vec::new();
    for &d in &sorted {
        let mut optics = cfg.optics.clone();
        optics.distance_mm = d;
        optics.validate()?;
        let dir = out_root.join(format!("d{:03.0}mm", d));
        std::fs::create_dir_all(&dir)?;

        let exposure = calibration_exposure(&optics, cfg.exposure_fill);
        let a = run_calibration(&optics, cfg.n_avg, exposure, cfg.seed)?;
        let factors = a.svd()?;
        let cond = condition_number(&factors);
        print_condition(cond);

        let decay = singular_decay(&factors);
        io::write_csv(
            &dir.join("decay.csv"),
            &["index", "s_over_s0"],
            &decay.iter().map(|(i, v)| vec![*i as f64, *v]).collect::<Vec<_>>(),
        )?;
        let crossing = decay.iter().position(|(_, v)| *v < 1e-2).unwrap_or(factors.r);

        for (kind, name, pos) in [
            (LineKind::Horizontal, "corr_h.csv", optics.grid.rows / 2),
            (LineKind::Vertical, "corr_v.csv", optics.grid.cols / 2),
            (LineKind::Diagonal, "corr_diag.csv", 0),
        ] {
            let map = correlation_map(&a, kind, pos)?;
            let mut header: Vec<String> = vec!["source".into()];
            header.extend(map.indices.iter().map(|i| i.to_string()));
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            let rows: Vec<Vec<f64>> = map
                .indices
                .iter()
                .enumerate()
                .map(|(i, idx)| {
                    let mut row = vec![*idx as f64];
                    row.extend((0..map.indices.len()).map(|j| map.values[(i, j)]));
                    row
                })
                .collect();
            io::write_csv(&dir.join(name), &header_refs, &rows)?;
        }

        let line_seed = rng::derive(cfg.seed, SCENE_STREAM);
        let longest_h = longest_recovered_line(LineKind::Horizontal, &factors, &cfg, &optics, line_seed)?;
        let longest_v = longest_recovered_line(LineKind::Vertical, &factors, &cfg, &optics, line_seed)?;
        let longest_diag = longest_recovered_line(LineKind::Diagonal, &factors, &cfg, &optics, line_seed)?;

        let stick = make_pattern(Pattern::Stickman, &optics.grid)?;
        let m = capture_scene_measurement(&stick, &optics, cfg.n_avg, cfg.exposure_fill, rng::derive(line_seed, 1))?;
        let solved = solve_measurement(&factors, &m, &cfg, ThresholdMethod::Otsu)?;
        let quality = score(&solved.x_hat, &stick, &a, &m.values)?;
        if wants(&cfg, "pgm") {
            io::save_pgm(&dir.join("stickman_raw.pgm"), &scene_frame(&solved.x_hat, &optics.grid), 255)?;
            io::save_pgm(&dir.join("stickman_bin.pgm"), &scene_frame(&solved.binary, &optics.grid), 255)?;
        }
        println!(
            "D = {d} mm: decay crosses 1e-2 at {crossing}, lines h/v/diag {longest_h}/{longest_v}/{longest_diag}, stickman accuracy {:.4}",
            quality.pixel_accuracy
        );

        entries.push(SweepEntry {
            distance_mm: d,
            condition_number: cond,
            decay_crossing_1e2: crossing,
            longest_line_h: longest_h,
            longest_line_v: longest_v,
            longest_line_diag: longest_diag,
            stickman: quality,
        });
        stack.push(DistanceEntry { distance_mm: d, factors });
        per_distance_cfg.push(optics);
    }

    // refocus a probe rendered at the middle distance against the full stack
    let mid = sorted.len() / 2;
    let probe_optics = &per_distance_cfg[mid];
    let stick = make_pattern(Pattern::Stickman, &probe_optics.grid)?;
    let m = capture_scene_measurement(
        &stick,
        probe_optics,
        cfg.n_avg,
        cfg.exposure_fill,
        rng::derive(cfg.seed, SCENE_STREAM ^ 0xf0c05),
    )?;
    let refocused = refocus(&stack, &m.values, cfg.solver.strategy()?)?;
    io::write_csv(
        &out_root.join("refocus.csv"),
        &["distance_mm", "relative_residual"],
        &refocused.residuals.iter().map(|(d, r)| vec![*d, *r]).collect::<Vec<_>>(),
    )?;
    println!(
        "refocus: probe at {} mm assigned to {} mm",
        sorted[mid], refocused.best_distance_mm
    );

    let report = SweepReport {
        entries,
        refocus_probe_distance_mm: sorted[mid],
        refocus_selected_distance_mm: refocused.best_distance_mm,
        refocus_residuals: refocused.residuals,
    };
    std::fs::write(out_root.join("summary.json"), serde_json::to_string_pretty(&report)?)?;
    println!("sweep outputs in {}", out_root.display());
    Ok(())
}

// ---------------------------------------------------------------- ablate

#[derive(Serialize)]
struct AblateSide {
    condition_number: f64,
    alpha: f64,
    quality: QualityReport,
    psnr_db_vs_truth: f64,
}

#[derive(Serialize)]
struct AblateReport {
    mask_shadows: bool,
    no_scatterers: bool,
    no_texture: bool,
    masked_pixels: usize,
    baseline: AblateSide,
    ablated: AblateSide,
}

pub fn ablate(
    common: &CommonOpts,
    mask_shadows: bool,
    no_scatterers: bool,
    no_texture: bool,
) -> Result<()> {
    let cfg = resolve_config(common)?;
    let out_dir = ensure_out_dir(&cfg)?.join("ablate");
    std::fs::create_dir_all(&out_dir)?;
    let grid = cfg.optics.grid;
    let truth = make_pattern(Pattern::Stickman, &grid)?;
    let seed = rng::derive(cfg.seed, SCENE_STREAM ^ 0xab1a7e);

    let run_baseline = |optics: &OpticsConfig| -> Result<(CalibrationMatrix, SvdFactors, Measurement)> {
        let exposure = calibration_exposure(optics, cfg.exposure_fill);
        let a = run_calibration(optics, cfg.n_avg, exposure, cfg.seed)?;
        let factors = a.svd()?;
        let m = capture_scene_measurement(&truth, optics, cfg.n_avg, cfg.exposure_fill, seed)?;
        Ok((a, factors, m))
    };

    let (a_base, f_base, m_base) = run_baseline(&cfg.optics)?;
    let solved_base = solve_measurement(&f_base, &m_base, &cfg, ThresholdMethod::Otsu)?;
    let quality_base = score(&solved_base.x_hat, &truth, &a_base, &m_base.values)?;
    let baseline = AblateSide {
        condition_number: condition_number(&f_base),
        alpha: solved_base.alpha,
        psnr_db_vs_truth: psnr(&solved_base.x_hat, &truth.values),
        quality: quality_base,
    };
    if wants(&cfg, "pgm") {
        io::save_pgm(&out_dir.join("baseline_raw.pgm"), &scene_frame(&solved_base.x_hat, &grid), 255)?;
        io::save_pgm(&out_dir.join("baseline_bin.pgm"), &scene_frame(&solved_base.binary, &grid), 255)?;
    }

    let mut masked_pixels = 0usize;
    let ablated = if !(mask_shadows || no_scatterers || no_texture) {
        // identity ablation
        AblateSide {
            condition_number: baseline.condition_number,
            alpha: baseline.alpha,
            quality: baseline.quality.clone(),
            psnr_db_vs_truth: baseline.psnr_db_vs_truth,
        }
    } else if mask_shadows && !no_scatterers && !no_texture {
        // same system, shadow regions deleted; both sides scored on the full ruler
        let mask = shadow_region_mask(&cfg.optics, 0)?;
        let a_m = apply_mask(&a_base, &mask)?;
        masked_pixels = a_base.n_pixels() - a_m.n_pixels();
        let f_m = a_m.svd()?;
        let raw_frame = Frame {
            width_px: cfg.optics.sensor.width_px,
            height_px: cfg.optics.sensor.height_px,
            data: m_base.values.clone(),
        };
        let m_m = Measurement {
            values: apply_mask_frame(&raw_frame, &mask)?,
            raw: m_base.raw.clone(),
            exposure_ratio: m_base.exposure_ratio,
        };
        let solved = solve_measurement(&f_m, &m_m, &cfg, ThresholdMethod::Otsu)?;
        let mut quality = score(&solved.x_hat, &truth, &a_m, &m_m.values)?;
        quality.residual_rel = full_system_residual(&a_base, &solved.x_hat, &m_base.values)?;
        if wants(&cfg, "pgm") {
            io::save_pgm(&out_dir.join("ablated_raw.pgm"), &scene_frame(&solved.x_hat, &grid), 255)?;
            io::save_pgm(&out_dir.join("ablated_bin.pgm"), &scene_frame(&solved.binary, &grid), 255)?;
        }
        AblateSide {
            condition_number: condition_number(&f_m),
            alpha: solved.alpha,
            psnr_db_vs_truth: psnr(&solved.x_hat, &truth.values),
            quality,
        }
    } else {
        // physically modified system, recalibrated and rerun end to end
        let mut optics = cfg.optics.clone();
        if no_scatterers {
            optics.scatterers.clear();
        }
        if no_texture {
            optics.texture_amplitude = 0.0;
        }
        let (a_ab, f_ab, m_ab) = run_baseline(&optics)?;
        let (a_ab, f_ab, m_ab, masked) = if mask_shadows {
            let mask = shadow_region_mask(&optics, 0)?;
            if mask.rects.is_empty() {
                (a_ab, f_ab, m_ab, 0)
            } else {
                let a_m = apply_mask(&a_ab, &mask)?;
                let n = a_ab.n_pixels() - a_m.n_pixels();
                let raw_frame = Frame {
                    width_px: optics.sensor.width_px,
                    height_px: optics.sensor.height_px,
                    data: m_ab.values.clone(),
                };
                let values = apply_mask_frame(&raw_frame, &mask)?;
                let f_m = a_m.svd()?;
                let m = Measurement { values, raw: m_ab.raw.clone(), exposure_ratio: m_ab.exposure_ratio };
                (a_m, f_m, m, n)
            }
        } else {
            (a_ab, f_ab, m_ab, 0)
        };
        masked_pixels = masked;
        let solved = solve_measurement(&f_ab, &m_ab, &cfg, ThresholdMethod::Otsu)?;
        let quality = score(&solved.x_hat, &truth, &a_ab, &m_ab.values)?;
        if wants(&cfg, "pgm") {
            io::save_pgm(&out_dir.join("ablated_raw.pgm"), &scene_frame(&solved.x_hat, &grid), 255)?;
            io::save_pgm(&out_dir.join("ablated_bin.pgm"), &scene_frame(&solved.binary, &grid), 255)?;
        }
        AblateSide {
            condition_number: condition_number(&f_ab),
            alpha: solved.alpha,
            psnr_db_vs_truth: psnr(&solved.x_hat, &truth.values),
            quality,
        }
    };

    let report = AblateReport {
        mask_shadows,
        no_scatterers,
        no_texture,
        masked_pixels,
        baseline,
        ablated,
    };
    std::fs::write(out_dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "baseline: cond {:.3e}, accuracy {:.4}, residual {:.4e}",
        report.baseline.condition_number,
        report.baseline.quality.pixel_accuracy,
        report.baseline.quality.residual_rel
    );
    println!(
        "ablated:  cond {:.3e}, accuracy {:.4}, residual {:.4e}",
        report.ablated.condition_number,
        report.ablated.quality.pixel_accuracy,
        report.ablated.quality.residual_rel
    );
    println!("report in {}", out_dir.join("report.json").display());
    Ok(())
}

// ---------------------------------------------------------------- verify

pub fn verify(common: &CommonOpts, calibration: &Path) -> Result<()> {
    let cfg = resolve_config(common)?;
    let a = io::load_calibration(calibration)?;
    check_calibration_matches(&a, &cfg.optics)?;
    let exposure = calibration_exposure(&cfg.optics, cfg.exposure_fill);
    let recomputed = run_calibration(&cfg.optics, cfg.n_avg, exposure, cfg.seed)?;
    let file_bytes = std::fs::read(calibration)?;
    let expected = io::lcal1_bytes(&recomputed);
    if file_bytes == expected {
        println!("OK: {} reproduces byte-for-byte from the config", calibration.display());
        return Ok(());
    }
    let max_diff = a
        .data
        .iter()
        .zip(recomputed.data.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Err(Error::MalformedFile {
        format: "LCAL1",
        reason: format!(
            "calibration does not match the config: max column difference {max_diff:.4e} \
             (check seed, n_avg and optics settings)"
        ),
    })
}

// ------------------------------------------------------------------ info

pub fn info(file: &Path) -> Result<()> {
    println!("{}", io::describe(file)?);
    Ok(())
}
