//! Shared capture-and-invert plumbing.
//!
//! Calibration and scene captures use different exposures (a lit scene is
//! many sources bright; a calibration frame is one), so measurements are
//! rescaled into calibration-exposure units before solving. The ratio is
//! exact and known in self-test mode; external measurements supply it.

use crate::calibration::{CalibrationMatrix, MaskRect, PixelMask};
use crate::optics::{
    average_exposures, calibration_exposure, frame_exposure, render_scene, shadow_center, Frame,
    OpticsConfig,
};
use crate::scene::{index_of, source_position_mm, SceneVector};
use crate::solver::{self, AlphaStrategy, SvdFactors};
use crate::{Error, Result};

/// A captured measurement, rescaled into calibration-exposure units.
#[derive(Debug, Clone)]
pub struct Measurement {
    /// Flattened pixel values, comparable against calibration columns.
    pub values: Vec<f64>,
    /// The raw averaged capture, at scene exposure, as it would leave the sensor.
    pub raw: Frame,
    /// Calibration exposure divided by scene exposure.
    pub exposure_ratio: f64,
}

/// Expose a scene with its own non-saturating exposure and rescale the
/// result into calibration units.
pub fn capture_scene_measurement(
    x: &SceneVector,
    cfg: &OpticsConfig,
    n_avg: usize,
    fill: f64,
    rng_seed: u64,
) -> Result<Measurement> {
    if n_avg == 0 {
        return Err(Error::InvalidConfig("capture needs n_avg >= 1".into()));
    }
    let e_cal = calibration_exposure(cfg, fill);
    let clean = render_scene(x, cfg)?;
    let e_scene = frame_exposure(&clean, fill);
    let raw = average_exposures(&clean, &cfg.sensor, n_avg, e_scene, rng_seed);
    let exposure_ratio = e_cal / e_scene;
    let values = raw.data.iter().map(|v| v * exposure_ratio).collect();
    Ok(Measurement { values, raw, exposure_ratio })
}

/// Rescale an externally captured frame into calibration units.
pub fn measurement_from_frame(frame: &Frame, exposure_ratio: f64) -> Measurement {
    Measurement {
        values: frame.data.iter().map(|v| v * exposure_ratio).collect(),
        raw: frame.clone(),
        exposure_ratio,
    }
}

/// Fixed boxes around the shadows of the central source, in the manner of
/// outlining the visible scattering patterns on one calibration image.
///
/// The shadows move with the source, so these boxes do not chase them across
/// the whole grid; off-center sources keep partial shadow signal.
pub fn shadow_region_mask(cfg: &OpticsConfig, margin_px: usize) -> Result<PixelMask> {
    let d = cfg.distance_mm;
    let (w, h) = (cfg.sensor.width_px, cfg.sensor.height_px);
    let pitch = cfg.sensor.pixel_pitch_mm();
    let center = index_of(cfg.grid.rows / 2, cfg.grid.cols / 2, &cfg.grid)?;
    let s = source_position_mm(center, &cfg.grid)?;
    let mut rects = Vec::with_capacity(cfg.scatterers.len());
    for p in &cfg.scatterers {
        let c = shadow_center(p, s, d)?;
        let r_shadow = p.radius_mm * d / (d - p.height_mm) + pitch; // disk plus soft rim
        let half = r_shadow / pitch + margin_px as f64;
        let px = c.0 / pitch + (w as f64 - 1.0) / 2.0;
        let py = (h as f64 - 1.0) / 2.0 - c.1 / pitch;
        let x0 = (px - half).floor().max(0.0) as u32;
        let x1 = ((px + half).ceil().max(0.0) as u32).min(w as u32 - 1);
        let y0 = (py - half).floor().max(0.0) as u32;
        let y1 = ((py + half).ceil().max(0.0) as u32).min(h as u32 - 1);
        rects.push(MaskRect { x0, y0, width: x1 - x0 + 1, height: y1 - y0 + 1 });
    }
    Ok(PixelMask { rects })
}

/// Expected residual norm of a measurement in calibration units: read noise
/// plus quantization noise, shrunk by frame averaging, across all pixels.
pub fn noise_norm_estimate(cfg: &OpticsConfig, n_avg: usize, exposure_ratio: f64) -> f64 {
    let lsb = 1.0 / ((1u32 << cfg.sensor.bit_depth) - 1) as f64;
    let per_frame = (cfg.sensor.read_noise_sigma.powi(2) + lsb * lsb / 12.0).sqrt();
    per_frame / (n_avg as f64).sqrt() * (cfg.n_pixels() as f64).sqrt() * exposure_ratio
}

/// Resolve a strategy against a concrete measurement, substituting the
/// config-derived noise estimate when a discrepancy strategy carries none.
pub fn pick_alpha(
    f: &SvdFactors,
    m: &Measurement,
    strategy: AlphaStrategy,
    cfg: &OpticsConfig,
    n_avg: usize,
) -> Result<f64> {
    let strategy = match strategy {
        AlphaStrategy::Discrepancy(n) if n <= 0.0 => {
            AlphaStrategy::Discrepancy(noise_norm_estimate(cfg, n_avg, m.exposure_ratio))
        }
        s => s,
    };
    solver::select_alpha(f, &m.values, strategy)
}

/// Relative residual of a solution against a full (unmasked) system; the
/// common ruler for ablation comparisons.
pub fn full_system_residual(a: &CalibrationMatrix, x_hat: &[f64], b: &[f64]) -> Result<f64> {
    if b.len() != a.n_pixels() || x_hat.len() != a.n_sources() {
        return Err(Error::DimensionMismatch {
            expected: a.n_pixels(),
            got: b.len(),
            context: "residual ruler",
        });
    }
    let bv = nalgebra::DVector::from_column_slice(b);
    let norm = bv.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok((&a.data * nalgebra::DVector::from_column_slice(x_hat) - bv).norm() / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::desk_scale;
    use crate::scene::{make_pattern, Pattern};

    #[test]
    fn self_test_measurement_is_consistent_with_calibration_units() {
        let mut cfg = desk_scale().optics;
        cfg.sensor.read_noise_sigma = 0.0;
        let x = make_pattern(Pattern::Stickman, &cfg.grid).unwrap();
        let m = capture_scene_measurement(&x, &cfg, 1, 0.9, 1).unwrap();
        // values = raw * ratio, and the raw capture peaks near the fill level
        assert!(m.exposure_ratio > 1.0);
        let raw_max = m.raw.max();
        assert!(raw_max <= 0.91 && raw_max > 0.7, "raw peak {raw_max}");
        for (v, r) in m.values.iter().zip(&m.raw.data) {
            assert!((v - r * m.exposure_ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn shadow_mask_boxes_cover_center_source_shadows() {
        let cfg = desk_scale().optics;
        let mask = shadow_region_mask(&cfg, 0).unwrap();
        assert_eq!(mask.rects.len(), cfg.scatterers.len());
        let center = index_of(8, 8, &cfg.grid).unwrap();
        let s = source_position_mm(center, &cfg.grid).unwrap();
        let pitch = cfg.sensor.pixel_pitch_mm();
        for (p, rect) in cfg.scatterers.iter().zip(&mask.rects) {
            let c = shadow_center(p, s, cfg.distance_mm).unwrap();
            let px = c.0 / pitch + (cfg.sensor.width_px as f64 - 1.0) / 2.0;
            let py = (cfg.sensor.height_px as f64 - 1.0) / 2.0 - c.1 / pitch;
            assert!(rect.contains(px as usize, py as usize), "{rect:?} vs ({px}, {py})");
        }
    }

    #[test]
    fn noise_norm_scales_with_averaging() {
        let cfg = desk_scale().optics;
        let one = noise_norm_estimate(&cfg, 1, 1.0);
        let hundred = noise_norm_estimate(&cfg, 100, 1.0);
        assert!((one / hundred - 10.0).abs() < 1e-9);
    }
}
