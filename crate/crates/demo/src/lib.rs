//! Interactive browser demo, compiled to WebAssembly.
//!
//! Exposes three operations to the page: rendering the space-variant PSF of
//! a chosen source, the full capture-and-reconstruct loop on a test pattern,
//! and calibration-matrix diagnostics (singular-value decay and correlation
//! maps). All state lives in [`Demo`]; the expensive calibration + SVD step
//! is explicit so sliders stay responsive.

use wasm_bindgen::prelude::*;

use lensless::calibration::{calibrate, CalibrationMatrix};
use lensless::diagnostics::{
    correlation_map, psnr, singular_decay, threshold, LineKind, ThresholdMethod,
};
use lensless::optics::{
    calibration_exposure, render_psf, DustScatterer, OpticsConfig, SensorSpec,
};
use lensless::pipeline::capture_scene_measurement;
use lensless::rng;
use lensless::scene::{index_of, make_pattern, Pattern, SourceGrid};
use lensless::solver::{condition_number, select_alpha, svd, tikhonov_solve, AlphaStrategy, SvdFactors};

fn err_to_js(e: lensless::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// A demo-sized setup: small enough that calibration and SVD finish in well
/// under a second inside the browser.
fn demo_optics() -> OpticsConfig {
    OpticsConfig {
        sensor: SensorSpec {
            width_px: 64,
            height_px: 48,
            pixel_pitch_um: 2500.0,
            bit_depth: 8,
            read_noise_sigma: 0.005,
            shot_noise: false,
        },
        grid: SourceGrid::new(12, 12, 6.1).expect("valid grid"),
        distance_mm: 343.0,
        scatterers: vec![
            DustScatterer { pos_mm: (-25.0, 15.0), height_mm: 70.0, radius_mm: 6.0, opacity: 0.7 },
            DustScatterer { pos_mm: (18.0, -10.0), height_mm: 75.0, radius_mm: 8.0, opacity: 0.65 },
            DustScatterer { pos_mm: (30.0, 24.0), height_mm: 80.0, radius_mm: 10.0, opacity: 0.75 },
        ],
        texture_seed: 7,
        texture_amplitude: 0.05,
        envelope_exponent: 4.0,
    }
}

const FILL: f64 = 0.9;
const N_AVG: usize = 4;

struct Calibrated {
    a: CalibrationMatrix,
    factors: SvdFactors,
}

struct LastRun {
    measurement_rgba: Vec<u8>,
    raw_rgba: Vec<u8>,
    binary_rgba: Vec<u8>,
    accuracy: f64,
    psnr_db: f64,
    alpha: f64,
}

/// Grayscale RGBA, min-max normalized.
fn to_rgba(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        let g = (((v - lo) / span) * 255.0).round() as u8;
        out.extend_from_slice(&[g, g, g, 255]);
    }
    out
}

/// Diverging blue-white-red RGBA for values in [-1, 1].
fn correlation_rgba(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        let v = v.clamp(-1.0, 1.0);
        let (r, g, b) = if v >= 0.0 {
            let t = 1.0 - v;
            (255.0, 255.0 * t, 255.0 * t)
        } else {
            let t = 1.0 + v;
            (255.0 * t, 255.0 * t, 255.0)
        };
        out.extend_from_slice(&[r as u8, g as u8, b as u8, 255]);
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    optics: OpticsConfig,
    scatterers_on: bool,
    texture_on: bool,
    seed: u64,
    calibrated: Option<Calibrated>,
    last: Option<LastRun>,
}

impl Demo {
    fn try_set_distance(&mut self, d_mm: f64) -> lensless::Result<()> {
        let max_h = self
            .optics
            .scatterers
            .iter()
            .map(|s| s.height_mm)
            .fold(0.0, f64::max);
        if d_mm <= max_h {
            return Err(lensless::Error::SourceBehindScatterer {
                distance_mm: d_mm,
                height_mm: max_h,
            });
        }
        self.optics.distance_mm = d_mm;
        self.calibrated = None;
        Ok(())
    }

    fn try_reconstruct_pattern(&mut self, name: &str, trial: u64) -> lensless::Result<f64> {
        let cal = self
            .calibrated
            .as_ref()
            .ok_or_else(|| lensless::Error::InvalidConfig("calibrate first".into()))?;
        let optics = self.effective_optics();
        let truth = make_pattern(Pattern::parse(name)?, &optics.grid)?;
        let m = capture_scene_measurement(
            &truth,
            &optics,
            N_AVG,
            FILL,
            rng::derive(self.seed ^ 0x5ce, trial),
        )?;
        let alpha = select_alpha(&cal.factors, &m.values, AlphaStrategy::LCurve)?;
        let x_hat = tikhonov_solve(&cal.factors, &m.values, alpha)?;
        let binary = match threshold(&x_hat, ThresholdMethod::Otsu) {
            Ok(b) => b,
            Err(_) => vec![0.0; x_hat.len()],
        };
        let hits = binary.iter().zip(&truth.values).filter(|(g, t)| g == t).count();
        let accuracy = hits as f64 / binary.len() as f64;
        self.last = Some(LastRun {
            measurement_rgba: to_rgba(&m.raw.data),
            raw_rgba: to_rgba(&x_hat),
            binary_rgba: to_rgba(&binary),
            accuracy,
            psnr_db: psnr(&x_hat, &truth.values),
            alpha,
        });
        Ok(accuracy)
    }

    fn effective_optics(&self) -> OpticsConfig {
        let mut o = self.optics.clone();
        if !self.scatterers_on {
            o.scatterers.clear();
        }
        if !self.texture_on {
            o.texture_amplitude = 0.0;
        }
        o
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo {
            optics: demo_optics(),
            scatterers_on: true,
            texture_on: true,
            seed: 42,
            calibrated: None,
            last: None,
        }
    }

    pub fn sensor_width(&self) -> usize {
        self.optics.sensor.width_px
    }

    pub fn sensor_height(&self) -> usize {
        self.optics.sensor.height_px
    }

    pub fn grid_rows(&self) -> usize {
        self.optics.grid.rows
    }

    pub fn grid_cols(&self) -> usize {
        self.optics.grid.cols
    }

    /// Object distance in mm; calibration is invalidated.
    pub fn set_distance(&mut self, d_mm: f64) -> Result<(), JsValue> {
        self.try_set_distance(d_mm).map_err(err_to_js)
    }

    pub fn set_read_noise(&mut self, sigma: f64) {
        self.optics.sensor.read_noise_sigma = sigma.clamp(0.0, 0.05);
        self.calibrated = None;
    }

    pub fn set_scatterers(&mut self, on: bool) {
        self.scatterers_on = on;
        self.calibrated = None;
    }

    pub fn set_texture(&mut self, on: bool) {
        self.texture_on = on;
        self.calibrated = None;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.calibrated = None;
    }

    /// Operation 1: the sensor pattern a single source leaves, normalized
    /// for display.
    pub fn psf_rgba(&self, row: usize, col: usize) -> Result<Vec<u8>, JsValue> {
        let optics = self.effective_optics();
        let idx = index_of(row, col, &optics.grid).map_err(err_to_js)?;
        let frame = render_psf(idx, &optics).map_err(err_to_js)?;
        Ok(to_rgba(&frame.data))
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated.is_some()
    }

    /// Acquire the calibration matrix and decompose it; returns the
    /// condition number.
    pub fn calibrate(&mut self) -> Result<f64, JsValue> {
        let optics = self.effective_optics();
        let exposure = calibration_exposure(&optics, FILL);
        let a = calibrate(&optics, N_AVG, exposure, self.seed).map_err(err_to_js)?;
        let factors = svd(&a.data).map_err(err_to_js)?;
        let cond = condition_number(&factors);
        self.calibrated = Some(Calibrated { a, factors });
        Ok(cond)
    }

    /// Operation 2: capture a pattern through the simulated sensor and invert
    /// it. Returns the pixel accuracy; images are fetched afterwards.
    pub fn reconstruct_pattern(&mut self, name: &str, trial: u64) -> Result<f64, JsValue> {
        self.try_reconstruct_pattern(name, trial).map_err(err_to_js)
    }

    pub fn last_accuracy(&self) -> f64 {
        self.last.as_ref().map(|l| l.accuracy).unwrap_or(f64::NAN)
    }

    pub fn last_measurement_rgba(&self) -> Vec<u8> {
        self.last.as_ref().map(|l| l.measurement_rgba.clone()).unwrap_or_default()
    }

    pub fn last_raw_rgba(&self) -> Vec<u8> {
        self.last.as_ref().map(|l| l.raw_rgba.clone()).unwrap_or_default()
    }

    pub fn last_binary_rgba(&self) -> Vec<u8> {
        self.last.as_ref().map(|l| l.binary_rgba.clone()).unwrap_or_default()
    }

    pub fn last_psnr_db(&self) -> f64 {
        self.last.as_ref().map(|l| l.psnr_db).unwrap_or(f64::NAN)
    }

    pub fn last_alpha(&self) -> f64 {
        self.last.as_ref().map(|l| l.alpha).unwrap_or(f64::NAN)
    }

    /// Operation 3a: normalized singular values of the calibration matrix.
    pub fn decay(&self) -> Result<Vec<f64>, JsValue> {
        let cal = self
            .calibrated
            .as_ref()
            .ok_or_else(|| JsValue::from_str("calibrate first"))?;
        Ok(singular_decay(&cal.factors).into_iter().map(|(_, v)| v).collect())
    }

    /// Operation 3b: correlation heatmap along a source line, as RGBA.
    /// `line` is `h`, `v` or `diag`; returns an n x n image.
    pub fn correlation_rgba(&self, line: &str) -> Result<Vec<u8>, JsValue> {
        let cal = self
            .calibrated
            .as_ref()
            .ok_or_else(|| JsValue::from_str("calibrate first"))?;
        let (kind, pos) = match line {
            "h" => (LineKind::Horizontal, self.optics.grid.rows / 2),
            "v" => (LineKind::Vertical, self.optics.grid.cols / 2),
            "diag" => (LineKind::Diagonal, 0),
            other => return Err(JsValue::from_str(&format!("unknown line `{other}`"))),
        };
        let map = correlation_map(&cal.a, kind, pos).map_err(err_to_js)?;
        let n = map.indices.len();
        let mut flat = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                flat.push(map.values[(i, j)]);
            }
        }
        Ok(correlation_rgba(&flat))
    }

    pub fn correlation_size(&self, line: &str) -> usize {
        match line {
            "h" | "diag" => self.optics.grid.cols,
            "v" => self.optics.grid.rows,
            _ => 0,
        }
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}
