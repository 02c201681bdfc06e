//! Synthetic sensor physics.
//!
//! A bare sensor has no optics, so a point source does not focus anywhere;
//! what it leaves on the pixel plane is the product of three effects, each of
//! which is modeled and independently switchable here:
//!
//! - a radiometric envelope `cos^k(theta) / D^2` over the pixel-to-source
//!   angle (global falloff plus a smooth spatial bowl),
//! - a fixed multiplicative texture field (cover-glass irregularities; static
//!   per sensor, identical for every source),
//! - soft-edged shadow disks cast by dust scatterers above the pixel plane,
//!   whose centers shift with the source position (pinspeck geometry).
//!
//! Scatterer sizes, heights and texture statistics are not measured
//! quantities; the defaults in [`crate::config`] are plausible placeholders
//! chosen so all three channels are visible at the default scale.

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::scene::{source_position_mm, SceneVector, SourceGrid};
use crate::{Error, Result};

/// Sensor geometry and noise behavior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_pitch_um: f64,
    pub bit_depth: u8,
    /// Gaussian read noise, as a fraction of full scale.
    pub read_noise_sigma: f64,
    pub shot_noise: bool,
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::InvalidConfig("sensor must have at least one pixel".into()));
        }
        if !(self.pixel_pitch_um > 0.0) {
            return Err(Error::InvalidConfig("pixel pitch must be positive".into()));
        }
        if ![8, 12, 16].contains(&self.bit_depth) {
            return Err(Error::InvalidConfig(format!(
                "bit depth must be 8, 12 or 16, got {}",
                self.bit_depth
            )));
        }
        if !(self.read_noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("read noise must be >= 0".into()));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.width_px * self.height_px
    }

    pub fn pixel_pitch_mm(&self) -> f64 {
        self.pixel_pitch_um / 1000.0
    }

    /// Physical center of pixel (ix, iy) in mm; sensor centered on the axis,
    /// row 0 at the top (+y), matching the source-grid convention.
    pub fn pixel_center_mm(&self, ix: usize, iy: usize) -> (f64, f64) {
        let p = self.pixel_pitch_mm();
        (
            (ix as f64 - (self.width_px as f64 - 1.0) / 2.0) * p,
            ((self.height_px as f64 - 1.0) / 2.0 - iy as f64) * p,
        )
    }
}

/// An opaque particle on the cover glass, above the pixel plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DustScatterer {
    /// Lateral position on the cover glass, mm.
    pub pos_mm: (f64, f64),
    /// Standoff of the cover glass above the pixel plane, mm.
    pub height_mm: f64,
    pub radius_mm: f64,
    /// Fraction of light removed inside the shadow, in (0, 1].
    pub opacity: f64,
}

impl DustScatterer {
    pub fn validate(&self) -> Result<()> {
        if !(self.height_mm > 0.0) || !(self.radius_mm > 0.0) {
            return Err(Error::InvalidConfig("scatterer height and radius must be positive".into()));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::InvalidConfig("scatterer opacity must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Full description of one simulated setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpticsConfig {
    pub sensor: SensorSpec,
    pub grid: SourceGrid,
    /// Object distance D, mm.
    pub distance_mm: f64,
    #[serde(default)]
    pub scatterers: Vec<DustScatterer>,
    /// Seed of the fixed smooth irregularity field.
    pub texture_seed: u64,
    /// Texture excursion `a`: the field lives in [1-a, 1+a].
    pub texture_amplitude: f64,
    /// Vignetting power k of the cos^k envelope.
    #[serde(default = "default_envelope_exponent")]
    pub envelope_exponent: f64,
}

fn default_envelope_exponent() -> f64 {
    4.0
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        SourceGrid::new(self.grid.rows, self.grid.cols, self.grid.pitch_mm)?;
        for s in &self.scatterers {
            s.validate()?;
            if self.distance_mm <= s.height_mm {
                return Err(Error::SourceBehindScatterer {
                    distance_mm: self.distance_mm,
                    height_mm: s.height_mm,
                });
            }
        }
        if !(self.distance_mm > 0.0) {
            return Err(Error::InvalidConfig("object distance must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.texture_amplitude) {
            return Err(Error::InvalidConfig("texture amplitude must be in [0, 0.5]".into()));
        }
        if !(self.envelope_exponent >= 0.0) {
            return Err(Error::InvalidConfig("envelope exponent must be >= 0".into()));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.sensor.n_pixels()
    }

    pub fn n_sources(&self) -> usize {
        self.grid.len()
    }
}

/// A sensor intensity image in full-scale fraction units; the vector `b` when
/// flattened (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width_px: usize,
    pub height_px: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn zeros(width_px: usize, height_px: usize) -> Self {
        Self { width_px, height_px, data: vec![0.0; width_px * height_px] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Frame {
        Frame {
            width_px: self.width_px,
            height_px: self.height_px,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Where a scatterer's shadow lands for a source at lateral position `s_mm`
/// and height `distance_mm`: the pinhole projection of the particle center
/// onto the pixel plane.
///
/// The shadow radius is the particle radius magnified by `D / (D - h)`.
pub fn shadow_center(p: &DustScatterer, s_mm: (f64, f64), distance_mm: f64) -> Result<(f64, f64)> {
    let h = p.height_mm;
    if distance_mm <= h {
        return Err(Error::SourceBehindScatterer { distance_mm, height_mm: h });
    }
    let t = h / (distance_mm - h);
    Ok((
        p.pos_mm.0 + (p.pos_mm.0 - s_mm.0) * t,
        p.pos_mm.1 + (p.pos_mm.1 - s_mm.1) * t,
    ))
}

/// The fixed smooth irregularity field, in [1-a, 1+a].
///
/// Value noise: uniform samples on a coarse lattice, smoothstep-bilinear
/// interpolation, then an exact min-max rescale. Depends only on the sensor
/// dimensions, `texture_seed` and `texture_amplitude`, so it is identical for
/// every source and across runs.
pub fn texture_field(cfg: &OpticsConfig) -> Vec<f64> {
    let (w, h) = (cfg.sensor.width_px, cfg.sensor.height_px);
    let a = cfg.texture_amplitude;
    if a == 0.0 {
        return vec![1.0; w * h];
    }
    let cell = (w.min(h) / 12).max(4);
    let nx = w / cell + 2;
    let ny = h / cell + 2;
    let mut rng = rng::stream_rng(cfg.texture_seed, 0x7e87);
    let mut lattice = vec![0.0f64; nx * ny];
    for v in lattice.iter_mut() {
        *v = rand::RngExt::random(&mut rng);
    }
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut field = vec![0.0f64; w * h];
    for iy in 0..h {
        let fy = iy as f64 / cell as f64;
        let gy = fy.floor() as usize;
        let wy = smooth(fy - gy as f64);
        for ix in 0..w {
            let fx = ix as f64 / cell as f64;
            let gx = fx.floor() as usize;
            let wx = smooth(fx - gx as f64);
            let v00 = lattice[gy * nx + gx];
            let v10 = lattice[gy * nx + gx + 1];
            let v01 = lattice[(gy + 1) * nx + gx];
            let v11 = lattice[(gy + 1) * nx + gx + 1];
            let top = v00 + (v10 - v00) * wx;
            let bot = v01 + (v11 - v01) * wx;
            field[iy * w + ix] = top + (bot - top) * wy;
        }
    }
    let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < f64::EPSILON {
        return vec![1.0; w * h];
    }
    for v in field.iter_mut() {
        *v = 1.0 - a + 2.0 * a * (*v - lo) / (hi - lo);
    }
    field
}

fn smoothstep01(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Noiseless PSF of one source against a precomputed texture field.
pub(crate) fn render_psf_with_texture(
    source_index: usize,
    cfg: &OpticsConfig,
    texture: &[f64],
) -> Result<Frame> {
    let s = source_position_mm(source_index, &cfg.grid)?;
    let d = cfg.distance_mm;
    let k = cfg.envelope_exponent;
    let inv_d2 = 1.0 / (d * d);
    let rim = cfg.sensor.pixel_pitch_mm();

    // projected shadow disks for this source
    let mut disks: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(cfg.scatterers.len());
    for p in &cfg.scatterers {
        let c = shadow_center(p, s, d)?;
        let r = p.radius_mm * d / (d - p.height_mm);
        disks.push((c.0, c.1, r, p.opacity));
    }

    let (w, h) = (cfg.sensor.width_px, cfg.sensor.height_px);
    let mut frame = Frame::zeros(w, h);
    for iy in 0..h {
        for ix in 0..w {
            let (px, py) = cfg.sensor.pixel_center_mm(ix, iy);
            let dx = px - s.0;
            let dy = py - s.1;
            let cos_theta = d / (dx * dx + dy * dy + d * d).sqrt();
            let mut v = cos_theta.powf(k) * inv_d2 * texture[iy * w + ix];
            for &(cx, cy, r, opacity) in &disks {
                let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                // smooth one-pixel ramp at the rim
                let coverage = smoothstep01((r + 0.5 * rim - dist) / rim);
                v *= 1.0 - opacity * coverage;
            }
            frame.data[iy * w + ix] = v;
        }
    }
    Ok(frame)
}

/// Noiseless sensor pattern of a single source: envelope x texture x shadows.
pub fn render_psf(source_index: usize, cfg: &OpticsConfig) -> Result<Frame> {
    let texture = texture_field(cfg);
    render_psf_with_texture(source_index, cfg, &texture)
}

/// Noiseless frame of an arbitrary scene; exactly linear in the scene vector.
pub fn render_scene(x: &SceneVector, cfg: &OpticsConfig) -> Result<Frame> {
    if x.grid.rows != cfg.grid.rows || x.grid.cols != cfg.grid.cols {
        return Err(Error::GridMismatch {
            scene_rows: x.grid.rows,
            scene_cols: x.grid.cols,
            cfg_rows: cfg.grid.rows,
            cfg_cols: cfg.grid.cols,
        });
    }
    let texture = texture_field(cfg);
    let mut out = Frame::zeros(cfg.sensor.width_px, cfg.sensor.height_px);
    for (i, &xi) in x.values.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let psf = render_psf_with_texture(i, cfg, &texture)?;
        for (o, p) in out.data.iter_mut().zip(psf.data.iter()) {
            *o += xi * p;
        }
    }
    Ok(out)
}

/// One sensor exposure: scale, saturate, noise, quantize.
///
/// Saturation is clipping, not an error. Shot noise models a well capacity of
/// `2^bit_depth * 10` electrons at full scale. Deterministic given `rng_seed`.
pub fn expose(clean: &Frame, spec: &SensorSpec, exposure_scale: f64, rng_seed: u64) -> Frame {
    let mut rng = rng::stream_rng(rng_seed, 0xe4);
    let levels = ((1u32 << spec.bit_depth) - 1) as f64;
    let well = (1u64 << spec.bit_depth) as f64 * 10.0;
    let normal = (spec.read_noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.read_noise_sigma).unwrap());
    let mut out = Frame::zeros(clean.width_px, clean.height_px);
    for (o, &c) in out.data.iter_mut().zip(clean.data.iter()) {
        let mut v = (c * exposure_scale).clamp(0.0, 1.0);
        if spec.shot_noise && v > 0.0 {
            let electrons = Poisson::new(v * well).unwrap().sample(&mut rng);
            v = electrons / well;
        }
        if let Some(n) = &normal {
            v += n.sample(&mut rng);
        }
        v = v.clamp(0.0, 1.0);
        *o = (v * levels).round() / levels;
    }
    out
}

/// Mean of `n_frames` independent exposures of the same scene.
///
/// Frame `i` uses the derived seed `rng::derive(rng_seed, i)`, so a single
/// frame is identical to one [`expose`] call on that schedule.
pub fn capture_averaged(
    x: &SceneVector,
    cfg: &OpticsConfig,
    n_frames: usize,
    exposure_scale: f64,
    rng_seed: u64,
) -> Result<Frame> {
    if n_frames == 0 {
        return Err(Error::InvalidConfig("frame averaging needs n_frames >= 1".into()));
    }
    let clean = render_scene(x, cfg)?;
    Ok(average_exposures(&clean, &cfg.sensor, n_frames, exposure_scale, rng_seed))
}

/// Averaging path shared by [`capture_averaged`] and calibration (which
/// renders the clean frame once per source and reuses it).
pub fn average_exposures(
    clean: &Frame,
    spec: &SensorSpec,
    n_frames: usize,
    exposure_scale: f64,
    rng_seed: u64,
) -> Frame {
    let mut acc = Frame::zeros(clean.width_px, clean.height_px);
    for i in 0..n_frames {
        let shot = expose(clean, spec, exposure_scale, rng::derive(rng_seed, i as u64));
        for (a, s) in acc.data.iter_mut().zip(shot.data.iter()) {
            *a += s;
        }
    }
    let inv = 1.0 / n_frames as f64;
    for a in acc.data.iter_mut() {
        *a *= inv;
    }
    acc
}

/// Exposure that puts the brightest possible single-source pixel near
/// `fill` of full scale: the envelope peaks at `1/D^2` and the texture at
/// `1 + a`, so this bound never saturates a calibration capture.
pub fn calibration_exposure(cfg: &OpticsConfig, fill: f64) -> f64 {
    fill * cfg.distance_mm * cfg.distance_mm / (1.0 + cfg.texture_amplitude)
}

/// Exposure that puts the peak of a specific clean frame at `fill`.
pub fn frame_exposure(clean: &Frame, fill: f64) -> f64 {
    let m = clean.max();
    if m > 0.0 {
        fill / m
    } else {
        1.0
    }
}
