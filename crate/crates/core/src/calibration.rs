//! Calibration-matrix acquisition and handling.
//!
//! Column `j` of the calibration matrix is the averaged sensor capture of
//! source `j` alone, stored as raw full-scale fractions with no per-column
//! renormalization (the forward model is physically linear, so the columns
//! must keep their relative brightness).

use nalgebra::DMatrix;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::optics::{average_exposures, render_psf_with_texture, texture_field, Frame, OpticsConfig};
use crate::rng;
use crate::solver::{self, SvdFactors};
use crate::{Error, Result};

/// How a calibration matrix came to be.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CreatedFrom {
    /// SHA-256 over the simulation inputs (config JSON, n_avg, exposure, seed).
    Simulated([u8; 32]),
    /// Loaded from a file we did not produce in this process.
    External,
}

/// Acquisition metadata carried alongside the matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMeta {
    pub distance_mm: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub pitch_mm: f64,
    pub sensor_width_px: usize,
    pub sensor_height_px: usize,
    pub pixel_pitch_um: f64,
    pub n_avg: usize,
    /// Pixel rectangles whose rows were deleted from the matrix.
    pub mask_rects: Vec<MaskRect>,
    pub created_from: CreatedFrom,
}

/// Dense calibration matrix: column j is the flattened averaged capture of
/// source j.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMatrix {
    /// n_pixels x n_sources.
    pub data: DMatrix<f64>,
    pub meta: CalibrationMeta,
}

impl CalibrationMatrix {
    pub fn n_pixels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.data.ncols()
    }

    pub fn svd(&self) -> Result<SvdFactors> {
        solver::svd(&self.data)
    }
}

/// Calibrations of the same setup at several object distances.
#[derive(Debug, Clone)]
pub struct CalibrationStack {
    entries: Vec<CalibrationMatrix>,
}

impl CalibrationStack {
    pub fn new(entries: Vec<CalibrationMatrix>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyStack);
        }
        let first = &entries[0].meta;
        for pair in entries.windows(2) {
            if pair[1].meta.distance_mm <= pair[0].meta.distance_mm {
                return Err(Error::UnsortedStack);
            }
        }
        for e in &entries[1..] {
            let m = &e.meta;
            if (m.grid_rows, m.grid_cols, m.sensor_width_px, m.sensor_height_px)
                != (first.grid_rows, first.grid_cols, first.sensor_width_px, first.sensor_height_px)
            {
                return Err(Error::InvalidConfig(
                    "stack entries must share grid and sensor geometry".into(),
                ));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CalibrationMatrix] {
        &self.entries
    }
}

/// A pixel rectangle to exclude; x grows rightward, y downward (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskRect {
    pub x0: u32,
    pub y0: u32,
    pub width: u32,
    pub height: u32,
}

impl MaskRect {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (x, y) = (x as u32, y as u32);
        x >= self.x0 && x < self.x0 + self.width && y >= self.y0 && y < self.y0 + self.height
    }
}

/// Pixel regions to remove from the system (sensor rows deleted, not zeroed).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    pub rects: Vec<MaskRect>,
}

impl PixelMask {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.rects.iter().any(|r| r.contains(x, y))
    }

    fn check_bounds(&self, width_px: usize, height_px: usize) -> Result<()> {
        for r in &self.rects {
            let x1 = r.x0 as usize + r.width as usize;
            let y1 = r.y0 as usize + r.height as usize;
            if x1 > width_px || y1 > height_px {
                return Err(Error::MaskOutOfBounds(format!(
                    "rect at ({}, {}) size {}x{} exceeds {width_px}x{height_px}",
                    r.x0, r.y0, r.width, r.height
                )));
            }
        }
        Ok(())
    }

    /// Row-major indices of the pixels that survive the mask.
    pub fn kept_indices(&self, width_px: usize, height_px: usize) -> Result<Vec<usize>> {
        self.check_bounds(width_px, height_px)?;
        let mut kept = Vec::with_capacity(width_px * height_px);
        for y in 0..height_px {
            for x in 0..width_px {
                if !self.contains(x, y) {
                    kept.push(y * width_px + x);
                }
            }
        }
        if kept.is_empty() {
            return Err(Error::MaskCoversSensor);
        }
        Ok(kept)
    }
}

fn simulation_hash(cfg: &OpticsConfig, n_avg: usize, exposure_scale: f64, seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(cfg).expect("config serializes"));
    hasher.update(n_avg.to_le_bytes());
    hasher.update(exposure_scale.to_le_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.finalize().into()
}

/// Acquire the calibration matrix: one averaged capture per source.
///
/// Column `j` uses the derived seed `rng::derive(rng_seed, j)` for its frame
/// schedule, so the result is deterministic and columns may be captured in
/// parallel.
pub fn calibrate(
    cfg: &OpticsConfig,
    n_avg: usize,
    exposure_scale: f64,
    rng_seed: u64,
) -> Result<CalibrationMatrix> {
    cfg.validate()?;
    if n_avg == 0 {
        return Err(Error::InvalidConfig("calibration needs n_avg >= 1".into()));
    }
    let texture = texture_field(cfg);
    let n_sources = cfg.n_sources();
    let capture_column = |j: usize| -> Result<Vec<f64>> {
        let clean = render_psf_with_texture(j, cfg, &texture)?;
        let avg = average_exposures(
            &clean,
            &cfg.sensor,
            n_avg,
            exposure_scale,
            rng::derive(rng_seed, j as u64),
        );
        Ok(avg.data)
    };

    #[cfg(feature = "parallel")]
    let columns: Vec<Vec<f64>> =
        (0..n_sources).into_par_iter().map(capture_column).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let columns: Vec<Vec<f64>> = (0..n_sources).map(capture_column).collect::<Result<_>>()?;

    let n_pixels = cfg.n_pixels();
    let mut data = DMatrix::zeros(n_pixels, n_sources);
    for (j, col) in columns.iter().enumerate() {
        data.column_mut(j).copy_from_slice(col);
    }
    Ok(CalibrationMatrix {
        data,
        meta: CalibrationMeta {
            distance_mm: cfg.distance_mm,
            grid_rows: cfg.grid.rows,
            grid_cols: cfg.grid.cols,
            pitch_mm: cfg.grid.pitch_mm,
            sensor_width_px: cfg.sensor.width_px,
            sensor_height_px: cfg.sensor.height_px,
            pixel_pitch_um: cfg.sensor.pixel_pitch_um,
            n_avg,
            mask_rects: Vec::new(),
            created_from: CreatedFrom::Simulated(simulation_hash(cfg, n_avg, exposure_scale, rng_seed)),
        },
    })
}

/// Delete the masked sensor rows from the matrix.
///
/// Rows are removed, not zeroed: a zeroed row would still participate in the
/// least-squares fit as a claimed dark pixel.
pub fn apply_mask(a: &CalibrationMatrix, mask: &PixelMask) -> Result<CalibrationMatrix> {
    let (w, h) = (a.meta.sensor_width_px, a.meta.sensor_height_px);
    if !a.meta.mask_rects.is_empty() {
        return Err(Error::InvalidConfig("matrix is already masked".into()));
    }
    let kept = mask.kept_indices(w, h)?;
    let mut data = DMatrix::zeros(kept.len(), a.n_sources());
    for (new_row, &old_row) in kept.iter().enumerate() {
        for col in 0..a.n_sources() {
            data[(new_row, col)] = a.data[(old_row, col)];
        }
    }
    let mut meta = a.meta.clone();
    meta.mask_rects = mask.rects.clone();
    Ok(CalibrationMatrix { data, meta })
}

/// Delete the same pixels from a measurement frame, in matching order.
pub fn apply_mask_frame(frame: &Frame, mask: &PixelMask) -> Result<Vec<f64>> {
    let kept = mask.kept_indices(frame.width_px, frame.height_px)?;
    Ok(kept.iter().map(|&i| frame.data[i]).collect())
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn contains_box(&self, other: &PixelBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }
}

/// Per-source PSF extent at a threshold fraction of the column peak.
#[derive(Debug, Clone, Serialize)]
pub struct FovReport {
    pub tau: f64,
    /// Superlevel-set bounding box per source; `None` for all-zero columns.
    pub extents: Vec<Option<PixelBox>>,
    /// Sources whose box does not touch the sensor border (nominal FOV).
    pub in_fov: Vec<usize>,
    /// Sources with all-zero columns.
    pub empty_columns: Vec<usize>,
}

/// Bounding box of pixels at or above `tau * column max`, per source.
///
/// A source counts as inside the nominal field of view when its box keeps a
/// clear margin to every sensor border (a box touching the border means the
/// superlevel set was clipped by the sensor edge).
pub fn estimate_fov(a: &CalibrationMatrix, tau: f64) -> Result<FovReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau must be in (0, 1), got {tau}")));
    }
    if !a.meta.mask_rects.is_empty() {
        return Err(Error::InvalidConfig("field of view needs an unmasked matrix".into()));
    }
    let (w, h) = (a.meta.sensor_width_px, a.meta.sensor_height_px);
    let mut extents = Vec::with_capacity(a.n_sources());
    let mut in_fov = Vec::new();
    let mut empty_columns = Vec::new();
    for j in 0..a.n_sources() {
        let col = a.data.column(j);
        let peak = col.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            extents.push(None);
            empty_columns.push(j);
            continue;
        }
        let cut = tau * peak;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        for y in 0..h {
            for x in 0..w {
                if col[y * w + x] >= cut {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        let b = PixelBox { x0, y0, x1, y1 };
        if b.x0 > 0 && b.y0 > 0 && b.x1 < w - 1 && b.y1 < h - 1 {
            in_fov.push(j);
        }
        extents.push(Some(b));
    }
    Ok(FovReport { tau, extents, in_fov, empty_columns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{calibration_exposure, expose, render_psf, DustScatterer, SensorSpec};
    use crate::scene::{index_of, SourceGrid};
    use crate::solver::tikhonov_solve;

    fn small_cfg() -> OpticsConfig {
        OpticsConfig {
            sensor: SensorSpec {
                width_px: 24,
                height_px: 18,
                pixel_pitch_um: 2500.0,
                bit_depth: 8,
                read_noise_sigma: 0.0,
                shot_noise: false,
            },
            grid: SourceGrid::new(2, 2, 6.1).unwrap(),
            distance_mm: 343.0,
            scatterers: vec![DustScatterer {
                pos_mm: (3.0, -2.0),
                height_mm: 55.0,
                radius_mm: 6.0,
                opacity: 0.5,
            }],
            texture_seed: 7,
            texture_amplitude: 0.05,
            envelope_exponent: 4.0,
        }
    }

    #[test]
    fn noiseless_columns_are_captured_psfs_in_flattening_order() {
        let cfg = small_cfg();
        let e = calibration_exposure(&cfg, 0.5);
        let a = calibrate(&cfg, 1, e, 9).unwrap();
        assert_eq!(a.n_pixels(), 24 * 18);
        assert_eq!(a.n_sources(), 4);
        for r in 0..2 {
            for c in 0..2 {
                let j = index_of(r, c, &cfg.grid).unwrap();
                let psf = render_psf(j, &cfg).unwrap();
                let shot = expose(&psf, &cfg.sensor, e, crate::rng::derive(crate::rng::derive(9, j as u64), 0));
                let col: Vec<f64> = a.data.column(j).iter().cloned().collect();
                assert_eq!(col, shot.data, "column ({r},{c})");
            }
        }
        assert!(a.data.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(matches!(a.meta.created_from, CreatedFrom::Simulated(_)));
    }

    #[test]
    fn calibrate_is_deterministic() {
        let mut cfg = small_cfg();
        cfg.sensor.read_noise_sigma = 0.01;
        let e = calibration_exposure(&cfg, 0.5);
        let a = calibrate(&cfg, 3, e, 1).unwrap();
        let b = calibrate(&cfg, 3, e, 1).unwrap();
        assert_eq!(a.data, b.data);
        let c = calibrate(&cfg, 3, e, 2).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn masking_deletes_rows() {
        let cfg = small_cfg();
        let e = calibration_exposure(&cfg, 0.5);
        let a = calibrate(&cfg, 1, e, 9).unwrap();

        let empty = apply_mask(&a, &PixelMask::empty()).unwrap();
        assert_eq!(empty.data, a.data);

        let mask = PixelMask {
            rects: vec![MaskRect { x0: 4, y0: 3, width: 2, height: 2 }],
        };
        let masked = apply_mask(&a, &mask).unwrap();
        assert_eq!(masked.n_pixels(), a.n_pixels() - 4);
        assert_eq!(masked.meta.mask_rects, mask.rects);

        let all = PixelMask {
            rects: vec![MaskRect { x0: 0, y0: 0, width: 24, height: 18 }],
        };
        assert!(matches!(apply_mask(&a, &all), Err(Error::MaskCoversSensor)));

        let oob = PixelMask {
            rects: vec![MaskRect { x0: 20, y0: 0, width: 8, height: 2 }],
        };
        assert!(matches!(apply_mask(&a, &oob), Err(Error::MaskOutOfBounds(_))));
    }

    #[test]
    fn masked_solve_equals_independently_reduced_system() {
        let cfg = OpticsConfig { grid: SourceGrid::new(3, 3, 6.1).unwrap(), ..small_cfg() };
        let e = calibration_exposure(&cfg, 0.5);
        let a = calibrate(&cfg, 1, e, 4).unwrap();
        let mask = PixelMask {
            rects: vec![
                MaskRect { x0: 0, y0: 0, width: 5, height: 4 },
                MaskRect { x0: 10, y0: 8, width: 6, height: 3 },
            ],
        };
        let masked = apply_mask(&a, &mask).unwrap();

        // independent construction: straight row filter over the dense matrix
        let (w, _h) = (cfg.sensor.width_px, cfg.sensor.height_px);
        let keep: Vec<usize> = (0..a.n_pixels())
            .filter(|i| !mask.contains(i % w, i / w))
            .collect();
        let mut reduced = DMatrix::zeros(keep.len(), a.n_sources());
        for (nr, &or) in keep.iter().enumerate() {
            for c in 0..a.n_sources() {
                reduced[(nr, c)] = a.data[(or, c)];
            }
        }
        assert_eq!(masked.data, reduced);

        // and solving the masked system equals solving the reduced system
        let x = crate::scene::make_pattern(crate::scene::Pattern::Single(1, 1), &cfg.grid).unwrap();
        let frame = crate::optics::capture_averaged(&x, &cfg, 1, e, 77).unwrap();
        let b = apply_mask_frame(&frame, &mask).unwrap();
        let f1 = masked.svd().unwrap();
        let f2 = crate::solver::svd(&reduced).unwrap();
        let alpha = 0.01 * f1.s[0];
        let x1 = tikhonov_solve(&f1, &b, alpha).unwrap();
        let x2 = tikhonov_solve(&f2, &b, alpha).unwrap();
        for (u, v) in x1.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn fov_box_is_centered_and_nested() {
        // envelope only, short distance so the superlevel set is interior
        let cfg = OpticsConfig {
            grid: SourceGrid::new(3, 3, 1.0).unwrap(),
            distance_mm: 25.0,
            scatterers: vec![],
            texture_amplitude: 0.0,
            ..small_cfg()
        };
        let e = calibration_exposure(&cfg, 0.5);
        let a = calibrate(&cfg, 1, e, 0).unwrap();
        let center = index_of(1, 1, &cfg.grid).unwrap();
        let report = estimate_fov(&a, 0.5).unwrap();
        let b = report.extents[center].unwrap();
        let (w, h) = (cfg.sensor.width_px, cfg.sensor.height_px);
        assert_eq!(b.x0 + b.x1, w - 1, "{b:?}");
        assert_eq!(b.y0 + b.y1, h - 1, "{b:?}");
        assert!(report.in_fov.contains(&center));

        // superlevel boxes shrink as tau grows
        let mut prev: Option<PixelBox> = None;
        for tau in [0.3, 0.5, 0.7, 0.9] {
            let r = estimate_fov(&a, tau).unwrap();
            let b = r.extents[center].unwrap();
            if let Some(p) = prev {
                assert!(p.contains_box(&b), "tau {tau}: {p:?} should contain {b:?}");
            }
            prev = Some(b);
        }

        assert!(estimate_fov(&a, 0.0).is_err());
        assert!(estimate_fov(&a, 1.0).is_err());
    }

    #[test]
    fn fov_flags_empty_columns() {
        let cfg = small_cfg();
        let e = calibration_exposure(&cfg, 0.5);
        let mut a = calibrate(&cfg, 1, e, 9).unwrap();
        for r in 0..a.n_pixels() {
            a.data[(r, 2)] = 0.0;
        }
        let report = estimate_fov(&a, 0.5).unwrap();
        assert_eq!(report.empty_columns, vec![2]);
        assert!(report.extents[2].is_none());
        assert!(!report.in_fov.contains(&2));
    }

    #[test]
    fn stack_invariants() {
        let cfg = small_cfg();
        let e = calibration_exposure(&cfg, 0.5);
        let a1 = calibrate(&OpticsConfig { distance_mm: 100.0, scatterers: vec![], ..cfg.clone() }, 1, e, 0).unwrap();
        let a2 = calibrate(&OpticsConfig { distance_mm: 200.0, scatterers: vec![], ..cfg.clone() }, 1, e, 0).unwrap();
        assert!(CalibrationStack::new(vec![a1.clone(), a2.clone()]).is_ok());
        assert!(matches!(CalibrationStack::new(vec![]), Err(Error::EmptyStack)));
        assert!(matches!(
            CalibrationStack::new(vec![a2, a1]),
            Err(Error::UnsortedStack)
        ));
    }
}
