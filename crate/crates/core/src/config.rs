//! Run configuration: strict JSON parsing, default setups, hashing.
//!
//! The desk-scale defaults are sized so that all three PSF channels are
//! resolvable at 8 bits: the sensor spans a substantial solid angle (coarse
//! 2.5 mm pixels), the scatterers sit tens of mm above the pixel plane so
//! their shadows sweep several pixels across the source grid, and the texture
//! rides at 5%. Scatterer geometry and texture statistics are placeholders,
//! not measured values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::optics::{DustScatterer, OpticsConfig, SensorSpec};
use crate::scene::SourceGrid;
use crate::solver::AlphaStrategy;
use crate::{Error, Result};

/// Distances (mm) used by the distance-sweep experiments.
pub const SWEEP_DISTANCES_MM: [f64; 5] = [85.0, 165.0, 242.0, 343.0, 497.0];

/// Solver settings as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// `fixed-fraction`, `l-curve`, or `discrepancy`.
    pub alpha_strategy: String,
    /// Fraction c for fixed-fraction, noise norm for discrepancy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_value: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { alpha_strategy: "l-curve".into(), alpha_value: None }
    }
}

impl SolverConfig {
    pub fn strategy(&self) -> Result<AlphaStrategy> {
        match self.alpha_strategy.as_str() {
            "fixed-fraction" => Ok(AlphaStrategy::FixedFraction(self.alpha_value.unwrap_or(0.01))),
            "l-curve" => Ok(AlphaStrategy::LCurve),
            "discrepancy" => match self.alpha_value {
                Some(n) => Ok(AlphaStrategy::Discrepancy(n)),
                None => Err(Error::InvalidConfig(
                    "discrepancy strategy needs alpha_value = noise norm".into(),
                )),
            },
            other => Err(Error::UnknownStrategy(other.into())),
        }
    }
}

/// Output settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Image formats to emit: any of `pgm`, `lfr`.
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["pgm".into()]
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), formats: default_formats() }
    }
}

/// A complete, reproducible run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub optics: OpticsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub io: IoConfig,
    pub seed: u64,
    /// Frames averaged per capture.
    #[serde(default = "default_n_avg")]
    pub n_avg: usize,
    /// Emulate a fixture blocking the top rows of the source array.
    #[serde(default)]
    pub masked_top_rows: usize,
    /// Target full-scale fraction of the brightest calibration pixel.
    #[serde(default = "default_exposure_fill")]
    pub exposure_fill: f64,
}

fn default_n_avg() -> usize {
    100
}

fn default_exposure_fill() -> f64 {
    0.9
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.solver.strategy()?;
        if self.n_avg == 0 {
            return Err(Error::InvalidConfig("n_avg must be >= 1".into()));
        }
        if !(self.exposure_fill > 0.0 && self.exposure_fill <= 1.0) {
            return Err(Error::InvalidConfig("exposure_fill must be in (0, 1]".into()));
        }
        if self.masked_top_rows >= self.optics.grid.rows {
            return Err(Error::InvalidConfig("masked_top_rows would blank the whole grid".into()));
        }
        for f in &self.io.formats {
            if f != "pgm" && f != "lfr" {
                return Err(Error::InvalidConfig(format!("unknown output format `{f}`")));
            }
        }
        Ok(())
    }

    /// Strict load: unknown keys are rejected.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON serialization.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.finalize().into()
    }
}

/// The simulation-scale default: 96x72 sensor, 16x16 grid, D = 343 mm,
/// three scatterers, 5% texture, 8-bit capture with mild read noise.
pub fn desk_scale() -> RunConfig {
    RunConfig {
        optics: OpticsConfig {
            sensor: SensorSpec {
                width_px: 96,
                height_px: 72,
                pixel_pitch_um: 2500.0,
                bit_depth: 8,
                read_noise_sigma: 0.005,
                shot_noise: false,
            },
            grid: SourceGrid::new(16, 16, 6.1).expect("valid grid"),
            distance_mm: 343.0,
            scatterers: vec![
                DustScatterer { pos_mm: (-35.0, 20.0), height_mm: 70.0, radius_mm: 6.0, opacity: 0.7 },
                DustScatterer { pos_mm: (25.0, -15.0), height_mm: 75.0, radius_mm: 9.0, opacity: 0.65 },
                DustScatterer { pos_mm: (45.0, 38.0), height_mm: 80.0, radius_mm: 12.0, opacity: 0.75 },
            ],
            texture_seed: 7,
            texture_amplitude: 0.05,
            envelope_exponent: 4.0,
        },
        solver: SolverConfig::default(),
        io: IoConfig::default(),
        seed: 42,
        n_avg: 100,
        masked_top_rows: 0,
        exposure_fill: 0.9,
    }
}

/// The hardware-scale setup: 640x480 sensor with 6 um pixels, 32x32 grid.
/// Runs the same pipeline; far heavier than the desk scale.
pub fn paper_scale() -> RunConfig {
    let mut cfg = desk_scale();
    cfg.optics.sensor.width_px = 640;
    cfg.optics.sensor.height_px = 480;
    cfg.optics.sensor.pixel_pitch_um = 6.0;
    cfg.optics.grid = SourceGrid::new(32, 32, 6.1).expect("valid grid");
    // dust at cover-glass scale: sub-mm standoff, shadows of a few dozen pixels
    cfg.optics.scatterers = vec![
        DustScatterer { pos_mm: (-0.9, 0.5), height_mm: 0.8, radius_mm: 0.12, opacity: 0.55 },
        DustScatterer { pos_mm: (0.6, -0.4), height_mm: 1.0, radius_mm: 0.15, opacity: 0.5 },
        DustScatterer { pos_mm: (1.2, 0.9), height_mm: 1.2, radius_mm: 0.2, opacity: 0.6 },
    ];
    cfg
}
