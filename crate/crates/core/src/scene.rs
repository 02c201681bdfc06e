//! The object plane: an emitter grid, scenes on it, and the flattening
//! convention between 2-D grids and the solution vector.
//!
//! Flattening is row-major with row 0 at the top, and the grid is centered on
//! the optical axis (row 0 maps to +y). Every other module relies on this
//! single convention.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fixed bitmap artwork, stored as plain-text 0/1 rasters under `assets/`.
const LETTER_T: &str = include_str!("../assets/letter_t.txt");
const STICKMAN: &str = include_str!("../assets/stickman.txt");

/// Vertical offsets (in rows, upward) of the jumping-stickman cycle.
const JUMP_CYCLE: [usize; 4] = [0, 1, 2, 1];

/// Marker for the grid placement convention.
///
/// Only centered grids exist today; the field keeps files self-describing if
/// that ever changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridOrigin {
    #[default]
    Centered,
}

/// A rows x cols emitter array with uniform spacing, centered on the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceGrid {
    pub rows: usize,
    pub cols: usize,
    pub pitch_mm: f64,
    #[serde(default)]
    pub origin: GridOrigin,
}

impl SourceGrid {
    pub fn new(rows: usize, cols: usize, pitch_mm: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidConfig("grid must have rows >= 1, cols >= 1".into()));
        }
        if !(pitch_mm > 0.0) {
            return Err(Error::InvalidConfig(format!("pitch must be positive, got {pitch_mm}")));
        }
        Ok(Self { rows, cols, pitch_mm, origin: GridOrigin::Centered })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false // rows, cols >= 1 by construction
    }

    /// Physical extent (width, height) in mm, center-to-center of the outermost emitters.
    pub fn extent_mm(&self) -> (f64, f64) {
        (
            (self.cols as f64 - 1.0) * self.pitch_mm,
            (self.rows as f64 - 1.0) * self.pitch_mm,
        )
    }
}

/// Row-major flattening: `(r, c) -> r * cols + c`.
pub fn index_of(r: usize, c: usize, grid: &SourceGrid) -> Result<usize> {
    if r >= grid.rows {
        return Err(Error::OutOfBounds { what: "row", got: r, limit: grid.rows });
    }
    if c >= grid.cols {
        return Err(Error::OutOfBounds { what: "col", got: c, limit: grid.cols });
    }
    Ok(r * grid.cols + c)
}

/// Inverse of [`index_of`].
pub fn coords_of(index: usize, grid: &SourceGrid) -> Result<(usize, usize)> {
    if index >= grid.len() {
        return Err(Error::OutOfBounds { what: "index", got: index, limit: grid.len() });
    }
    Ok((index / grid.cols, index % grid.cols))
}

/// Lateral position of an emitter in mm, grid centroid at (0, 0).
///
/// Row 0 is the top row, so it maps to +y; columns increase toward +x.
pub fn source_position_mm(index: usize, grid: &SourceGrid) -> Result<(f64, f64)> {
    let (r, c) = coords_of(index, grid)?;
    let x = (c as f64 - (grid.cols as f64 - 1.0) / 2.0) * grid.pitch_mm;
    let y = ((grid.rows as f64 - 1.0) / 2.0 - r as f64) * grid.pitch_mm;
    Ok((x, y))
}

/// Nonnegative per-source intensities; the vector `x` of the forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneVector {
    pub grid: SourceGrid,
    pub values: Vec<f64>,
}

impl SceneVector {
    pub fn new(grid: SourceGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
                context: "scene values vs grid size",
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("scene values (must be finite and >= 0)"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: SourceGrid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn lit_count(&self) -> usize {
        self.values.iter().filter(|v| **v > 0.0).count()
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0 || *v == 1.0)
    }

    /// Zero out the top `n` rows (emulates a fixture blocking part of the array).
    pub fn mask_top_rows(&self, n: usize) -> SceneVector {
        let mut out = self.clone();
        let n = n.min(self.grid.rows);
        for r in 0..n {
            for c in 0..self.grid.cols {
                out.values[r * self.grid.cols + c] = 0.0;
            }
        }
        out
    }
}

/// An ordered sequence of scenes on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub grid: SourceGrid,
    pub frames: Vec<SceneVector>,
    pub frame_period_ms: f64,
}

/// Named test patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    LetterT,
    Stickman,
    LineH(usize),
    LineV(usize),
    LineDiag(usize),
    FullOn,
    Single(usize, usize),
}

impl Pattern {
    /// Parse the CLI spelling: `letter-T`, `stickman`, `line-h(26)`,
    /// `line-v(8)`, `line-diag(5)`, `full-on`, `single(3,4)`.
    pub fn parse(name: &str) -> Result<Pattern> {
        let s = name.trim();
        match s {
            "letter-T" | "letter-t" => return Ok(Pattern::LetterT),
            "stickman" => return Ok(Pattern::Stickman),
            "full-on" => return Ok(Pattern::FullOn),
            _ => {}
        }
        let arg = |prefix: &str| -> Option<&str> {
            s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')
        };
        if let Some(a) = arg("line-h") {
            let n = a.trim().parse().map_err(|_| Error::UnknownPattern(s.into()))?;
            return Ok(Pattern::LineH(n));
        }
        if let Some(a) = arg("line-v") {
            let n = a.trim().parse().map_err(|_| Error::UnknownPattern(s.into()))?;
            return Ok(Pattern::LineV(n));
        }
        if let Some(a) = arg("line-diag") {
            let n = a.trim().parse().map_err(|_| Error::UnknownPattern(s.into()))?;
            return Ok(Pattern::LineDiag(n));
        }
        if let Some(a) = arg("single") {
            let mut it = a.split(',');
            let r = it.next().and_then(|t| t.trim().parse().ok());
            let c = it.next().and_then(|t| t.trim().parse().ok());
            if let (Some(r), Some(c), None) = (r, c, it.next()) {
                return Ok(Pattern::Single(r, c));
            }
        }
        Err(Error::UnknownPattern(s.into()))
    }
}

fn parse_bitmap(text: &str) -> (usize, usize, Vec<bool>) {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let h = rows.len();
    let w = rows.iter().map(|r| r.trim().len()).max().unwrap_or(0);
    let mut cells = vec![false; w * h];
    for (r, line) in rows.iter().enumerate() {
        for (c, ch) in line.trim().chars().enumerate() {
            cells[r * w + c] = ch == '1';
        }
    }
    (h, w, cells)
}

/// Stamp a bitmap centered on the grid, shifted up by `up` rows.
fn stamp_centered(
    grid: &SourceGrid,
    art: (usize, usize, &[bool]),
    up: usize,
    what: &str,
) -> Result<SceneVector> {
    let (ah, aw, cells) = art;
    if ah > grid.rows || aw > grid.cols {
        return Err(Error::PatternTooLarge(format!(
            "{what} is {ah}x{aw}, grid is {}x{}",
            grid.rows, grid.cols
        )));
    }
    let r0 = (grid.rows - ah) / 2;
    let c0 = (grid.cols - aw) / 2;
    if up > r0 {
        return Err(Error::PatternTooLarge(format!(
            "{what} shifted {up} rows up leaves the grid"
        )));
    }
    let mut scene = SceneVector::zeros(*grid);
    for r in 0..ah {
        for c in 0..aw {
            if cells[r * aw + c] {
                scene.values[(r0 - up + r) * grid.cols + (c0 + c)] = 1.0;
            }
        }
    }
    Ok(scene)
}

/// Build a binary test pattern on the given grid.
pub fn make_pattern(pattern: Pattern, grid: &SourceGrid) -> Result<SceneVector> {
    match pattern {
        Pattern::LetterT => {
            let (h, w, cells) = parse_bitmap(LETTER_T);
            stamp_centered(grid, (h, w, &cells), 0, "letter-T")
        }
        Pattern::Stickman => {
            let (h, w, cells) = parse_bitmap(STICKMAN);
            stamp_centered(grid, (h, w, &cells), 0, "stickman")
        }
        Pattern::FullOn => {
            let mut scene = SceneVector::zeros(*grid);
            scene.values.fill(1.0);
            Ok(scene)
        }
        Pattern::Single(r, c) => {
            let idx = index_of(r, c, grid)?;
            let mut scene = SceneVector::zeros(*grid);
            scene.values[idx] = 1.0;
            Ok(scene)
        }
        Pattern::LineH(len) => {
            if len == 0 || len > grid.cols {
                return Err(Error::PatternTooLarge(format!(
                    "horizontal line of {len} on {} columns",
                    grid.cols
                )));
            }
            let r = grid.rows / 2;
            let c0 = (grid.cols - len) / 2;
            let mut scene = SceneVector::zeros(*grid);
            for c in c0..c0 + len {
                scene.values[r * grid.cols + c] = 1.0;
            }
            Ok(scene)
        }
        Pattern::LineV(len) => {
            if len == 0 || len > grid.rows {
                return Err(Error::PatternTooLarge(format!(
                    "vertical line of {len} on {} rows",
                    grid.rows
                )));
            }
            let c = grid.cols / 2;
            let r0 = (grid.rows - len) / 2;
            let mut scene = SceneVector::zeros(*grid);
            for r in r0..r0 + len {
                scene.values[r * grid.cols + c] = 1.0;
            }
            Ok(scene)
        }
        Pattern::LineDiag(len) => {
            let max = grid.rows.min(grid.cols);
            if len == 0 || len > max {
                return Err(Error::PatternTooLarge(format!(
                    "diagonal line of {len} on a {}x{} grid",
                    grid.rows, grid.cols
                )));
            }
            let r0 = (grid.rows - len) / 2;
            let c0 = (grid.cols - len) / 2;
            let mut scene = SceneVector::zeros(*grid);
            for k in 0..len {
                scene.values[(r0 + k) * grid.cols + (c0 + k)] = 1.0;
            }
            Ok(scene)
        }
    }
}

/// Named animations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Animation {
    JumpingStickman,
}

impl Animation {
    pub fn parse(name: &str) -> Result<Animation> {
        match name.trim() {
            "jumping-stickman" => Ok(Animation::JumpingStickman),
            other => Err(Error::UnknownAnimation(other.into())),
        }
    }

    /// Length of the deterministic cycle, in frames.
    pub fn period(&self) -> usize {
        match self {
            Animation::JumpingStickman => JUMP_CYCLE.len(),
        }
    }
}

/// Build a deterministic periodic animation of `n_frames` binary scenes.
pub fn make_video(animation: Animation, grid: &SourceGrid, n_frames: usize) -> Result<VideoSequence> {
    if n_frames == 0 {
        return Err(Error::InvalidConfig("video needs at least one frame".into()));
    }
    match animation {
        Animation::JumpingStickman => {
            let (h, w, cells) = parse_bitmap(STICKMAN);
            let mut frames = Vec::with_capacity(n_frames);
            for k in 0..n_frames {
                let up = JUMP_CYCLE[k % JUMP_CYCLE.len()];
                frames.push(stamp_centered(grid, (h, w, &cells), up, "stickman")?);
            }
            // 16 Hz echoes the LED panel refresh the averaging was meant to beat.
            Ok(VideoSequence { grid: *grid, frames, frame_period_ms: 62.5 })
        }
    }
}
