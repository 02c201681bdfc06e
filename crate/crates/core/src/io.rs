//! File formats.
//!
//! - PGM (P5): quantized sensor images and scene bitmaps, maxval 255 or 65535.
//! - LFR1: float frames; magic `LFR1`, u32 width, u32 height, f64 pixels
//!   row-major, all little-endian.
//! - LCAL1: calibration matrices; header below, then the dense payload
//!   column-major as little-endian f64.
//! - LREC1: precomputed reconstructors; magic + version, dims, alpha, the
//!   source calibration hash, then the matrix column-major.
//!
//! Writers are deterministic byte-for-byte given equal inputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationMatrix, CalibrationMeta, CreatedFrom, MaskRect, PixelMask};
use crate::optics::Frame;
use crate::solver::{Reconstructor, ReconstructorMeta};
use crate::{Error, Result};

// ---------------------------------------------------------------- PGM (P5)

/// Write a frame as binary PGM. Values are clamped to [0, 1] and scaled to
/// `maxval` (255 or 65535; 16-bit samples are big-endian per the format).
pub fn write_pgm<W: Write>(w: &mut W, frame: &Frame, maxval: u16) -> Result<()> {
    if maxval != 255 && maxval != 65535 {
        return Err(Error::InvalidConfig(format!("pgm maxval must be 255 or 65535, got {maxval}")));
    }
    write!(w, "P5\n{} {}\n{}\n", frame.width_px, frame.height_px, maxval)?;
    for v in &frame.data {
        let q = (v.clamp(0.0, 1.0) * maxval as f64).round() as u16;
        if maxval == 255 {
            w.write_all(&[q as u8])?;
        } else {
            w.write_all(&q.to_be_bytes())?;
        }
    }
    Ok(())
}

pub fn save_pgm(path: &Path, frame: &Frame, maxval: u16) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pgm(&mut w, frame, maxval)?;
    w.flush()?;
    Ok(())
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    // skip whitespace and '#' comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::MalformedFile { format: "PGM", reason: "expected integer".into() });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(Error::MalformedFile { format: "PGM", reason: "bad integer".into() })
}

/// Read a binary PGM into a frame with values on the `k / maxval` grid.
pub fn load_pgm(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::BadMagic { expected: "P5" });
    }
    let mut pos = 2;
    let w = pgm_token(&bytes, &mut pos)? as usize;
    let h = pgm_token(&bytes, &mut pos)? as usize;
    let maxval = pgm_token(&bytes, &mut pos)? as u32;
    if maxval != 255 && maxval != 65535 {
        return Err(Error::MalformedFile {
            format: "PGM",
            reason: format!("unsupported maxval {maxval}"),
        });
    }
    pos += 1; // single whitespace byte after maxval
    let bytes_per = if maxval == 255 { 1 } else { 2 };
    let expected = w * h * bytes_per;
    let got = bytes.len().saturating_sub(pos);
    if got != expected {
        return Err(Error::Truncated { expected, got });
    }
    let mut frame = Frame::zeros(w, h);
    for (i, v) in frame.data.iter_mut().enumerate() {
        let q = if maxval == 255 {
            bytes[pos + i] as u32
        } else {
            u16::from_be_bytes([bytes[pos + 2 * i], bytes[pos + 2 * i + 1]]) as u32
        };
        *v = q as f64 / maxval as f64;
    }
    Ok(frame)
}

// ------------------------------------------------------------------- LFR1

const LFR1_MAGIC: &[u8; 4] = b"LFR1";

/// Write a float frame: magic, u32 width, u32 height, f64 pixels row-major.
pub fn write_lfr1<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(LFR1_MAGIC)?;
    w.write_all(&(frame.width_px as u32).to_le_bytes())?;
    w.write_all(&(frame.height_px as u32).to_le_bytes())?;
    for v in &frame.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_lfr1(path: &Path, frame: &Frame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_lfr1(&mut w, frame)?;
    w.flush()?;
    Ok(())
}

pub fn load_lfr1(path: &Path) -> Result<Frame> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != LFR1_MAGIC {
        return Err(Error::BadMagic { expected: "LFR1" });
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = w * h * 8;
    let got = bytes.len() - 12;
    if got != expected {
        return Err(Error::Truncated { expected, got });
    }
    let mut frame = Frame::zeros(w, h);
    for (i, v) in frame.data.iter_mut().enumerate() {
        *v = f64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().unwrap());
    }
    Ok(frame)
}

// ------------------------------------------------------------------ LCAL1

const LCAL1_MAGIC: &[u8; 5] = b"LCAL1";
const LCAL1_VERSION: u8 = 1;

/// Serialize a calibration matrix into any writer.
pub fn write_lcal1<W: Write>(w: &mut W, a: &CalibrationMatrix) -> Result<()> {
    let m = &a.meta;
    w.write_all(LCAL1_MAGIC)?;
    w.write_all(&[LCAL1_VERSION])?;
    for v in [
        a.n_pixels() as u32,
        a.n_sources() as u32,
        m.sensor_width_px as u32,
        m.sensor_height_px as u32,
        m.grid_rows as u32,
        m.grid_cols as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in [m.distance_mm, m.pitch_mm, m.pixel_pitch_um] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(m.n_avg as u32).to_le_bytes())?;
    w.write_all(&(m.mask_rects.len() as u32).to_le_bytes())?;
    for r in &m.mask_rects {
        for v in [r.x0, r.y0, r.width, r.height] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    // column-major payload; nalgebra stores column-major, so this is a walk
    for v in a.data.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// The exact on-disk bytes of a calibration matrix.
pub fn lcal1_bytes(a: &CalibrationMatrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + a.data.len() * 8);
    write_lcal1(&mut buf, a).expect("vec write");
    buf
}

pub fn save_calibration(path: &Path, a: &CalibrationMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_lcal1(&mut w, a)?;
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated { expected: n, got: self.bytes.len() - self.pos });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_calibration(path: &Path) -> Result<CalibrationMatrix> {
    let bytes = std::fs::read(path)?;
    parse_lcal1(&bytes)
}

pub fn parse_lcal1(bytes: &[u8]) -> Result<CalibrationMatrix> {
    if bytes.len() < 6 || &bytes[0..5] != LCAL1_MAGIC {
        return Err(Error::BadMagic { expected: "LCAL1" });
    }
    if bytes[5] != LCAL1_VERSION {
        return Err(Error::BadVersion(bytes[5]));
    }
    let mut c = Cursor { bytes, pos: 6 };
    let n_pixels = c.u32()? as usize;
    let n_sources = c.u32()? as usize;
    let sensor_w = c.u32()? as usize;
    let sensor_h = c.u32()? as usize;
    let grid_rows = c.u32()? as usize;
    let grid_cols = c.u32()? as usize;
    let distance_mm = c.f64()?;
    let pitch_mm = c.f64()?;
    let pixel_pitch_um = c.f64()?;
    let n_avg = c.u32()? as usize;
    let n_rects = c.u32()? as usize;
    let mut mask_rects = Vec::with_capacity(n_rects);
    for _ in 0..n_rects {
        mask_rects.push(MaskRect {
            x0: c.u32()?,
            y0: c.u32()?,
            width: c.u32()?,
            height: c.u32()?,
        });
    }

    let expected_pixels = if mask_rects.is_empty() {
        sensor_w * sensor_h
    } else {
        let mask = PixelMask { rects: mask_rects.clone() };
        mask.kept_indices(sensor_w, sensor_h)?.len()
    };
    if n_pixels != expected_pixels {
        return Err(Error::MalformedFile {
            format: "LCAL1",
            reason: format!(
                "header says {n_pixels} pixels, sensor and mask imply {expected_pixels}"
            ),
        });
    }
    if grid_rows * grid_cols != n_sources {
        return Err(Error::MalformedFile {
            format: "LCAL1",
            reason: format!("{grid_rows}x{grid_cols} grid vs {n_sources} sources"),
        });
    }

    let expected = n_pixels * n_sources * 8;
    let got = bytes.len() - c.pos;
    if got != expected {
        return Err(Error::Truncated { expected, got });
    }
    let mut data = DMatrix::zeros(n_pixels, n_sources);
    for v in data.as_mut_slice().iter_mut() {
        *v = c.f64()?;
    }
    if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::MalformedFile {
            format: "LCAL1",
            reason: "payload must be finite and nonnegative".into(),
        });
    }
    Ok(CalibrationMatrix {
        data,
        meta: CalibrationMeta {
            distance_mm,
            grid_rows,
            grid_cols,
            pitch_mm,
            sensor_width_px: sensor_w,
            sensor_height_px: sensor_h,
            pixel_pitch_um,
            n_avg,
            mask_rects,
            created_from: CreatedFrom::External,
        },
    })
}

/// SHA-256 of the LCAL1 serialization; ties reconstructors to the exact
/// calibration bytes they came from.
pub fn calibration_hash(a: &CalibrationMatrix) -> [u8; 32] {
    let mut hasher = Sha256::new();
    struct HashWriter<'a>(&'a mut Sha256);
    impl Write for HashWriter<'_> {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.update(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    write_lcal1(&mut HashWriter(&mut hasher), a).expect("hash write");
    hasher.finalize().into()
}

// ------------------------------------------------------------------ LREC1

const LREC1_MAGIC: &[u8; 5] = b"LREC1";
const LREC1_VERSION: u8 = 1;

pub fn write_lrec1<W: Write>(w: &mut W, rec: &Reconstructor) -> Result<()> {
    w.write_all(LREC1_MAGIC)?;
    w.write_all(&[LREC1_VERSION])?;
    w.write_all(&(rec.n_sources() as u32).to_le_bytes())?;
    w.write_all(&(rec.n_pixels() as u32).to_le_bytes())?;
    w.write_all(&rec.alpha.to_le_bytes())?;
    w.write_all(&rec.meta.calibration_hash)?;
    for v in rec.m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_reconstructor(path: &Path, rec: &Reconstructor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_lrec1(&mut w, rec)?;
    w.flush()?;
    Ok(())
}

pub fn load_reconstructor(path: &Path) -> Result<Reconstructor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 6 || &bytes[0..5] != LREC1_MAGIC {
        return Err(Error::BadMagic { expected: "LREC1" });
    }
    if bytes[5] != LREC1_VERSION {
        return Err(Error::BadVersion(bytes[5]));
    }
    let mut c = Cursor { bytes: &bytes, pos: 6 };
    let n_sources = c.u32()? as usize;
    let n_pixels = c.u32()? as usize;
    let alpha = c.f64()?;
    let mut calibration_hash = [0u8; 32];
    calibration_hash.copy_from_slice(c.take(32)?);
    let expected = n_sources * n_pixels * 8;
    let got = bytes.len() - c.pos;
    if got != expected {
        return Err(Error::Truncated { expected, got });
    }
    let mut m = DMatrix::zeros(n_sources, n_pixels);
    for v in m.as_mut_slice().iter_mut() {
        *v = c.f64()?;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::MalformedFile {
            format: "LREC1",
            reason: "payload must be finite".into(),
        });
    }
    Ok(Reconstructor {
        m,
        alpha,
        meta: ReconstructorMeta { calibration_hash, distance_mm: None },
    })
}

/// Human-readable header summary of an LCAL1 or LREC1 file, without
/// validating the payload.
pub fn describe(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut head = vec![0u8; 256];
    let n = f.read(&mut head)?;
    head.truncate(n);
    let total = f.metadata()?.len();
    if head.len() >= 6 && &head[0..5] == LCAL1_MAGIC {
        let mut c = Cursor { bytes: &head, pos: 6 };
        let n_pixels = c.u32()?;
        let n_sources = c.u32()?;
        let sensor_w = c.u32()?;
        let sensor_h = c.u32()?;
        let grid_rows = c.u32()?;
        let grid_cols = c.u32()?;
        let distance = c.f64()?;
        let pitch = c.f64()?;
        let px_pitch = c.f64()?;
        let n_avg = c.u32()?;
        let n_rects = c.u32()?;
        return Ok(format!(
            "LCAL1 v{} calibration matrix\n  {} pixels x {} sources\n  sensor {}x{} px, pixel pitch {} um\n  grid {}x{}, pitch {} mm, distance {} mm\n  {} frames averaged, {} mask rect(s)\n  file size {} bytes",
            head[5], n_pixels, n_sources, sensor_w, sensor_h, px_pitch, grid_rows, grid_cols,
            pitch, distance, n_avg, n_rects, total
        ));
    }
    if head.len() >= 6 && &head[0..5] == LREC1_MAGIC {
        let mut c = Cursor { bytes: &head, pos: 6 };
        let n_sources = c.u32()?;
        let n_pixels = c.u32()?;
        let alpha = c.f64()?;
        let hash = c.take(32)?;
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        return Ok(format!(
            "LREC1 v{} reconstructor\n  {} sources x {} pixels\n  alpha {}\n  calibration hash {}\n  file size {} bytes",
            head[5], n_sources, n_pixels, alpha, hex, total
        ));
    }
    Err(Error::BadMagic { expected: "LCAL1 or LREC1" })
}

// -------------------------------------------------------------------- CSV

/// Plain CSV: one header row, then numeric rows.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
