//! Analysis of calibration matrices and reconstructions: singular-value
//! decay, Pearson correlation maps along source lines, binary thresholding,
//! and quality scoring.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationMatrix;
use crate::scene::SceneVector;
use crate::solver::SvdFactors;
use crate::{Error, Result};

/// Normalized singular spectrum `(i, S_i / S_0)`; descending, starts at 1.
pub fn singular_decay(f: &SvdFactors) -> Vec<(usize, f64)> {
    let s0 = f.s[0];
    f.s.iter().enumerate().map(|(i, s)| (i, s / s0)).collect()
}

/// Pearson correlation coefficient of two equal-length vectors.
///
/// Constant input has no defined correlation and is reported as an error
/// rather than silently mapped to 0.
pub fn pearson(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
            context: "pearson inputs",
        });
    }
    if u.len() < 2 {
        return Err(Error::InvalidConfig("pearson needs at least two samples".into()));
    }
    let n = u.len() as f64;
    let mu = u.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_u = 0.0;
    let mut var_v = 0.0;
    for (a, b) in u.iter().zip(v.iter()) {
        let du = a - mu;
        let dv = b - mv;
        cov += du * dv;
        var_u += du * du;
        var_v += dv * dv;
    }
    if var_u == 0.0 || var_v == 0.0 {
        return Err(Error::ConstantInput);
    }
    Ok((cov / (var_u.sqrt() * var_v.sqrt())).clamp(-1.0, 1.0))
}

/// A line of sources through the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineKind {
    Horizontal,
    Vertical,
    Diagonal,
}

/// Pairwise Pearson coefficients between calibration columns along a line.
#[derive(Debug, Clone)]
pub struct CorrelationMap {
    pub line: LineKind,
    /// Source indices along the line, in order.
    pub indices: Vec<usize>,
    /// Symmetric with unit diagonal, entries in [-1, 1].
    pub values: DMatrix<f64>,
}

impl CorrelationMap {
    /// Mean of the strictly off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.values.nrows();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    sum += self.values[(i, j)];
                }
            }
        }
        sum / (n * (n - 1)) as f64
    }

    /// Largest strictly off-diagonal entry.
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.values.nrows();
        let mut best = -1.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    best = best.max(self.values[(i, j)]);
                }
            }
        }
        best
    }
}

/// Source indices of a line through the grid.
///
/// `position` is the row for a horizontal line, the column for a vertical
/// line, and the starting column (on row 0) for a down-right diagonal;
/// position 0 gives the main diagonal.
pub fn line_indices(
    rows: usize,
    cols: usize,
    line: LineKind,
    position: usize,
) -> Result<Vec<usize>> {
    let idx = match line {
        LineKind::Horizontal => {
            if position >= rows {
                return Err(Error::OutOfBounds { what: "row", got: position, limit: rows });
            }
            (0..cols).map(|c| position * cols + c).collect::<Vec<_>>()
        }
        LineKind::Vertical => {
            if position >= cols {
                return Err(Error::OutOfBounds { what: "col", got: position, limit: cols });
            }
            (0..rows).map(|r| r * cols + position).collect::<Vec<_>>()
        }
        LineKind::Diagonal => {
            if position >= cols {
                return Err(Error::OutOfBounds { what: "diag start", got: position, limit: cols });
            }
            (0..rows.min(cols - position)).map(|k| k * cols + position + k).collect::<Vec<_>>()
        }
    };
    if idx.len() < 2 {
        return Err(Error::InvalidConfig("line must cover at least two sources".into()));
    }
    Ok(idx)
}

/// Correlation map of the calibration columns along a grid line.
pub fn correlation_map(
    a: &CalibrationMatrix,
    line: LineKind,
    position: usize,
) -> Result<CorrelationMap> {
    let indices = line_indices(a.meta.grid_rows, a.meta.grid_cols, line, position)?;
    let n = indices.len();
    let cols: Vec<Vec<f64>> = indices
        .iter()
        .map(|&j| a.data.column(j).iter().cloned().collect())
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for i in 0..n {
        values[(i, i)] = 1.0;
        for j in i + 1..n {
            let r = pearson(&cols[i], &cols[j])?;
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    Ok(CorrelationMap { line, indices, values })
}

/// Binarization methods for reconstructed scenes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMethod {
    /// Maximize inter-class variance over a 256-bin histogram.
    Otsu,
    /// Light when the value exceeds `t * max(values)`.
    Fixed(f64),
}

/// Clamp negatives to zero, then binarize.
pub fn threshold(values: &[f64], method: ThresholdMethod) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("threshold input"));
    }
    let clamped: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let max = clamped.iter().cloned().fold(0.0, f64::max);
    match method {
        ThresholdMethod::Fixed(t) => {
            let cut = t * max;
            Ok(clamped.iter().map(|v| if *v > cut { 1.0 } else { 0.0 }).collect())
        }
        ThresholdMethod::Otsu => {
            let min = clamped.iter().cloned().fold(f64::INFINITY, f64::min);
            if max == min {
                return Err(Error::DegenerateHistogram);
            }
            const BINS: usize = 256;
            let bin_of = |v: f64| (((v / max) * BINS as f64) as usize).min(BINS - 1);
            let mut hist = [0usize; BINS];
            for v in &clamped {
                hist[bin_of(*v)] += 1;
            }
            let total = clamped.len() as f64;
            let total_mean: f64 = hist
                .iter()
                .enumerate()
                .map(|(i, c)| i as f64 * *c as f64)
                .sum::<f64>()
                / total;
            let mut best_k = 0;
            let mut best_var = -1.0;
            let mut w0 = 0.0;
            let mut sum0 = 0.0;
            for k in 0..BINS - 1 {
                w0 += hist[k] as f64;
                sum0 += k as f64 * hist[k] as f64;
                if w0 == 0.0 || w0 == total {
                    continue;
                }
                let w1 = total - w0;
                let mu0 = sum0 / w0;
                let mu1 = (total_mean * total - sum0) / w1;
                let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
                if var > best_var {
                    best_var = var;
                    best_k = k;
                }
            }
            Ok(clamped
                .iter()
                .map(|v| if bin_of(*v) > best_k { 1.0 } else { 0.0 })
                .collect())
        }
    }
}

/// Reconstruction quality against a known binary scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// PSNR of the raw solution against the binary truth, peak fixed at 1.0;
    /// +inf sentinel (serialized as the string "+inf") on an exact match.
    #[serde(
        serialize_with = "serialize_psnr",
        deserialize_with = "deserialize_psnr"
    )]
    pub psnr_db: f64,
    /// Fraction of sources classified correctly after Otsu thresholding.
    pub pixel_accuracy: f64,
    /// ||A x_hat - b|| / ||b||; 0 when b = 0.
    pub residual_rel: f64,
}

fn serialize_psnr<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("+inf")
    }
}

fn deserialize_psnr<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    use serde::de::Error as _;
    let raw = serde_json::Value::deserialize(d)?;
    match raw {
        serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| D::Error::custom("bad psnr")),
        serde_json::Value::String(s) if s == "+inf" => Ok(f64::INFINITY),
        other => Err(D::Error::custom(format!("bad psnr value {other}"))),
    }
}

/// PSNR with peak 1.0, +inf when the inputs match exactly.
pub fn psnr(x_hat: &[f64], truth: &[f64]) -> f64 {
    let mse: f64 =
        x_hat.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x_hat.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Score a raw reconstruction against ground truth and the measurement it
/// came from.
///
/// Accuracy uses Otsu binarization; a degenerate (all-equal) solution counts
/// as all-dark rather than failing the score.
pub fn score(
    x_hat: &[f64],
    truth: &SceneVector,
    a: &CalibrationMatrix,
    b: &[f64],
) -> Result<QualityReport> {
    if x_hat.len() != truth.values.len() {
        return Err(Error::GridMismatch {
            scene_rows: truth.grid.rows,
            scene_cols: truth.grid.cols,
            cfg_rows: x_hat.len() / truth.grid.cols.max(1),
            cfg_cols: truth.grid.cols,
        });
    }
    if b.len() != a.n_pixels() || x_hat.len() != a.n_sources() {
        return Err(Error::DimensionMismatch {
            expected: a.n_pixels(),
            got: b.len(),
            context: "score measurement vs calibration",
        });
    }
    let binary = match threshold(x_hat, ThresholdMethod::Otsu) {
        Ok(bin) => bin,
        Err(Error::DegenerateHistogram) => vec![0.0; x_hat.len()],
        Err(e) => return Err(e),
    };
    let hits = binary.iter().zip(&truth.values).filter(|(g, t)| g == t).count();
    let bv = nalgebra::DVector::from_column_slice(b);
    let b_norm = bv.norm();
    let residual_rel = if b_norm == 0.0 {
        0.0
    } else {
        (&a.data * nalgebra::DVector::from_column_slice(x_hat) - bv).norm() / b_norm
    };
    Ok(QualityReport {
        psnr_db: psnr(x_hat, &truth.values),
        pixel_accuracy: hits as f64 / x_hat.len() as f64,
        residual_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::svd;
    use nalgebra::DVector;
    use rand::RngExt;

    #[test]
    fn decay_of_simple_spectra() {
        let f = svd(&DMatrix::identity(4, 4)).unwrap();
        let d = singular_decay(&f);
        assert!(d.iter().all(|(_, v)| *v == 1.0));

        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 2.0, 1.0]));
        let d = singular_decay(&svd(&m).unwrap());
        let vals: Vec<f64> = d.iter().map(|(_, v)| *v).collect();
        assert_eq!(vals, vec![1.0, 0.5, 0.25]);
        assert_eq!(d[0].1, 1.0);
        for w in d.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn pearson_reference_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::ConstantInput)));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn line_selection() {
        assert_eq!(line_indices(4, 4, LineKind::Horizontal, 1).unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(line_indices(4, 4, LineKind::Vertical, 2).unwrap(), vec![2, 6, 10, 14]);
        assert_eq!(line_indices(4, 4, LineKind::Diagonal, 0).unwrap(), vec![0, 5, 10, 15]);
        assert_eq!(line_indices(4, 4, LineKind::Diagonal, 1).unwrap(), vec![1, 6, 11]);
        assert!(line_indices(4, 4, LineKind::Horizontal, 4).is_err());
        assert!(line_indices(4, 4, LineKind::Diagonal, 3).is_err());
    }

    #[test]
    fn threshold_fixed_cases() {
        let b = threshold(&[0.0, 0.0, 1.0, 1.0], ThresholdMethod::Fixed(0.5)).unwrap();
        assert_eq!(b, vec![0.0, 0.0, 1.0, 1.0]);
        let b = threshold(&[-3.0, -0.1, -7.0], ThresholdMethod::Fixed(0.5)).unwrap();
        assert_eq!(b, vec![0.0, 0.0, 0.0]);
        // invariant to positive scaling
        let x = [0.1, 0.9, 0.4, 0.05];
        let a = threshold(&x, ThresholdMethod::Fixed(0.5)).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| v * 37.0).collect();
        assert_eq!(a, threshold(&scaled, ThresholdMethod::Fixed(0.5)).unwrap());
    }

    #[test]
    fn otsu_separates_bimodal_values() {
        let mut rng = crate::rng::stream_rng(17, 0);
        let mut values = Vec::new();
        let mut truth = Vec::new();
        for i in 0..200 {
            let lit = i % 3 == 0;
            let center = if lit { 0.9 } else { 0.1 };
            values.push(center + 0.04 * (rng.random::<f64>() - 0.5));
            truth.push(if lit { 1.0 } else { 0.0 });
        }
        let bin = threshold(&values, ThresholdMethod::Otsu).unwrap();
        assert_eq!(bin, truth);

        // the implied split sits between the modes: every value below 0.2 is
        // dark and every value above 0.8 is lit
        for (v, b) in values.iter().zip(&bin) {
            if *v < 0.2 {
                assert_eq!(*b, 0.0);
            }
            if *v > 0.8 {
                assert_eq!(*b, 1.0);
            }
        }

        // independent check: a brute-force scan over candidate cuts can do no
        // better than the histogram argmax
        let max = values.iter().cloned().fold(0.0, f64::max);
        let class_var = |cut: f64| {
            let (mut n0, mut n1, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for v in &values {
                if *v <= cut {
                    n0 += 1.0;
                    s0 += v;
                } else {
                    n1 += 1.0;
                    s1 += v;
                }
            }
            if n0 == 0.0 || n1 == 0.0 {
                return -1.0;
            }
            n0 * n1 * (s0 / n0 - s1 / n1).powi(2)
        };
        let otsu_cut_var = (0..256)
            .map(|k| class_var((k as f64 + 1.0) / 256.0 * max))
            .fold(-1.0, f64::max);
        let chosen_var = class_var(0.5 * max); // the gap region: same split as otsu
        assert!((chosen_var - otsu_cut_var).abs() / otsu_cut_var < 1e-12);

        assert!(matches!(
            threshold(&[0.3; 10], ThresholdMethod::Otsu),
            Err(Error::DegenerateHistogram)
        ));
        // scaling invariance
        let scaled: Vec<f64> = values.iter().map(|v| v * 1234.5).collect();
        assert_eq!(bin, threshold(&scaled, ThresholdMethod::Otsu).unwrap());
    }

    #[test]
    fn psnr_reference_values() {
        let truth = vec![1.0, 0.0, 1.0, 0.0];
        assert_eq!(psnr(&truth, &truth), f64::INFINITY);
        let off: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&off, &truth) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn quality_report_json_round_trips_the_infinity_sentinel() {
        let q = QualityReport { psnr_db: f64::INFINITY, pixel_accuracy: 1.0, residual_rel: 0.0 };
        let s = serde_json::to_string(&q).unwrap();
        assert!(s.contains("\"+inf\""));
        let back: QualityReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.psnr_db, f64::INFINITY);

        let q = QualityReport { psnr_db: 20.0, pixel_accuracy: 0.5, residual_rel: 0.1 };
        let back: QualityReport = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
    }
}
