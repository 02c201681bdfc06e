//! SVD-based Tikhonov inversion.
//!
//! Everything downstream of calibration reduces to the thin SVD
//! `A = U diag(S) V^T`. The regularized solution of `min ||Ax - b||^2 +
//! alpha^2 ||x||^2` applies the filter factors `S_i^2 / (S_i^2 + alpha^2)`
//! to the spectral coefficients; precomputing the filtered pseudoinverse as a
//! single matrix turns per-frame inversion into one matrix-vector product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Singular values below `RANK_CUTOFF * S[0]` are dropped; keeps `1/S_i`
/// bounded when alpha = 0.
pub const RANK_CUTOFF: f64 = 1e-12;

/// Number of points in the logarithmic alpha grid used by the L-curve and
/// discrepancy strategies.
pub const ALPHA_GRID_POINTS: usize = 40;

/// Thin SVD of a calibration matrix, rank-truncated and sign-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// n_pixels x r, orthonormal columns.
    pub u: DMatrix<f64>,
    /// r singular values, strictly descending, all >= RANK_CUTOFF * s[0].
    pub s: DVector<f64>,
    /// n_sources x r, orthonormal columns.
    pub v: DMatrix<f64>,
    /// Retained numerical rank.
    pub r: usize,
}

impl SvdFactors {
    pub fn n_pixels(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.v.nrows()
    }
}

/// Thin SVD with descending singular values.
///
/// Signs are fixed so the largest-magnitude entry of every `V` column is
/// positive, which makes repeated runs on identical input bit-identical.
pub fn svd(a: &DMatrix<f64>) -> Result<SvdFactors> {
    if a.is_empty() {
        return Err(Error::InvalidConfig("cannot decompose an empty matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entries"));
    }
    let svd = a.clone().svd(true, true);
    let u_full = svd.u.expect("u requested");
    let vt_full = svd.v_t.expect("v_t requested");
    let s_full = svd.singular_values;

    let mut order: Vec<usize> = (0..s_full.len()).collect();
    order.sort_by(|&i, &j| s_full[j].partial_cmp(&s_full[i]).unwrap());
    let s0 = s_full[order[0]];
    if !(s0 > 0.0) {
        return Err(Error::InvalidConfig("matrix has no nonzero singular values".into()));
    }
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| s_full[i] >= RANK_CUTOFF * s0)
        .collect();

    let (m, n) = (a.nrows(), a.ncols());
    let r = keep.len();
    let mut u = DMatrix::zeros(m, r);
    let mut v = DMatrix::zeros(n, r);
    let mut s = DVector::zeros(r);
    for (col, &i) in keep.iter().enumerate() {
        s[col] = s_full[i];
        let mut sign = 1.0;
        let mut best = 0.0;
        for row in 0..n {
            let val = vt_full[(i, row)];
            if val.abs() > best {
                best = val.abs();
                sign = if val < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for row in 0..m {
            u[(row, col)] = sign * u_full[(row, i)];
        }
        for row in 0..n {
            v[(row, col)] = sign * vt_full[(i, row)];
        }
    }
    Ok(SvdFactors { u, s, v, r })
}

/// Ratio of largest to smallest retained singular value.
pub fn condition_number(f: &SvdFactors) -> f64 {
    f.s[0] / f.s[f.r - 1]
}

/// Per-mode attenuation `S_i^2 / (S_i^2 + alpha^2)`, in (0, 1].
pub fn filter_factors(s: &DVector<f64>, alpha: f64) -> Vec<f64> {
    s.iter().map(|si| si * si / (si * si + alpha * alpha)).collect()
}

fn check_measurement(f: &SvdFactors, b: &[f64]) -> Result<()> {
    if b.len() != f.n_pixels() {
        return Err(Error::DimensionMismatch {
            expected: f.n_pixels(),
            got: b.len(),
            context: "measurement vs calibration pixels",
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement vector"));
    }
    Ok(())
}

/// Regularized solution `x = sum_i S_i / (S_i^2 + alpha^2) (u_i . b) v_i`.
///
/// This is the unique minimizer of `||Ax - b||^2 + alpha^2 ||x||^2` on the
/// retained subspace. alpha = 0 gives the rank-truncated pseudoinverse. The
/// raw solution is returned unclamped; nonnegativity belongs to the display
/// and thresholding stage.
pub fn tikhonov_solve(f: &SvdFactors, b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_measurement(f, b)?;
    let bv = DVector::from_column_slice(b);
    let mut coef = f.u.transpose() * bv;
    for i in 0..f.r {
        let si = f.s[i];
        coef[i] *= si / (si * si + alpha * alpha);
    }
    Ok((&f.v * coef).data.into())
}

/// Residual and solution norms along the retained spectrum, without forming
/// the solution: used by the selection strategies and refocusing.
fn norms_at(f: &SvdFactors, coef: &DVector<f64>, perp_sq: f64, alpha: f64) -> (f64, f64) {
    let mut res_sq = perp_sq;
    let mut sol_sq = 0.0;
    for i in 0..f.r {
        let si = f.s[i];
        let denom = si * si + alpha * alpha;
        let filt = si * si / denom;
        res_sq += ((1.0 - filt) * coef[i]).powi(2);
        sol_sq += (si * coef[i] / denom).powi(2);
    }
    (res_sq.max(0.0).sqrt(), sol_sq.max(0.0).sqrt())
}

fn spectral_split(f: &SvdFactors, b: &[f64]) -> (DVector<f64>, f64) {
    let bv = DVector::from_column_slice(b);
    let coef = f.u.transpose() * &bv;
    let perp_sq = (bv.norm_squared() - coef.norm_squared()).max(0.0);
    (coef, perp_sq)
}

/// Relative residual `||A x_hat - b|| / ||b||` of the regularized solution;
/// defined as 0 for b = 0.
pub fn relative_residual(f: &SvdFactors, b: &[f64], alpha: f64) -> Result<f64> {
    check_measurement(f, b)?;
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok(0.0);
    }
    let (coef, perp_sq) = spectral_split(f, b);
    let (res, _) = norms_at(f, &coef, perp_sq, alpha);
    Ok(res / b_norm)
}

/// Precomputed regularized pseudoinverse `M = V diag(S_i / (S_i^2 + alpha^2)) U^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstructor {
    /// n_sources x n_pixels.
    pub m: DMatrix<f64>,
    pub alpha: f64,
    pub meta: ReconstructorMeta,
}

/// Provenance of a reconstructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructorMeta {
    /// SHA-256 of the source calibration file bytes; zeros when unknown.
    pub calibration_hash: [u8; 32],
    /// Object distance of the source calibration, when known.
    pub distance_mm: Option<f64>,
}

impl Reconstructor {
    pub fn n_sources(&self) -> usize {
        self.m.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.m.ncols()
    }
}

/// Collapse the factors into a single inversion matrix.
pub fn build_reconstructor(f: &SvdFactors, alpha: f64, meta: ReconstructorMeta) -> Reconstructor {
    let mut scaled_v = f.v.clone();
    for i in 0..f.r {
        let si = f.s[i];
        let w = si / (si * si + alpha * alpha);
        for row in 0..scaled_v.nrows() {
            scaled_v[(row, i)] *= w;
        }
    }
    Reconstructor { m: scaled_v * f.u.transpose(), alpha, meta }
}

/// Fast per-frame inversion: one matrix-vector product, no decomposition work.
pub fn reconstruct(rec: &Reconstructor, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != rec.n_pixels() {
        return Err(Error::DimensionMismatch {
            expected: rec.n_pixels(),
            got: b.len(),
            context: "measurement vs reconstructor pixels",
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement vector"));
    }
    Ok((&rec.m * DVector::from_column_slice(b)).data.into())
}

/// Regularization-parameter selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlphaStrategy {
    /// `alpha = c * S[0]`; scale-invariant under global exposure changes.
    FixedFraction(f64),
    /// Corner of the (log residual, log solution norm) curve over a 40-point
    /// logarithmic grid; falls back to the smallest grid alpha when the curve
    /// has no corner (max signed curvature <= 0).
    LCurve,
    /// Grid alpha whose residual norm is nearest the given noise norm.
    Discrepancy(f64),
}

impl Default for AlphaStrategy {
    fn default() -> Self {
        AlphaStrategy::FixedFraction(0.01)
    }
}

/// The logarithmic alpha grid `[1e-6 * S0, S0]`.
pub fn alpha_grid(s0: f64) -> Vec<f64> {
    let lo = (1e-6 * s0).ln();
    let hi = s0.ln();
    (0..ALPHA_GRID_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (ALPHA_GRID_POINTS - 1) as f64).exp())
        .collect()
}

/// Pick a regularization parameter for the given measurement.
pub fn select_alpha(f: &SvdFactors, b: &[f64], strategy: AlphaStrategy) -> Result<f64> {
    match strategy {
        AlphaStrategy::FixedFraction(c) => {
            if !(c >= 0.0) {
                return Err(Error::UnknownStrategy(format!("fixed-fraction({c})")));
            }
            Ok(c * f.s[0])
        }
        AlphaStrategy::LCurve => {
            check_measurement(f, b)?;
            let grid = alpha_grid(f.s[0]);
            if grid.is_empty() {
                return Err(Error::EmptyGrid);
            }
            let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if b_norm == 0.0 {
                return Ok(grid[0]);
            }
            let (coef, perp_sq) = spectral_split(f, b);
            let floor = 1e-14 * b_norm;
            let pts: Vec<(f64, f64)> = grid
                .iter()
                .map(|&a| {
                    let (res, sol) = norms_at(f, &coef, perp_sq, a);
                    (res.max(floor).ln(), sol.max(floor).ln())
                })
                .collect();
            // signed curvature of the parametric curve over the uniform
            // log-alpha grid; genuine L-corners come out positive
            let dt = (grid[1] / grid[0]).ln();
            let mut best = (grid[0], 0.0);
            for i in 1..pts.len() - 1 {
                let dxi = (pts[i + 1].0 - pts[i - 1].0) / (2.0 * dt);
                let deta = (pts[i + 1].1 - pts[i - 1].1) / (2.0 * dt);
                let ddxi = (pts[i + 1].0 - 2.0 * pts[i].0 + pts[i - 1].0) / (dt * dt);
                let ddeta = (pts[i + 1].1 - 2.0 * pts[i].1 + pts[i - 1].1) / (dt * dt);
                let denom = (dxi * dxi + deta * deta).powf(1.5);
                if denom == 0.0 {
                    continue;
                }
                let kappa = (dxi * ddeta - deta * ddxi) / denom;
                if kappa > best.1 {
                    best = (grid[i], kappa);
                }
            }
            Ok(best.0)
        }
        AlphaStrategy::Discrepancy(noise_norm) => {
            check_measurement(f, b)?;
            if !(noise_norm >= 0.0) {
                return Err(Error::UnknownStrategy(format!("discrepancy({noise_norm})")));
            }
            let grid = alpha_grid(f.s[0]);
            if grid.is_empty() {
                return Err(Error::EmptyGrid);
            }
            let (coef, perp_sq) = spectral_split(f, b);
            let mut best = (grid[0], f64::INFINITY);
            for &a in &grid {
                let (res, _) = norms_at(f, &coef, perp_sq, a);
                let gap = (res - noise_norm).abs();
                if gap < best.1 {
                    best = (a, gap);
                }
            }
            Ok(best.0)
        }
    }
}

/// One calibration distance, already decomposed.
pub struct DistanceEntry {
    pub distance_mm: f64,
    pub factors: SvdFactors,
}

/// Outcome of a refocus search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefocusResult {
    pub best_distance_mm: f64,
    #[serde(skip)]
    pub solution: Vec<f64>,
    /// (distance, relative residual), in stack order.
    pub residuals: Vec<(f64, f64)>,
}

/// Solve against every distance in the stack and keep the distance whose
/// relative residual `||A_k x_k - b|| / ||b||` is smallest.
///
/// Ties (including the all-zero measurement, where every residual is 0) are
/// broken toward the smallest distance.
pub fn refocus(stack: &[DistanceEntry], b: &[f64], strategy: AlphaStrategy) -> Result<RefocusResult> {
    if stack.is_empty() {
        return Err(Error::EmptyStack);
    }
    let mut residuals = Vec::with_capacity(stack.len());
    let mut best: Option<(f64, f64, f64)> = None; // (residual, distance, alpha)
    for entry in stack {
        let alpha = select_alpha(&entry.factors, b, strategy)?;
        let res = relative_residual(&entry.factors, b, alpha)?;
        residuals.push((entry.distance_mm, res));
        let better = match best {
            None => true,
            Some((r, d, _)) => res < r || (res == r && entry.distance_mm < d),
        };
        if better {
            best = Some((res, entry.distance_mm, alpha));
        }
    }
    let (_, best_distance, alpha) = best.unwrap();
    let entry = stack.iter().find(|e| e.distance_mm == best_distance).unwrap();
    let solution = tikhonov_solve(&entry.factors, b, alpha)?;
    Ok(RefocusResult { best_distance_mm: best_distance, solution, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::rng::stream_rng(seed, 1);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
    }

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::stream_rng(seed, 2);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// Independent route: dense normal equations (A^T A + alpha^2 I) x = A^T b.
    fn normal_equations_oracle(a: &DMatrix<f64>, b: &[f64], alpha: f64) -> Vec<f64> {
        let n = a.ncols();
        let ata = a.transpose() * a + DMatrix::identity(n, n) * (alpha * alpha);
        let atb = a.transpose() * DVector::from_column_slice(b);
        ata.cholesky().expect("spd").solve(&atb).data.into()
    }

    fn rel_err(got: &[f64], want: &[f64]) -> f64 {
        let num: f64 = got.iter().zip(want).map(|(g, w)| (g - w).powi(2)).sum::<f64>().sqrt();
        let den: f64 = want.iter().map(|w| w * w).sum::<f64>().sqrt();
        num / den.max(1e-300)
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let f = svd(&DMatrix::identity(2, 2)).unwrap();
        assert_eq!(f.s.as_slice(), &[1.0, 1.0]);
        assert_eq!(condition_number(&f), 1.0);

        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[3.0, 1.0]));
        let f = svd(&d).unwrap();
        assert_eq!(f.s.as_slice(), &[3.0, 1.0]);
        assert_eq!(condition_number(&f), 3.0);
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        let a = random_matrix(50, 20, 10);
        let f = svd(&a).unwrap();
        let rec = &f.u * DMatrix::from_diagonal(&f.s) * f.v.transpose();
        assert!((rec - &a).norm() / a.norm() <= 1e-10);

        let utu = f.u.transpose() * &f.u;
        let vtv = f.v.transpose() * &f.v;
        let id = DMatrix::identity(f.r, f.r);
        assert!((utu - &id).norm() <= 1e-10);
        assert!((vtv - &id).norm() <= 1e-10);
        for i in 1..f.r {
            assert!(f.s[i] <= f.s[i - 1]);
        }
    }

    #[test]
    fn svd_is_deterministic_and_rejects_bad_input() {
        let a = random_matrix(12, 7, 4);
        let f1 = svd(&a).unwrap();
        let f2 = svd(&a).unwrap();
        assert_eq!(f1, f2);

        let mut bad = a.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(svd(&bad), Err(Error::NonFinite(_))));
        assert!(svd(&DMatrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn tikhonov_identity_and_diagonal_cases() {
        let f = svd(&DMatrix::identity(3, 3)).unwrap();
        let b = [0.3, -1.2, 2.0];
        let x = tikhonov_solve(&f, &b, 0.0).unwrap();
        assert!(rel_err(&x, &b) < 1e-12);

        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 1.0]));
        let f = svd(&d).unwrap();
        let x = tikhonov_solve(&f, &[2.0, 1.0], 1.0).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14, "{x:?}");
    }

    #[test]
    fn tikhonov_matches_normal_equations() {
        for seed in 0..10 {
            let a = random_matrix(30, 12, 100 + seed);
            let b = random_vec(30, 200 + seed);
            let f = svd(&a).unwrap();
            for alpha in [0.01, 0.1, 1.0] {
                let got = tikhonov_solve(&f, &b, alpha).unwrap();
                let want = normal_equations_oracle(&a, &b, alpha);
                assert!(rel_err(&got, &want) <= 1e-8, "seed {seed} alpha {alpha}");
            }
        }
    }

    #[test]
    fn alpha_zero_equals_direct_solve_on_square_systems() {
        for seed in 0..5 {
            let a = random_matrix(8, 8, 300 + seed) + DMatrix::identity(8, 8) * 2.0;
            let b = random_vec(8, 400 + seed);
            let f = svd(&a).unwrap();
            let got = tikhonov_solve(&f, &b, 0.0).unwrap();
            let want: Vec<f64> =
                a.lu().solve(&DVector::from_column_slice(&b)).unwrap().data.into();
            assert!(rel_err(&got, &want) <= 1e-8);
        }
    }

    #[test]
    fn residual_grows_and_solution_shrinks_with_alpha() {
        for seed in 0..5 {
            let a = random_matrix(25, 10, 500 + seed);
            let b = random_vec(25, 600 + seed);
            let f = svd(&a).unwrap();
            let bv = DVector::from_column_slice(&b);
            let mut prev_res = -1.0;
            let mut prev_sol = f64::INFINITY;
            for &alpha in &alpha_grid(f.s[0]) {
                let x = tikhonov_solve(&f, &b, alpha).unwrap();
                let res = (&a * DVector::from_column_slice(&x) - &bv).norm();
                let sol = DVector::from_column_slice(&x).norm();
                assert!(res >= prev_res - 1e-12, "seed {seed}");
                assert!(sol <= prev_sol + 1e-12, "seed {seed}");
                prev_res = res;
                prev_sol = sol;
            }
        }
    }

    #[test]
    fn filter_factors_bounded_and_monotone() {
        let s = DVector::from_column_slice(&[4.0, 2.0, 1.0, 0.5]);
        let f = filter_factors(&s, 1.0);
        for w in &f {
            assert!(*w > 0.0 && *w <= 1.0);
        }
        for i in 1..f.len() {
            assert!(f[i] < f[i - 1]);
        }
        assert_eq!(filter_factors(&s, 0.0), vec![1.0; 4]);
    }

    #[test]
    fn reconstructor_equals_solver() {
        let a = random_matrix(40, 15, 700);
        let f = svd(&a).unwrap();
        let meta = ReconstructorMeta { calibration_hash: [0; 32], distance_mm: None };
        let rec = build_reconstructor(&f, 0.05, meta);
        for seed in 0..20 {
            let b = random_vec(40, 800 + seed);
            let fast = reconstruct(&rec, &b).unwrap();
            let slow = tikhonov_solve(&f, &b, 0.05).unwrap();
            assert!(rel_err(&fast, &slow) <= 1e-12);
        }
        assert!(reconstruct(&rec, &[0.0; 39]).is_err());
    }

    #[test]
    fn huge_alpha_suppresses_the_solution() {
        let a = random_matrix(20, 8, 900);
        let b = random_vec(20, 901);
        let f = svd(&a).unwrap();
        let x0 = DVector::from_column_slice(&tikhonov_solve(&f, &b, 0.0).unwrap()).norm();
        let x_inf =
            DVector::from_column_slice(&tikhonov_solve(&f, &b, 1e9 * f.s[0]).unwrap()).norm();
        assert!(x_inf <= 1e-6 * x0);
    }

    #[test]
    fn fixed_fraction_alpha() {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[5.0, 1.0]));
        let f = svd(&d).unwrap();
        let a = select_alpha(&f, &[1.0, 1.0], AlphaStrategy::FixedFraction(0.01)).unwrap();
        assert!((a - 0.05).abs() < 1e-15);
    }

    #[test]
    fn l_curve_on_clean_identity_needs_no_regularization() {
        let f = svd(&DMatrix::identity(6, 6)).unwrap();
        let b = random_vec(6, 42);
        let a = select_alpha(&f, &b, AlphaStrategy::LCurve).unwrap();
        // lowest grid decade of [1e-6, 1] is [1e-6, 1e-5]
        assert!(a <= 1e-5, "alpha {a}");
    }

    #[test]
    fn l_curve_finds_a_corner_on_an_ill_posed_system() {
        // strongly decaying spectrum plus noise: the corner is interior
        let n = 30;
        let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 0.5f64.powi(i as i32)));
        let f = svd(&d).unwrap();
        let mut rng = crate::rng::stream_rng(5, 3);
        let x_true: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut b: Vec<f64> = (&d * DVector::from_column_slice(&x_true)).data.into();
        for v in b.iter_mut() {
            *v += 1e-4 * (rng.random::<f64>() - 0.5);
        }
        let a = select_alpha(&f, &b, AlphaStrategy::LCurve).unwrap();
        let grid = alpha_grid(f.s[0]);
        assert!(a > grid[0] && a < grid[grid.len() - 1], "alpha {a}");
    }

    #[test]
    fn discrepancy_matches_bisection_oracle() {
        let a = random_matrix(20, 8, 1000);
        let f = svd(&a).unwrap();
        let x_true = random_vec(8, 1001);
        let mut rng = crate::rng::stream_rng(1002, 0);
        let clean: DVector<f64> = &a * DVector::from_column_slice(&x_true);
        let eta: Vec<f64> = (0..20).map(|_| 0.01 * (rng.random::<f64>() - 0.5)).collect();
        let noise_norm = eta.iter().map(|v| v * v).sum::<f64>().sqrt();
        let b: Vec<f64> = clean.iter().zip(&eta).map(|(c, e)| c + e).collect();

        // oracle: bisect the monotone residual curve for r(alpha) = noise_norm,
        // then snap to the grid
        let res_at = |alpha: f64| relative_residual(&f, &b, alpha).unwrap()
            * b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let grid = alpha_grid(f.s[0]);
        let (mut lo, mut hi) = (grid[0], grid[grid.len() - 1]);
        let alpha_star = if res_at(lo) >= noise_norm {
            lo
        } else if res_at(hi) <= noise_norm {
            hi
        } else {
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if res_at(mid) < noise_norm {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (lo * hi).sqrt()
        };
        let expected = grid
            .iter()
            .cloned()
            .min_by(|x, y| {
                let gx = (res_at(*x) - noise_norm).abs();
                let gy = (res_at(*y) - noise_norm).abs();
                gx.partial_cmp(&gy).unwrap()
            })
            .unwrap();
        let got = select_alpha(&f, &b, AlphaStrategy::Discrepancy(noise_norm)).unwrap();
        assert_eq!(got, expected);
        // and the winner is the grid neighbor of the bisected crossing
        let pos = grid.iter().position(|&g| g == got).unwrap();
        let near = grid
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| {
                ((*x - alpha_star).abs()).partial_cmp(&(*y - alpha_star).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .unwrap();
        assert!(pos.abs_diff(near) <= 1, "grid point {pos} vs crossing {near}");
    }

    #[test]
    fn refocus_prefers_the_generating_system() {
        let a1 = random_matrix(30, 8, 2000);
        let a2 = random_matrix(30, 8, 2001);
        let x = random_vec(8, 2002);
        let b: Vec<f64> = (&a2 * DVector::from_column_slice(&x)).data.into();
        let stack = vec![
            DistanceEntry { distance_mm: 100.0, factors: svd(&a1).unwrap() },
            DistanceEntry { distance_mm: 200.0, factors: svd(&a2).unwrap() },
        ];
        let out = refocus(&stack, &b, AlphaStrategy::FixedFraction(1e-6)).unwrap();
        assert_eq!(out.best_distance_mm, 200.0);
        assert!(out.residuals[1].1 < out.residuals[0].1);

        // single entry: returns that entry
        let single = refocus(&stack[..1], &b, AlphaStrategy::default()).unwrap();
        assert_eq!(single.best_distance_mm, 100.0);

        // zero measurement: all residuals 0, tie broken toward smallest distance
        let zero = vec![0.0; 30];
        let out = refocus(&stack, &zero, AlphaStrategy::default()).unwrap();
        assert_eq!(out.best_distance_mm, 100.0);
        assert!(out.residuals.iter().all(|(_, r)| *r == 0.0));

        assert!(refocus(&[], &b, AlphaStrategy::default()).is_err());
    }
}
