//! Small dense linear-algebra and distribution helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Builds an `n x k` design matrix from column slices, optionally prefixed with
/// a column of ones.
pub fn design_matrix(columns: &[&[f64]], n: usize, intercept: bool) -> DMatrix<f64> {
    let offset = usize::from(intercept);
    DMatrix::from_fn(n, columns.len() + offset, |i, j| {
        if intercept && j == 0 {
            1.0
        } else {
            columns[j - offset][i]
        }
    })
}

/// Names of the columns that are (numerically) linear combinations of the
/// columns before them. Empty when the matrix has full column rank.
pub fn collinear_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut flagged = Vec::new();
    for j in 0..x.ncols() {
        let original = x.column(j).into_owned();
        let norm = original.norm();
        let mut v = original;
        // two passes of modified Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let rest = v.norm();
        if norm == 0.0 || rest <= 1e-9 * norm {
            flagged.push(names.get(j).cloned().unwrap_or_else(|| format!("#{j}")));
        } else {
            basis.push(v / rest);
        }
    }
    flagged
}

pub fn ensure_full_rank(x: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let bad = collinear_columns(x, names);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient(bad))
    }
}

/// Inverse of a symmetric positive definite matrix; falls back to LU for
/// matrices that are only numerically close to SPD.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok(ch.inverse());
    }
    sym.try_inverse()
        .map(|inv| symmetrize(&inv))
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with denominator `n - 1`; `None` for `n < 2`.
pub fn sample_sd(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (v.len() - 1) as f64).sqrt())
}

/// Type-7 (linear interpolation) quantile of already sorted data.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `ln Φ(x)` and the inverse Mills ratio `φ(x)/Φ(x)`, stable far into the
/// lower tail.
pub fn ln_cdf_and_mills(x: f64) -> (f64, f64) {
    if x > -30.0 {
        let cdf = norm_cdf(x);
        (cdf.ln(), norm_pdf(x) / cdf)
    } else {
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2;
        let ln_pdf = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
        (ln_pdf - (-x).ln() + series.ln(), -x / series)
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
