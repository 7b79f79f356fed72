//! Local-IV estimation of the marginal treatment effect.
//!
//! The outcome is modelled as partially linear in the propensity score,
//! `E[Y | X, P] = X b0 + P X (b1 - b0) + K(P)`, estimated by double
//! residuals: `Y`, `X` and `X P` are each smoothed on `P` by local linear
//! regression, the linear coefficients come from least squares on the
//! residuals, and `K` is the local linear fit of what remains. The MTE at
//! `(x, v)` is `x (b1 - b0) + K'(v)`, with `K'` read off the local slope.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{format_cell, Dataset};
use crate::error::{Error, Result};
use crate::kernel::{epanechnikov, geometric_grid, select_bandwidth, SortedSample};
use crate::linalg::{design_matrix, ensure_full_rank, mean, sorted_copy, sorted_quantile};
use crate::linear::least_squares;
use crate::selection::PropensityScores;

/// Default evaluation grid: 0.01, 0.02, ..., 0.99.
pub fn default_v_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Overlap of the treated and untreated score ranges after trimming `trim`
/// probability mass from each tail of each arm.
pub fn common_support(p_treated: &[f64], p_untreated: &[f64], trim: f64) -> Result<(f64, f64)> {
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::InvalidInput(format!(
            "trim fraction {trim} outside [0, 0.5)"
        )));
    }
    if p_treated.is_empty() || p_untreated.is_empty() {
        return Err(Error::NoCommonSupport);
    }
    let t = sorted_copy(p_treated);
    let u = sorted_copy(p_untreated);
    let lo = sorted_quantile(&t, trim).max(sorted_quantile(&u, trim));
    let hi = sorted_quantile(&t, 1.0 - trim).min(sorted_quantile(&u, 1.0 - trim));
    if lo >= hi {
        return Err(Error::NoCommonSupport);
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone)]
pub struct MteOptions {
    /// Fixed bandwidth for the residualization step; `None` selects it by
    /// leave-one-out cross-validation.
    pub bandwidth: Option<f64>,
    /// Bandwidth for the level of `K`; `None` uses `bandwidth` when fixed and
    /// cross-validation on the residualized outcome otherwise.
    pub k_bandwidth: Option<f64>,
    /// Bandwidth for the slope of `K`; `None` selects it with
    /// [`derivative_bandwidth`] over the cross-validation candidates.
    pub derivative_bandwidth: Option<f64>,
    pub trim: f64,
    pub v_grid: Vec<f64>,
    pub min_neighbors: usize,
    /// Candidates as fractions of the score range.
    pub cv_range: (f64, f64),
    pub cv_candidates: usize,
}

impl Default for MteOptions {
    fn default() -> Self {
        Self {
            bandwidth: None,
            k_bandwidth: None,
            derivative_bandwidth: None,
            trim: 0.01,
            v_grid: default_v_grid(),
            min_neighbors: 5,
            cv_range: (0.05, 0.5),
            cv_candidates: 10,
        }
    }
}

/// Bandwidth for the local linear slope of `y` on `p`, minimizing its
/// estimated mean squared error summed over `grid`.
///
/// A global quartic in `p` serves as pilot. At each grid point and candidate
/// bandwidth the slope is a linear combination `sum l_i y_i`, so its bias
/// under the pilot is exact and its variance is `sigma^2 sum l_i^2`. Squared
/// bias is corrected for the sampling variance of the pilot coefficients.
/// Returns the chosen bandwidth and the `(bandwidth, criterion)` path.
pub fn derivative_bandwidth(
    p: &[f64],
    y: &[f64],
    grid: &[f64],
    candidates: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    let n = p.len();
    let (lo, hi) = p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let centre = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let t = |v: f64| (v - centre) / scale;
    let powers: Vec<Vec<f64>> = (1..=4)
        .map(|k| p.iter().map(|&v| t(v).powi(k)).collect())
        .collect();
    let refs: Vec<&[f64]> = powers.iter().map(Vec::as_slice).collect();
    let names: Vec<String> = (0..5).map(|k| format!("p^{k}")).collect();
    let ls = least_squares(&design_matrix(&refs, n, true), y, &names)?;
    let sigma2 = ls.resid.iter().map(|e| e * e).sum::<f64>() / (n - 5) as f64;
    let a = [ls.beta[2], ls.beta[3], ls.beta[4]];
    let cov = |i: usize, j: usize| sigma2 * ls.bread[(i + 2, j + 2)];

    let sorted = sorted_copy(p);
    let criterion = |h: f64| -> f64 {
        grid.par_iter()
            .map(|&v| {
                let start = sorted.partition_point(|&q| q <= v - h);
                let end = sorted.partition_point(|&q| q < v + h);
                let window = &sorted[start..end.max(start)];
                let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
                for &q in window {
                    let (d, w) = (q - v, epanechnikov((q - v) / h));
                    s0 += w;
                    s1 += w * d;
                    s2 += w * d * d;
                }
                let det = s0 * s2 - s1 * s1;
                if window.len() < 3 || !(det > 1e-12 * s0 * s2) {
                    return f64::INFINITY;
                }
                // slope weights l_i = w_i (s0 d_i - s1) / det
                let mut c = [0.0; 3];
                let mut l2 = 0.0;
                for &q in window {
                    let (d, w) = (q - v, epanechnikov((q - v) / h));
                    let l = w * (s0 * d - s1) / det;
                    l2 += l * l;
                    let tq = t(q);
                    for (k, ck) in c.iter_mut().enumerate() {
                        *ck += l * tq.powi(k as i32 + 2);
                    }
                }
                // subtract the derivative of each pilot term at v
                let tv = t(v);
                for (k, ck) in c.iter_mut().enumerate() {
                    let power = k as i32 + 2;
                    *ck -= f64::from(power) * tv.powi(power - 1) / scale;
                }
                let bias: f64 = (0..3).map(|k| c[k] * a[k]).sum();
                let bias_var: f64 = (0..3)
                    .flat_map(|i| (0..3).map(move |j| (i, j)))
                    .map(|(i, j)| c[i] * c[j] * cov(i, j))
                    .sum();
                bias * bias - bias_var + sigma2 * l2
            })
            .sum()
    };
    let path: Vec<(f64, f64)> = candidates.iter().map(|&h| (h, criterion(h))).collect();
    let best = path
        .iter()
        .filter(|(_, c)| c.is_finite())
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(h, _)| *h)
        .ok_or_else(|| {
            Error::Insufficient("no candidate bandwidth gives a defined slope on the grid".into())
        })?;
    Ok((best, path))
}

#[derive(Debug, Clone, Serialize)]
pub struct PartiallyLinearFit {
    pub covariates: Vec<String>,
    /// Coefficients on `X`.
    pub beta0: Vec<f64>,
    /// Coefficients on `X P`.
    pub beta_gap: Vec<f64>,
    /// Covariance of `(beta0, beta_gap)` from the residual regression (HC1).
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    /// Mean of `K'` over the in-support grid; equals the intercept gap when
    /// the unobserved gain averages to zero over the support.
    pub alpha_gap: f64,
    pub grid: Vec<f64>,
    pub in_support: Vec<bool>,
    /// Level of `K` (plus the intercepts it absorbs) on the grid.
    pub k_hat: Vec<f64>,
    pub k_slope: Vec<f64>,
    /// Bandwidth for smoothing `Y`, `X` and `X P` on `P`.
    pub bandwidth: f64,
    /// Bandwidth for the level of `K`.
    pub k_bandwidth: f64,
    pub derivative_bandwidth: f64,
    /// Cross-validation scores for `bandwidth` and `k_bandwidth`.
    pub bandwidth_path: Vec<(f64, f64)>,
    pub k_bandwidth_path: Vec<(f64, f64)>,
    /// Estimated slope MSE for each derivative bandwidth candidate.
    pub derivative_bandwidth_path: Vec<(f64, f64)>,
    pub support: (f64, f64),
    pub n_used: usize,
    pub covariate_means: Vec<f64>,
    #[serde(skip)]
    sample: SortedSample,
}

impl PartiallyLinearFit {
    pub fn beta_gap_se(&self) -> Vec<f64> {
        let k = self.beta0.len();
        (0..k)
            .map(|j| self.vcov[(k + j, k + j)].max(0.0).sqrt())
            .collect()
    }

    pub fn beta0_se(&self) -> Vec<f64> {
        (0..self.beta0.len())
            .map(|j| self.vcov[(j, j)].max(0.0).sqrt())
            .collect()
    }

    fn within(&self, v: f64) -> bool {
        v >= self.support.0 && v <= self.support.1
    }
}

/// Fits the partially linear outcome model on the rows whose score lies in
/// the common support.
pub fn fit_partially_linear(
    data: &Dataset,
    scores: &PropensityScores,
    opts: &MteOptions,
) -> Result<PartiallyLinearFit> {
    if scores.len() != data.n_rows() {
        return Err(Error::InvalidInput(
            "scores are not aligned with the dataset".into(),
        ));
    }
    data.require_arms(2)?;
    if opts.v_grid.windows(2).any(|w| w[0] >= w[1])
        || opts.v_grid.iter().any(|&v| !(v > 0.0 && v < 1.0))
    {
        return Err(Error::InvalidInput(
            "v grid must be strictly ascending inside (0, 1)".into(),
        ));
    }
    let s = data.treatment();
    let p_all = &scores.values;
    let (treated, untreated): (Vec<f64>, Vec<f64>) = {
        let t = (0..p_all.len())
            .filter(|&i| s[i] == 1.0)
            .map(|i| p_all[i])
            .collect();
        let u = (0..p_all.len())
            .filter(|&i| s[i] == 0.0)
            .map(|i| p_all[i])
            .collect();
        (t, u)
    };
    let support = common_support(&treated, &untreated, opts.trim)?;
    let keep: Vec<usize> = (0..p_all.len())
        .filter(|&i| p_all[i] >= support.0 && p_all[i] <= support.1)
        .collect();
    let n = keep.len();
    let p: Vec<f64> = keep.iter().map(|&i| p_all[i]).collect();
    let y_all = data.outcome()?;
    let y: Vec<f64> = keep.iter().map(|&i| y_all[i]).collect();
    let covariates = data.covariate_names();
    let k = covariates.len();
    let x: Vec<Vec<f64>> = covariates
        .iter()
        .map(|c| {
            data.column(c)
                .map(|col| keep.iter().map(|&i| col[i]).collect())
        })
        .collect::<Result<_>>()?;
    let xp: Vec<Vec<f64>> = x
        .iter()
        .map(|col| col.iter().zip(&p).map(|(a, b)| a * b).collect())
        .collect();

    let (pmin, pmax) = p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let range = pmax - pmin;
    if !(range >= 1e-6) {
        return Err(Error::Insufficient(format!(
            "propensity scores vary by only {range:e}"
        )));
    }
    if n <= 2 * k + 2 {
        return Err(Error::Insufficient(
            "too few observations in the common support".into(),
        ));
    }

    let mut responses: Vec<&[f64]> = vec![&y];
    responses.extend(x.iter().map(Vec::as_slice));
    responses.extend(xp.iter().map(Vec::as_slice));
    let sample = SortedSample::new(&p, &responses);

    let (bandwidth, bandwidth_path) = match opts.bandwidth {
        Some(h) if h > 0.0 => (h, Vec::new()),
        Some(h) => {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => {
            let cands = geometric_grid(
                opts.cv_range.0 * range,
                opts.cv_range.1 * range,
                opts.cv_candidates,
            );
            select_bandwidth(&sample, 0, &cands)
        }
    };
    // residualize every response on P
    let smoothed = sample.smooth_at_samples(bandwidth);
    let resid = |j: usize, raw: &[f64]| -> Vec<f64> {
        raw.iter().zip(&smoothed[j]).map(|(a, b)| a - b).collect()
    };
    let ey = resid(0, &y);
    let mut eregs: Vec<Vec<f64>> = Vec::with_capacity(2 * k);
    for (j, col) in x.iter().enumerate() {
        eregs.push(resid(1 + j, col));
    }
    for (j, col) in xp.iter().enumerate() {
        eregs.push(resid(1 + k + j, col));
    }

    let (beta0, beta_gap, vcov) = if k == 0 {
        (Vec::new(), Vec::new(), DMatrix::zeros(0, 0))
    } else {
        let refs: Vec<&[f64]> = eregs.iter().map(Vec::as_slice).collect();
        let xr = design_matrix(&refs, n, false);
        let names: Vec<String> = covariates
            .iter()
            .cloned()
            .chain(covariates.iter().map(|c| format!("{c}:P")))
            .collect();
        ensure_full_rank(&xr, &names)?;
        let ls = least_squares(&xr, &ey, &names)?;
        let nn = n as f64;
        let kk = (2 * k) as f64;
        let mut meat = DMatrix::zeros(2 * k, 2 * k);
        for (i, e) in ls.resid.iter().enumerate() {
            let r = xr.row(i);
            meat += (r.transpose() * r) * (e * e);
        }
        let vcov = &ls.bread * meat * &ls.bread * (nn / (nn - kk));
        let b = ls.beta.as_slice();
        (b[..k].to_vec(), b[k..].to_vec(), vcov)
    };

    let y_tilde: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = y[i];
            for j in 0..k {
                v -= x[j][i] * beta0[j] + xp[j][i] * beta_gap[j];
            }
            v
        })
        .collect();
    let k_sample = SortedSample::new(&p, &[&y_tilde]);
    let (k_bandwidth, k_path) = match opts.k_bandwidth.or(opts.bandwidth) {
        Some(h) if h > 0.0 => (h, Vec::new()),
        Some(h) => {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => {
            let cands = geometric_grid(
                opts.cv_range.0 * range,
                opts.cv_range.1 * range,
                opts.cv_candidates,
            );
            select_bandwidth(&k_sample, 0, &cands)
        }
    };
    let mut derivative_path = Vec::new();
    let derivative_bw = match opts.derivative_bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be positive, got {h}"
            )))
        }
        None => {
            let cands = geometric_grid(
                opts.cv_range.0 * range,
                opts.cv_range.1 * range,
                opts.cv_candidates,
            );
            let inside: Vec<f64> = opts
                .v_grid
                .iter()
                .copied()
                .filter(|&v| v >= support.0 && v <= support.1)
                .collect();
            let (h, path) = derivative_bandwidth(&p, &y_tilde, &inside, &cands)?;
            derivative_path = path;
            h
        }
    };

    let grid = opts.v_grid.clone();
    let in_support: Vec<bool> = grid
        .iter()
        .map(|&v| v >= support.0 && v <= support.1)
        .collect();
    if !in_support.iter().any(|&b| b) {
        return Err(Error::NoCommonSupport);
    }
    for (&v, _) in grid.iter().zip(&in_support).filter(|(_, &m)| m) {
        for h in [k_bandwidth, derivative_bw] {
            let count = k_sample.neighbors(v, h);
            if count < opts.min_neighbors {
                return Err(Error::SparseBandwidth {
                    bandwidth: h,
                    point: v,
                    count,
                    required: opts.min_neighbors,
                });
            }
        }
    }
    let level_fits = k_sample.fit_many(&grid, k_bandwidth);
    let slope_fits = k_sample.fit_many(&grid, derivative_bw);
    let mask = |vals: Vec<f64>| -> Vec<f64> {
        vals.into_iter()
            .zip(&in_support)
            .map(|(v, &m)| if m { v } else { f64::NAN })
            .collect()
    };
    let k_hat = mask(level_fits.iter().map(|f| f.levels[0]).collect());
    let k_slope = mask(slope_fits.iter().map(|f| f.slopes[0]).collect());
    if let Some(i) = (0..grid.len())
        .find(|&i| in_support[i] && !(k_hat[i].is_finite() && k_slope[i].is_finite()))
    {
        return Err(Error::Numerical(format!(
            "local fit degenerate at v = {}",
            grid[i]
        )));
    }
    let inside: Vec<f64> = k_slope.iter().copied().filter(|v| v.is_finite()).collect();
    let alpha_gap = mean(&inside);
    let covariate_means = x.iter().map(|c| mean(c)).collect();

    Ok(PartiallyLinearFit {
        covariates,
        beta0,
        beta_gap,
        vcov,
        alpha_gap,
        grid,
        in_support,
        k_hat,
        k_slope,
        bandwidth,
        k_bandwidth,
        derivative_bandwidth: derivative_bw,
        bandwidth_path,
        k_bandwidth_path: k_path,
        derivative_bandwidth_path: derivative_path,
        support,
        n_used: n,
        covariate_means,
        sample: k_sample,
    })
}

/// `K'(v)` on an arbitrary grid; points outside the support are `None`.
pub fn k_derivative(fit: &PartiallyLinearFit, v_grid: &[f64]) -> Vec<Option<f64>> {
    v_grid
        .iter()
        .map(|&v| {
            if !fit.within(v) {
                return None;
            }
            let f = fit.sample.fit_at(v, fit.derivative_bandwidth, None);
            f.slopes[0].is_finite().then_some(f.slopes[0])
        })
        .collect()
}

/// MTE evaluated on a grid, with the common-support mask and optional
/// pointwise interval bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MteCurve {
    pub v_grid: Vec<f64>,
    /// `NaN` outside the support.
    pub values: Vec<f64>,
    pub eval_point: Vec<f64>,
    pub in_support: Vec<bool>,
    pub ci: Option<(Vec<f64>, Vec<f64>)>,
}

impl MteCurve {
    pub fn new(v_grid: Vec<f64>, values: Vec<f64>, in_support: Vec<bool>) -> Result<Self> {
        if v_grid.len() != values.len() || v_grid.len() != in_support.len() {
            return Err(Error::InvalidInput("curve arrays differ in length".into()));
        }
        if v_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "v grid must be strictly ascending".into(),
            ));
        }
        if let Some(i) = (0..values.len()).find(|&i| in_support[i] && !values[i].is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite curve value at v = {}",
                v_grid[i]
            )));
        }
        Ok(Self {
            v_grid,
            values,
            eval_point: Vec::new(),
            in_support,
            ci: None,
        })
    }

    /// Curve on the full grid with every point in support.
    pub fn from_fn(v_grid: Vec<f64>, f: impl Fn(f64) -> f64) -> Self {
        let values = v_grid.iter().map(|&v| f(v)).collect();
        let in_support = vec![true; v_grid.len()];
        Self {
            v_grid,
            values,
            eval_point: Vec::new(),
            in_support,
            ci: None,
        }
    }

    pub fn support_values(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.v_grid
            .iter()
            .zip(&self.values)
            .zip(&self.in_support)
            .filter(|(_, &m)| m)
            .map(|((v, y), _)| (*v, *y))
    }

    /// Columns `v, mte, in_support, ci_lo, ci_hi`; cells outside the support
    /// or without intervals are left empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["v", "mte", "in_support", "ci_lo", "ci_hi"])?;
        for i in 0..self.v_grid.len() {
            let (lo, hi) = match &self.ci {
                Some((lo, hi)) if self.in_support[i] => (format_cell(lo[i]), format_cell(hi[i])),
                _ => (String::new(), String::new()),
            };
            let value = if self.in_support[i] {
                format_cell(self.values[i])
            } else {
                String::new()
            };
            w.write_record([
                format_cell(self.v_grid[i]),
                value,
                u8::from(self.in_support[i]).to_string(),
                lo,
                hi,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let (mut v, mut m, mut s) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                let cell = rec.get(i).unwrap_or("");
                if cell.is_empty() {
                    Ok(f64::NAN)
                } else {
                    cell.parse()
                        .map_err(|_| Error::InvalidInput(format!("bad curve cell `{cell}`")))
                }
            };
            v.push(num(0)?);
            m.push(num(1)?);
            s.push(rec.get(2) == Some("1"));
        }
        Self::new(v, m, s)
    }
}

/// MTE at covariate vector `x` (default: the estimation-sample means).
pub fn mte_curve(
    fit: &PartiallyLinearFit,
    x: Option<&[f64]>,
    v_grid: Option<&[f64]>,
) -> Result<MteCurve> {
    let x = x.unwrap_or(&fit.covariate_means);
    if x.len() != fit.beta_gap.len() {
        return Err(Error::InvalidInput(format!(
            "evaluation point has {} covariates, fit has {}",
            x.len(),
            fit.beta_gap.len()
        )));
    }
    let shift: f64 = x.iter().zip(&fit.beta_gap).map(|(a, b)| a * b).sum();
    let (grid, slopes): (Vec<f64>, Vec<Option<f64>>) = match v_grid {
        None => (
            fit.grid.clone(),
            fit.k_slope
                .iter()
                .zip(&fit.in_support)
                .map(|(s, &m)| m.then_some(*s))
                .collect(),
        ),
        Some(g) => (g.to_vec(), k_derivative(fit, g)),
    };
    let in_support: Vec<bool> = slopes.iter().map(Option::is_some).collect();
    let values = slopes
        .iter()
        .map(|s| s.map_or(f64::NAN, |d| shift + d))
        .collect();
    let mut curve = MteCurve::new(grid, values, in_support)?;
    curve.eval_point = x.to_vec();
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_interval_intersection() {
        let t: Vec<f64> = (0..=60).map(|i| 0.3 + i as f64 * 0.01).collect();
        let u: Vec<f64> = (0..=60).map(|i| 0.1 + i as f64 * 0.01).collect();
        let (lo, hi) = common_support(&t, &u, 0.0).unwrap();
        assert!((lo - 0.3).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
    }

    #[test]
    fn identical_scores_give_trimmed_range() {
        let p: Vec<f64> = (0..101).map(|i| i as f64 / 100.0 * 0.8 + 0.1).collect();
        let (lo, hi) = common_support(&p, &p, 0.05).unwrap();
        let s = sorted_copy(&p);
        assert_eq!(
            (lo, hi),
            (sorted_quantile(&s, 0.05), sorted_quantile(&s, 0.95))
        );
    }

    #[test]
    fn disjoint_scores_have_no_support() {
        assert!(matches!(
            common_support(&[0.6, 0.7], &[0.1, 0.2], 0.0),
            Err(Error::NoCommonSupport)
        ));
    }

    #[test]
    fn curve_csv_round_trip() {
        let c = MteCurve::new(
            vec![0.1, 0.2, 0.3],
            vec![f64::NAN, 0.25, -1.0 / 3.0],
            vec![false, true, true],
        )
        .unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("v,mte,in_support,ci_lo,ci_hi\n0.1,,0,,\n"));
        let back = MteCurve::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values[2], -1.0 / 3.0);
        assert_eq!(back.in_support, c.in_support);
    }

    #[test]
    fn slope_bandwidth_tracks_curvature() {
        let p: Vec<f64> = (0..4000)
            .map(|i| 0.1 + 0.8 * ((i * 7919) % 4000) as f64 / 3999.0)
            .collect();
        let wobble = |i: usize| if i.is_multiple_of(2) { 0.05 } else { -0.05 };
        let grid: Vec<f64> = (10..=90).map(|i| i as f64 / 100.0).collect();
        let cands = crate::kernel::geometric_grid(0.04, 0.4, 10);
        let linear: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, v)| 2.0 * v + wobble(i))
            .collect();
        let (h_lin, path) = derivative_bandwidth(&p, &linear, &grid, &cands).unwrap();
        assert_eq!(path.len(), 10);
        let curved: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(i, v)| 3.0 * (4.0 * v).sin() + wobble(i))
            .collect();
        let (h_curved, _) = derivative_bandwidth(&p, &curved, &grid, &cands).unwrap();
        assert!(h_curved < h_lin, "{h_curved} vs {h_lin}");
    }
}
