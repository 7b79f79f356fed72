//! OLS and two-stage least squares with classical, HC1 and cluster-robust
//! (CR1) covariance estimates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{ensure_full_rank, spd_inverse, symmetrize};
use crate::selection::{propensity, LogitFit, INTERCEPT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeType {
    Classical,
    #[default]
    RobustHc1,
    Cluster,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearOptions {
    pub intercept: bool,
    /// First-stage F below this attaches a weak-instrument warning.
    pub weak_instrument_threshold: f64,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self {
            intercept: true,
            weak_instrument_threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LinearFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    pub se_type: SeType,
    pub n: usize,
    pub clusters: Option<usize>,
    pub r_squared: f64,
    pub first_stage_f: Option<f64>,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LinearFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|j| self.vcov[(j, j)].max(0.0).sqrt())
            .collect()
    }

    /// `(estimate, standard error)` of a named coefficient.
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let j = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[j], self.vcov[(j, j)].max(0.0).sqrt()))
    }
}

/// Cluster labels mapped to dense indices `0..G`.
fn cluster_index(
    data: &Dataset,
    se: SeType,
    cluster: Option<&str>,
) -> Result<Option<(Vec<usize>, usize)>> {
    if se != SeType::Cluster {
        return Ok(None);
    }
    let name = cluster.or_else(|| data.cluster_name()).ok_or_else(|| {
        Error::InvalidInput("cluster standard errors need a cluster column".into())
    })?;
    let ids = data.column(name)?;
    let mut map = BTreeMap::new();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let next = map.len();
        out.push(*map.entry(id.to_bits()).or_insert(next));
    }
    let g = map.len();
    if g < 2 {
        return Err(Error::Insufficient("need at least two clusters".into()));
    }
    Ok(Some((out, g)))
}

/// Sandwich or classical covariance for a linear estimator with regressor
/// matrix `x` (fitted regressors for 2SLS), bread `(x'x)^-1` and residuals.
fn covariance(
    x: &DMatrix<f64>,
    bread: &DMatrix<f64>,
    resid: &[f64],
    se: SeType,
    clusters: Option<&(Vec<usize>, usize)>,
) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let k = x.ncols() as f64;
    match se {
        SeType::Classical => {
            let s2 = resid.iter().map(|e| e * e).sum::<f64>() / (n - k);
            bread * s2
        }
        SeType::RobustHc1 => {
            let mut meat = DMatrix::zeros(x.ncols(), x.ncols());
            for (i, e) in resid.iter().enumerate() {
                let r = x.row(i);
                meat += (r.transpose() * r) * (e * e);
            }
            symmetrize(&(bread * meat * bread)) * (n / (n - k))
        }
        SeType::Cluster => {
            let (ids, g) = clusters.expect("cluster ids resolved");
            let mut scores = DMatrix::zeros(*g, x.ncols());
            for (i, e) in resid.iter().enumerate() {
                let mut row = scores.row_mut(ids[i]);
                row += x.row(i) * *e;
            }
            let meat = scores.transpose() * &scores;
            let g = *g as f64;
            let factor = g / (g - 1.0) * (n - 1.0) / (n - k);
            symmetrize(&(bread * meat * bread)) * factor
        }
    }
}

fn columns(data: &Dataset, names: &[String]) -> Result<Vec<Vec<f64>>> {
    names
        .iter()
        .map(|n| data.column(n).map(<[f64]>::to_vec))
        .collect()
}

fn build(cols: &[Vec<f64>], n: usize, intercept: bool) -> DMatrix<f64> {
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    crate::linalg::design_matrix(&refs, n, intercept)
}

fn with_intercept(names: &[String], intercept: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(names.len() + 1);
    if intercept {
        out.push(INTERCEPT.to_string());
    }
    out.extend(names.iter().cloned());
    out
}

fn r_squared(y: &[f64], resid: &[f64], intercept: bool) -> f64 {
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let tss: f64 = if intercept {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m).powi(2)).sum()
    } else {
        y.iter().map(|v| v * v).sum()
    };
    if tss == 0.0 {
        if ssr == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ssr / tss
    }
}

pub(crate) struct LsResult {
    pub beta: DVector<f64>,
    pub bread: DMatrix<f64>,
    pub resid: Vec<f64>,
}

pub(crate) fn least_squares(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<LsResult> {
    ensure_full_rank(x, names)?;
    if x.nrows() <= x.ncols() {
        return Err(Error::Insufficient("no residual degrees of freedom".into()));
    }
    let bread = spd_inverse(&(x.transpose() * x))?;
    let yv = DVector::from_column_slice(y);
    let xty = x.transpose() * &yv;
    // one round of iterative refinement keeps exact fits exact
    let mut beta = &bread * &xty;
    let resid_v = &yv - x * &beta;
    beta += &bread * (x.transpose() * &resid_v);
    let resid: Vec<f64> = (&yv - x * &beta).iter().copied().collect();
    Ok(LsResult { beta, bread, resid })
}

pub fn fit_ols(
    data: &Dataset,
    outcome: &str,
    regressors: &[String],
    se: SeType,
    cluster: Option<&str>,
) -> Result<LinearFit> {
    fit_ols_with(
        data,
        outcome,
        regressors,
        se,
        cluster,
        &LinearOptions::default(),
    )
}

pub fn fit_ols_with(
    data: &Dataset,
    outcome: &str,
    regressors: &[String],
    se: SeType,
    cluster: Option<&str>,
    opts: &LinearOptions,
) -> Result<LinearFit> {
    let y = data.column(outcome)?;
    let clusters = cluster_index(data, se, cluster)?;
    let names = with_intercept(regressors, opts.intercept);
    let x = build(&columns(data, regressors)?, data.n_rows(), opts.intercept);
    let ls = least_squares(&x, y, &names)?;
    let vcov = covariance(&x, &ls.bread, &ls.resid, se, clusters.as_ref());
    Ok(LinearFit {
        names,
        coefficients: ls.beta.as_slice().to_vec(),
        vcov,
        se_type: se,
        n: data.n_rows(),
        clusters: clusters.map(|c| c.1),
        r_squared: r_squared(y, &ls.resid, opts.intercept),
        first_stage_f: None,
        residuals: ls.resid,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentMode {
    #[default]
    Distance,
    ZByXInteractions,
    PropensityScore,
}

/// Excluded instruments, materialized as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSet {
    pub mode: InstrumentMode,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl InstrumentSet {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Uses existing dataset columns as the excluded instruments.
    pub fn from_columns(data: &Dataset, names: &[String]) -> Result<Self> {
        Ok(Self {
            mode: InstrumentMode::Distance,
            names: names.to_vec(),
            columns: columns(data, names)?,
        })
    }
}

pub fn build_instrument_set(
    data: &Dataset,
    mode: InstrumentMode,
    base_instrument: &str,
    interact_with: &[String],
    logit: Option<&LogitFit>,
) -> Result<InstrumentSet> {
    match mode {
        InstrumentMode::Distance => Ok(InstrumentSet {
            mode,
            names: vec![base_instrument.to_string()],
            columns: vec![data.column(base_instrument)?.to_vec()],
        }),
        InstrumentMode::ZByXInteractions => {
            let base = data.column(base_instrument)?;
            let mut names = vec![base_instrument.to_string()];
            let mut cols = vec![base.to_vec()];
            for other in interact_with {
                let x = data.column(other)?;
                names.push(format!("{base_instrument}:{other}"));
                cols.push(base.iter().zip(x).map(|(a, b)| a * b).collect());
            }
            Ok(InstrumentSet {
                mode,
                names,
                columns: cols,
            })
        }
        InstrumentMode::PropensityScore => {
            let fit = logit.ok_or_else(|| {
                Error::InvalidInput("propensity_score instruments need a fitted logit".into())
            })?;
            let p = propensity(fit, data)?;
            Ok(InstrumentSet {
                mode,
                names: vec!["p_hat".to_string()],
                columns: vec![p.values],
            })
        }
    }
}

/// Wald F statistic that the coefficients at `idx` are jointly zero.
fn wald_f(beta: &DVector<f64>, vcov: &DMatrix<f64>, idx: &[usize]) -> Result<f64> {
    let q = idx.len();
    let b = DVector::from_fn(q, |i, _| beta[idx[i]]);
    let v = DMatrix::from_fn(q, q, |i, j| vcov[(idx[i], idx[j])]);
    let vinv = spd_inverse(&v)?;
    Ok((b.transpose() * vinv * &b)[(0, 0)] / q as f64)
}

#[allow(clippy::too_many_arguments)]
pub fn fit_2sls(
    data: &Dataset,
    outcome: &str,
    endogenous: &str,
    instruments: &InstrumentSet,
    exogenous: &[String],
    se: SeType,
    cluster: Option<&str>,
) -> Result<LinearFit> {
    fit_2sls_with(
        data,
        outcome,
        endogenous,
        instruments,
        exogenous,
        se,
        cluster,
        &LinearOptions::default(),
    )
}

/// Two-stage least squares with one endogenous regressor. The covariance
/// uses structural residuals `y - X b` (original, not fitted, regressors).
#[allow(clippy::too_many_arguments)]
pub fn fit_2sls_with(
    data: &Dataset,
    outcome: &str,
    endogenous: &str,
    instruments: &InstrumentSet,
    exogenous: &[String],
    se: SeType,
    cluster: Option<&str>,
    opts: &LinearOptions,
) -> Result<LinearFit> {
    if instruments.is_empty() {
        return Err(Error::InvalidInput(
            "order condition fails: no excluded instruments".into(),
        ));
    }
    let n = data.n_rows();
    if let Some(c) = instruments.columns.iter().find(|c| c.len() != n) {
        return Err(Error::InvalidInput(format!(
            "instrument column has {} rows, expected {n}",
            c.len()
        )));
    }
    let y = data.column(outcome)?;
    let d = data.column(endogenous)?.to_vec();
    let clusters = cluster_index(data, se, cluster)?;
    let exo = columns(data, exogenous)?;

    // first stage: endogenous on [1, excluded, exogenous]
    let mut z_cols = instruments.columns.clone();
    z_cols.extend(exo.iter().cloned());
    let mut z_names = instruments.names.clone();
    z_names.extend(exogenous.iter().cloned());
    let z = build(&z_cols, n, opts.intercept);
    let z_names = with_intercept(&z_names, opts.intercept);
    let first = least_squares(&z, &d, &z_names)?;
    let first_vcov = covariance(&z, &first.bread, &first.resid, se, clusters.as_ref());
    let off = usize::from(opts.intercept);
    let excluded: Vec<usize> = (off..off + instruments.len()).collect();
    let first_stage_f = wald_f(&first.beta, &first_vcov, &excluded)?;
    let d_hat: Vec<f64> = d.iter().zip(&first.resid).map(|(a, e)| a - e).collect();

    let mut x_cols = vec![d.clone()];
    x_cols.extend(exo.iter().cloned());
    let mut xh_cols = vec![d_hat];
    xh_cols.extend(exo);
    let mut names = vec![endogenous.to_string()];
    names.extend(exogenous.iter().cloned());
    let names = with_intercept(&names, opts.intercept);
    let x = build(&x_cols, n, opts.intercept);
    let x_hat = build(&xh_cols, n, opts.intercept);

    let second = least_squares(&x_hat, y, &names)?;
    let beta = second.beta;
    let yv = DVector::from_column_slice(y);
    let resid: Vec<f64> = (&yv - &x * &beta).iter().copied().collect();
    let vcov = covariance(&x_hat, &second.bread, &resid, se, clusters.as_ref());

    let mut warnings = Vec::new();
    if first_stage_f < opts.weak_instrument_threshold {
        warnings.push(format!(
            "weak instruments: first-stage F = {first_stage_f:.2} < {}",
            opts.weak_instrument_threshold
        ));
    }
    Ok(LinearFit {
        names,
        coefficients: beta.as_slice().to_vec(),
        vcov,
        se_type: se,
        n,
        clusters: clusters.map(|c| c.1),
        r_squared: r_squared(y, &resid, opts.intercept),
        first_stage_f: Some(first_stage_f),
        residuals: resid,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnRole, Role};

    fn ds(cols: Vec<(&str, Role, Vec<f64>)>) -> Dataset {
        Dataset::from_columns(
            cols.into_iter()
                .map(|(n, r, v)| (ColumnRole::new(n, r), v))
                .collect(),
        )
        .unwrap()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn three_point_normal_equations() {
        // x = (0, 1, 2), y = (1, 2, 4): slope 1.5, intercept 5/6
        let d = ds(vec![
            ("y", Role::Outcome, vec![1.0, 2.0, 4.0]),
            ("s", Role::Treatment, vec![0.0, 1.0, 1.0]),
            ("x", Role::Covariate, vec![0.0, 1.0, 2.0]),
        ]);
        let fit = fit_ols(&d, "y", &s(&["x"]), SeType::Classical, None).unwrap();
        assert!((fit.coefficients[0] - 5.0 / 6.0).abs() < 1e-14);
        assert!((fit.coefficients[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn exact_linear_fit() {
        let x1 = vec![0.3, 1.2, -0.7, 2.2, 0.9, -1.4];
        let x2 = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let y: Vec<f64> = x1
            .iter()
            .zip(&x2)
            .map(|(a, b)| 2.0 - 0.5 * a + 3.0 * b)
            .collect();
        let d = ds(vec![
            ("y", Role::Outcome, y),
            ("s", Role::Treatment, x2.clone()),
            ("x1", Role::Covariate, x1),
        ]);
        let fit = fit_ols(&d, "y", &s(&["x1", "s"]), SeType::RobustHc1, None).unwrap();
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-12));
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_design_names_column() {
        let d = ds(vec![
            ("y", Role::Outcome, vec![1.0, 2.0, 4.0, 3.0]),
            ("s", Role::Treatment, vec![0.0, 1.0, 1.0, 0.0]),
            ("x", Role::Covariate, vec![1.0, 2.0, 3.0, 4.0]),
            ("x2", Role::Covariate, vec![2.0, 4.0, 6.0, 8.0]),
        ]);
        match fit_ols(&d, "y", &s(&["x", "x2"]), SeType::Classical, None) {
            Err(Error::RankDeficient(c)) => assert_eq!(c, s(&["x2"])),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cluster_column() {
        let d = ds(vec![
            ("y", Role::Outcome, vec![1.0, 2.0, 4.0, 3.0]),
            ("s", Role::Treatment, vec![0.0, 1.0, 1.0, 0.0]),
        ]);
        assert!(fit_ols(&d, "y", &s(&["s"]), SeType::Cluster, None).is_err());
        assert!(matches!(
            fit_ols(&d, "y", &s(&["s"]), SeType::Cluster, Some("village")),
            Err(Error::MissingColumn(_))
        ));
    }

    #[test]
    fn interaction_count_and_products() {
        let d = ds(vec![
            ("y", Role::Outcome, vec![1.0, 2.0, 4.0]),
            ("s", Role::Treatment, vec![0.0, 1.0, 1.0]),
            ("z", Role::Instrument, vec![2.0, 3.0, 5.0]),
            ("a", Role::Covariate, vec![1.0, 0.0, 1.0]),
            ("b", Role::Covariate, vec![0.5, 1.5, 2.5]),
            ("c", Role::Covariate, vec![-1.0, 1.0, 0.0]),
            ("e", Role::Covariate, vec![7.0, 8.0, 9.0]),
        ]);
        let set = build_instrument_set(
            &d,
            InstrumentMode::ZByXInteractions,
            "z",
            &s(&["a", "b", "c", "e"]),
            None,
        )
        .unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set.columns[2], vec![1.0, 4.5, 12.5]);
        assert!(build_instrument_set(&d, InstrumentMode::PropensityScore, "z", &[], None).is_err());
    }
}
