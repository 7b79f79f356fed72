//! First-stage treatment-choice model: logit by Newton-Raphson, propensity
//! scores, average marginal effects and the likelihood-ratio test for the
//! excluded instruments.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{design_matrix, ensure_full_rank, logistic, max_abs, spd_inverse};

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Clone, Copy)]
pub struct LogitOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the score vector.
    pub gradient_tolerance: f64,
    /// Coefficient magnitude treated as evidence of perfect separation.
    pub separation_bound: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            separation_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogitFit {
    /// Regressor names, excluding the intercept.
    pub regressors: Vec<String>,
    /// Intercept first, then one coefficient per regressor.
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n: usize,
    /// Fingerprint of the estimation rows, used to check that two fits are
    /// comparable.
    #[serde(skip)]
    pub sample_digest: u64,
}

impl LogitFit {
    pub fn names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.regressors.iter().cloned())
            .collect()
    }

    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|j| self.covariance[(j, j)].max(0.0).sqrt())
            .collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names()
            .iter()
            .position(|n| n == name)
            .map(|j| self.coefficients[j])
    }

    fn index(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * DVector::from_column_slice(&self.coefficients)
    }
}

fn digest(s: &[f64]) -> u64 {
    // FNV-1a over the treatment bits
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in s {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h ^ s.len() as u64
}

fn regressor_matrix(data: &Dataset, regressors: &[String]) -> Result<DMatrix<f64>> {
    let cols = regressors
        .iter()
        .map(|r| data.column(r))
        .collect::<Result<Vec<_>>>()?;
    Ok(design_matrix(&cols, data.n_rows(), true))
}

fn log_likelihood(x: &DMatrix<f64>, s: &[f64], beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    eta.iter()
        .zip(s)
        .map(|(&e, &y)| {
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            y * e - softplus
        })
        .sum()
}

fn score_and_information(
    x: &DMatrix<f64>,
    s: &[f64],
    beta: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let eta = x * beta;
    let k = x.ncols();
    let mut g = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    for (i, &e) in eta.iter().enumerate() {
        let p = logistic(e);
        let w = p * (1.0 - p);
        let resid = s[i] - p;
        let row = x.row(i);
        for a in 0..k {
            g[a] += resid * row[a];
            let wa = w * row[a];
            for b in 0..=a {
                info[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (g, info)
}

pub fn fit_logit(data: &Dataset, regressors: &[String]) -> Result<LogitFit> {
    fit_logit_with(data, regressors, &LogitOptions::default())
}

/// Maximum likelihood logit of the treatment on an intercept plus `regressors`.
pub fn fit_logit_with(
    data: &Dataset,
    regressors: &[String],
    opts: &LogitOptions,
) -> Result<LogitFit> {
    let s = data.treatment();
    let x = regressor_matrix(data, regressors)?;
    let names: Vec<String> = std::iter::once(INTERCEPT.to_string())
        .chain(regressors.iter().cloned())
        .collect();
    ensure_full_rank(&x, &names)?;
    if data.n_rows() < names.len() {
        return Err(Error::Insufficient(
            "fewer rows than logit parameters".into(),
        ));
    }

    let mut beta = DVector::zeros(x.ncols());
    let mut ll = log_likelihood(&x, s, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    while iterations < opts.max_iterations {
        let (g, info) = score_and_information(&x, s, &beta);
        grad_norm = max_abs(g.as_slice());
        if grad_norm <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match info.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => info
                .lu()
                .solve(&g)
                .ok_or_else(|| Error::Numerical("singular logit information matrix".into()))?,
        };
        let mut t = 1.0;
        let mut next = &beta + &step * t;
        let mut next_ll = log_likelihood(&x, s, &next);
        let mut halvings = 0;
        while !(next_ll >= ll - 1e-12 * ll.abs()) && halvings < 40 {
            t *= 0.5;
            next = &beta + &step * t;
            next_ll = log_likelihood(&x, s, &next);
            halvings += 1;
        }
        if halvings == 40 {
            break;
        }
        let increasing = next_ll > ll;
        beta = next;
        ll = next_ll;
        if increasing {
            if let Some((j, _)) = beta
                .iter()
                .enumerate()
                .filter(|(_, b)| b.abs() > opts.separation_bound)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            {
                // name the regressor driving the divergence; prefer a slope
                // over the intercept
                let slope = beta
                    .iter()
                    .enumerate()
                    .skip(1)
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                    .map(|(j, _)| j);
                let col = if j == 0 { slope.unwrap_or(0) } else { j };
                return Err(Error::Separation(names[col].clone()));
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            gradient_norm: grad_norm,
        });
    }
    let (_, info) = score_and_information(&x, s, &beta);
    let covariance = spd_inverse(&info)?;
    Ok(LogitFit {
        regressors: regressors.to_vec(),
        coefficients: beta.as_slice().to_vec(),
        covariance,
        log_likelihood: ll,
        converged,
        iterations,
        n: data.n_rows(),
        sample_digest: digest(s),
    })
}

/// Fitted treatment probabilities, aligned to dataset rows. Every value lies
/// strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropensityScores {
    pub values: Vec<f64>,
}

impl PropensityScores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidInput(format!(
                "propensity score {v} outside (0, 1)"
            )));
        }
        Ok(Self { values })
    }

    pub fn mean(&self) -> f64 {
        crate::linalg::mean(&self.values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn clamp_open(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

pub fn propensity(fit: &LogitFit, data: &Dataset) -> Result<PropensityScores> {
    let x = regressor_matrix(data, &fit.regressors)?;
    let values = fit
        .index(&x)
        .iter()
        .map(|&e| clamp_open(logistic(e)))
        .collect();
    Ok(PropensityScores { values })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectType {
    /// Mean of the derivative of P with respect to the regressor.
    Continuous,
    /// Mean of P(x_j = 1) - P(x_j = 0) with the other regressors held fixed.
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalEffect {
    pub name: String,
    pub kind: EffectType,
    pub value: f64,
    /// Delta-method standard error from the logit covariance.
    pub se: f64,
}

fn is_indicator(v: &[f64]) -> bool {
    v.iter().all(|&x| x == 0.0 || x == 1.0)
}

/// Average marginal effect of one regressor.
pub fn marginal_effect(fit: &LogitFit, data: &Dataset, name: &str) -> Result<MarginalEffect> {
    let j = fit
        .regressors
        .iter()
        .position(|r| r == name)
        .map(|j| j + 1)
        .ok_or_else(|| Error::InvalidInput(format!("`{name}` is not a regressor of this fit")))?;
    let x = regressor_matrix(data, &fit.regressors)?;
    let n = x.nrows();
    let k = x.ncols();
    let beta = DVector::from_column_slice(&fit.coefficients);
    let mut grad = DVector::zeros(k);
    let value;
    let kind;
    if is_indicator(x.column(j).as_slice()) {
        kind = EffectType::Discrete;
        let mut x1 = x.clone();
        x1.column_mut(j).fill(1.0);
        let mut x0 = x.clone();
        x0.column_mut(j).fill(0.0);
        let (e1, e0) = (&x1 * &beta, &x0 * &beta);
        let mut total = 0.0;
        for i in 0..n {
            let (p1, p0) = (logistic(e1[i]), logistic(e0[i]));
            total += p1 - p0;
            for a in 0..k {
                grad[a] += p1 * (1.0 - p1) * x1[(i, a)] - p0 * (1.0 - p0) * x0[(i, a)];
            }
        }
        value = total / n as f64;
    } else {
        kind = EffectType::Continuous;
        let eta = &x * &beta;
        let bj = beta[j];
        let mut total = 0.0;
        for i in 0..n {
            let p = logistic(eta[i]);
            let w = p * (1.0 - p);
            total += bj * w;
            for a in 0..k {
                grad[a] += bj * w * (1.0 - 2.0 * p) * x[(i, a)];
            }
            grad[j] += w;
        }
        value = total / n as f64;
    }
    grad /= n as f64;
    let var = (grad.transpose() * &fit.covariance * &grad)[(0, 0)];
    Ok(MarginalEffect {
        name: name.to_string(),
        kind,
        value,
        se: var.max(0.0).sqrt(),
    })
}

/// Average marginal effects for every regressor of the fit.
pub fn average_marginal_derivative(fit: &LogitFit, data: &Dataset) -> Result<Vec<MarginalEffect>> {
    fit.regressors
        .iter()
        .map(|r| marginal_effect(fit, data, r))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LrTest {
    pub chi_square: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of the regressors in `full` that are absent from
/// `restricted`.
pub fn instrument_joint_test(full: &LogitFit, restricted: &LogitFit) -> Result<LrTest> {
    if let Some(r) = restricted
        .regressors
        .iter()
        .find(|r| !full.regressors.contains(r))
    {
        return Err(Error::InvalidInput(format!(
            "models are not nested: `{r}` is only in the restricted model"
        )));
    }
    if full.n != restricted.n || full.sample_digest != restricted.sample_digest {
        return Err(Error::InvalidInput(
            "models were fit on different rows".into(),
        ));
    }
    let diff = full.log_likelihood - restricted.log_likelihood;
    if diff < -1e-8 {
        return Err(Error::Numerical(format!(
            "restricted log-likelihood exceeds the full one by {:e}",
            -diff
        )));
    }
    let chi_square = 2.0 * diff.max(0.0);
    let df = full.regressors.len() - restricted.regressors.len();
    let p_value = if df == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(df as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        1.0 - dist.cdf(chi_square)
    };
    Ok(LrTest {
        chi_square,
        df,
        p_value,
    })
}
