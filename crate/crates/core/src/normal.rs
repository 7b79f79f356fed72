//! Switching regression with jointly normal errors `(U1, U0, Us)`, fit by
//! full-information maximum likelihood.
//!
//! Selection is `S = 1` iff `Z g - Us > 0` with `Us ~ N(0, 1)`. Outcomes are
//! `Y_s = X b_s + U_s` with `sd(U_s) = sigma_s` and `corr(U_s, Us) = rho_s`.
//! Optimization runs on `(g, b1, b0, ln sigma1, ln sigma0, atanh rho1,
//! atanh rho0)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{
    design_matrix, ensure_full_rank, ln_cdf_and_mills, max_abs, norm_quantile, spd_inverse,
    symmetrize,
};
use crate::linear::least_squares;
use crate::mte::MteCurve;
use crate::selection::{fit_logit, INTERCEPT};

/// Logit coefficients are roughly 1.6 times their probit counterparts.
const LOGIT_TO_PROBIT: f64 = 1.6;

#[derive(Debug, Clone, Copy)]
pub struct NormalOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// |rho| above this attaches a boundary warning.
    pub rho_warning: f64,
}

impl Default for NormalOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            rho_warning: 0.99,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedEstimate {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalSelectionFit {
    /// Outcome regressors with the intercept first.
    pub outcome_names: Vec<String>,
    pub selection_names: Vec<String>,
    pub beta1: Vec<f64>,
    pub beta0: Vec<f64>,
    pub gamma: Vec<f64>,
    pub sigma1: f64,
    pub sigma0: f64,
    pub rho1: f64,
    pub rho0: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Covariance of the optimization parameters.
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
    pub covariate_means: Vec<f64>,
    pub warnings: Vec<String>,
}

impl NormalSelectionFit {
    fn layout(&self) -> Layout {
        Layout {
            ks: self.gamma.len(),
            kx: self.beta1.len(),
        }
    }

    /// Structural parameters with delta-method standard errors.
    pub fn parameters(&self) -> Vec<NamedEstimate> {
        let l = self.layout();
        let se = |i: usize| self.covariance[(i, i)].max(0.0).sqrt();
        let mut out = Vec::new();
        for (j, name) in self.selection_names.iter().enumerate() {
            out.push(NamedEstimate {
                name: format!("gamma[{name}]"),
                estimate: self.gamma[j],
                se: se(j),
            });
        }
        for (j, name) in self.outcome_names.iter().enumerate() {
            out.push(NamedEstimate {
                name: format!("beta1[{name}]"),
                estimate: self.beta1[j],
                se: se(l.ks + j),
            });
        }
        for (j, name) in self.outcome_names.iter().enumerate() {
            out.push(NamedEstimate {
                name: format!("beta0[{name}]"),
                estimate: self.beta0[j],
                se: se(l.ks + l.kx + j),
            });
        }
        let b = l.ks + 2 * l.kx;
        out.push(NamedEstimate {
            name: "sigma1".into(),
            estimate: self.sigma1,
            se: self.sigma1 * se(b),
        });
        out.push(NamedEstimate {
            name: "sigma0".into(),
            estimate: self.sigma0,
            se: self.sigma0 * se(b + 1),
        });
        out.push(NamedEstimate {
            name: "rho1".into(),
            estimate: self.rho1,
            se: (1.0 - self.rho1 * self.rho1) * se(b + 2),
        });
        out.push(NamedEstimate {
            name: "rho0".into(),
            estimate: self.rho0,
            se: (1.0 - self.rho0 * self.rho0) * se(b + 3),
        });
        out
    }

    /// `x (b1 - b0) + (rho1 sigma1 - rho0 sigma0) Φ⁻¹(v)`, where `x` excludes
    /// the intercept.
    pub fn mte(&self, x: &[f64], v: f64) -> f64 {
        self.mte_at_mean(x) + (self.rho1 * self.sigma1 - self.rho0 * self.sigma0) * norm_quantile(v)
    }

    fn mte_at_mean(&self, x: &[f64]) -> f64 {
        let mut m = self.beta1[0] - self.beta0[0];
        for (j, xj) in x.iter().enumerate() {
            m += xj * (self.beta1[j + 1] - self.beta0[j + 1]);
        }
        m
    }

    /// Closed-form MTE on a grid; every point is in support.
    pub fn mte_curve(&self, x: Option<&[f64]>, v_grid: &[f64]) -> Result<MteCurve> {
        let x = x.unwrap_or(&self.covariate_means);
        if x.len() + 1 != self.beta1.len() {
            return Err(Error::InvalidInput(
                "evaluation point dimension mismatch".into(),
            ));
        }
        if v_grid.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidInput("v grid must lie inside (0, 1)".into()));
        }
        let mut c = MteCurve::from_fn(v_grid.to_vec(), |v| self.mte(x, v));
        c.eval_point = x.to_vec();
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    ks: usize,
    kx: usize,
}

struct Problem {
    z: DMatrix<f64>,
    x: DMatrix<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    layout: Layout,
}

impl Problem {
    /// Log-likelihood and its gradient.
    fn evaluate(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let Layout { ks, kx } = self.layout;
        let gamma = &theta[..ks];
        let b1 = &theta[ks..ks + kx];
        let b0 = &theta[ks + kx..ks + 2 * kx];
        let base = ks + 2 * kx;
        let (sig1, sig0) = (theta[base].exp(), theta[base + 1].exp());
        let (rho1, rho0) = (theta[base + 2].tanh(), theta[base + 3].tanh());
        let (r1, r0) = ((1.0 - rho1 * rho1).sqrt(), (1.0 - rho0 * rho0).sqrt());
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();

        let mut ll = 0.0;
        let mut g = vec![0.0; theta.len()];
        for i in 0..self.y.len() {
            let zi = self.z.row(i);
            let xi = self.x.row(i);
            let a: f64 = (0..ks).map(|j| zi[j] * gamma[j]).sum();
            if self.s[i] == 1.0 {
                let e = self.y[i] - (0..kx).map(|j| xi[j] * b1[j]).sum::<f64>();
                let u = e / sig1;
                let q = (a - rho1 * u) / r1;
                let (lnc, lam) = ln_cdf_and_mills(q);
                ll += -half_ln_2pi - theta[base] - 0.5 * u * u + lnc;
                for j in 0..ks {
                    g[j] += lam / r1 * zi[j];
                }
                let de = u / sig1 + lam * rho1 / (sig1 * r1);
                for j in 0..kx {
                    g[ks + j] += de * xi[j];
                }
                g[base] += -1.0 + u * u + lam * rho1 * u / r1;
                g[base + 2] += lam * (rho1 * a - u) / r1;
            } else {
                let e = self.y[i] - (0..kx).map(|j| xi[j] * b0[j]).sum::<f64>();
                let u = e / sig0;
                let q = (rho0 * u - a) / r0;
                let (lnc, lam) = ln_cdf_and_mills(q);
                ll += -half_ln_2pi - theta[base + 1] - 0.5 * u * u + lnc;
                for j in 0..ks {
                    g[j] -= lam / r0 * zi[j];
                }
                let de = u / sig0 - lam * rho0 / (sig0 * r0);
                for j in 0..kx {
                    g[ks + kx + j] += de * xi[j];
                }
                g[base + 1] += -1.0 + u * u - lam * rho0 * u / r0;
                g[base + 3] += lam * (u - rho0 * a) / r0;
            }
        }
        (ll, g)
    }

    /// Hessian by central differences of the analytic gradient.
    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let p = theta.len();
        let mut h = DMatrix::zeros(p, p);
        for j in 0..p {
            let step = 1e-5 * theta[j].abs().max(1.0);
            let mut up = theta.to_vec();
            up[j] += step;
            let mut dn = theta.to_vec();
            dn[j] -= step;
            let (_, gu) = self.evaluate(&up);
            let (_, gd) = self.evaluate(&dn);
            for i in 0..p {
                h[(i, j)] = (gu[i] - gd[i]) / (2.0 * step);
            }
        }
        symmetrize(&h)
    }
}

pub fn fit_normal_selection(data: &Dataset) -> Result<NormalSelectionFit> {
    fit_normal_selection_with(data, &NormalOptions::default())
}

/// Outcome regressors are the covariates; selection regressors are the
/// covariates plus the instruments.
pub fn fit_normal_selection_with(
    data: &Dataset,
    opts: &NormalOptions,
) -> Result<NormalSelectionFit> {
    data.require_arms(2)?;
    let instruments = data.require_instruments()?;
    let covariates = data.covariate_names();
    let selection: Vec<String> = covariates.iter().chain(&instruments).cloned().collect();
    let n = data.n_rows();
    let col = |names: &[String]| -> Result<Vec<&[f64]>> {
        names.iter().map(|c| data.column(c)).collect()
    };
    let z = design_matrix(&col(&selection)?, n, true);
    let x = design_matrix(&col(&covariates)?, n, true);
    let with_int = |names: &[String]| -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(names.iter().cloned())
            .collect()
    };
    let selection_names = with_int(&selection);
    let outcome_names = with_int(&covariates);
    ensure_full_rank(&z, &selection_names)?;
    let y = data.outcome()?.to_vec();
    let s = data.treatment().to_vec();
    let layout = Layout {
        ks: z.ncols(),
        kx: x.ncols(),
    };

    // starting values: rescaled logit, per-arm OLS, zero correlations
    let logit = fit_logit(data, &selection)?;
    let mut theta: Vec<f64> = logit
        .coefficients
        .iter()
        .map(|b| b / LOGIT_TO_PROBIT)
        .collect();
    let mut ln_sigmas = [0.0; 2];
    for (arm, value) in [(1.0, 0usize), (0.0, 1usize)] {
        let rows: Vec<usize> = (0..n).filter(|&i| s[i] == arm).collect();
        let xa = DMatrix::from_fn(rows.len(), layout.kx, |i, j| x[(rows[i], j)]);
        let ya: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let ls = least_squares(&xa, &ya, &outcome_names)?;
        theta.extend(ls.beta.iter());
        let ssr: f64 = ls.resid.iter().map(|e| e * e).sum();
        ln_sigmas[value] = (ssr / ya.len() as f64).sqrt().max(1e-8).ln();
    }
    theta.extend(ln_sigmas);
    theta.extend([0.0, 0.0]);

    let problem = Problem { z, x, y, s, layout };
    let (mut ll, mut grad) = problem.evaluate(&theta);
    let mut iterations = 0;
    let mut damping = 0.0_f64;
    loop {
        let gnorm = max_abs(&grad);
        if gnorm <= opts.gradient_tolerance {
            break;
        }
        if iterations >= opts.max_iterations {
            return Err(Error::NoConvergence {
                iterations,
                gradient_norm: gnorm,
            });
        }
        iterations += 1;
        let neg_h = -problem.hessian(&theta);
        let g = DVector::from_column_slice(&grad);
        let mut accepted = false;
        // Levenberg-style damping until the Newton step increases the likelihood
        for _ in 0..60 {
            let mut m = neg_h.clone();
            let scale = neg_h.diagonal().iter().fold(1.0_f64, |a, d| a.max(d.abs()));
            for j in 0..m.nrows() {
                m[(j, j)] += damping * scale;
            }
            let Some(ch) = m.cholesky() else {
                damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
                continue;
            };
            let step = ch.solve(&g);
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t + d).collect();
            let (cand_ll, cand_g) = problem.evaluate(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-10 * ll.abs() {
                theta = cand;
                ll = cand_ll;
                grad = cand_g;
                damping *= 0.1;
                if damping < 1e-12 {
                    damping = 0.0;
                }
                accepted = true;
                break;
            }
            damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations,
                gradient_norm: max_abs(&grad),
            });
        }
    }

    let covariance = spd_inverse(&(-problem.hessian(&theta)))
        .map_err(|_| Error::Numerical("normal selection information matrix is singular".into()))?;
    let Layout { ks, kx } = layout;
    let base = ks + 2 * kx;
    let rho1 = theta[base + 2].tanh();
    let rho0 = theta[base + 3].tanh();
    let mut warnings = Vec::new();
    for (name, r) in [("rho1", rho1), ("rho0", rho0)] {
        if r.abs() > opts.rho_warning {
            warnings.push(format!("{name} = {r:.4} is at the boundary of (-1, 1)"));
        }
    }
    let covariate_means = covariates
        .iter()
        .map(|c| data.column(c).map(crate::linalg::mean))
        .collect::<Result<_>>()?;
    Ok(NormalSelectionFit {
        outcome_names,
        selection_names,
        gamma: theta[..ks].to_vec(),
        beta1: theta[ks..ks + kx].to_vec(),
        beta0: theta[ks + kx..base].to_vec(),
        sigma1: theta[base].exp(),
        sigma0: theta[base + 1].exp(),
        rho1,
        rho0,
        log_likelihood: ll,
        iterations,
        covariance,
        covariate_means,
        warnings,
    })
}
