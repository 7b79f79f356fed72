//! Generalized Roy model with jointly normal errors.
//!
//! Potential outcomes are `Y1 = a1 + X b1 + U1` and `Y0 = a0 + X b0 + U0`;
//! treatment is taken when `l0 + X lx + Z lz - Us > 0`. With
//! `V = Phi(Us / sd(Us))`, the marginal treatment effect is
//! `(a1 - a0) + x (b1 - b0) + (cov(U1, Us) - cov(U0, Us)) / sd(Us) * Phi^-1(v)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Bernoulli, Distribution as _, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{format_cell, ColumnRole, Dataset, Role};
use crate::error::{Error, Result};
use crate::linalg::{norm_cdf, norm_quantile};

pub const TREATMENT: &str = "s";
pub const OUTCOME: &str = "y";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Bernoulli { p: f64 },
}

impl Distribution {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Distribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            Distribution::Uniform { low, high } => {
                low.is_finite() && high.is_finite() && low < high
            }
            Distribution::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid distribution for `{name}`: {self:?}"
            )))
        }
    }

    fn draw(&self, rng: &mut ChaCha20Rng) -> f64 {
        match *self {
            Distribution::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Distribution::Uniform { low, high } => {
                Uniform::new(low, high).expect("validated").sample(rng)
            }
            Distribution::Bernoulli { p } => {
                f64::from(u8::from(Bernoulli::new(p).expect("validated").sample(rng)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variable {
    pub name: String,
    pub distribution: Distribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionIndex {
    pub intercept: f64,
    pub covariates: Vec<f64>,
    pub instruments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoyModelSpec {
    #[serde(default)]
    pub name: String,
    pub alpha0: f64,
    pub alpha1: f64,
    pub covariates: Vec<Variable>,
    pub instruments: Vec<Variable>,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
    pub lambda: SelectionIndex,
    /// Covariance of `(U1, U0, Us)`.
    pub sigma: [[f64; 3]; 3],
}

impl RoyModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.covariates.len();
        if self.beta0.len() != k || self.beta1.len() != k || self.lambda.covariates.len() != k {
            return Err(Error::InvalidInput(format!(
                "{k} covariates but beta0/beta1/lambda.covariates have {}/{}/{} entries",
                self.beta0.len(),
                self.beta1.len(),
                self.lambda.covariates.len()
            )));
        }
        if self.lambda.instruments.len() != self.instruments.len() {
            return Err(Error::InvalidInput(format!(
                "{} instruments but {} instrument coefficients",
                self.instruments.len(),
                self.lambda.instruments.len()
            )));
        }
        let mut names: Vec<&str> = vec![TREATMENT, OUTCOME];
        for v in self.covariates.iter().chain(&self.instruments) {
            v.distribution.validate(&v.name)?;
            if names.contains(&v.name.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate or reserved column name `{}`",
                    v.name
                )));
            }
            names.push(&v.name);
        }
        let s = self.sigma_matrix();
        if (s - s.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidInput(
                "error covariance is not symmetric".into(),
            ));
        }
        if !(s[(2, 2)] > 0.0) {
            return Err(Error::InvalidInput("Var(Us) must be positive".into()));
        }
        let eig = s.symmetric_eigen();
        if eig.eigenvalues.min() < -1e-10 * s.abs().max() {
            return Err(Error::InvalidInput(
                "error covariance is not positive semi-definite".into(),
            ));
        }
        Ok(())
    }

    fn sigma_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.sigma[i][j])
    }

    pub fn sd_us(&self) -> f64 {
        self.sigma[2][2].sqrt()
    }

    /// Coefficient on `Phi^-1(v)` in the marginal treatment effect.
    pub fn mte_slope(&self) -> f64 {
        (self.sigma[0][2] - self.sigma[1][2]) / self.sd_us()
    }

    /// Average effect at covariates `x`.
    pub fn ate_at(&self, x: &[f64]) -> f64 {
        self.alpha1 - self.alpha0
            + x.iter()
                .zip(self.beta1.iter().zip(&self.beta0))
                .map(|(x, (b1, b0))| x * (b1 - b0))
                .sum::<f64>()
    }

    /// Population means of the covariates.
    pub fn covariate_means(&self) -> Vec<f64> {
        self.covariates
            .iter()
            .map(|v| match v.distribution {
                Distribution::Normal { mean, .. } => mean,
                Distribution::Uniform { low, high } => 0.5 * (low + high),
                Distribution::Bernoulli { p } => p,
            })
            .collect()
    }

    pub fn selection_index(&self, x: &[f64], z: &[f64]) -> f64 {
        self.lambda.intercept
            + x.iter()
                .zip(&self.lambda.covariates)
                .map(|(a, b)| a * b)
                .sum::<f64>()
            + z.iter()
                .zip(&self.lambda.instruments)
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// True propensity score `Pr(Us < index)`.
    pub fn propensity(&self, x: &[f64], z: &[f64]) -> f64 {
        norm_cdf(self.selection_index(x, z) / self.sd_us())
    }
}

/// Closed-form marginal treatment effect at covariates `x` and resistance `v`.
pub fn true_mte(spec: &RoyModelSpec, x: &[f64], v: f64) -> Result<f64> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::InvalidInput(format!("v = {v} outside (0, 1)")));
    }
    if x.len() != spec.covariates.len() {
        return Err(Error::InvalidInput(format!(
            "x has {} entries, model has {} covariates",
            x.len(),
            spec.covariates.len()
        )));
    }
    Ok(spec.ate_at(x) + spec.mte_slope() * norm_quantile(v))
}

/// Per-row quantities the estimators never see.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub p_true: Vec<f64>,
    pub v_true: Vec<f64>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
    pub gain: Vec<f64>,
    /// `(a1 - a0) + x_i (b1 - b0)`.
    pub ate_x: Vec<f64>,
    pub errors: Vec<[f64; 3]>,
}

impl Truth {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "p_true", "v_true", "y1", "y0", "gain", "ate_x"])?;
        for i in 0..self.p_true.len() {
            w.write_record([
                i.to_string(),
                format_cell(self.p_true[i]),
                format_cell(self.v_true[i]),
                format_cell(self.y1[i]),
                format_cell(self.y0[i]),
                format_cell(self.gain[i]),
                format_cell(self.ate_x[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: Dataset,
    pub truth: Truth,
}

/// Symmetric square root of a PSD matrix, used to correlate standard normals.
fn psd_sqrt(s: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = s.symmetric_eigen();
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Draws `n` rows. Columns: covariates, instruments, `s` (treatment), `y`.
pub fn generate(spec: &RoyModelSpec, n: usize, seed: u64) -> Result<SimulatedData> {
    if n < 1 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let root = psd_sqrt(&spec.sigma_matrix());
    let k = spec.covariates.len();
    let m = spec.instruments.len();
    let mut x_cols = vec![Vec::with_capacity(n); k];
    let mut z_cols = vec![Vec::with_capacity(n); m];
    let mut s_col = Vec::with_capacity(n);
    let mut y_col = Vec::with_capacity(n);
    let mut truth = Truth {
        p_true: Vec::with_capacity(n),
        v_true: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        y0: Vec::with_capacity(n),
        gain: Vec::with_capacity(n),
        ate_x: Vec::with_capacity(n),
        errors: Vec::with_capacity(n),
    };
    let sd_us = spec.sd_us();
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    for _ in 0..n {
        let x: Vec<f64> = spec
            .covariates
            .iter()
            .map(|v| v.distribution.draw(&mut rng))
            .collect();
        let z: Vec<f64> = spec
            .instruments
            .iter()
            .map(|v| v.distribution.draw(&mut rng))
            .collect();
        let e = Vector3::from_fn(|_, _| std_normal.sample(&mut rng));
        let u = root * e;
        let (u1, u0, us) = (u[0], u[1], u[2]);
        let y1 = spec.alpha1 + x.iter().zip(&spec.beta1).map(|(a, b)| a * b).sum::<f64>() + u1;
        let y0 = spec.alpha0 + x.iter().zip(&spec.beta0).map(|(a, b)| a * b).sum::<f64>() + u0;
        let index = spec.selection_index(&x, &z);
        let s = index - us > 0.0;
        for (col, v) in x_cols.iter_mut().zip(&x) {
            col.push(*v);
        }
        for (col, v) in z_cols.iter_mut().zip(&z) {
            col.push(*v);
        }
        s_col.push(f64::from(u8::from(s)));
        y_col.push(if s { y1 } else { y0 });
        truth.p_true.push(norm_cdf(index / sd_us));
        truth.v_true.push(norm_cdf(us / sd_us));
        truth.y1.push(y1);
        truth.y0.push(y0);
        truth.gain.push(y1 - y0);
        truth.ate_x.push(spec.ate_at(&x));
        truth.errors.push([u1, u0, us]);
    }
    let mut columns: Vec<(ColumnRole, Vec<f64>)> = Vec::with_capacity(k + m + 2);
    for (v, col) in spec.covariates.iter().zip(x_cols) {
        columns.push((ColumnRole::new(&v.name, Role::Covariate), col));
    }
    for (v, col) in spec.instruments.iter().zip(z_cols) {
        columns.push((ColumnRole::new(&v.name, Role::Instrument), col));
    }
    columns.push((ColumnRole::new(TREATMENT, Role::Treatment), s_col));
    columns.push((ColumnRole::new(OUTCOME, Role::Outcome), y_col));
    Ok(SimulatedData {
        data: Dataset::from_columns(columns)?,
        truth,
    })
}

/// Role map matching the columns written by [`generate`].
pub fn roles(spec: &RoyModelSpec) -> Vec<ColumnRole> {
    spec.covariates
        .iter()
        .map(|v| ColumnRole::new(&v.name, Role::Covariate))
        .chain(
            spec.instruments
                .iter()
                .map(|v| ColumnRole::new(&v.name, Role::Instrument)),
        )
        .chain([
            ColumnRole::new(TREATMENT, Role::Treatment),
            ColumnRole::new(OUTCOME, Role::Outcome),
        ])
        .collect()
}

/// Sidecar path for a data file: `out.csv` becomes `out.truth.csv`.
pub fn truth_path(data_path: &Path) -> std::path::PathBuf {
    let stem = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data_path.with_file_name(format!("{stem}.truth.csv"))
}

fn normal(name: &str) -> Variable {
    Variable {
        name: name.into(),
        distribution: Distribution::Normal { mean: 0.0, sd: 1.0 },
    }
}

/// Named reference models: `homogeneous`, `selection-on-gains`, `paper-like`.
pub fn presets() -> Vec<RoyModelSpec> {
    vec![
        RoyModelSpec {
            name: "homogeneous".into(),
            alpha0: 1.0,
            alpha1: 1.1,
            covariates: vec![normal("x1")],
            instruments: vec![Variable {
                name: "z1".into(),
                distribution: Distribution::Uniform {
                    low: 0.0,
                    high: 6.0,
                },
            }],
            beta0: vec![0.3],
            beta1: vec![0.3],
            lambda: SelectionIndex {
                intercept: -1.5,
                covariates: vec![0.3],
                instruments: vec![0.5],
            },
            sigma: [
                [0.0049, 0.0049, -0.05],
                [0.0049, 0.0049, -0.05],
                [-0.05, -0.05, 1.0],
            ],
        },
        RoyModelSpec {
            name: "selection-on-gains".into(),
            alpha0: 1.0,
            alpha1: 1.2,
            covariates: vec![normal("x1")],
            instruments: vec![Variable {
                name: "z1".into(),
                distribution: Distribution::Uniform {
                    low: 0.0,
                    high: 6.0,
                },
            }],
            beta0: vec![0.2],
            beta1: vec![0.3],
            lambda: SelectionIndex {
                intercept: -1.5,
                covariates: vec![0.3],
                instruments: vec![0.5],
            },
            sigma: [
                [0.0144, -0.01, -0.1],
                [-0.01, 0.0144, 0.1],
                [-0.1, 0.1, 1.0],
            ],
        },
        RoyModelSpec {
            name: "paper-like".into(),
            alpha0: 7.0,
            alpha1: 7.3,
            covariates: vec![
                Variable {
                    name: "age".into(),
                    distribution: Distribution::Normal { mean: 0.0, sd: 1.0 },
                },
                Variable {
                    name: "employed".into(),
                    distribution: Distribution::Bernoulli { p: 0.6 },
                },
            ],
            instruments: vec![Variable {
                name: "distance".into(),
                distribution: Distribution::Uniform {
                    low: 0.0,
                    high: 10.0,
                },
            }],
            beta0: vec![0.1, 0.2],
            beta1: vec![0.15, 0.3],
            lambda: SelectionIndex {
                intercept: 1.1,
                covariates: vec![0.2, 0.3],
                instruments: vec![-0.223],
            },
            sigma: [[0.25, 0.05, -0.1], [0.05, 0.25, 0.1], [-0.1, 0.1, 1.0]],
        },
    ]
}

pub fn preset(name: &str) -> Result<RoyModelSpec> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown preset `{name}`")))
}
