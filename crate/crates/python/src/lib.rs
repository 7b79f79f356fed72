//! Python bindings for `mtekit`. Results come back as plain dicts and lists.

use std::collections::BTreeMap;

use mtekit::effects::treatment_effects as effects_from_curve;
use mtekit::mte::default_v_grid;
use mtekit::pipeline::{self, curve_key, PipelineOptions};
use mtekit::simulation;
use mtekit::{ColumnRole, Error, InstrumentSet, MteCurve, MteOptions, SeType};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::{json, Value};

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn value_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a
                .iter()
                .map(|x| value_to_py(py, x))
                .collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, value_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn to_dict<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    value_to_py(py, &v)
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown {what} `{s}`")))
}

/// Role-tagged numeric table.
#[pyclass(name = "Dataset", module = "mtekit_py", frozen)]
pub struct PyDataset {
    inner: mtekit::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Loads a CSV. `roles` maps column name to role, e.g. `{"s": "treatment"}`.
    #[staticmethod]
    fn from_csv(path: &str, roles: BTreeMap<String, String>) -> PyResult<Self> {
        let roles = role_list(roles)?;
        Ok(Self {
            inner: mtekit::load_csv(path, &roles).map_err(to_py)?,
        })
    }

    /// Builds a dataset from `{name: values}` plus `{name: role}`.
    #[staticmethod]
    fn from_columns(
        columns: BTreeMap<String, Vec<f64>>,
        roles: BTreeMap<String, String>,
    ) -> PyResult<Self> {
        let mut cols = Vec::with_capacity(columns.len());
        let roles = role_list(roles)?;
        for r in &roles {
            let values = columns
                .get(&r.name)
                .ok_or_else(|| PyValueError::new_err(format!("missing column `{}`", r.name)))?;
            cols.push((r.clone(), values.clone()));
        }
        Ok(Self {
            inner: mtekit::Dataset::from_columns(cols).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner
            .columns()
            .iter()
            .map(|c| c.name.clone())
            .collect()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.column(name).map_err(to_py)?.to_vec())
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner
            .write_csv_path(std::path::Path::new(path))
            .map_err(to_py)
    }

    fn summarize<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &mtekit::summarize(&self.inner))
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_rows={}, columns={:?})",
            self.inner.n_rows(),
            self.names()
        )
    }
}

fn role_list(roles: BTreeMap<String, String>) -> PyResult<Vec<ColumnRole>> {
    roles
        .into_iter()
        .map(|(name, role)| Ok(ColumnRole::new(name, parse_enum(&role, "role")?)))
        .collect()
}

/// Draws `n` rows from a named model. Returns `(dataset, truth)` where
/// `truth` holds per-row `p_true`, `v_true`, `y1`, `y0`, `gain`, `ate_x`.
#[pyfunction]
#[pyo3(signature = (preset, n, seed=1))]
fn simulate<'py>(
    py: Python<'py>,
    preset: &str,
    n: usize,
    seed: u64,
) -> PyResult<(PyDataset, Bound<'py, PyAny>)> {
    let spec = simulation::preset(preset).map_err(to_py)?;
    let sim = simulation::generate(&spec, n, seed).map_err(to_py)?;
    let t = &sim.truth;
    let truth = json!({
        "p_true": t.p_true, "v_true": t.v_true, "y1": t.y1, "y0": t.y0, "gain": t.gain, "ate_x": t.ate_x,
    });
    Ok((PyDataset { inner: sim.data }, value_to_py(py, &truth)?))
}

/// True MTE of a named model at covariates `x` and resistance `v`.
#[pyfunction]
fn true_mte(preset: &str, x: Vec<f64>, v: f64) -> PyResult<f64> {
    let spec = simulation::preset(preset).map_err(to_py)?;
    simulation::true_mte(&spec, &x, v).map_err(to_py)
}

#[pyfunction]
fn preset_names() -> Vec<String> {
    simulation::presets().into_iter().map(|p| p.name).collect()
}

/// Logit of the treatment on covariates and instruments.
#[pyfunction]
fn fit_logit<'py>(py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
    let regs = pipeline::first_stage_regressors(&data.inner).map_err(to_py)?;
    let fit = mtekit::fit_logit(&data.inner, &regs).map_err(to_py)?;
    let scores = mtekit::propensity(&fit, &data.inner).map_err(to_py)?;
    let v = json!({
        "names": fit.names(),
        "coefficients": fit.coefficients,
        "se": fit.standard_errors(),
        "log_likelihood": fit.log_likelihood,
        "converged": fit.converged,
        "propensity": scores.values,
    });
    value_to_py(py, &v)
}

fn linear_dict<'py>(py: Python<'py>, fit: &mtekit::LinearFit) -> PyResult<Bound<'py, PyAny>> {
    let v = json!({
        "names": fit.names,
        "coefficients": fit.coefficients,
        "se": fit.standard_errors(),
        "n": fit.n,
        "r_squared": fit.r_squared,
        "first_stage_f": fit.first_stage_f,
        "warnings": fit.warnings,
    });
    value_to_py(py, &v)
}

fn exog_regressors(data: &mtekit::Dataset) -> Vec<String> {
    std::iter::once(data.treatment_name().to_string())
        .chain(data.covariate_names())
        .collect()
}

/// OLS of the outcome on the treatment and covariates.
#[pyfunction]
#[pyo3(signature = (data, se="robust_hc1"))]
fn fit_ols<'py>(py: Python<'py>, data: &PyDataset, se: &str) -> PyResult<Bound<'py, PyAny>> {
    let se: SeType = parse_enum(se, "standard error type")?;
    let d = &data.inner;
    let outcome = d.outcome_name().map_err(to_py)?;
    let fit =
        mtekit::fit_ols(d, outcome, &exog_regressors(d), se, d.cluster_name()).map_err(to_py)?;
    linear_dict(py, &fit)
}

/// 2SLS of the outcome on the treatment, instrumented by the instrument
/// columns, with covariates as exogenous regressors.
#[pyfunction]
#[pyo3(signature = (data, se="robust_hc1"))]
fn fit_2sls<'py>(py: Python<'py>, data: &PyDataset, se: &str) -> PyResult<Bound<'py, PyAny>> {
    let se: SeType = parse_enum(se, "standard error type")?;
    let d = &data.inner;
    let outcome = d.outcome_name().map_err(to_py)?;
    let set =
        InstrumentSet::from_columns(d, &d.require_instruments().map_err(to_py)?).map_err(to_py)?;
    let fit = mtekit::fit_2sls(
        d,
        outcome,
        d.treatment_name(),
        &set,
        &d.covariate_names(),
        se,
        d.cluster_name(),
    )
    .map_err(to_py)?;
    linear_dict(py, &fit)
}

/// Local-IV MTE curve at covariate means and the five treatment parameters.
/// With `replicates > 0` the parameters carry bootstrap HPD intervals.
#[pyfunction]
#[pyo3(signature = (data, bandwidth=None, trim=0.01, policy_shift=0.15, v_grid=None, replicates=0, seed=1, level=0.95))]
#[allow(clippy::too_many_arguments)]
fn estimate_mte<'py>(
    py: Python<'py>,
    data: &PyDataset,
    bandwidth: Option<f64>,
    trim: f64,
    policy_shift: f64,
    v_grid: Option<Vec<f64>>,
    replicates: usize,
    seed: u64,
    level: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = PipelineOptions {
        mte: MteOptions {
            bandwidth,
            trim,
            v_grid: v_grid.unwrap_or_else(default_v_grid),
            ..MteOptions::default()
        },
        policy_shift,
        ..PipelineOptions::default()
    };
    let d = &data.inner;
    let mut r = py.detach(|| pipeline::run(d, &opts)).map_err(to_py)?;
    if replicates > 0 {
        let recipe = pipeline::bootstrap_recipe(&opts, &r, true);
        let draws = py
            .detach(|| mtekit::bootstrap(d, replicates, d.cluster_name(), seed, recipe))
            .map_err(to_py)?;
        for (kind, e) in r.effects.values.iter_mut() {
            e.hpd = draws.hpd(kind.as_str(), level).ok();
        }
        let (lo, hi) = r
            .curve
            .v_grid
            .iter()
            .map(|&v| {
                draws
                    .hpd(&curve_key(v), level)
                    .unwrap_or((f64::NAN, f64::NAN))
            })
            .unzip();
        r.curve.ci = Some((lo, hi));
    }
    let v = json!({
        "curve": r.curve,
        "effects": r.effects.values,
        "support": r.plm.support,
        "bandwidth": r.plm.bandwidth,
        "k_bandwidth": r.plm.k_bandwidth,
        "derivative_bandwidth": r.plm.derivative_bandwidth,
        "beta_gap": r.plm.beta_gap,
        "alpha_gap": r.plm.alpha_gap,
        "mean_propensity": r.scores.mean(),
    });
    value_to_py(py, &v)
}

/// Joint-normal switching model by maximum likelihood.
#[pyfunction]
#[pyo3(signature = (data, v_grid=None))]
fn fit_normal_selection<'py>(
    py: Python<'py>,
    data: &PyDataset,
    v_grid: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let d = &data.inner;
    let fit = py
        .detach(|| mtekit::fit_normal_selection(d))
        .map_err(to_py)?;
    let grid = v_grid.unwrap_or_else(default_v_grid);
    let curve = fit.mte_curve(None, &grid).map_err(to_py)?;
    let v = json!({
        "parameters": fit.parameters(),
        "log_likelihood": fit.log_likelihood,
        "curve": curve,
        "warnings": fit.warnings,
    });
    value_to_py(py, &v)
}

/// Treatment parameters of an arbitrary curve given propensity scores.
/// `values` may be NaN outside the support.
#[pyfunction]
#[pyo3(signature = (v_grid, values, scores, policy_scores=None))]
fn treatment_effects<'py>(
    py: Python<'py>,
    v_grid: Vec<f64>,
    values: Vec<f64>,
    scores: Vec<f64>,
    policy_scores: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let in_support = values.iter().map(|v| v.is_finite()).collect();
    let curve = MteCurve::new(v_grid, values, in_support).map_err(to_py)?;
    let e = effects_from_curve(&curve, &scores, policy_scores.as_deref()).map_err(to_py)?;
    let out: BTreeMap<&str, f64> = e
        .values
        .iter()
        .map(|(k, v)| (k.as_str(), v.estimate))
        .collect();
    to_dict(py, &out)
}

/// Shortest interval holding `level` of the draws.
#[pyfunction]
#[pyo3(signature = (draws, level=0.95))]
fn hpd_interval(draws: Vec<f64>, level: f64) -> PyResult<(f64, f64)> {
    mtekit::hpd_interval(&draws, level).map_err(to_py)
}

#[pymodule]
fn mtekit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(true_mte, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ols, m)?)?;
    m.add_function(wrap_pyfunction!(fit_2sls, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_mte, m)?)?;
    m.add_function(wrap_pyfunction!(fit_normal_selection, m)?)?;
    m.add_function(wrap_pyfunction!(treatment_effects, m)?)?;
    m.add_function(wrap_pyfunction!(hpd_interval, m)?)?;
    Ok(())
}
