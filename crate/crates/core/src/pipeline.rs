//! First stage, local-IV curve and treatment parameters in one call, plus the
//! bootstrap recipe built on it.

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::effects::{treatment_effects, EffectKind, TreatmentEffects};
use crate::error::{Error, Result};
use crate::mte::{fit_partially_linear, mte_curve, MteCurve, MteOptions, PartiallyLinearFit};
use crate::selection::{fit_logit, propensity, LogitFit, PropensityScores};

pub const DEFAULT_POLICY_SHIFT: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub mte: MteOptions,
    /// Proportional reduction of the policy instrument.
    pub policy_shift: f64,
    /// Instrument the policy acts on; the first instrument when `None`.
    pub policy_instrument: Option<String>,
    /// Covariate vector for the reported curve; sample means when `None`.
    pub eval_point: Option<Vec<f64>>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            mte: MteOptions::default(),
            policy_shift: DEFAULT_POLICY_SHIFT,
            policy_instrument: None,
            eval_point: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub logit: LogitFit,
    pub scores: PropensityScores,
    pub policy_scores: Vec<f64>,
    pub plm: PartiallyLinearFit,
    pub curve: MteCurve,
    pub effects: TreatmentEffects,
}

/// Logit regressors: covariates followed by instruments.
pub fn first_stage_regressors(data: &Dataset) -> Result<Vec<String>> {
    let mut names = data.covariate_names();
    names.extend(data.require_instruments()?);
    Ok(names)
}

/// Propensity scores after multiplying `instrument` by `1 - shift`.
pub fn policy_scores(
    logit: &LogitFit,
    data: &Dataset,
    instrument: &str,
    shift: f64,
) -> Result<Vec<f64>> {
    if !(shift > 0.0 && shift < 1.0) {
        return Err(Error::InvalidInput(format!(
            "policy shift {shift} outside (0, 1)"
        )));
    }
    let shifted: Vec<f64> = data
        .column(instrument)?
        .iter()
        .map(|z| z * (1.0 - shift))
        .collect();
    let moved = data.with_values(instrument, shifted)?;
    Ok(propensity(logit, &moved)?.values)
}

pub fn run(data: &Dataset, opts: &PipelineOptions) -> Result<PipelineResult> {
    let regressors = first_stage_regressors(data)?;
    let logit = fit_logit(data, &regressors)?;
    let scores = propensity(&logit, data)?;
    let instrument = match &opts.policy_instrument {
        Some(name) => name.clone(),
        None => data.require_instruments()?[0].clone(),
    };
    let policy = policy_scores(&logit, data, &instrument, opts.policy_shift)?;
    let plm = fit_partially_linear(data, &scores, &opts.mte)?;
    let curve = mte_curve(&plm, opts.eval_point.as_deref(), None)?;
    let effects = treatment_effects(&curve, &scores.values, Some(&policy))?;
    Ok(PipelineResult {
        logit,
        scores,
        policy_scores: policy,
        plm,
        curve,
        effects,
    })
}

/// Bootstrap parameter name for the curve at grid point `v`.
pub fn curve_key(v: f64) -> String {
    format!("mte({v:.4})")
}

/// Recipe rerunning the whole pipeline on a resample. With `pin_bandwidth`
/// the bandwidths found on the full sample are reused.
pub fn bootstrap_recipe(
    opts: &PipelineOptions,
    point: &PipelineResult,
    pin_bandwidth: bool,
) -> impl Fn(&Dataset) -> Result<BTreeMap<String, f64>> + Sync {
    let mut opts = opts.clone();
    if pin_bandwidth {
        opts.mte.bandwidth = Some(point.plm.bandwidth);
        opts.mte.k_bandwidth = Some(point.plm.k_bandwidth);
        opts.mte.derivative_bandwidth = Some(point.plm.derivative_bandwidth);
    }
    if opts.eval_point.is_none() {
        opts.eval_point = Some(point.plm.covariate_means.clone());
    }
    move |data: &Dataset| {
        let r = run(data, &opts)?;
        let mut out = BTreeMap::new();
        for kind in EffectKind::ALL {
            if let Some(v) = r.effects.get(kind) {
                out.insert(kind.as_str().to_string(), v);
            }
        }
        for (v, m) in r.curve.v_grid.iter().zip(&r.curve.values) {
            out.insert(curve_key(*v), *m);
        }
        Ok(out)
    }
}
