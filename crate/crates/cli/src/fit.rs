use std::collections::BTreeMap;

use mtekit::effects::treatment_effects;
use mtekit::inference::bootstrap;
use mtekit::linear::{build_instrument_set, fit_2sls_with, LinearOptions};
use mtekit::mte::default_v_grid;
use mtekit::pipeline::{self, curve_key, PipelineOptions, PipelineResult};
use mtekit::selection::{average_marginal_derivative, instrument_joint_test};
use mtekit::{
    fit_logit, fit_normal_selection, fit_ols, propensity, BootstrapDraws, Dataset, InstrumentMode,
    InstrumentSet, LinearFit, MteCurve, MteOptions, NormalSelectionFit, SeType, TreatmentEffects,
};
use serde_json::{json, Value};

use crate::commands::{create, io_err, load_dataset, resolve_run_config};
use crate::config::{write_json, write_manifest, Estimator, RunConfig, SCHEMA, VERSION};
use crate::{CliError, FitArgs};

const NORMAL_PREFIX: &str = "normal.";

struct FirstStage {
    regressors: Vec<String>,
    instrument: String,
    report: Value,
    scores: Vec<f64>,
    policy: Vec<f64>,
    logit: mtekit::LogitFit,
}

fn named(names: &[String], est: &[f64], se: &[f64]) -> Value {
    Value::Array(
        names
            .iter()
            .zip(est)
            .zip(se)
            .map(|((n, e), s)| json!({"name": n, "estimate": e, "se": s}))
            .collect(),
    )
}

fn linear_json(fit: &LinearFit) -> Value {
    json!({
        "coefficients": named(&fit.names, &fit.coefficients, &fit.standard_errors()),
        "n": fit.n,
        "se_type": fit.se_type,
        "clusters": fit.clusters,
        "r_squared": fit.r_squared,
        "first_stage_f": fit.first_stage_f,
        "warnings": fit.warnings,
    })
}

fn first_stage(data: &Dataset, c: &RunConfig) -> Result<FirstStage, CliError> {
    let regressors = pipeline::first_stage_regressors(data)?;
    let instruments = data.require_instruments()?;
    let instrument = c
        .policy_instrument
        .clone()
        .unwrap_or_else(|| instruments[0].clone());
    if !instruments.contains(&instrument) {
        return Err(CliError::Input(format!(
            "policy instrument `{instrument}` is not an instrument column"
        )));
    }
    let logit = fit_logit(data, &regressors)?;
    let restricted = fit_logit(data, &data.covariate_names())?;
    let lr = instrument_joint_test(&logit, &restricted)?;
    let ames = average_marginal_derivative(&logit, data)?;
    let scores = propensity(&logit, data)?;
    let policy = pipeline::policy_scores(&logit, data, &instrument, c.policy_shift)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let report = json!({
        "logit": {
            "coefficients": named(&logit.names(), &logit.coefficients, &logit.standard_errors()),
            "log_likelihood": logit.log_likelihood,
            "converged": logit.converged,
            "iterations": logit.iterations,
            "n": logit.n,
        },
        "marginal_effects": ames,
        "instrument_joint_test": {
            "instruments": instruments,
            "chi_square": lr.chi_square,
            "df": lr.df,
            "p_value": lr.p_value,
        },
        "mean_propensity": scores.mean(),
        "policy": {
            "instrument": instrument,
            "shift": c.policy_shift,
            "mean_propensity_after": mean(&policy),
        },
    });
    Ok(FirstStage {
        regressors,
        instrument,
        report,
        scores: scores.values,
        policy,
        logit,
    })
}

fn instrument_set(
    data: &Dataset,
    c: &RunConfig,
    fs: &FirstStage,
) -> Result<InstrumentSet, CliError> {
    let set = match c.instrument_mode {
        InstrumentMode::Distance => {
            InstrumentSet::from_columns(data, &data.require_instruments()?)?
        }
        mode => {
            let interact = c
                .interact_with
                .clone()
                .unwrap_or_else(|| data.covariate_names());
            build_instrument_set(data, mode, &fs.instrument, &interact, Some(&fs.logit))?
        }
    };
    Ok(set)
}

fn normal_effects(
    nf: &NormalSelectionFit,
    x: &[f64],
    grid: &[f64],
    scores: &[f64],
    policy: &[f64],
) -> mtekit::Result<(MteCurve, TreatmentEffects)> {
    let curve = nf.mte_curve(Some(x), grid)?;
    let effects = treatment_effects(&curve, scores, Some(policy))?;
    Ok((curve, effects))
}

/// Attaches HPD intervals from the draws stored under `prefix`.
fn attach_intervals(
    effects: &mut TreatmentEffects,
    curve: &mut MteCurve,
    draws: &BootstrapDraws,
    prefix: &str,
    level: f64,
) {
    for (kind, est) in effects.values.iter_mut() {
        est.hpd = draws.hpd(&format!("{prefix}{}", kind.as_str()), level).ok();
    }
    let (lo, hi): (Vec<f64>, Vec<f64>) = curve
        .v_grid
        .iter()
        .map(|&v| {
            draws
                .hpd(&format!("{prefix}{}", curve_key(v)), level)
                .unwrap_or((f64::NAN, f64::NAN))
        })
        .unzip();
    curve.ci = Some((lo, hi));
}

fn effects_json(e: &TreatmentEffects) -> Value {
    json!({"parameters": e.values, "support": e.support})
}

pub fn run(args: FitArgs) -> Result<(), CliError> {
    let c = resolve_run_config(&args, "fit")?;
    let data = load_dataset(&c, true)?;
    data.require_arms(2)?;
    let est = c.estimator;
    let outcome = data.outcome_name()?.to_string();
    let treatment = data.treatment_name().to_string();
    let covariates = data.covariate_names();
    let cluster: Option<String> = c
        .bootstrap
        .cluster
        .clone()
        .or_else(|| data.cluster_name().map(String::from));
    if c.se == SeType::Cluster && cluster.is_none() {
        return Err(CliError::Input(
            "clustered standard errors need a cluster column".into(),
        ));
    }
    let grid = c.v_grid.clone().unwrap_or_else(default_v_grid);
    let lin_opts = LinearOptions {
        weak_instrument_threshold: c.weak_instrument_threshold,
        ..LinearOptions::default()
    };

    let mut report = serde_json::Map::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut weak: Option<String> = None;

    let fs = if est == Estimator::Ols {
        None
    } else {
        Some(first_stage(&data, &c)?)
    };

    let mut ols_fit = None;
    if est.includes(Estimator::Ols) {
        let regs: Vec<String> = std::iter::once(treatment.clone())
            .chain(covariates.iter().cloned())
            .collect();
        let fit = fit_ols(&data, &outcome, &regs, c.se, cluster.as_deref())?;
        report.insert("ols".into(), linear_json(&fit));
        ols_fit = Some(fit);
    }

    let mut iv_fit = None;
    if est.includes(Estimator::Iv) {
        let fs = fs.as_ref().expect("first stage runs for iv");
        let set = instrument_set(&data, &c, fs)?;
        let fit = fit_2sls_with(
            &data,
            &outcome,
            &treatment,
            &set,
            &covariates,
            c.se,
            cluster.as_deref(),
            &lin_opts,
        )?;
        if let Some(f) = fit
            .first_stage_f
            .filter(|f| *f < c.weak_instrument_threshold)
        {
            let msg = format!("first-stage F {f:.3} below {}", c.weak_instrument_threshold);
            warnings.push(msg.clone());
            weak = Some(msg);
        }
        let mut j = linear_json(&fit);
        j["instruments"] = json!({"mode": c.instrument_mode, "names": set.names});
        j["weak_instrument"] = json!(weak.is_some());
        report.insert("iv".into(), j);
        iv_fit = Some(fit);
    }

    let popts = PipelineOptions {
        mte: MteOptions {
            bandwidth: c.bandwidth,
            trim: c.trim,
            v_grid: grid.clone(),
            ..MteOptions::default()
        },
        policy_shift: c.policy_shift,
        policy_instrument: fs.as_ref().map(|f| f.instrument.clone()),
        eval_point: None,
    };
    let mut mte: Option<PipelineResult> = None;
    if est.includes(Estimator::Mte) {
        mte = Some(pipeline::run(&data, &popts)?);
    }

    let mut normal: Option<(NormalSelectionFit, MteCurve, TreatmentEffects)> = None;
    if est.includes(Estimator::Normal) {
        let fs = fs.as_ref().expect("first stage runs for normal");
        let nf = fit_normal_selection(&data)?;
        let (curve, effects) =
            normal_effects(&nf, &nf.covariate_means, &grid, &fs.scores, &fs.policy)?;
        warnings.extend(nf.warnings.iter().cloned());
        normal = Some((nf, curve, effects));
    }

    let want_boot = c.bootstrap.replicates > 0 && (mte.is_some() || normal.is_some());
    let mut draws: Option<BootstrapDraws> = None;
    if want_boot {
        let pipe = mte
            .as_ref()
            .map(|r| pipeline::bootstrap_recipe(&popts, r, !c.bootstrap.reselect_bandwidth));
        let normal_spec = match (&normal, &fs) {
            (Some((nf, _, _)), Some(fs)) => Some((
                nf.covariate_means.clone(),
                fs.regressors.clone(),
                fs.instrument.clone(),
            )),
            _ => None,
        };
        let shift = c.policy_shift;
        let grid_ref = &grid;
        let recipe = |d: &Dataset| -> mtekit::Result<BTreeMap<String, f64>> {
            let mut out = match &pipe {
                Some(f) => f(d)?,
                None => BTreeMap::new(),
            };
            if let Some((x, regs, instrument)) = &normal_spec {
                let logit = fit_logit(d, regs)?;
                let scores = propensity(&logit, d)?;
                let policy = pipeline::policy_scores(&logit, d, instrument, shift)?;
                let nf = fit_normal_selection(d)?;
                let (curve, effects) = normal_effects(&nf, x, grid_ref, &scores.values, &policy)?;
                for (k, e) in &effects.values {
                    out.insert(format!("{NORMAL_PREFIX}{}", k.as_str()), e.estimate);
                }
                for (v, m) in curve.v_grid.iter().zip(&curve.values) {
                    out.insert(format!("{NORMAL_PREFIX}{}", curve_key(*v)), *m);
                }
            }
            Ok(out)
        };
        let d = bootstrap(
            &data,
            c.bootstrap.replicates,
            cluster.as_deref(),
            c.bootstrap.seed,
            recipe,
        )?;
        if d.failures > 0 {
            warnings.push(format!(
                "{} of {} bootstrap replicates failed",
                d.failures, d.b
            ));
        }
        if let Some(r) = mte.as_mut() {
            attach_intervals(&mut r.effects, &mut r.curve, &d, "", c.bootstrap.level);
        }
        if let Some((_, curve, effects)) = normal.as_mut() {
            attach_intervals(effects, curve, &d, NORMAL_PREFIX, c.bootstrap.level);
        }
        draws = Some(d);
    }

    let out = &c.output_dir;
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut outputs = vec!["report.json".to_string()];

    if let Some(fs) = &fs {
        report.insert("first_stage".into(), fs.report.clone());
    }
    if let Some(r) = &mte {
        let plm = &r.plm;
        let mut j = json!({
            "bandwidth": {
                "residualization": plm.bandwidth,
                "k_level": plm.k_bandwidth,
                "k_slope": plm.derivative_bandwidth,
                "selected": c.bandwidth.is_none(),
            },
            "support": plm.support,
            "trim": c.trim,
            "n_used": plm.n_used,
            "eval_point": {"convention": "covariate_means", "covariates": plm.covariates, "values": r.curve.eval_point},
            "beta0": named(&plm.covariates, &plm.beta0, &plm.beta0_se()),
            "beta_gap": named(&plm.covariates, &plm.beta_gap, &plm.beta_gap_se()),
            "alpha_gap": plm.alpha_gap,
            "curve_file": "mte_curve.csv",
        });
        j.as_object_mut().expect("object").extend(
            effects_json(&r.effects)
                .as_object()
                .cloned()
                .unwrap_or_default(),
        );
        report.insert("mte".into(), j);
        r.curve.write_csv(create(&out.join("mte_curve.csv"))?)?;
        outputs.push("mte_curve.csv".into());
    }
    if let Some((nf, curve, effects)) = &normal {
        let mut j = json!({
            "structural": nf.parameters(),
            "log_likelihood": nf.log_likelihood,
            "iterations": nf.iterations,
            "warnings": nf.warnings,
            "eval_point": {"convention": "covariate_means", "values": nf.covariate_means},
            "curve_file": "normal_curve.csv",
        });
        j.as_object_mut().expect("object").extend(
            effects_json(effects)
                .as_object()
                .cloned()
                .unwrap_or_default(),
        );
        report.insert("normal".into(), j);
        curve.write_csv(create(&out.join("normal_curve.csv"))?)?;
        outputs.push("normal_curve.csv".into());
    }
    report.insert(
        "bootstrap".into(),
        match &draws {
            Some(d) => {
                d.write_csv(create(&out.join("bootstrap_draws.csv"))?)?;
                outputs.push("bootstrap_draws.csv".into());
                json!({
                    "replicates": d.b,
                    "seed": d.seed,
                    "cluster": cluster,
                    "level": c.bootstrap.level,
                    "pinned_bandwidth": !c.bootstrap.reselect_bandwidth,
                    "failures": d.failures,
                    "failure_modes": d.failure_modes,
                    "draws_file": "bootstrap_draws.csv",
                })
            }
            None => Value::Null,
        },
    );
    let prov = data.provenance();
    report.insert(
        "data".into(),
        json!({
            "source": prov.source,
            "raw_rows": prov.raw_rows,
            "dropped_rows": prov.dropped_rows,
            "rows_used": data.n_rows(),
            "log": prov.log,
            "outcome": outcome,
            "treatment": treatment,
            "covariates": covariates,
            "instruments": data.instrument_names(),
        }),
    );
    report.insert("schema".into(), json!(SCHEMA));
    report.insert("version".into(), json!(VERSION));
    report.insert("seed".into(), json!(c.bootstrap.seed));
    report.insert("estimator".into(), json!(est));
    report.insert("warnings".into(), json!(warnings));
    write_json(&out.join("report.json"), &Value::Object(report))?;
    outputs.push("manifest.json".into());
    write_manifest(
        &out.join("manifest.json"),
        "fit",
        Some(c.bootstrap.seed),
        &c,
        outputs,
        None,
    )?;

    print_summary(
        &outcome,
        ols_fit.as_ref(),
        iv_fit.as_ref(),
        &treatment,
        mte.as_ref(),
        normal.as_ref().map(|n| &n.2),
    );
    for w in &warnings {
        println!("warning: {w}");
    }
    println!("report written to {}", out.join("report.json").display());

    match weak {
        Some(msg) if c.weak_instrument_fatal => Err(CliError::WeakInstrument(msg)),
        _ => Ok(()),
    }
}

fn print_summary(
    outcome: &str,
    ols: Option<&LinearFit>,
    iv: Option<&LinearFit>,
    treatment: &str,
    mte: Option<&PipelineResult>,
    normal: Option<&TreatmentEffects>,
) {
    println!("outcome: {outcome}");
    for (label, fit) in [("OLS", ols), ("2SLS", iv)] {
        if let Some((b, se)) = fit.and_then(|f| f.coefficient(treatment)) {
            println!("{label:<6} {treatment}: {b:>10.4} ({se:.4})");
        }
    }
    let row = |label: &str, e: &TreatmentEffects| {
        let mut line = format!("{label:<6}");
        for (k, v) in &e.values {
            let ci = v
                .hpd
                .map(|(lo, hi)| format!(" [{lo:.3}, {hi:.3}]"))
                .unwrap_or_default();
            line.push_str(&format!("  {k} {:.4}{ci}", v.estimate));
        }
        println!("{line}");
    };
    if let Some(r) = mte {
        println!(
            "common support: [{:.4}, {:.4}]",
            r.plm.support.0, r.plm.support.1
        );
        row("MTE", &r.effects);
    }
    if let Some(e) = normal {
        row("Normal", e);
    }
}
