use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mtekit::data::{build_food_outcomes, FoodGroupMap, Role, LOG_HEALTHY};
use mtekit::simulation::{self, RoyModelSpec};
use mtekit::{load_csv, Dataset};
use serde_json::json;

use crate::config::{
    load_config, write_json, write_manifest, Estimator, RunConfig, SimulateConfig,
};
use crate::{CliError, FitArgs, SimulateArgs};

pub fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_err(path, e))
}

/// Merges `--config` with the flags; flags win.
pub fn resolve_run_config(args: &FitArgs, command: &str) -> Result<RunConfig, CliError> {
    let mut c: RunConfig = match &args.config {
        Some(p) => load_config(p, command)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.data {
        c.data = Some(v.clone());
    }
    if !args.roles.is_empty() {
        c.roles = args.roles.clone();
    }
    if let Some(v) = &args.outcome {
        c.outcome = Some(v.clone());
    }
    if let Some(v) = args.estimator {
        c.estimator = v;
    }
    if let Some(v) = args.instrument_mode {
        c.instrument_mode = v;
    }
    if let Some(v) = args.policy_shift {
        c.policy_shift = v;
    }
    if let Some(v) = &args.policy_instrument {
        c.policy_instrument = Some(v.clone());
    }
    if let Some(v) = &args.v_grid {
        c.v_grid = Some(v.clone());
    }
    if let Some(v) = args.bandwidth {
        c.bandwidth = Some(v);
    }
    if let Some(v) = args.trim {
        c.trim = v;
    }
    if let Some(v) = args.se {
        c.se = v;
    }
    if let Some(v) = args.replicates {
        c.bootstrap.replicates = v;
    }
    if let Some(v) = args.seed {
        c.bootstrap.seed = v;
    }
    if let Some(v) = &args.cluster {
        c.bootstrap.cluster = Some(v.clone());
    }
    if let Some(v) = &args.output_dir {
        c.output_dir = v.clone();
    }
    if args.allow_weak_instrument {
        c.weak_instrument_fatal = false;
    }
    c.validate()?;
    Ok(c)
}

/// Loads the CSV, builds the food outcomes when item columns are present and
/// selects the outcome. With `select_outcome` false the outcome role is left
/// as mapped.
pub fn load_dataset(c: &RunConfig, select_outcome: bool) -> Result<Dataset, CliError> {
    let path = c.data.as_ref().ok_or_else(|| {
        CliError::Input("no data file given (--data or `data` in the config)".into())
    })?;
    if !path.is_file() {
        return Err(CliError::Input(format!(
            "{}: data file not found",
            path.display()
        )));
    }
    if c.roles.is_empty() {
        return Err(CliError::Input(
            "no role map given (--role or `roles` in the config)".into(),
        ));
    }
    let mut data = load_csv(path, &c.roles)?;
    let has_items = c.roles.iter().any(|r| r.role == Role::ItemExpenditure);
    if has_items || c.food_groups.is_some() {
        let mut map = match &c.food_groups {
            Some(g) => FoodGroupMap::new(g.clone()),
            None => FoodGroupMap::standard(),
        };
        map.annualization = c.annualization.clone();
        data = build_food_outcomes(&data, &map)?;
    }
    if select_outcome {
        let chosen = match &c.outcome {
            Some(o) => Some(o.clone()),
            None if has_items && data.outcome_name().is_err() => Some(LOG_HEALTHY.to_string()),
            None => None,
        };
        if let Some(o) = chosen {
            data = data.with_outcome(&o)?;
        }
        data.outcome_name()?;
    }
    Ok(data)
}

pub fn summarize(args: FitArgs) -> Result<(), CliError> {
    let c = resolve_run_config(&args, "summarize")?;
    let data = load_dataset(&c, false)?;
    let table = mtekit::summarize(&data);
    std::fs::create_dir_all(&c.output_dir).map_err(|e| io_err(&c.output_dir, e))?;
    table.write_csv(create(&c.output_dir.join("summary.csv"))?)?;
    write_manifest(
        &c.output_dir.join("manifest.json"),
        "summarize",
        None,
        &c,
        vec!["summary.csv".into()],
        None,
    )?;
    println!("{table}");
    Ok(())
}

fn resolve_simulate_config(args: &SimulateArgs) -> Result<SimulateConfig, CliError> {
    let mut c: SimulateConfig = match &args.config {
        Some(p) => load_config(p, "simulate")?,
        None => SimulateConfig::default(),
    };
    if let Some(p) = &args.preset {
        c.preset = Some(p.clone());
        c.spec = None;
    }
    if let Some(s) = &args.spec {
        c.spec = Some(s.clone());
        c.preset = None;
    }
    if let Some(n) = args.n {
        c.n = n;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(o) = &args.out {
        c.out = o.clone();
    }
    Ok(c)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let c = resolve_simulate_config(&args)?;
    let spec: RoyModelSpec = match (&c.spec, &c.preset) {
        (Some(p), _) => RoyModelSpec::load(p)?,
        (None, Some(name)) => simulation::preset(name)?,
        (None, None) => return Err(CliError::Input("give --preset or --spec".into())),
    };
    let sim = simulation::generate(&spec, c.n, c.seed)?;
    if let Some(dir) = c.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    sim.data.write_csv_path(&c.out)?;
    let truth = simulation::truth_path(&c.out);
    sim.truth.write_csv(create(&truth)?)?;

    // ready-made config for `mtekit fit --config`
    let fit_path = sibling(&c.out, "fit.json");
    let fit_config = RunConfig {
        data: Some(c.out.clone()),
        roles: simulation::roles(&spec),
        estimator: Estimator::All,
        ..RunConfig::default()
    };
    write_json(&fit_path, &fit_config)?;

    let means = spec.covariate_means();
    let details = json!({
        "model": spec,
        "rows": c.n,
        "true_ate_at_covariate_means": spec.ate_at(&means),
        "true_mte_slope": spec.mte_slope(),
    });
    let manifest = sibling(&c.out, "manifest.json");
    write_manifest(
        &manifest,
        "simulate",
        Some(c.seed),
        &c,
        vec![file_name(&c.out), file_name(&truth), file_name(&fit_path)],
        Some(details),
    )?;
    let treated = sim.data.treatment().iter().filter(|&&s| s == 1.0).count();
    println!(
        "{}: {} rows from `{}` (seed {}), {} treated; truth in {}",
        c.out.display(),
        c.n,
        spec.name,
        c.seed,
        treated,
        truth.display()
    );
    Ok(())
}
